use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_pair, resolve_ref, write_jsonl, CategoryEntry, DatasetManifest, PairRecord, Provenance, SegMask, Triplet};
use crate::error::{Error, Result};

use super::describe::{describe_regions_with, ShapeThresholds};
use super::palette::{colorize_mask, ColorPalette};
use super::remote::{describe_with_fallback, RemoteDescriberConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum Describer {
    Deterministic(ShapeThresholds),
    Remote(RemoteDescriberConfig),
}

impl Default for Describer {
    fn default() -> Self {
        Describer::Deterministic(ShapeThresholds::default())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    pub sample_id: String,
    pub image_ref: String,
    pub mask_ref: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildSummary {
    pub output: PathBuf,
    pub error_log: PathBuf,
    pub written: usize,
    pub fallbacks: usize,
    pub errors: Vec<RecordError>,
}

fn error_log_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".errors.jsonl");
    output.with_file_name(name)
}

/// `path` relative to `base` when it lies underneath, otherwise absolute.
fn relative_ref(path: &Path, base: &Path) -> String {
    let abs = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let (path, base) = (abs(path), abs(base));
    path.strip_prefix(&base)
        .map(Path::to_path_buf)
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned()
}

fn with_record_categories(mut mask: SegMask, record: &PairRecord) -> Result<SegMask> {
    for label in mask.present_labels() {
        if !record.categories.contains_key(&label) {
            return Err(Error::InvalidData(format!(
                "label {label} in {} has no category in the manifest",
                record.mask_ref
            )));
        }
    }
    mask.categories = record.categories.clone();
    Ok(mask)
}

struct Prepared {
    mask: SegMask,
    colored: ndarray::Array3<u8>,
    entries: Vec<CategoryEntry>,
}

fn prepare(record: &PairRecord, base: &Path, palette: &ColorPalette) -> Result<Prepared> {
    let (_, mask) = load_pair(&resolve_ref(base, &record.image_ref), &resolve_ref(base, &record.mask_ref))?;
    let mask = with_record_categories(mask, record)?;
    let colored = colorize_mask(&mask, palette)?;
    let entries = mask
        .categories
        .iter()
        .map(|(&label, name)| {
            palette
                .color(label)
                .map(|color| CategoryEntry {
                    label,
                    name: name.clone(),
                    color,
                })
                .ok_or_else(|| Error::InvalidArgument(format!("label {label} missing from palette")))
        })
        .collect::<Result<_>>()?;
    Ok(Prepared {
        mask,
        colored,
        entries,
    })
}

/// Describes every pair of a split manifest and writes one triplet per line.
///
/// Records that fail to load are skipped and logged to
/// `<output>.errors.jsonl`; the build itself only fails on output errors.
pub fn build_triplets(
    manifest: &DatasetManifest,
    manifest_dir: &Path,
    palette: &ColorPalette,
    describer: &Describer,
    output: &Path,
) -> Result<BuildSummary> {
    palette.validate()?;
    if let Some(r) = manifest.records.iter().find(|r| r.split.is_none()) {
        return Err(Error::InvalidArgument(format!(
            "record {} has no split; run the split step first",
            r.sample_id
        )));
    }
    if let Describer::Remote(cfg) = describer {
        cfg.validate()?;
    }
    let out_dir = output
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let describe_one = |record: &PairRecord| -> Result<Triplet> {
        let p = prepare(record, manifest_dir, palette)?;
        let (description, provenance) = match describer {
            Describer::Deterministic(t) => (describe_regions_with(&p.mask, palette, t).0, Provenance::Deterministic),
            Describer::Remote(cfg) => describe_with_fallback(&p.colored, &p.mask, cfg),
        };
        let triplet = Triplet {
            image_ref: relative_ref(&resolve_ref(manifest_dir, &record.image_ref), &out_dir),
            mask_ref: relative_ref(&resolve_ref(manifest_dir, &record.mask_ref), &out_dir),
            modality: record.modality.clone(),
            category_entries: p.entries,
            description,
            split: record.split.expect("checked above"),
            scan_id: record.scan_id.clone(),
            provenance,
        };
        triplet.validate()?;
        Ok(triplet)
    };

    let results: Vec<Result<Triplet>> = match describer {
        Describer::Deterministic(_) => manifest.records.iter().map(describe_one).collect(),
        Describer::Remote(cfg) => {
            let mut out = Vec::with_capacity(manifest.records.len());
            for chunk in manifest.records.chunks(cfg.max_in_flight) {
                std::thread::scope(|s| {
                    let handles: Vec<_> = chunk.iter().map(|r| s.spawn(|| describe_one(r))).collect();
                    for h in handles {
                        out.push(h.join().unwrap_or_else(|_| Err(Error::Remote("describer thread panicked".into()))));
                    }
                });
            }
            out
        }
    };

    let mut triplets = Vec::new();
    let mut errors = Vec::new();
    for (record, result) in manifest.records.iter().zip(results) {
        match result {
            Ok(t) => triplets.push(t),
            Err(e) => {
                log::warn!("skipping {}: {e}", record.sample_id);
                errors.push(RecordError {
                    sample_id: record.sample_id.clone(),
                    image_ref: record.image_ref.clone(),
                    mask_ref: record.mask_ref.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    write_jsonl(output, &triplets)?;
    let error_log = error_log_path(output);
    write_jsonl(&error_log, &errors)?;
    Ok(BuildSummary {
        output: output.to_path_buf(),
        error_log,
        written: triplets.len(),
        fallbacks: triplets.iter().filter(|t| t.provenance == Provenance::Fallback).count(),
        errors,
    })
}
