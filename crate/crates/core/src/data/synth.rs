//! Synthetic "scans" of analytic shapes with exact masks.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::crd::ColorPalette;
use crate::error::{Error, Result};

use super::manifest::write_jsonl;
use super::raster::{write_gray16_png, write_mask_png};
use super::types::{DatasetManifest, ImageSample, PairRecord, SegMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeClass {
    Disk,
    Rectangle,
    Ring,
    Crescent,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 4] = [
        ShapeClass::Disk,
        ShapeClass::Rectangle,
        ShapeClass::Ring,
        ShapeClass::Crescent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Disk => "disk",
            ShapeClass::Rectangle => "rectangle",
            ShapeClass::Ring => "ring",
            ShapeClass::Crescent => "crescent",
        }
    }
}

impl FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown shape class {s:?}")))
    }
}

/// Shape geometry in pixel units; `(cy, cx)` is the center in
/// continuous coordinates where pixel `(i, j)` covers `[i, i+1) x [j, j+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ShapeParams {
    Disk {
        cy: f64,
        cx: f64,
        r: f64,
    },
    Rectangle {
        cy: f64,
        cx: f64,
        half_h: f64,
        half_w: f64,
    },
    Ring {
        cy: f64,
        cx: f64,
        r_outer: f64,
        r_inner: f64,
    },
    /// A disk with an offset disk cut away.
    Crescent {
        cy: f64,
        cx: f64,
        r: f64,
        cut_dy: f64,
        cut_dx: f64,
        cut_r: f64,
    },
}

fn in_disk(y: f64, x: f64, cy: f64, cx: f64, r: f64) -> bool {
    let (dy, dx) = (y - cy, x - cx);
    dy * dy + dx * dx <= r * r
}

impl ShapeParams {
    pub fn class(&self) -> ShapeClass {
        match self {
            ShapeParams::Disk { .. } => ShapeClass::Disk,
            ShapeParams::Rectangle { .. } => ShapeClass::Rectangle,
            ShapeParams::Ring { .. } => ShapeClass::Ring,
            ShapeParams::Crescent { .. } => ShapeClass::Crescent,
        }
    }

    pub fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            ShapeParams::Disk { cy, cx, r } => in_disk(y, x, cy, cx, r),
            ShapeParams::Rectangle {
                cy,
                cx,
                half_h,
                half_w,
            } => (y - cy).abs() <= half_h && (x - cx).abs() <= half_w,
            ShapeParams::Ring {
                cy,
                cx,
                r_outer,
                r_inner,
            } => in_disk(y, x, cy, cx, r_outer) && !in_disk(y, x, cy, cx, r_inner),
            ShapeParams::Crescent {
                cy,
                cx,
                r,
                cut_dy,
                cut_dx,
                cut_r,
            } => in_disk(y, x, cy, cx, r) && !in_disk(y, x, cy + cut_dy, cx + cut_dx, cut_r),
        }
    }

    /// Uniform scaling about the center.
    pub fn scaled(&self, s: f64) -> Self {
        match *self {
            ShapeParams::Disk { cy, cx, r } => ShapeParams::Disk { cy, cx, r: r * s },
            ShapeParams::Rectangle {
                cy,
                cx,
                half_h,
                half_w,
            } => ShapeParams::Rectangle {
                cy,
                cx,
                half_h: half_h * s,
                half_w: half_w * s,
            },
            ShapeParams::Ring {
                cy,
                cx,
                r_outer,
                r_inner,
            } => ShapeParams::Ring {
                cy,
                cx,
                r_outer: r_outer * s,
                r_inner: r_inner * s,
            },
            ShapeParams::Crescent {
                cy,
                cx,
                r,
                cut_dy,
                cut_dx,
                cut_r,
            } => ShapeParams::Crescent {
                cy,
                cx,
                r: r * s,
                cut_dy: cut_dy * s,
                cut_dx: cut_dx * s,
                cut_r: cut_r * s,
            },
        }
    }

    /// Pixel-center rasterization.
    pub fn rasterize(&self, size: usize) -> Array2<bool> {
        Array2::from_shape_fn((size, size), |(i, j)| {
            self.contains(i as f64 + 0.5, j as f64 + 0.5)
        })
    }

    fn random(class: ShapeClass, size: f64, rng: &mut impl Rng) -> Self {
        let cy = rng.random_range(0.35..0.65) * size;
        let cx = rng.random_range(0.35..0.65) * size;
        match class {
            ShapeClass::Disk => ShapeParams::Disk {
                cy,
                cx,
                r: rng.random_range(0.14..0.24) * size,
            },
            ShapeClass::Rectangle => ShapeParams::Rectangle {
                cy,
                cx,
                half_h: rng.random_range(0.1..0.24) * size,
                half_w: rng.random_range(0.1..0.24) * size,
            },
            ShapeClass::Ring => {
                let r_outer = rng.random_range(0.17..0.26) * size;
                ShapeParams::Ring {
                    cy,
                    cx,
                    r_outer,
                    r_inner: r_outer * rng.random_range(0.45..0.6),
                }
            }
            ShapeClass::Crescent => {
                let r = rng.random_range(0.16..0.25) * size;
                let angle = rng.random_range(0.0..2.0 * PI);
                ShapeParams::Crescent {
                    cy,
                    cx,
                    r,
                    cut_dy: 0.5 * r * angle.sin(),
                    cut_dx: 0.5 * r * angle.cos(),
                    cut_r: 0.8 * r,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub slices_per_scan: usize,
    pub noise_std: f64,
    /// Relative size change between the middle and the ends of a scan.
    pub drift: f64,
    pub modalities: Vec<String>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            slices_per_scan: 4,
            noise_std: 0.04,
            drift: 0.25,
            modalities: vec!["CT".into(), "MR".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSlice {
    pub image: ImageSample,
    pub mask: SegMask,
    pub label: u16,
    pub shape: ShapeParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub manifest: DatasetManifest,
    pub slices: Vec<SynthSlice>,
    pub image_size: usize,
}

#[derive(Serialize)]
struct ShapeRecord<'a> {
    sample_id: &'a str,
    label: u16,
    shape: &'a ShapeParams,
}

impl SynthDataset {
    /// Writes images, masks, `manifest.jsonl` and `shapes.jsonl` under `dir`.
    /// Returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let labels: Vec<u16> = (1..=ColorPalette::KELLY.len() as u16).collect();
        let palette = ColorPalette::for_labels(&labels)?;
        let colors = palette.indexed_colors();
        for (rec, slice) in self.manifest.records.iter().zip(&self.slices) {
            write_gray16_png(&dir.join(&rec.image_ref), &slice.image.pixels)?;
            write_mask_png(&dir.join(&rec.mask_ref), &slice.mask.labels, &colors)?;
        }
        let shapes: Vec<ShapeRecord<'_>> = self
            .slices
            .iter()
            .map(|s| ShapeRecord {
                sample_id: &s.image.sample_id,
                label: s.label,
                shape: &s.shape,
            })
            .collect();
        write_jsonl(&dir.join("shapes.jsonl"), &shapes)?;
        let path = dir.join("manifest.jsonl");
        write_jsonl(&path, &self.manifest.records)?;
        Ok(path)
    }
}

pub fn synth_toy_dataset(
    n_scans: usize,
    classes: &[&str],
    image_size: usize,
    seed: u64,
) -> Result<SynthDataset> {
    synth_toy_dataset_with(n_scans, classes, image_size, seed, &SynthOptions::default())
}

/// Generates `n_scans` scans; scan `s` holds one shape of class
/// `classes[s % classes.len()]` whose size drifts smoothly across slices.
/// The label of a class is its 1-based position in `classes`.
pub fn synth_toy_dataset_with(
    n_scans: usize,
    classes: &[&str],
    image_size: usize,
    seed: u64,
    opts: &SynthOptions,
) -> Result<SynthDataset> {
    if n_scans == 0 {
        return Err(Error::InvalidArgument("n_scans must be at least 1".into()));
    }
    if image_size < 16 {
        return Err(Error::InvalidArgument(format!(
            "image_size must be at least 16, got {image_size}"
        )));
    }
    if classes.is_empty() {
        return Err(Error::InvalidArgument("at least one shape class is required".into()));
    }
    if opts.slices_per_scan == 0 || opts.modalities.is_empty() {
        return Err(Error::InvalidArgument(
            "slices_per_scan and modalities must be non-empty".into(),
        ));
    }
    let parsed: Vec<ShapeClass> = classes
        .iter()
        .map(|c| c.parse())
        .collect::<Result<_>>()?;
    for (i, c) in parsed.iter().enumerate() {
        if parsed[..i].contains(c) {
            return Err(Error::InvalidArgument(format!("duplicate shape class {}", c.name())));
        }
    }
    let noise = Normal::new(0.0, opts.noise_std.max(0.0))
        .map_err(|e| Error::InvalidArgument(format!("noise_std: {e}")))?;

    let size = image_size as f64;
    let k_slices = opts.slices_per_scan;
    let mut records = Vec::with_capacity(n_scans * k_slices);
    let mut slices = Vec::with_capacity(n_scans * k_slices);
    for scan in 0..n_scans {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(scan as u64);
        let class_idx = scan % parsed.len();
        let class = parsed[class_idx];
        let label = class_idx as u16 + 1;
        let modality = &opts.modalities[(scan / parsed.len()) % opts.modalities.len()];
        let base = ShapeParams::random(class, size, &mut rng);
        let background = rng.random_range(0.1..0.3);
        let foreground = rng.random_range(0.65..0.9);
        let scan_id = format!("scan{scan:03}");
        let categories = BTreeMap::from([(label, class.name().to_string())]);

        for k in 0..k_slices {
            let t = if k_slices > 1 {
                2.0 * k as f64 / (k_slices - 1) as f64 - 1.0
            } else {
                0.0
            };
            let shape = base.scaled(1.0 - opts.drift * t * t);
            let inside = shape.rasterize(image_size);
            let labels = inside.mapv(|b| if b { label } else { 0 });
            let pixels = inside.mapv(|b| {
                let level = if b { foreground } else { background };
                (level + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32
            });
            let sample_id = format!("{scan_id}_s{k:02}");
            records.push(PairRecord {
                sample_id: sample_id.clone(),
                scan_id: scan_id.clone(),
                modality: modality.clone(),
                image_ref: format!("images/{sample_id}.png"),
                mask_ref: format!("masks/{sample_id}.png"),
                categories: categories.clone(),
                split: None,
            });
            slices.push(SynthSlice {
                image: ImageSample::new(sample_id, scan_id.clone(), modality.clone(), pixels)?,
                mask: SegMask::new(labels, categories.clone())?,
                label,
                shape,
            });
        }
    }
    Ok(SynthDataset {
        manifest: DatasetManifest::new(records, seed)?,
        slices,
        image_size,
    })
}
