use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single 2D slice with intensities normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub sample_id: String,
    pub scan_id: String,
    pub modality: String,
    pub pixels: Array2<f32>,
}

impl ImageSample {
    pub fn new(
        sample_id: impl Into<String>,
        scan_id: impl Into<String>,
        modality: impl Into<String>,
        pixels: Array2<f32>,
    ) -> Result<Self> {
        let sample = Self {
            sample_id: sample_id.into(),
            scan_id: scan_id.into(),
            modality: modality.into(),
            pixels,
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scan_id.is_empty() {
            return Err(Error::InvalidData(format!(
                "sample {} has an empty scan_id",
                self.sample_id
            )));
        }
        if self.height() == 0 || self.width() == 0 {
            return Err(Error::InvalidData(format!(
                "sample {} has an empty pixel grid",
                self.sample_id
            )));
        }
        if let Some(v) = self.pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidData(format!(
                "sample {} has intensity {v} outside [0, 1]",
                self.sample_id
            )));
        }
        Ok(())
    }
}

/// An integer-labeled mask. Label 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct SegMask {
    pub labels: Array2<u16>,
    pub categories: BTreeMap<u16, String>,
}

impl SegMask {
    pub fn new(labels: Array2<u16>, categories: BTreeMap<u16, String>) -> Result<Self> {
        let mask = Self { labels, categories };
        mask.validate()?;
        Ok(mask)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.labels.dim()
    }

    /// Distinct nonzero labels present in the mask, ascending.
    pub fn present_labels(&self) -> Vec<u16> {
        let mut seen = std::collections::BTreeSet::new();
        for &v in self.labels.iter() {
            if v != 0 {
                seen.insert(v);
            }
        }
        seen.into_iter().collect()
    }

    /// Binary mask (`1` where `labels == label`).
    pub fn binary(&self, label: u16) -> Array2<u8> {
        self.labels.mapv(|v| u8::from(v == label))
    }

    pub fn label_of(&self, name: &str) -> Option<u16> {
        self.categories
            .iter()
            .find(|(_, n)| n.as_str() == name)
            .map(|(&id, _)| id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories.contains_key(&0) {
            return Err(Error::InvalidData(
                "label 0 is reserved for background".into(),
            ));
        }
        for label in self.present_labels() {
            if !self.categories.contains_key(&label) {
                return Err(Error::InvalidData(format!(
                    "label {label} has no category name"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Tune,
    Validation,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Tune, Split::Validation];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Tune => "tune",
            Split::Validation => "validation",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "tune" => Ok(Split::Tune),
            "validation" | "val" => Ok(Split::Validation),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

/// Where a triplet's description came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Deterministic,
    Remote,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryEntry {
    pub label: u16,
    pub name: String,
    pub color: [u8; 3],
}

/// One image-mask-description record, persisted as a JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub image_ref: String,
    pub mask_ref: String,
    pub modality: String,
    pub category_entries: Vec<CategoryEntry>,
    pub description: String,
    pub split: Split,
    pub scan_id: String,
    #[serde(default)]
    pub provenance: Provenance,
}

impl Triplet {
    pub fn validate(&self) -> Result<()> {
        if self.description.is_empty() {
            return Err(Error::InvalidData(format!(
                "triplet {} has an empty description",
                self.image_ref
            )));
        }
        for (i, a) in self.category_entries.iter().enumerate() {
            for b in &self.category_entries[i + 1..] {
                if a.color == b.color {
                    return Err(Error::InvalidData(format!(
                        "triplet {}: categories {} and {} share a color",
                        self.image_ref, a.label, b.label
                    )));
                }
            }
        }
        Ok(())
    }

    /// Identifier derived from the image file name.
    pub fn sample_id(&self) -> String {
        std::path::Path::new(&self.image_ref)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.image_ref.clone())
    }
}

/// An image/mask pair before description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub sample_id: String,
    pub scan_id: String,
    pub modality: String,
    pub image_ref: String,
    pub mask_ref: String,
    pub categories: BTreeMap<u16, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub tune: usize,
    pub validation: usize,
    pub unassigned: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.tune + self.validation + self.unassigned
    }

    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Tune => self.tune,
            Split::Validation => self.validation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub records: Vec<PairRecord>,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn new(records: Vec<PairRecord>, seed: u64) -> Result<Self> {
        let mut ids = std::collections::HashSet::new();
        for r in &records {
            if r.scan_id.is_empty() {
                return Err(Error::InvalidData(format!(
                    "record {} has an empty scan_id",
                    r.sample_id
                )));
            }
            if !ids.insert(r.sample_id.as_str()) {
                return Err(Error::InvalidData(format!(
                    "duplicate sample_id {}",
                    r.sample_id
                )));
            }
        }
        Ok(Self { records, seed })
    }

    pub fn counts(&self) -> SplitCounts {
        let mut c = SplitCounts::default();
        for r in &self.records {
            match r.split {
                Some(Split::Train) => c.train += 1,
                Some(Split::Tune) => c.tune += 1,
                Some(Split::Validation) => c.validation += 1,
                None => c.unassigned += 1,
            }
        }
        c
    }

    /// Number of distinct scans per split.
    pub fn scan_counts(&self) -> SplitCounts {
        let mut seen = std::collections::HashSet::new();
        let mut c = SplitCounts::default();
        for r in &self.records {
            if seen.insert((r.scan_id.as_str(), r.split)) {
                match r.split {
                    Some(Split::Train) => c.train += 1,
                    Some(Split::Tune) => c.tune += 1,
                    Some(Split::Validation) => c.validation += 1,
                    None => c.unassigned += 1,
                }
            }
        }
        c
    }
}
