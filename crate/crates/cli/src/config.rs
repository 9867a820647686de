use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vlseg::crd::{ColorPalette, RemoteDescriberConfig, ShapeThresholds};
use vlseg::model::ModelConfig;
use vlseg::otfa::AdaptOptions;
use vlseg::training::TrainConfig;
use vlseg::{Error, Result};

/// Everything a run needs, loaded from one JSON file. Command-line flags
/// override individual fields afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, replaces the dataset, split, model and training seeds.
    pub seed: Option<u64>,
    pub dataset: DatasetSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Label colors for region description; the standard palette when absent.
    pub palette: Option<ColorPalette>,
    pub describer: DescriberSection,
    pub adapt: AdaptOptions,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            dataset: DatasetSection::default(),
            model: ModelConfig::toy(),
            train: TrainConfig::default(),
            palette: None,
            describer: DescriberSection::default(),
            adapt: AdaptOptions::default(),
            eval: EvalSection::default(),
            paths: PathsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub scans: usize,
    pub classes: Vec<String>,
    pub image_size: usize,
    pub slices_per_scan: usize,
    pub noise_std: f64,
    pub modalities: Vec<String>,
    /// Train, tune and validation fractions.
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let synth = vlseg::data::SynthOptions::default();
        DatasetSection {
            scans: 20,
            classes: vec!["disk".into(), "rectangle".into()],
            image_size: 64,
            slices_per_scan: synth.slices_per_scan,
            noise_std: synth.noise_std,
            modalities: synth.modalities,
            ratios: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescriberSection {
    pub thresholds: ShapeThresholds,
    /// Remote vision-language describer; deterministic description when absent.
    pub remote: Option<RemoteDescriberConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub split: vlseg::data::Split,
    /// Also score filled tight and loose boxes as reference rows.
    pub box_baselines: bool,
    pub loose_max_shift: f64,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            split: vlseg::data::Split::Validation,
            box_baselines: true,
            loose_max_shift: 0.15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub data_dir: PathBuf,
    pub triplets: PathBuf,
    pub run_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            data_dir: "data".into(),
            triplets: "data/triplets.jsonl".into(),
            run_dir: "run".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", p.display())))?
            }
        };
        Ok(cfg)
    }

    /// Propagates the global seed and checks every section.
    pub fn resolve(mut self) -> Result<Self> {
        if let Some(seed) = self.seed {
            self.dataset.seed = seed;
            self.model.seed = seed;
            self.train.seed = seed;
            self.eval.seed = seed;
        }
        self.model.validate()?;
        self.train.validate()?;
        if let Some(p) = &self.palette {
            p.validate()?;
        }
        if let Some(r) = &self.describer.remote {
            r.validate()?;
        }
        let r = self.dataset.ratios;
        if r.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || r.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidArgument(format!("dataset ratios {r:?} must be non-negative with a positive sum")));
        }
        if !(0.0..=1.0).contains(&self.eval.loose_max_shift) {
            return Err(Error::InvalidArgument("eval.loose_max_shift must lie in [0, 1]".into()));
        }
        Ok(self)
    }

    pub fn palette(&self) -> ColorPalette {
        self.palette.clone().unwrap_or_else(ColorPalette::standard)
    }
}
