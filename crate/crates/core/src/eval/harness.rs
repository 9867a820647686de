//! Scoring a trained model, and box-fill reference baselines, over a sample set.

use crate::error::{Error, Result};
use crate::model::SegModel;
use crate::training::TrainSample;

use super::metrics::dsc;
use super::prompts::{loose_box, tight_box};
use super::report::{EvalRecord, PromptMode};

/// Task key used in reports: `"{modality} {class}"`.
pub fn task_name(sample: &TrainSample) -> String {
    format!("{} {}", sample.modality, sample.class_name)
}

/// Text-prompted segmentation of every sample.
pub fn evaluate_model(model: &SegModel, samples: &[TrainSample]) -> Result<Vec<EvalRecord>> {
    samples
        .iter()
        .map(|s| {
            let seg = model.segment(&s.image, &s.class_name, &s.modality)?;
            EvalRecord::new(task_name(s), s.image.sample_id.clone(), dsc(&seg.mask, &s.target)?, PromptMode::Text)
        })
        .collect()
}

/// Scores the filled box prompt itself as a prediction. `TightBox` uses the
/// ground-truth bounding box and `LooseBox` perturbs it by up to `max_shift`
/// with a per-sample seed derived from `seed`.
pub fn evaluate_box_fill(samples: &[TrainSample], mode: PromptMode, max_shift: f64, seed: u64) -> Result<Vec<EvalRecord>> {
    if !matches!(mode, PromptMode::TightBox | PromptMode::LooseBox) {
        return Err(Error::InvalidArgument(format!("{mode:?} is not a box prompt mode")));
    }
    let mut out = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let dims = s.target.dim();
        let mut b = tight_box(&s.target)?;
        if mode == PromptMode::LooseBox {
            b = loose_box(&b, dims, max_shift, seed.wrapping_add(i as u64));
        }
        let pred = b.to_mask(dims);
        out.push(EvalRecord::new(task_name(s), s.image.sample_id.clone(), dsc(&pred, &s.target)?, mode)?);
    }
    Ok(out)
}
