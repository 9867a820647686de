use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layers::log_softmax_last;

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_text: f64,
    pub w_bce: f64,
    pub w_dice: f64,
    pub dice_smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w_text: 1.0, w_bce: 1.0, w_dice: 1.0, dice_smooth: 1e-5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_text, self.w_bce, self.w_dice];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be non-negative with at least one positive: {w:?}"
            )));
        }
        if !(self.dice_smooth > 0.0) {
            return Err(Error::InvalidArgument("dice smoothing must be positive".into()));
        }
        Ok(())
    }
}

fn same_shape(p: &Tensor, g: &Tensor, what: &str) -> Result<()> {
    if p.dims() != g.dims() {
        return Err(Error::Shape(format!("{what}: probabilities {:?} vs target {:?}", p.dims(), g.dims())));
    }
    Ok(())
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

fn check_domain(p: &Tensor, g: &Tensor) -> Result<()> {
    let (lo, hi) = (scalar(&p.min_all()?)?, scalar(&p.max_all()?)?);
    if !(lo >= 0.0 && hi <= 1.0) {
        return Err(Error::InvalidArgument(format!("probabilities outside [0, 1]: [{lo}, {hi}]")));
    }
    let off = scalar(&(g * (1.0 - g)?)?.abs()?.max_all()?)?;
    if off != 0.0 {
        return Err(Error::InvalidArgument("target mask is not binary".into()));
    }
    Ok(())
}

/// Flattens (H, W) or (B, H, W) to (B, HW).
fn per_sample(x: &Tensor) -> Result<Tensor> {
    Ok(match x.rank() {
        2 => x.flatten_all()?.unsqueeze(0)?,
        _ => x.flatten_from(1)?,
    })
}

/// Soft Dice loss `1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps)`, averaged over the batch.
pub fn dice_loss(p: &Tensor, g: &Tensor, eps: f64) -> Result<Tensor> {
    same_shape(p, g, "dice loss")?;
    check_domain(p, g)?;
    let (pf, gf) = (per_sample(p)?, per_sample(g)?);
    let inter = (&pf * &gf)?.sum(1)?;
    let denom = ((pf.sum(1)? + gf.sum(1)?)? + eps)?;
    let ratio = ((inter * 2.0)? + eps)?.div(&denom)?;
    Ok((1.0 - ratio)?.mean_all()?)
}

/// Mean per-pixel binary cross-entropy.
pub fn bce_loss(p: &Tensor, g: &Tensor) -> Result<Tensor> {
    same_shape(p, g, "binary cross-entropy")?;
    check_domain(p, g)?;
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)?;
    let pos = (g * p.log()?)?;
    let neg = ((1.0 - g)? * (1.0 - &p)?.log()?)?;
    Ok((pos + neg)?.mean_all()?.neg()?)
}

/// Mean negative log-likelihood of `targets` (B, T) under `logits` (B, T, V),
/// counting only positions with nonzero `weights` (B, T).
pub fn text_ce_loss(logits: &Tensor, targets: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let (b, t, _) = logits.dims3()?;
    if targets.dims() != [b, t] || weights.dims() != [b, t] {
        return Err(Error::Shape(format!(
            "text loss: logits {:?}, targets {:?}, weights {:?}",
            logits.dims(),
            targets.dims(),
            weights.dims()
        )));
    }
    let count = scalar(&weights.sum_all()?)?;
    if count <= 0.0 {
        return Err(Error::InvalidArgument("text loss has no unmasked positions".into()));
    }
    let logp = log_softmax_last(logits)?.gather(&targets.unsqueeze(D::Minus1)?.contiguous()?, D::Minus1)?;
    let nll = (logp.squeeze(D::Minus1)? * weights)?.sum_all()?.neg()?;
    Ok((nll / count)?)
}

/// Weighted sum of the three components; any non-finite component is an error.
pub fn total_loss(text: &Tensor, bce: &Tensor, dice: &Tensor, w: &LossWeights) -> Result<Tensor> {
    for (name, t) in [("text", text), ("bce", bce), ("dice", dice)] {
        let v = scalar(t)?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} loss is {v}")));
        }
    }
    Ok(((text * w.w_text)? + (bce * w.w_bce)?)?.add(&(dice * w.w_dice)?)?)
}
