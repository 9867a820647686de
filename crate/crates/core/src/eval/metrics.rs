use ndarray::Array2;

use crate::error::{Error, Result};

/// Pixel counts of a binary prediction against binary ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    /// `2TP / (2TP + FP + FN)`, or `empty_value` when both masks are empty.
    pub fn dice(&self, empty_value: f64) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            empty_value
        } else {
            (2 * self.tp) as f64 / den as f64
        }
    }
}

fn check_binary(name: &str, m: &Array2<u8>) -> Result<()> {
    match m.iter().find(|&&v| v > 1) {
        Some(v) => Err(Error::InvalidArgument(format!("{name} mask holds non-binary value {v}"))),
        None => Ok(()),
    }
}

pub fn confusion(pred: &Array2<u8>, gt: &Array2<u8>) -> Result<Confusion> {
    if pred.dim() != gt.dim() {
        return Err(Error::DimensionMismatch {
            context: "prediction vs ground truth".into(),
            expected: gt.dim(),
            actual: pred.dim(),
        });
    }
    check_binary("predicted", pred)?;
    check_binary("ground-truth", gt)?;
    let mut c = Confusion::default();
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// Dice similarity coefficient; two empty masks score 1.0.
pub fn dsc(pred: &Array2<u8>, gt: &Array2<u8>) -> Result<f64> {
    dsc_with(pred, gt, 1.0)
}

pub fn dsc_with(pred: &Array2<u8>, gt: &Array2<u8>, both_empty: f64) -> Result<f64> {
    Ok(confusion(pred, gt)?.dice(both_empty))
}
