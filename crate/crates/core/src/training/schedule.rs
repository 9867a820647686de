use crate::error::{Error, Result};

/// Polynomial decay `lr0 * (1 - step / total_steps)^power`.
pub fn poly_lr(step: usize, total_steps: usize, lr0: f64, power: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::InvalidArgument(format!(
            "step {step} outside schedule of {total_steps} steps"
        )));
    }
    Ok(lr0 * (1.0 - step as f64 / total_steps as f64).powf(power))
}
