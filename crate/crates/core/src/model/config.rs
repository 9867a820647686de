use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Low-rank adapter settings for the language model's attention projections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        LoraConfig { rank: 4, alpha: 8.0 }
    }
}

impl LoraConfig {
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || !(self.alpha > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "adapter rank must be >= 1 and alpha > 0 (got rank {}, alpha {})",
                self.rank, self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    /// Vision channel width `C_v`.
    pub vision_width: usize,
    pub vision_depth: usize,
    pub vision_heads: usize,
    /// Language channel width `C_l`.
    pub lm_width: usize,
    pub lm_depth: usize,
    pub lm_heads: usize,
    pub decoder_depth: usize,
    pub decoder_heads: usize,
    pub max_seq_len: usize,
    pub max_new_tokens: usize,
    /// Binarization threshold on mask probabilities.
    pub threshold: f64,
    pub seed: u64,
    pub lora: Option<LoraConfig>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 64,
            patch_size: 16,
            vision_width: 64,
            vision_depth: 2,
            vision_heads: 4,
            lm_width: 128,
            lm_depth: 4,
            lm_heads: 4,
            decoder_depth: 2,
            decoder_heads: 4,
            max_seq_len: 256,
            max_new_tokens: 32,
            threshold: 0.5,
            seed: 0,
            lora: None,
        }
    }
}

impl ModelConfig {
    /// 64x64 inputs on an 8x8 patch grid; the scale used by the toy experiments.
    pub fn toy() -> Self {
        ModelConfig { patch_size: 8, ..ModelConfig::default() }
    }

    pub fn grid_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Number of vision tokens `N`.
    pub fn num_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    /// Channel width of the high-resolution skip features.
    pub fn detail_width(&self) -> usize {
        self.vision_width / 8
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.patch_size == 0 || self.image_size == 0 {
            return bad("image_size and patch_size must be positive".into());
        }
        if self.image_size % self.patch_size != 0 {
            return bad(format!(
                "image_size {} is not a multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.patch_size % 4 != 0 {
            return bad(format!("patch_size {} must be divisible by 4", self.patch_size));
        }
        if self.vision_width == 0 || self.vision_width % 8 != 0 {
            return bad(format!("vision_width {} must be a positive multiple of 8", self.vision_width));
        }
        for (name, width, heads) in [
            ("vision", self.vision_width, self.vision_heads),
            ("lm", self.lm_width, self.lm_heads),
            ("decoder", self.vision_width, self.decoder_heads),
        ] {
            if heads == 0 || width % heads != 0 {
                return bad(format!("{name} width {width} is not divisible by {heads} heads"));
            }
        }
        if self.vision_depth == 0 || self.lm_depth == 0 || self.decoder_depth == 0 {
            return bad("depths must be >= 1".into());
        }
        if self.max_new_tokens == 0 {
            return bad("max_new_tokens must be >= 1".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} must lie in (0, 1)", self.threshold));
        }
        if let Some(l) = &self.lora {
            l.validate()?;
        }
        Ok(())
    }
}
