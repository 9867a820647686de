use candle_core::{Tensor, D};

use super::config::ModelConfig;
use super::layers::{Block, LayerNorm, Linear};
use super::params::{Init, ParamStore};
use crate::error::{Error, Result};

/// Decoder-only causal transformer over word tokens and projected vision tokens.
pub struct LanguageModel {
    embed: Tensor,
    pos: Tensor,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    head: Linear,
    max_seq_len: usize,
}

impl LanguageModel {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig, vocab_size: usize) -> Result<Self> {
        let c = cfg.lm_width;
        let embed = ps.get("lm.embed", &[vocab_size, c], Init::Normal(0.02))?;
        let pos = ps.get("lm.pos", &[cfg.max_seq_len, c], Init::Normal(0.02))?;
        let blocks = (0..cfg.lm_depth)
            .map(|i| Block::new(ps, &format!("lm.block{i}"), c, cfg.lm_heads, cfg.lora.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let ln_f = LayerNorm::new(ps, "lm.ln_f", c)?;
        let head = Linear::new(ps, "lm.head", c, vocab_size, false)?;
        Ok(LanguageModel { embed, pos, blocks, ln_f, head, max_seq_len: cfg.max_seq_len })
    }

    pub fn max_seq_len(&self) -> usize {
        self.max_seq_len
    }

    /// (T,) ids -> (T, C_l).
    pub fn embed_ids(&self, ids: &[u32]) -> Result<Tensor> {
        let idx = Tensor::new(ids, self.embed.device())?;
        Ok(self.embed.index_select(&idx, 0)?)
    }

    fn causal_bias(&self, t: usize) -> Result<Tensor> {
        let mut v = vec![0f32; t * t];
        for i in 0..t {
            for j in i + 1..t {
                v[i * t + j] = -1e9;
            }
        }
        Ok(Tensor::from_vec(v, (t, t), self.embed.device())?.to_dtype(self.embed.dtype())?)
    }

    /// `embeds`: (B, T, C_l). Returns final hidden states (B, T, C_l) and logits (B, T, V).
    pub fn forward(&self, embeds: &Tensor) -> Result<(Tensor, Tensor)> {
        let t = embeds.dim(1)?;
        if t > self.max_seq_len {
            return Err(Error::InvalidArgument(format!(
                "sequence of {t} tokens exceeds max_seq_len {}",
                self.max_seq_len
            )));
        }
        let bias = self.causal_bias(t)?;
        let mut x = embeds.broadcast_add(&self.pos.narrow(0, 0, t)?)?;
        for block in &self.blocks {
            x = block.forward(&x, Some(&bias))?;
        }
        let hidden = self.ln_f.forward(&x)?;
        let logits = self.head.forward(&hidden)?;
        Ok((hidden, logits))
    }

    /// Greedy next token from the logits at the last position of a single sequence.
    pub fn argmax_last(logits: &Tensor) -> Result<u32> {
        let t = logits.dim(1)?;
        let last = logits.get(0)?.get(t - 1)?;
        Ok(last.argmax(D::Minus1)?.to_scalar::<u32>()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;

    #[test]
    fn causal_prefix_is_unaffected_by_suffix() {
        let cfg = ModelConfig { lm_width: 16, lm_heads: 2, lm_depth: 2, max_seq_len: 8, ..ModelConfig::default() };
        let mut ps = ParamStore::new(5, DType::F64);
        let lm = LanguageModel::new(&mut ps, &cfg, 10).unwrap();
        let a = lm.embed_ids(&[1, 2, 3, 4]).unwrap().unsqueeze(0).unwrap();
        let b = lm.embed_ids(&[1, 2, 3, 9]).unwrap().unsqueeze(0).unwrap();
        let (ha, _) = lm.forward(&a).unwrap();
        let (hb, _) = lm.forward(&b).unwrap();
        let ha = ha.get(0).unwrap().narrow(0, 0, 3).unwrap().to_vec2::<f64>().unwrap();
        let hb = hb.get(0).unwrap().narrow(0, 0, 3).unwrap().to_vec2::<f64>().unwrap();
        assert_eq!(ha, hb);
    }

    #[test]
    fn overlong_sequence_rejected() {
        let cfg = ModelConfig { lm_width: 16, lm_heads: 2, lm_depth: 1, max_seq_len: 3, ..ModelConfig::default() };
        let mut ps = ParamStore::new(5, DType::F32);
        let lm = LanguageModel::new(&mut ps, &cfg, 10).unwrap();
        let x = lm.embed_ids(&[1, 2, 3, 4]).unwrap().unsqueeze(0).unwrap();
        assert!(lm.forward(&x).is_err());
    }
}
