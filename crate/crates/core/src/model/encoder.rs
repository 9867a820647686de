use candle_core::{Tensor, D};

use super::config::ModelConfig;
use super::layers::{Block, LayerNorm, Linear};
use super::params::{Init, ParamStore};
use crate::error::Result;

/// (B, H, W) -> (B, (H/p)(W/p), p*p), patches in row-major grid order.
pub fn patchify(x: &Tensor, p: usize) -> Result<Tensor> {
    let (b, h, w) = x.dims3()?;
    let (gh, gw) = (h / p, w / p);
    Ok(x.reshape((b, gh, p, gw, p))?
        .permute((0, 1, 3, 2, 4))?
        .contiguous()?
        .reshape((b, gh * gw, p * p))?)
}

/// (B, H, W) -> (B, H, W, 9): each pixel's 3x3 neighbourhood with edge replication.
pub fn neighbourhoods(x: &Tensor) -> Result<Tensor> {
    let (_, h, w) = x.dims3()?;
    let padded = x.pad_with_same(1, 1, 1)?.pad_with_same(2, 1, 1)?;
    let mut taps = Vec::with_capacity(9);
    for di in 0..3 {
        for dj in 0..3 {
            taps.push(padded.narrow(1, di, h)?.narrow(2, dj, w)?);
        }
    }
    Ok(Tensor::stack(&taps, D::Minus1)?)
}

/// Patch transformer plus a full-resolution local feature stem.
pub struct VisionEncoder {
    patch: Linear,
    pos: Tensor,
    blocks: Vec<Block>,
    ln: LayerNorm,
    detail: Linear,
    patch_size: usize,
}

impl VisionEncoder {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let p = cfg.patch_size;
        let c = cfg.vision_width;
        let patch = Linear::new(ps, "vision.patch", p * p, c, true)?;
        let pos = ps.get("vision.pos", &[cfg.num_patches(), c], Init::Normal(0.02))?;
        let blocks = (0..cfg.vision_depth)
            .map(|i| Block::new(ps, &format!("vision.block{i}"), c, cfg.vision_heads, None))
            .collect::<Result<Vec<_>>>()?;
        let ln = LayerNorm::new(ps, "vision.ln", c)?;
        let detail = Linear::new(ps, "vision.detail", 9, cfg.detail_width(), true)?;
        Ok(VisionEncoder { patch, pos, blocks, ln, detail, patch_size: p })
    }

    /// `images`: (B, H, W). Returns last-layer tokens (B, N, C_v) and
    /// local features (B, C_d, H, W).
    pub fn forward(&self, images: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut x = self.patch.forward(&patchify(images, self.patch_size)?)?;
        x = x.broadcast_add(&self.pos)?;
        for block in &self.blocks {
            x = block.forward(&x, None)?;
        }
        let tokens = self.ln.forward(&x)?;
        let detail = self
            .detail
            .forward(&neighbourhoods(images)?)?
            .gelu_erf()?
            .permute((0, 3, 1, 2))?
            .contiguous()?;
        Ok((tokens, detail))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn patchify_orders_patches_row_major() {
        let v: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let x = Tensor::from_vec(v, (1, 4, 4), &Device::Cpu).unwrap();
        let p = patchify(&x, 2).unwrap().to_vec3::<f32>().unwrap();
        assert_eq!(p[0][0], vec![0.0, 1.0, 4.0, 5.0]);
        assert_eq!(p[0][1], vec![2.0, 3.0, 6.0, 7.0]);
        assert_eq!(p[0][3], vec![10.0, 11.0, 14.0, 15.0]);
    }

    #[test]
    fn neighbourhood_replicates_edges() {
        let v: Vec<f32> = (0..9).map(|i| i as f32).collect();
        let x = Tensor::from_vec(v, (1, 3, 3), &Device::Cpu).unwrap();
        let n = neighbourhoods(&x).unwrap().to_dtype(DType::F32).unwrap();
        let corner = n.get(0).unwrap().get(0).unwrap().get(0).unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(corner, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 3.0, 3.0, 4.0]);
        let centre = n.get(0).unwrap().get(1).unwrap().get(1).unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(centre, (0..9).map(|i| i as f32).collect::<Vec<_>>());
    }
}
