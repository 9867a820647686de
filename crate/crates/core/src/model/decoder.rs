use candle_core::{DType, Device, Tensor};

use super::config::ModelConfig;
use super::layers::{Attention, LayerNorm, Linear, Mlp};
use super::params::{Init, ParamStore};
use crate::error::Result;

/// Row-stochastic (out, inp) matrix for 1-D linear interpolation with half-pixel centres.
pub fn resize_matrix(out: usize, inp: usize) -> Vec<f64> {
    let mut m = vec![0.0; out * inp];
    let scale = inp as f64 / out as f64;
    for o in 0..out {
        let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(inp - 1);
        let frac = src - i0 as f64;
        m[o * inp + i0] += 1.0 - frac;
        m[o * inp + i1] += frac;
    }
    m
}

/// Bilinear resize of the two trailing axes of `x` (..., h, w) to (..., out_h, out_w).
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let rank = x.rank();
    let (h, w) = (x.dim(rank - 2)?, x.dim(rank - 1)?);
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let dev = x.device();
    let ry = Tensor::from_vec(resize_matrix(out_h, h), (out_h, h), dev)?.to_dtype(x.dtype())?;
    let rx = Tensor::from_vec(resize_matrix(out_w, w), (out_w, w), dev)?.to_dtype(x.dtype())?;
    Ok(ry.broadcast_matmul(x)?.broadcast_matmul(&rx.t()?)?)
}

/// (B, h, w, 4C) -> (B, 2h, 2w, C), the stride-2 kernel-2 transposed convolution layout.
fn pixel_shuffle(x: &Tensor) -> Result<Tensor> {
    let (b, h, w, c4) = x.dims4()?;
    let c = c4 / 4;
    Ok(x.reshape((b, h, w, 2, 2, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((b, 2 * h, 2 * w, c))?)
}

/// Prompt tokens and image tokens attend to each other in both directions.
struct TwoWayBlock {
    self_attn: Attention,
    ln1: LayerNorm,
    token_to_image: Attention,
    ln2: LayerNorm,
    mlp: Mlp,
    ln3: LayerNorm,
    image_to_token: Attention,
    ln4: LayerNorm,
}

impl TwoWayBlock {
    fn new(ps: &mut ParamStore, name: &str, d: usize, heads: usize) -> Result<Self> {
        Ok(TwoWayBlock {
            self_attn: Attention::new(ps, &format!("{name}.self_attn"), d, heads, None)?,
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), d)?,
            token_to_image: Attention::new(ps, &format!("{name}.t2i"), d, heads, None)?,
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), d)?,
            mlp: Mlp::new(ps, &format!("{name}.mlp"), d, 4 * d, d)?,
            ln3: LayerNorm::new(ps, &format!("{name}.ln3"), d)?,
            image_to_token: Attention::new(ps, &format!("{name}.i2t"), d, heads, None)?,
            ln4: LayerNorm::new(ps, &format!("{name}.ln4"), d)?,
        })
    }

    fn forward(&self, tokens: &Tensor, image: &Tensor, pe: &Tensor) -> Result<(Tensor, Tensor)> {
        let t = self.ln1.forward(&(tokens + self.self_attn.forward(tokens, tokens, tokens, None)?)?)?;
        let keys = image.broadcast_add(pe)?;
        let t = self.ln2.forward(&(&t + self.token_to_image.forward(&t, &keys, image, None)?)?)?;
        let t = self.ln3.forward(&(&t + self.mlp.forward(&t)?)?)?;
        let img = self.ln4.forward(&(image + self.image_to_token.forward(&keys, &t, &t, None)?)?)?;
        Ok((t, img))
    }
}

/// Mask decoder conditioned on one prompt embedding per image.
pub struct MaskDecoder {
    mask_token: Tensor,
    image_pe: Tensor,
    blocks: Vec<TwoWayBlock>,
    final_attn: Attention,
    final_ln: LayerNorm,
    up1: Linear,
    up_ln: LayerNorm,
    up2: Linear,
    hyper: Mlp,
    grid: usize,
    image_size: usize,
}

impl MaskDecoder {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.vision_width;
        let blocks = (0..cfg.decoder_depth)
            .map(|i| TwoWayBlock::new(ps, &format!("decoder.block{i}"), d, cfg.decoder_heads))
            .collect::<Result<Vec<_>>>()?;
        Ok(MaskDecoder {
            mask_token: ps.get("decoder.mask_token", &[1, 1, d], Init::Normal(0.02))?,
            image_pe: ps.get("decoder.image_pe", &[cfg.num_patches(), d], Init::Normal(0.02))?,
            blocks,
            final_attn: Attention::new(ps, "decoder.final_attn", d, cfg.decoder_heads, None)?,
            final_ln: LayerNorm::new(ps, "decoder.final_ln", d)?,
            up1: Linear::new(ps, "decoder.up1", d, d, true)?,
            up_ln: LayerNorm::new(ps, "decoder.up_ln", d / 4)?,
            up2: Linear::new(ps, "decoder.up2", d / 4, 4 * cfg.detail_width(), true)?,
            hyper: Mlp::new(ps, "decoder.hyper", d, d, cfg.detail_width())?,
            grid: cfg.grid_side(),
            image_size: cfg.image_size,
        })
    }

    /// `prompt`: (B, D); `fused`: (B, N, D); `detail`: (B, C_d, H, W). Returns logits (B, H, W).
    pub fn forward(&self, prompt: &Tensor, fused: &Tensor, detail: &Tensor) -> Result<Tensor> {
        let (b, _, d) = fused.dims3()?;
        let mask_token = self.mask_token.broadcast_as((b, 1, d))?;
        let mut tokens = Tensor::cat(&[&mask_token, &prompt.unsqueeze(1)?], 1)?;
        let mut image = fused.clone();
        for block in &self.blocks {
            (tokens, image) = block.forward(&tokens, &image, &self.image_pe)?;
        }
        let keys = image.broadcast_add(&self.image_pe)?;
        tokens = self.final_ln.forward(&(&tokens + self.final_attn.forward(&tokens, &keys, &image, None)?)?)?;
        let hyper = self.hyper.forward(&tokens.narrow(1, 0, 1)?.squeeze(1)?)?;

        let g = self.grid;
        let x = self.up1.forward(&image.reshape((b, g, g, d))?)?;
        let x = self.up_ln.forward(&pixel_shuffle(&x)?)?.gelu_erf()?;
        let x = pixel_shuffle(&self.up2.forward(&x)?)?;
        let x = x.permute((0, 3, 1, 2))?.contiguous()?;
        let x = resize_bilinear(&x, self.image_size, self.image_size)?;
        let x = (x + detail)?.gelu_erf()?;
        let (_, cd, _, _) = x.dims4()?;
        Ok(x.broadcast_mul(&hyper.reshape((b, cd, 1, 1))?)?.sum(1)?)
    }
}

/// Interpolation matrices as `f64` tensors, for oracle comparisons.
pub fn resize_matrix_tensor(out: usize, inp: usize) -> Result<Tensor> {
    Ok(Tensor::from_vec(resize_matrix(out, inp), (out, inp), &Device::Cpu)?.to_dtype(DType::F64)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_rows_are_stochastic() {
        for (o, i) in [(64, 32), (64, 16), (5, 7), (3, 1)] {
            let m = resize_matrix(o, i);
            for r in 0..o {
                let s: f64 = m[r * i..(r + 1) * i].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn upsample_two_x_matches_half_pixel_convention() {
        let m = resize_matrix(4, 2);
        assert_eq!(&m[0..2], &[1.0, 0.0]);
        assert_eq!(&m[2..4], &[0.75, 0.25]);
        assert_eq!(&m[4..6], &[0.25, 0.75]);
        assert_eq!(&m[6..8], &[0.0, 1.0]);
    }

    #[test]
    fn resize_preserves_constants() {
        let x = Tensor::full(0.3f64, (2, 4, 4), &Device::Cpu).unwrap();
        let y = resize_bilinear(&x, 9, 7).unwrap().to_vec3::<f64>().unwrap();
        assert!(y.iter().flatten().flatten().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn pixel_shuffle_places_subpixels() {
        let v: Vec<f64> = (0..4).map(|i| i as f64).collect();
        let x = Tensor::from_vec(v, (1, 1, 1, 4), &Device::Cpu).unwrap();
        let y = pixel_shuffle(&x).unwrap().squeeze(3).unwrap().to_vec3::<f64>().unwrap();
        assert_eq!(y[0], vec![vec![0.0, 1.0], vec![2.0, 3.0]]);
    }
}
