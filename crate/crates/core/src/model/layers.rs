//! Differentiable building blocks composed from elementary tensor ops.

use candle_core::{Tensor, D};

use super::config::LoraConfig;
use super::params::{linear_init, Init, ParamStore};
use crate::error::Result;

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&m)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

pub fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&m)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

pub struct Linear {
    w: Tensor,
    b: Option<Tensor>,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool) -> Result<Self> {
        let w = ps.get(&format!("{name}.weight"), &[d_out, d_in], linear_init(d_in))?;
        let b = if bias {
            Some(ps.get(&format!("{name}.bias"), &[d_out], Init::Zeros)?)
        } else {
            None
        };
        Ok(Linear { w, b })
    }

    pub fn weight(&self) -> &Tensor {
        &self.w
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.b.as_ref()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() == 1 {
            return self.forward(&x.unsqueeze(0)?)?.squeeze(0).map_err(Into::into);
        }
        let y = x.contiguous()?.broadcast_matmul(&self.w.t()?)?;
        Ok(match &self.b {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNorm {
    const EPS: f64 = 1e-5;

    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: ps.get(&format!("{name}.gamma"), &[dim], Init::Ones)?,
            beta: ps.get(&format!("{name}.beta"), &[dim], Init::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let xc = x.broadcast_sub(&x.mean_keepdim(D::Minus1)?)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let xn = xc.broadcast_div(&(var + Self::EPS)?.sqrt()?)?;
        Ok(xn.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Two linear maps with a GELU between them.
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(ps: &mut ParamStore, name: &str, d_in: usize, d_hidden: usize, d_out: usize) -> Result<Self> {
        Ok(Mlp {
            fc1: Linear::new(ps, &format!("{name}.fc1"), d_in, d_hidden, true)?,
            fc2: Linear::new(ps, &format!("{name}.fc2"), d_hidden, d_out, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu_erf()?)
    }
}

/// A linear map with an optional low-rank update `scale * B A x`.
pub struct AdaptedLinear {
    base: Linear,
    lora: Option<(Tensor, Tensor, f64)>,
}

impl AdaptedLinear {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        lora: Option<&LoraConfig>,
    ) -> Result<Self> {
        let base = Linear::new(ps, name, d_in, d_out, true)?;
        let lora = match lora {
            Some(l) => {
                let a = ps.get(&format!("{name}.lora_a"), &[l.rank, d_in], linear_init(d_in))?;
                let b = ps.get(&format!("{name}.lora_b"), &[d_out, l.rank], Init::Zeros)?;
                Some((a, b, l.scale()))
            }
            None => None,
        };
        Ok(AdaptedLinear { base, lora })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.base.forward(x)?;
        match &self.lora {
            Some((a, b, scale)) => {
                let delta = x.broadcast_matmul(&a.t()?)?.broadcast_matmul(&b.t()?)?;
                Ok((y + (delta * *scale)?)?)
            }
            None => Ok(y),
        }
    }
}

pub struct Attention {
    q: AdaptedLinear,
    k: AdaptedLinear,
    v: AdaptedLinear,
    o: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        lora: Option<&LoraConfig>,
    ) -> Result<Self> {
        Ok(Attention {
            q: AdaptedLinear::new(ps, &format!("{name}.q"), dim, dim, lora)?,
            k: AdaptedLinear::new(ps, &format!("{name}.k"), dim, dim, None)?,
            v: AdaptedLinear::new(ps, &format!("{name}.v"), dim, dim, lora)?,
            o: Linear::new(ps, &format!("{name}.o"), dim, dim, true)?,
            heads,
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, c) = x.dims3()?;
        Ok(x.reshape((b, t, self.heads, c / self.heads))?.transpose(1, 2)?.contiguous()?)
    }

    /// `q_in`: (B, Tq, C); `k_in`, `v_in`: (B, Tk, C); `bias`: additive (Tq, Tk) logits bias.
    pub fn forward(&self, q_in: &Tensor, k_in: &Tensor, v_in: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let (b, tq, c) = q_in.dims3()?;
        let q = self.split_heads(&self.q.forward(q_in)?)?;
        let k = self.split_heads(&self.k.forward(k_in)?)?;
        let v = self.split_heads(&self.v.forward(v_in)?)?;
        let scale = 1.0 / ((c / self.heads) as f64).sqrt();
        let mut logits = (q.matmul(&k.t()?.contiguous()?)? * scale)?;
        if let Some(bias) = bias {
            logits = logits.broadcast_add(bias)?;
        }
        let out = softmax_last(&logits)?.matmul(&v)?;
        let out = out.transpose(1, 2)?.contiguous()?.reshape((b, tq, c))?;
        self.o.forward(&out)
    }
}

/// Pre-norm transformer block.
pub struct Block {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    mlp: Mlp,
}

impl Block {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        lora: Option<&LoraConfig>,
    ) -> Result<Self> {
        Ok(Block {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), dim)?,
            attn: Attention::new(ps, &format!("{name}.attn"), dim, heads, lora)?,
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), dim)?,
            mlp: Mlp::new(ps, &format!("{name}.mlp"), dim, 4 * dim, dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let h = self.ln1.forward(x)?;
        let x = (x + self.attn.forward(&h, &h, &h, bias)?)?;
        let h = self.ln2.forward(&x)?;
        Ok((&x + self.mlp.forward(&h)?)?)
    }
}
