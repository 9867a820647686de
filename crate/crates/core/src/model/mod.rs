//! The segmentation model: patch vision encoder, causal language model over a
//! word vocabulary, the two projections between their feature spaces, and a
//! mask decoder prompted by the hidden state of the `[SEG]` token.

pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod layers;
pub mod lm;
pub mod params;
pub mod prompt;
pub mod tokenizer;

use candle_core::{DType, Device, Tensor};
use ndarray::Array2;

pub use config::{LoraConfig, ModelConfig};
pub use params::{Init, ParamStore};
pub use prompt::render_prompt;
pub use tokenizer::{SpecialVocab, Tokenizer, SPECIAL};

use crate::data::ImageSample;
use crate::error::{Error, Result};
use decoder::MaskDecoder;
use encoder::VisionEncoder;
use layers::{sigmoid, Mlp};
use lm::LanguageModel;

/// Appended to the generated text when no `[SEG]` token was produced.
pub const NO_MASK_MARKER: &str = "[no mask]";

/// Last-layer encoder features of one image.
#[derive(Debug, Clone)]
pub struct PatchEmbeddingGrid {
    /// (N, C_v).
    pub tokens: Tensor,
    /// Full-resolution local features, (C_d, H, W).
    pub detail: Tensor,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl PatchEmbeddingGrid {
    pub fn with_tokens(&self, tokens: Tensor) -> Self {
        PatchEmbeddingGrid { tokens, ..self.clone() }
    }

    pub fn to_array(&self) -> Result<Array2<f32>> {
        tensor_to_array2(&self.tokens)
    }
}

#[derive(Debug, Clone)]
pub struct GenerationOutput {
    pub text: String,
    pub token_ids: Vec<u32>,
    /// Final hidden state at the first `[SEG]`, shape (C_l).
    pub seg_hidden: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskPrediction {
    pub probabilities: Array2<f32>,
    pub binary: Array2<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub mask: Array2<u8>,
    pub probabilities: Array2<f32>,
    pub text: String,
    pub has_mask: bool,
}

/// Token layout of a prompt around the image placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLayout {
    /// `<s>` followed by the tokens before `<image>`.
    pub prefix: Vec<u32>,
    pub suffix: Vec<u32>,
}

/// Outputs of a teacher-forced batch forward pass.
pub struct TrainForward {
    /// (B, T, V).
    pub text_logits: Tensor,
    /// (B, T) next-token ids; (B, T) weights selecting reply positions.
    pub text_targets: Tensor,
    pub text_weights: Tensor,
    /// (B, H, W).
    pub mask_logits: Tensor,
    pub mask_probs: Tensor,
}

pub fn tensor_to_array2(t: &Tensor) -> Result<Array2<f32>> {
    let (r, c) = t.dims2()?;
    let v = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Ok(Array2::from_shape_vec((r, c), v).expect("shape checked"))
}

pub fn array2_to_tensor(a: &Array2<f32>, dtype: DType) -> Result<Tensor> {
    let v: Vec<f32> = a.iter().copied().collect();
    Ok(Tensor::from_vec(v, a.dim(), &Device::Cpu)?.to_dtype(dtype)?)
}

pub struct SegModel {
    cfg: ModelConfig,
    tokenizer: Tokenizer,
    store: ParamStore,
    encoder: VisionEncoder,
    p_vl: Mlp,
    p_lv: Mlp,
    seg_head: Mlp,
    lm: LanguageModel,
    decoder: MaskDecoder,
}

impl SegModel {
    /// Freshly initialized weights, seeded by `cfg.seed`.
    pub fn new(cfg: ModelConfig, tokenizer: Tokenizer, dtype: DType) -> Result<Self> {
        let store = ParamStore::new(cfg.seed, dtype);
        SegModel::from_store(cfg, tokenizer, store)
    }

    pub fn from_store(cfg: ModelConfig, tokenizer: Tokenizer, mut store: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let (cv, cl) = (cfg.vision_width, cfg.lm_width);
        let ps = &mut store;
        let encoder = VisionEncoder::new(ps, &cfg)?;
        let p_vl = Mlp::new(ps, "proj.v2l", cv, cl, cl)?;
        let p_lv = Mlp::new(ps, "proj.l2v", cl, cv, cv)?;
        let seg_head = Mlp::new(ps, "proj.seg", cl, cl, cv)?;
        let lm = LanguageModel::new(ps, &cfg, tokenizer.len())?;
        let decoder = MaskDecoder::new(ps, &cfg)?;
        Ok(SegModel { cfg, tokenizer, store, encoder, p_vl, p_lv, seg_head, lm, decoder })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn p_vl(&self) -> &Mlp {
        &self.p_vl
    }

    pub fn p_lv(&self) -> &Mlp {
        &self.p_lv
    }

    /// Stacks images into a (B, H, W) tensor after checking their size.
    pub fn image_batch(&self, images: &[&ImageSample]) -> Result<Tensor> {
        let s = self.cfg.image_size;
        let mut v = Vec::with_capacity(images.len() * s * s);
        for img in images {
            if img.dims() != (s, s) {
                return Err(Error::DimensionMismatch {
                    context: format!("image {} vs model input size", img.sample_id),
                    expected: (s, s),
                    actual: img.dims(),
                });
            }
            v.extend(img.pixels.iter().copied());
        }
        Ok(Tensor::from_vec(v, (images.len(), s, s), &Device::Cpu)?.to_dtype(self.dtype())?)
    }

    /// Batched encoder: tokens (B, N, C_v) and local features (B, C_d, H, W).
    pub fn encode_batch(&self, images: &Tensor) -> Result<(Tensor, Tensor)> {
        self.encoder.forward(images)
    }

    pub fn encode_image(&self, image: &ImageSample) -> Result<PatchEmbeddingGrid> {
        let (tokens, detail) = self.encode_batch(&self.image_batch(&[image])?)?;
        let g = self.cfg.grid_side();
        Ok(PatchEmbeddingGrid { tokens: tokens.squeeze(0)?, detail: detail.squeeze(0)?, grid_h: g, grid_w: g })
    }

    fn check_width(x: &Tensor, width: usize, what: &str) -> Result<()> {
        let got = x.dim(x.rank() - 1)?;
        if got != width {
            return Err(Error::Shape(format!("{what} expects width {width}, got {got}")));
        }
        Ok(())
    }

    /// Vision features (..., C_v) into the language space (..., C_l).
    pub fn project_v2l(&self, x: &Tensor) -> Result<Tensor> {
        Self::check_width(x, self.cfg.vision_width, "vision-to-language projection")?;
        self.p_vl.forward(x)
    }

    /// Language features (..., C_l) back into the vision space (..., C_v).
    pub fn project_l2v(&self, x: &Tensor) -> Result<Tensor> {
        Self::check_width(x, self.cfg.lm_width, "language-to-vision projection")?;
        self.p_lv.forward(x)
    }

    /// The `[SEG]` hidden state (..., C_l) into the decoder prompt space (..., C_v).
    pub fn project_seg(&self, x: &Tensor) -> Result<Tensor> {
        Self::check_width(x, self.cfg.lm_width, "segmentation prompt projection")?;
        self.seg_head.forward(x)
    }

    /// `E_v + p_lv(p_vl(E_v))`.
    pub fn fuse(&self, tokens: &Tensor) -> Result<Tensor> {
        Ok((tokens + self.project_l2v(&self.project_v2l(tokens)?)?)?)
    }

    pub fn layout(&self, user_text: &str) -> Result<PromptLayout> {
        let ids = self.tokenizer.encode(user_text);
        let image = self.tokenizer.image_id();
        let positions: Vec<usize> = ids.iter().enumerate().filter(|(_, &t)| t == image).map(|(i, _)| i).collect();
        if positions.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "prompt must contain exactly one {} placeholder, found {}",
                SPECIAL.image_token,
                positions.len()
            )));
        }
        let mut prefix = vec![self.tokenizer.bos_id()];
        prefix.extend_from_slice(&ids[..positions[0]]);
        Ok(PromptLayout { prefix, suffix: ids[positions[0] + 1..].to_vec() })
    }

    /// (T, C_l) embeddings: prefix words, projected vision tokens, then `tail` words.
    fn sequence_embeds(&self, layout: &PromptLayout, vision_lang: &Tensor, tail: &[u32]) -> Result<Tensor> {
        let mut words = layout.suffix.clone();
        words.extend_from_slice(tail);
        let parts = [self.lm.embed_ids(&layout.prefix)?, vision_lang.clone(), self.lm.embed_ids(&words)?];
        Ok(Tensor::cat(&parts, 0)?)
    }

    /// Greedy decoding from the prompt with `<image>` replaced by the grid's projected tokens.
    pub fn generate_text(&self, grid: &PatchEmbeddingGrid, user_text: &str) -> Result<GenerationOutput> {
        let layout = self.layout(user_text)?;
        let vision_lang = self.project_v2l(&grid.tokens)?;
        let context = layout.prefix.len() + grid.tokens.dim(0)? + layout.suffix.len();
        let budget = self.cfg.max_new_tokens.min(self.lm.max_seq_len().saturating_sub(context));
        let (eos, seg) = (self.tokenizer.eos_id(), self.tokenizer.seg_id());
        let mut generated: Vec<u32> = Vec::new();
        while generated.len() < budget {
            let embeds = self.sequence_embeds(&layout, &vision_lang, &generated)?;
            let (_, logits) = self.lm.forward(&embeds.unsqueeze(0)?)?;
            let next = LanguageModel::argmax_last(&logits)?;
            if next == eos {
                break;
            }
            generated.push(next);
        }
        let seg_hidden = match generated.iter().position(|&t| t == seg) {
            Some(i) => {
                let embeds = self.sequence_embeds(&layout, &vision_lang, &generated[..=i])?;
                let (hidden, _) = self.lm.forward(&embeds.unsqueeze(0)?)?;
                Some(hidden.get(0)?.get(context + i)?)
            }
            None => None,
        };
        Ok(GenerationOutput { text: self.tokenizer.decode(&generated), token_ids: generated, seg_hidden })
    }

    /// Batched decoder logits: `prompt` (B, C_v), `fused` (B, N, C_v), `detail` (B, C_d, H, W).
    pub fn decode_logits(&self, prompt: &Tensor, fused: &Tensor, detail: &Tensor) -> Result<Tensor> {
        self.decoder.forward(prompt, fused, detail)
    }

    /// Probability map and its binarization at the configured threshold.
    pub fn decode_mask(&self, seg_proj: Option<&Tensor>, fused: &Tensor, detail: &Tensor) -> Result<MaskPrediction> {
        let seg_proj = seg_proj.ok_or_else(|| {
            Error::InvalidArgument("mask decoding needs a segmentation prompt embedding".into())
        })?;
        let logits = self.decode_logits(&seg_proj.unsqueeze(0)?, &fused.unsqueeze(0)?, &detail.unsqueeze(0)?)?;
        let probabilities = tensor_to_array2(&sigmoid(&logits.squeeze(0)?)?)?;
        let tau = self.cfg.threshold as f32;
        let binary = probabilities.mapv(|p| u8::from(p >= tau));
        Ok(MaskPrediction { probabilities, binary })
    }

    /// Text-prompted segmentation of one image.
    pub fn segment(&self, image: &ImageSample, class_name: &str, modality: &str) -> Result<Segmentation> {
        let grid = self.encode_image(image).map_err(Error::at("encode"))?;
        self.segment_grid(&grid, class_name, modality, None)
    }

    /// Segmentation from precomputed features. `extra` (N, C_v) is added to
    /// the fused grid before decoding.
    pub fn segment_grid(
        &self,
        grid: &PatchEmbeddingGrid,
        class_name: &str,
        modality: &str,
        extra: Option<&Tensor>,
    ) -> Result<Segmentation> {
        let (user, _) = render_prompt(class_name, modality).map_err(Error::at("prompt"))?;
        let gen = self.generate_text(grid, &user).map_err(Error::at("generate"))?;
        let size = (self.cfg.image_size, self.cfg.image_size);
        let Some(hidden) = &gen.seg_hidden else {
            return Ok(Segmentation {
                mask: Array2::zeros(size),
                probabilities: Array2::zeros(size),
                text: format!("{} {NO_MASK_MARKER}", gen.text).trim_start().to_string(),
                has_mask: false,
            });
        };
        let decode = || -> Result<MaskPrediction> {
            let prompt = self.project_seg(hidden)?;
            let mut fused = self.fuse(&grid.tokens)?;
            if let Some(e) = extra {
                fused = (fused + e)?;
            }
            self.decode_mask(Some(&prompt), &fused, &grid.detail)
        };
        let pred = decode().map_err(Error::at("decode"))?;
        Ok(Segmentation { mask: pred.binary, probabilities: pred.probabilities, text: gen.text, has_mask: true })
    }

    /// Teacher-forced forward pass over a batch of images with their prompts and replies.
    ///
    /// Each reply must contain `[SEG]`; its final hidden state prompts the decoder.
    pub fn forward_train(&self, images: &Tensor, texts: &[(PromptLayout, Vec<u32>)]) -> Result<TrainForward> {
        let b = images.dim(0)?;
        if b != texts.len() || b == 0 {
            return Err(Error::InvalidArgument(format!("{b} images but {} texts", texts.len())));
        }
        let (tokens, detail) = self.encode_batch(images)?;
        let vision_lang = self.project_v2l(&tokens)?;
        let n = tokens.dim(1)?;
        let seg = self.tokenizer.seg_id();
        let pad = self.tokenizer.pad_id();

        let lengths: Vec<usize> = texts.iter().map(|(l, r)| l.prefix.len() + n + l.suffix.len() + r.len()).collect();
        let t_max = *lengths.iter().max().expect("non-empty batch");
        let mut rows = Vec::with_capacity(b);
        let mut targets = vec![pad; b * t_max];
        let mut weights = vec![0f32; b * t_max];
        let mut seg_pos = Vec::with_capacity(b);
        for (i, (layout, reply)) in texts.iter().enumerate() {
            let embeds = self.sequence_embeds(layout, &vision_lang.get(i)?, reply)?;
            let padding = t_max - lengths[i];
            rows.push(if padding > 0 {
                Tensor::cat(&[embeds, self.lm.embed_ids(&vec![pad; padding])?], 0)?
            } else {
                embeds
            });
            let reply_start = lengths[i] - reply.len();
            for (k, &tok) in reply.iter().enumerate() {
                let t = reply_start + k - 1;
                targets[i * t_max + t] = tok;
                weights[i * t_max + t] = 1.0;
            }
            let k = reply.iter().position(|&t| t == seg).ok_or_else(|| {
                Error::InvalidArgument("training reply lacks the segmentation token".into())
            })?;
            seg_pos.push(reply_start + k);
        }
        let (hidden, text_logits) = self.lm.forward(&Tensor::stack(&rows, 0)?)?;
        let seg_hidden = (0..b)
            .map(|i| hidden.get(i)?.get(seg_pos[i]))
            .collect::<candle_core::Result<Vec<_>>>()?;
        let prompt = self.project_seg(&Tensor::stack(&seg_hidden, 0)?)?;
        let fused = self.fuse(&tokens)?;
        let mask_logits = self.decode_logits(&prompt, &fused, &detail)?;
        let mask_probs = sigmoid(&mask_logits)?;
        let dev = images.device();
        Ok(TrainForward {
            text_logits,
            text_targets: Tensor::from_vec(targets, (b, t_max), dev)?,
            text_weights: Tensor::from_vec(weights, (b, t_max), dev)?.to_dtype(self.dtype())?,
            mask_logits,
            mask_probs,
        })
    }
}
