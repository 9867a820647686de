use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use log::info;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{bce_loss, dice_loss, text_ce_loss, total_loss, LossWeights};
use super::schedule::poly_lr;
use crate::data::{load_pair, read_jsonl, resolve_ref, ImageSample, Split, Triplet};
use crate::error::{Error, Result};
use crate::eval::dsc;
use crate::model::checkpoint::save_model;
use crate::model::{render_prompt, tensor_to_array2, LoraConfig, ModelConfig, PromptLayout, SegModel, Tokenizer, TrainForward};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub power: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub lora: Option<LoraConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 4,
            lr: 3e-4,
            power: 1.0,
            seed: 0,
            weights: LossWeights::default(),
            lora: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !(self.power > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lr ({}) and power ({}) must be positive",
                self.lr, self.power
            )));
        }
        if let Some(l) = &self.lora {
            l.validate()?;
        }
        self.weights.validate()
    }
}

/// One image paired with the binary mask of one named category.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub image: ImageSample,
    pub target: Array2<u8>,
    pub class_name: String,
    pub modality: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub text_loss: f64,
    pub bce_loss: f64,
    pub dice_loss: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_tune_dsc: Option<f64>,
    pub checkpoint: Option<PathBuf>,
    pub loss_curve: Option<PathBuf>,
}

pub const CHECKPOINT_FILE: &str = "model.safetensors";
pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";
pub const VOCAB_FILE: &str = "vocab.txt";

/// Expands triplets into one sample per category entry, grouped by split.
pub fn load_triplet_samples(path: &Path) -> Result<Vec<(Split, TrainSample)>> {
    let triplets: Vec<Triplet> = read_jsonl(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for t in triplets {
        t.validate()?;
        let (mut image, mask) = load_pair(&resolve_ref(base, &t.image_ref), &resolve_ref(base, &t.mask_ref))?;
        image.scan_id = t.scan_id.clone();
        image.modality = t.modality.clone();
        for entry in &t.category_entries {
            out.push((
                t.split,
                TrainSample {
                    image: image.clone(),
                    target: mask.binary(entry.label),
                    class_name: entry.name.clone(),
                    modality: t.modality.clone(),
                },
            ));
        }
    }
    Ok(out)
}

/// Vocabulary covering the prompt templates plus every class and modality.
pub fn corpus_tokenizer<'a>(samples: impl IntoIterator<Item = &'a TrainSample>) -> Tokenizer {
    let mut words = Vec::new();
    for s in samples {
        words.push(s.class_name.as_str());
        words.push(s.modality.as_str());
    }
    Tokenizer::for_corpus(words)
}

struct Prepared {
    texts: Vec<(PromptLayout, Vec<u32>)>,
}

fn prepare(model: &SegModel, samples: &[TrainSample]) -> Result<Prepared> {
    let tok = model.tokenizer();
    let mut texts = Vec::with_capacity(samples.len());
    for s in samples {
        let (user, target) = render_prompt(&s.class_name, &s.modality)?;
        let mut reply = tok.encode(&target);
        reply.push(tok.eos_id());
        texts.push((model.layout(&user)?, reply));
    }
    Ok(Prepared { texts })
}

fn target_tensor(model: &SegModel, samples: &[&TrainSample]) -> Result<Tensor> {
    let s = model.config().image_size;
    let mut v = Vec::with_capacity(samples.len() * s * s);
    for sample in samples {
        if sample.target.dim() != (s, s) {
            return Err(Error::DimensionMismatch {
                context: format!("target mask of {}", sample.image.sample_id),
                expected: (s, s),
                actual: sample.target.dim(),
            });
        }
        v.extend(sample.target.iter().map(|&x| f32::from(x)));
    }
    Ok(Tensor::from_vec(v, (samples.len(), s, s), &candle_core::Device::Cpu)?.to_dtype(model.dtype())?)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

/// Parameters updated by training. With adapters enabled, the language
/// model contributes only its adapter matrices.
pub fn trainable_vars(model: &SegModel) -> Vec<(String, Var)> {
    let adapters = model.config().lora.is_some();
    model
        .store()
        .select(|name| !adapters || !name.starts_with("lm.") || name.contains(".lora_"))
}

/// Mean DSC over `samples` with the reference reply supplied as text context.
pub fn teacher_forced_dsc(model: &SegModel, samples: &[TrainSample], batch_size: usize) -> Result<f64> {
    let prepared = prepare(model, samples)?;
    let tau = model.config().threshold as f32;
    let mut total = 0.0;
    for (chunk, texts) in samples.chunks(batch_size).zip(prepared.texts.chunks(batch_size)) {
        let imgs: Vec<&ImageSample> = chunk.iter().map(|s| &s.image).collect();
        let out = model.forward_train(&model.image_batch(&imgs)?, texts)?;
        for (i, s) in chunk.iter().enumerate() {
            let probs = tensor_to_array2(&out.mask_probs.get(i)?)?;
            total += dsc(&probs.mapv(|p| u8::from(p >= tau)), &s.target)?;
        }
    }
    Ok(total / samples.len() as f64)
}

type StepLosses = (Tensor, Tensor, Tensor, Tensor);

fn step_losses(out: &TrainForward, gt: &Tensor, w: &LossWeights) -> Result<StepLosses> {
    let probe = scalar(&out.mask_probs.sum_all()?)? + scalar(&out.text_logits.sum_all()?)?;
    if !probe.is_finite() {
        return Err(Error::NonFinite(format!("model outputs contain {probe}")));
    }
    let text = text_ce_loss(&out.text_logits, &out.text_targets, &out.text_weights)?;
    let bce = bce_loss(&out.mask_probs, gt)?;
    let dice = dice_loss(&out.mask_probs, gt, w.dice_smooth)?;
    let total = total_loss(&text, &bce, &dice, w)?;
    Ok((text, bce, dice, total))
}

fn write_loss_curve(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(["step", "lr", "text_loss", "bce_loss", "dice_loss", "total"])?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Trains `model` in place. Keeps the weights of the epoch with the best
/// tune-split DSC (the last epoch when `tune` is empty). With `out_dir`, the
/// kept checkpoint, vocabulary and loss curve are written there.
pub fn fit(
    model: &SegModel,
    train: &[TrainSample],
    tune: &[TrainSample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    if cfg.lora != model.config().lora {
        return Err(Error::InvalidArgument("model adapters do not match the training config".into()));
    }
    let prepared = prepare(model, train)?;
    let vars: Vec<Var> = trainable_vars(model).into_iter().map(|(_, v)| v).collect();
    let mut opt = AdamW::new(vars, ParamsAdamW { lr: cfg.lr, weight_decay: 0.0, ..ParamsAdamW::default() })?;

    let batches_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let (checkpoint, loss_curve) = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            model.tokenizer().save(&dir.join(VOCAB_FILE))?;
            (Some(dir.join(CHECKPOINT_FILE)), Some(dir.join(LOSS_CURVE_FILE)))
        }
        None => (None, None),
    };

    let mut records = Vec::with_capacity(total_steps);
    let mut best: Option<(f64, usize, BTreeMap<String, Tensor>)> = None;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let lr = poly_lr(step, total_steps, cfg.lr, cfg.power)?;
            opt.set_learning_rate(lr);
            let samples: Vec<&TrainSample> = idx.iter().map(|&i| &train[i]).collect();
            let images: Vec<&ImageSample> = samples.iter().map(|s| &s.image).collect();
            let texts: Vec<(PromptLayout, Vec<u32>)> = idx.iter().map(|&i| prepared.texts[i].clone()).collect();
            let out = model.forward_train(&model.image_batch(&images)?, &texts)?;
            let gt = target_tensor(model, &samples)?;
            let losses = step_losses(&out, &gt, &cfg.weights);
            let (text, bce, dice, total) = match losses {
                Ok(l) => l,
                Err(e) => {
                    if let Some(path) = &loss_curve {
                        write_loss_curve(path, &records)?;
                    }
                    return Err(Error::Stage { stage: "train step", source: Box::new(e) });
                }
            };
            let record = StepRecord {
                step,
                lr,
                text_loss: scalar(&text)?,
                bce_loss: scalar(&bce)?,
                dice_loss: scalar(&dice)?,
                total: scalar(&total)?,
            };
            opt.backward_step(&total)?;
            records.push(record);
            step += 1;
        }
        let score = if tune.is_empty() { f64::NEG_INFINITY } else { teacher_forced_dsc(model, tune, cfg.batch_size)? };
        info!(
            "epoch {}/{}: last loss {:.4}, tune dsc {}",
            epoch + 1,
            cfg.epochs,
            records.last().map_or(f64::NAN, |r| r.total),
            if tune.is_empty() { "n/a".to_string() } else { format!("{score:.4}") }
        );
        if best.as_ref().is_none_or(|(s, _, _)| score >= *s) {
            best = Some((score, epoch + 1, model.store().snapshot()?));
            if let Some(path) = &checkpoint {
                save_model(model, path)?;
            }
        }
    }
    let (score, best_epoch, weights) = best.expect("at least one epoch ran");
    model.store().restore(&weights)?;
    if let Some(path) = &loss_curve {
        write_loss_curve(path, &records)?;
    }
    Ok(TrainReport {
        records,
        best_epoch,
        best_tune_dsc: (!tune.is_empty()).then_some(score),
        checkpoint,
        loss_curve,
    })
}

/// Loads triplets, builds the vocabulary and a fresh model, then trains on
/// the train split with tune-split checkpoint selection.
pub fn train_loop(
    triplets: &Path,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<(SegModel, TrainReport)> {
    let samples = load_triplet_samples(triplets)?;
    let tokenizer = corpus_tokenizer(samples.iter().map(|(_, s)| s));
    let (train, tune): (Vec<TrainSample>, Vec<TrainSample>) = {
        let mut train = Vec::new();
        let mut tune = Vec::new();
        for (split, s) in samples {
            match split {
                Split::Train => train.push(s),
                Split::Tune => tune.push(s),
                Split::Validation => {}
            }
        }
        (train, tune)
    };
    let mcfg = ModelConfig { lora: cfg.lora, ..model_cfg.clone() };
    let model = SegModel::new(mcfg, tokenizer, candle_core::DType::F32)?;
    let report = fit(&model, &train, &tune, cfg, Some(out_dir))?;
    Ok((model, report))
}
