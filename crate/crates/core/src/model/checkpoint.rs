//! Single-file archives: a JSON header plus named row-major `f32` arrays.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::SafeTensors;

use super::config::ModelConfig;
use super::params::ParamStore;
use super::tokenizer::{Tokenizer, RESERVED};
use super::SegModel;
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "vlseg-model/1";

/// Writes `tensors` (converted to `f32`) with string metadata.
pub fn write_archive(path: &Path, tensors: &BTreeMap<String, Tensor>, header: HashMap<String, String>) -> Result<()> {
    let mut f32s = Vec::with_capacity(tensors.len());
    for (k, t) in tensors {
        f32s.push((k.clone(), t.to_dtype(DType::F32)?.contiguous()?));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    safetensors::serialize_to_file(f32s.iter().map(|(k, t)| (k.as_str(), t)), Some(header), path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn read_archive(path: &Path) -> Result<(BTreeMap<String, Tensor>, HashMap<String, String>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |e: String| Error::Checkpoint(format!("{}: {e}", path.display()));
    let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
    let header = meta.metadata().clone().unwrap_or_default();
    let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu).map_err(|e| bad(e.to_string()))?;
    Ok((tensors.into_iter().collect(), header))
}

fn field<'a>(header: &'a HashMap<String, String>, key: &str, path: &Path) -> Result<&'a str> {
    header
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Checkpoint(format!("{}: header lacks {key}", path.display())))
}

pub fn save_model(model: &SegModel, path: &Path) -> Result<()> {
    let header = HashMap::from([
        ("format".to_string(), MODEL_FORMAT.to_string()),
        ("config".to_string(), serde_json::to_string(model.config())?),
        ("vocab".to_string(), serde_json::to_string(model.tokenizer().tokens())?),
        ("special_tokens".to_string(), serde_json::to_string(&RESERVED)?),
    ]);
    write_archive(path, &model.store().snapshot()?, header)
}

pub fn load_model(path: &Path, dtype: DType) -> Result<SegModel> {
    let (tensors, header) = read_archive(path)?;
    let format = field(&header, "format", path)?;
    if format != MODEL_FORMAT {
        return Err(Error::Checkpoint(format!("{}: unexpected format {format}", path.display())));
    }
    let cfg: ModelConfig = serde_json::from_str(field(&header, "config", path)?)?;
    let vocab: Vec<String> = serde_json::from_str(field(&header, "vocab", path)?)?;
    let tokenizer = Tokenizer::from_tokens(vocab)?;
    let expected = tensors.len();
    let model = SegModel::from_store(cfg, tokenizer, ParamStore::from_tensors(tensors, dtype)?)?;
    if model.store().vars().len() != expected {
        return Err(Error::Checkpoint(format!(
            "{}: archive holds {expected} arrays, model uses {}",
            path.display(),
            model.store().vars().len()
        )));
    }
    Ok(model)
}
