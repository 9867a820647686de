//! Image-level encoder features for external embedding visualisation.

use std::path::Path;

use ndarray::{Array2, Axis};

use crate::data::ImageSample;
use crate::error::{Error, Result};
use crate::model::SegModel;

/// One row per image: the last encoder layer's tokens averaged over the grid.
pub fn export_features(model: &SegModel, images: &[ImageSample]) -> Result<Array2<f32>> {
    let width = model.config().vision_width;
    let mut out = Array2::<f32>::zeros((images.len(), width));
    for (i, img) in images.iter().enumerate() {
        let tokens = model.encode_image(img)?.to_array()?;
        let mean = tokens.mean_axis(Axis(0)).ok_or_else(|| Error::InvalidData("empty token grid".into()))?;
        out.row_mut(i).assign(&mean);
    }
    Ok(out)
}

/// Writes `id, f0, f1, ...` rows.
pub fn write_features_csv(path: &Path, ids: &[String], features: &Array2<f32>) -> Result<()> {
    if ids.len() != features.nrows() {
        return Err(Error::InvalidArgument(format!(
            "{} ids for {} feature rows",
            ids.len(),
            features.nrows()
        )));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string()];
    header.extend((0..features.ncols()).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(features.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
