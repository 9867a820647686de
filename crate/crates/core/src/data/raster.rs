//! Single-channel PNG reading and writing.
//!
//! Images are 8- or 16-bit grayscale. Masks are 8-bit indexed (or grayscale)
//! PNGs whose raw pixel values are the label ids.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array2, Array3};
use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};

use super::types::{ImageSample, SegMask};

/// Raw single-channel samples together with the color type they came from.
pub struct GrayRaster {
    pub values: Array2<u16>,
    pub color_type: ColorType,
    pub bit_depth: BitDepth,
}

fn unpack_row(row: &[u8], width: usize, depth: BitDepth, out: &mut Vec<u16>) {
    match depth {
        BitDepth::Sixteen => {
            out.extend(
                row.chunks_exact(2)
                    .take(width)
                    .map(|b| u16::from_be_bytes([b[0], b[1]])),
            );
        }
        BitDepth::Eight => out.extend(row.iter().take(width).map(|&b| u16::from(b))),
        other => {
            let bits = other as usize;
            let per_byte = 8 / bits;
            let mask = (1u16 << bits) - 1;
            for x in 0..width {
                let byte = row[x / per_byte] as u16;
                let shift = 8 - bits * (x % per_byte + 1);
                out.push((byte >> shift) & mask);
            }
        }
    }
}

/// Reads a single-channel PNG without applying palette expansion.
pub fn read_gray_png(path: &Path) -> Result<GrayRaster> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::UnsupportedFormat(format!("{}: {e}", path.display())))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::UnsupportedFormat(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::UnsupportedFormat(format!("{}: {e}", path.display())))?;
    match info.color_type {
        ColorType::Grayscale | ColorType::Indexed => {}
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: expected single-channel PNG, found {other:?}",
                path.display()
            )))
        }
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut values = Vec::with_capacity(w * h);
    for row in buf.chunks(info.line_size).take(h) {
        unpack_row(row, w, info.bit_depth, &mut values);
    }
    let values = Array2::from_shape_vec((h, w), values)
        .map_err(|e| Error::UnsupportedFormat(format!("{}: {e}", path.display())))?;
    Ok(GrayRaster {
        values,
        color_type: info.color_type,
        bit_depth: info.bit_depth,
    })
}

/// Per-slice min-max rescaling to `[0, 1]`; constant slices map to zeros.
pub fn normalize_min_max(raw: &Array2<f32>) -> Array2<f32> {
    let (lo, hi) = raw
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        return Array2::zeros(raw.dim());
    }
    raw.mapv(|v| ((v - lo) / range).clamp(0.0, 1.0))
}

pub fn load_image(path: &Path) -> Result<Array2<f32>> {
    let raster = read_gray_png(path)?;
    if raster.color_type != ColorType::Grayscale {
        return Err(Error::UnsupportedFormat(format!(
            "{}: images must be grayscale, found {:?}",
            path.display(),
            raster.color_type
        )));
    }
    Ok(normalize_min_max(&raster.values.mapv(f32::from)))
}

/// Reads a label mask. Category names default to `label_<id>`.
pub fn load_mask(path: &Path) -> Result<SegMask> {
    let raster = read_gray_png(path)?;
    if raster.bit_depth == BitDepth::Sixteen && raster.color_type == ColorType::Indexed {
        return Err(Error::UnsupportedFormat(format!(
            "{}: 16-bit indexed masks are not supported",
            path.display()
        )));
    }
    let labels = raster.values;
    let mut categories = BTreeMap::new();
    for &v in labels.iter() {
        if v != 0 {
            categories.entry(v).or_insert_with(|| format!("label_{v}"));
        }
    }
    SegMask::new(labels, categories)
}

/// Loads an image and its mask, checking that the dimensions agree.
pub fn load_pair(image_path: &Path, mask_path: &Path) -> Result<(ImageSample, SegMask)> {
    for p in [image_path, mask_path] {
        if !p.exists() {
            return Err(Error::MissingFile(p.to_path_buf()));
        }
    }
    let pixels = load_image(image_path)?;
    let mask = load_mask(mask_path)?;
    if pixels.dim() != mask.dims() {
        return Err(Error::DimensionMismatch {
            context: format!("{} vs {}", image_path.display(), mask_path.display()),
            expected: pixels.dim(),
            actual: mask.dims(),
        });
    }
    let id = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let image = ImageSample::new(id.clone(), id, "unknown", pixels)?;
    Ok((image, mask))
}

fn encoder<'a>(
    path: &Path,
    width: usize,
    height: usize,
) -> Result<png::Encoder<'a, BufWriter<File>>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(png::Encoder::new(
        BufWriter::new(file),
        width as u32,
        height as u32,
    ))
}

fn finish(path: &Path, enc: png::Encoder<'_, BufWriter<File>>, data: &[u8]) -> Result<()> {
    let io = |e: png::EncodingError| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    let mut writer = enc.write_header().map_err(io)?;
    writer.write_image_data(data).map_err(io)?;
    writer.finish().map_err(io)
}

/// Writes `[0, 1]` intensities as a 16-bit grayscale PNG.
pub fn write_gray16_png(path: &Path, pixels: &Array2<f32>) -> Result<()> {
    let (h, w) = pixels.dim();
    let mut enc = encoder(path, w, h)?;
    enc.set_color(ColorType::Grayscale);
    enc.set_depth(BitDepth::Sixteen);
    let data: Vec<u8> = pixels
        .iter()
        .flat_map(|&v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes())
        .collect();
    finish(path, enc, &data)
}

pub fn write_gray8_png(path: &Path, values: &Array2<u8>) -> Result<()> {
    let (h, w) = values.dim();
    let mut enc = encoder(path, w, h)?;
    enc.set_color(ColorType::Grayscale);
    enc.set_depth(BitDepth::Eight);
    let data: Vec<u8> = values.iter().copied().collect();
    finish(path, enc, &data)
}

/// Writes labels as an 8-bit indexed PNG. `palette[i]` is the display color
/// of label `i`; missing entries are rendered gray.
pub fn write_mask_png(path: &Path, labels: &Array2<u16>, palette: &[[u8; 3]]) -> Result<()> {
    let max = labels.iter().copied().max().unwrap_or(0);
    if max > 255 {
        return Err(Error::InvalidArgument(format!(
            "label {max} does not fit an 8-bit indexed PNG"
        )));
    }
    let (h, w) = labels.dim();
    let mut enc = encoder(path, w, h)?;
    enc.set_color(ColorType::Indexed);
    enc.set_depth(BitDepth::Eight);
    let entries = usize::from(max) + 1;
    let mut plte = Vec::with_capacity(entries * 3);
    for i in 0..entries {
        plte.extend_from_slice(palette.get(i).unwrap_or(&[128, 128, 128]));
    }
    enc.set_palette(plte);
    let data: Vec<u8> = labels.iter().map(|&v| v as u8).collect();
    finish(path, enc, &data)
}

/// Writes an `H x W x 3` RGB array.
pub fn write_rgb_png(path: &Path, rgb: &Array3<u8>) -> Result<()> {
    let (h, w, c) = rgb.dim();
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let mut enc = encoder(path, w, h)?;
    enc.set_color(ColorType::Rgb);
    enc.set_depth(BitDepth::Eight);
    let data: Vec<u8> = rgb.iter().copied().collect();
    finish(path, enc, &data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn constant_slice_normalizes_to_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flat.png");
        write_gray8_png(&path, &Array2::from_elem((8, 8), 77u8)).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.dim(), (8, 8));
        assert!(img.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sixteen_bit_image_is_rescaled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ramp.png");
        let raw = Array2::from_shape_fn((4, 4), |(i, j)| (i * 4 + j) as f32 / 15.0);
        write_gray16_png(&path, &raw).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img[[0, 0]], 0.0);
        assert_eq!(img[[3, 3]], 1.0);
        for (a, b) in img.iter().zip(raw.iter()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn mask_with_two_categories_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        let labels = Array2::from_shape_fn((16, 16), |(i, j)| {
            if i < 5 && j < 5 {
                1u16
            } else if i > 9 && j > 3 {
                2
            } else {
                0
            }
        });
        write_mask_png(&path, &labels, &[[0, 0, 0], [255, 0, 0], [0, 255, 0]]).unwrap();
        let mask = load_mask(&path).unwrap();
        assert_eq!(mask.labels, labels);
        assert_eq!(mask.categories.keys().copied().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn grayscale_mask_values_are_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        let labels = array![[0u8, 3], [3, 0]];
        write_gray8_png(&path, &labels).unwrap();
        let mask = load_mask(&path).unwrap();
        assert_eq!(mask.labels, labels.mapv(u16::from));
    }

    #[test]
    fn pair_dimension_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.png");
        let mask = dir.path().join("mask.png");
        write_gray8_png(&img, &Array2::zeros((8, 8))).unwrap();
        write_mask_png(&mask, &Array2::zeros((4, 4)), &[]).unwrap();
        assert!(matches!(
            load_pair(&img, &mask),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn missing_and_unsupported_files_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.png");
        let img = dir.path().join("img.png");
        write_gray8_png(&img, &Array2::zeros((8, 8))).unwrap();
        assert!(matches!(load_pair(&missing, &img), Err(Error::MissingFile(_))));

        let rgb = dir.path().join("rgb.png");
        write_rgb_png(&rgb, &Array3::zeros((8, 8, 3))).unwrap();
        assert!(matches!(load_pair(&rgb, &img), Err(Error::UnsupportedFormat(_))));

        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"not a png").unwrap();
        assert!(matches!(load_mask(&junk), Err(Error::UnsupportedFormat(_))));
    }
}
