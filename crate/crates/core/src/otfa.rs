//! One-shot, training-free adaptation to unseen classes.
//!
//! Registration stores the exemplar's encoder features masked to the
//! foreground cells, together with a Gaussian fitted to those cells. At
//! inference the query features attend over the masked exemplar features
//! (no learned weights) and the Gaussian reweights the query features
//! spatially before they enter the language model and decoder.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{ImageSample, SegMask};
use crate::error::{Error, Result};
use crate::model::checkpoint::{read_archive, write_archive};
use crate::model::{array2_to_tensor, tensor_to_array2, SegModel, Segmentation};

pub const ADAPTER_FORMAT: &str = "vlseg-adapter/1";

/// Axis-aligned Gaussian in grid coordinates (cell centres at integers).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub center_row: f64,
    pub center_col: f64,
    pub sigma_row: f64,
    pub sigma_col: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterMemory {
    /// `E_v` with background rows zeroed, (N, C_v).
    pub masked_embedding: Array2<f32>,
    pub gaussian: GaussianPrior,
    pub class_name: String,
    pub grid_h: usize,
    pub grid_w: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationPriorMap {
    pub values: Array2<f64>,
    pub peak: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LocationMode {
    /// `E_v * (1 + g)`.
    #[default]
    Multiplicative,
    /// `E_v + g`.
    Additive,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptOptions {
    pub location: LocationMode,
    pub semantic: bool,
    /// Divide attention logits by `sqrt(C_v)`.
    pub scale_logits: bool,
    /// Restrict attention keys to foreground cells.
    pub foreground_keys_only: bool,
    /// Minimum Gaussian spread, in cells.
    pub sigma_floor: f64,
}

impl Default for AdaptOptions {
    fn default() -> Self {
        AdaptOptions {
            location: LocationMode::Multiplicative,
            semantic: true,
            scale_logits: false,
            foreground_keys_only: false,
            sigma_floor: 0.5,
        }
    }
}

/// Binary grid mask: a cell is foreground when at least half of its pixels are.
///
/// When no cell reaches half coverage, the best-covered cells are used so a
/// small object still registers.
pub fn downsample_mask(mask: &Array2<u8>, grid_h: usize, grid_w: usize) -> Result<Array2<u8>> {
    let (h, w) = mask.dim();
    if grid_h == 0 || grid_w == 0 || h % grid_h != 0 || w % grid_w != 0 {
        return Err(Error::Shape(format!("{h}x{w} mask does not tile a {grid_h}x{grid_w} grid")));
    }
    let (ph, pw) = (h / grid_h, w / grid_w);
    let mut counts = Array2::<usize>::zeros((grid_h, grid_w));
    for ((i, j), &v) in mask.indexed_iter() {
        if v != 0 {
            counts[[i / ph, j / pw]] += 1;
        }
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(Error::EmptyForeground("registration mask".into()));
    }
    let area = ph * pw;
    let mut cells = counts.mapv(|c| u8::from(2 * c >= area));
    if cells.iter().all(|&c| c == 0) {
        cells = counts.mapv(|c| u8::from(c == max));
    }
    Ok(cells)
}

fn fit_gaussian(cells: &Array2<u8>, sigma_floor: f64) -> GaussianPrior {
    let pts: Vec<(f64, f64)> = cells
        .indexed_iter()
        .filter(|(_, &v)| v != 0)
        .map(|((i, j), _)| (i as f64, j as f64))
        .collect();
    let n = pts.len() as f64;
    let (cr, cc) = pts.iter().fold((0.0, 0.0), |(a, b), (i, j)| (a + i, b + j));
    let (cr, cc) = (cr / n, cc / n);
    let var_r = pts.iter().map(|(i, _)| (i - cr).powi(2)).sum::<f64>() / n;
    let var_c = pts.iter().map(|(_, j)| (j - cc).powi(2)).sum::<f64>() / n;
    GaussianPrior {
        center_row: cr,
        center_col: cc,
        sigma_row: var_r.sqrt().max(sigma_floor),
        sigma_col: var_c.sqrt().max(sigma_floor),
    }
}

/// Registers an exemplar image and its mask for `class_name`.
///
/// The foreground is the mask label named `class_name`, or the only labelled
/// region when the mask carries a single category under another name.
pub fn register(model: &SegModel, image: &ImageSample, mask: &SegMask, class_name: &str) -> Result<AdapterMemory> {
    register_with(model, image, mask, class_name, &AdaptOptions::default())
}

pub fn register_with(
    model: &SegModel,
    image: &ImageSample,
    mask: &SegMask,
    class_name: &str,
    opts: &AdaptOptions,
) -> Result<AdapterMemory> {
    if class_name.trim().is_empty() {
        return Err(Error::InvalidArgument("class name must be non-empty".into()));
    }
    let label = match mask.label_of(class_name) {
        Some(l) => l,
        None => match mask.present_labels().as_slice() {
            [only] => *only,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "mask has no category named {class_name:?}"
                )))
            }
        },
    };
    let binary = mask.binary(label);
    if binary.iter().all(|&v| v == 0) {
        return Err(Error::EmptyForeground(format!("class {class_name:?}")));
    }
    let grid = model.encode_image(image)?;
    let cells = downsample_mask(&binary, grid.grid_h, grid.grid_w)?;
    let mut masked = grid.to_array()?;
    for (n, mut row) in masked.rows_mut().into_iter().enumerate() {
        if cells[[n / grid.grid_w, n % grid.grid_w]] == 0 {
            row.fill(0.0);
        }
    }
    Ok(AdapterMemory {
        masked_embedding: masked,
        gaussian: fit_gaussian(&cells, opts.sigma_floor),
        class_name: class_name.trim().to_string(),
        grid_h: grid.grid_h,
        grid_w: grid.grid_w,
    })
}

/// `exp(-((i - c_r)^2 / 2 s_r^2 + (j - c_c)^2 / 2 s_c^2))`, rescaled so the maximum is 1.
pub fn gaussian_prior(memory: &AdapterMemory, grid_h: usize, grid_w: usize) -> LocationPriorMap {
    let g = &memory.gaussian;
    let mut values = Array2::from_shape_fn((grid_h, grid_w), |(i, j)| {
        let dr = (i as f64 - g.center_row) / g.sigma_row;
        let dc = (j as f64 - g.center_col) / g.sigma_col;
        (-(dr * dr + dc * dc) / 2.0).exp()
    });
    let mut peak = (0, 0);
    let mut best = f64::NEG_INFINITY;
    for ((i, j), &v) in values.indexed_iter() {
        if v > best {
            best = v;
            peak = (i, j);
        }
    }
    values.mapv_inplace(|v| (v / best).max(f64::MIN_POSITIVE));
    LocationPriorMap { values, peak }
}

/// `softmax(Q K^T) K` with `K` serving as both keys and values.
///
/// `key_mask` (length N_k) drops keys whose entry is false.
pub fn cross_attend(query: &Tensor, masked: &Tensor, scale: bool, key_mask: Option<&[bool]>) -> Result<Tensor> {
    let (_, c) = query.dims2()?;
    let (nk, ck) = masked.dims2()?;
    if c != ck {
        return Err(Error::Shape(format!("query width {c} vs key width {ck}")));
    }
    for (name, t) in [("query", query), ("keys", masked)] {
        let s = t.to_dtype(DType::F64)?.abs()?.sum_all()?.to_scalar::<f64>()?;
        if !s.is_finite() {
            return Err(Error::NonFinite(format!("cross-attention {name}")));
        }
    }
    let mut logits = query.matmul(&masked.t()?)?;
    if scale {
        logits = (logits / (c as f64).sqrt())?;
    }
    if let Some(mask) = key_mask {
        if mask.len() != nk {
            return Err(Error::Shape(format!("key mask of {} entries for {nk} keys", mask.len())));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::EmptyForeground("cross-attention key mask".into()));
        }
        let bias: Vec<f32> = mask.iter().map(|&m| if m { 0.0 } else { -1e30 }).collect();
        let bias = Tensor::from_vec(bias, (1, nk), query.device())?.to_dtype(query.dtype())?;
        logits = logits.broadcast_add(&bias)?;
    }
    // Normalizing after the weighted sum keeps N = 1 and identical keys exact.
    let e = logits.broadcast_sub(&logits.max_keepdim(1)?)?.exp()?;
    Ok(e.matmul(masked)?.broadcast_div(&e.sum_keepdim(1)?)?)
}

/// Segments `image` as the registered class with default options.
pub fn adapted_segment(model: &SegModel, image: &ImageSample, memory: &AdapterMemory) -> Result<Segmentation> {
    adapted_segment_with(model, image, memory, &AdaptOptions::default())
}

pub fn adapted_segment_with(
    model: &SegModel,
    image: &ImageSample,
    memory: &AdapterMemory,
    opts: &AdaptOptions,
) -> Result<Segmentation> {
    let grid = model.encode_image(image).map_err(Error::at("encode"))?;
    if (grid.grid_h, grid.grid_w) != (memory.grid_h, memory.grid_w) {
        return Err(Error::Shape(format!(
            "memory registered on a {}x{} grid, model uses {}x{}",
            memory.grid_h, memory.grid_w, grid.grid_h, grid.grid_w
        )));
    }
    let dtype = model.dtype();
    let prior = gaussian_prior(memory, grid.grid_h, grid.grid_w);
    let g: Vec<f64> = prior.values.iter().copied().collect();
    let g = Tensor::from_vec(g, (grid.grid_h * grid.grid_w, 1), &Device::Cpu)?.to_dtype(dtype)?;
    let located = match opts.location {
        LocationMode::Multiplicative => grid.tokens.broadcast_mul(&(g + 1.0)?)?,
        LocationMode::Additive => grid.tokens.broadcast_add(&g)?,
        LocationMode::Off => grid.tokens.clone(),
    };
    let extra = if opts.semantic {
        let masked = array2_to_tensor(&memory.masked_embedding, dtype)?;
        let keys: Option<Vec<bool>> = opts
            .foreground_keys_only
            .then(|| memory.masked_embedding.rows().into_iter().map(|r| r.iter().any(|&v| v != 0.0)).collect());
        Some(cross_attend(&grid.tokens, &masked, opts.scale_logits, keys.as_deref()).map_err(Error::at("attend"))?)
    } else {
        None
    };
    model.segment_grid(&grid.with_tokens(located), &memory.class_name, &image.modality, extra.as_ref())
}

impl AdapterMemory {
    pub fn validate(&self) -> Result<()> {
        let g = &self.gaussian;
        if self.masked_embedding.nrows() != self.grid_h * self.grid_w {
            return Err(Error::Shape(format!(
                "masked embedding has {} rows for a {}x{} grid",
                self.masked_embedding.nrows(),
                self.grid_h,
                self.grid_w
            )));
        }
        if !(g.sigma_row > 0.0 && g.sigma_col > 0.0) {
            return Err(Error::InvalidData("Gaussian spreads must be positive".into()));
        }
        let inside = |c: f64, n: usize| c >= 0.0 && c <= (n - 1) as f64;
        if !inside(g.center_row, self.grid_h) || !inside(g.center_col, self.grid_w) {
            return Err(Error::InvalidData("Gaussian centre lies outside the grid".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors = BTreeMap::from([(
            "masked_embedding".to_string(),
            array2_to_tensor(&self.masked_embedding, DType::F32)?,
        )]);
        let header = HashMap::from([
            ("format".to_string(), ADAPTER_FORMAT.to_string()),
            ("class_name".to_string(), self.class_name.clone()),
            ("gaussian".to_string(), serde_json::to_string(&self.gaussian)?),
            ("grid".to_string(), serde_json::to_string(&[self.grid_h, self.grid_w])?),
        ]);
        write_archive(path, &tensors, header)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (tensors, header) = read_archive(path)?;
        let get = |k: &str| {
            header
                .get(k)
                .ok_or_else(|| Error::Checkpoint(format!("{}: header lacks {k}", path.display())))
        };
        if get("format")? != ADAPTER_FORMAT {
            return Err(Error::Checkpoint(format!("{}: not an adapter archive", path.display())));
        }
        let [grid_h, grid_w]: [usize; 2] = serde_json::from_str(get("grid")?)?;
        let emb = tensors
            .get("masked_embedding")
            .ok_or_else(|| Error::Checkpoint(format!("{}: missing masked_embedding", path.display())))?;
        let memory = AdapterMemory {
            masked_embedding: tensor_to_array2(emb)?,
            gaussian: serde_json::from_str(get("gaussian")?)?,
            class_name: get("class_name")?.clone(),
            grid_h,
            grid_w,
        };
        memory.validate()?;
        Ok(memory)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::new(rows.to_vec(), &Device::Cpu).unwrap()
    }

    fn memory_from_cells(cells: &Array2<u8>) -> AdapterMemory {
        let (h, w) = cells.dim();
        AdapterMemory {
            masked_embedding: Array2::zeros((h * w, 2)),
            gaussian: fit_gaussian(cells, 0.5),
            class_name: "x".into(),
            grid_h: h,
            grid_w: w,
        }
    }

    #[test]
    fn single_key_is_returned_verbatim() {
        let out = cross_attend(&t(&[vec![0.3, -1.0]]), &t(&[vec![2.0, 5.0]]), false, None).unwrap();
        assert_eq!(out.to_vec2::<f64>().unwrap(), vec![vec![2.0, 5.0]]);
    }

    #[test]
    fn constant_values_give_constant_output() {
        let q = t(&[vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.0, 0.0]]);
        let k = t(&[vec![0.25, -4.0], vec![0.25, -4.0], vec![0.25, -4.0]]);
        let out = cross_attend(&q, &k, false, None).unwrap().to_vec2::<f64>().unwrap();
        assert!(out.iter().all(|r| r == &vec![0.25, -4.0]));
    }

    #[test]
    fn cross_attend_errors() {
        let q = t(&[vec![1.0, 2.0]]);
        assert!(cross_attend(&q, &t(&[vec![1.0, 2.0, 3.0]]), false, None).is_err());
        assert!(matches!(
            cross_attend(&t(&[vec![f64::NAN, 0.0]]), &q, false, None),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn masked_keys_are_ignored() {
        let q = t(&[vec![1.0, 0.0]]);
        let k = t(&[vec![9.0, 0.0], vec![0.0, 1.0]]);
        let out = cross_attend(&q, &k, false, Some(&[false, true])).unwrap();
        assert_eq!(out.to_vec2::<f64>().unwrap(), vec![vec![0.0, 1.0]]);
    }

    #[test]
    fn downsample_counts_half_cells() {
        let mut m = Array2::<u8>::zeros((8, 8));
        m.slice_mut(ndarray::s![.., 0..5]).fill(1);
        let cells = downsample_mask(&m, 2, 2).unwrap();
        assert_eq!(cells, ndarray::arr2(&[[1, 0], [1, 0]]));
        m.slice_mut(ndarray::s![.., 0..6]).fill(1);
        assert_eq!(downsample_mask(&m, 2, 2).unwrap(), ndarray::arr2(&[[1, 1], [1, 1]]));
        assert!(matches!(downsample_mask(&Array2::zeros((8, 8)), 2, 2), Err(Error::EmptyForeground(_))));
    }

    #[test]
    fn tiny_object_still_registers_a_cell() {
        let mut m = Array2::<u8>::zeros((8, 8));
        m[[6, 1]] = 1;
        assert_eq!(downsample_mask(&m, 2, 2).unwrap(), ndarray::arr2(&[[0, 0], [1, 0]]));
    }

    #[test]
    fn single_cell_prior_peaks_there() {
        let mut cells = Array2::<u8>::zeros((8, 8));
        cells[[3, 3]] = 1;
        let prior = gaussian_prior(&memory_from_cells(&cells), 8, 8);
        assert_eq!(prior.peak, (3, 3));
        assert_eq!(prior.values[[3, 3]], 1.0);
        assert!(prior.values.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn centred_square_is_centred() {
        let mut cells = Array2::<u8>::zeros((8, 8));
        cells.slice_mut(ndarray::s![2..6, 2..6]).fill(1);
        let g = memory_from_cells(&cells).gaussian;
        assert_eq!((g.center_row, g.center_col), (3.5, 3.5));
    }

    #[test]
    fn l_shape_centre_is_mean_of_cells() {
        let mut cells = Array2::<u8>::zeros((8, 8));
        cells.slice_mut(ndarray::s![1..7, 1..3]).fill(1);
        cells.slice_mut(ndarray::s![5..7, 3..7]).fill(1);
        let mut sum = (0.0, 0.0);
        let mut n = 0.0;
        for i in 0..8 {
            for j in 0..8 {
                if cells[[i, j]] == 1 {
                    sum.0 += i as f64;
                    sum.1 += j as f64;
                    n += 1.0;
                }
            }
        }
        let g = memory_from_cells(&cells).gaussian;
        assert!((g.center_row - sum.0 / n).abs() < 1e-12);
        assert!((g.center_col - sum.1 / n).abs() < 1e-12);
    }

    #[test]
    fn memory_validation() {
        let mut cells = Array2::<u8>::zeros((4, 4));
        cells[[1, 2]] = 1;
        let mut m = memory_from_cells(&cells);
        assert!(m.validate().is_ok());
        m.gaussian.center_row = 7.0;
        assert!(m.validate().is_err());
    }

    fn brute(q: &[Vec<f64>], k: &[Vec<f64>]) -> Vec<Vec<f64>> {
        q.iter()
            .map(|qi| {
                let logits: Vec<f64> = k.iter().map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum()).collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                (0..qi.len()).map(|c| k.iter().zip(&e).map(|(kj, w)| w / z * kj[c]).sum()).collect()
            })
            .collect()
    }

    proptest! {
        #[test]
        fn matches_loop_and_is_convex(seed in any::<u64>(), n in 1usize..12, c in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut mat = |r: usize| -> Vec<Vec<f64>> {
                (0..r).map(|_| (0..c).map(|_| rng.random_range(-1.5..1.5)).collect()).collect()
            };
            let (q, k) = (mat(n), mat(n));
            let got = cross_attend(&t(&q), &t(&k), false, None).unwrap().to_vec2::<f64>().unwrap();
            let want = brute(&q, &k);
            for (g, w) in got.iter().flatten().zip(want.iter().flatten()) {
                prop_assert!((g - w).abs() < 1e-9);
            }
            for col in 0..c {
                let lo = k.iter().map(|r| r[col]).fold(f64::INFINITY, f64::min);
                let hi = k.iter().map(|r| r[col]).fold(f64::NEG_INFINITY, f64::max);
                for row in &got {
                    prop_assert!(row[col] >= lo - 1e-12 && row[col] <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn query_permutation_permutes_output(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let k: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let mut qp = q.clone();
            qp.reverse();
            let a = cross_attend(&t(&q), &t(&k), false, None).unwrap().to_vec2::<f64>().unwrap();
            let mut b = cross_attend(&t(&qp), &t(&k), false, None).unwrap().to_vec2::<f64>().unwrap();
            b.reverse();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn prior_argmax_follows_translation(r in 2usize..5, c in 2usize..5, dr in 0usize..3, dc in 0usize..3) {
            let mut cells = Array2::<u8>::zeros((12, 12));
            cells.slice_mut(ndarray::s![r..r + 2, c..c + 3]).fill(1);
            let base = gaussian_prior(&memory_from_cells(&cells), 12, 12).peak;
            let mut moved = Array2::<u8>::zeros((12, 12));
            moved.slice_mut(ndarray::s![r + dr..r + dr + 2, c + dc..c + dc + 3]).fill(1);
            let shifted = gaussian_prior(&memory_from_cells(&moved), 12, 12).peak;
            prop_assert_eq!(shifted, (base.0 + dr, base.1 + dc));
        }
    }
}
