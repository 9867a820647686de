//! Point and box prompt simulators for interactive-style baselines.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxPrompt {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl BoxPrompt {
    pub fn new(row0: usize, col0: usize, row1: usize, col1: usize) -> Result<Self> {
        if row0 > row1 || col0 > col1 {
            return Err(Error::InvalidArgument(format!(
                "degenerate box ({row0}, {col0}, {row1}, {col1})"
            )));
        }
        Ok(Self { row0, col0, row1, col1 })
    }

    pub fn height(&self) -> usize {
        self.row1 - self.row0 + 1
    }

    pub fn width(&self) -> usize {
        self.col1 - self.col0 + 1
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row0..=self.row1).contains(&row) && (self.col0..=self.col1).contains(&col)
    }

    /// The box rendered as a filled binary mask.
    pub fn to_mask(&self, dims: (usize, usize)) -> Array2<u8> {
        Array2::from_shape_fn(dims, |(i, j)| u8::from(self.contains(i, j)))
    }
}

/// Smallest rectangle enclosing the foreground.
pub fn tight_box(gt: &Array2<u8>) -> Result<BoxPrompt> {
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for ((i, j), &v) in gt.indexed_iter() {
        if v == 0 {
            continue;
        }
        bounds = Some(match bounds {
            None => (i, j, i, j),
            Some((r0, c0, r1, c1)) => (r0.min(i), c0.min(j), r1.max(i), c1.max(j)),
        });
    }
    let (r0, c0, r1, c1) =
        bounds.ok_or_else(|| Error::EmptyForeground("tight box of an empty mask".into()))?;
    BoxPrompt::new(r0, c0, r1, c1)
}

/// Moves each edge by an independent uniform offset in `[-s, s]`, where `s`
/// is `max_shift` times the box extent along that edge's axis. Offsets are
/// truncated to whole pixels so no edge moves further than `s`; the result
/// is clamped to the image and re-ordered if edges crossed.
pub fn loose_box(b: &BoxPrompt, dims: (usize, usize), max_shift: f64, seed: u64) -> BoxPrompt {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = max_shift.max(0.0) * b.height() as f64;
    let sc = max_shift.max(0.0) * b.width() as f64;
    let mut shift = |edge: usize, s: f64, limit: usize| -> usize {
        let offset = rng.random_range(-s..=s).trunc() as i64;
        (edge as i64 + offset).clamp(0, limit as i64 - 1) as usize
    };
    let r0 = shift(b.row0, sr, dims.0);
    let c0 = shift(b.col0, sc, dims.1);
    let r1 = shift(b.row1, sr, dims.0);
    let c1 = shift(b.col1, sc, dims.1);
    BoxPrompt {
        row0: r0.min(r1),
        col0: c0.min(c1),
        row1: r0.max(r1),
        col1: c0.max(c1),
    }
}

/// A foreground pixel drawn uniformly at random.
pub fn point_prompt(gt: &Array2<u8>, seed: u64) -> Result<(usize, usize)> {
    let fg: Vec<(usize, usize)> = gt
        .indexed_iter()
        .filter(|(_, &v)| v != 0)
        .map(|(p, _)| p)
        .collect();
    if fg.is_empty() {
        return Err(Error::EmptyForeground("point prompt on an empty mask".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(fg[rng.random_range(0..fg.len())])
}
