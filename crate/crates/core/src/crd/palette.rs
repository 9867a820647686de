use std::collections::{BTreeMap, HashMap};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::data::SegMask;
use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

/// Label colors for rendering masks. All colors, background included, are
/// pairwise distinct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorPalette {
    pub background: Rgb,
    pub entries: BTreeMap<u16, Rgb>,
}

impl ColorPalette {
    /// Kelly's colors of maximum contrast, without white and black.
    pub const KELLY: [(&'static str, Rgb); 20] = [
        ("yellow", [255, 179, 0]),
        ("purple", [128, 62, 117]),
        ("orange", [255, 104, 0]),
        ("light blue", [166, 189, 215]),
        ("red", [193, 0, 32]),
        ("tan", [206, 162, 98]),
        ("gray", [129, 112, 102]),
        ("green", [0, 125, 52]),
        ("pink", [246, 118, 142]),
        ("blue", [0, 83, 138]),
        ("salmon", [255, 122, 92]),
        ("violet", [83, 55, 122]),
        ("amber", [255, 142, 0]),
        ("crimson", [179, 40, 81]),
        ("lemon", [244, 200, 0]),
        ("brown", [127, 24, 13]),
        ("lime", [147, 170, 0]),
        ("dark brown", [89, 51, 21]),
        ("vermilion", [241, 58, 19]),
        ("olive", [35, 44, 22]),
    ];

    pub const BLACK: Rgb = [0, 0, 0];

    pub fn new(background: Rgb, entries: BTreeMap<u16, Rgb>) -> Result<Self> {
        let p = Self {
            background,
            entries,
        };
        p.validate()?;
        Ok(p)
    }

    /// Default palette: Kelly colors assigned by ascending label id on black.
    pub fn for_labels(labels: &[u16]) -> Result<Self> {
        let mut sorted: Vec<u16> = labels.iter().copied().filter(|&l| l != 0).collect();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() > Self::KELLY.len() {
            return Err(Error::InvalidArgument(format!(
                "default palette holds {} colors, {} labels requested",
                Self::KELLY.len(),
                sorted.len()
            )));
        }
        let entries = sorted
            .into_iter()
            .zip(Self::KELLY.iter())
            .map(|(l, (_, c))| (l, *c))
            .collect();
        Self::new(Self::BLACK, entries)
    }

    /// Default palette covering labels `1..=20`.
    pub fn standard() -> Self {
        let labels: Vec<u16> = (1..=Self::KELLY.len() as u16).collect();
        Self::for_labels(&labels).expect("standard palette is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<Rgb, Option<u16>> = HashMap::new();
        seen.insert(self.background, None);
        for (&label, &color) in &self.entries {
            if label == 0 {
                return Err(Error::InvalidArgument(
                    "palette entry for background label 0".into(),
                ));
            }
            if let Some(prev) = seen.insert(color, Some(label)) {
                let other = prev.map_or("background".to_string(), |l| format!("label {l}"));
                return Err(Error::InvalidArgument(format!(
                    "label {label} reuses the color of {other}"
                )));
            }
        }
        Ok(())
    }

    pub fn color(&self, label: u16) -> Option<Rgb> {
        if label == 0 {
            Some(self.background)
        } else {
            self.entries.get(&label).copied()
        }
    }

    /// Human-readable color name, falling back to hex.
    pub fn color_name(color: Rgb) -> String {
        Self::KELLY
            .iter()
            .find(|(_, c)| *c == color)
            .map(|(n, _)| n.to_string())
            .unwrap_or_else(|| format!("#{:02x}{:02x}{:02x}", color[0], color[1], color[2]))
    }

    /// Colors indexed by label id, for indexed PNG palettes.
    pub fn indexed_colors(&self) -> Vec<Rgb> {
        let max = self.entries.keys().copied().max().unwrap_or(0) as usize;
        let mut out = vec![[128, 128, 128]; max + 1];
        out[0] = self.background;
        for (&l, &c) in &self.entries {
            out[l as usize] = c;
        }
        out
    }
}

/// Renders each label in its palette color.
pub fn colorize_mask(mask: &SegMask, palette: &ColorPalette) -> Result<Array3<u8>> {
    let (h, w) = mask.dims();
    let mut lut: HashMap<u16, Rgb> = HashMap::new();
    for label in mask.present_labels() {
        let c = palette
            .color(label)
            .ok_or_else(|| Error::InvalidArgument(format!("label {label} missing from palette")))?;
        lut.insert(label, c);
    }
    lut.insert(0, palette.background);
    let mut out = Array3::zeros((h, w, 3));
    for ((i, j), label) in mask.labels.indexed_iter() {
        let c = lut[label];
        for k in 0..3 {
            out[[i, j, k]] = c[k];
        }
    }
    Ok(out)
}

/// Inverse of [`colorize_mask`].
pub fn decolorize(rgb: &Array3<u8>, palette: &ColorPalette) -> Result<Array2<u16>> {
    let (h, w, _) = rgb.dim();
    let mut lut: HashMap<Rgb, u16> = palette.entries.iter().map(|(&l, &c)| (c, l)).collect();
    lut.insert(palette.background, 0);
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let c = [rgb[[i, j, 0]], rgb[[i, j, 1]], rgb[[i, j, 2]]];
            out[[i, j]] = *lut
                .get(&c)
                .ok_or_else(|| Error::InvalidData(format!("color {c:?} at ({i}, {j}) not in palette")))?;
        }
    }
    Ok(out)
}
