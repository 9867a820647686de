//! Deterministic shape and position descriptions of mask regions.

use std::collections::{BTreeMap, VecDeque};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::SegMask;

use super::palette::ColorPalette;

pub const EMPTY_DESCRIPTION: &str = "The image contains no highlighted regions.";

const ROW_BANDS: [&str; 3] = ["top", "center", "bottom"];
const COL_BANDS: [&str; 3] = ["left", "center", "right"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionDescriptor {
    pub label: u16,
    pub category: String,
    pub area_fraction: f64,
    /// Mean `(row, col)` of the foreground pixels.
    pub centroid: (f64, f64),
    pub centroid_cell: String,
    /// Inclusive `(row0, col0, row1, col1)`.
    pub bbox: (usize, usize, usize, usize),
    pub elongation: f64,
    pub compactness: f64,
    pub component_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeThresholds {
    pub compact: f64,
    pub elongated: f64,
}

impl Default for ShapeThresholds {
    fn default() -> Self {
        Self {
            compact: 0.75,
            elongated: 3.0,
        }
    }
}

fn band(coord: f64, extent: usize) -> usize {
    ((3.0 * (coord + 0.5) / extent as f64).floor() as isize).clamp(0, 2) as usize
}

/// Name of the 3x3 grid cell holding `(row, col)` in an `h x w` image.
pub fn cell_name(row: f64, col: f64, h: usize, w: usize) -> String {
    cell_from_bands(band(row, h), band(col, w))
}

fn cell_from_bands(r: usize, c: usize) -> String {
    match (r, c) {
        (1, 1) => "center".to_string(),
        _ => format!("{}-{}", ROW_BANDS[r], COL_BANDS[c]),
    }
}

fn count_components(labels: &Array2<u16>, label: u16) -> usize {
    let (h, w) = labels.dim();
    let mut seen = Array2::from_elem((h, w), false);
    let mut count = 0;
    let mut queue = VecDeque::new();
    for ((i, j), &v) in labels.indexed_iter() {
        if v != label || seen[[i, j]] {
            continue;
        }
        count += 1;
        seen[[i, j]] = true;
        queue.push_back((i, j));
        while let Some((y, x)) = queue.pop_front() {
            let neighbors = [
                (y.wrapping_sub(1), x),
                (y + 1, x),
                (y, x.wrapping_sub(1)),
                (y, x + 1),
            ];
            for (ny, nx) in neighbors {
                if ny < h && nx < w && !seen[[ny, nx]] && labels[[ny, nx]] == label {
                    seen[[ny, nx]] = true;
                    queue.push_back((ny, nx));
                }
            }
        }
    }
    count
}

#[derive(Default)]
struct Accum {
    count: usize,
    sum_r: f64,
    sum_c: f64,
    r0: usize,
    c0: usize,
    r1: usize,
    c1: usize,
}

/// Per-label descriptors in ascending label order.
pub fn region_descriptors(mask: &SegMask) -> Vec<RegionDescriptor> {
    let (h, w) = mask.dims();
    let mut acc: BTreeMap<u16, Accum> = BTreeMap::new();
    for ((i, j), &v) in mask.labels.indexed_iter() {
        if v == 0 {
            continue;
        }
        let a = acc.entry(v).or_insert_with(|| Accum {
            r0: i,
            c0: j,
            r1: i,
            c1: j,
            ..Default::default()
        });
        a.count += 1;
        a.sum_r += i as f64;
        a.sum_c += j as f64;
        a.r0 = a.r0.min(i);
        a.c0 = a.c0.min(j);
        a.r1 = a.r1.max(i);
        a.c1 = a.c1.max(j);
    }
    acc.into_iter()
        .map(|(label, a)| {
            let centroid = (a.sum_r / a.count as f64, a.sum_c / a.count as f64);
            let bh = (a.r1 - a.r0 + 1) as f64;
            let bw = (a.c1 - a.c0 + 1) as f64;
            RegionDescriptor {
                label,
                category: mask
                    .categories
                    .get(&label)
                    .cloned()
                    .unwrap_or_else(|| format!("label_{label}")),
                area_fraction: a.count as f64 / (h * w) as f64,
                centroid,
                centroid_cell: cell_name(centroid.0, centroid.1, h, w),
                bbox: (a.r0, a.c0, a.r1, a.c1),
                elongation: bh.max(bw) / bh.min(bw),
                compactness: a.count as f64 / (bh * bw),
                component_count: count_components(&mask.labels, label),
            }
        })
        .collect()
}

fn adjective(d: &RegionDescriptor, t: &ShapeThresholds) -> &'static str {
    if d.compactness >= t.compact {
        "a blocky"
    } else if d.elongation >= t.elongated {
        "an elongated"
    } else {
        "an irregular"
    }
}

fn relation(a: &RegionDescriptor, b: &RegionDescriptor) -> &'static str {
    let dr = a.centroid.0 - b.centroid.0;
    let dc = a.centroid.1 - b.centroid.1;
    if dr.abs() >= dc.abs() {
        if dr < 0.0 {
            "above"
        } else {
            "below"
        }
    } else if dc < 0.0 {
        "to the left of"
    } else {
        "to the right of"
    }
}

pub fn describe_regions(mask: &SegMask) -> (String, Vec<RegionDescriptor>) {
    let palette = ColorPalette::for_labels(&mask.present_labels())
        .unwrap_or_else(|_| ColorPalette::standard());
    describe_regions_with(mask, &palette, &ShapeThresholds::default())
}

/// One sentence per region, then one sentence per consecutive pair giving
/// their relative position.
pub fn describe_regions_with(
    mask: &SegMask,
    palette: &ColorPalette,
    thresholds: &ShapeThresholds,
) -> (String, Vec<RegionDescriptor>) {
    let descriptors = region_descriptors(mask);
    if descriptors.is_empty() {
        return (EMPTY_DESCRIPTION.to_string(), descriptors);
    }
    let color = |label: u16| {
        palette
            .color(label)
            .map(ColorPalette::color_name)
            .unwrap_or_else(|| format!("label {label}"))
    };
    let mut sentences = Vec::new();
    for d in &descriptors {
        let mut s = format!(
            "The {} region is {} shape in the {} of the image, covering {:.1}% of it.",
            color(d.label),
            adjective(d, thresholds),
            d.centroid_cell,
            100.0 * d.area_fraction
        );
        if d.component_count > 1 {
            s.push_str(&format!(" It is split into {} parts.", d.component_count));
        }
        sentences.push(s);
    }
    for pair in descriptors.windows(2) {
        sentences.push(format!(
            "The {} region is {} the {} region.",
            color(pair[1].label),
            relation(&pair[1], &pair[0]),
            color(pair[0].label)
        ));
    }
    (sentences.join(" "), descriptors)
}
