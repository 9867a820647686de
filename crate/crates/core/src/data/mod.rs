//! Domain types, raster ingestion, scan-level splitting and synthetic data.

mod manifest;
mod raster;
mod split;
mod synth;
mod types;

pub use manifest::{read_jsonl, resolve_ref, write_jsonl};
pub use raster::{
    load_image, load_mask, load_pair, normalize_min_max, read_gray_png, write_gray16_png,
    write_gray8_png, write_mask_png, write_rgb_png,
};
pub use split::{apportion, grouped_split};
pub use synth::{
    synth_toy_dataset, synth_toy_dataset_with, ShapeClass, ShapeParams, SynthDataset,
    SynthOptions, SynthSlice,
};
pub use types::{
    CategoryEntry, DatasetManifest, ImageSample, PairRecord, Provenance, SegMask, Split,
    SplitCounts, Triplet,
};
