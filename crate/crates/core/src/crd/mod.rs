//! Color region description: turn image/mask pairs into described triplets.

mod build;
mod describe;
mod palette;
mod remote;

pub use build::{build_triplets, BuildSummary, Describer, RecordError};
pub use describe::{
    cell_name, describe_regions, describe_regions_with, region_descriptors, RegionDescriptor,
    ShapeThresholds, EMPTY_DESCRIPTION,
};
pub use palette::{colorize_mask, decolorize, ColorPalette};
pub use remote::{describe_with_fallback, encode_rgb_png, remote_describe, RemoteDescriberConfig};
