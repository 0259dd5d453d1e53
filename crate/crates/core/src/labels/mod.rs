//! Training targets derived from head dots, and dataset splitting.

mod density;
mod mask;
mod split;

pub use density::{density_from_dots, DensityMap, DEFAULT_LNF, DEFAULT_SIGMA, TRUNCATE_SIGMAS};
pub use mask::{mask_from_render, BinaryMask};
pub use split::{split_manifest, Split, SplitStrategy, TEST_FRACTION, VAL_FRACTION};
