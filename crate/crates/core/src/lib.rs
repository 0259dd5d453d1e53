//! Desk-scale crowd counting laboratory: procedural scenes, density and
//! mask labels, a spatial FCN counter, SSIM-cycle domain adaptation,
//! evaluation metrics and scene/density regularisation.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod regularizers;
pub mod report;
pub mod rng;
pub mod scene;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
