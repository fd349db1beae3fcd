//! Noise calibration, realistic image synthesis, classical enhancement and
//! dataset-realism evaluation for scanning transmission electron microscopy
//! (STEM) images.
//!
//! The crate is organised around a three-component forward noise model
//! (smooth background, row-coherent scan noise whose amplitude follows the
//! image gradient, and pixel-independent Tukey-lambda noise):
//!
//! - [`image`]: the [`ImageGray`] raster, filters, Fourier transforms,
//!   resampling, quality metrics and PNG I/O.
//! - [`noise`]: parameter types and samplers for the forward model.
//! - [`calibration`]: estimates every model parameter from atom-bearing frames.
//! - [`synthesis`]: atomic scenes, clean renders, labels and paired datasets.
//! - [`enhance`]: Wiener, bilateral and Fourier-peak baselines.
//! - [`eval`]: histogram divergence, R² and enhancement scoreboards.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod enhance;
pub mod error;
pub mod eval;
pub mod image;
pub mod noise;
pub mod rng;
pub mod synthesis;

pub use crate::calibration::{aggregate, calibrate_image, CalibrationConfig, CalibrationReport, ProfileStats};
pub use crate::error::{Error, Result};
pub use crate::image::{ImageGray, SpectrumGrid};
pub use crate::noise::{BackgroundParams, Mode, NoiseProfile, PointwiseParams, ScanNoiseParams};
pub use crate::rng::SeededRng;
pub use crate::synthesis::{AtomSite, DatasetSample, LatticeSpec, SceneConfig};

/// Crate version, recorded in reports and CLI logs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
