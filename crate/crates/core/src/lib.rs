//! Optimal spectral denoising of low-rank matrices under weighted Frobenius
//! loss in the spiked model.
//!
//! The entry points are [`denoise::spectral_denoise`] for arbitrary weights,
//! [`localized::localized_denoise`] for tiled unweighted denoising, and the
//! pipelines in [`applications`]. [`simlab`] generates synthetic data and runs
//! Monte Carlo experiments.

pub mod applications;
pub mod denoise;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod localized;
pub mod simlab;
pub mod spiked;

pub use denoise::{
    diagonal_denoise, spectral_denoise, svs_shrink, DenoiseOptions, DenoiseResult, Decomposition,
};
pub use error::{DenoiseError, Result};
pub use geometry::{WeightOperator, WeightedGeometry};

pub use localized::{localized_denoise, make_equispaced_partition, Partition};
pub use spiked::{AspectRatio, SpikeParams};

/// Library version, embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
