//! Unsupervised multiphase image segmentation.
//!
//! A grayscale image is lifted into `K` feature channels, either with sums of
//! Gabor magnitude responses ([`gabor`]) or with a small convolutional
//! decomposition network trained on the image itself ([`cnn`]). The channels
//! are normalized to `[0, 1]` and segmented by minimizing a multichannel
//! two-constant energy with total-variation regularization over relaxed labels
//! `u_k >= 0, sum u_k <= 1` ([`energy`], [`solver`]). Hard labels take the
//! pixelwise argmax of the relaxed labels and the residual `1 - sum u_k`
//! ([`metrics`]).
//!
//! ```no_run
//! use liftseg::{gabor, metrics, model::SolverConfig, solver, synthetic};
//!
//! let (image, _truth) = synthetic::three_texture_montage(192)?;
//! let features = gabor::lift_gabor(&image, &gabor::GaborSpec::three_texture())?;
//! let result = solver::primal_dual_segment(&features, &SolverConfig::with_lambda(0.2), None)?;
//! let labels = metrics::extract_labels(&result.labels);
//! # Ok::<(), liftseg::Error>(())
//! ```

pub mod cli;
pub mod cnn;
pub mod energy;
pub mod error;
pub mod gabor;
pub mod io;
pub mod metrics;
pub mod model;
pub mod solver;
pub mod synthetic;

pub use error::{Error, Result};
pub use model::{
    normalize_features, validate_soft_labels, DualField, FeatureStack, ImageGrid, LabelMap,
    RegionConstants, SoftLabelField, SolverConfig,
};
