//! Domain types shared across the lifting, energy, solver and evaluation code.
//!
//! All fields are 64-bit floats in `ndarray` containers. Multichannel fields
//! are laid out as `(channel, row, column)`.

use log::warn;
use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-channel image on the pixel grid, intensities normally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    data: Array2<f64>,
}

impl ImageGrid {
    pub const MIN_SIDE: usize = 3;

    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (h, w) = data.dim();
        if h < Self::MIN_SIDE || w < Self::MIN_SIDE {
            return Err(Error::validation(format!(
                "image must be at least {m}x{m}, got {h}x{w}",
                m = Self::MIN_SIDE
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "image contains a non-finite value at flat index {pos}"
            )));
        }
        Ok(Self { data })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        Self::new(Array2::from_shape_fn((height, width), |(i, j)| f(i, j)))
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }
}

/// `K` feature channels sharing one pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    maps: Array3<f64>,
}

impl FeatureStack {
    pub fn new(maps: Array3<f64>) -> Result<Self> {
        if maps.len_of(Axis(0)) == 0 {
            return Err(Error::validation("feature stack needs at least one channel"));
        }
        Ok(Self { maps })
    }

    pub fn from_channels(channels: &[Array2<f64>]) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::validation("feature stack needs at least one channel"))?;
        let (h, w) = first.dim();
        let mut maps = Array3::zeros((channels.len(), h, w));
        for (k, ch) in channels.iter().enumerate() {
            if ch.dim() != (h, w) {
                return Err(Error::shape(format!(
                    "channel {k} is {:?}, expected {:?}",
                    ch.dim(),
                    (h, w)
                )));
            }
            maps.index_axis_mut(Axis(0), k).assign(ch);
        }
        Ok(Self { maps })
    }

    pub fn channels(&self) -> usize {
        self.maps.len_of(Axis(0))
    }

    pub fn height(&self) -> usize {
        self.maps.len_of(Axis(1))
    }

    pub fn width(&self) -> usize {
        self.maps.len_of(Axis(2))
    }

    /// `(K, H, W)`
    pub fn dim(&self) -> (usize, usize, usize) {
        self.maps.dim()
    }

    pub fn channel(&self, k: usize) -> ArrayView2<'_, f64> {
        self.maps.index_axis(Axis(0), k)
    }

    pub fn maps(&self) -> &Array3<f64> {
        &self.maps
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.maps
    }
}

/// Relaxed labels `u_1..u_K`; admissible when nonnegative with pixelwise sum at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelField {
    u: Array3<f64>,
}

impl SoftLabelField {
    pub fn new(u: Array3<f64>) -> Result<Self> {
        if u.len_of(Axis(0)) == 0 {
            return Err(Error::validation("soft label field needs at least one channel"));
        }
        Ok(Self { u })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            u: Array3::zeros((channels, height, width)),
        }
    }

    pub fn channels(&self) -> usize {
        self.u.len_of(Axis(0))
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.u.dim()
    }

    pub fn channel(&self, k: usize) -> ArrayView2<'_, f64> {
        self.u.index_axis(Axis(0), k)
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.u
    }

    pub(crate) fn values_mut(&mut self) -> &mut Array3<f64> {
        &mut self.u
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.u
    }
}

/// TV dual variables: x- and y-components per channel and pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DualField {
    pub px: Array3<f64>,
    pub py: Array3<f64>,
}

impl DualField {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            px: Array3::zeros((channels, height, width)),
            py: Array3::zeros((channels, height, width)),
        }
    }

    /// Largest pointwise Euclidean norm over all channels.
    pub fn max_norm(&self) -> f64 {
        self.px
            .iter()
            .zip(self.py.iter())
            .map(|(x, y)| x.hypot(*y))
            .fold(0.0, f64::max)
    }
}

/// Inside means `a_k` and outside means `b_k` of the data term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionConstants {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl RegionConstants {
    pub fn channels(&self) -> usize {
        self.a.len()
    }
}

/// Hard partition into `classes` labels, `0` being the residual background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    labels: Array2<u8>,
    classes: usize,
}

impl LabelMap {
    pub fn new(labels: Array2<u8>, classes: usize) -> Result<Self> {
        if classes == 0 || classes > 256 {
            return Err(Error::validation(format!(
                "class count must be in 1..=256, got {classes}"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::validation(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Self { labels, classes })
    }

    /// Class count taken as one past the largest label present.
    pub fn from_labels(labels: Array2<u8>) -> Self {
        let classes = labels.iter().copied().max().unwrap_or(0) as usize + 1;
        Self { labels, classes }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> (usize, usize) {
        self.labels.dim()
    }

    pub fn labels(&self) -> &Array2<u8> {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[[row, col]]
    }
}

fn default_lambda() -> f64 {
    0.2
}
fn default_max_outer_iterations() -> usize {
    3000
}
fn default_tolerance() -> f64 {
    1e-5
}
fn default_step() -> f64 {
    1.0 / 8f64.sqrt()
}
fn default_extrapolation() -> f64 {
    1.0
}
fn default_constant_update_period() -> usize {
    1
}

/// Parameters of the primal-dual segmentation loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_max_outer_iterations")]
    pub max_outer_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_step")]
    pub step_primal: f64,
    #[serde(default = "default_step")]
    pub step_dual: f64,
    #[serde(default = "default_extrapolation")]
    pub extrapolation: f64,
    #[serde(default = "default_constant_update_period")]
    pub constant_update_period: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: default_lambda(),
            max_outer_iterations: default_max_outer_iterations(),
            tolerance: default_tolerance(),
            step_primal: default_step(),
            step_dual: default_step(),
            extrapolation: default_extrapolation(),
            constant_update_period: default_constant_update_period(),
        }
    }
}

impl SolverConfig {
    /// Squared operator norm bound of the 2-D forward-difference gradient.
    pub const GRADIENT_NORM_SQ: f64 = 8.0;

    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::validation(format!(
                "lambda must be positive and finite, got {}",
                self.lambda
            )));
        }
        if self.max_outer_iterations == 0 {
            return Err(Error::validation("max iterations must be >= 1"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::validation("tolerance must be >= 0"));
        }
        if !(self.step_primal > 0.0 && self.step_dual > 0.0) {
            return Err(Error::validation("step sizes must be positive"));
        }
        if self.step_primal * self.step_dual * Self::GRADIENT_NORM_SQ > 1.0 + 1e-12 {
            return Err(Error::validation(format!(
                "step sizes violate tau*sigma*8 <= 1 (tau={}, sigma={})",
                self.step_primal, self.step_dual
            )));
        }
        if !(0.0..=1.0).contains(&self.extrapolation) {
            return Err(Error::validation("extrapolation must lie in [0, 1]"));
        }
        if self.constant_update_period == 0 {
            return Err(Error::validation("constant update period must be >= 1"));
        }
        Ok(())
    }
}

/// Rescales every channel affinely onto `[0, 1]`. Constant channels become zero.
pub fn normalize_features(stack: &FeatureStack) -> Result<FeatureStack> {
    let mut maps = stack.maps().clone();
    for (k, mut ch) in maps.outer_iter_mut().enumerate() {
        if ch.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "feature channel {k} contains non-finite values"
            )));
        }
        let (lo, hi) = ch
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let span = hi - lo;
        if span > 0.0 {
            ch.mapv_inplace(|v| (v - lo) / span);
        } else {
            warn!("feature channel {k} is constant; mapping it to zero");
            ch.fill(0.0);
        }
    }
    FeatureStack::new(maps)
}

/// Checks `u_k >= -tol` and `sum_k u_k <= 1 + tol` at every pixel.
pub fn validate_soft_labels(u: &SoftLabelField, tol: f64) -> bool {
    let values = u.values();
    let (_, h, w) = values.dim();
    for i in 0..h {
        for j in 0..w {
            let mut sum = 0.0;
            for k in 0..values.len_of(Axis(0)) {
                let v = values[[k, i, j]];
                if !(v >= -tol) {
                    return false;
                }
                sum += v;
            }
            if !(sum <= 1.0 + tol) {
                return false;
            }
        }
    }
    true
}
