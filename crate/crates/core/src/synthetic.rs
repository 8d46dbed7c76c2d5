//! Synthetic inputs with known ground truth.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::model::{FeatureStack, ImageGrid, LabelMap};

/// `0.5 + 0.5 cos(2 pi omega x')` with `x' = j cos(theta) + i sin(theta)`.
pub fn grating_value(i: usize, j: usize, omega: f64, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    0.5 + 0.5 * (2.0 * PI * omega * (j as f64 * c + i as f64 * s)).cos()
}

pub fn grating(height: usize, width: usize, omega: f64, theta: f64) -> Result<ImageGrid> {
    ImageGrid::from_fn(height, width, |i, j| grating_value(i, j, omega, theta))
}

/// Left half grating at `omega_left`, right half at `omega_right`, both vertical stripes.
pub fn two_texture_composite(size: usize, omega_left: f64, omega_right: f64) -> Result<ImageGrid> {
    ImageGrid::from_fn(size, size, |i, j| {
        let omega = if j < size / 2 { omega_left } else { omega_right };
        grating_value(i, j, omega, 0.0)
    })
}

/// Three gratings: fine on the left half, medium top-right, coarse bottom-right.
/// Returns the image and its region labels `1..=3`.
pub fn three_texture_montage(size: usize) -> Result<(ImageGrid, LabelMap)> {
    let s = 2f64.sqrt();
    let omegas = [s / 4.0, s / 8.0, s / 16.0];
    let region = |i: usize, j: usize| -> usize {
        if j < size / 2 {
            0
        } else if i < size / 2 {
            1
        } else {
            2
        }
    };
    let img = ImageGrid::from_fn(size, size, |i, j| grating_value(i, j, omegas[region(i, j)], 0.0))?;
    let labels = Array2::from_shape_fn((size, size), |(i, j)| region(i, j) as u8 + 1);
    Ok((img, LabelMap::new(labels, 4)?))
}

/// Partition of a square into a disc, a wavy right band and the remainder,
/// labeled `1..=3`.
pub fn three_region_labels(size: usize) -> LabelMap {
    let n = size as f64;
    let (ci, cj, r) = (0.32 * n, 0.3 * n, 0.19 * n);
    let labels = Array2::from_shape_fn((size, size), |(i, j)| {
        let (y, x) = (i as f64, j as f64);
        if (y - ci).powi(2) + (x - cj).powi(2) <= r * r {
            1
        } else if x > 0.58 * n + 0.08 * n * (2.0 * PI * y / n).sin() {
            2
        } else {
            3
        }
    });
    LabelMap::new(labels, 4).expect("labels below 4")
}

/// One indicator channel per region `1..=K`, plus Gaussian noise of the given std.
pub fn indicator_features(labels: &LabelMap, channels: usize, noise_std: f64, seed: u64) -> Result<FeatureStack> {
    let (h, w) = labels.dim();
    let mut maps = Array3::from_shape_fn((channels, h, w), |(k, i, j)| {
        if labels.get(i, j) as usize == k + 1 {
            1.0
        } else {
            0.0
        }
    });
    if noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_std).expect("positive std");
        maps.mapv_inplace(|v| v + normal.sample(&mut rng));
    }
    FeatureStack::new(maps)
}

/// Piecewise-constant image taking value `levels[l]` on label `l`.
pub fn piecewise_image(labels: &LabelMap, levels: &[f64]) -> Result<ImageGrid> {
    let (h, w) = labels.dim();
    ImageGrid::from_fn(h, w, |i, j| levels[labels.get(i, j) as usize % levels.len()])
}
