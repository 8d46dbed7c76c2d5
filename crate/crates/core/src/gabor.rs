//! Texture lifting by sums of Gabor magnitude responses.
//!
//! Each filter is a quadrature pair: an even (cosine) kernel with its DC
//! component removed and an odd (sine) kernel. The response of a filter is
//! the pointwise magnitude of the two correlations, computed with symmetric
//! mirror boundary extension. One feature channel is the sum of the
//! responses of its filter group; the stack is then normalized to `[0, 1]`.
//!
//! For an isotropic envelope (`gamma == 1`) the complex kernel factors into a
//! row and a column filter, which is what [`gabor_response`] uses; anisotropic
//! filters fall back to [`gabor_response_direct`].

use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{normalize_features, FeatureStack, ImageGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaborParam {
    /// Orientation in radians.
    pub theta: f64,
    /// Spatial frequency in cycles per pixel.
    pub omega: f64,
    /// Envelope standard deviation in pixels; `1 / (2 omega)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Envelope aspect ratio; `1` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl GaborParam {
    pub fn new(theta: f64, omega: f64) -> Self {
        Self {
            theta,
            omega,
            sigma: None,
            gamma: None,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(1.0 / (2.0 * self.omega))
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(1.0)
    }

    /// Half-width `ceil(3 sigma)` of the square kernel.
    pub fn radius(&self) -> usize {
        (3.0 * self.sigma()).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::validation(format!("omega must be > 0, got {}", self.omega)));
        }
        if !self.theta.is_finite() {
            return Err(Error::validation("theta must be finite"));
        }
        let sigma = self.sigma();
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::validation(format!("sigma must be > 0, got {sigma}")));
        }
        if !(self.gamma() > 0.0 && self.gamma().is_finite()) {
            return Err(Error::validation(format!("gamma must be > 0, got {}", self.gamma())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaborSpec {
    pub groups: Vec<Vec<GaborParam>>,
}

impl GaborSpec {
    /// Three channels tuned to fine, medium and coarse textures.
    pub fn three_texture() -> Self {
        let s = 2f64.sqrt();
        let q = PI / 4.0;
        Self {
            groups: vec![
                vec![GaborParam::new(0.0, s / 4.0), GaborParam::new(q, s / 2.0)],
                vec![GaborParam::new(0.0, s / 8.0)],
                vec![
                    GaborParam::new(0.0, s / 32.0),
                    GaborParam::new(0.0, s / 16.0),
                    GaborParam::new(q, s / 64.0),
                    GaborParam::new(q, s / 32.0),
                ],
            ],
        }
    }

    pub fn channels(&self) -> usize {
        self.groups.len()
    }

    /// Largest kernel side over all filters.
    pub fn max_kernel_side(&self) -> usize {
        self.groups
            .iter()
            .flatten()
            .map(|p| 2 * p.radius() + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::validation("Gabor spec needs at least one group"));
        }
        let mut index = 0;
        for (g, group) in self.groups.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::validation(format!("Gabor group {g} is empty")));
            }
            for (i, p) in group.iter().enumerate() {
                p.validate().map_err(|e| {
                    let detail = match e {
                        Error::Validation(m) => m,
                        other => other.to_string(),
                    };
                    Error::validation(format!("filter {index} (group {g}, entry {i}): {detail}"))
                })?;
                index += 1;
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)
            .map_err(|e| Error::validation(format!("malformed Gabor spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Even/odd quadrature pair on a `(2r+1) x (2r+1)` grid indexed `[r + y, r + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaborKernel {
    pub even: Array2<f64>,
    pub odd: Array2<f64>,
    pub radius: usize,
}

fn envelope_and_phase(p: &GaborParam, x: f64, y: f64) -> (f64, f64) {
    let (s, c) = p.theta.sin_cos();
    let xr = x * c + y * s;
    let yr = -x * s + y * c;
    let sigma = p.sigma();
    let gamma = p.gamma();
    let env = (-(xr * xr + gamma * gamma * yr * yr) / (2.0 * sigma * sigma)).exp();
    (env, 2.0 * PI * p.omega * xr)
}

pub fn gabor_kernel(p: &GaborParam) -> Result<GaborKernel> {
    p.validate()?;
    let r = p.radius();
    let side = 2 * r + 1;
    let mut even = Array2::zeros((side, side));
    let mut odd = Array2::zeros((side, side));
    for a in 0..side {
        for b in 0..side {
            let (env, phase) = envelope_and_phase(p, b as f64 - r as f64, a as f64 - r as f64);
            even[[a, b]] = env * phase.cos();
            odd[[a, b]] = env * phase.sin();
        }
    }
    let mean = even.sum() / (side * side) as f64;
    even.mapv_inplace(|v| v - mean);
    Ok(GaborKernel {
        even,
        odd,
        radius: r,
    })
}

#[inline]
fn mirror(idx: isize, n: usize) -> usize {
    let n = n as isize;
    let m = if idx < 0 {
        -idx - 1
    } else if idx >= n {
        2 * n - idx - 1
    } else {
        idx
    };
    m as usize
}

fn check_fits(f: &ImageGrid, p: &GaborParam) -> Result<usize> {
    p.validate()?;
    let r = p.radius();
    let side = 2 * r + 1;
    let (h, w) = f.dim();
    if side > h || side > w {
        return Err(Error::validation(format!(
            "Gabor kernel of side {side} (omega={}, sigma={:.3}) exceeds the {h}x{w} image; use a smaller sigma or a larger image",
            p.omega,
            p.sigma()
        )));
    }
    Ok(r)
}

/// Mirror-padded copy of `f` with `r` extra pixels on every side.
fn pad_symmetric(f: &Array2<f64>, r: usize) -> Array2<f64> {
    let (h, w) = f.dim();
    Array2::from_shape_fn((h + 2 * r, w + 2 * r), |(i, j)| {
        f[[
            mirror(i as isize - r as isize, h),
            mirror(j as isize - r as isize, w),
        ]]
    })
}

/// Magnitude response by direct 2-D correlation with both kernels.
pub fn gabor_response_direct(f: &ImageGrid, p: &GaborParam) -> Result<ImageGrid> {
    let r = check_fits(f, p)?;
    let kernel = gabor_kernel(p)?;
    let (h, w) = f.dim();
    let side = 2 * r + 1;
    let padded = pad_symmetric(f.data(), r);
    let out = Array2::from_shape_fn((h, w), |(i, j)| {
        let (mut even, mut odd) = (0.0, 0.0);
        for a in 0..side {
            for b in 0..side {
                let v = padded[[i + a, j + b]];
                even += v * kernel.even[[a, b]];
                odd += v * kernel.odd[[a, b]];
            }
        }
        even.hypot(odd)
    });
    ImageGrid::new(out)
}

/// Correlates every row of `src` with the complex taps `(re, im)`, producing
/// `src.ncols() - 2r` output columns.
fn correlate_rows(src: &Array2<f64>, re: &[f64], im: &[f64]) -> (Array2<f64>, Array2<f64>) {
    let (rows, cols) = src.dim();
    let side = re.len();
    let out_cols = cols + 1 - side;
    let mut out_re = Array2::zeros((rows, out_cols));
    let mut out_im = Array2::zeros((rows, out_cols));
    for i in 0..rows {
        let row = src.row(i);
        for j in 0..out_cols {
            let (mut sr, mut si) = (0.0, 0.0);
            for t in 0..side {
                let v = row[j + t];
                sr += v * re[t];
                si += v * im[t];
            }
            out_re[[i, j]] = sr;
            out_im[[i, j]] = si;
        }
    }
    (out_re, out_im)
}

/// Magnitude response using the separable complex factorization (requires `gamma == 1`).
fn gabor_response_separable(f: &ImageGrid, p: &GaborParam, r: usize) -> Result<ImageGrid> {
    let (h, w) = f.dim();
    let side = 2 * r + 1;
    let sigma = p.sigma();
    let (s, c) = p.theta.sin_cos();
    let k = 2.0 * PI * p.omega;
    let taps = |freq: f64| -> (Vec<f64>, Vec<f64>) {
        (0..side)
            .map(|t| {
                let x = t as f64 - r as f64;
                let env = (-(x * x) / (2.0 * sigma * sigma)).exp();
                (env * (freq * x).cos(), env * (freq * x).sin())
            })
            .unzip()
    };
    let (hx_re, hx_im) = taps(k * c);
    let (hy_re, hy_im) = taps(k * s);

    // DC of the even kernel, matching gabor_kernel's subtraction.
    let mut even_sum = 0.0;
    for a in 0..side {
        for b in 0..side {
            even_sum += hy_re[a] * hx_re[b] - hy_im[a] * hx_im[b];
        }
    }
    let mean = even_sum / (side * side) as f64;

    let padded = pad_symmetric(f.data(), r);
    let (t_re, t_im) = correlate_rows(&padded, &hx_re, &hx_im);
    let ones = vec![1.0; side];
    let zeros = vec![0.0; side];
    let (box_rows, _) = correlate_rows(&padded, &ones, &zeros);

    let out = Array2::from_shape_fn((h, w), |(i, j)| {
        let (mut re, mut im, mut boxsum) = (0.0, 0.0, 0.0);
        for a in 0..side {
            let (tr, ti) = (t_re[[i + a, j]], t_im[[i + a, j]]);
            re += tr * hy_re[a] - ti * hy_im[a];
            im += tr * hy_im[a] + ti * hy_re[a];
            boxsum += box_rows[[i + a, j]];
        }
        (re - mean * boxsum).hypot(im)
    });
    ImageGrid::new(out)
}

/// `sqrt((f * g_even)^2 + (f * g_odd)^2)` with mirror boundary extension.
pub fn gabor_response(f: &ImageGrid, p: &GaborParam) -> Result<ImageGrid> {
    let r = check_fits(f, p)?;
    if p.gamma() == 1.0 {
        gabor_response_separable(f, p, r)
    } else {
        gabor_response_direct(f, p)
    }
}

/// Unnormalized channel sums of the group responses.
pub fn gabor_channels(f: &ImageGrid, spec: &GaborSpec) -> Result<FeatureStack> {
    spec.validate()?;
    let mut channels = Vec::with_capacity(spec.channels());
    for group in &spec.groups {
        let mut acc = Array2::<f64>::zeros(f.dim());
        for p in group {
            acc += gabor_response(f, p)?.data();
        }
        channels.push(acc);
    }
    FeatureStack::from_channels(&channels)
}

/// Gabor feature stack, normalized to `[0, 1]` per channel.
pub fn lift_gabor(f: &ImageGrid, spec: &GaborSpec) -> Result<FeatureStack> {
    normalize_features(&gabor_channels(f, spec)?)
}
