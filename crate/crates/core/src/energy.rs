//! Discrete segmentation energy: forward-difference gradient and its adjoint,
//! isotropic total variation, the two-constant data term and its closed-form
//! constants.
//!
//! Integrals are plain pixel sums. The gradient uses forward differences with
//! a Neumann boundary (last column/row difference is zero), so that
//! `<grad u, p> = -<u, div p>` holds exactly and `||grad||^2 <= 8`.

use ndarray::{Array2, ArrayView2, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{validate_soft_labels, FeatureStack, RegionConstants, SoftLabelField};

/// Admissibility slack used when deciding whether the energy is finite.
pub const ADMISSIBLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    /// `lambda * tv + data`, or `+inf` (serialized as `null`) when `u` is not admissible.
    pub total: f64,
    pub admissible: bool,
    pub data: f64,
    pub tv: f64,
    pub per_channel_tv: Vec<f64>,
    pub constants: RegionConstants,
}

pub(crate) fn gradient_into(u: &[f64], h: usize, w: usize, gx: &mut [f64], gy: &mut [f64]) {
    for i in 0..h {
        let row = i * w;
        for j in 0..w {
            let idx = row + j;
            gx[idx] = if j + 1 < w { u[idx + 1] - u[idx] } else { 0.0 };
            gy[idx] = if i + 1 < h { u[idx + w] - u[idx] } else { 0.0 };
        }
    }
}

pub(crate) fn divergence_into(px: &[f64], py: &[f64], h: usize, w: usize, out: &mut [f64]) {
    for i in 0..h {
        let row = i * w;
        for j in 0..w {
            let idx = row + j;
            let dx = if w == 1 {
                0.0
            } else if j == 0 {
                px[idx]
            } else if j + 1 == w {
                -px[idx - 1]
            } else {
                px[idx] - px[idx - 1]
            };
            let dy = if h == 1 {
                0.0
            } else if i == 0 {
                py[idx]
            } else if i + 1 == h {
                -py[idx - w]
            } else {
                py[idx] - py[idx - w]
            };
            out[idx] = dx + dy;
        }
    }
}

fn tv_slice(u: &[f64], h: usize, w: usize) -> f64 {
    let mut sum = 0.0;
    for i in 0..h {
        for j in 0..w {
            let idx = i * w + j;
            let gx = if j + 1 < w { u[idx + 1] - u[idx] } else { 0.0 };
            let gy = if i + 1 < h { u[idx + w] - u[idx] } else { 0.0 };
            sum += gx.hypot(gy);
        }
    }
    sum
}

/// Forward differences `(gx, gy)` with zero in the last column/row.
pub fn discrete_gradient(field: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = field.dim();
    let u = field.as_standard_layout();
    let mut gx = Array2::zeros((h, w));
    let mut gy = Array2::zeros((h, w));
    gradient_into(
        u.as_slice().expect("standard layout"),
        h,
        w,
        gx.as_slice_mut().expect("fresh array"),
        gy.as_slice_mut().expect("fresh array"),
    );
    (gx, gy)
}

/// Backward-difference divergence, the negative adjoint of [`discrete_gradient`].
pub fn divergence(px: ArrayView2<'_, f64>, py: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if px.dim() != py.dim() {
        return Err(Error::shape(format!(
            "dual components differ in shape: {:?} vs {:?}",
            px.dim(),
            py.dim()
        )));
    }
    let (h, w) = px.dim();
    let px = px.as_standard_layout();
    let py = py.as_standard_layout();
    let mut out = Array2::zeros((h, w));
    divergence_into(
        px.as_slice().expect("standard layout"),
        py.as_slice().expect("standard layout"),
        h,
        w,
        out.as_slice_mut().expect("fresh array"),
    );
    Ok(out)
}

/// Isotropic TV: sum over pixels of `sqrt(gx^2 + gy^2)`.
pub fn total_variation(field: ArrayView2<'_, f64>) -> f64 {
    let (h, w) = field.dim();
    let u = field.as_standard_layout();
    tv_slice(u.as_slice().expect("standard layout"), h, w)
}

fn check_shapes(u: &SoftLabelField, phi: &FeatureStack) -> Result<()> {
    if u.dim() != phi.dim() {
        return Err(Error::shape(format!(
            "labels {:?} vs features {:?}",
            u.dim(),
            phi.dim()
        )));
    }
    Ok(())
}

/// Weighted means of each feature over `u_k` and over `1 - u_k`.
///
/// A vanishing weight yields the constant `0`; any value would minimize the
/// data term in that case.
pub fn optimal_constants(u: &SoftLabelField, phi: &FeatureStack) -> Result<RegionConstants> {
    check_shapes(u, phi)?;
    let k = u.channels();
    let mut a = Vec::with_capacity(k);
    let mut b = Vec::with_capacity(k);
    for (uk, fk) in u.values().outer_iter().zip(phi.maps().outer_iter()) {
        let (mut su, mut sfu, mut sc, mut sfc) = (0.0, 0.0, 0.0, 0.0);
        for (&uv, &fv) in uk.iter().zip(fk.iter()) {
            su += uv;
            sfu += fv * uv;
            sc += 1.0 - uv;
            sfc += fv * (1.0 - uv);
        }
        a.push(if su > 0.0 { sfu / su } else { 0.0 });
        b.push(if sc > 0.0 { sfc / sc } else { 0.0 });
    }
    Ok(RegionConstants { a, b })
}

/// `sum_k sum_x (a_k - phi_k)^2 u_k + (b_k - phi_k)^2 (1 - u_k)`.
pub fn data_term(u: &SoftLabelField, c: &RegionConstants, phi: &FeatureStack) -> Result<f64> {
    check_shapes(u, phi)?;
    if c.channels() != u.channels() || c.b.len() != c.a.len() {
        return Err(Error::shape(format!(
            "{} region constants for {} channels",
            c.channels(),
            u.channels()
        )));
    }
    let mut sum = 0.0;
    for (k, (uk, fk)) in u.values().outer_iter().zip(phi.maps().outer_iter()).enumerate() {
        let (a, b) = (c.a[k], c.b[k]);
        for (&uv, &fv) in uk.iter().zip(fk.iter()) {
            sum += (a - fv).powi(2) * uv + (b - fv).powi(2) * (1.0 - uv);
        }
    }
    Ok(sum)
}

/// Segmentation energy with optimal region constants.
pub fn energy(u: &SoftLabelField, phi: &FeatureStack, lambda: f64) -> Result<EnergyBreakdown> {
    let constants = optimal_constants(u, phi)?;
    let data = data_term(u, &constants, phi)?;
    let per_channel_tv: Vec<f64> = u
        .values()
        .axis_iter(Axis(0))
        .map(total_variation)
        .collect();
    let tv: f64 = per_channel_tv.iter().sum();
    let admissible = validate_soft_labels(u, ADMISSIBLE_TOL);
    let total = if admissible {
        lambda * tv + data
    } else {
        f64::INFINITY
    };
    Ok(EnergyBreakdown {
        total,
        admissible,
        data,
        tv,
        per_channel_tv,
        constants,
    })
}
