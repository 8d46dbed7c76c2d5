//! Primal-dual minimization of the multichannel segmentation energy.
//!
//! Each outer step refreshes the region constants (every
//! `constant_update_period` steps), which makes the data term linear in `u`,
//! then performs one Chambolle-Pock iteration: dual ascent on the TV term with
//! projection onto the `lambda`-ball, a primal step followed by the pixelwise
//! projection onto `{u >= 0, sum u <= 1}`, and over-relaxation.

use ndarray::{Array3, Axis};
use serde::Serialize;

use crate::energy::{data_term, divergence_into, gradient_into, optimal_constants, total_variation};
use crate::error::{Error, Result};
use crate::model::{DualField, FeatureStack, RegionConstants, SoftLabelField, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverTrace {
    /// Energy of the iterate at every constant update.
    pub energies: Vec<f64>,
    /// `||u_new - u_old|| / max(1e-12, ||u_old||)` per iteration.
    pub primal_changes: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub labels: SoftLabelField,
    pub constants: RegionConstants,
    pub trace: SolverTrace,
}

/// Snapshot handed to an observer after every completed iteration.
pub struct IterationState<'a> {
    pub iteration: usize,
    pub u: &'a SoftLabelField,
    pub dual: &'a DualField,
    pub constants: &'a RegionConstants,
    pub relative_change: f64,
}

/// Projects `v` onto the standard simplex `{w >= 0, sum w = 1}` in place
/// (sort, find the threshold, shift and clamp).
pub fn project_simplex(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &mu) in sorted.iter().enumerate() {
        cumsum += mu;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if mu - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Euclidean projection onto the capped simplex `{w >= 0, sum w <= 1}`.
pub fn project_admissible_pixel(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    project_admissible_in_place(&mut out);
    out
}

pub(crate) fn project_admissible_in_place(v: &mut [f64]) {
    let clamped_sum: f64 = v.iter().map(|x| x.max(0.0)).sum();
    if clamped_sum <= 1.0 {
        for x in v.iter_mut() {
            *x = x.max(0.0);
        }
    } else {
        project_simplex(v);
    }
}

/// Radial projection onto the disc of radius `lambda`. The result satisfies
/// `hypot(q) <= lambda` exactly in floating point.
pub fn project_dual_pixel(p: [f64; 2], lambda: f64) -> [f64; 2] {
    let norm = p[0].hypot(p[1]);
    if norm <= lambda {
        return p;
    }
    let s = lambda / norm;
    let mut q = [p[0] * s, p[1] * s];
    // rounding can leave q a few ulps outside the disc
    while q[0].hypot(q[1]) > lambda {
        q = [q[0] * (1.0 - f64::EPSILON), q[1] * (1.0 - f64::EPSILON)];
    }
    q
}

/// `rho_k = (a_k - phi_k)^2 - (b_k - phi_k)^2`, the derivative of the data term in `u_k`.
pub fn residual_weights(c: &RegionConstants, phi: &FeatureStack) -> Result<Array3<f64>> {
    if c.channels() != phi.channels() || c.b.len() != c.a.len() {
        return Err(Error::shape(format!(
            "{} region constants for {} feature channels",
            c.channels(),
            phi.channels()
        )));
    }
    let mut rho = phi.maps().clone();
    for (k, mut ch) in rho.outer_iter_mut().enumerate() {
        let (a, b) = (c.a[k], c.b[k]);
        ch.mapv_inplace(|f| (a - f).powi(2) - (b - f).powi(2));
    }
    Ok(rho)
}

/// Feature-proportional start: `u_k = phi_k / max(1, sum_j phi_j)`.
pub fn default_initialization(phi: &FeatureStack) -> SoftLabelField {
    let mut u = phi.maps().mapv(|v| v.max(0.0));
    let sums = u.sum_axis(Axis(0)).mapv(|s| s.max(1.0));
    for mut ch in u.outer_iter_mut() {
        ch /= &sums;
    }
    SoftLabelField::new(u).expect("feature stack has at least one channel")
}

pub fn primal_dual_segment(
    phi: &FeatureStack,
    config: &SolverConfig,
    u0: Option<&SoftLabelField>,
) -> Result<Segmentation> {
    primal_dual_segment_observed(phi, config, u0, |_| {})
}

/// Same as [`primal_dual_segment`], calling `observer` after every iteration.
pub fn primal_dual_segment_observed(
    phi: &FeatureStack,
    config: &SolverConfig,
    u0: Option<&SoftLabelField>,
    mut observer: impl FnMut(&IterationState<'_>),
) -> Result<Segmentation> {
    config.validate()?;
    if let Some(pos) = phi.maps().iter().position(|v| !v.is_finite()) {
        return Err(Error::validation(format!(
            "feature stack has a non-finite value at flat index {pos}"
        )));
    }
    let (k, h, w) = phi.dim();
    let hw = h * w;

    let mut u = match u0 {
        Some(init) => {
            if init.dim() != phi.dim() {
                return Err(Error::shape(format!(
                    "initial labels {:?} vs features {:?}",
                    init.dim(),
                    phi.dim()
                )));
            }
            init.clone()
        }
        None => default_initialization(phi),
    };
    {
        let values = u.values_mut();
        let mut pixel = vec![0.0; k];
        project_field(values.as_slice_mut().expect("standard layout"), k, hw, &mut pixel);
    }

    let mut dual = DualField::zeros(k, h, w);
    let mut ubar = u.values().clone();
    let mut u_old = u.values().clone();
    let mut grad_x = vec![0.0; hw];
    let mut grad_y = vec![0.0; hw];
    let mut div = vec![0.0; hw];
    let mut pixel = vec![0.0; k];

    let (tau, sigma, theta, lambda) = (
        config.step_primal,
        config.step_dual,
        config.extrapolation,
        config.lambda,
    );

    let mut constants = optimal_constants(&u, phi)?;
    let mut rho = residual_weights(&constants, phi)?;
    let mut trace = SolverTrace {
        energies: Vec::new(),
        primal_changes: Vec::new(),
        iterations_run: 0,
        converged: false,
    };

    for n in 0..config.max_outer_iterations {
        if n % config.constant_update_period == 0 {
            constants = optimal_constants(&u, phi)?;
            rho = residual_weights(&constants, phi)?;
            let tv: f64 = u.values().axis_iter(Axis(0)).map(total_variation).sum();
            let e = lambda * tv + data_term(&u, &constants, phi)?;
            if !e.is_finite() {
                return Err(Error::Numerical(format!(
                    "energy became non-finite at iteration {n}"
                )));
            }
            trace.energies.push(e);
        }

        // dual ascent
        {
            let ubar_s = ubar.as_slice().expect("standard layout");
            let px = dual.px.as_slice_mut().expect("standard layout");
            let py = dual.py.as_slice_mut().expect("standard layout");
            for c in 0..k {
                let range = c * hw..(c + 1) * hw;
                gradient_into(&ubar_s[range.clone()], h, w, &mut grad_x, &mut grad_y);
                let (pxc, pyc) = (&mut px[range.clone()], &mut py[range]);
                for idx in 0..hw {
                    let q = project_dual_pixel(
                        [pxc[idx] + sigma * grad_x[idx], pyc[idx] + sigma * grad_y[idx]],
                        lambda,
                    );
                    pxc[idx] = q[0];
                    pyc[idx] = q[1];
                }
            }
        }

        // primal descent with joint projection
        u_old.assign(u.values());
        {
            let px = dual.px.as_slice().expect("standard layout");
            let py = dual.py.as_slice().expect("standard layout");
            let rho_s = rho.as_slice().expect("standard layout");
            let us = u.values_mut().as_slice_mut().expect("standard layout");
            for c in 0..k {
                let range = c * hw..(c + 1) * hw;
                divergence_into(&px[range.clone()], &py[range.clone()], h, w, &mut div);
                let (uc, rc) = (&mut us[range.clone()], &rho_s[range]);
                for idx in 0..hw {
                    uc[idx] += tau * (div[idx] - rc[idx]);
                }
            }
            project_field(us, k, hw, &mut pixel);
        }

        // over-relaxation and convergence measure
        let (mut diff_sq, mut old_sq) = (0.0, 0.0);
        {
            let us = u.values().as_slice().expect("standard layout");
            let olds = u_old.as_slice().expect("standard layout");
            let bars = ubar.as_slice_mut().expect("standard layout");
            for idx in 0..us.len() {
                let d = us[idx] - olds[idx];
                diff_sq += d * d;
                old_sq += olds[idx] * olds[idx];
                bars[idx] = us[idx] + theta * d;
            }
        }
        if !diff_sq.is_finite() {
            return Err(Error::Numerical(format!(
                "primal iterate became non-finite at iteration {n}"
            )));
        }
        let change = diff_sq.sqrt() / old_sq.sqrt().max(1e-12);
        trace.primal_changes.push(change);
        trace.iterations_run = n + 1;

        observer(&IterationState {
            iteration: n,
            u: &u,
            dual: &dual,
            constants: &constants,
            relative_change: change,
        });

        if change < config.tolerance {
            trace.converged = true;
            break;
        }
    }

    let constants = optimal_constants(&u, phi)?;
    Ok(Segmentation {
        labels: u,
        constants,
        trace,
    })
}

fn project_field(values: &mut [f64], k: usize, hw: usize, pixel: &mut [f64]) {
    for idx in 0..hw {
        for c in 0..k {
            pixel[c] = values[c * hw + idx];
        }
        project_admissible_in_place(pixel);
        for c in 0..k {
            values[c * hw + idx] = pixel[c];
        }
    }
}
