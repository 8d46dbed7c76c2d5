//! 3x3 same-size convolution with zero padding, as im2col + GEMM.
//!
//! Tensors are flat `channels x height x width` slices. The column matrix has
//! `in_channels * 9` rows (ordered channel, kernel row, kernel column) and
//! one column per pixel, so weights stored out-major/in/row/column form the
//! left GEMM operand directly.

pub(crate) const TAPS: usize = 9;

/// Fills `cols` (len `cin * 9 * h * w`) from `input` (len `cin * h * w`).
pub(crate) fn im2col(input: &[f64], cin: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    debug_assert_eq!(input.len(), cin * hw);
    debug_assert_eq!(cols.len(), cin * TAPS * hw);
    for c in 0..cin {
        let plane = &input[c * hw..(c + 1) * hw];
        for a in 0..3 {
            for b in 0..3 {
                let row = &mut cols[((c * TAPS) + a * 3 + b) * hw..((c * TAPS) + a * 3 + b + 1) * hw];
                for i in 0..h {
                    let si = i as isize + a as isize - 1;
                    let dst = &mut row[i * w..(i + 1) * w];
                    if si < 0 || si >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[si as usize * w..(si as usize + 1) * w];
                    for j in 0..w {
                        let sj = j as isize + b as isize - 1;
                        dst[j] = if sj < 0 || sj >= w as isize {
                            0.0
                        } else {
                            src[sj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back onto an image-shaped gradient (adjoint of [`im2col`]).
pub(crate) fn col2im(cols: &[f64], cin: usize, h: usize, w: usize, out: &mut [f64]) {
    let hw = h * w;
    out.fill(0.0);
    for c in 0..cin {
        let plane = &mut out[c * hw..(c + 1) * hw];
        for a in 0..3 {
            for b in 0..3 {
                let row = &cols[((c * TAPS) + a * 3 + b) * hw..((c * TAPS) + a * 3 + b + 1) * hw];
                for i in 0..h {
                    let si = i as isize + a as isize - 1;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[si as usize * w..(si as usize + 1) * w];
                    let src = &row[i * w..(i + 1) * w];
                    for j in 0..w {
                        let sj = j as isize + b as isize - 1;
                        if sj >= 0 && sj < w as isize {
                            dst[sj as usize] += src[j];
                        }
                    }
                }
            }
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the strides describe in-bounds m x k, k x n and m x n views of
    // the given slices (checked above), and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out = weights * cols + bias`, `out` is `cout x hw`.
pub(crate) fn forward(weights: &[f64], bias: &[f64], cols: &[f64], cout: usize, kdim: usize, hw: usize, out: &mut [f64]) {
    for (o, row) in out.chunks_exact_mut(hw).enumerate() {
        row.fill(bias[o]);
    }
    gemm(cout, kdim, hw, weights, (kdim, 1), cols, (hw, 1), 1.0, out);
}

/// Weight and bias gradients from the output gradient `dout` (`cout x hw`).
pub(crate) fn backward_params(
    dout: &[f64],
    cols: &[f64],
    cout: usize,
    kdim: usize,
    hw: usize,
    dweights: &mut [f64],
    dbias: &mut [f64],
) {
    gemm(cout, hw, kdim, dout, (hw, 1), cols, (1, hw), 0.0, dweights);
    for (o, row) in dout.chunks_exact(hw).enumerate() {
        dbias[o] = row.iter().sum();
    }
}

/// Column-matrix gradient `weights^T * dout`, `dcols` is `kdim x hw`.
pub(crate) fn backward_cols(weights: &[f64], dout: &[f64], cout: usize, kdim: usize, hw: usize, dcols: &mut [f64]) {
    gemm(kdim, cout, hw, weights, (1, kdim), dout, (hw, 1), 0.0, dcols);
}
