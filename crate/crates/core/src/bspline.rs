//! Clamped B-spline bases and the 1D least-squares machinery behind
//! separable tensor-product fitting.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Highest supported polynomial degree. Keeps the evaluation scratch space on
/// the stack.
pub const MAX_DEGREE: usize = 7;
const MAX_ORDER: usize = MAX_DEGREE + 1;

/// Uniform clamped knot vector with `ncp + degree + 1` entries in `[0, 1]`.
pub fn clamped_uniform_knots(ncp: usize, degree: usize) -> Vec<f64> {
    debug_assert!(ncp > degree);
    let interior = ncp - degree;
    let mut knots = Vec::with_capacity(ncp + degree + 1);
    knots.extend(core::iter::repeat_n(0.0, degree + 1));
    for j in 1..interior {
        knots.push(j as f64 / interior as f64);
    }
    knots.extend(core::iter::repeat_n(1.0, degree + 1));
    knots
}

/// Checks that `knots` is a valid clamped vector for `ncp` control points.
pub fn validate_clamped(knots: &[f64], ncp: usize, degree: usize) -> Result<()> {
    if knots.len() != ncp + degree + 1 {
        return Err(Error::Format(format!("knot vector has {} entries, expected {}", knots.len(), ncp + degree + 1)));
    }
    if knots.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::Format("knot vector is not non-decreasing".into()));
    }
    let clamped_lo = knots[..=degree].iter().all(|&k| k == 0.0);
    let clamped_hi = knots[ncp..].iter().all(|&k| k == 1.0);
    if !clamped_lo || !clamped_hi {
        return Err(Error::Format("knot vector is not clamped to [0, 1]".into()));
    }
    Ok(())
}

/// Index `s` of the knot span with `knots[s] <= u < knots[s + 1]`, clamped to
/// the valid range `[degree, ncp - 1]`.
#[inline]
pub fn find_span(knots: &[f64], degree: usize, ncp: usize, u: f64) -> usize {
    let n = ncp - 1;
    if u >= knots[n + 1] {
        return n;
    }
    if u <= knots[degree] {
        return degree;
    }
    let mut lo = degree;
    let mut hi = n + 1;
    let mut mid = (lo + hi) / 2;
    while u < knots[mid] || u >= knots[mid + 1] {
        if u < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
        mid = (lo + hi) / 2;
    }
    mid
}

/// The `degree + 1` non-zero basis values at `u`, for basis functions
/// `span - degree ..= span`.
#[inline]
pub fn basis(knots: &[f64], span: usize, u: f64, degree: usize, out: &mut [f64]) {
    let mut left = [0.0; MAX_ORDER];
    let mut right = [0.0; MAX_ORDER];
    out[0] = 1.0;
    for j in 1..=degree {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = out[r] / (right[r + 1] + left[j - r]);
            out[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        out[j] = saved;
    }
}

/// Basis values and first derivatives with respect to `u`.
#[inline]
pub fn basis_with_derivative(
    knots: &[f64],
    span: usize,
    u: f64,
    degree: usize,
    values: &mut [f64],
    derivs: &mut [f64],
) {
    let mut left = [0.0; MAX_ORDER];
    let mut right = [0.0; MAX_ORDER];
    let mut lower = [0.0; MAX_ORDER];
    values[0] = 1.0;
    for j in 1..=degree {
        if j == degree {
            lower[..degree].copy_from_slice(&values[..degree]);
        }
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = values[r] / (right[r + 1] + left[j - r]);
            values[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        values[j] = saved;
    }
    if degree == 0 {
        derivs[0] = 0.0;
        return;
    }
    // N'_{i,p} = p (N_{i,p-1} / (t_{i+p} - t_i) - N_{i+1,p-1} / (t_{i+p+1} - t_{i+1}))
    let p = degree as f64;
    for j in 0..=degree {
        let i = span - degree + j;
        let mut d = 0.0;
        if j >= 1 {
            let den = knots[i + degree] - knots[i];
            if den > 0.0 {
                d += lower[j - 1] / den;
            }
        }
        if j < degree {
            let den = knots[i + degree + 1] - knots[i + 1];
            if den > 0.0 {
                d -= lower[j] / den;
            }
        }
        derivs[j] = p * d;
    }
}

/// Uniform sample parameters `i / (m - 1)`.
pub fn uniform_params(m: usize) -> Vec<f64> {
    (0..m).map(|i| if i + 1 == m { 1.0 } else { i as f64 / (m - 1) as f64 }).collect()
}

/// Dense `params.len() x ncp` collocation matrix, row-major.
pub fn collocation_matrix(knots: &[f64], degree: usize, ncp: usize, params: &[f64]) -> Vec<f64> {
    let mut n = vec![0.0; params.len() * ncp];
    let mut b = [0.0; MAX_ORDER];
    for (row, &u) in params.iter().enumerate() {
        let span = find_span(knots, degree, ncp, u);
        basis(knots, span, u, degree, &mut b);
        for (j, &v) in b[..=degree].iter().enumerate() {
            n[row * ncp + span - degree + j] = v;
        }
    }
    n
}

/// The `ncp x m` operator `(N^T N)^{-1} N^T` mapping `m` samples at `params`
/// to least-squares control points.
pub fn least_squares_operator(knots: &[f64], degree: usize, ncp: usize, params: &[f64]) -> Result<Vec<f64>> {
    let m = params.len();
    if ncp > m {
        return Err(Error::domain("ncp", format!("{ncp} control points for {m} samples")));
    }
    let n = collocation_matrix(knots, degree, ncp, params);
    let mut normal = vec![0.0; ncp * ncp];
    for r in 0..m {
        let row = &n[r * ncp..(r + 1) * ncp];
        for a in 0..ncp {
            if row[a] == 0.0 {
                continue;
            }
            for b in 0..ncp {
                normal[a * ncp + b] += row[a] * row[b];
            }
        }
    }
    // Right-hand side N^T, stored ncp x m.
    let mut rhs = vec![0.0; ncp * m];
    for r in 0..m {
        for a in 0..ncp {
            rhs[a * m + r] = n[r * ncp + a];
        }
    }
    cholesky_solve(&mut normal, ncp, &mut rhs, m)?;
    Ok(rhs)
}

/// Solves `A X = B` in place for symmetric positive definite `A` (`n x n`),
/// `B` is `n x nrhs` row-major and receives `X`.
pub(crate) fn cholesky_solve(a: &mut [f64], n: usize, b: &mut [f64], nrhs: usize) -> Result<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return Err(Error::Numeric(format!("normal equations not positive definite at pivot {j}")));
        }
        let d = libm::sqrt(d);
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for c in 0..nrhs {
        // L y = b
        for i in 0..n {
            let mut s = b[i * nrhs + c];
            for k in 0..i {
                s -= a[i * n + k] * b[k * nrhs + c];
            }
            b[i * nrhs + c] = s / a[i * n + i];
        }
        // L^T x = y
        for i in (0..n).rev() {
            let mut s = b[i * nrhs + c];
            for k in i + 1..n {
                s -= a[k * n + i] * b[k * nrhs + c];
            }
            b[i * nrhs + c] = s / a[i * n + i];
        }
    }
    Ok(())
}

/// Applies a `rows x dims[axis]` matrix along one axis of an x-fastest 3D
/// array, returning the new array and its dims.
pub fn contract_axis(data: &[f64], dims: [usize; 3], axis: usize, mat: &[f64], rows: usize) -> (Vec<f64>, [usize; 3]) {
    let cols = dims[axis];
    debug_assert_eq!(mat.len(), rows * cols);
    let mut out_dims = dims;
    out_dims[axis] = rows;
    let in_stride = [1, dims[0], dims[0] * dims[1]];
    let out_stride = [1, out_dims[0], out_dims[0] * out_dims[1]];
    let mut out = vec![0.0; out_dims[0] * out_dims[1] * out_dims[2]];
    let (a1, a2) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut line = vec![0.0; cols];
    for i2 in 0..dims[a2] {
        for i1 in 0..dims[a1] {
            let base_in = i1 * in_stride[a1] + i2 * in_stride[a2];
            let base_out = i1 * out_stride[a1] + i2 * out_stride[a2];
            for (c, l) in line.iter_mut().enumerate() {
                *l = data[base_in + c * in_stride[axis]];
            }
            for r in 0..rows {
                let m = &mat[r * cols..(r + 1) * cols];
                let s: f64 = m.iter().zip(&line).map(|(x, y)| x * y).sum();
                out[base_out + r * out_stride[axis]] = s;
            }
        }
    }
    (out, out_dims)
}
