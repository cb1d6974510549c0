//! Small dense factorisation helpers shared by the filter and the samplers.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Relative jitter levels tried, in order, when a matrix that must be
/// positive definite fails a plain Cholesky factorisation.
const JITTER_LADDER: [f64; 5] = [1e-12, 1e-11, 1e-10, 1e-9, 1e-8];

/// Pivots below this fraction of the largest diagonal entry are treated as
/// exact zeros by [`psd_factor`].
const PSD_ZERO_TOL: f64 = 1e-12;

/// Pivots below `-PSD_NEG_TOL * scale` mean the matrix is not semidefinite.
const PSD_NEG_TOL: f64 = 1e-8;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn diag_scale(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows().max(1) as f64;
    m.diagonal().iter().map(|d| d.abs()).sum::<f64>() / n
}

/// Cholesky factorisation with relative diagonal jitter escalation.
///
/// `what` names the matrix in the error message.
pub fn cholesky_jittered(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("{what} has non-finite entries")));
    }
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let scale = diag_scale(m);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    for eps in JITTER_LADDER {
        let mut jittered = m.clone();
        for i in 0..m.nrows() {
            jittered[(i, i)] += eps * scale;
        }
        if let Some(c) = jittered.cholesky() {
            log::debug!("{what}: Cholesky succeeded with relative jitter {eps:e}");
            return Ok(c);
        }
    }
    Err(Error::Numeric(format!(
        "{what} is not positive definite (n = {}, diagonal range [{:e}, {:e}], condition estimate {:e})",
        m.nrows(),
        m.diagonal().min(),
        m.diagonal().max(),
        condition_estimate(m),
    )))
}

/// Ratio of the largest to the smallest absolute eigenvalue of the
/// symmetric part; `inf` for singular input.
pub fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    if m.iter().any(|v| !v.is_finite()) || m.is_empty() {
        return f64::NAN;
    }
    let eig = symmetrize(m).symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Lower-triangular `L` with `L Lᵀ = m` for a symmetric positive
/// semidefinite `m`.
///
/// Rank-deficient directions get a zero column instead of failing, so
/// degenerate scales (a discount of exactly one, a collapsed prior) yield
/// exact point masses rather than jitter noise.
pub fn psd_factor(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    psd_factor_within(m, 0.0, what)
}

/// As [`psd_factor`], with pivot tolerances taken relative to the larger of
/// `m`'s own diagonal and `reference`. A difference of two nearly equal
/// scales should be judged against the operands, not the residue.
pub fn psd_factor_within(m: &DMatrix<f64>, reference: f64, what: &str) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Numeric(format!("{what} is not square")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("{what} has non-finite entries")));
    }
    let a = symmetrize(m);
    let own = a.diagonal().iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
    let mut l = DMatrix::<f64>::zeros(n, n);
    if own == 0.0 {
        return Ok(l);
    }
    let scale = own.max(reference.abs());
    if own <= PSD_ZERO_TOL * scale {
        return Ok(l);
    }
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -PSD_NEG_TOL * scale {
            return Err(Error::Numeric(format!(
                "{what} is not positive semidefinite (pivot {j} = {d:e}, scale {scale:e})"
            )));
        }
        if d <= PSD_ZERO_TOL * scale {
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}
