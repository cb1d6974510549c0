//! Inverse-Wishart and matrix-normal draws.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::dlm::FilterMoments;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, psd_factor, symmetrize};

/// Square root `K` of an inverse-Wishart draw, `Σ = K Kᵀ`.
#[derive(Debug, Clone)]
pub struct InverseWishartDraw {
    pub sigma: DMatrix<f64>,
    pub factor: DMatrix<f64>,
}

/// Prepared inverse-Wishart distribution `IW(n, S)` with mean `S / (n - q - 1)`.
#[derive(Debug, Clone)]
pub struct InverseWishart {
    scale_chol: DMatrix<f64>,
    dof: f64,
    chi: Vec<ChiSquared<f64>>,
}

impl InverseWishart {
    pub fn new(scale: &DMatrix<f64>, dof: f64) -> Result<Self> {
        let q = scale.nrows();
        if scale.ncols() != q || q == 0 {
            return Err(Error::Numeric("inverse-Wishart scale must be square and non-empty".into()));
        }
        if dof.is_nan() || dof <= q as f64 - 1.0 {
            return Err(Error::Numeric(format!(
                "inverse-Wishart needs more than {} degrees of freedom for a {q}x{q} scale, got {dof}",
                q - 1
            )));
        }
        let scale_chol = cholesky_jittered(scale, "inverse-Wishart scale")?.l();
        let chi = (0..q)
            .map(|i| ChiSquared::new(dof - i as f64))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Numeric(format!("chi-square: {e}")))?;
        Ok(InverseWishart { scale_chol, dof, chi })
    }

    pub fn dim(&self) -> usize {
        self.scale_chol.nrows()
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    /// Bartlett construction: `W = T Tᵀ ~ W(n, I)`, `Σ = L W⁻¹ Lᵀ`, so
    /// `K = L T⁻ᵀ` is a square root of `Σ`.
    pub fn draw_factor<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let q = self.dim();
        let mut bartlett = DMatrix::<f64>::zeros(q, q);
        for i in 0..q {
            bartlett[(i, i)] = self.chi[i].sample(rng).sqrt();
            for j in 0..i {
                bartlett[(i, j)] = rng.sample(StandardNormal);
            }
        }
        let inv = bartlett
            .solve_lower_triangular(&DMatrix::identity(q, q))
            .expect("Bartlett factor has a positive diagonal");
        &self.scale_chol * inv.transpose()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> InverseWishartDraw {
        let factor = self.draw_factor(rng);
        let sigma = symmetrize(&(&factor * factor.transpose()));
        InverseWishartDraw { sigma, factor }
    }
}

pub fn sample_inverse_wishart<R: Rng + ?Sized>(scale: &DMatrix<f64>, dof: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    Ok(InverseWishart::new(scale, dof)?.draw(rng).sigma)
}

/// `M + A Z Bᵀ` with `Z` standard normal, for precomputed square roots `A`
/// (p×p) and `B` (q×q).
pub fn matrix_normal_from_factors<R: Rng + ?Sized>(
    location: &DMatrix<f64>,
    row_factor: &DMatrix<f64>,
    col_factor: &DMatrix<f64>,
    rng: &mut R,
) -> DMatrix<f64> {
    let (p, q) = location.shape();
    let z = DMatrix::<f64>::from_fn(p, q, |_, _| rng.sample(StandardNormal));
    location + row_factor * z * col_factor.transpose()
}

/// Draw `X ~ MN(M, U, V)`, i.e. `Cov(vec X) = V ⊗ U`.
pub fn sample_matrix_normal<R: Rng + ?Sized>(
    location: &DMatrix<f64>,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let (p, q) = location.shape();
    if u.shape() != (p, p) || v.shape() != (q, q) {
        return Err(Error::Numeric(format!(
            "matrix-normal scales {:?} and {:?} do not fit a {p}x{q} location",
            u.shape(),
            v.shape()
        )));
    }
    let lu = psd_factor(u, "matrix-normal row scale")?;
    let lv = psd_factor(v, "matrix-normal column scale")?;
    Ok(matrix_normal_from_factors(location, &lu, &lv, rng))
}

/// `Θ_t | Σ, D_t ~ MN(m_t, C_t, Σ)`.
pub fn sample_posterior_theta<R: Rng + ?Sized>(
    moments: &FilterMoments,
    t: usize,
    sigma: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if t > moments.len() {
        return Err(Error::Config(format!("time {t} beyond the {} filtered scans", moments.len())));
    }
    let post = moments.posterior(t);
    sample_matrix_normal(&post.m, &post.c, sigma, rng)
}
