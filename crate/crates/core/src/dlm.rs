//! Matrix-variate dynamic linear model and its conjugate forward filter.
//!
//! A cluster of `q` voxel series observed at `T` scans is modelled as
//!
//! ```text
//! y_t  = F_tᵀ Θ_t + ν_t,       ν_t | Σ ~ N(0, Σ)          (1×q row)
//! Θ_t  = G Θ_{t-1} + Ω_t,      Ω_t | Σ ~ MN(0, W_t, Σ)    (p×q)
//! ```
//!
//! with a matrix-normal / inverse-Wishart prior on `(Θ_0, Σ)`. The evolution
//! variance `W_t` is never specified directly: a discount factor `δ`
//! inflates the propagated state scale, `R_t = G C_{t-1} Gᵀ / δ`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::symmetrize;

/// Prior hyperparameters of `(Θ_0, Σ)` and the discount factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DlmHyper {
    /// Broadcast into every entry of the `p×q` prior location.
    pub m0_fill: f64,
    /// Diagonal of the `p×p` prior state scale `C0`.
    pub c0_scale: f64,
    /// Diagonal of the `q×q` prior scatter `S0`.
    pub s0_scale: f64,
    /// Prior degrees of freedom.
    pub n0: f64,
    /// Discount factor in `(0, 1]`.
    pub delta: f64,
}

impl Default for DlmHyper {
    fn default() -> Self {
        DlmHyper {
            m0_fill: 0.0,
            c0_scale: 100.0,
            s0_scale: 1.0,
            n0: 1.0,
            delta: 0.95,
        }
    }
}

impl DlmHyper {
    pub fn new(m0_fill: f64, c0_scale: f64, s0_scale: f64, n0: f64, delta: f64) -> Result<Self> {
        let hyper = DlmHyper {
            m0_fill,
            c0_scale,
            s0_scale,
            n0,
            delta,
        };
        hyper.validate()?;
        Ok(hyper)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.m0_fill.is_finite() {
            return Err(Error::Config(format!("m0 must be finite, got {}", self.m0_fill)));
        }
        if !(self.c0_scale > 0.0 && self.c0_scale.is_finite()) {
            return Err(Error::Config(format!("c0 must be positive, got {}", self.c0_scale)));
        }
        if !(self.s0_scale > 0.0 && self.s0_scale.is_finite()) {
            return Err(Error::Config(format!("s0 must be positive, got {}", self.s0_scale)));
        }
        if !(self.n0 > 0.0 && self.n0.is_finite()) {
            return Err(Error::Config(format!("n0 must be positive, got {}", self.n0)));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Config(format!(
                "discount factor must lie in (0, 1], got {}",
                self.delta
            )));
        }
        Ok(())
    }

    pub fn prior_location(&self, p: usize, q: usize) -> DMatrix<f64> {
        DMatrix::from_element(p, q, self.m0_fill)
    }

    pub fn prior_state_scale(&self, p: usize) -> DMatrix<f64> {
        DMatrix::identity(p, p) * self.c0_scale
    }

    pub fn prior_scatter(&self, q: usize) -> DMatrix<f64> {
        DMatrix::identity(q, q) * self.s0_scale
    }
}

/// `T×q` block of BOLD readings; column 0 is the cluster centre.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSeries {
    pub values: DMatrix<f64>,
    /// Grid position of the centre voxel, used in diagnostics only.
    pub center: Option<[usize; 3]>,
}

impl ClusterSeries {
    pub fn new(values: DMatrix<f64>) -> Self {
        ClusterSeries {
            values,
            center: None,
        }
    }

    pub fn at(values: DMatrix<f64>, center: [usize; 3]) -> Self {
        ClusterSeries {
            values,
            center: Some(center),
        }
    }

    pub fn scans(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    fn origin(&self) -> String {
        match self.center {
            Some([i, j, k]) => format!("voxel ({i}, {j}, {k})"),
            None => "cluster series".to_string(),
        }
    }
}

/// `T×p` regressor matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub rows: DMatrix<f64>,
    pub column_names: Vec<String>,
}

impl DesignMatrix {
    pub fn new(rows: DMatrix<f64>) -> Result<Self> {
        let column_names = (1..=rows.ncols()).map(|j| format!("cov{j}")).collect();
        Self::with_names(rows, column_names)
    }

    pub fn with_names(rows: DMatrix<f64>, column_names: Vec<String>) -> Result<Self> {
        if rows.ncols() == 0 {
            return Err(Error::Config("design matrix needs at least one column".into()));
        }
        if column_names.len() != rows.ncols() {
            return Err(Error::Config(format!(
                "{} column names for {} design columns",
                column_names.len(),
                rows.ncols()
            )));
        }
        if let Some(pos) = rows.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % rows.nrows(), pos / rows.nrows());
            return Err(Error::Data(format!(
                "design matrix entry at scan {} column {} is not finite",
                r + 1,
                c + 1
            )));
        }
        Ok(DesignMatrix { rows, column_names })
    }

    pub fn scans(&self) -> usize {
        self.rows.nrows()
    }

    pub fn covariates(&self) -> usize {
        self.rows.ncols()
    }

    /// First `scans` rows only.
    pub fn truncated(&self, scans: usize) -> DesignMatrix {
        let n = scans.min(self.scans());
        DesignMatrix {
            rows: self.rows.rows(0, n).into_owned(),
            column_names: self.column_names.clone(),
        }
    }

    /// `F_t` as a `p×1` column, `t` zero-based.
    pub fn regressor(&self, t: usize) -> DMatrix<f64> {
        DMatrix::from_iterator(self.rows.ncols(), 1, self.rows.row(t).iter().cloned())
    }
}

/// Regressors plus the constant evolution matrix `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub design: DesignMatrix,
    pub evolution: DMatrix<f64>,
}

impl ModelSpec {
    /// Random-walk evolution, `G = I_p`.
    pub fn random_walk(design: DesignMatrix) -> Self {
        let p = design.covariates();
        ModelSpec {
            design,
            evolution: DMatrix::identity(p, p),
        }
    }

    pub fn with_evolution(design: DesignMatrix, evolution: DMatrix<f64>) -> Result<Self> {
        let p = design.covariates();
        if evolution.shape() != (p, p) {
            return Err(Error::Config(format!(
                "evolution matrix must be {p}x{p}, got {}x{}",
                evolution.nrows(),
                evolution.ncols()
            )));
        }
        Ok(ModelSpec { design, evolution })
    }

    pub fn covariates(&self) -> usize {
        self.design.covariates()
    }

    fn identity_evolution(&self) -> bool {
        self.evolution == DMatrix::identity(self.covariates(), self.covariates())
    }
}

/// Posterior of `(Θ_t, Σ)` given data up to `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    /// Location `m_t` (p×q).
    pub m: DMatrix<f64>,
    /// State scale `C_t` (p×p).
    pub c: DMatrix<f64>,
    /// Scatter `S_t` (q×q).
    pub s: DMatrix<f64>,
    /// Degrees of freedom `n_t`.
    pub n: f64,
}

/// Quantities produced while assimilating scan `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    /// `F_t` (p×1).
    pub regressor: DMatrix<f64>,
    /// Prior location `a_t` (p×q).
    pub a: DMatrix<f64>,
    /// Prior state scale `R_t` (p×p).
    pub r: DMatrix<f64>,
    /// One-step forecast `f_t` (1×q).
    pub f: DMatrix<f64>,
    /// Forecast scale `q_t`.
    pub q: f64,
    /// Forecast error `e_t` (1×q).
    pub e: DMatrix<f64>,
    pub posterior: PosteriorState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterMoments {
    pub prior: PosteriorState,
    /// Entry `t - 1` holds scan `t`.
    pub steps: Vec<FilterStep>,
    pub delta: f64,
}

impl FilterMoments {
    /// Number of assimilated scans `T`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn covariates(&self) -> usize {
        self.prior.m.nrows()
    }

    pub fn width(&self) -> usize {
        self.prior.m.ncols()
    }

    /// Posterior after `t` scans; `t = 0` is the prior.
    pub fn posterior(&self, t: usize) -> &PosteriorState {
        if t == 0 {
            &self.prior
        } else {
            &self.steps[t - 1].posterior
        }
    }

    /// Step for scan `t`, one-based.
    pub fn step(&self, t: usize) -> &FilterStep {
        &self.steps[t - 1]
    }

    pub fn last(&self) -> &PosteriorState {
        self.posterior(self.len())
    }
}

/// Runs the conjugate discount filter over every scan of `series`.
pub fn forward_filter(series: &ClusterSeries, spec: &ModelSpec, hyper: &DlmHyper) -> Result<FilterMoments> {
    hyper.validate()?;
    let p = spec.covariates();
    let q = series.width();
    let scans = series.scans();
    if q == 0 {
        return Err(Error::Config("cluster series has no columns".into()));
    }
    if spec.design.scans() != scans {
        return Err(Error::Config(format!(
            "design has {} scans but {} has {}",
            spec.design.scans(),
            series.origin(),
            scans
        )));
    }
    if spec.evolution.shape() != (p, p) {
        return Err(Error::Config(format!("evolution matrix must be {p}x{p}")));
    }
    if let Some(pos) = series.values.iter().position(|v| !v.is_finite()) {
        let (t, col) = (pos % scans, pos / scans);
        return Err(Error::Data(format!(
            "non-finite reading in {} at scan {}, cluster column {}",
            series.origin(),
            t + 1,
            col + 1
        )));
    }

    let prior = PosteriorState {
        m: hyper.prior_location(p, q),
        c: hyper.prior_state_scale(p),
        s: hyper.prior_scatter(q),
        n: hyper.n0,
    };

    let g = &spec.evolution;
    let identity_g = spec.identity_evolution();
    let mut steps: Vec<FilterStep> = Vec::with_capacity(scans);
    for t in 0..scans {
        let prev = steps.last().map(|s| &s.posterior).unwrap_or(&prior);
        let regressor = spec.design.regressor(t);

        let (a, propagated) = if identity_g {
            (prev.m.clone(), prev.c.clone())
        } else {
            (g * &prev.m, g * &prev.c * g.transpose())
        };
        let r = symmetrize(&(propagated / hyper.delta));

        let f = regressor.transpose() * &a;
        let qt = (regressor.transpose() * &r * &regressor)[(0, 0)] + 1.0;
        let y = series.values.rows(t, 1);
        let e = y - &f;
        let gain = &r * &regressor / qt;

        let m = &a + &gain * &e;
        let c = symmetrize(&(&r - &gain * gain.transpose() * qt));
        let s = &prev.s + e.transpose() * &e / qt;
        let n = prev.n + 1.0;

        steps.push(FilterStep {
            regressor,
            a,
            r,
            f,
            q: qt,
            e,
            posterior: PosteriorState { m, c, s, n },
        });
    }

    Ok(FilterMoments {
        prior,
        steps,
        delta: hyper.delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn intercept_design(t: usize) -> DesignMatrix {
        DesignMatrix::new(DMatrix::from_element(t, 1, 1.0)).unwrap()
    }

    #[test]
    fn empty_series_returns_prior() {
        let series = ClusterSeries::new(DMatrix::zeros(0, 2));
        let spec = ModelSpec::random_walk(DesignMatrix::new(DMatrix::zeros(0, 3)).unwrap());
        let hyper = DlmHyper::default();
        let mom = forward_filter(&series, &spec, &hyper).unwrap();
        assert!(mom.is_empty());
        assert_eq!(mom.last().m, DMatrix::zeros(3, 2));
        assert_eq!(mom.last().c, DMatrix::identity(3, 3) * 100.0);
        assert_eq!(mom.last().s, DMatrix::identity(2, 2));
        assert_eq!(mom.last().n, 1.0);
    }

    /// Normal-inverse-gamma update for `y_i = μ + ε_i`, `μ | σ² ~ N(m0, c0 σ²)`.
    #[test]
    fn intercept_only_matches_conjugate_regression() {
        let ys = [1.0, 1.0, 1.0];
        let (m0, c0) = (0.0, 100.0);
        let n = ys.len() as f64;
        let post_c = 1.0 / (1.0 / c0 + n);
        let post_m = post_c * (m0 / c0 + ys.iter().sum::<f64>());

        let series = ClusterSeries::new(DMatrix::from_column_slice(3, 1, &ys));
        let spec = ModelSpec::random_walk(intercept_design(3));
        let hyper = DlmHyper::new(m0, c0, 1.0, 1.0, 1.0).unwrap();
        let mom = forward_filter(&series, &spec, &hyper).unwrap();
        assert_relative_eq!(mom.last().m[(0, 0)], post_m, epsilon = 1e-12);
        assert_relative_eq!(mom.last().c[(0, 0)], post_c, epsilon = 1e-12);
    }

    #[test]
    fn unit_discount_propagates_scale_unchanged() {
        let series = ClusterSeries::new(DMatrix::from_fn(6, 2, |t, v| (t as f64 * 0.7 + v as f64).sin()));
        let design = DesignMatrix::new(DMatrix::from_fn(6, 2, |t, j| if j == 0 { 1.0 } else { t as f64 })).unwrap();
        let spec = ModelSpec::random_walk(design);
        let hyper = DlmHyper::new(0.0, 10.0, 1.0, 2.0, 1.0).unwrap();
        let mom = forward_filter(&series, &spec, &hyper).unwrap();
        for t in 1..=mom.len() {
            let prev = &mom.posterior(t - 1).c;
            assert_eq!(mom.step(t).r, spec.evolution.clone() * prev * spec.evolution.transpose());
        }
    }

    #[test]
    fn dof_increase_by_one() {
        let series = ClusterSeries::new(DMatrix::from_fn(10, 3, |t, v| (t * (v + 1)) as f64 % 3.0));
        let spec = ModelSpec::random_walk(intercept_design(10));
        let mom = forward_filter(&series, &spec, &DlmHyper::default()).unwrap();
        for t in 1..=10 {
            assert_eq!(mom.posterior(t).n, 1.0 + t as f64);
            assert!(mom.step(t).q > 0.0);
        }
    }

    #[test]
    fn rejects_non_finite_reading_with_position() {
        let mut values = DMatrix::from_element(4, 2, 1.0);
        values[(2, 1)] = f64::NAN;
        let series = ClusterSeries::at(values, [3, 4, 5]);
        let spec = ModelSpec::random_walk(intercept_design(4));
        let err = forward_filter(&series, &spec, &DlmHyper::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("voxel (3, 4, 5)"), "{msg}");
        assert!(msg.contains("scan 3"), "{msg}");
    }

    #[test]
    fn rejects_bad_discount() {
        assert!(DlmHyper::new(0.0, 100.0, 1.0, 1.0, 0.0).is_err());
        assert!(DlmHyper::new(0.0, 100.0, 1.0, 1.0, 1.5).is_err());
        let bad = DlmHyper {
            delta: -0.2,
            ..DlmHyper::default()
        };
        let series = ClusterSeries::new(DMatrix::zeros(2, 1));
        let spec = ModelSpec::random_walk(intercept_design(2));
        assert!(matches!(forward_filter(&series, &spec, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn scan_count_mismatch_is_config_error() {
        let series = ClusterSeries::new(DMatrix::zeros(5, 1));
        let spec = ModelSpec::random_walk(intercept_design(4));
        assert!(matches!(
            forward_filter(&series, &spec, &DlmHyper::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn non_identity_evolution() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let design = DesignMatrix::new(DMatrix::from_fn(5, 2, |_, j| if j == 0 { 1.0 } else { 0.0 })).unwrap();
        let spec = ModelSpec::with_evolution(design.clone(), g.clone()).unwrap();
        let series = ClusterSeries::new(DMatrix::from_column_slice(5, 1, &[1.0, 2.0, 3.0, 4.0, 5.0]));
        let hyper = DlmHyper::new(0.0, 1.0, 1.0, 1.0, 0.9).unwrap();
        let mom = forward_filter(&series, &spec, &hyper).unwrap();
        for t in 1..=5 {
            let prev = mom.posterior(t - 1);
            assert_relative_eq!(mom.step(t).a, &g * &prev.m, epsilon = 1e-12);
            assert_relative_eq!(mom.step(t).r, &g * &prev.c * g.transpose() / 0.9, epsilon = 1e-12);
        }
        assert!(ModelSpec::with_evolution(design, DMatrix::identity(3, 3)).is_err());
    }
}
