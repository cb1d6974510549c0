//! Monte Carlo state trajectories: on-line (FEST), smoothed (FFBS) and
//! forward-simulated (FSTS) draws of `Θ_t` over the retained scans.
//!
//! Each time index uses its own keyed random stream, so a draw at scan `t`
//! never depends on how many scans follow it or on worker scheduling.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::distributions::{matrix_normal_from_factors, InverseWishart};
use crate::dlm::{FilterMoments, ModelSpec};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, psd_factor, psd_factor_within};
use crate::rng::{stream, DrawRng, StreamDomain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Fest,
    Ffbs,
    Fsts,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Fest => "fest",
            Algorithm::Ffbs => "ffbs",
            Algorithm::Fsts => "fsts",
        }
    }

    fn domain(self) -> StreamDomain {
        match self {
            Algorithm::Fest => StreamDomain::Fest,
            Algorithm::Ffbs => StreamDomain::Ffbs,
            Algorithm::Fsts => StreamDomain::Fsts,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fest" => Ok(Algorithm::Fest),
            "ffbs" => Ok(Algorithm::Ffbs),
            "fsts" => Ok(Algorithm::Fsts),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// Identifies the random streams of one voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub voxel: u64,
}

impl StreamKey {
    pub fn new(seed: u64, voxel: u64) -> Self {
        StreamKey { seed, voxel }
    }

    pub fn at(&self, algorithm: Algorithm, t: usize) -> DrawRng {
        stream(self.seed, self.voxel, algorithm.domain(), t as u64)
    }
}

/// Draws indexed `[time][covariate][column][simulation]` over the retained
/// scans `cutpos + 1 ..= T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDraws {
    pub algorithm: Algorithm,
    pub cutpos: usize,
    times: usize,
    p: usize,
    q: usize,
    nsim: usize,
    values: Vec<f64>,
}

impl TrajectoryDraws {
    pub fn zeros(algorithm: Algorithm, cutpos: usize, times: usize, p: usize, q: usize, nsim: usize) -> Self {
        TrajectoryDraws {
            algorithm,
            cutpos,
            times,
            p,
            q,
            nsim,
            values: vec![0.0; times * p * q * nsim],
        }
    }

    /// `(retained times, p, q, nsim)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.times, self.p, self.q, self.nsim)
    }

    pub fn nsim(&self) -> usize {
        self.nsim
    }

    pub fn covariates(&self) -> usize {
        self.p
    }

    pub fn width(&self) -> usize {
        self.q
    }

    pub fn retained(&self) -> usize {
        self.times
    }

    /// One-based scan index of retained slot `ti`.
    pub fn scan(&self, ti: usize) -> usize {
        self.cutpos + 1 + ti
    }

    #[inline]
    fn index(&self, ti: usize, j: usize, v: usize, s: usize) -> usize {
        ((ti * self.p + j) * self.q + v) * self.nsim + s
    }

    pub fn get(&self, ti: usize, j: usize, v: usize, s: usize) -> f64 {
        self.values[self.index(ti, j, v, s)]
    }

    pub fn set(&mut self, ti: usize, j: usize, v: usize, s: usize, value: f64) {
        let i = self.index(ti, j, v, s);
        self.values[i] = value;
    }

    fn store(&mut self, ti: usize, s: usize, theta: &DMatrix<f64>) {
        for v in 0..self.q {
            for j in 0..self.p {
                self.set(ti, j, v, s, theta[(j, v)]);
            }
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Full `T`-length layout with zeros for scans up to `cutpos`.
    pub fn padded(&self) -> Vec<f64> {
        let block = self.p * self.q * self.nsim;
        let mut out = vec![0.0; self.cutpos * block];
        out.extend_from_slice(&self.values);
        out
    }

    /// Time average of every `(covariate, column, simulation)` trajectory,
    /// laid out `[j][v][s]`.
    pub fn time_averages(&self) -> Vec<f64> {
        let block = self.p * self.q * self.nsim;
        let mut acc = vec![0.0; block];
        for ti in 0..self.times {
            let row = &self.values[ti * block..(ti + 1) * block];
            for (a, x) in acc.iter_mut().zip(row) {
                *a += x;
            }
        }
        let n = self.times as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

/// Simulated responses indexed `[time][column][simulation]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedBold {
    pub cutpos: usize,
    times: usize,
    q: usize,
    nsim: usize,
    values: Vec<f64>,
}

impl SimulatedBold {
    fn zeros(cutpos: usize, times: usize, q: usize, nsim: usize) -> Self {
        SimulatedBold {
            cutpos,
            times,
            q,
            nsim,
            values: vec![0.0; times * q * nsim],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.times, self.q, self.nsim)
    }

    pub fn get(&self, ti: usize, v: usize, s: usize) -> f64 {
        self.values[(ti * self.q + v) * self.nsim + s]
    }

    fn set(&mut self, ti: usize, v: usize, s: usize, value: f64) {
        self.values[(ti * self.q + v) * self.nsim + s] = value;
    }
}

fn check_request(moments: &FilterMoments, nsim: usize, cutpos: usize) -> Result<()> {
    if nsim == 0 {
        return Err(Error::Config("at least one simulation is required".into()));
    }
    if cutpos >= moments.len() {
        return Err(Error::Config(format!(
            "cutpos {cutpos} leaves no retained scans out of {}",
            moments.len()
        )));
    }
    Ok(())
}

/// `n_t` counts observations on the scalar scale; the scatter draw uses
/// `n_t + q − 1` degrees of freedom, so any `n_0 > 0` gives a proper
/// posterior whatever the cluster width.
fn posterior_iw(moments: &FilterMoments, t: usize) -> Result<InverseWishart> {
    let post = moments.posterior(t);
    let dof = post.n + (post.s.nrows() as f64) - 1.0;
    InverseWishart::new(&post.s, dof).map_err(|e| Error::Numeric(format!("scatter at scan {t}: {e}")))
}

/// Independent draws from each on-line posterior `p(Θ_t, Σ | D_t)`, plus a
/// simulated response `y_t = F_tᵀ Θ_t + ν_t` for every draw.
pub fn fest_draws(
    moments: &FilterMoments,
    nsim: usize,
    cutpos: usize,
    key: &StreamKey,
) -> Result<(TrajectoryDraws, SimulatedBold)> {
    check_request(moments, nsim, cutpos)?;
    let (p, q, total) = (moments.covariates(), moments.width(), moments.len());
    let times = total - cutpos;
    let mut draws = TrajectoryDraws::zeros(Algorithm::Fest, cutpos, times, p, q, nsim);
    let mut bold = SimulatedBold::zeros(cutpos, times, q, nsim);

    for t in (cutpos + 1)..=total {
        let ti = t - cutpos - 1;
        let step = moments.step(t);
        let post = &step.posterior;
        let iw = posterior_iw(moments, t)?;
        let state_factor = psd_factor(&post.c, &format!("state scale at scan {t}"))?;
        let regressor_t = step.regressor.transpose();
        let mut rng = key.at(Algorithm::Fest, t);
        for s in 0..nsim {
            let sigma_factor = iw.draw_factor(&mut rng);
            let theta = matrix_normal_from_factors(&post.m, &state_factor, &sigma_factor, &mut rng);
            let noise = DMatrix::<f64>::from_fn(1, q, |_, _| rng.sample(StandardNormal)) * sigma_factor.transpose();
            let y = &regressor_t * &theta + noise;
            draws.store(ti, s, &theta);
            for v in 0..q {
                bold.set(ti, v, s, y[(0, v)]);
            }
        }
    }
    Ok((draws, bold))
}

/// Backward sampling of the joint smoothed path given `Σ ~ IW(n_T, S_T)`.
pub fn ffbs_draws(
    moments: &FilterMoments,
    spec: &ModelSpec,
    nsim: usize,
    cutpos: usize,
    key: &StreamKey,
) -> Result<TrajectoryDraws> {
    check_request(moments, nsim, cutpos)?;
    let (p, q, total) = (moments.covariates(), moments.width(), moments.len());
    let g = &spec.evolution;
    let mut draws = TrajectoryDraws::zeros(Algorithm::Ffbs, cutpos, total - cutpos, p, q, nsim);

    let last = moments.last();
    let iw = posterior_iw(moments, total)?;
    let last_factor = psd_factor(&last.c, &format!("state scale at scan {total}"))?;
    let mut rng = key.at(Algorithm::Ffbs, total);
    let mut sigma_factors = Vec::with_capacity(nsim);
    let mut current = Vec::with_capacity(nsim);
    for s in 0..nsim {
        let k = iw.draw_factor(&mut rng);
        let theta = matrix_normal_from_factors(&last.m, &last_factor, &k, &mut rng);
        draws.store(total - cutpos - 1, s, &theta);
        sigma_factors.push(k);
        current.push(theta);
    }

    for t in ((cutpos + 1)..total).rev() {
        let post = moments.posterior(t);
        let next = moments.step(t + 1);
        let chol = cholesky_jittered(&next.r, &format!("prior state scale at scan {}", t + 1))?;
        // B_t = C_t Gᵀ R_{t+1}⁻¹, built from the symmetric solve R B_tᵀ = G C_t.
        let gain = chol.solve(&(g * &post.c)).transpose();
        let smoothed_scale = &post.c - &gain * &next.r * gain.transpose();
        let reference = post.c.diagonal().amax();
        let smoothed_factor = psd_factor_within(&smoothed_scale, reference, &format!("smoothed scale at scan {t}"))?;
        let mut rng = key.at(Algorithm::Ffbs, t);
        for (s, theta) in current.iter_mut().enumerate() {
            let location = &post.m + &gain * (&*theta - &next.a);
            *theta = matrix_normal_from_factors(&location, &smoothed_factor, &sigma_factors[s], &mut rng);
            draws.store(t - cutpos - 1, s, theta);
        }
    }
    Ok(draws)
}

/// Forward simulation of the evolution equation from a draw of the filtered
/// posterior at `cutpos`, with discount-implied evolution scale
/// `W_t = (1 - δ)/δ · G C_{t-1} Gᵀ`.
pub fn fsts_draws(
    moments: &FilterMoments,
    spec: &ModelSpec,
    nsim: usize,
    cutpos: usize,
    key: &StreamKey,
) -> Result<TrajectoryDraws> {
    check_request(moments, nsim, cutpos)?;
    let (p, q, total) = (moments.covariates(), moments.width(), moments.len());
    let g = &spec.evolution;
    let identity_g = *g == DMatrix::identity(p, p);
    let mut draws = TrajectoryDraws::zeros(Algorithm::Fsts, cutpos, total - cutpos, p, q, nsim);

    let iw = posterior_iw(moments, total)?;
    let anchor = moments.posterior(cutpos);
    let anchor_factor = psd_factor(&anchor.c, &format!("state scale at scan {cutpos}"))?;
    let mut rng = key.at(Algorithm::Fsts, cutpos);
    let mut sigma_factors = Vec::with_capacity(nsim);
    let mut current = Vec::with_capacity(nsim);
    for _ in 0..nsim {
        let k = iw.draw_factor(&mut rng);
        current.push(matrix_normal_from_factors(&anchor.m, &anchor_factor, &k, &mut rng));
        sigma_factors.push(k);
    }

    let ratio = (1.0 - moments.delta) / moments.delta;
    for t in (cutpos + 1)..=total {
        let prev_c = &moments.posterior(t - 1).c;
        let evolution_scale = (g * prev_c * g.transpose()) * ratio;
        let evolution_factor = psd_factor(&evolution_scale, &format!("evolution scale at scan {t}"))?;
        let silent = evolution_factor.iter().all(|v| *v == 0.0);
        let mut rng = key.at(Algorithm::Fsts, t);
        let zero = DMatrix::<f64>::zeros(p, q);
        for (s, theta) in current.iter_mut().enumerate() {
            if !identity_g {
                *theta = g * &*theta;
            }
            if !silent {
                *theta += matrix_normal_from_factors(&zero, &evolution_factor, &sigma_factors[s], &mut rng);
            }
            draws.store(t - cutpos - 1, s, theta);
        }
    }
    Ok(draws)
}

/// Runs the requested sampler; simulated responses come only from FEST.
pub fn draw_trajectories(
    algorithm: Algorithm,
    moments: &FilterMoments,
    spec: &ModelSpec,
    nsim: usize,
    cutpos: usize,
    key: &StreamKey,
) -> Result<(TrajectoryDraws, Option<SimulatedBold>)> {
    match algorithm {
        Algorithm::Fest => fest_draws(moments, nsim, cutpos, key).map(|(d, b)| (d, Some(b))),
        Algorithm::Ffbs => ffbs_draws(moments, spec, nsim, cutpos, key).map(|d| (d, None)),
        Algorithm::Fsts => fsts_draws(moments, spec, nsim, cutpos, key).map(|d| (d, None)),
    }
}
