//! Activation evidence from trajectory draws.
//!
//! Every test reduces a draw to the time average of its trajectories over
//! the retained scans and asks whether that average is strictly positive;
//! the evidence is the fraction of draws for which it is.

use std::fmt;
use std::str::FromStr;

use crate::dlm::{ClusterSeries, FilterMoments};
use crate::error::{Error, Result};
use crate::samplers::{Algorithm, TrajectoryDraws};

/// Forecasts smaller than this in magnitude are left out of the fit measure.
pub const FITNESS_MIN_FORECAST: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvidenceTest {
    /// Centre voxel coefficient.
    Marginal,
    /// Every cluster coefficient at once.
    Joint,
    /// Cluster-average coefficient.
    Ltt,
}

impl EvidenceTest {
    pub fn name(self) -> &'static str {
        match self {
            EvidenceTest::Marginal => "marginal",
            EvidenceTest::Joint => "joint",
            EvidenceTest::Ltt => "ltt",
        }
    }
}

impl fmt::Display for EvidenceTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Test selection for FEST runs; FFBS and FSTS always report every test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FestTest {
    #[default]
    Ltt,
    Joint,
}

impl FromStr for FestTest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ltt" => Ok(FestTest::Ltt),
            "joint" | "jointtest" => Ok(FestTest::Joint),
            other => Err(Error::Config(format!("unknown test '{other}' (expected ltt or joint)"))),
        }
    }
}

/// Tests reported by a run, in output order.
pub fn tests_for(algorithm: Algorithm, fest_test: FestTest) -> Vec<EvidenceTest> {
    match (algorithm, fest_test) {
        (Algorithm::Fest, FestTest::Ltt) => vec![EvidenceTest::Ltt],
        (Algorithm::Fest, FestTest::Joint) => vec![EvidenceTest::Joint, EvidenceTest::Marginal],
        _ => vec![EvidenceTest::Marginal, EvidenceTest::Joint, EvidenceTest::Ltt],
    }
}

/// Output maps as `(test, zero-based covariate)` pairs: one block of `p`
/// covariates per test.
pub fn map_layout(algorithm: Algorithm, fest_test: FestTest, p: usize) -> Vec<(EvidenceTest, usize)> {
    tests_for(algorithm, fest_test)
        .into_iter()
        .flat_map(|test| (0..p).map(move |j| (test, j)))
        .collect()
}

/// Evidence values of one covariate; unset tests were not requested.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvidenceResult {
    pub marginal: Option<f64>,
    pub joint: Option<f64>,
    pub ltt: Option<f64>,
}

impl EvidenceResult {
    pub fn get(&self, test: EvidenceTest) -> Option<f64> {
        match test {
            EvidenceTest::Marginal => self.marginal,
            EvidenceTest::Joint => self.joint,
            EvidenceTest::Ltt => self.ltt,
        }
    }

    fn set(&mut self, test: EvidenceTest, value: f64) {
        match test {
            EvidenceTest::Marginal => self.marginal = Some(value),
            EvidenceTest::Joint => self.joint = Some(value),
            EvidenceTest::Ltt => self.ltt = Some(value),
        }
    }
}

/// Fraction of draws whose `q` time-averaged coefficients for covariate `j`
/// satisfy `active`.
pub fn evidence_with<F>(draws: &TrajectoryDraws, j: usize, active: F) -> f64
where
    F: Fn(&[f64]) -> bool,
{
    let averages = draws.time_averages();
    evidence_from_averages(&averages, draws, j, active)
}

fn evidence_from_averages<F>(averages: &[f64], draws: &TrajectoryDraws, j: usize, active: F) -> f64
where
    F: Fn(&[f64]) -> bool,
{
    let (_, p, q, nsim) = draws.shape();
    assert!(j < p, "covariate {j} out of range for {p} covariates");
    let mut column = vec![0.0; q];
    let hits = (0..nsim)
        .filter(|&s| {
            for (v, c) in column.iter_mut().enumerate() {
                *c = averages[(j * q + v) * nsim + s];
            }
            active(&column)
        })
        .count();
    hits as f64 / nsim as f64
}

pub fn centre_positive(avg: &[f64]) -> bool {
    avg[0] > 0.0
}

pub fn all_positive(avg: &[f64]) -> bool {
    avg.iter().all(|v| *v > 0.0)
}

pub fn mean_positive(avg: &[f64]) -> bool {
    avg.iter().sum::<f64>() / avg.len() as f64 > 0.0
}

pub fn evidence_marginal(draws: &TrajectoryDraws, j: usize) -> f64 {
    evidence_with(draws, j, centre_positive)
}

pub fn evidence_joint(draws: &TrajectoryDraws, j: usize) -> f64 {
    evidence_with(draws, j, all_positive)
}

pub fn evidence_ltt(draws: &TrajectoryDraws, j: usize) -> f64 {
    evidence_with(draws, j, mean_positive)
}

/// Evaluates `tests` for every covariate, sharing one pass of time averages.
pub fn evaluate(draws: &TrajectoryDraws, tests: &[EvidenceTest]) -> Vec<EvidenceResult> {
    let averages = draws.time_averages();
    (0..draws.covariates())
        .map(|j| {
            let mut result = EvidenceResult::default();
            for &test in tests {
                let value = match test {
                    EvidenceTest::Marginal => evidence_from_averages(&averages, draws, j, centre_positive),
                    EvidenceTest::Joint => evidence_from_averages(&averages, draws, j, all_positive),
                    EvidenceTest::Ltt => evidence_from_averages(&averages, draws, j, mean_positive),
                };
                result.set(test, value);
            }
            result
        })
        .collect()
}

/// Group variants over `subjects` blocks of `q` pooled columns, each block
/// led by that subject's centre voxel.
pub fn group_evidence(draws: &TrajectoryDraws, j: usize, test: EvidenceTest, subjects: usize) -> Result<f64> {
    let averages = draws.time_averages();
    group_from_averages(&averages, draws, j, test, subjects)
}

fn group_from_averages(
    averages: &[f64],
    draws: &TrajectoryDraws,
    j: usize,
    test: EvidenceTest,
    subjects: usize,
) -> Result<f64> {
    let width = draws.width();
    if subjects == 0 || !width.is_multiple_of(subjects) {
        return Err(Error::Config(format!(
            "{width} pooled columns cannot be split across {subjects} subjects"
        )));
    }
    let q = width / subjects;
    let value = match test {
        EvidenceTest::Marginal => evidence_from_averages(averages, draws, j, |avg| {
            (0..subjects).map(|z| avg[z * q]).sum::<f64>() / subjects as f64 > 0.0
        }),
        EvidenceTest::Joint => evidence_from_averages(averages, draws, j, all_positive),
        EvidenceTest::Ltt => evidence_from_averages(averages, draws, j, mean_positive),
    };
    Ok(value)
}

pub fn evaluate_group(draws: &TrajectoryDraws, tests: &[EvidenceTest], subjects: usize) -> Result<Vec<EvidenceResult>> {
    let averages = draws.time_averages();
    (0..draws.covariates())
        .map(|j| {
            let mut result = EvidenceResult::default();
            for &test in tests {
                result.set(test, group_from_averages(&averages, draws, j, test, subjects)?);
            }
            Ok(result)
        })
        .collect()
}

/// Mean absolute percentage error of the centre voxel's one-step forecasts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitnessValue(pub f64);

/// `None` when every retained forecast is numerically zero.
pub fn fitness(observed: &ClusterSeries, moments: &FilterMoments, cutpos: usize) -> Option<FitnessValue> {
    fitness_rescaled(observed, moments, cutpos, 0.0, 1.0)
}

/// Fitness after mapping the centre column back through `x·scale + location`,
/// for models fitted to z-scored series.
pub fn fitness_rescaled(
    observed: &ClusterSeries,
    moments: &FilterMoments,
    cutpos: usize,
    location: f64,
    scale: f64,
) -> Option<FitnessValue> {
    let total = moments.len().min(observed.scans());
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in (cutpos + 1)..=total {
        let forecast = moments.step(t).f[(0, 0)] * scale + location;
        if forecast.abs() < FITNESS_MIN_FORECAST {
            continue;
        }
        let y = observed.values[(t - 1, 0)] * scale + location;
        sum += 100.0 * (y - forecast).abs() / forecast.abs();
        count += 1;
    }
    (count > 0).then(|| FitnessValue(sum / count as f64))
}
