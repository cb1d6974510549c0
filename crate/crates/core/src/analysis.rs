//! Whole-brain and single-voxel activation analyses.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dlm::{forward_filter, ClusterSeries, DesignMatrix, DlmHyper, FilterMoments, ModelSpec};
use crate::error::{Error, Result};
use crate::evidence::{evaluate, evaluate_group, fitness, fitness_rescaled, map_layout, tests_for, EvidenceResult, EvidenceTest, FestTest, FitnessValue};
use crate::geometry::{BrainMask, Cluster, ClusterStencil, GridDims, VoxelCoord};
use crate::samplers::{draw_trajectories, Algorithm, SimulatedBold, StreamKey, TrajectoryDraws};
use crate::volume_io::{SeriesSource, Volume3D, VolumeMeta};

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub algorithm: Algorithm,
    /// Only consulted for FEST.
    pub fest_test: FestTest,
    pub hyper: DlmHyper,
    pub radius: f64,
    pub nsim: usize,
    pub cutpos: usize,
    /// Analyse only the first `n1` scans.
    pub n1: Option<usize>,
    pub seed: u64,
    /// Worker threads; 0 uses the available parallelism.
    pub workers: usize,
    pub min_vol: f64,
    /// Z-score every cluster column before filtering.
    pub standardize: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            algorithm: Algorithm::Fest,
            fest_test: FestTest::Ltt,
            hyper: DlmHyper::default(),
            radius: 1.0,
            nsim: 100,
            cutpos: 30,
            n1: None,
            seed: 1,
            workers: 0,
            min_vol: 0.10,
            standardize: true,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        ClusterStencil::new(self.radius)?;
        if self.nsim == 0 {
            return Err(Error::Config("nsim must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.min_vol) {
            return Err(Error::Config(format!("min_vol must lie in [0, 1), got {}", self.min_vol)));
        }
        if self.n1 == Some(0) {
            return Err(Error::Config("n1 must be at least 1".into()));
        }
        Ok(())
    }

    pub fn tests(&self) -> Vec<EvidenceTest> {
        tests_for(self.algorithm, self.fest_test)
    }

    /// Scans used out of `available`, checked against `cutpos`.
    pub fn scans_used(&self, available: usize) -> Result<usize> {
        let used = match self.n1 {
            Some(n1) if n1 > available => {
                return Err(Error::Config(format!("n1 = {n1} exceeds the {available} available scans")))
            }
            Some(n1) => n1,
            None => available,
        };
        if self.cutpos >= used {
            return Err(Error::Config(format!(
                "cutpos {} leaves no retained scans out of {used}",
                self.cutpos
            )));
        }
        Ok(used)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
    }
}

/// Reports `(completed, total)` voxel counts.
pub type Progress<'a> = &'a (dyn Fn(usize, usize) + Sync);

pub fn no_progress(_: usize, _: usize) {}

/// Reference mask (if any) intersected with the intensity mask of `source`.
pub fn analysis_mask(source: &dyn SeriesSource, reference: Option<&BrainMask>, min_vol: f64) -> Result<BrainMask> {
    let grid = source.grid();
    let intensity = BrainMask::from_temporal_means(grid, &source.temporal_means(), min_vol)?;
    match reference {
        Some(r) => r.and(&intensity),
        None => Ok(intensity),
    }
}

/// Cluster columns of `source` over the first `scans` scans, or `None` when
/// the centre series is constant. When standardising, other constant
/// columns become zeros.
pub fn extract_cluster(
    source: &dyn SeriesSource,
    cluster: &Cluster,
    scans: usize,
    standardize: bool,
) -> Result<Option<DMatrix<f64>>> {
    let grid = source.grid();
    let mut values = DMatrix::<f64>::zeros(scans, cluster.size());
    let mut buf = vec![0.0; scans];
    for (col, member) in cluster.members.iter().enumerate() {
        source.read_series(grid.linear(*member), &mut buf);
        if let Some(t) = buf.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "voxel {member} has a non-finite value at scan {}",
                t + 1
            )));
        }
        if col == 0 && buf.iter().all(|v| *v == buf[0]) {
            return Ok(None);
        }
        if standardize {
            standardize_in_place(&mut buf);
        }
        values.set_column(col, &nalgebra::DVector::from_column_slice(&buf));
    }
    Ok(Some(values))
}

fn mean_and_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = if x.len() > 1 {
        x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Z-scores with the sample standard deviation; constant input becomes zeros.
pub fn standardize_in_place(x: &mut [f64]) {
    let (mean, sd) = mean_and_sd(x);
    for v in x.iter_mut() {
        *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
    }
}

/// Supplies the observation matrix of a voxel, pooled across subjects for
/// group analyses.
pub(crate) trait ClusterProvider: Sync {
    fn grid(&self) -> GridDims;
    fn scans(&self) -> usize;
    fn subjects(&self) -> usize;
    fn series(&self, cluster: &Cluster, scans: usize, standardize: bool) -> Result<Option<DMatrix<f64>>>;
}

struct SingleSubject<'a>(&'a dyn SeriesSource);

impl ClusterProvider for SingleSubject<'_> {
    fn grid(&self) -> GridDims {
        self.0.grid()
    }
    fn scans(&self) -> usize {
        self.0.scans()
    }
    fn subjects(&self) -> usize {
        1
    }
    fn series(&self, cluster: &Cluster, scans: usize, standardize: bool) -> Result<Option<DMatrix<f64>>> {
        extract_cluster(self.0, cluster, scans, standardize)
    }
}

/// Everything computed for one voxel.
#[derive(Debug, Clone)]
pub struct VoxelFit {
    pub cluster: Cluster,
    pub series: ClusterSeries,
    pub moments: FilterMoments,
    pub draws: TrajectoryDraws,
    pub bold: Option<SimulatedBold>,
    pub evidence: Vec<EvidenceResult>,
}

pub(crate) struct Prepared {
    pub spec: ModelSpec,
    pub stencil: ClusterStencil,
    pub scans: usize,
}

pub(crate) fn prepare(provider: &dyn ClusterProvider, design: &DesignMatrix, config: &AnalysisConfig) -> Result<Prepared> {
    config.validate()?;
    if design.scans() != provider.scans() {
        return Err(Error::Config(format!(
            "design matrix has {} rows but the scan has {} volumes",
            design.scans(),
            provider.scans()
        )));
    }
    let scans = config.scans_used(provider.scans())?;
    Ok(Prepared {
        spec: ModelSpec::random_walk(design.truncated(scans)),
        stencil: ClusterStencil::new(config.radius)?,
        scans,
    })
}

fn with_voxel(e: Error, c: VoxelCoord) -> Error {
    match e {
        Error::Numeric(m) if !m.contains("voxel") => Error::Numeric(format!("voxel {c}: {m}")),
        Error::Data(m) if !m.contains("voxel") => Error::Data(format!("voxel {c}: {m}")),
        other => other,
    }
}

/// Filters, samples and tests one voxel; `None` for a constant centre.
pub(crate) fn fit_voxel(
    provider: &dyn ClusterProvider,
    prepared: &Prepared,
    mask: &BrainMask,
    config: &AnalysisConfig,
    center: VoxelCoord,
) -> Result<Option<VoxelFit>> {
    let run = || -> Result<Option<VoxelFit>> {
        let cluster = prepared.stencil.cluster(center, mask)?;
        let Some(values) = provider.series(&cluster, prepared.scans, config.standardize)? else {
            return Ok(None);
        };
        let series = ClusterSeries::at(values, center.array());
        let moments = forward_filter(&series, &prepared.spec, &config.hyper)?;
        let key = StreamKey::new(config.seed, provider.grid().linear(center) as u64);
        let (draws, bold) =
            draw_trajectories(config.algorithm, &moments, &prepared.spec, config.nsim, config.cutpos, &key)?;
        let tests = config.tests();
        let evidence = match provider.subjects() {
            1 => evaluate(&draws, &tests),
            n => evaluate_group(&draws, &tests, n)?,
        };
        Ok(Some(VoxelFit {
            cluster,
            series,
            moments,
            draws,
            bold,
            evidence,
        }))
    };
    run().map_err(|e| with_voxel(e, center))
}

/// One map per `(test, covariate)`, each over the whole grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceMaps {
    pub dims: GridDims,
    pub algorithm: Algorithm,
    pub layout: Vec<(EvidenceTest, usize)>,
    pub maps: Vec<Vec<f64>>,
    pub mask: BrainMask,
}

impl EvidenceMaps {
    pub fn get(&self, test: EvidenceTest, covariate: usize) -> Option<&[f64]> {
        self.layout
            .iter()
            .position(|&(t, j)| t == test && j == covariate)
            .map(|i| self.maps[i].as_slice())
    }

    pub fn value(&self, test: EvidenceTest, covariate: usize, c: VoxelCoord) -> Option<f64> {
        self.get(test, covariate).map(|m| m[self.dims.linear(c)])
    }

    /// Maps as volumes sharing `meta`'s geometry, in layout order.
    pub fn volumes(&self, meta: &VolumeMeta) -> Result<Vec<(EvidenceTest, usize, Volume3D)>> {
        self.layout
            .iter()
            .zip(&self.maps)
            .map(|(&(test, j), values)| {
                let mut v = Volume3D::new(self.dims.0, values.clone())?;
                v.meta = meta.clone();
                Ok((test, j, v))
            })
            .collect()
    }
}

pub(crate) fn run_map(
    provider: &dyn ClusterProvider,
    design: &DesignMatrix,
    mask: BrainMask,
    config: &AnalysisConfig,
    progress: Progress<'_>,
) -> Result<EvidenceMaps> {
    let prepared = prepare(provider, design, config)?;
    let grid = provider.grid();
    if mask.dims != grid {
        return Err(Error::Config(format!(
            "mask grid {:?} differs from the scan grid {:?}",
            mask.dims.0, grid.0
        )));
    }
    let voxels: Vec<usize> = (0..grid.len()).filter(|&v| mask.include[v]).collect();
    if voxels.is_empty() {
        return Err(Error::Config("the analysis mask is empty".into()));
    }
    let layout = map_layout(config.algorithm, config.fest_test, design.covariates());
    let total = voxels.len();
    let done = AtomicUsize::new(0);
    progress(0, total);

    let results: Vec<(usize, Vec<f64>)> = config.pool()?.install(|| {
        voxels
            .par_iter()
            .map(|&v| {
                let fit = fit_voxel(provider, &prepared, &mask, config, grid.coord(v))?;
                let row = match fit {
                    Some(fit) => layout
                        .iter()
                        .map(|&(test, j)| fit.evidence[j].get(test).unwrap_or(0.0))
                        .collect(),
                    None => vec![0.0; layout.len()],
                };
                progress(done.fetch_add(1, Ordering::Relaxed) + 1, total);
                Ok((v, row))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut maps = vec![vec![0.0; grid.len()]; layout.len()];
    for (v, row) in results {
        for (m, value) in maps.iter_mut().zip(row) {
            m[v] = value;
        }
    }
    Ok(EvidenceMaps {
        dims: grid,
        algorithm: config.algorithm,
        layout,
        maps,
        mask,
    })
}

/// Evidence maps for one subject. Voxels outside the mask, or with a
/// constant centre series, get evidence 0.
pub fn evidence_map(
    source: &dyn SeriesSource,
    design: &DesignMatrix,
    reference: Option<&BrainMask>,
    config: &AnalysisConfig,
    progress: Progress<'_>,
) -> Result<EvidenceMaps> {
    config.validate()?;
    let mask = analysis_mask(source, reference, config.min_vol)?;
    run_map(&SingleSubject(source), design, mask, config, progress)
}

#[derive(Debug, Clone)]
pub struct SingleVoxelReport {
    pub coord: VoxelCoord,
    pub algorithm: Algorithm,
    pub tests: Vec<EvidenceTest>,
    pub fit: VoxelFit,
    pub fitness: Option<FitnessValue>,
}

impl SingleVoxelReport {
    /// Evidence of `test` for every covariate.
    pub fn evidence(&self, test: EvidenceTest) -> Option<Vec<f64>> {
        self.fit.evidence.iter().map(|r| r.get(test)).collect()
    }
}

pub(crate) fn run_single(
    provider: &dyn ClusterProvider,
    design: &DesignMatrix,
    mask: &BrainMask,
    coord: VoxelCoord,
    config: &AnalysisConfig,
) -> Result<SingleVoxelReport> {
    let prepared = prepare(provider, design, config)?;
    if !mask.dims.contains(coord) {
        return Err(Error::Config(format!("voxel {coord} lies outside the grid {:?}", mask.dims.0)));
    }
    if !mask.includes(coord) {
        return Err(Error::Config(format!("voxel {coord} was discarded by the Min.vol threshold or the mask")));
    }
    let fit = fit_voxel(provider, &prepared, mask, config, coord)?
        .ok_or_else(|| Error::Data(format!("voxel {coord} has a constant series; there is nothing to fit")))?;
    // Percentages are only meaningful on the original signal scale.
    let fitness = if config.standardize {
        let raw = provider
            .series(&fit.cluster, prepared.scans, false)?
            .ok_or_else(|| Error::Data(format!("voxel {coord} has a constant series")))?;
        let centre: Vec<f64> = raw.column(0).iter().copied().collect();
        let (location, scale) = mean_and_sd(&centre);
        fitness_rescaled(&fit.series, &fit.moments, config.cutpos, location, scale)
    } else {
        fitness(&fit.series, &fit.moments, config.cutpos)
    };
    Ok(SingleVoxelReport {
        coord,
        algorithm: config.algorithm,
        tests: config.tests(),
        fit,
        fitness,
    })
}

pub fn single_voxel(
    source: &dyn SeriesSource,
    design: &DesignMatrix,
    reference: Option<&BrainMask>,
    coord: VoxelCoord,
    config: &AnalysisConfig,
) -> Result<SingleVoxelReport> {
    config.validate()?;
    let mask = analysis_mask(source, reference, config.min_vol)?;
    run_single(&SingleSubject(source), design, &mask, coord, config)
}
