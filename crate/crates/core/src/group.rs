//! Multi-subject analyses: subjects enter as extra observation columns of a
//! single pooled model.

use nalgebra::DMatrix;

use crate::analysis::{
    extract_cluster, fit_voxel, prepare, run_map, run_single, AnalysisConfig, ClusterProvider, EvidenceMaps,
    Progress, SingleVoxelReport,
};
use crate::dlm::{forward_filter, ClusterSeries, DesignMatrix, DlmHyper, FilterMoments, ModelSpec};
use crate::error::{Error, Result};
use crate::geometry::{BrainMask, Cluster, ClusterStencil, GridDims, VoxelCoord};
use crate::volume_io::SeriesSource;

pub struct Subject {
    pub label: String,
    pub source: Box<dyn SeriesSource>,
}

/// Subjects sharing one grid and scan count, in analysis order.
pub struct GroupData {
    subjects: Vec<Subject>,
}

impl GroupData {
    pub fn new(subjects: Vec<Subject>) -> Result<Self> {
        let Some(first) = subjects.first() else {
            return Err(Error::Config("a group analysis needs at least one subject".into()));
        };
        let (grid, scans) = (first.source.grid(), first.source.scans());
        for (z, s) in subjects.iter().enumerate().skip(1) {
            if s.source.grid() != grid || s.source.scans() != scans {
                let d = s.source.grid().0;
                return Err(Error::Config(format!(
                    "subject {} ({}) has shape {}x{}x{}x{}, expected {}x{}x{}x{} as in subject 1",
                    z + 1,
                    s.label,
                    d[0],
                    d[1],
                    d[2],
                    s.source.scans(),
                    grid.0[0],
                    grid.0[1],
                    grid.0[2],
                    scans
                )));
            }
        }
        Ok(GroupData { subjects })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn grid(&self) -> GridDims {
        self.subjects[0].source.grid()
    }

    pub fn scans(&self) -> usize {
        self.subjects[0].source.scans()
    }

    /// Reference mask intersected with every subject's intensity mask.
    pub fn mask(&self, reference: &BrainMask, min_vol: f64) -> Result<BrainMask> {
        let mut mask = reference.clone();
        for s in &self.subjects {
            let intensity = BrainMask::from_temporal_means(s.source.grid(), &s.source.temporal_means(), min_vol)?;
            mask = mask.and(&intensity)?;
        }
        Ok(mask)
    }

    /// `T×(q·N)` pooled columns, subject-major; `None` if any subject's
    /// centre series is constant.
    pub fn pooled_series(&self, cluster: &Cluster, scans: usize, standardize: bool) -> Result<Option<DMatrix<f64>>> {
        let q = cluster.size();
        let mut pooled = DMatrix::<f64>::zeros(scans, q * self.len());
        for (z, s) in self.subjects.iter().enumerate() {
            let block = extract_cluster(s.source.as_ref(), cluster, scans, standardize)
                .map_err(|e| match e {
                    Error::Data(m) => Error::Data(format!("subject {} ({}): {m}", z + 1, s.label)),
                    other => other,
                })?;
            let Some(block) = block else {
                return Ok(None);
            };
            pooled.columns_mut(z * q, q).copy_from(&block);
        }
        Ok(Some(pooled))
    }
}

impl ClusterProvider for GroupData {
    fn grid(&self) -> GridDims {
        GroupData::grid(self)
    }
    fn scans(&self) -> usize {
        GroupData::scans(self)
    }
    fn subjects(&self) -> usize {
        self.len()
    }
    fn series(&self, cluster: &Cluster, scans: usize, standardize: bool) -> Result<Option<DMatrix<f64>>> {
        self.pooled_series(cluster, scans, standardize)
    }
}

/// Filter moments of the pooled model at `voxel`; `None` for a constant
/// centre series in any subject.
#[allow(clippy::too_many_arguments)]
pub fn group_forward_filter(
    voxel: VoxelCoord,
    group: &GroupData,
    radius: f64,
    spec: &ModelSpec,
    hyper: &DlmHyper,
    mask: &BrainMask,
    scans: usize,
    standardize: bool,
) -> Result<Option<FilterMoments>> {
    let cluster = ClusterStencil::new(radius)?.cluster(voxel, mask)?;
    match group.pooled_series(&cluster, scans, standardize)? {
        Some(values) => forward_filter(&ClusterSeries::at(values, voxel.array()), spec, hyper).map(Some),
        None => Ok(None),
    }
}

/// Posterior mean at scan `t` of the across-subject average of the centre
/// coefficients of covariate `j`. Summation runs over sorted values, so the
/// result does not depend on subject order.
pub fn centre_average_mean(moments: &FilterMoments, subjects: usize, t: usize, j: usize) -> Result<f64> {
    let width = moments.width();
    if subjects == 0 || !width.is_multiple_of(subjects) {
        return Err(Error::Config(format!(
            "{width} pooled columns cannot be split across {subjects} subjects"
        )));
    }
    let q = width / subjects;
    let m = &moments.posterior(t).m;
    let mut centres: Vec<f64> = (0..subjects).map(|z| m[(j, z * q)]).collect();
    centres.sort_by(f64::total_cmp);
    Ok(centres.iter().sum::<f64>() / subjects as f64)
}

/// Group evidence maps. The reference mask is mandatory.
pub fn group_map(
    group: &GroupData,
    design: &DesignMatrix,
    reference: &BrainMask,
    config: &AnalysisConfig,
    progress: Progress<'_>,
) -> Result<EvidenceMaps> {
    config.validate()?;
    let mask = group.mask(reference, config.min_vol)?;
    run_map(group, design, mask, config, progress)
}

pub fn group_single_voxel(
    group: &GroupData,
    design: &DesignMatrix,
    reference: &BrainMask,
    coord: VoxelCoord,
    config: &AnalysisConfig,
) -> Result<SingleVoxelReport> {
    config.validate()?;
    let mask = group.mask(reference, config.min_vol)?;
    run_single(group, design, &mask, coord, config)
}

/// Full pooled fit at one voxel, exposed for diagnostics.
pub fn group_fit(
    group: &GroupData,
    design: &DesignMatrix,
    mask: &BrainMask,
    coord: VoxelCoord,
    config: &AnalysisConfig,
) -> Result<Option<crate::analysis::VoxelFit>> {
    let prepared = prepare(group, design, config)?;
    fit_voxel(group, &prepared, mask, config, coord)
}
