//! Voxel grids, spherical clusters and analysis masks.

use crate::error::{Error, Result};

/// Zero-based grid position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VoxelCoord {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl VoxelCoord {
    pub fn new(i: usize, j: usize, k: usize) -> Self {
        VoxelCoord { i, j, k }
    }

    pub fn array(self) -> [usize; 3] {
        [self.i, self.j, self.k]
    }
}

impl std::fmt::Display for VoxelCoord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.i, self.j, self.k)
    }
}

/// Spatial extent of a volume; linear indices run with `i` fastest, as in
/// NIfTI storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridDims(pub [usize; 3]);

impl GridDims {
    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, c: VoxelCoord) -> bool {
        c.i < self.0[0] && c.j < self.0[1] && c.k < self.0[2]
    }

    pub fn linear(&self, c: VoxelCoord) -> usize {
        c.i + self.0[0] * (c.j + self.0[1] * c.k)
    }

    pub fn coord(&self, index: usize) -> VoxelCoord {
        let [d1, d2, _] = self.0;
        VoxelCoord::new(index % d1, (index / d1) % d2, index / (d1 * d2))
    }
}

/// Centre voxel followed by its in-mask neighbours.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub center: VoxelCoord,
    pub members: Vec<VoxelCoord>,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Non-centre lattice offsets within Euclidean distance `r`, in
/// lexicographic `(i, j, k)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStencil {
    radius: f64,
    offsets: Vec<[isize; 3]>,
}

impl ClusterStencil {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::Config(format!("cluster radius must be a finite value >= 0, got {radius}")));
        }
        let reach = radius.floor() as isize;
        let r2 = radius * radius;
        let mut offsets = Vec::new();
        for di in -reach..=reach {
            for dj in -reach..=reach {
                for dk in -reach..=reach {
                    if (di, dj, dk) == (0, 0, 0) {
                        continue;
                    }
                    if ((di * di + dj * dj + dk * dk) as f64) <= r2 {
                        offsets.push([di, dj, dk]);
                    }
                }
            }
        }
        Ok(ClusterStencil { radius, offsets })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Cluster size for an interior voxel under a full mask.
    pub fn interior_size(&self) -> usize {
        self.offsets.len() + 1
    }

    /// Fails when the centre is out of bounds or excluded by the mask.
    pub fn cluster(&self, center: VoxelCoord, mask: &BrainMask) -> Result<Cluster> {
        let dims = mask.dims;
        if !dims.contains(center) {
            return Err(Error::Config(format!("voxel {center} lies outside the grid {:?}", dims.0)));
        }
        if !mask.includes(center) {
            return Err(Error::Config(format!("voxel {center} is excluded by the mask")));
        }
        let mut members = Vec::with_capacity(self.interior_size());
        members.push(center);
        for [di, dj, dk] in &self.offsets {
            let (Some(i), Some(j), Some(k)) = (
                center.i.checked_add_signed(*di),
                center.j.checked_add_signed(*dj),
                center.k.checked_add_signed(*dk),
            ) else {
                continue;
            };
            let c = VoxelCoord::new(i, j, k);
            if dims.contains(c) && mask.includes(c) {
                members.push(c);
            }
        }
        Ok(Cluster { center, members })
    }
}

pub fn build_cluster(center: VoxelCoord, radius: f64, mask: &BrainMask) -> Result<Cluster> {
    ClusterStencil::new(radius)?.cluster(center, mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSource {
    ReferenceVolume,
    IntensityThreshold,
    All,
    Combined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrainMask {
    pub dims: GridDims,
    pub include: Vec<bool>,
    pub source: MaskSource,
}

impl BrainMask {
    pub fn all(dims: GridDims) -> Self {
        BrainMask {
            dims,
            include: vec![true; dims.len()],
            source: MaskSource::All,
        }
    }

    /// Any non-zero reference value includes the voxel.
    pub fn from_reference(dims: GridDims, values: &[f64]) -> Result<Self> {
        if values.len() != dims.len() {
            return Err(Error::Config(format!(
                "mask has {} voxels, grid {:?} needs {}",
                values.len(),
                dims.0,
                dims.len()
            )));
        }
        Ok(BrainMask {
            dims,
            include: values.iter().map(|v| *v != 0.0).collect(),
            source: MaskSource::ReferenceVolume,
        })
    }

    /// Includes voxels whose temporal mean is positive and at least
    /// `min_vol` times the largest temporal mean.
    pub fn from_temporal_means(dims: GridDims, means: &[f64], min_vol: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&min_vol) {
            return Err(Error::Config(format!("min-vol must lie in [0, 1), got {min_vol}")));
        }
        if means.len() != dims.len() {
            return Err(Error::Config("temporal means do not match the grid".into()));
        }
        let max = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let threshold = min_vol * max;
        let include: Vec<bool> = means.iter().map(|m| *m > 0.0 && *m >= threshold).collect();
        if !include.iter().any(|b| *b) {
            log::warn!("intensity threshold left no voxels (largest temporal mean {max})");
        }
        Ok(BrainMask {
            dims,
            include,
            source: MaskSource::IntensityThreshold,
        })
    }

    pub fn includes(&self, c: VoxelCoord) -> bool {
        self.include[self.dims.linear(c)]
    }

    pub fn count(&self) -> usize {
        self.include.iter().filter(|b| **b).count()
    }

    pub fn and(&self, other: &BrainMask) -> Result<BrainMask> {
        if self.dims != other.dims {
            return Err(Error::Config(format!(
                "mask grids differ: {:?} vs {:?}",
                self.dims.0, other.dims.0
            )));
        }
        Ok(BrainMask {
            dims: self.dims,
            include: self.include.iter().zip(&other.include).map(|(a, b)| *a && *b).collect(),
            source: MaskSource::Combined,
        })
    }
}
