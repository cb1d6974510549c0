//! Per-voxel time series access, from memory or from a memory-mapped file.

use std::fs::File;
use std::io;
use std::path::Path;

use memmap2::Mmap;

use super::nifti::{
    is_gzip, open_maybe_gz, pair_image_path, read_header_from, NiftiError, NiftiHeader, Volume4D, VolumeMeta,
    HEADER_SIZE,
};
use crate::error::{Error, Result};
use crate::geometry::GridDims;

/// Random access to voxel time series of a 4D scan.
pub trait SeriesSource: Send + Sync {
    fn grid(&self) -> GridDims;

    fn scans(&self) -> usize;

    fn meta(&self) -> &VolumeMeta;

    /// Fills `out` with the first `out.len()` scans of voxel `index`.
    fn read_series(&self, index: usize, out: &mut [f64]);

    /// Per-voxel mean over all scans.
    fn temporal_means(&self) -> Vec<f64> {
        let t = self.scans();
        let mut buf = vec![0.0; t];
        (0..self.grid().len())
            .map(|v| {
                self.read_series(v, &mut buf);
                buf.iter().sum::<f64>() / t as f64
            })
            .collect()
    }
}

impl SeriesSource for Volume4D {
    fn grid(&self) -> GridDims {
        GridDims([self.dims[0], self.dims[1], self.dims[2]])
    }

    fn scans(&self) -> usize {
        self.dims[3]
    }

    fn meta(&self) -> &VolumeMeta {
        &self.meta
    }

    fn read_series(&self, index: usize, out: &mut [f64]) {
        let stride = self.voxels();
        for (t, o) in out.iter_mut().enumerate() {
            *o = self.data[index + t * stride];
        }
    }

    fn temporal_means(&self) -> Vec<f64> {
        let n = self.voxels();
        let mut sums = vec![0.0; n];
        for scan in self.data.chunks_exact(n) {
            for (s, v) in sums.iter_mut().zip(scan) {
                *s += v;
            }
        }
        let t = self.scans() as f64;
        sums.iter().map(|s| s / t).collect()
    }
}

/// 4D scan whose voxel data stays on disk and is paged in on demand.
///
/// Gzip input is inflated once into an anonymous temporary file, which is
/// then mapped; the inflated copy lives as long as this value.
#[derive(Debug)]
pub struct MappedNifti {
    header: NiftiHeader,
    meta: VolumeMeta,
    dims: [usize; 4],
    map: Mmap,
    data_offset: usize,
    _spill: Option<File>,
}

fn map_file(file: &File, path: &Path) -> Result<Mmap> {
    // SAFETY: the mapping is read-only and the file is not modified while mapped
    // by this process; external truncation is outside what we can guard against.
    unsafe { Mmap::map(file) }.map_err(|e| Error::io(path, e))
}

/// Returns a mappable plain file for `path`, inflating gzip content if needed.
fn plain_file(path: &Path) -> Result<(File, bool)> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut prefix = [0u8; 2];
    let n = io::Read::read(&mut file, &mut prefix).map_err(|e| Error::io(path, e))?;
    if !is_gzip(&prefix[..n]) {
        return Ok((file, false));
    }
    let mut spill = tempfile::tempfile().map_err(|e| Error::io(path, e))?;
    let mut reader = open_maybe_gz(path)?;
    io::copy(&mut reader, &mut spill).map_err(|e| Error::io(path, e))?;
    Ok((spill, true))
}

impl MappedNifti {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let header = {
            let mut reader = open_maybe_gz(path)?;
            read_header_from(&mut reader, path)?
        };
        if header.ndim() != 4 {
            return Err(Error::Config(format!(
                "{} is {}D, expected a 4D scan",
                path.display(),
                header.ndim()
            )));
        }
        let (data_path, data_offset) = if header.single_file {
            (path.to_path_buf(), header.vox_offset as usize)
        } else {
            (pair_image_path(path), header.vox_offset as usize)
        };
        let (file, spilled) = plain_file(&data_path)?;
        let map = map_file(&file, &data_path)?;
        let expected = header.payload_len()?;
        let found = map.len().saturating_sub(data_offset);
        if found < expected {
            return Err(NiftiError::Truncated { expected, found }.into());
        }
        debug_assert!(!header.single_file || data_offset >= HEADER_SIZE);
        let meta = VolumeMeta {
            voxel_sizes: header.voxel_sizes(),
            datatype: header.datatype,
            header: Some(header.clone()),
        };
        Ok(MappedNifti {
            dims: header.extents(),
            header,
            meta,
            map,
            data_offset,
            _spill: spilled.then_some(file),
        })
    }

    pub fn header(&self) -> &NiftiHeader {
        &self.header
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    #[inline]
    fn value(&self, element: usize) -> f64 {
        let size = self.header.datatype.size();
        let start = self.data_offset + element * size;
        self.header.decode(&self.map[start..start + size])
    }

    /// Loads the whole scan into memory.
    pub fn to_volume(&self) -> Volume4D {
        let n: usize = self.dims.iter().product();
        Volume4D {
            dims: self.dims,
            data: (0..n).map(|e| self.value(e)).collect(),
            meta: self.meta.clone(),
        }
    }
}

impl SeriesSource for MappedNifti {
    fn grid(&self) -> GridDims {
        GridDims([self.dims[0], self.dims[1], self.dims[2]])
    }

    fn scans(&self) -> usize {
        self.dims[3]
    }

    fn meta(&self) -> &VolumeMeta {
        &self.meta
    }

    fn read_series(&self, index: usize, out: &mut [f64]) {
        let stride = self.dims[0] * self.dims[1] * self.dims[2];
        for (t, o) in out.iter_mut().enumerate() {
            *o = self.value(index + t * stride);
        }
    }

    fn temporal_means(&self) -> Vec<f64> {
        // Scan-major pass keeps page access sequential.
        let n = self.dims[0] * self.dims[1] * self.dims[2];
        let mut sums = vec![0.0; n];
        for t in 0..self.dims[3] {
            for (v, s) in sums.iter_mut().enumerate() {
                *s += self.value(v + t * n);
            }
        }
        let t = self.dims[3] as f64;
        sums.iter().map(|s| s / t).collect()
    }
}
