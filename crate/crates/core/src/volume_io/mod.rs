//! Reading and writing scans, masks, maps, design matrices and draws.

mod design;
mod nifti;
mod source;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub use design::{format_design, parse_design, read_design, write_design};
pub use nifti::{
    encode_nifti, read_header, read_nifti, write_nifti, write_nifti_with, Datatype, NiftiData, NiftiError,
    NiftiHeader, NiftiVolume, OutputPrecision, Volume3D, Volume4D, VolumeMeta, HEADER_SIZE, SINGLE_FILE_OFFSET,
};
pub use source::{MappedNifti, SeriesSource};

use crate::error::{Error, Result};
use crate::samplers::TrajectoryDraws;

/// Long-format CSV of every draw: `t,covariate,column,sim,value`, with `t`
/// the 1-based scan index and the other indices 1-based as well.
pub fn write_trajectories_csv(draws: &TrajectoryDraws, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let (times, p, q, nsim) = draws.shape();
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "t,covariate,column,sim,value")?;
        for ti in 0..times {
            for j in 0..p {
                for v in 0..q {
                    for s in 0..nsim {
                        writeln!(w, "{},{},{},{},{}", draws.scan(ti), j + 1, v + 1, s + 1, draws.get(ti, j, v, s))?;
                    }
                }
            }
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}
