use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "mvdlm", version, about = "Voxel-wise fMRI activation evidence from matrix-variate dynamic linear models")]
pub struct Cli {
    /// Suppress progress output.
    #[arg(long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evidence maps for one subject's 4D scan.
    Map {
        /// 4D NIfTI-1 scan (.nii or .nii.gz).
        input: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Evidence, draws, simulated responses and fitness at one voxel.
    SingleVoxel {
        input: PathBuf,
        /// 1-based voxel position `i,j,k`.
        #[arg(long, value_parser = parse_voxel)]
        voxel: [usize; 3],
        #[command(flatten)]
        run: RunArgs,
    },
    /// Group evidence maps from a pooled multi-subject model.
    GroupMap {
        #[command(flatten)]
        subjects: SubjectArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Group analysis at one voxel.
    GroupSingleVoxel {
        #[command(flatten)]
        subjects: SubjectArgs,
        #[arg(long, value_parser = parse_voxel)]
        voxel: [usize; 3],
        #[command(flatten)]
        run: RunArgs,
    },
    /// Synthetic block-design scans with a planted active cube.
    Synth(SynthArgs),
    /// Print the dimensions, datatype, voxel sizes and value range of a file.
    Info { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgorithmArg {
    Fest,
    Ffbs,
    Fsts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TestArg {
    Ltt,
    Joint,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Design matrix text file, one scan per row.
    #[arg(long)]
    pub design: PathBuf,
    /// Output path prefix.
    #[arg(long)]
    pub out: PathBuf,
    /// Reference mask; any non-zero value includes a voxel. Required for group runs.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "fest")]
    pub algorithm: AlgorithmArg,
    /// FEST test; FFBS and FSTS report every test.
    #[arg(long, value_enum, default_value = "ltt")]
    pub test: TestArg,
    #[arg(long, default_value_t = 0.95)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub m0: f64,
    #[arg(long, default_value_t = 100.0)]
    pub c0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub s0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub n0: f64,
    #[arg(long, default_value_t = 100)]
    pub nsim: usize,
    #[arg(long, default_value_t = 30)]
    pub cutpos: usize,
    /// Cluster radius in voxels.
    #[arg(long = "r", default_value_t = 1.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 0.10)]
    pub min_vol: f64,
    /// Use only the first N1 scans.
    #[arg(long)]
    pub n1: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    #[arg(long, env = "MVDLM_WORKERS", default_value_t = 0)]
    pub workers: usize,
    /// Filter the raw series instead of z-scored ones.
    #[arg(long)]
    pub no_standardize: bool,
    /// Write maps as float64 instead of float32.
    #[arg(long)]
    pub float64: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SubjectArgs {
    /// Manifest listing one subject scan per line.
    #[arg(long, conflicts_with = "subject")]
    pub subjects: Option<PathBuf>,
    /// Subject scan; repeat in analysis order.
    #[arg(long)]
    pub subject: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Output path prefix.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_triple, default_value = "16,16,16")]
    pub dims: [usize; 3],
    #[arg(long, default_value_t = 60)]
    pub scans: usize,
    /// Repetition time in seconds.
    #[arg(long, default_value_t = 2.0)]
    pub tr: f64,
    /// Blocks as `onset:duration` in scans, comma separated, onsets 0-based.
    #[arg(long, value_parser = parse_blocks, default_value = "5:10,25:10,45:10")]
    pub blocks: Blocks,
    /// Active cube as `i0,j0,k0:i1,j1,k1`, 1-based and inclusive. Defaults to the central quarter.
    #[arg(long, value_parser = parse_cube)]
    pub active: Option<[[usize; 3]; 2]>,
    #[arg(long, default_value_t = 3.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 100.0)]
    pub baseline: f64,
    /// Number of subjects sharing the activation.
    #[arg(long, default_value_t = 1)]
    pub n_subjects: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub float64: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blocks(pub Vec<(usize, usize)>);

fn parse_list(s: &str, n: usize) -> Result<Vec<usize>, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != n {
        return Err(format!("expected {n} comma-separated integers, got '{s}'"));
    }
    parts
        .iter()
        .map(|p| p.parse::<usize>().map_err(|_| format!("'{p}' is not a nonnegative integer")))
        .collect()
}

pub fn parse_triple(s: &str) -> Result<[usize; 3], String> {
    let v = parse_list(s, 3)?;
    Ok([v[0], v[1], v[2]])
}

pub fn parse_voxel(s: &str) -> Result<[usize; 3], String> {
    let v = parse_triple(s)?;
    if v.contains(&0) {
        return Err(format!("voxel positions are 1-based, got '{s}'"));
    }
    Ok(v)
}

pub fn parse_cube(s: &str) -> Result<[[usize; 3]; 2], String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected i0,j0,k0:i1,j1,k1, got '{s}'"))?;
    Ok([parse_voxel(lo)?, parse_voxel(hi)?])
}

pub fn parse_blocks(s: &str) -> Result<Blocks, String> {
    if s.trim().is_empty() || s.trim() == "none" {
        return Ok(Blocks(Vec::new()));
    }
    s.split(',')
        .map(|b| {
            let (o, d) = b.trim().split_once(':').ok_or_else(|| format!("block '{b}' is not onset:duration"))?;
            let onset = o.parse().map_err(|_| format!("bad onset in '{b}'"))?;
            let duration = d.parse().map_err(|_| format!("bad duration in '{b}'"))?;
            Ok((onset, duration))
        })
        .collect::<Result<Vec<_>, String>>()
        .map(Blocks)
}
