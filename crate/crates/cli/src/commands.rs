use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use mvdlm::analysis::{evidence_map, single_voxel, AnalysisConfig, EvidenceMaps, SingleVoxelReport};
use mvdlm::evidence::{EvidenceTest, FestTest};
use mvdlm::group::{group_map, group_single_voxel, GroupData, Subject};
use mvdlm::samplers::Algorithm;
use mvdlm::synth::{generate_volume, GroundTruth, TaskDesign};
use mvdlm::volume_io::{
    read_design, read_nifti, write_design, write_nifti_with, write_trajectories_csv, MappedNifti, NiftiVolume,
    OutputPrecision, SeriesSource, VolumeMeta,
};
use mvdlm::{BrainMask, DlmHyper, GridDims, VoxelCoord};

use crate::args::{AlgorithmArg, RunArgs, SubjectArgs, SynthArgs, TestArg};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(mvdlm::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn analysis_config(run: &RunArgs) -> Result<AnalysisConfig> {
    let config = AnalysisConfig {
        algorithm: match run.algorithm {
            AlgorithmArg::Fest => Algorithm::Fest,
            AlgorithmArg::Ffbs => Algorithm::Ffbs,
            AlgorithmArg::Fsts => Algorithm::Fsts,
        },
        fest_test: match run.test {
            TestArg::Ltt => FestTest::Ltt,
            TestArg::Joint => FestTest::Joint,
        },
        hyper: DlmHyper::new(run.m0, run.c0, run.s0, run.n0, run.delta)?,
        radius: run.radius,
        nsim: run.nsim,
        cutpos: run.cutpos,
        n1: run.n1,
        seed: run.seed,
        workers: run.workers,
        min_vol: run.min_vol,
        standardize: !run.no_standardize,
    };
    config.validate()?;
    Ok(config)
}

fn precision(float64: bool) -> OutputPrecision {
    if float64 {
        OutputPrecision::Float64
    } else {
        OutputPrecision::Float32
    }
}

/// `<prefix><suffix>`, keeping the prefix's directory.
pub fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn map_path(prefix: &Path, algorithm: Algorithm, test: EvidenceTest, covariate: usize) -> PathBuf {
    with_suffix(prefix, &format!("_{algorithm}_{test}_cov{}.nii.gz", covariate + 1))
}

fn read_mask(path: &Path, grid: GridDims) -> Result<BrainMask> {
    let volume = read_nifti(path)?.into_3d()?;
    if volume.dims != grid.0 {
        return Err(CliError::Core(mvdlm::Error::Config(format!(
            "mask {} has grid {:?}, the scan has {:?}",
            path.display(),
            volume.dims,
            grid.0
        ))));
    }
    Ok(BrainMask::from_reference(grid, &volume.data)?)
}

/// Prints completed-voxel percentages to stderr.
struct ProgressLine {
    quiet: bool,
    last: AtomicUsize,
}

impl ProgressLine {
    fn new(quiet: bool) -> Self {
        ProgressLine {
            quiet,
            last: AtomicUsize::new(usize::MAX),
        }
    }

    fn report(&self, done: usize, total: usize) {
        if self.quiet || total == 0 {
            return;
        }
        let pct = done * 100 / total;
        if self.last.swap(pct, Ordering::Relaxed) != pct {
            eprint!("\rvoxels: {pct:3}% ({done}/{total})");
            if done == total {
                eprintln!();
            }
        }
    }
}

fn write_maps(maps: &EvidenceMaps, meta: &VolumeMeta, prefix: &Path, float64: bool) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (test, j, volume) in maps.volumes(meta)? {
        let path = map_path(prefix, maps.algorithm, test, j);
        write_nifti_with(&volume, &path, true, precision(float64))?;
        written.push(path);
    }
    Ok(written)
}

fn zero_based(voxel: [usize; 3]) -> VoxelCoord {
    VoxelCoord::new(voxel[0] - 1, voxel[1] - 1, voxel[2] - 1)
}

pub fn cmd_map(input: &Path, run: &RunArgs, quiet: bool) -> Result<()> {
    let config = analysis_config(run)?;
    let source = MappedNifti::open(input)?;
    let design = read_design(&run.design)?;
    let mask = run.mask.as_deref().map(|m| read_mask(m, source.grid())).transpose()?;
    let progress = ProgressLine::new(quiet);
    let maps = evidence_map(&source, &design, mask.as_ref(), &config, &|d, t| progress.report(d, t))?;
    for path in write_maps(&maps, source.meta(), &run.out, run.float64)? {
        println!("{}", path.display());
    }
    Ok(())
}

pub fn cmd_single_voxel(input: &Path, voxel: [usize; 3], run: &RunArgs) -> Result<()> {
    let config = analysis_config(run)?;
    let source = MappedNifti::open(input)?;
    let design = read_design(&run.design)?;
    let mask = run.mask.as_deref().map(|m| read_mask(m, source.grid())).transpose()?;
    let report = single_voxel(&source, &design, mask.as_ref(), zero_based(voxel), &config)?;
    write_single_voxel(&report, voxel, &run.out, &design.column_names)
}

fn load_group(args: &SubjectArgs) -> Result<GroupData> {
    let paths: Vec<PathBuf> = match &args.subjects {
        Some(manifest) => {
            let text = fs::read_to_string(manifest).map_err(|e| io_err(manifest, e))?;
            let base = manifest.parent().unwrap_or(Path::new(""));
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|l| {
                    let p = PathBuf::from(l);
                    if p.is_absolute() {
                        p
                    } else {
                        base.join(p)
                    }
                })
                .collect()
        }
        None => args.subject.clone(),
    };
    if paths.is_empty() {
        return Err(CliError::Usage(
            "group runs need subjects via --subjects <manifest> or repeated --subject".into(),
        ));
    }
    let subjects = paths
        .iter()
        .map(|p| {
            Ok(Subject {
                label: p.display().to_string(),
                source: Box::new(MappedNifti::open(p)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupData::new(subjects)?)
}

fn group_mask(run: &RunArgs, grid: GridDims) -> Result<BrainMask> {
    let path = run
        .mask
        .as_deref()
        .ok_or_else(|| CliError::Usage("group runs require --mask".into()))?;
    read_mask(path, grid)
}

pub fn cmd_group_map(subjects: &SubjectArgs, run: &RunArgs, quiet: bool) -> Result<()> {
    if run.mask.is_none() {
        return Err(CliError::Usage("group runs require --mask".into()));
    }
    let config = analysis_config(run)?;
    let group = load_group(subjects)?;
    let design = read_design(&run.design)?;
    let mask = group_mask(run, group.grid())?;
    let progress = ProgressLine::new(quiet);
    let maps = group_map(&group, &design, &mask, &config, &|d, t| progress.report(d, t))?;
    let meta = group.subjects()[0].source.meta().clone();
    for path in write_maps(&maps, &meta, &run.out, run.float64)? {
        println!("{}", path.display());
    }
    Ok(())
}

pub fn cmd_group_single_voxel(subjects: &SubjectArgs, voxel: [usize; 3], run: &RunArgs) -> Result<()> {
    if run.mask.is_none() {
        return Err(CliError::Usage("group runs require --mask".into()));
    }
    let config = analysis_config(run)?;
    let group = load_group(subjects)?;
    let design = read_design(&run.design)?;
    let mask = group_mask(run, group.grid())?;
    let report = group_single_voxel(&group, &design, &mask, zero_based(voxel), &config)?;
    write_single_voxel(&report, voxel, &run.out, &design.column_names)
}

fn evidence_label(algorithm: Algorithm, tests: &[EvidenceTest], test: EvidenceTest) -> &'static str {
    match (algorithm, test) {
        (Algorithm::Fest, EvidenceTest::Ltt) if tests.len() == 1 => "Eviden",
        (_, EvidenceTest::Marginal) => "Eviden_margin",
        (_, EvidenceTest::Joint) => "Eviden_joint",
        (_, EvidenceTest::Ltt) => "eviden_lt",
    }
}

fn write_single_voxel(report: &SingleVoxelReport, voxel: [usize; 3], prefix: &Path, names: &[String]) -> Result<()> {
    let alg = report.algorithm;
    let draws = &report.fit.draws;
    let (times, p, q, nsim) = draws.shape();

    let report_path = with_suffix(prefix, &format!("_{alg}_report.txt"));
    let mut text = String::new();
    text.push_str(&format!("voxel {} {} {}\n", voxel[0], voxel[1], voxel[2]));
    text.push_str(&format!("algorithm {alg}\n"));
    text.push_str(&format!(
        "scans {} retained {times} covariates {p} cluster {q} nsim {nsim}\n",
        report.fit.series.scans()
    ));
    text.push_str(&format!("covariates {}\n", names.join(" ")));
    for &test in &report.tests {
        let values = report.evidence(test).unwrap_or_default();
        let cols: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        text.push_str(&format!("{} {}\n", evidence_label(alg, &report.tests, test), cols.join(" ")));
    }
    match report.fitness {
        Some(f) => text.push_str(&format!("FitnessV {}\n", f.0)),
        None => text.push_str("FitnessV NA\n"),
    }
    fs::write(&report_path, &text).map_err(|e| io_err(&report_path, e))?;
    print!("{text}");

    let theta_path = with_suffix(prefix, &format!("_{alg}_online_theta.csv"));
    write_trajectories_csv(draws, &theta_path)?;
    println!("{}", theta_path.display());

    if let Some(bold) = &report.fit.bold {
        let path = with_suffix(prefix, &format!("_{alg}_y_simu.csv"));
        let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = BufWriter::new(file);
        let (bt, bq, bn) = bold.shape();
        let mut write = || -> std::io::Result<()> {
            writeln!(w, "t,column,sim,value")?;
            for ti in 0..bt {
                for v in 0..bq {
                    for s in 0..bn {
                        writeln!(w, "{},{},{},{}", draws.scan(ti), v + 1, s + 1, bold.get(ti, v, s))?;
                    }
                }
            }
            w.flush()
        };
        write().map_err(|e| io_err(&path, e))?;
        println!("{}", path.display());
    }

    let fitness_path = with_suffix(prefix, &format!("_{alg}_fitness.csv"));
    let value = report.fitness.map(|f| f.0.to_string()).unwrap_or_else(|| "NA".into());
    fs::write(&fitness_path, format!("fitness\n{value}\n")).map_err(|e| io_err(&fitness_path, e))?;
    println!("{}", fitness_path.display());
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let design = TaskDesign::new(args.scans, args.tr, args.blocks.0.clone())?;
    let dims = GridDims(args.dims);
    if dims.0.contains(&0) {
        return Err(CliError::Usage("grid extents must be positive".into()));
    }
    if args.n_subjects == 0 {
        return Err(CliError::Usage("--n-subjects must be at least 1".into()));
    }
    let [lo, hi] = match args.active {
        Some([lo, hi]) => {
            if (0..3).any(|a| lo[a] > hi[a] || hi[a] > args.dims[a]) {
                return Err(CliError::Usage(format!("active cube {lo:?}:{hi:?} does not fit the grid")));
            }
            [[lo[0] - 1, lo[1] - 1, lo[2] - 1], [hi[0] - 1, hi[1] - 1, hi[2] - 1]]
        }
        None => {
            let d = args.dims;
            let lo = [d[0] / 4, d[1] / 4, d[2] / 4];
            [lo, [lo[0] + (d[0] / 2).max(1) - 1, lo[1] + (d[1] / 2).max(1) - 1, lo[2] + (d[2] / 2).max(1) - 1]]
        }
    };
    let truth = GroundTruth::cube(dims, lo, hi, args.amplitude, args.noise_sd, args.baseline);
    let precision = precision(args.float64);

    let mut scans = Vec::new();
    for z in 0..args.n_subjects {
        let volume = generate_volume(&design, &truth, args.seed.wrapping_add(z as u64))?;
        let path = if args.n_subjects == 1 {
            with_suffix(&args.out, ".nii.gz")
        } else {
            with_suffix(&args.out, &format!("_sub{:02}.nii.gz", z + 1))
        };
        write_nifti_with(&volume, &path, true, precision)?;
        println!("{}", path.display());
        scans.push(path);
    }
    if args.n_subjects > 1 {
        let manifest = with_suffix(&args.out, "_subjects.txt");
        let lines: String = scans
            .iter()
            .map(|p| format!("{}\n", p.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()))
            .collect();
        fs::write(&manifest, lines).map_err(|e| io_err(&manifest, e))?;
        println!("{}", manifest.display());
    }

    let truth_path = with_suffix(&args.out, "_truth.nii.gz");
    write_nifti_with(&truth.mask_volume()?, &truth_path, true, precision)?;
    println!("{}", truth_path.display());
    let design_path = with_suffix(&args.out, "_design.txt");
    write_design(&design.design_matrix()?, &design_path)?;
    println!("{}", design_path.display());
    Ok(())
}

pub fn cmd_info(path: &Path) -> Result<()> {
    let volume = read_nifti(path)?;
    let meta = volume.meta();
    let dims: Vec<String> = volume.shape().iter().map(|d| d.to_string()).collect();
    let (min, max) = volume
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let kind = match volume {
        NiftiVolume::Three(_) => "3D",
        NiftiVolume::Four(_) => "4D",
    };
    let endian = match &meta.header {
        Some(h) if h.big_endian => "big-endian",
        _ => "little-endian",
    };
    println!("file: {}", path.display());
    println!("dims: {}", dims.join(" "));
    println!("kind: {kind}");
    println!("datatype: {} ({endian})", meta.datatype.name());
    println!(
        "voxel sizes: {} {} {}",
        meta.voxel_sizes[0], meta.voxel_sizes[1], meta.voxel_sizes[2]
    );
    println!("range: {min} {max}");
    Ok(())
}
