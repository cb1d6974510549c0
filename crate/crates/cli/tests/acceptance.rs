//! Acceptance gate: one pass/fail line per criterion, each at its stated
//! tolerance and runtime bound.

use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use mvdlm::analysis::{evidence_map, no_progress, AnalysisConfig};
use mvdlm::dlm::{forward_filter, ClusterSeries, DesignMatrix, DlmHyper, FilterMoments, ModelSpec};
use mvdlm::evidence::EvidenceTest;
use mvdlm::geometry::{BrainMask, ClusterStencil, GridDims, VoxelCoord};
use mvdlm::group::{centre_average_mean, group_forward_filter, GroupData, Subject};
use mvdlm::rng::{stream, StreamDomain};
use mvdlm::samplers::{fest_draws, ffbs_draws, fsts_draws, Algorithm, StreamKey, TrajectoryDraws};
use mvdlm::synth::{generate_volume, GroundTruth, TaskDesign};
use mvdlm::volume_io::{read_nifti, write_nifti, NiftiVolume, Volume3D, Volume4D};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    }};
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    if elapsed < limit {
        Ok(())
    } else {
        Err(format!("{what} took {elapsed:.1?}, limit {limit:?}"))
    }
}

fn gaussian(seed: u64, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut rng = stream(seed, 0, StreamDomain::Other(900), 0);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mvdlm")
}

fn cli(args: &[&str], dir: &Path) -> Result<Vec<PathBuf>, String> {
    let out = Command::new(bin())
        .args(args)
        .arg("--quiet")
        .current_dir(dir)
        .output()
        .map_err(|e| format!("cannot launch the binary: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "`mvdlm {}` exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter(|l| l.ends_with(".nii.gz"))
        .map(|l| dir.join(l))
        .collect())
}

/// Batch conjugate regression for a static model: the posterior after all
/// rows at once, through explicit inverses.
fn batch_posterior(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    m0: &DMatrix<f64>,
    c0: &DMatrix<f64>,
    s0: &DMatrix<f64>,
    n0: f64,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, f64) {
    let c0_inv = c0.clone().try_inverse().unwrap();
    let precision = &c0_inv + x.transpose() * x;
    let c = precision.clone().try_inverse().unwrap();
    let m = &c * (&c0_inv * m0 + x.transpose() * y);
    let s = s0 + y.transpose() * y + m0.transpose() * &c0_inv * m0 - m.transpose() * &precision * &m;
    (m, c, s, n0 + x.nrows() as f64)
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (t_len, p, q) = (50, 2, 3);
    let x = gaussian(1, t_len, p);
    let y = gaussian(2, t_len, q) + &x * gaussian(3, p, q);
    let hyper = DlmHyper::new(0.3, 10.0, 2.0, 4.0, 1.0).unwrap();
    let design = DesignMatrix::new(x.clone()).unwrap();
    let moments = forward_filter(&ClusterSeries::new(y.clone()), &ModelSpec::random_walk(design), &hyper)
        .map_err(|e| e.to_string())?;
    let (m, c, s, n) = batch_posterior(
        &x,
        &y,
        &DMatrix::from_element(p, q, 0.3),
        &(DMatrix::identity(p, p) * 10.0),
        &(DMatrix::identity(q, q) * 2.0),
        4.0,
    );
    let last = moments.last();
    let errs = [
        max_abs_diff(&last.m, &m),
        max_abs_diff(&last.c, &c),
        max_abs_diff(&last.s, &s),
        (last.n - n).abs(),
    ];
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    ensure!(worst <= 1e-8, "largest deviation from the batch oracle {worst:e} (m, C, S, n: {errs:?})");
    within(start.elapsed(), Duration::from_secs(1), "static oracle")?;
    Ok(format!("max |filter - batch| = {worst:.2e} over m_T, C_T, S_T, n_T"))
}

fn criterion_2() -> Outcome {
    // δ = 1/2, m0 = 0, C0 = S0 = n0 = 1, F = G = 1, y = (2, 1, 3), by hand:
    //   t=1: R=2,   q=3,    e=2,    m=4/3,  C=2/3,  S=7/3
    //   t=2: R=4/3, q=7/3,  e=-1/3, m=8/7,  C=4/7,  S=50/21
    //   t=3: R=8/7, q=15/7, e=13/7, m=32/15, C=8/15, S=419/105
    let expected = [
        (2.0, 3.0, 2.0, 4.0 / 3.0, 2.0 / 3.0, 7.0 / 3.0, 2.0),
        (4.0 / 3.0, 7.0 / 3.0, -1.0 / 3.0, 8.0 / 7.0, 4.0 / 7.0, 50.0 / 21.0, 3.0),
        (8.0 / 7.0, 15.0 / 7.0, 13.0 / 7.0, 32.0 / 15.0, 8.0 / 15.0, 419.0 / 105.0, 4.0),
    ];
    let hyper = DlmHyper::new(0.0, 1.0, 1.0, 1.0, 0.5).unwrap();
    let design = DesignMatrix::new(DMatrix::from_element(3, 1, 1.0)).unwrap();
    let y = DMatrix::from_column_slice(3, 1, &[2.0, 1.0, 3.0]);
    let moments = forward_filter(&ClusterSeries::new(y), &ModelSpec::random_walk(design), &hyper)
        .map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (t, &(r, qt, e, m, c, s, n)) in expected.iter().enumerate() {
        let step = moments.step(t + 1);
        let got = [
            step.r[(0, 0)],
            step.q,
            step.e[(0, 0)],
            step.posterior.m[(0, 0)],
            step.posterior.c[(0, 0)],
            step.posterior.s[(0, 0)],
            step.posterior.n,
        ];
        for (g, w) in got.iter().zip([r, qt, e, m, c, s, n]) {
            worst = worst.max((g - w).abs());
        }
    }
    ensure!(worst <= 1e-10, "largest deviation from the hand computation {worst:e}");
    Ok(format!("max deviation {worst:.2e} over R, q, e, m, C, S, n at t = 1..3"))
}

fn mean_se(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Largest `|mean - target| / se` over every retained time and entry.
fn worst_z(draws: &TrajectoryDraws, target: impl Fn(usize, usize, usize) -> f64) -> f64 {
    let (times, p, q, nsim) = draws.shape();
    let mut worst = 0.0f64;
    for ti in 0..times {
        for j in 0..p {
            for v in 0..q {
                let (mean, se) = mean_se((0..nsim).map(|s| draws.get(ti, j, v, s)));
                worst = worst.max((mean - target(draws.scan(ti), j, v)).abs() / se);
            }
        }
    }
    worst
}

/// Smoothed means by the backward recursion `s_t = m_t + C_t Gᵀ R_{t+1}⁻¹ (s_{t+1} - a_{t+1})`.
fn smoother_means(moments: &FilterMoments, g: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let t_len = moments.len();
    let mut means = vec![DMatrix::zeros(0, 0); t_len + 1];
    means[t_len] = moments.last().m.clone();
    for t in (1..t_len).rev() {
        let post = moments.posterior(t);
        let next = moments.step(t + 1);
        let gain = &post.c * g.transpose() * next.r.clone().try_inverse().unwrap();
        means[t] = &post.m + gain * (&means[t + 1] - &next.a);
    }
    means
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let nsim = 10_000;
    let (t_len, p, q, cutpos) = (12, 2, 2, 4);
    let x = gaussian(10, t_len, p);
    let y = gaussian(11, t_len, q) + &x * gaussian(12, p, q);
    let design = DesignMatrix::new(x).unwrap();
    let spec = ModelSpec::random_walk(design);
    let hyper = DlmHyper::new(0.0, 10.0, 1.0, 3.0, 0.9).unwrap();
    let moments = forward_filter(&ClusterSeries::new(y.clone()), &spec, &hyper).map_err(|e| e.to_string())?;
    let key = StreamKey::new(77, 5);

    // Each retained time is one comparison; the bound is applied to each.
    let (fest, _) = fest_draws(&moments, nsim, cutpos, &key).map_err(|e| e.to_string())?;
    let z_fest = worst_z(&fest, |t, j, v| moments.posterior(t).m[(j, v)]);
    ensure!(z_fest < 3.0, "FEST mean is {z_fest:.2} SE from m_t");

    let smooth = smoother_means(&moments, &spec.evolution);
    let ffbs = ffbs_draws(&moments, &spec, nsim, cutpos, &key).map_err(|e| e.to_string())?;
    let z_ffbs = worst_z(&ffbs, |t, j, v| smooth[t][(j, v)]);
    ensure!(z_ffbs < 3.0, "FFBS mean is {z_ffbs:.2} SE from the smoother mean");

    let static_hyper = DlmHyper { delta: 1.0, ..hyper };
    let static_moments = forward_filter(&ClusterSeries::new(y), &spec, &static_hyper).map_err(|e| e.to_string())?;
    let fsts = fsts_draws(&static_moments, &spec, 500, cutpos, &key).map_err(|e| e.to_string())?;
    let (times, _, _, _) = fsts.shape();
    let constant = (1..times).all(|ti| {
        (0..p).all(|j| (0..q).all(|v| (0..500).all(|s| fsts.get(ti, j, v, s) == fsts.get(0, j, v, s))))
    });
    ensure!(constant, "FSTS trajectories vary over time with δ = 1");
    within(start.elapsed(), Duration::from_secs(30), "sampler moment checks")?;
    Ok(format!(
        "FEST worst {z_fest:.2} SE, FFBS worst {z_ffbs:.2} SE over {} entries, FSTS δ=1 constant",
        (t_len - cutpos) * p * q
    ))
}

fn synthetic(dims: [usize; 3], scans: usize, amplitude: f64, seed: u64) -> (Volume4D, DesignMatrix, GroundTruth) {
    let design = if scans == 60 {
        TaskDesign::default()
    } else {
        TaskDesign::new(scans, 2.0, vec![(5, 8), (22, 8)]).unwrap()
    };
    let lo = [dims[0] / 4, dims[1] / 4, dims[2] / 4];
    let hi = [lo[0] + dims[0] / 2 - 1, lo[1] + dims[1] / 2 - 1, lo[2] + dims[2] / 2 - 1];
    let truth = GroundTruth::cube(GridDims(dims), lo, hi, amplitude, 1.0, 100.0);
    let volume = generate_volume(&design, &truth, seed).unwrap();
    (volume, design.design_matrix().unwrap(), truth)
}

fn criterion_4() -> Outcome {
    let (volume, design, _) = synthetic([8, 8, 8], 40, 2.0, 4);
    let nsim = 60;
    let base = AnalysisConfig {
        algorithm: Algorithm::Ffbs,
        nsim,
        cutpos: 10,
        workers: 1,
        seed: 9,
        ..AnalysisConfig::default()
    };
    let mut checked = 0;
    for radius in [1.0, 0.0] {
        for algorithm in [Algorithm::Ffbs, Algorithm::Fsts] {
            let config = AnalysisConfig { radius, algorithm, ..base.clone() };
            let maps = evidence_map(&volume, &design, None, &config, &no_progress).map_err(|e| e.to_string())?;
            for j in 0..design.covariates() {
                let m = maps.get(EvidenceTest::Marginal, j).unwrap();
                let jt = maps.get(EvidenceTest::Joint, j).unwrap();
                let l = maps.get(EvidenceTest::Ltt, j).unwrap();
                for v in 0..m.len() {
                    for value in [m[v], jt[v], l[v]] {
                        let k = value * nsim as f64;
                        ensure!(
                            (0.0..=1.0).contains(&value) && (k - k.round()).abs() < 1e-9,
                            "value {value} at voxel {v} is not a multiple of 1/{nsim}"
                        );
                    }
                    ensure!(jt[v] <= m[v] && jt[v] <= l[v], "joint exceeds marginal or ltt at voxel {v}");
                    if radius == 0.0 {
                        ensure!(m[v] == jt[v] && jt[v] == l[v], "r = 0 tests differ at voxel {v}");
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{checked} voxel-covariate cells satisfy range, lattice, ordering and r=0 equality"))
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let (volume, design, truth) = synthetic([16, 16, 16], 60, 3.0, 2024);
    let config = AnalysisConfig {
        algorithm: Algorithm::Ffbs,
        nsim: 100,
        cutpos: 10,
        radius: 1.0,
        workers: 1,
        seed: 31,
        hyper: DlmHyper {
            delta: 0.95,
            ..DlmHyper::default()
        },
        ..AnalysisConfig::default()
    };
    let maps = evidence_map(&volume, &design, None, &config, &no_progress).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let ltt = maps.get(EvidenceTest::Ltt, 0).unwrap();
    let (mut hits, mut active, mut false_hits, mut null) = (0, 0, 0, 0);
    for (v, value) in ltt.iter().enumerate() {
        if truth.active[v] {
            active += 1;
            hits += (*value >= 0.95) as usize;
        } else {
            null += 1;
            false_hits += (*value >= 0.95) as usize;
        }
    }
    let power = hits as f64 / active as f64;
    let false_rate = false_hits as f64 / null as f64;
    ensure!(power >= 0.90, "only {:.1}% of active voxels reach 0.95", 100.0 * power);
    ensure!(false_rate <= 0.10, "{:.1}% of null voxels reach 0.95", 100.0 * false_rate);
    within(elapsed, Duration::from_secs(120), "detection run")?;
    Ok(format!(
        "FFBS/LTT: {:.1}% of {active} active and {:.1}% of {null} null voxels at >= 0.95, {elapsed:.1?} on one worker",
        100.0 * power,
        100.0 * false_rate
    ))
}

fn read_dims(path: &Path) -> Result<Vec<usize>, String> {
    Ok(read_nifti(path).map_err(|e| e.to_string())?.shape())
}

fn full_mask(dir: &Path, dims: [usize; 3]) -> Result<String, String> {
    let n = dims.iter().product();
    let mask = Volume3D::new(dims, vec![1.0; n]).unwrap();
    let path = dir.join("full_mask.nii.gz");
    write_nifti(&mask, &path, true).map_err(|e| e.to_string())?;
    Ok("full_mask.nii.gz".into())
}

fn criterion_6() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    cli(&["synth", "--out", "s", "--dims", "8,8,8", "--scans", "40", "--blocks", "5:8,22:8"], d)?;
    cli(
        &["synth", "--out", "g", "--dims", "8,8,8", "--scans", "40", "--blocks", "5:8,22:8", "--n-subjects", "3"],
        d,
    )?;
    let mask = full_mask(d, [8, 8, 8])?;
    let common = ["--design", "s_design.txt", "--cutpos", "10", "--nsim", "20"];
    let p = 2;
    let runs: [(&str, Vec<&str>, usize); 5] = [
        ("FEST/LTT", vec!["map", "s.nii.gz", "--algorithm", "fest", "--test", "ltt", "--out", "a"], p),
        ("FEST/Joint", vec!["map", "s.nii.gz", "--algorithm", "fest", "--test", "joint", "--out", "b"], 2 * p),
        ("FFBS", vec!["map", "s.nii.gz", "--algorithm", "ffbs", "--out", "c"], 3 * p),
        ("FSTS", vec!["map", "s.nii.gz", "--algorithm", "fsts", "--out", "e"], 3 * p),
        (
            "group FEST/Joint",
            vec!["group-map", "--subjects", "g_subjects.txt", "--mask", &mask, "--test", "joint", "--out", "f"],
            2 * p,
        ),
    ];
    let mut summary = Vec::new();
    for (label, mut args, expected) in runs {
        args.extend_from_slice(&common);
        let maps = cli(&args, d)?;
        ensure!(maps.len() == expected, "{label} wrote {} maps, expected {expected}", maps.len());
        for m in &maps {
            let dims = read_dims(m)?;
            ensure!(dims == vec![8, 8, 8], "{} has dims {dims:?}", m.display());
        }
        summary.push(format!("{label} {}", maps.len()));
    }
    Ok(format!("p = 2 map counts: {}", summary.join(", ")))
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    cli(&["synth", "--out", "s", "--dims", "10,10,10", "--seed", "3"], d)?;
    let mut reference: Option<Vec<Vec<u8>>> = None;
    let mut files = 0;
    for workers in ["1", "4", "8"] {
        let prefix = format!("w{workers}");
        let maps = cli(
            &[
                "map", "s.nii.gz", "--design", "s_design.txt", "--algorithm", "fest", "--test", "joint", "--nsim",
                "50", "--cutpos", "10", "--seed", "17", "--workers", workers, "--out", &prefix,
            ],
            d,
        )?;
        let bytes: Vec<Vec<u8>> = maps.iter().map(|m| fs::read(m).unwrap()).collect();
        files = bytes.len();
        match &reference {
            None => reference = Some(bytes),
            Some(r) => ensure!(*r == bytes, "maps with {workers} workers differ from 1 worker"),
        }
    }
    Ok(format!("{files} maps byte-identical across workers 1, 4, 8"))
}

/// Header bytes written field by field in the requested byte order.
fn fixture_file(dims: [i16; 4], values: &[f32], big: bool) -> Vec<u8> {
    fn i16b(v: i16, big: bool) -> [u8; 2] {
        if big { v.to_be_bytes() } else { v.to_le_bytes() }
    }
    fn i32b(v: i32, big: bool) -> [u8; 4] {
        if big { v.to_be_bytes() } else { v.to_le_bytes() }
    }
    fn f32b(v: f32, big: bool) -> [u8; 4] {
        if big { v.to_be_bytes() } else { v.to_le_bytes() }
    }
    let mut h = vec![0u8; 348];
    h[0..4].copy_from_slice(&i32b(348, big));
    h[40..42].copy_from_slice(&i16b(4, big));
    for (i, d) in dims.iter().enumerate() {
        h[42 + 2 * i..44 + 2 * i].copy_from_slice(&i16b(*d, big));
    }
    for i in 4..7 {
        h[42 + 2 * i..44 + 2 * i].copy_from_slice(&i16b(1, big));
    }
    h[70..72].copy_from_slice(&i16b(16, big));
    h[72..74].copy_from_slice(&i16b(32, big));
    for (i, p) in [-1.0f32, 2.0, 2.5, 3.0, 1.5].iter().enumerate() {
        h[76 + 4 * i..80 + 4 * i].copy_from_slice(&f32b(*p, big));
    }
    h[108..112].copy_from_slice(&f32b(352.0, big));
    h[252..254].copy_from_slice(&i16b(1, big));
    h[280..284].copy_from_slice(&f32b(-90.0, big));
    h[344..348].copy_from_slice(b"n+1\0");
    let mut out = h;
    out.extend_from_slice(&[0; 4]);
    for v in values {
        out.extend_from_slice(&f32b(*v, big));
    }
    out
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dims = [5i16, 4, 3, 6];
    let n: usize = dims.iter().map(|d| *d as usize).product();
    let mut rng = stream(8, 0, StreamDomain::Other(901), 0);
    let mut values: Vec<f32> = (0..n).map(|_| rng.sample::<f32, _>(StandardNormal) * 1e3).collect();
    values[0] = f32::MIN_POSITIVE;
    values[1] = -0.0;
    values[2] = f32::MAX;
    values[3] = 1.0e-45;
    let mut cases = 0;
    for big in [false, true] {
        let fixture = dir.path().join(format!("fixture_{big}.nii"));
        fs::write(&fixture, fixture_file(dims, &values, big)).map_err(|e| e.to_string())?;
        let original = read_nifti(&fixture).map_err(|e| e.to_string())?;
        for gz in [false, true] {
            let out = dir.path().join(format!("out_{big}_{gz}.nii{}", if gz { ".gz" } else { "" }));
            write_nifti(&original, &out, gz).map_err(|e| e.to_string())?;
            let back = read_nifti(&out).map_err(|e| e.to_string())?;
            let NiftiVolume::Four(v) = &back else {
                return Err("round trip lost the fourth dimension".into());
            };
            ensure!(v.dims == [5, 4, 3, 6], "dims {:?} after round trip", v.dims);
            let exact = v.data.iter().zip(&values).all(|(a, b)| (*a as f32).to_bits() == b.to_bits());
            ensure!(exact, "values changed (byte-swapped {big}, gzip {gz})");
            let header = back.meta().header.as_ref().unwrap();
            ensure!(header.big_endian == big, "byte order not preserved (byte-swapped {big}, gzip {gz})");
            ensure!(
                header.raw()[252..348] == original.meta().header.as_ref().unwrap().raw()[252..348],
                "orientation fields changed"
            );
            cases += 1;
        }
    }
    Ok(format!("{cases} cases (native/byte-swapped x plain/gzip), {n} float32 values bit-exact"))
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    cli(&["synth", "--out", "s", "--dims", "8,8,8", "--scans", "40", "--blocks", "5:8,22:8"], d)?;
    let mask = full_mask(d, [8, 8, 8])?;
    let mut compared = 0;
    for (alg, test) in [("fest", "joint"), ("ffbs", "ltt")] {
        let shared = ["--design", "s_design.txt", "--mask", &mask, "--algorithm", alg, "--test", test, "--cutpos", "10", "--nsim", "30"];
        let mut ind_args = vec!["map", "s.nii.gz", "--out", "ind"];
        ind_args.extend_from_slice(&shared);
        let mut grp_args = vec!["group-map", "--subject", "s.nii.gz", "--out", "grp"];
        grp_args.extend_from_slice(&shared);
        let ind = cli(&ind_args, d)?;
        let grp = cli(&grp_args, d)?;
        ensure!(ind.len() == grp.len(), "{alg}: {} individual vs {} group maps", ind.len(), grp.len());
        for (a, b) in ind.iter().zip(&grp) {
            ensure!(fs::read(a).unwrap() == fs::read(b).unwrap(), "{} and {} differ", a.display(), b.display());
            compared += 1;
        }
    }

    // Permutation invariance of the posterior mean of the across-subject centre average.
    let seeds = [41u64, 42, 43];
    let vols: Vec<Volume4D> = seeds.iter().map(|s| synthetic([6, 6, 6], 40, 2.0, *s).0).collect();
    let design = synthetic([6, 6, 6], 40, 2.0, 41).1;
    let spec = ModelSpec::random_walk(design);
    let hyper = DlmHyper::default();
    let mask = BrainMask::all(GridDims([6, 6, 6]));
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let voxels = [VoxelCoord::new(2, 2, 2), VoxelCoord::new(0, 5, 3), VoxelCoord::new(4, 1, 0)];
    let mut functionals = 0;
    for voxel in voxels {
        let mut reference: Option<Vec<f64>> = None;
        for perm in perms {
            let group = GroupData::new(
                perm.iter()
                    .map(|&z| Subject {
                        label: format!("s{z}"),
                        source: Box::new(vols[z].clone()),
                    })
                    .collect(),
            )
            .unwrap();
            let moments = group_forward_filter(voxel, &group, 1.0, &spec, &hyper, &mask, 40, true)
                .map_err(|e| e.to_string())?
                .ok_or("constant series")?;
            let values: Vec<f64> = (0..=40)
                .flat_map(|t| (0..2).map(move |j| (t, j)))
                .map(|(t, j)| centre_average_mean(&moments, 3, t, j).unwrap())
                .collect();
            match &reference {
                None => reference = Some(values),
                Some(r) => ensure!(
                    r.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits()),
                    "centre average changes under subject order {perm:?} at voxel {voxel}"
                ),
            }
        }
        functionals += 41 * 2;
    }
    Ok(format!(
        "{compared} N=1 group maps byte-identical to individual maps; {functionals} centre-average means exact under all 6 orders"
    ))
}

fn criterion_10() -> Outcome {
    let dims = GridDims([9, 9, 9]);
    let mask = BrainMask::all(dims);
    let center = VoxelCoord::new(4, 4, 4);
    let mut sizes = Vec::new();
    for (radius, expected) in [(0.0, 1usize), (1.0, 7), (2.0, 33)] {
        let cluster = ClusterStencil::new(radius).unwrap().cluster(center, &mask).map_err(|e| e.to_string())?;
        // Brute force over the whole lattice.
        let mut brute: Vec<VoxelCoord> = (0..dims.len())
            .map(|v| dims.coord(v))
            .filter(|c| {
                let d2: f64 = [(c.i, center.i), (c.j, center.j), (c.k, center.k)]
                    .iter()
                    .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                    .sum();
                d2 <= radius * radius
            })
            .collect();
        let mut members = cluster.members.clone();
        ensure!(members[0] == center, "r = {radius}: centre is not first");
        members.sort();
        brute.sort();
        ensure!(members == brute, "r = {radius}: members differ from lattice enumeration");
        ensure!(members.len() == expected, "r = {radius}: {} members, expected {expected}", members.len());
        sizes.push(format!("r={radius}->{}", members.len()));
    }
    Ok(sizes.join(", "))
}

fn panic_text(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        (1, "static-model batch oracle", criterion_1),
        (2, "univariate hand check", criterion_2),
        (3, "sampler moments", criterion_3),
        (4, "evidence laws", criterion_4),
        (5, "detection power", criterion_5),
        (6, "output-shape anchors", criterion_6),
        (7, "worker-count determinism", criterion_7),
        (8, "NIfTI round trip", criterion_8),
        (9, "group collapse and permutation invariance", criterion_9),
        (10, "cluster sizes", criterion_10),
    ];
    // Straight to the stderr handle so the summary survives output capture.
    let mut report = std::io::stderr();
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| Err(panic_text(p)));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => {
                let _ = writeln!(report, "criterion {id:>2} PASS [{secs:6.2}s] {name}: {detail}");
            }
            Err(reason) => {
                let _ = writeln!(report, "criterion {id:>2} FAIL [{secs:6.2}s] {name}: {reason}");
                failed.push(id);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

