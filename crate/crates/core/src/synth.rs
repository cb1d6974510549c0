//! Block-design task data with known activation, for tests and demos.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{Continuous, Gamma};

use crate::dlm::DesignMatrix;
use crate::error::{Error, Result};
use crate::geometry::{GridDims, VoxelCoord};
use crate::rng::{stream, StreamDomain};
use crate::volume_io::{Volume3D, Volume4D};

/// Double-gamma impulse response; delays and dispersions in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrfParams {
    pub peak_delay: f64,
    pub undershoot_delay: f64,
    pub peak_dispersion: f64,
    pub undershoot_dispersion: f64,
    pub undershoot_ratio: f64,
    /// Kernel support in seconds.
    pub length: f64,
}

impl Default for HrfParams {
    fn default() -> Self {
        HrfParams {
            peak_delay: 6.0,
            undershoot_delay: 16.0,
            peak_dispersion: 1.0,
            undershoot_dispersion: 1.0,
            undershoot_ratio: 1.0 / 6.0,
            length: 32.0,
        }
    }
}

impl HrfParams {
    /// Kernel sampled every `tr` seconds from time zero.
    pub fn kernel(&self, tr: f64) -> Vec<f64> {
        let peak = Gamma::new(self.peak_delay / self.peak_dispersion, 1.0 / self.peak_dispersion)
            .expect("positive gamma parameters");
        let under = Gamma::new(
            self.undershoot_delay / self.undershoot_dispersion,
            1.0 / self.undershoot_dispersion,
        )
        .expect("positive gamma parameters");
        let n = (self.length / tr).floor() as usize + 1;
        (0..n)
            .map(|k| {
                let t = k as f64 * tr;
                peak.pdf(t) - self.undershoot_ratio * under.pdf(t)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDesign {
    pub scans: usize,
    pub tr_seconds: f64,
    /// `(onset, duration)` in scans, onset zero-based.
    pub blocks: Vec<(usize, usize)>,
    pub hrf: HrfParams,
}

impl Default for TaskDesign {
    fn default() -> Self {
        TaskDesign {
            scans: 60,
            tr_seconds: 2.0,
            blocks: vec![(5, 10), (25, 10), (45, 10)],
            hrf: HrfParams::default(),
        }
    }
}

impl TaskDesign {
    pub fn new(scans: usize, tr_seconds: f64, blocks: Vec<(usize, usize)>) -> Result<Self> {
        let design = TaskDesign {
            scans,
            tr_seconds,
            blocks,
            hrf: HrfParams::default(),
        };
        design.validate()?;
        Ok(design)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scans == 0 {
            return Err(Error::Config("a task design needs at least one scan".into()));
        }
        if !(self.tr_seconds > 0.0 && self.tr_seconds.is_finite()) {
            return Err(Error::Config(format!("repetition time {} must be positive", self.tr_seconds)));
        }
        for &(onset, duration) in &self.blocks {
            if duration == 0 || onset >= self.scans || onset + duration > self.scans {
                return Err(Error::Config(format!(
                    "block ({onset}, {duration}) does not fit in {} scans",
                    self.scans
                )));
            }
        }
        Ok(())
    }

    pub fn boxcar(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.scans];
        for &(onset, duration) in &self.blocks {
            for v in &mut s[onset..onset + duration] {
                *v = 1.0;
            }
        }
        s
    }

    /// Stimulus convolved with the sampled kernel, unnormalised.
    pub fn raw_response(&self) -> Vec<f64> {
        convolve(&self.boxcar(), &self.hrf.kernel(self.tr_seconds))
    }

    /// Response scaled so its maximum is exactly 1; all zeros without blocks.
    pub fn expected_bold(&self) -> Vec<f64> {
        let raw = self.raw_response();
        let max = raw.iter().cloned().fold(0.0f64, f64::max);
        if max > 0.0 {
            raw.iter().map(|v| v / max).collect()
        } else {
            vec![0.0; raw.len()]
        }
    }

    /// Expected response and its first difference as a two-column design.
    pub fn design_matrix(&self) -> Result<DesignMatrix> {
        let bold = self.expected_bold();
        let deriv = first_difference(&bold);
        let rows = DMatrix::from_fn(self.scans, 2, |t, c| if c == 0 { bold[t] } else { deriv[t] });
        DesignMatrix::with_names(rows, vec!["bold".into(), "derivative".into()])
    }
}

/// Causal convolution truncated to the signal length.
pub fn convolve(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    (0..signal.len())
        .map(|t| {
            kernel
                .iter()
                .enumerate()
                .take(t + 1)
                .map(|(k, h)| h * signal[t - k])
                .sum()
        })
        .collect()
}

/// `d_t = x_t - x_{t-1}`, with `d_0 = 0`.
pub fn first_difference(x: &[f64]) -> Vec<f64> {
    let mut d = vec![0.0; x.len()];
    for t in 1..x.len() {
        d[t] = x[t] - x[t - 1];
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub dims: GridDims,
    pub active: Vec<bool>,
    pub amplitude: f64,
    pub noise_sd: f64,
    pub baseline: f64,
}

impl GroundTruth {
    /// Activation in the axis-aligned box `lo..=hi`.
    pub fn cube(dims: GridDims, lo: [usize; 3], hi: [usize; 3], amplitude: f64, noise_sd: f64, baseline: f64) -> Self {
        let active = (0..dims.len())
            .map(|v| {
                let c = dims.coord(v).array();
                (0..3).all(|a| c[a] >= lo[a] && c[a] <= hi[a])
            })
            .collect();
        GroundTruth {
            dims,
            active,
            amplitude,
            noise_sd,
            baseline,
        }
    }

    pub fn is_active(&self, c: VoxelCoord) -> bool {
        self.active[self.dims.linear(c)]
    }

    pub fn validate(&self) -> Result<()> {
        if self.active.len() != self.dims.len() {
            return Err(Error::Config(format!(
                "activation grid has {} cells for {} voxels",
                self.active.len(),
                self.dims.len()
            )));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config(format!("noise sd {} must be nonnegative", self.noise_sd)));
        }
        if !self.amplitude.is_finite() || !self.baseline.is_finite() {
            return Err(Error::Config("amplitude and baseline must be finite".into()));
        }
        Ok(())
    }

    /// Activation as a 0/1 volume.
    pub fn mask_volume(&self) -> Result<Volume3D> {
        Volume3D::new(self.dims.0, self.active.iter().map(|a| if *a { 1.0 } else { 0.0 }).collect())
    }
}

/// `baseline + amplitude·bold·1{active} + N(0, noise_sd²)` per voxel; noise
/// for each voxel comes from its own stream keyed by `seed`.
pub fn generate_volume(design: &TaskDesign, truth: &GroundTruth, seed: u64) -> Result<Volume4D> {
    design.validate()?;
    truth.validate()?;
    let bold = design.expected_bold();
    let n = truth.dims.len();
    let t_len = design.scans;
    let mut data = vec![0.0; n * t_len];
    for v in 0..n {
        let mut rng = stream(seed, v as u64, StreamDomain::Synth, 0);
        let signal = if truth.active[v] { truth.amplitude } else { 0.0 };
        for (t, b) in bold.iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            data[v + t * n] = truth.baseline + signal * b + truth.noise_sd * z;
        }
    }
    let d = truth.dims.0;
    Volume4D::new([d[0], d[1], d[2], t_len], data)
}
