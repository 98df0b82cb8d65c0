//! Synthetic through-the-wall radar echoes.

pub mod dataset;
mod kinematics;

use std::f64::consts::PI;

use ndarray::{Array2, ShapeBuilder};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{generate_dataset, plan_dataset, DatasetConfig, PlannedSample, Split};
pub use kinematics::{ClassTemplate, Jitter, KinematicTemplates, Motion, Pose, Segment, Waveform};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const NUM_NODES: usize = 6;

/// FMCW front-end parameters. The PRI and chirp slope are derived so that
/// `chirp_slope * pri_s == bandwidth_hz` holds by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadarParams {
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub num_pri: usize,
    pub fast_samples: usize,
    pub range_window_m: [f64; 2],
    /// Rows of the range-time map spanning `range_window_m`.
    pub range_bins: usize,
    pub observation_s: f64,
    pub tx_amplitude: f64,
    pub tx_phase_rad: f64,
}

impl Default for RadarParams {
    fn default() -> Self {
        RadarParams {
            carrier_freq_hz: 1.5e9,
            bandwidth_hz: 2.0e9,
            num_pri: 1024,
            fast_samples: 1024,
            range_window_m: [0.0, 4.0],
            range_bins: 1024,
            observation_s: 4.0,
            tx_amplitude: 1.0,
            tx_phase_rad: 0.0,
        }
    }
}

impl RadarParams {
    pub fn pri_s(&self) -> f64 {
        self.observation_s / self.num_pri as f64
    }

    pub fn chirp_slope(&self) -> f64 {
        self.bandwidth_hz / self.pri_s()
    }

    /// Fast-time sampling interval.
    pub fn fast_dt(&self) -> f64 {
        self.pri_s() / self.fast_samples as f64
    }

    pub fn prf_hz(&self) -> f64 {
        1.0 / self.pri_s()
    }

    pub fn range_bin_m(&self) -> f64 {
        (self.range_window_m[1] - self.range_window_m[0]) / self.range_bins as f64
    }

    pub fn validate(&self) -> Result<()> {
        let pow2 = |n: usize| n >= 2 && n.is_power_of_two();
        if !pow2(self.num_pri) || !pow2(self.fast_samples) || !pow2(self.range_bins) {
            return Err(Error::Config(
                "num_pri, fast_samples and range_bins must be powers of two".into(),
            ));
        }
        let [lo, hi] = self.range_window_m;
        if !(lo >= 0.0 && hi > lo) {
            return Err(Error::Config(format!("bad range window [{lo}, {hi}]")));
        }
        if !(self.carrier_freq_hz > 0.0 && self.bandwidth_hz > 0.0 && self.observation_s > 0.0) {
            return Err(Error::Config("frequencies and durations must be positive".into()));
        }
        // The beat frequency at the far edge must stay below fast-time Nyquist.
        let beat = self.chirp_slope() * 2.0 * hi / SPEED_OF_LIGHT;
        if beat * self.fast_dt() >= 0.5 {
            return Err(Error::Config("range window exceeds fast-time Nyquist".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActivityClass {
    S1,
    S2,
    S3,
    S4,
    S5,
    S6,
    S7,
    S8,
    S9,
    S10,
    S11,
    S12,
}

impl ActivityClass {
    pub const ALL: [ActivityClass; 12] = [
        ActivityClass::S1,
        ActivityClass::S2,
        ActivityClass::S3,
        ActivityClass::S4,
        ActivityClass::S5,
        ActivityClass::S6,
        ActivityClass::S7,
        ActivityClass::S8,
        ActivityClass::S9,
        ActivityClass::S10,
        ActivityClass::S11,
        ActivityClass::S12,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        const NAMES: [&str; 12] = [
            "S1", "S2", "S3", "S4", "S5", "S6", "S7", "S8", "S9", "S10", "S11", "S12",
        ];
        NAMES[self.index()]
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s.trim()))
    }

    pub fn description(self) -> &'static str {
        match self {
            ActivityClass::S1 => "empty",
            ActivityClass::S2 => "punching",
            ActivityClass::S3 => "kicking",
            ActivityClass::S4 => "grabbing",
            ActivityClass::S5 => "sitting down",
            ActivityClass::S6 => "standing up",
            ActivityClass::S7 => "rotating",
            ActivityClass::S8 => "walking",
            ActivityClass::S9 => "sitting to walking",
            ActivityClass::S10 => "walking to sitting",
            ActivityClass::S11 => "falling to walking",
            ActivityClass::S12 => "walking to falling",
        }
    }
}

/// Wall, noise and subject size for one scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub wall_thickness_m: f64,
    pub wall_dielectric: f64,
    /// Radar-to-wall distance.
    pub wall_range_m: f64,
    /// Amplitude of the wall return relative to a unit scatterer. Only
    /// used as given when `target_snr_db` is `None`; with a target SNR the
    /// wall is rescaled to its share of the interference budget. Zero
    /// disables the wall in both cases.
    pub wall_reflectivity: f64,
    /// Decay length of the wall's trailing range sidelobes; `None` for a
    /// single static return.
    pub wall_tail_decay_m: Option<f64>,
    /// Raw image-domain SNR: target-region energy over the energy of
    /// everything else (wall clutter plus white noise). `None` adds no noise.
    pub target_snr_db: Option<f64>,
    /// Split of the interference energy between wall and noise.
    pub clutter_to_noise_db: f64,
    /// Extra noise power on top of the calibrated level, for robustness
    /// probes.
    pub extra_noise_db: f64,
    pub height_scale: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            wall_thickness_m: 0.12,
            wall_dielectric: 6.0,
            wall_range_m: 0.5,
            wall_reflectivity: 3.0,
            wall_tail_decay_m: Some(0.06),
            target_snr_db: Some(-15.0),
            clutter_to_noise_db: 25.0,
            extra_noise_db: 0.0,
            height_scale: 1.0,
        }
    }
}

impl SceneConfig {
    pub fn with_height(mut self, height_m: f64) -> Self {
        self.height_scale = height_m / REFERENCE_HEIGHT_M;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.height_scale > 0.0 && self.height_scale <= 1.2) {
            return Err(Error::Config(format!(
                "height_scale {} outside (0, 1.2]",
                self.height_scale
            )));
        }
        if let Some(snr) = self.target_snr_db {
            if !snr.is_finite() {
                return Err(Error::Config("target_snr_db must be finite".into()));
            }
        }
        if !(self.clutter_to_noise_db.is_finite() && self.extra_noise_db.is_finite()) {
            return Err(Error::Config("clutter and extra noise levels must be finite".into()));
        }
        if !(self.wall_reflectivity >= 0.0) {
            return Err(Error::Config("wall_reflectivity must be non-negative".into()));
        }
        Ok(())
    }
}

/// Height of the subject used for training and validation data.
pub const REFERENCE_HEIGHT_M: f64 = 1.8;

/// Radial range of each body node at every PRI.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyTrajectory {
    /// `NUM_NODES x num_pri`, metres.
    pub node_ranges_m: Array2<f64>,
    pub node_amplitudes: [f64; NUM_NODES],
}

impl BodyTrajectory {
    /// A motionless point scatterer, handy for calibration and tests.
    pub fn point(range_m: f64, amplitude: f64, num_pri: usize) -> Self {
        let mut node_ranges_m = Array2::from_elem((NUM_NODES, num_pri), range_m);
        node_ranges_m.row_mut(0).fill(range_m);
        let mut node_amplitudes = [0.0; NUM_NODES];
        node_amplitudes[0] = amplitude;
        BodyTrajectory {
            node_ranges_m,
            node_amplitudes,
        }
    }

    /// Node 0 moving at constant radial velocity.
    pub fn constant_velocity(start_m: f64, velocity_mps: f64, radar: &RadarParams) -> Self {
        let mut t = Self::point(start_m, 1.0, radar.num_pri);
        let dt = radar.pri_s();
        for m in 0..radar.num_pri {
            let r = start_m + velocity_mps * m as f64 * dt;
            t.node_ranges_m.column_mut(m).fill(r);
        }
        t
    }
}

/// Complex dechirped echo, `fast_samples x num_pri`, stored column-major so
/// each PRI is contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct EchoMatrix {
    pub data: Array2<Complex64>,
    pub params: RadarParams,
}

impl EchoMatrix {
    pub fn zeros(params: &RadarParams) -> Self {
        EchoMatrix {
            data: Array2::zeros((params.fast_samples, params.num_pri).f()),
            params: params.clone(),
        }
    }
}

pub fn build_trajectory(
    class: ActivityClass,
    scene: &SceneConfig,
    radar: &RadarParams,
    seed: u64,
) -> BodyTrajectory {
    KinematicTemplates::default().trajectory(class, scene, radar, seed)
}

/// Sums the dechirped returns of every node. Fast time is measured from the
/// middle of each PRI, so `carrier_freq_hz` is the sweep centre.
pub fn synthesize_echo(traj: &BodyTrajectory, params: &RadarParams) -> Result<EchoMatrix> {
    params.validate()?;
    let (nodes, m_count) = traj.node_ranges_m.dim();
    if m_count != params.num_pri {
        return Err(Error::Shape(format!(
            "trajectory has {m_count} PRIs, radar expects {}",
            params.num_pri
        )));
    }
    let [lo, hi] = params.range_window_m;
    for n in 0..nodes {
        for m in 0..m_count {
            let r = traj.node_ranges_m[[n, m]];
            if !(r >= lo && r <= hi) {
                return Err(Error::RangeOutOfWindow {
                    node: n,
                    pri: m,
                    range_m: r,
                    lo,
                    hi,
                });
            }
        }
    }
    let mut echo = EchoMatrix::zeros(params);
    for n in 0..nodes {
        let amp = traj.node_amplitudes[n];
        if amp == 0.0 {
            continue;
        }
        for m in 0..m_count {
            let mut col = echo.data.column_mut(m);
            add_scatterer(
                col.as_slice_mut().expect("column-major echo"),
                traj.node_ranges_m[[n, m]],
                amp,
                params,
            );
        }
    }
    Ok(echo)
}

/// Adds one point return at `range_m` to a fast-time column.
fn add_scatterer(col: &mut [Complex64], range_m: f64, amplitude: f64, p: &RadarParams) {
    let tau = 2.0 * range_m / SPEED_OF_LIGHT;
    let mu = p.chirp_slope();
    let n = col.len();
    let phase0 = 2.0 * PI * (p.carrier_freq_hz * tau - 0.5 * mu * tau * tau) + p.tx_phase_rad;
    let step = 2.0 * PI * mu * tau * p.fast_dt();
    let half = (n / 2) as f64;
    let a = amplitude * p.tx_amplitude;
    // Re-anchor the phasor every 64 samples to bound recurrence drift.
    for (block, chunk) in col.chunks_mut(64).enumerate() {
        let start = (block * 64) as f64 - half;
        let mut z = Complex64::from_polar(a, phase0 + step * start);
        let w = Complex64::from_polar(1.0, step);
        for v in chunk {
            *v += z;
            z *= w;
        }
    }
}

/// Interference actually applied by [`add_wall_and_noise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseReport {
    /// Per-sample complex noise variance.
    pub noise_variance: f64,
    /// Amplitude of the main wall return.
    pub wall_amplitude: f64,
    /// Signal energy inside the target region of the full-band range image.
    pub target_energy: f64,
}

/// Static wall column for a unit main return.
fn wall_column(scene: &SceneConfig, p: &RadarParams) -> Vec<Complex64> {
    let mut wall = vec![Complex64::new(0.0, 0.0); p.fast_samples];
    add_scatterer(&mut wall, scene.wall_range_m, 1.0, p);
    if let Some(decay) = scene.wall_tail_decay_m {
        for k in 1..=4 {
            let dr = k as f64 * scene.wall_thickness_m * 0.5;
            let r = scene.wall_range_m + dr;
            if r < p.range_window_m[1] {
                add_scatterer(&mut wall, r, (-dr / decay).exp(), p);
            }
        }
    }
    wall
}

/// Adds the static wall return and complex white noise.
///
/// With a target SNR, the interference energy `E_t / 10^(snr/10)` of the
/// full-band range image is split between wall and noise according to
/// `clutter_to_noise_db`, so [`image_snr_db`] of the added interference
/// reproduces the request. An empty scene calibrates against a nominal
/// subject so every class shares one noise floor.
pub fn add_wall_and_noise(
    echo: &EchoMatrix,
    scene: &SceneConfig,
    seed: u64,
) -> Result<(EchoMatrix, NoiseReport)> {
    scene.validate()?;
    let p = &echo.params;
    let mut out = echo.clone();
    let n = p.fast_samples as f64;
    let m = p.num_pri as f64;
    let wall_on = scene.wall_reflectivity > 0.0;
    let wall = wall_column(scene, p);

    let mut report = NoiseReport {
        noise_variance: 0.0,
        wall_amplitude: if wall_on { scene.wall_reflectivity } else { 0.0 },
        target_energy: 0.0,
    };
    if let Some(snr_db) = scene.target_snr_db {
        let target_energy = match target_region_energy(&echo.data) {
            e if e > 0.0 => e,
            _ => {
                let amps = KinematicTemplates::default().amplitudes;
                amps.iter().map(|a| a * a).sum::<f64>() * n * n * m
            }
        };
        let interference = target_energy / 10f64.powf(snr_db / 10.0);
        let (wall_energy, noise_energy) = if wall_on {
            let c = 10f64.powf(scene.clutter_to_noise_db / 10.0);
            (interference * c / (1.0 + c), interference / (1.0 + c))
        } else {
            (0.0, interference)
        };
        // Parseval: a static column x contributes M * N * Σ|x|² to the image.
        let unit_wall: f64 = m * n * wall.iter().map(|v| v.norm_sqr()).sum::<f64>();
        report = NoiseReport {
            noise_variance: noise_energy / (n * n * m) * 10f64.powf(scene.extra_noise_db / 10.0),
            wall_amplitude: if wall_on { (wall_energy / unit_wall).sqrt() } else { 0.0 },
            target_energy,
        };
    }

    if report.wall_amplitude > 0.0 {
        let a = report.wall_amplitude;
        for mut col in out.data.columns_mut() {
            for (v, w) in col.iter_mut().zip(&wall) {
                *v += *w * a;
            }
        }
    }
    if report.noise_variance > 0.0 {
        let normal = Normal::new(0.0, (report.noise_variance / 2.0).sqrt()).expect("finite variance");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Fill in memory order; the result depends only on the seed.
        for v in out.data.iter_mut() {
            let re = normal.sample(&mut rng);
            let im = normal.sample(&mut rng);
            *v += Complex64::new(re, im);
        }
    }
    Ok((out, report))
}

/// Squared modulus of the full-band fast-time spectrum of every PRI
/// (an unzoomed range-time image).
pub fn full_band_image(data: &Array2<Complex64>) -> Array2<f64> {
    let (n, m) = data.dim();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut img = Array2::<f64>::zeros((n, m).f());
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..m {
        for (b, v) in buf.iter_mut().zip(data.column(j)) {
            *b = *v;
        }
        fft.process(&mut buf);
        for (o, b) in img.column_mut(j).iter_mut().zip(&buf) {
            *o = b.norm_sqr();
        }
    }
    img
}

/// Pixels within 20 dB of the image peak form the target region.
pub const TARGET_REGION_DB: f64 = -20.0;

fn target_region_energy(clean: &Array2<Complex64>) -> f64 {
    let img = full_band_image(clean);
    let peak = img.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return 0.0;
    }
    let floor = peak * 10f64.powf(TARGET_REGION_DB / 10.0);
    img.iter().filter(|&&v| v >= floor).sum()
}

/// Image-domain SNR: energy of the clean target region of the full-band
/// range image over the total energy of the interference image.
pub fn image_snr_db(clean: &Array2<Complex64>, noise: &Array2<Complex64>) -> f64 {
    let signal = target_region_energy(clean);
    let noise_energy: f64 = full_band_image(noise).sum();
    10.0 * (signal / noise_energy).log10()
}
