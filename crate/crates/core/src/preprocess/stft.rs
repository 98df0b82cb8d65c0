use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    /// Periodic Hann, `0.5 (1 − cos(2πi/wl))`.
    Hann,
    Rectangular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub window_length: usize,
    pub overlap: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            window_length: 128,
            overlap: 112,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn hop(&self) -> usize {
        self.window_length - self.overlap
    }

    pub fn frames(&self, len: usize) -> usize {
        (len - self.window_length) / self.hop() + 1
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        let wl = self.window_length;
        if wl < 2 || wl % 2 != 0 {
            return Err(Error::Config(format!("window length {wl} must be even and ≥ 2")));
        }
        if wl > len {
            return Err(Error::Config(format!(
                "window length {wl} exceeds the {len}-sample sequence"
            )));
        }
        if self.overlap >= wl {
            return Err(Error::Config(format!(
                "overlap {} must be smaller than the window length {wl}",
                self.overlap
            )));
        }
        Ok(())
    }

    pub fn window_values(&self) -> Vec<f64> {
        let wl = self.window_length;
        match self.window {
            WindowKind::Hann => (0..wl)
                .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / wl as f64).cos()))
                .collect(),
            WindowKind::Rectangular => vec![1.0; wl],
        }
    }
}

/// Windowed DFT of every frame, `wl x frames`, bins in natural FFT order.
pub fn stft_frames(seq: &[Complex64], cfg: &StftConfig) -> Result<Array2<Complex64>> {
    cfg.validate(seq.len())?;
    let wl = cfg.window_length;
    let frames = cfg.frames(seq.len());
    let win = cfg.window_values();
    let fft = FftPlanner::new().plan_fft_forward(wl);
    let mut out = Array2::zeros((wl, frames));
    let mut buf = vec![Complex64::new(0.0, 0.0); wl];
    for f in 0..frames {
        let start = f * cfg.hop();
        for (i, b) in buf.iter_mut().enumerate() {
            *b = seq[start + i] * win[i];
        }
        fft.process(&mut buf);
        out.column_mut(f).iter_mut().zip(&buf).for_each(|(o, b)| *o = *b);
    }
    Ok(out)
}

/// Magnitude spectrogram with zero frequency centred. The unpaired
/// `−wl/2` bin is dropped so the `wl − 1` rows are symmetric about 0,
/// ordered by ascending frequency. Row `i` holds bin `i + 1 − wl/2`.
pub fn centred_magnitude(frames: &Array2<Complex64>) -> Array2<f64> {
    let (wl, count) = frames.dim();
    let half = wl / 2;
    Array2::from_shape_fn((wl - 1, count), |(i, f)| {
        let bin = (i + 1 + half) % wl;
        frames[[bin, f]].norm()
    })
}

/// Signed frequency of each row of [`centred_magnitude`].
pub fn centred_axis(wl: usize, sample_rate: f64) -> Vec<f64> {
    let half = (wl / 2) as f64;
    (0..wl - 1)
        .map(|i| (i as f64 + 1.0 - half) * sample_rate / wl as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frame_count_formula() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.hop(), 16);
        assert_eq!(cfg.frames(1024), 57);
        assert!(cfg.validate(64).is_err());
        assert!(StftConfig { overlap: 128, ..cfg.clone() }.validate(1024).is_err());
    }

    #[test]
    fn parseval_per_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let seq: Vec<Complex64> = (0..1024)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let cfg = StftConfig::default();
        let win = cfg.window_values();
        let spec = stft_frames(&seq, &cfg).unwrap();
        for f in 0..spec.ncols() {
            let start = f * cfg.hop();
            let time: f64 = (0..cfg.window_length)
                .map(|i| (seq[start + i] * win[i]).norm_sqr())
                .sum();
            let freq: f64 = spec.column(f).iter().map(|v| v.norm_sqr()).sum::<f64>()
                / cfg.window_length as f64;
            assert!((time - freq).abs() <= 1e-6 * time);
        }
    }

    #[test]
    fn axis_is_symmetric() {
        let axis = centred_axis(128, 256.0);
        assert_eq!(axis.len(), 127);
        for i in 0..axis.len() {
            assert!((axis[i] + axis[axis.len() - 1 - i]).abs() < 1e-12);
        }
        assert_eq!(axis[63], 0.0);
    }
}
