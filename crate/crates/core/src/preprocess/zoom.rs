//! Zoomed DFT over an arbitrary band of normalized frequencies
//! (chirp-z transform evaluated with Bluestein's convolution).

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Evaluates
///
/// `X_k = Σ_n x_n · exp(-j2π (f0 + k·df) (n − N/2))`, `k = 0..K`
///
/// for normalized frequencies `f0`, `df` (cycles per sample). The `N/2`
/// offset references phase to the middle of the input block.
pub struct ZoomDft {
    n: usize,
    k: usize,
    len: usize,
    pre: Vec<Complex64>,
    post: Vec<Complex64>,
    kernel: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl ZoomDft {
    pub fn new(n: usize, k: usize, f0: f64, df: f64) -> Self {
        assert!(n > 0 && k > 0);
        let len = (n + k - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(len);
        let ifft = planner.plan_fft_inverse(len);
        let sq = |i: usize| (i as f64) * (i as f64);

        let pre = (0..n)
            .map(|i| Complex64::from_polar(1.0, -2.0 * PI * f0 * i as f64 - PI * df * sq(i)))
            .collect();
        let half = (n / 2) as f64;
        let post = (0..k)
            .map(|i| {
                let nu = f0 + df * i as f64;
                Complex64::from_polar(1.0, -PI * df * sq(i) + 2.0 * PI * nu * half)
            })
            .collect();
        let mut kernel = vec![Complex64::new(0.0, 0.0); len];
        for (m, v) in kernel.iter_mut().enumerate().take(k) {
            *v = Complex64::from_polar(1.0, PI * df * sq(m));
        }
        for m in 1..n {
            kernel[len - m] = Complex64::from_polar(1.0, PI * df * sq(m));
        }
        fft.process(&mut kernel);
        let scale = 1.0 / len as f64;
        for v in &mut kernel {
            *v *= scale;
        }
        ZoomDft {
            n,
            k,
            len,
            pre,
            post,
            kernel,
            fft,
            ifft,
        }
    }

    pub fn input_len(&self) -> usize {
        self.n
    }

    pub fn output_len(&self) -> usize {
        self.k
    }

    /// `buf` is scratch space; it is resized as needed.
    pub fn process(&self, input: &[Complex64], output: &mut [Complex64], buf: &mut Vec<Complex64>) {
        assert_eq!(input.len(), self.n);
        assert_eq!(output.len(), self.k);
        buf.clear();
        buf.extend(input.iter().zip(&self.pre).map(|(x, p)| x * p));
        buf.resize(self.len, Complex64::new(0.0, 0.0));
        self.fft.process(buf);
        for (b, h) in buf.iter_mut().zip(&self.kernel) {
            *b *= h;
        }
        self.ifft.process(buf);
        for ((o, b), p) in output.iter_mut().zip(buf.iter()).zip(&self.post) {
            *o = b * p;
        }
    }
}
