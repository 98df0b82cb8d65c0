//! First-IMF removal by empirical mode decomposition, row by row.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmdConfig {
    /// Sifting stops once `Σ(h_prev − h)² / Σ h_prev²` falls below this.
    pub sd_threshold: f64,
    pub max_sifts: usize,
    /// IMF-1 is dropped only when it crosses zero at least this often per
    /// sample; smoother first modes carry signal and are kept.
    pub noise_crossing_rate: f64,
}

impl Default for EmdConfig {
    fn default() -> Self {
        EmdConfig {
            sd_threshold: 0.3,
            max_sifts: 10,
            noise_crossing_rate: 0.35,
        }
    }
}

pub fn emd_denoise(map: &Array2<f64>, cfg: &EmdConfig) -> Array2<f64> {
    let mut out = map.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let x = row.to_vec();
        let y = denoise_row(&x, cfg);
        row.iter_mut().zip(y).for_each(|(o, v)| *o = v);
    }
    out
}

pub fn denoise_row(x: &[f64], cfg: &EmdConfig) -> Vec<f64> {
    let (maxima, minima) = extrema(x);
    if maxima.len() + minima.len() < 4 {
        return x.to_vec();
    }
    match first_imf(x, cfg) {
        Some(imf) if crossing_rate(&imf) >= cfg.noise_crossing_rate => {
            x.iter().zip(&imf).map(|(a, b)| a - b).collect()
        }
        _ => x.to_vec(),
    }
}

/// Sifts out the first intrinsic mode function. `None` when the signal has
/// too few extrema to build both envelopes.
pub fn first_imf(x: &[f64], cfg: &EmdConfig) -> Option<Vec<f64>> {
    let (maxima, minima) = extrema(x);
    if maxima.len() < 2 || minima.len() < 2 {
        return None;
    }
    let mut h = x.to_vec();
    for _ in 0..cfg.max_sifts {
        let (maxima, minima) = extrema(&h);
        if maxima.len() < 2 || minima.len() < 2 {
            break;
        }
        let upper = envelope(&h, &maxima);
        let lower = envelope(&h, &minima);
        let next: Vec<f64> = h
            .iter()
            .zip(upper.iter().zip(&lower))
            .map(|(v, (u, l))| v - 0.5 * (u + l))
            .collect();
        let num: f64 = h.iter().zip(&next).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = h.iter().map(|a| a * a).sum();
        h = next;
        if den == 0.0 || num / den < cfg.sd_threshold {
            break;
        }
    }
    Some(h)
}

/// Indices of strict local maxima and minima; plateaus count once at
/// their first sample.
fn extrema(x: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut maxima = Vec::new();
    let mut minima = Vec::new();
    let n = x.len();
    if n < 3 {
        return (maxima, minima);
    }
    let mut i = 1;
    while i + 1 < n {
        // walk over a plateau
        let mut j = i;
        while j + 1 < n && x[j + 1] == x[i] {
            j += 1;
        }
        if j + 1 >= n {
            break;
        }
        if x[i] > x[i - 1] && x[i] > x[j + 1] {
            maxima.push(i);
        } else if x[i] < x[i - 1] && x[i] < x[j + 1] {
            minima.push(i);
        }
        i = j + 1;
    }
    (maxima, minima)
}

/// Natural cubic spline through the extrema, mirrored about both ends to
/// tame edge swing.
fn envelope(x: &[f64], idx: &[usize]) -> Vec<f64> {
    let n = x.len();
    let last = (n - 1) as f64;
    let mut knots: Vec<(f64, f64)> = Vec::with_capacity(idx.len() + 4);
    for &i in idx.iter().take(2).rev() {
        let t = -(i as f64);
        if t < 0.0 {
            knots.push((t, x[i]));
        }
    }
    knots.extend(idx.iter().map(|&i| (i as f64, x[i])));
    for &i in idx.iter().rev().take(2) {
        let t = 2.0 * last - i as f64;
        if t > last {
            knots.push((t, x[i]));
        }
    }
    let xs: Vec<f64> = knots.iter().map(|k| k.0).collect();
    let ys: Vec<f64> = knots.iter().map(|k| k.1).collect();
    natural_spline(&xs, &ys, n)
}

/// Evaluates the natural cubic spline through `(xs, ys)` at `0..n`.
fn natural_spline(xs: &[f64], ys: &[f64], n: usize) -> Vec<f64> {
    let k = xs.len();
    if k == 1 {
        return vec![ys[0]; n];
    }
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    // Second derivatives, with M_0 = M_{k-1} = 0 (Thomas algorithm).
    let mut m = vec![0.0; k];
    if k > 2 {
        let size = k - 2;
        let mut diag = vec![0.0; size];
        let mut rhs = vec![0.0; size];
        let mut upper = vec![0.0; size];
        for i in 0..size {
            diag[i] = 2.0 * (h[i] + h[i + 1]);
            upper[i] = h[i + 1];
            rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h[i + 1] - (ys[i + 1] - ys[i]) / h[i]);
        }
        for i in 1..size {
            let w = h[i] / diag[i - 1];
            diag[i] -= w * upper[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        m[size] = rhs[size - 1] / diag[size - 1];
        for i in (0..size - 1).rev() {
            m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
        }
    }
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for t in 0..n {
        let t = t as f64;
        while seg + 2 < k && t > xs[seg + 1] {
            seg += 1;
        }
        let (x0, x1) = (xs[seg], xs[seg + 1]);
        let hh = x1 - x0;
        let a = (x1 - t) / hh;
        let b = (t - x0) / hh;
        out.push(
            a * ys[seg]
                + b * ys[seg + 1]
                + ((a * a * a - a) * m[seg] + (b * b * b - b) * m[seg + 1]) * hh * hh / 6.0,
        );
    }
    out
}

fn crossing_rate(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let crossings = x
        .windows(2)
        .filter(|w| (w[0] < 0.0 && w[1] >= 0.0) || (w[0] >= 0.0 && w[1] < 0.0))
        .count();
    crossings as f64 / (x.len() - 1) as f64
}
