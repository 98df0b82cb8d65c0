//! Brute-force t-SNE for a handful of group vectors.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// Number of group vectors embedded together.
    pub bat: usize,
    /// Gaussian kernel width of the input affinities.
    pub sigma: f64,
    pub iterations: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            bat: 4,
            sigma: 2f64.powf(0.25),
            iterations: 300,
            step_size: 10.0,
            seed: 0,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bat < 2 {
            return Err(Error::Config("bat must be at least 2".into()));
        }
        if !(self.sigma > 0.0) || !(self.step_size > 0.0) {
            return Err(Error::Config("sigma and step_size must be positive".into()));
        }
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Planar embedding with its centroid and radius (largest squared distance
/// to the centroid).
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding2D {
    pub points: Vec<[f64; 2]>,
    pub center: [f64; 2],
    pub radius: f64,
    /// KL divergence after every accepted step, starting with the initial
    /// configuration.
    pub kl_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Symmetrized Gaussian affinities `p_ij = (p_j|i + p_i|j) / 2n`.
pub fn conditional_probs(u: &[Vec<f64>], sigma: f64) -> Array2<f64> {
    let n = u.len();
    let mut cond = Array2::zeros((n, n));
    for i in 0..n {
        // shift by the nearest distance so the kernel never underflows
        let d: Vec<f64> = (0..n).map(|j| sq_dist(&u[i], &u[j])).collect();
        let dmin = (0..n).filter(|&j| j != i).map(|j| d[j]).fold(f64::INFINITY, f64::min);
        let mut sum = 0.0;
        for j in (0..n).filter(|&j| j != i) {
            let w = (-(d[j] - dmin) / (2.0 * sigma * sigma)).exp();
            cond[[i, j]] = w;
            sum += w;
        }
        cond.row_mut(i).mapv_inplace(|v| v / sum);
    }
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[[i, j]] = (cond[[i, j]] + cond[[j, i]]) / (2.0 * n as f64);
            }
        }
    }
    p
}

/// Student-t affinities of planar points.
pub fn low_dim_affinities(y: &[[f64; 2]]) -> Array2<f64> {
    let n = y.len();
    let mut q = Array2::zeros((n, n));
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let w = 1.0 / (1.0 + sq_dist(&y[i], &y[j]));
                q[[i, j]] = w;
                sum += w;
            }
        }
    }
    q.mapv_inplace(|v| v / sum);
    q
}

/// `KL(P ‖ Q)`; pairs with `p_ij = 0` contribute nothing.
pub fn kl_divergence(p: &Array2<f64>, y: &[[f64; 2]]) -> f64 {
    let q = low_dim_affinities(y);
    p.iter()
        .zip(q.iter())
        .filter(|(&pv, _)| pv > 0.0)
        .map(|(&pv, &qv)| pv * (pv / qv).ln())
        .sum()
}

/// `∂KL/∂y_i = 4 Σ_j (p_ij − q_ij)(y_i − y_j) / (1 + ‖y_i − y_j‖²)`.
pub fn kl_gradient(p: &Array2<f64>, y: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let q = low_dim_affinities(y);
    let n = y.len();
    let mut g = vec![[0.0; 2]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let w = 4.0 * (p[[i, j]] - q[[i, j]]) / (1.0 + sq_dist(&y[i], &y[j]));
            g[i][0] += w * (y[i][0] - y[j][0]);
            g[i][1] += w * (y[i][1] - y[j][1]);
        }
    }
    g
}

/// Seeded Gaussian start with standard deviation 1e-2.
pub fn initial_embedding(n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1e-2).expect("valid deviation");
    (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect()
}

fn centroid_radius(y: &[[f64; 2]]) -> ([f64; 2], f64) {
    let n = y.len() as f64;
    let c = [
        y.iter().map(|p| p[0]).sum::<f64>() / n,
        y.iter().map(|p| p[1]).sum::<f64>() / n,
    ];
    let r = y.iter().map(|p| sq_dist(p, &c)).fold(0.0, f64::max);
    (c, r)
}

/// Student-t weights `w_ij = 1/(1+‖y_i−y_j‖²)` into `w`, returning the KL
/// divergence against the flat `n x n` matrix `p`.
fn kl_and_weights(p: &[f64], y: &[[f64; 2]], w: &mut [f64]) -> f64 {
    let n = y.len();
    let mut z = 0.0;
    for i in 0..n {
        w[i * n + i] = 0.0;
        for j in i + 1..n {
            let v = 1.0 / (1.0 + sq_dist(&y[i], &y[j]));
            w[i * n + j] = v;
            w[j * n + i] = v;
            z += 2.0 * v;
        }
    }
    let mut kl = 0.0;
    for (&pv, &wv) in p.iter().zip(w.iter()) {
        if pv > 0.0 {
            kl += pv * (pv * z / wv).ln();
        }
    }
    w.iter_mut().for_each(|v| *v /= z);
    kl
}

/// Gradient descent on `KL(P ‖ Q)`. A step that would raise the divergence
/// is retried at half the step size, so the trace never increases.
pub fn tsne_descend(p: &Array2<f64>, y_init: &[[f64; 2]], cfg: &EmbeddingConfig) -> Result<Embedding2D> {
    let n = y_init.len();
    let p = p.as_standard_layout();
    let p = p.as_slice().expect("standard layout");
    let mut y = y_init.to_vec();
    let mut q = vec![0.0; n * n];
    let mut kl = kl_and_weights(p, &y, &mut q);
    let mut kl_trace = vec![kl];
    let mut step = cfg.step_size;
    let mut trial = y.clone();
    let mut trial_q = q.clone();
    let mut g = vec![[0.0; 2]; n];
    'outer: for it in 0..cfg.iterations {
        for i in 0..n {
            g[i] = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let unnorm = 1.0 / (1.0 + sq_dist(&y[i], &y[j]));
                let c = 4.0 * (p[i * n + j] - q[i * n + j]) * unnorm;
                g[i][0] += c * (y[i][0] - y[j][0]);
                g[i][1] += c * (y[i][1] - y[j][1]);
            }
        }
        if g.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(format!("t-SNE iteration {it}, KL {kl}")));
        }
        loop {
            for ((t, yi), gi) in trial.iter_mut().zip(&y).zip(&g) {
                *t = [yi[0] - step * gi[0], yi[1] - step * gi[1]];
            }
            let trial_kl = kl_and_weights(p, &trial, &mut trial_q);
            if trial_kl <= kl {
                std::mem::swap(&mut y, &mut trial);
                std::mem::swap(&mut q, &mut trial_q);
                kl = trial_kl;
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                kl_trace.push(kl);
                break 'outer;
            }
        }
        kl_trace.push(kl);
    }
    let (center, radius) = centroid_radius(&y);
    Ok(Embedding2D {
        points: y,
        center,
        radius,
        kl_trace,
    })
}
