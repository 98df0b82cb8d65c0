//! Piecewise least-squares polynomial smoothing along map rows.

use nalgebra::DMatrix;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fits are rejected when the column-scaled Vandermonde matrix is worse
/// conditioned than this.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    /// `P`; the window is `Win = 2P + 1` samples.
    pub half_window: usize,
    pub order: usize,
    pub max_window_growth_steps: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            half_window: 9,
            order: 17,
            max_window_growth_steps: 8,
        }
    }
}

impl SmoothingConfig {
    pub fn window(&self) -> usize {
        2 * self.half_window + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::Config("polynomial order must be at least 1".into()));
        }
        if self.window() <= self.order {
            return Err(Error::Config(format!(
                "window {} must exceed polynomial order {}",
                self.window(),
                self.order
            )));
        }
        Ok(())
    }
}

/// Abscissae of a slice of `len` samples, centred on zero. Odd lengths give
/// the integers `−P..=P`.
fn abscissae(len: usize) -> Vec<f64> {
    let c = (len as f64 - 1.0) / 2.0;
    (0..len).map(|i| i as f64 - c).collect()
}

/// Vandermonde matrix in the variable `t / scale`, so every column has
/// entries in [−1, 1].
fn scaled_vandermonde(t: &[f64], order: usize) -> (DMatrix<f64>, f64) {
    let scale = t.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let m = DMatrix::from_fn(t.len(), order + 1, |i, k| (t[i] / scale).powi(k as i32));
    (m, scale)
}

fn condition(a: &DMatrix<f64>) -> f64 {
    let sv = a.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Least-squares coefficients `a_k` of `Σ a_k t^k` over the centred slice
/// abscissae (integers `−P..=P` for odd lengths).
pub fn sg_fit_slice(x: &[f64], order: usize) -> Result<Vec<f64>> {
    if x.len() <= order {
        return Err(Error::Config(format!(
            "slice of {} samples cannot determine order {order}",
            x.len()
        )));
    }
    let t = abscissae(x.len());
    let (a, scale) = scaled_vandermonde(&t, order);
    let cond = condition(&a);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::SingularSystem { condition: cond });
    }
    let qr = a.qr();
    let q = qr.q();
    let r = qr.r();
    let rhs = q.transpose() * DMatrix::from_column_slice(x.len(), 1, x);
    let b = r
        .solve_upper_triangular(&rhs)
        .ok_or(Error::SingularSystem { condition: cond })?;
    Ok((0..=order).map(|k| b[(k, 0)] / scale.powi(k as i32)).collect())
}

/// Evaluates `Σ a_k t^k` at the slice abscissae.
pub fn eval_fit(a: &[f64], len: usize) -> Vec<f64> {
    abscissae(len)
        .iter()
        .map(|&t| a.iter().rev().fold(0.0, |acc, &c| acc * t + c))
        .collect()
}

/// Projection onto polynomials of degree `order` over `len` samples
/// (`H = Q Qᵀ`, `len x len`). Row `i` holds the smoothing weights for
/// sample `i`.
pub fn hat_matrix(len: usize, order: usize) -> Result<DMatrix<f64>> {
    let t = abscissae(len);
    let (a, _) = scaled_vandermonde(&t, order);
    let cond = condition(&a);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::SingularSystem { condition: cond });
    }
    let q = a.qr().q();
    Ok(&q * q.transpose())
}

/// Replaces each row, slice by slice, with its polynomial fit. The final
/// slice of a row may be shorter than the window; it is fitted with order
/// `min(order, len − 1)`.
pub fn sg_smooth_map(map: &Array2<f64>, cfg: &SmoothingConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let win = cfg.window();
    let cols = map.ncols();
    let full = hat_matrix(win, cfg.order)?;
    let tail_len = cols % win;
    let tail = if tail_len > 0 {
        Some(hat_matrix(tail_len, cfg.order.min(tail_len - 1))?)
    } else {
        None
    };
    let mut out = Array2::zeros(map.raw_dim());
    for (r, row) in map.rows().into_iter().enumerate() {
        let mut start = 0;
        while start < cols {
            let len = win.min(cols - start);
            let h = if len == win { &full } else { tail.as_ref().expect("tail slice") };
            for i in 0..len {
                let mut acc = 0.0;
                for j in 0..len {
                    acc += h[(i, j)] * row[start + j];
                }
                out[[r, start + i]] = acc;
            }
            start += len;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force pseudo-inverse through the normal equations, solved by
    /// Gauss–Jordan elimination on the exact integer Vandermonde matrix.
    fn normal_equation_weights(p: i64, order: usize) -> Vec<f64> {
        let n = (2 * p + 1) as usize;
        let a: Vec<Vec<f64>> = (-p..=p)
            .map(|i| (0..=order).map(|k| (i as f64).powi(k as i32)).collect())
            .collect();
        let m = order + 1;
        // [AᵀA | Aᵀ]
        let mut aug = vec![vec![0.0; m + n]; m];
        for r in 0..m {
            for c in 0..m {
                aug[r][c] = (0..n).map(|i| a[i][r] * a[i][c]).sum();
            }
            for i in 0..n {
                aug[r][m + i] = a[i][r];
            }
        }
        for col in 0..m {
            let piv = (col..m).max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs())).unwrap();
            aug.swap(col, piv);
            let d = aug[col][col];
            for v in aug[col].iter_mut() {
                *v /= d;
            }
            for r in 0..m {
                if r != col {
                    let f = aug[r][col];
                    let pivot_row = aug[col].clone();
                    for (v, pv) in aug[r].iter_mut().zip(pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
        // centre value = a_0, so the weights are row 0 of A⁺
        (0..n).map(|i| aug[0][m + i]).collect()
    }

    #[test]
    fn classic_five_point_quadratic_weights() {
        let oracle = normal_equation_weights(2, 2);
        let expected = [-3.0, 12.0, 17.0, 12.0, -3.0].map(|v| v / 35.0);
        for (o, e) in oracle.iter().zip(expected) {
            assert!((o - e).abs() < 1e-12);
        }
        let h = hat_matrix(5, 2).unwrap();
        for j in 0..5 {
            assert!((h[(2, j)] - oracle[j]).abs() <= 1e-10);
        }
    }

    #[test]
    fn reproduces_degree_seventeen_polynomials() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for order in [2usize, 9, 17] {
            let coeffs: Vec<f64> = (0..=order).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x: Vec<f64> = (-9..=9)
                .map(|i| {
                    let t = i as f64 / 9.0;
                    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
                })
                .collect();
            let a = sg_fit_slice(&x, 17).unwrap();
            let fit = eval_fit(&a, 19);
            let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (f, v) in fit.iter().zip(&x) {
                assert!((f - v).abs() <= 1e-6 * scale, "order {order}: {f} vs {v}");
            }
        }
    }

    #[test]
    fn constant_slice_gives_constant_coefficients() {
        let a = sg_fit_slice(&[2.5; 7], 3).unwrap();
        assert!((a[0] - 2.5).abs() < 1e-12);
        assert!(a[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn fitting_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..19).map(|_| rng.random_range(-1.0..1.0)).collect();
        let once = eval_fit(&sg_fit_slice(&x, 17).unwrap(), 19);
        let twice = eval_fit(&sg_fit_slice(&once, 17).unwrap(), 19);
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn underdetermined_slice_is_rejected() {
        assert!(sg_fit_slice(&[1.0; 5], 5).is_err());
        assert!(SmoothingConfig { half_window: 8, ..SmoothingConfig::default() }.validate().is_err());
    }

    #[test]
    fn smoothing_examples() {
        let cfg = SmoothingConfig::default();
        let poly = Array2::from_shape_fn((4, 256), |(r, c)| {
            let t = (c % 19) as f64 / 19.0;
            (r as f64 + 1.0) * (0.2 + t - 0.5 * t * t + 0.1 * t.powi(7))
        });
        let out = sg_smooth_map(&poly, &cfg).unwrap();
        for (a, b) in out.iter().zip(poly.iter()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
        assert!(sg_smooth_map(&Array2::zeros((8, 256)), &cfg).unwrap().iter().all(|&v| v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Array2::from_shape_fn((16, 256), |_| rng.random_range(-1.0..1.0));
        let smooth = sg_smooth_map(&noise, &cfg).unwrap();
        let var = |row: ndarray::ArrayView1<f64>| {
            let m = row.mean().unwrap();
            row.iter().map(|v| (v - m).powi(2)).sum::<f64>()
        };
        for r in 0..16 {
            assert!(var(smooth.row(r)) < var(noise.row(r)));
        }
    }
}
