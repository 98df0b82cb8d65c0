//! Resampling of map rows onto uniformly spaced squared coordinates.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{normalize, DopplerTimeMap, RangeTimeMap};
use crate::sim::SPEED_OF_LIGHT;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisKind {
    /// Rows uniform in r², m².
    RangeSquared,
    /// Rows uniform in v·|v|, (m/s)².
    SignedDopplerSquared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SquareConfig {
    pub size: usize,
    /// Velocity half-span of the squared Doppler axis.
    pub doppler_extent_mps: f64,
}

impl Default for SquareConfig {
    fn default() -> Self {
        SquareConfig {
            size: 256,
            doppler_extent_mps: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SquaredAxisMap {
    /// `size x size`, values in [0, 1].
    pub data: Array2<f64>,
    pub axis_kind: AxisKind,
    /// Squared-unit coordinate of every row.
    pub axis_values: Vec<f64>,
    pub time_axis_s: Vec<f64>,
    /// Linear-unit extent: `r_max` in metres or `V` in m/s.
    pub axis_max: f64,
    pub degenerate: bool,
}

impl SquaredAxisMap {
    /// Squared-unit span covered by the rows, used to map row indices to
    /// normalized coordinates.
    pub fn squared_extent(&self) -> f64 {
        self.axis_max * self.axis_max
    }
}

/// `s_j = j · r_max² / size`.
pub fn squared_range_axis(size: usize, r_max: f64) -> Vec<f64> {
    (0..size).map(|j| j as f64 * r_max * r_max / size as f64).collect()
}

/// Cell centres of `[−V², V²]`, symmetric about zero.
pub fn squared_doppler_axis(size: usize, v_max: f64) -> Vec<f64> {
    let span = 2.0 * v_max * v_max;
    (0..size)
        .map(|j| -v_max * v_max + (j as f64 + 0.5) * span / size as f64)
        .collect()
}

fn signed_sqrt(s: f64) -> f64 {
    s.signum() * s.abs().sqrt()
}

/// Linear interpolation of every column at the coordinates `at` along an
/// ascending row axis; values outside the axis clamp to the edge rows.
pub fn interp_rows(data: &Array2<f64>, axis: &[f64], at: &[f64]) -> Array2<f64> {
    assert_eq!(data.nrows(), axis.len());
    let cols = data.ncols();
    let mut out = Array2::zeros((at.len(), cols));
    for (j, &u) in at.iter().enumerate() {
        let (i0, i1, w) = bracket(axis, u);
        for c in 0..cols {
            out[[j, c]] = (1.0 - w) * data[[i0, c]] + w * data[[i1, c]];
        }
    }
    out
}

/// Neighbouring indices and the weight of the upper one.
fn bracket(axis: &[f64], u: f64) -> (usize, usize, f64) {
    let n = axis.len();
    if n == 1 || u <= axis[0] {
        return (0, 0, 0.0);
    }
    if u >= axis[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let hi = axis.partition_point(|&a| a <= u);
    let lo = hi - 1;
    (lo, hi, (u - axis[lo]) / (axis[hi] - axis[lo]))
}

/// Resamples columns onto `count` equal bins of `[0, duration]`. Bins are
/// averages of the inputs that fall inside them when every bin has one;
/// otherwise columns are interpolated at the bin centres.
pub fn resample_columns(
    data: &Array2<f64>,
    times: &[f64],
    count: usize,
    duration: f64,
) -> (Array2<f64>, Vec<f64>) {
    let rows = data.nrows();
    let centres: Vec<f64> = (0..count)
        .map(|c| (c as f64 + 0.5) * duration / count as f64)
        .collect();
    let bin_of = |t: f64| (((t / duration) * count as f64).floor().max(0.0) as usize).min(count - 1);
    let mut hits = vec![0usize; count];
    for &t in times {
        hits[bin_of(t)] += 1;
    }
    let mut out = Array2::zeros((rows, count));
    if hits.iter().all(|&h| h > 0) {
        for (i, &t) in times.iter().enumerate() {
            let b = bin_of(t);
            for r in 0..rows {
                out[[r, b]] += data[[r, i]];
            }
        }
        for (b, &h) in hits.iter().enumerate() {
            out.column_mut(b).mapv_inplace(|v| v / h as f64);
        }
    } else {
        for (b, &t) in centres.iter().enumerate() {
            let (i0, i1, w) = bracket(times, t);
            for r in 0..rows {
                out[[r, b]] = (1.0 - w) * data[[r, i0]] + w * data[[r, i1]];
            }
        }
    }
    (out, centres)
}

fn finish(
    rows: Array2<f64>,
    times: &[f64],
    duration: f64,
    cfg: &SquareConfig,
    axis_kind: AxisKind,
    axis_values: Vec<f64>,
    axis_max: f64,
) -> SquaredAxisMap {
    let (data, time_axis_s) = resample_columns(&rows, times, cfg.size, duration);
    let n = normalize(&data);
    SquaredAxisMap {
        data: n.data,
        axis_kind,
        axis_values,
        time_axis_s,
        axis_max,
        degenerate: n.degenerate,
    }
}

/// R²TM: rows uniform in r² over `[0, r_max²)`.
pub fn square_range(rtm: &RangeTimeMap, cfg: &SquareConfig) -> SquaredAxisMap {
    let r_max = rtm.range_max_m;
    let s = squared_range_axis(cfg.size, r_max);
    let u: Vec<f64> = s.iter().map(|v| v.sqrt()).collect();
    let rows = interp_rows(&rtm.data, &rtm.range_axis_m, &u);
    finish(rows, &rtm.time_axis_s, rtm.duration_s, cfg, AxisKind::RangeSquared, s, r_max)
}

/// D²TM: rows uniform in v·|v| over `[−V², V²]`.
pub fn square_doppler(dtm: &DopplerTimeMap, cfg: &SquareConfig) -> SquaredAxisMap {
    let v_max = cfg.doppler_extent_mps;
    let s = squared_doppler_axis(cfg.size, v_max);
    let u: Vec<f64> = s.iter().map(|&v| signed_sqrt(v)).collect();
    let lambda_half = SPEED_OF_LIGHT / (2.0 * dtm.carrier_freq_hz);
    let velocity: Vec<f64> = dtm.doppler_axis_hz.iter().map(|f| f * lambda_half).collect();
    let rows = interp_rows(&dtm.data, &velocity, &u);
    finish(
        rows,
        &dtm.time_axis_s,
        dtm.duration_s,
        cfg,
        AxisKind::SignedDopplerSquared,
        s,
        v_max,
    )
}
