//! Echo to map conversion: range profiles, MTI, STFT, EMD denoising and
//! squared-axis resampling.

mod emd;
mod export;
mod square;
mod stft;
mod zoom;

use ndarray::{Array2, LinalgScalar};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{EchoMatrix, RadarParams, SPEED_OF_LIGHT};

pub use emd::{denoise_row, emd_denoise, first_imf, EmdConfig};
pub use export::{map_to_pgm, read_pgm, write_axis_csv, write_map_pgm};
pub use square::{
    interp_rows, resample_columns, square_doppler, square_range, squared_doppler_axis,
    squared_range_axis, AxisKind, SquareConfig, SquaredAxisMap,
};
pub use stft::{centred_axis, centred_magnitude, stft_frames, StftConfig, WindowKind};
pub use zoom::ZoomDft;

#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub data: Array2<f64>,
    /// Set when the input was constant; `data` is then all zeros.
    pub degenerate: bool,
}

/// Min-max scaling to [0, 1].
pub fn normalize(x: &Array2<f64>) -> Normalized {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if x.is_empty() || !(hi > lo) {
        return Normalized {
            data: Array2::zeros(x.raw_dim()),
            degenerate: true,
        };
    }
    let scale = 1.0 / (hi - lo);
    Normalized {
        data: x.mapv(|v| ((v - lo) * scale).clamp(0.0, 1.0)),
        degenerate: false,
    }
}

/// Slow-time first difference, `out[:, m] = x[:, m+1] − x[:, m]`, with the
/// last column repeated so the width stays `M`.
pub fn mti<T>(x: &Array2<T>) -> Result<Array2<T>>
where
    T: LinalgScalar,
{
    let (rows, cols) = x.dim();
    if cols < 2 {
        return Err(Error::Shape(format!("MTI needs at least 2 columns, got {cols}")));
    }
    let mut out = Array2::<T>::zeros((rows, cols));
    for r in 0..rows {
        for m in 0..cols - 1 {
            out[[r, m]] = x[[r, m + 1]] - x[[r, m]];
        }
        out[[r, cols - 1]] = out[[r, cols - 2]];
    }
    Ok(out)
}

/// Complex range profiles, `range_bins x num_pri`. Row `k` is range
/// `lo + k · (hi − lo) / range_bins` inside the radar's range window.
pub fn range_profiles(echo: &EchoMatrix) -> Result<Array2<Complex64>> {
    let p = &echo.params;
    p.validate()?;
    let (n, m) = echo.data.dim();
    if n != p.fast_samples || m != p.num_pri {
        return Err(Error::Shape(format!(
            "echo is {n}x{m}, radar expects {}x{}",
            p.fast_samples, p.num_pri
        )));
    }
    let per_metre = 2.0 * p.chirp_slope() * p.fast_dt() / SPEED_OF_LIGHT;
    let zoom = ZoomDft::new(
        n,
        p.range_bins,
        per_metre * p.range_window_m[0],
        per_metre * p.range_bin_m(),
    );
    let mut out = Array2::zeros((p.range_bins, m));
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    let mut prof = vec![Complex64::new(0.0, 0.0); p.range_bins];
    let mut scratch = Vec::new();
    for j in 0..m {
        col.iter_mut().zip(echo.data.column(j)).for_each(|(c, v)| *c = *v);
        zoom.process(&col, &mut prof, &mut scratch);
        out.column_mut(j).iter_mut().zip(&prof).for_each(|(o, v)| *o = *v);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RangeTimeMap {
    /// `range_bins x num_pri`, values in [0, 1].
    pub data: Array2<f64>,
    pub range_axis_m: Vec<f64>,
    pub time_axis_s: Vec<f64>,
    pub range_max_m: f64,
    pub duration_s: f64,
    pub degenerate: bool,
}

impl RangeTimeMap {
    fn from_magnitude(mag: &Array2<f64>, p: &RadarParams) -> Self {
        let n = normalize(mag);
        RangeTimeMap {
            data: n.data,
            range_axis_m: (0..p.range_bins)
                .map(|k| p.range_window_m[0] + k as f64 * p.range_bin_m())
                .collect(),
            time_axis_s: (0..p.num_pri).map(|m| m as f64 * p.pri_s()).collect(),
            range_max_m: p.range_window_m[1],
            duration_s: p.observation_s,
            degenerate: n.degenerate,
        }
    }
}

/// Normalized modulus of the range profiles.
pub fn build_rtm(echo: &EchoMatrix) -> Result<RangeTimeMap> {
    let prof = range_profiles(echo)?;
    Ok(RangeTimeMap::from_magnitude(&prof.mapv(|v| v.norm()), &echo.params))
}

/// Range-time map with clutter cancelled: MTI on the complex profiles,
/// then modulus and normalization.
pub fn build_mti_rtm(echo: &EchoMatrix) -> Result<RangeTimeMap> {
    let prof = range_profiles(echo)?;
    rtm_from_profiles(&prof, &echo.params)
}

fn rtm_from_profiles(prof: &Array2<Complex64>, p: &RadarParams) -> Result<RangeTimeMap> {
    let diff = mti(prof)?;
    Ok(RangeTimeMap::from_magnitude(&diff.mapv(|v| v.norm()), p))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DopplerTimeMap {
    /// `(wl − 1) x frames`, rows by ascending Doppler, values in [0, 1].
    pub data: Array2<f64>,
    pub doppler_axis_hz: Vec<f64>,
    /// Centre time of each STFT frame.
    pub time_axis_s: Vec<f64>,
    pub stft: StftConfig,
    pub carrier_freq_hz: f64,
    pub duration_s: f64,
    pub degenerate: bool,
}

/// Slow-time sequence summed over the range window, one value per PRI.
pub fn slow_time_sequence(prof: &Array2<Complex64>) -> Vec<Complex64> {
    prof.columns().into_iter().map(|c| c.sum()).collect()
}

/// Doppler-time map: range-window sum, slow-time MTI, STFT, modulus and
/// normalization.
pub fn build_dtm(echo: &EchoMatrix, cfg: &StftConfig) -> Result<DopplerTimeMap> {
    cfg.validate(echo.params.num_pri)?;
    let prof = range_profiles(echo)?;
    dtm_from_profiles(&prof, &echo.params, cfg)
}

fn dtm_from_profiles(
    prof: &Array2<Complex64>,
    p: &RadarParams,
    cfg: &StftConfig,
) -> Result<DopplerTimeMap> {
    cfg.validate(p.num_pri)?;
    let seq = slow_time_sequence(prof);
    let seq = Array2::from_shape_vec((1, seq.len()), seq).expect("row vector");
    let seq = mti(&seq)?;
    let frames = stft_frames(seq.as_slice().expect("contiguous"), cfg)?;
    let n = normalize(&centred_magnitude(&frames));
    let pri = p.pri_s();
    Ok(DopplerTimeMap {
        data: n.data,
        doppler_axis_hz: centred_axis(cfg.window_length, p.prf_hz()),
        time_axis_s: (0..frames.ncols())
            .map(|f| (f * cfg.hop()) as f64 * pri + 0.5 * cfg.window_length as f64 * pri)
            .collect(),
        stft: cfg.clone(),
        carrier_freq_hz: p.carrier_freq_hz,
        duration_s: p.observation_s,
        degenerate: n.degenerate,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub stft: StftConfig,
    pub emd: EmdConfig,
    pub emd_enabled: bool,
    pub square: SquareConfig,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            stft: StftConfig::default(),
            emd: EmdConfig::default(),
            emd_enabled: true,
            square: SquareConfig::default(),
        }
    }
}

/// R²TM and D²TM of one echo.
#[derive(Clone, Debug, PartialEq)]
pub struct MapPair {
    pub r2tm: SquaredAxisMap,
    pub d2tm: SquaredAxisMap,
}

fn denoise(data: Array2<f64>, cfg: &PreprocessConfig) -> (Array2<f64>, bool) {
    if !cfg.emd_enabled {
        return (data, false);
    }
    let n = normalize(&emd_denoise(&data, &cfg.emd));
    (n.data, n.degenerate)
}

pub fn preprocess_echo(echo: &EchoMatrix, cfg: &PreprocessConfig) -> Result<MapPair> {
    let prof = range_profiles(echo)?;
    let p = &echo.params;

    let mut rtm = rtm_from_profiles(&prof, p)?;
    let (data, degenerate) = denoise(rtm.data, cfg);
    rtm.data = data;
    rtm.degenerate |= degenerate;

    let mut dtm = dtm_from_profiles(&prof, p, &cfg.stft)?;
    let (data, degenerate) = denoise(dtm.data, cfg);
    dtm.data = data;
    dtm.degenerate |= degenerate;

    Ok(MapPair {
        r2tm: square_range(&rtm, &cfg.square),
        d2tm: square_doppler(&dtm, &cfg.square),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{
        add_wall_and_noise, build_trajectory, synthesize_echo, ActivityClass, BodyTrajectory,
        SceneConfig,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn small_radar() -> RadarParams {
        RadarParams {
            num_pri: 128,
            fast_samples: 256,
            range_bins: 64,
            ..RadarParams::default()
        }
    }

    #[test]
    fn normalize_examples() {
        let x = Array2::from_shape_vec((2, 2), vec![0.0, 2.0, 4.0, 6.0]).unwrap();
        let n = normalize(&x);
        assert!(!n.degenerate);
        let want = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, b) in n.data.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let c = normalize(&Array2::from_elem((3, 3), 5.0));
        assert!(c.degenerate);
        assert!(c.data.iter().all(|&v| v == 0.0));
        let unit = Array2::from_shape_vec((1, 3), vec![0.0, 0.25, 1.0]).unwrap();
        assert_eq!(normalize(&unit).data, unit);
    }

    #[test]
    fn mti_examples() {
        let constant = Array2::from_elem((4, 6), 3.5);
        assert!(mti(&constant).unwrap().iter().all(|&v| v == 0.0));
        let ramp = Array2::from_shape_fn((3, 5), |(r, m)| m as f64 * (r as f64 + 1.0));
        let d = mti(&ramp).unwrap();
        for r in 0..3 {
            assert!(d.row(r).iter().all(|&v| v == r as f64 + 1.0));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((5, 7), |_| rng.random_range(-1.0..1.0));
        let d = mti(&x).unwrap();
        for r in 0..5 {
            for m in 0..6 {
                assert_eq!(d[[r, m]], x[[r, m + 1]] - x[[r, m]]);
            }
            assert_eq!(d[[r, 6]], d[[r, 5]]);
        }
        assert!(mti(&Array2::<f64>::zeros((3, 1))).is_err());
    }

    #[test]
    fn static_point_peaks_at_its_range_bin() {
        let radar = RadarParams {
            num_pri: 8,
            ..RadarParams::default()
        };
        let echo = synthesize_echo(&BodyTrajectory::point(2.0, 1.0, 8), &radar).unwrap();
        let rtm = build_rtm(&echo).unwrap();
        for col in rtm.data.columns() {
            let argmax = (0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
            assert_eq!(argmax, 512);
        }
    }

    #[test]
    fn profile_peak_ratio_tracks_amplitude() {
        let radar = RadarParams {
            num_pri: 2,
            ..RadarParams::default()
        };
        let mut traj = BodyTrajectory::point(1.5, 1.0, 2);
        traj.node_ranges_m.row_mut(1).fill(2.7);
        traj.node_amplitudes[1] = 2.0;
        let prof = range_profiles(&synthesize_echo(&traj, &radar).unwrap()).unwrap();
        let a = prof[[(1.5 / radar.range_bin_m()) as usize, 0]].norm();
        let b = prof[[(2.7 / radar.range_bin_m()).round() as usize, 0]].norm();
        assert!((b / a - 2.0).abs() < 0.05, "ratio {}", b / a);
    }

    #[test]
    fn zero_echo_is_degenerate() {
        let radar = small_radar();
        let echo = EchoMatrix::zeros(&radar);
        assert!(build_rtm(&echo).unwrap().degenerate);
        assert!(build_dtm(&echo, &StftConfig { window_length: 32, overlap: 24, ..StftConfig::default() })
            .unwrap()
            .degenerate);
    }

    #[test]
    fn mti_annihilates_static_scene() {
        let radar = small_radar();
        let scene = SceneConfig {
            target_snr_db: None,
            ..SceneConfig::default()
        };
        let (echo, _) = add_wall_and_noise(
            &synthesize_echo(&BodyTrajectory::point(2.2, 1.0, radar.num_pri), &radar).unwrap(),
            &scene,
            0,
        )
        .unwrap();
        let prof = range_profiles(&echo).unwrap();
        let energy: f64 = prof.iter().map(|v| v.norm_sqr()).sum();
        let diff = mti(&prof).unwrap();
        assert!(diff.iter().all(|v| v.norm() <= 1e-12 * energy.sqrt()));
        let rtm = build_rtm(&echo).unwrap();
        assert!(mti(&rtm.data).unwrap().iter().all(|v| v.abs() <= 1e-12));
        let dtm = build_dtm(&echo, &StftConfig { window_length: 32, overlap: 24, ..StftConfig::default() })
            .unwrap();
        assert!(dtm.degenerate);
    }

    #[test]
    fn moving_point_ridge_slope_matches_velocity() {
        let radar = RadarParams {
            fast_samples: 256,
            ..RadarParams::default()
        };
        let v = 0.25;
        let traj = BodyTrajectory::constant_velocity(1.5, v, &radar);
        let rtm = build_mti_rtm(&synthesize_echo(&traj, &radar).unwrap()).unwrap();
        let peak = |m: usize| {
            let col = rtm.data.column(m);
            (0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap() as f64
        };
        let bins = peak(radar.num_pri - 2) - peak(0);
        let expected = v * radar.observation_s / radar.range_bin_m();
        assert!((bins - expected).abs() <= 1.0, "{bins} vs {expected}");
    }

    #[test]
    fn doppler_ridge_at_two_v_fc_over_c() {
        let radar = RadarParams {
            fast_samples: 256,
            ..RadarParams::default()
        };
        for v in [0.5, -0.6, 0.7] {
            let start = if v > 0.0 { 1.0 } else { 3.9 };
            let traj = BodyTrajectory::constant_velocity(start, v, &radar);
            let dtm = build_dtm(&synthesize_echo(&traj, &radar).unwrap(), &StftConfig::default()).unwrap();
            let fd = 2.0 * v * radar.carrier_freq_hz / SPEED_OF_LIGHT;
            let bin = radar.prf_hz() / 128.0;
            for f in 0..dtm.data.ncols() {
                let col = dtm.data.column(f);
                let argmax = (0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
                assert!((dtm.doppler_axis_hz[argmax] - fd).abs() <= bin, "frame {f}: {} vs {fd}", dtm.doppler_axis_hz[argmax]);
            }
        }
    }

    /// Independent single-shot oracle: direct range sum, direct difference
    /// and a naive DFT per frame.
    fn oracle_dtm(echo: &EchoMatrix, cfg: &StftConfig) -> Array2<f64> {
        let p = &echo.params;
        let (n, m) = echo.data.dim();
        let per_metre = 2.0 * p.chirp_slope() * p.fast_dt() / SPEED_OF_LIGHT;
        let half = (n / 2) as f64;
        let seq: Vec<Complex64> = (0..m)
            .map(|j| {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..p.range_bins {
                    let nu = per_metre * (p.range_window_m[0] + k as f64 * p.range_bin_m());
                    for i in 0..n {
                        acc += echo.data[[i, j]]
                            * Complex64::from_polar(1.0, -2.0 * PI * nu * (i as f64 - half));
                    }
                }
                acc
            })
            .collect();
        let mut diff: Vec<Complex64> = (0..m - 1).map(|j| seq[j + 1] - seq[j]).collect();
        diff.push(diff[m - 2]);
        let wl = cfg.window_length;
        let hop = wl - cfg.overlap;
        let frames = (m - wl) / hop + 1;
        let mut out = Array2::zeros((wl - 1, frames));
        for f in 0..frames {
            for row in 0..wl - 1 {
                let bin = row as f64 + 1.0 - (wl / 2) as f64;
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..wl {
                    let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / wl as f64).cos();
                    acc += diff[f * hop + i] * w * Complex64::from_polar(1.0, -2.0 * PI * bin * i as f64 / wl as f64);
                }
                out[[row, f]] = acc.norm();
            }
        }
        let (lo, hi) = out.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        out.mapv(|v| (v - lo) / (hi - lo))
    }

    #[test]
    fn dtm_matches_naive_oracle() {
        let radar = small_radar();
        let cfg = StftConfig {
            window_length: 32,
            overlap: 24,
            window: WindowKind::Hann,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..3 {
            let mut echo = EchoMatrix::zeros(&radar);
            echo.data.mapv_inplace(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let dtm = build_dtm(&echo, &cfg).unwrap();
            let oracle = oracle_dtm(&echo, &cfg);
            assert_eq!(dtm.data.dim(), oracle.dim());
            let err = dtm.data.iter().zip(oracle.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-9, "max error {err}");
        }
    }

    #[test]
    fn pipeline_shape_contract() {
        let radar = RadarParams {
            num_pri: 256,
            fast_samples: 256,
            range_bins: 256,
            ..RadarParams::default()
        };
        let scene = SceneConfig::default();
        let traj = build_trajectory(ActivityClass::S2, &scene, &radar, 3);
        let (echo, _) = add_wall_and_noise(&synthesize_echo(&traj, &radar).unwrap(), &scene, 3).unwrap();
        let pair = preprocess_echo(&echo, &PreprocessConfig::default()).unwrap();
        for map in [&pair.r2tm, &pair.d2tm] {
            assert_eq!(map.data.dim(), (256, 256));
            assert!(map.data.iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(map.axis_values.len(), 256);
            assert!(map.axis_values.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn doppler_bandwidth_grows_with_height() {
        let radar = RadarParams {
            fast_samples: 256,
            ..RadarParams::default()
        };
        let bandwidth = |h: f64| {
            let scene = SceneConfig {
                target_snr_db: None,
                ..SceneConfig::default()
            }
            .with_height(h);
            let traj = build_trajectory(ActivityClass::S8, &scene, &radar, 12);
            let dtm = build_dtm(&synthesize_echo(&traj, &radar).unwrap(), &StftConfig::default()).unwrap();
            let rows: Vec<usize> = (0..dtm.data.nrows())
                .filter(|&r| dtm.data.row(r).iter().any(|&v| v >= 0.1))
                .collect();
            dtm.doppler_axis_hz[*rows.last().unwrap()] - dtm.doppler_axis_hz[rows[0]]
        };
        let widths: Vec<f64> = [1.44, 1.62, 1.8].iter().map(|&h| bandwidth(h)).collect();
        assert!(widths.windows(2).all(|w| w[1] >= w[0]), "{widths:?}");
    }
}
