//! Difference-of-Gaussians scale space and its local extrema.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Corner, CornerSet, MapSource};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DogConfig {
    pub sigma0: f64,
    /// Intra-octave scales `k`; each octave has `k + 3` Gaussian levels.
    pub scales_per_octave: usize,
    pub octaves: usize,
    pub contrast_threshold: f64,
    pub min_separation: f64,
    pub top_n: usize,
    /// Extrema closer than this many octave pixels to an edge are ignored;
    /// clamped blurring makes the outermost pixels unreliable.
    pub border: usize,
}

impl Default for DogConfig {
    fn default() -> Self {
        DogConfig {
            sigma0: 1.6,
            scales_per_octave: 4,
            octaves: 3,
            contrast_threshold: 0.01,
            min_separation: 3.0,
            top_n: 100,
            border: 5,
        }
    }
}

impl DogConfig {
    pub fn levels(&self) -> usize {
        self.scales_per_octave + 3
    }

    /// Blur of Gaussian level `i` relative to its octave's pixel grid.
    pub fn level_sigma(&self, i: usize) -> f64 {
        self.sigma0 * 2f64.powf(i as f64 / self.scales_per_octave as f64)
    }

    /// Characteristic scale of DoG level `i` of octave `o`, in input pixels:
    /// geometric mean of the two Gaussian levels it separates.
    pub fn dog_sigma(&self, octave: usize, i: usize) -> f64 {
        (self.level_sigma(i) * self.level_sigma(i + 1)).sqrt() * 2f64.powi(octave as i32)
    }
}

/// DoG levels per octave, each octave at half the previous resolution.
#[derive(Clone, Debug)]
pub struct DogPyramid {
    /// `octaves[o][i] = L_{i+1} − L_i`.
    pub octaves: Vec<Vec<Array2<f64>>>,
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (rows, cols) = img.dim();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (t, w) in k.iter().enumerate() {
                acc += w * img[[i, clamp(j as isize + t as isize - r, cols)]];
            }
            tmp[[i, j]] = acc;
        }
    }
    let mut out = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (t, w) in k.iter().enumerate() {
                acc += w * tmp[[clamp(i as isize + t as isize - r, rows), j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

fn downsample(img: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = img.dim();
    Array2::from_shape_fn((rows.div_ceil(2), cols.div_ceil(2)), |(i, j)| img[[2 * i, 2 * j]])
}

pub fn dog_pyramid(map: &Array2<f64>, cfg: &DogConfig) -> DogPyramid {
    let levels = cfg.levels();
    let mut octaves = Vec::with_capacity(cfg.octaves);
    let mut base = map.clone();
    for o in 0..cfg.octaves {
        let gauss: Vec<Array2<f64>> = (0..levels)
            .map(|i| {
                let target = cfg.level_sigma(i);
                if o == 0 {
                    gaussian_blur(&base, target)
                } else {
                    // the base already carries sigma0
                    gaussian_blur(&base, (target * target - cfg.sigma0 * cfg.sigma0).max(0.0).sqrt())
                }
            })
            .collect();
        let dogs: Vec<Array2<f64>> = gauss.windows(2).map(|w| &w[1] - &w[0]).collect();
        let next = downsample(&gauss[cfg.scales_per_octave]);
        octaves.push(dogs);
        if next.nrows() < 2 || next.ncols() < 2 {
            break;
        }
        base = next;
    }
    DogPyramid { octaves }
}

/// All scale-space extrema of |DoG| above `threshold`, in input pixel
/// coordinates, before suppression.
pub fn scale_space_extrema(pyr: &DogPyramid, cfg: &DogConfig, threshold: f64, shape: (usize, usize)) -> Vec<Corner> {
    let mut out = Vec::new();
    let per_octave = cfg.levels() - 1;
    for (o, dogs) in pyr.octaves.iter().enumerate() {
        let factor = 1usize << o;
        for i in 1..dogs.len() - 1 {
            let d = &dogs[i];
            let (rows, cols) = d.dim();
            let b = cfg.border;
            for r in b.min(rows)..rows.saturating_sub(b) {
                for c in b.min(cols)..cols.saturating_sub(b) {
                    let v = d[[r, c]].abs();
                    if !(v >= threshold) || v == 0.0 {
                        continue;
                    }
                    let mut is_max = true;
                    'scan: for dl in [i - 1, i, i + 1] {
                        let layer = &dogs[dl];
                        for rr in r.saturating_sub(1)..=(r + 1).min(rows - 1) {
                            for cc in c.saturating_sub(1)..=(c + 1).min(cols - 1) {
                                if dl == i && rr == r && cc == c {
                                    continue;
                                }
                                if layer[[rr, cc]].abs() > v {
                                    is_max = false;
                                    break 'scan;
                                }
                            }
                        }
                    }
                    if is_max {
                        out.push(Corner {
                            row: (r * factor).min(shape.0 - 1),
                            col: (c * factor).min(shape.1 - 1),
                            response: v,
                            scale_index: o * per_octave + i,
                            sigma: cfg.dog_sigma(o, i),
                            source: MapSource::Range,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Ranks by response (ties: lower row, then lower column), drops any
/// candidate closer than `min_separation` to an accepted one, keeps `top_n`.
pub fn suppress(mut cands: Vec<Corner>, min_separation: f64, top_n: usize) -> Vec<Corner> {
    cands.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.row.cmp(&b.row))
            .then(a.col.cmp(&b.col))
            .then(a.scale_index.cmp(&b.scale_index))
    });
    let mut kept: Vec<Corner> = Vec::new();
    let min2 = min_separation * min_separation;
    for c in cands {
        if kept.len() >= top_n {
            break;
        }
        let clear = kept.iter().all(|k| {
            let dr = k.row as f64 - c.row as f64;
            let dc = k.col as f64 - c.col as f64;
            dr * dr + dc * dc >= min2
        });
        if clear {
            kept.push(c);
        }
    }
    kept
}

/// DoG extrema of a map with suppression and ranking.
pub fn detect_corners(map: &Array2<f64>, cfg: &DogConfig, threshold: f64, source: MapSource) -> CornerSet {
    let pyr = dog_pyramid(map, cfg);
    let mut cands = scale_space_extrema(&pyr, cfg, threshold, map.dim());
    for c in &mut cands {
        c.source = source;
    }
    CornerSet {
        corners: suppress(cands, cfg.min_separation, cfg.top_n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(size: usize, cr: f64, cc: f64, sigma: f64) -> Array2<f64> {
        Array2::from_shape_fn((size, size), |(r, c)| {
            let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
    }

    /// Location and level of the largest |DoG| over the whole stack.
    fn brute_max(pyr: &DogPyramid) -> (usize, usize, usize, usize, f64) {
        let mut best = (0, 0, 0, 0, f64::NEG_INFINITY);
        for (o, dogs) in pyr.octaves.iter().enumerate() {
            for (i, d) in dogs.iter().enumerate() {
                for ((r, c), v) in d.indexed_iter() {
                    if v.abs() > best.4 {
                        best = (o, i, r, c, v.abs());
                    }
                }
            }
        }
        best
    }

    #[test]
    fn constant_map_has_flat_pyramid() {
        let cfg = DogConfig::default();
        let pyr = dog_pyramid(&Array2::from_elem((64, 64), 0.4), &cfg);
        assert!(pyr.octaves.iter().flatten().all(|d| d.iter().all(|v| v.abs() < 1e-12)));
        let set = detect_corners(&Array2::from_elem((64, 64), 0.4), &cfg, cfg.contrast_threshold, MapSource::Range);
        assert!(set.corners.is_empty());
    }

    #[test]
    fn blob_peaks_at_matching_scale() {
        let cfg = DogConfig::default();
        let target = cfg.dog_sigma(0, 2);
        let pyr = dog_pyramid(&blob(128, 64.0, 64.0, target), &cfg);
        let (o, i, r, c, _) = brute_max(&pyr);
        let nearest = (0..pyr.octaves.len())
            .flat_map(|o| (0..pyr.octaves[o].len()).map(move |i| (o, i)))
            .min_by(|a, b| {
                let da = (cfg.dog_sigma(a.0, a.1) / target).ln().abs();
                let db = (cfg.dog_sigma(b.0, b.1) / target).ln().abs();
                da.total_cmp(&db)
            })
            .unwrap();
        assert_eq!((o, i), nearest);
        let f = 1 << o;
        assert!((r * f) as i64 - 64 <= 1 && 64 - ((r * f) as i64) <= 1);
        assert!((c * f) as i64 - 64 <= 1 && 64 - ((c * f) as i64) <= 1);
    }

    #[test]
    fn impulse_peaks_at_finest_scale() {
        let cfg = DogConfig::default();
        let mut img = Array2::zeros((64, 64));
        img[[30, 33]] = 1.0;
        let (o, i, r, c, _) = brute_max(&dog_pyramid(&img, &cfg));
        assert_eq!((o, i, r, c), (0, 0, 30, 33));
    }

    #[test]
    fn two_blobs_are_both_found() {
        let cfg = DogConfig::default();
        let img = blob(128, 40.0, 30.0, 3.0) + blob(128, 90.0, 100.0, 3.0);
        let set = detect_corners(&img, &cfg, cfg.contrast_threshold, MapSource::Doppler);
        assert!(set.corners.len() >= 2);
        for (br, bc) in [(40usize, 30usize), (90, 100)] {
            assert!(set.corners.iter().any(|k| k.row.abs_diff(br) <= 2 && k.col.abs_diff(bc) <= 2));
        }
    }

    #[test]
    fn top_one_is_global_extremum() {
        let cfg = DogConfig { top_n: 1, ..DogConfig::default() };
        let img = blob(128, 40.0, 30.0, 3.0) + 0.5 * blob(128, 90.0, 100.0, 3.0);
        let set = detect_corners(&img, &cfg, cfg.contrast_threshold, MapSource::Range);
        assert_eq!(set.corners.len(), 1);
        let pyr = dog_pyramid(&img, &cfg);
        let all = scale_space_extrema(&pyr, &cfg, 0.0, img.dim());
        let best = all.iter().map(|c| c.response).fold(0.0, f64::max);
        assert_eq!(set.corners[0].response, best);
    }

    #[test]
    fn suppression_respects_separation_and_ties() {
        let mk = |row, col, response| Corner {
            row,
            col,
            response,
            scale_index: 1,
            sigma: 2.0,
            source: MapSource::Range,
        };
        let kept = suppress(vec![mk(5, 5, 1.0), mk(5, 6, 1.0), mk(9, 9, 0.5), mk(4, 5, 1.0)], 3.0, 10);
        assert_eq!(kept.iter().map(|c| (c.row, c.col)).collect::<Vec<_>>(), vec![(4, 5), (9, 9)]);
    }
}
