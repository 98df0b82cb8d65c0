//! Reduction of corner candidates to a fixed-size subset by the spread of a
//! t-SNE embedding, and fusion of the range and Doppler subsets into one
//! three-dimensional point cloud.

mod tsne;

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corner::{Corner, CornerSet, MapSource};
use crate::error::{Error, Result};
use crate::preprocess::SquaredAxisMap;

pub use tsne::{
    conditional_probs, initial_embedding, kl_divergence, kl_gradient, low_dim_affinities, tsne_descend,
    Embedding2D, EmbeddingConfig,
};

/// Pixel coordinates are divided by this before embedding.
const COORD_SCALE: f64 = 255.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Corners kept per map.
    pub cor0: usize,
    /// Highest-response corners that seed the selection.
    pub init: usize,
    pub embedding: EmbeddingConfig,
    /// Evaluate candidates in seeded random order and vary the embedding
    /// start per step, instead of response order with one fixed start.
    pub stochastic: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            cor0: 30,
            init: 2,
            embedding: EmbeddingConfig::default(),
            stochastic: false,
        }
    }
}

/// Selected corners in admission order, with the radius history.
#[derive(Clone, Debug, PartialEq)]
pub struct Filtered {
    pub corners: CornerSet,
    /// Radius after each admission.
    pub radii: Vec<f64>,
    /// Whether each admission met `r′ ≥ r`; `false` marks a forced step.
    pub monotone: Vec<bool>,
}

/// Group vectors for a selection: corners are dealt round-robin into `bat`
/// groups, each flattened as (row, col) offsets from the selection centroid
/// (scaled to [0, 1] pixels) and zero-padded to `2 * cor0`.
pub fn group_vectors(selection: &[&Corner], bat: usize, cor0: usize) -> Vec<Vec<f64>> {
    let n = selection.len().max(1) as f64;
    let cr = selection.iter().map(|c| c.row as f64).sum::<f64>() / n;
    let cc = selection.iter().map(|c| c.col as f64).sum::<f64>() / n;
    let mut groups = vec![Vec::with_capacity(2 * cor0); bat];
    for (i, c) in selection.iter().enumerate() {
        let g = &mut groups[i % bat];
        g.push((c.row as f64 - cr) / COORD_SCALE);
        g.push((c.col as f64 - cc) / COORD_SCALE);
    }
    for g in &mut groups {
        g.resize(2 * cor0.max(selection.len()), 0.0);
    }
    groups
}

fn embedding_radius(selection: &[&Corner], cfg: &FilterConfig, y0: &[[f64; 2]]) -> Result<f64> {
    let u = group_vectors(selection, cfg.embedding.bat, cfg.cor0);
    let p = conditional_probs(&u, cfg.embedding.sigma);
    Ok(tsne_descend(&p, y0, &cfg.embedding)?.radius)
}

fn by_response(a: &Corner, b: &Corner) -> std::cmp::Ordering {
    b.response
        .total_cmp(&a.response)
        .then(a.row.cmp(&b.row))
        .then(a.col.cmp(&b.col))
        .then(a.scale_index.cmp(&b.scale_index))
}

/// Greedy selection of `cor0` corners. Starting from the `init` strongest,
/// each step embeds the selection plus every remaining candidate and admits
/// the candidate whose embedding radius `r′` is largest. Steps where no
/// candidate reaches the current radius still admit the best one and are
/// recorded as forced.
pub fn filter_corners(candidates: &CornerSet, cfg: &FilterConfig) -> Result<Filtered> {
    cfg.embedding.validate()?;
    let cor0 = cfg.cor0;
    if candidates.len() < cor0 {
        return Err(Error::Cardinality {
            found: candidates.len(),
            required: cor0,
        });
    }
    let mut pool: Vec<&Corner> = candidates.corners.iter().collect();
    pool.sort_by(|a, b| by_response(a, b));
    if pool.len() == cor0 {
        return Ok(Filtered {
            corners: CornerSet {
                corners: pool.into_iter().cloned().collect(),
            },
            radii: Vec::new(),
            monotone: Vec::new(),
        });
    }

    let start = cfg.init.clamp(1, cor0);
    let mut selected: Vec<&Corner> = pool.drain(..start).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.embedding.seed);
    let mut y0 = initial_embedding(cfg.embedding.bat, cfg.embedding.seed);
    let mut r = embedding_radius(&selected, cfg, &y0)?;
    let mut radii = Vec::with_capacity(cor0);
    let mut monotone = Vec::with_capacity(cor0);
    let mut trial: Vec<&Corner> = Vec::with_capacity(cor0);

    while selected.len() < cor0 {
        if cfg.stochastic {
            pool.shuffle(&mut rng);
            y0 = initial_embedding(cfg.embedding.bat, rand::Rng::random(&mut rng));
        }
        let mut best: Option<(usize, f64)> = None;
        for (idx, cand) in pool.iter().enumerate() {
            trial.clear();
            trial.extend_from_slice(&selected);
            trial.push(cand);
            let rp = embedding_radius(&trial, cfg, &y0)?;
            if best.is_none_or(|(_, b)| rp > b) {
                best = Some((idx, rp));
            }
        }
        let (idx, rp) = best.expect("pool is non-empty while the selection is short");
        monotone.push(rp >= r);
        radii.push(rp);
        r = rp;
        selected.push(pool.remove(idx));
    }
    Ok(Filtered {
        corners: CornerSet {
            corners: selected.into_iter().cloned().collect(),
        },
        radii,
        monotone,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuseConfig {
    /// Width of the 1-D non-maximum suppression window, in bins.
    pub nms_window: usize,
}

impl Default for FuseConfig {
    fn default() -> Self {
        FuseConfig { nms_window: 5 }
    }
}

/// Fused point cloud: columns are slow time in [0, 1], squared range in
/// [0, 1] and signed squared Doppler in [−1, 1]. Range-map points come
/// first.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud3D {
    pub points: Array2<f64>,
    pub tags: Vec<MapSource>,
    /// Points whose complementary column was all zeros; their third
    /// coordinate is 0.
    pub degenerate: Vec<bool>,
}

impl PointCloud3D {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// `tag,t,r2,d2` with tags `R` and `D`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tag,t,r2,d2\n");
        for (row, tag) in self.points.rows().into_iter().zip(&self.tags) {
            let tag = match tag {
                MapSource::Range => "R",
                MapSource::Doppler => "D",
            };
            writeln!(s, "{tag},{},{},{}", row[0], row[1], row[2]).expect("string write");
        }
        s
    }
}

/// Indices that are maxima of their centred `window`; on plateaus the
/// first index wins.
pub fn nms_peaks(column: ArrayView1<f64>, window: usize) -> Vec<usize> {
    let half = window / 2;
    let n = column.len();
    (0..n)
        .filter(|&i| {
            let v = column[i];
            v > 0.0
                && (i.saturating_sub(half)..i).all(|j| column[j] < v)
                && (i + 1..(i + half + 1).min(n)).all(|j| column[j] <= v)
        })
        .collect()
}

/// Row of the strongest NMS peak of a column; `None` for an all-zero column.
pub fn strongest_peak(column: ArrayView1<f64>, window: usize) -> Option<usize> {
    nms_peaks(column, window)
        .into_iter()
        .fold(None, |best: Option<usize>, i| match best {
            Some(b) if column[b] >= column[i] => Some(b),
            _ => Some(i),
        })
}

fn normalized(map: &SquaredAxisMap, row: usize) -> f64 {
    map.axis_values[row] / map.squared_extent()
}

/// Completes every range corner with the Doppler of the strongest peak in
/// the same D²TM column, and every Doppler corner with the range of the
/// strongest R²TM peak.
pub fn fuse_nms(
    pc_r: &CornerSet,
    pc_d: &CornerSet,
    r2tm: &SquaredAxisMap,
    d2tm: &SquaredAxisMap,
    cfg: &FuseConfig,
) -> Result<PointCloud3D> {
    if pc_r.len() != pc_d.len() {
        return Err(Error::Cardinality {
            found: pc_r.len().min(pc_d.len()),
            required: pc_r.len().max(pc_d.len()),
        });
    }
    if r2tm.data.dim() != d2tm.data.dim() {
        return Err(Error::Shape(format!(
            "range map {:?} and Doppler map {:?} differ",
            r2tm.data.dim(),
            d2tm.data.dim()
        )));
    }
    let cols = r2tm.data.ncols();
    let t_scale = (cols.max(2) - 1) as f64;
    let n = pc_r.len() + pc_d.len();
    let mut points = Array2::zeros((n, 3));
    let mut tags = Vec::with_capacity(n);
    let mut degenerate = Vec::with_capacity(n);
    let sets = [(pc_r, r2tm, d2tm, MapSource::Range), (pc_d, d2tm, r2tm, MapSource::Doppler)];
    let mut k = 0;
    for (set, own, other, tag) in sets {
        for c in &set.corners {
            if c.row >= own.data.nrows() || c.col >= cols {
                return Err(Error::Shape(format!("corner ({}, {}) outside the map", c.row, c.col)));
            }
            let peak = strongest_peak(other.data.column(c.col), cfg.nms_window);
            let own_coord = normalized(own, c.row);
            let other_coord = peak.map_or(0.0, |row| normalized(other, row));
            let (r2, d2) = match tag {
                MapSource::Range => (own_coord, other_coord),
                MapSource::Doppler => (other_coord, own_coord),
            };
            points[[k, 0]] = c.col as f64 / t_scale;
            points[[k, 1]] = r2;
            points[[k, 2]] = d2;
            tags.push(tag);
            degenerate.push(peak.is_none());
            k += 1;
        }
    }
    Ok(PointCloud3D {
        points,
        tags,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{squared_doppler_axis, squared_range_axis, AxisKind};

    fn corner(row: usize, col: usize, response: f64) -> Corner {
        Corner {
            row,
            col,
            response,
            scale_index: 1,
            sigma: 2.0,
            source: MapSource::Range,
        }
    }

    fn square_map(data: Array2<f64>, kind: AxisKind) -> SquaredAxisMap {
        let size = data.nrows();
        let (axis_values, axis_max) = match kind {
            AxisKind::RangeSquared => (squared_range_axis(size, 4.0), 4.0),
            AxisKind::SignedDopplerSquared => (squared_doppler_axis(size, 3.0), 3.0),
        };
        SquaredAxisMap {
            data,
            axis_kind: kind,
            axis_values,
            time_axis_s: (0..size).map(|c| c as f64).collect(),
            axis_max,
            degenerate: false,
        }
    }

    #[test]
    fn exact_size_passes_through() {
        let set = CornerSet {
            corners: (0..30).map(|i| corner(i * 3, i * 5, 1.0 - i as f64 * 0.01)).collect(),
        };
        let out = filter_corners(&set, &FilterConfig::default()).unwrap();
        assert_eq!(out.corners, set);
        let short = CornerSet {
            corners: set.corners[..10].to_vec(),
        };
        assert!(matches!(
            filter_corners(&short, &FilterConfig::default()),
            Err(Error::Cardinality { found: 10, required: 30 })
        ));
    }

    #[test]
    fn output_is_a_subset_of_exact_size() {
        let set = CornerSet {
            corners: (0..60)
                .map(|i| corner((i * 37) % 256, (i * 91) % 256, 1.0 / (1.0 + i as f64)))
                .collect(),
        };
        let out = filter_corners(&set, &FilterConfig::default()).unwrap();
        assert_eq!(out.corners.len(), 30);
        assert!(out.corners.corners.iter().all(|c| set.corners.contains(c)));
        let mut keys: Vec<_> = out.corners.corners.iter().map(|c| (c.row, c.col)).collect();
        keys.dedup();
        assert_eq!(keys.len(), 30);
        for (w, m) in out.radii.windows(2).zip(&out.monotone[1..]) {
            if *m {
                assert!(w[1] >= w[0]);
            }
        }
        assert_eq!(filter_corners(&set, &FilterConfig::default()).unwrap(), out);
    }

    #[test]
    fn selection_spans_both_clusters() {
        // strongest corners sit in one cluster; a far cluster must be reached
        let mut corners = Vec::new();
        for i in 0..5 {
            corners.push(corner(20 + i, 20 + 2 * i, 1.0 - 0.01 * i as f64));
            corners.push(corner(220 + i, 230 - 2 * i, 0.5 - 0.01 * i as f64));
        }
        let set = CornerSet { corners };
        let cfg = FilterConfig {
            cor0: 4,
            ..FilterConfig::default()
        };
        // exhaustive oracle: the widest 4-subsets mix both clusters
        let y0 = initial_embedding(cfg.embedding.bat, cfg.embedding.seed);
        let mut best = (f64::NEG_INFINITY, Vec::new());
        let n = set.len();
        for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    for d in c + 1..n {
                        let pick: Vec<&Corner> = [a, b, c, d].iter().map(|&i| &set.corners[i]).collect();
                        let r = embedding_radius(&pick, &cfg, &y0).unwrap();
                        if r > best.0 {
                            best = (r, pick.iter().map(|c| c.row).collect());
                        }
                    }
                }
            }
        }
        assert!(best.1.iter().any(|&r| r < 100) && best.1.iter().any(|&r| r > 100));
        let out = filter_corners(&set, &cfg).unwrap();
        assert!(out.corners.corners.iter().any(|c| c.row < 100));
        assert!(out.corners.corners.iter().any(|c| c.row > 100));
        let stochastic = FilterConfig {
            stochastic: true,
            ..cfg
        };
        assert_eq!(filter_corners(&set, &stochastic).unwrap(), filter_corners(&set, &stochastic).unwrap());
    }

    #[test]
    fn nms_picks_strongest_separated_peak() {
        let mut col = ndarray::Array1::zeros(40);
        col[8] = 0.4;
        col[20] = 0.9;
        col[21] = 0.9;
        assert_eq!(nms_peaks(col.view(), 5), vec![8, 20]);
        assert_eq!(strongest_peak(col.view(), 5), Some(20));
        assert_eq!(strongest_peak(ndarray::Array1::zeros(10).view(), 5), None);
    }

    #[test]
    fn fusion_reads_complementary_columns() {
        let mut d = Array2::zeros((256, 256));
        d[[200, 17]] = 0.3;
        let mut r = Array2::zeros((256, 256));
        r[[64, 40]] = 1.0;
        let r2tm = square_map(r, AxisKind::RangeSquared);
        let d2tm = square_map(d, AxisKind::SignedDopplerSquared);
        let pc_r = CornerSet { corners: vec![corner(10, 17, 1.0)] };
        let pc_d = CornerSet {
            corners: vec![Corner { source: MapSource::Doppler, ..corner(128, 40, 1.0) }],
        };
        let cloud = fuse_nms(&pc_r, &pc_d, &r2tm, &d2tm, &FuseConfig::default()).unwrap();
        assert_eq!(cloud.points.dim(), (2, 3));
        assert_eq!(cloud.tags, vec![MapSource::Range, MapSource::Doppler]);
        assert_eq!(cloud.points[[0, 0]], 17.0 / 255.0);
        assert_eq!(cloud.points[[0, 1]], 10.0 / 256.0);
        assert_eq!(cloud.points[[0, 2]], d2tm.axis_values[200] / 9.0);
        assert_eq!(cloud.points[[1, 1]], 0.25);
        assert_eq!(cloud.points[[1, 2]], d2tm.axis_values[128] / 9.0);
        assert_eq!(cloud.degenerate, vec![false, false]);
        let empty = square_map(Array2::zeros((256, 256)), AxisKind::SignedDopplerSquared);
        let cloud = fuse_nms(&pc_r, &pc_d, &r2tm, &empty, &FuseConfig::default()).unwrap();
        assert_eq!(cloud.points[[0, 2]], 0.0);
        assert!(cloud.degenerate[0]);
        assert!(cloud.to_csv().starts_with("tag,t,r2,d2\nR,"));
    }

    #[test]
    fn fusion_is_shift_equivariant_in_time() {
        let r = Array2::from_shape_fn((256, 256), |(i, j)| ((i * 7 + j * 13) % 29) as f64 / 29.0);
        let d = Array2::from_shape_fn((256, 256), |(i, j)| ((i * 11 + j * 5) % 31) as f64 / 31.0);
        let shift = 9;
        let shifted = |m: &Array2<f64>| Array2::from_shape_fn((256, 256), |(i, j)| m[[i, (j + 256 - shift) % 256]]);
        let pc_r = CornerSet { corners: vec![corner(30, 50, 1.0), corner(90, 120, 0.5)] };
        let pc_d = CornerSet { corners: vec![corner(70, 60, 1.0), corner(150, 200, 0.5)] };
        let move_set = |s: &CornerSet| CornerSet {
            corners: s.corners.iter().map(|c| Corner { col: c.col + shift, ..c.clone() }).collect(),
        };
        let cfg = FuseConfig::default();
        let a = fuse_nms(
            &pc_r,
            &pc_d,
            &square_map(r.clone(), AxisKind::RangeSquared),
            &square_map(d.clone(), AxisKind::SignedDopplerSquared),
            &cfg,
        )
        .unwrap();
        let b = fuse_nms(
            &move_set(&pc_r),
            &move_set(&pc_d),
            &square_map(shifted(&r), AxisKind::RangeSquared),
            &square_map(shifted(&d), AxisKind::SignedDopplerSquared),
            &cfg,
        )
        .unwrap();
        for k in 0..4 {
            assert!((b.points[[k, 0]] - a.points[[k, 0]] - shift as f64 / 255.0).abs() < 1e-12);
            assert_eq!(b.points[[k, 1]], a.points[[k, 1]]);
            assert_eq!(b.points[[k, 2]], a.points[[k, 2]]);
        }
    }
}
