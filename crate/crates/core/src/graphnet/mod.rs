//! Dynamic graph network for 60×3 corner clouds: a learned spatial
//! transform, linked edge convolutions over k-nearest-neighbour graphs that
//! are rebuilt from the current features, a pooled global descriptor and a
//! dense head with channel attention.

mod model;
mod train;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use model::{
    cross_entropy, softmax, Forward, Gradients, Network, ParamKind, Params, Prediction,
};
pub use train::{
    log_csv, outcome_metrics, AdamState, CloudSet, LogRow, Model, Standardizer, TrainConfig, TrainOutcome,
    Trainer,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub num_points: usize,
    /// Neighbours per point in every graph.
    pub k: usize,
    /// Output channels of the edge convolutions.
    pub channels: Vec<usize>,
    pub global_feature: usize,
    /// Dense layer widths; the last entry is the class count.
    pub head_nodes: Vec<usize>,
    /// `(h, w, c)` views of the vector entering each dense layer.
    pub se_shapes: Vec<[usize; 3]>,
    pub se_reduction: usize,
    /// Channel attention on; off leaves a plain dense head.
    pub attention: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            num_points: 60,
            k: 8,
            channels: vec![64, 128, 256],
            global_feature: 1024,
            head_nodes: vec![512, 256, 12],
            se_shapes: vec![[8, 8, 16], [8, 8, 8], [8, 8, 4]],
            se_reduction: 4,
            attention: true,
        }
    }
}

impl NetConfig {
    /// Small network for gradient checks.
    pub fn tiny() -> Self {
        NetConfig {
            num_points: 8,
            k: 2,
            channels: vec![4, 4],
            global_feature: 8,
            head_nodes: vec![8, 4, 12],
            se_shapes: vec![[2, 2, 2], [2, 2, 2], [2, 2, 1]],
            se_reduction: 2,
            attention: true,
        }
    }

    /// The small network sized for full 60-point clouds.
    pub fn tiny_60() -> Self {
        NetConfig {
            num_points: 60,
            k: 4,
            ..NetConfig::tiny()
        }
    }

    pub fn num_classes(&self) -> usize {
        *self.head_nodes.last().unwrap_or(&0)
    }

    /// Width of the concatenated edge-convolution outputs.
    pub fn concat_width(&self) -> usize {
        self.channels.iter().sum()
    }

    /// Input width of each dense layer.
    pub fn dense_inputs(&self) -> Vec<usize> {
        std::iter::once(self.global_feature)
            .chain(self.head_nodes[..self.head_nodes.len().saturating_sub(1)].iter().copied())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k == 0 || self.k >= self.num_points {
            return bad(format!("k = {} must be in 1..{}", self.k, self.num_points));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad("edge convolution channels must be non-empty and positive".into());
        }
        if self.channels.windows(2).any(|w| w[1] < w[0]) {
            return bad("edge convolution channels must not decrease".into());
        }
        if self.head_nodes.is_empty() || self.head_nodes.contains(&0) || self.global_feature == 0 {
            return bad("head widths must be positive".into());
        }
        if self.se_shapes.len() != self.head_nodes.len() {
            return bad("one attention shape per dense layer is required".into());
        }
        for (shape, width) in self.se_shapes.iter().zip(self.dense_inputs()) {
            if shape.iter().product::<usize>() != width {
                return bad(format!("attention shape {shape:?} does not hold {width} values"));
            }
        }
        if self.se_reduction == 0 {
            return bad("se_reduction must be positive".into());
        }
        Ok(())
    }
}

/// Indices of the `k` nearest other rows of `points` (Euclidean), row-major
/// `N x k`; equal distances go to the lower index.
pub fn knn_graph(points: &Array2<f64>, k: usize) -> Vec<usize> {
    let n = points.nrows();
    assert!(k < n, "k must be below the point count");
    let mut out = Vec::with_capacity(n * k);
    let mut d: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        d.clear();
        let pi = points.row(i);
        for j in (0..n).filter(|&j| j != i) {
            let pj = points.row(j);
            let dist: f64 = pi.iter().zip(pj.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            d.push((dist, j));
        }
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, cmp);
            d.truncate(k);
        }
        d.sort_by(cmp);
        out.extend(d.iter().map(|&(_, j)| j));
    }
    out
}
