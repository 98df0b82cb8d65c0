//! Parameters, forward pass with recorded intermediates, and exact
//! reverse-mode gradients. Neighbour graphs and max-pool winners are
//! recorded in the forward pass and held fixed when differentiating.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{knn_graph, NetConfig};
use crate::error::{Error, Result};

/// Samples accumulated sequentially before partial gradients are summed in
/// a fixed order, so parallel and serial runs agree bit for bit.
const CHUNK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Subject to weight decay.
    Weight,
    Bias,
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Identity,
    Uniform { fan_in: usize },
    Zero,
}

/// Named parameter tensors; biases are stored as `1 x n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub names: Vec<String>,
    pub kinds: Vec<ParamKind>,
    pub tensors: Vec<Array2<f64>>,
}

/// Gradients share the parameter layout.
pub type Gradients = Params;

impl Params {
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn zeros_like(&self) -> Params {
        Params {
            names: self.names.clone(),
            kinds: self.kinds.clone(),
            tensors: self.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect(),
        }
    }

    /// All values in layout order, each tensor row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count());
        for t in &self.tensors {
            out.extend(t.iter());
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.count() {
            return Err(Error::Shape(format!(
                "expected {} parameter values, got {}",
                self.count(),
                flat.len()
            )));
        }
        let mut at = 0;
        for t in &mut self.tensors {
            let n = t.len();
            for (dst, src) in t.iter_mut().zip(&flat[at..at + n]) {
                *dst = *src;
            }
            at += n;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in &mut self.tensors {
            t.mapv_inplace(|v| v * c);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors
            .iter()
            .position(|t| t.iter().any(|v| !v.is_finite()))
            .map(|i| self.names[i].as_str())
    }
}

struct EdgeIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    fin: usize,
}

struct SeIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

struct Layout {
    a: usize,
    b: usize,
    edge: Vec<EdgeIdx>,
    pw_w: usize,
    pw_b: usize,
    se: Vec<SeIdx>,
    fc: Vec<(usize, usize)>,
}

/// Network structure; parameters live separately in [`Params`].
pub struct Network {
    pub cfg: NetConfig,
    layout: Layout,
    template: Vec<(String, ParamKind, (usize, usize), Init)>,
}

/// Logits with their class distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probs: Vec<f64>,
}

struct EdgeCache {
    input: Array2<f64>,
    knn: Vec<usize>,
    h: Array2<f64>,
    a: Array2<f64>,
    z: Array2<f64>,
    /// Winning edge row per (point, channel).
    arg: Vec<usize>,
    out: Array2<f64>,
}

struct SeCache {
    x: Array1<f64>,
    z: Array1<f64>,
    pre1: Array1<f64>,
    u: Array1<f64>,
    g: Array1<f64>,
}

struct DenseCache {
    se: Option<SeCache>,
    input: Array1<f64>,
    pre: Array1<f64>,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct Forward {
    x: Array2<f64>,
    /// Winning neighbour per (point, coordinate) of the spatial transform.
    st_arg: Vec<usize>,
    edges: Vec<EdgeCache>,
    concat: Array2<f64>,
    pw_pre: Array2<f64>,
    pool_arg: Vec<usize>,
    dense: Vec<DenseCache>,
    pub logits: Array1<f64>,
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn row_vec(b: &Array2<f64>) -> ArrayView1<'_, f64> {
    b.row(0)
}

/// Numerically stable softmax.
pub fn softmax(logits: ArrayView1<f64>) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean cross-entropy over a batch of logit rows, and its gradient with
/// respect to the logits (`(p − y) / B`).
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (b, classes) = logits.dim();
    if labels.len() != b {
        return Err(Error::Shape(format!("{b} logit rows but {} labels", labels.len())));
    }
    let mut grad = Array2::zeros((b, classes));
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        let row = logits.row(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        for c in 0..classes {
            grad[[r, c]] = ((row[c] - lse).exp() - if c == y { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok((loss / b as f64, grad))
}

fn se_forward(x: Array1<f64>, shape: [usize; 3], p: &Params, idx: &SeIdx) -> (Array1<f64>, SeCache) {
    let c = shape[2];
    let spatial = shape[0] * shape[1];
    let mut z = Array1::zeros(c);
    for (i, v) in x.iter().enumerate() {
        z[i % c] += v;
    }
    z.mapv_inplace(|v| v / spatial as f64);
    let pre1 = z.dot(&p.tensors[idx.w1]) + row_vec(&p.tensors[idx.b1]);
    let u = pre1.mapv(relu);
    let pre2 = u.dot(&p.tensors[idx.w2]) + row_vec(&p.tensors[idx.b2]);
    let g = pre2.mapv(sigmoid);
    let y = Array1::from_shape_fn(x.len(), |i| x[i] * g[i % c]);
    (y, SeCache { x, z, pre1, u, g })
}

fn se_backward(dy: &Array1<f64>, shape: [usize; 3], cache: &SeCache, p: &Params, idx: &SeIdx, grads: &mut Params) -> Array1<f64> {
    let c = shape[2];
    let spatial = (shape[0] * shape[1]) as f64;
    let mut dg = Array1::<f64>::zeros(c);
    let mut dx = Array1::<f64>::zeros(dy.len());
    for i in 0..dy.len() {
        dg[i % c] += dy[i] * cache.x[i];
        dx[i] = dy[i] * cache.g[i % c];
    }
    let dpre2 = Array1::from_shape_fn(c, |j| dg[j] * cache.g[j] * (1.0 - cache.g[j]));
    outer_add(&mut grads.tensors[idx.w2], &cache.u, &dpre2);
    grads.tensors[idx.b2].row_mut(0).scaled_add(1.0, &dpre2);
    let du = p.tensors[idx.w2].dot(&dpre2);
    let dpre1 = Array1::from_shape_fn(du.len(), |j| if cache.pre1[j] > 0.0 { du[j] } else { 0.0 });
    outer_add(&mut grads.tensors[idx.w1], &cache.z, &dpre1);
    grads.tensors[idx.b1].row_mut(0).scaled_add(1.0, &dpre1);
    let dz = p.tensors[idx.w1].dot(&dpre1);
    for i in 0..dx.len() {
        dx[i] += dz[i % c] / spatial;
    }
    dx
}

fn outer_add(dst: &mut Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) {
    for (i, &ai) in a.iter().enumerate() {
        if ai != 0.0 {
            dst.row_mut(i).scaled_add(ai, b);
        }
    }
}

impl Network {
    pub fn new(cfg: NetConfig) -> Result<Network> {
        cfg.validate()?;
        let mut template = Vec::new();
        let mut push = |name: String, kind: ParamKind, shape: (usize, usize), init: Init| {
            template.push((name, kind, shape, init));
            template.len() - 1
        };
        let a = push("transform.a".into(), ParamKind::Weight, (3, 3), Init::Identity);
        let b = push("transform.b".into(), ParamKind::Weight, (3, 3), Init::Identity);
        let mut edge = Vec::new();
        for (l, &c) in cfg.channels.iter().enumerate() {
            let fin = if l == 0 { 3 } else { cfg.channels[..l].iter().sum() };
            // the first layer keeps the full edge width in its hidden layer
            let hidden = if l == 0 { 2 * fin } else { fin };
            edge.push(EdgeIdx {
                w1: push(format!("edge{l}.w1"), ParamKind::Weight, (2 * fin, hidden), Init::Uniform { fan_in: 2 * fin }),
                b1: push(format!("edge{l}.b1"), ParamKind::Bias, (1, hidden), Init::Zero),
                w2: push(format!("edge{l}.w2"), ParamKind::Weight, (hidden, c), Init::Uniform { fan_in: hidden }),
                b2: push(format!("edge{l}.b2"), ParamKind::Bias, (1, c), Init::Zero),
                fin,
            });
        }
        let width = cfg.concat_width();
        let pw_w = push("global.w".into(), ParamKind::Weight, (width, cfg.global_feature), Init::Uniform { fan_in: width });
        let pw_b = push("global.b".into(), ParamKind::Bias, (1, cfg.global_feature), Init::Zero);
        let mut se = Vec::new();
        let mut fc = Vec::new();
        for (i, (shape, fan)) in cfg.se_shapes.iter().zip(cfg.dense_inputs()).enumerate() {
            let c = shape[2];
            let r = (c / cfg.se_reduction).max(1);
            se.push(SeIdx {
                w1: push(format!("attention{i}.w1"), ParamKind::Weight, (c, r), Init::Uniform { fan_in: c }),
                b1: push(format!("attention{i}.b1"), ParamKind::Bias, (1, r), Init::Zero),
                w2: push(format!("attention{i}.w2"), ParamKind::Weight, (r, c), Init::Uniform { fan_in: r }),
                b2: push(format!("attention{i}.b2"), ParamKind::Bias, (1, c), Init::Zero),
            });
            let out = cfg.head_nodes[i];
            fc.push((
                push(format!("dense{i}.w"), ParamKind::Weight, (fan, out), Init::Uniform { fan_in: fan }),
                push(format!("dense{i}.b"), ParamKind::Bias, (1, out), Init::Zero),
            ));
        }
        Ok(Network {
            cfg,
            layout: Layout { a, b, edge, pw_w, pw_b, se, fc },
            template,
        })
    }

    pub fn param_count(&self) -> usize {
        self.template.iter().map(|t| t.2 .0 * t.2 .1).sum()
    }

    /// Parameter names and shapes in layout order.
    pub fn shapes(&self) -> Vec<(String, (usize, usize))> {
        self.template.iter().map(|t| (t.0.clone(), t.2)).collect()
    }

    /// Seeded initialization: identity transforms, zero biases, and
    /// weights uniform in `±sqrt(3 / fan_in)`.
    pub fn init(&self, seed: u64) -> Params {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params {
            names: Vec::new(),
            kinds: Vec::new(),
            tensors: Vec::new(),
        };
        for (name, kind, shape, init) in &self.template {
            let t = match *init {
                Init::Identity => Array2::eye(shape.0),
                Init::Zero => Array2::zeros(*shape),
                Init::Uniform { fan_in } => {
                    let bound = (3.0 / fan_in as f64).sqrt();
                    Array2::from_shape_fn(*shape, |_| rng.random_range(-bound..bound))
                }
            };
            p.names.push(name.clone());
            p.kinds.push(*kind);
            p.tensors.push(t);
        }
        p
    }

    fn check(&self, params: &Params) -> Result<()> {
        if params.tensors.len() != self.template.len()
            || params.tensors.iter().zip(&self.template).any(|(t, tpl)| t.dim() != tpl.2)
        {
            return Err(Error::Shape("parameters do not match the network layout".into()));
        }
        Ok(())
    }

    pub fn forward(&self, params: &Params, cloud: &Array2<f64>) -> Result<Forward> {
        self.check(params)?;
        let n = self.cfg.num_points;
        if cloud.dim() != (n, 3) {
            return Err(Error::Shape(format!("expected a {n}x3 cloud, got {:?}", cloud.dim())));
        }
        let lay = &self.layout;

        let (st_arg, st_out) = self.st_forward(params, cloud);

        let mut edges: Vec<EdgeCache> = Vec::with_capacity(lay.edge.len());
        for (l, idx) in lay.edge.iter().enumerate() {
            let input = if l == 0 {
                st_out.clone()
            } else {
                let views: Vec<_> = edges.iter().map(|e| e.out.view()).collect();
                concatenate(Axis(1), &views).expect("equal row counts")
            };
            edges.push(self.edge_forward(params, idx, input));
        }
        let views: Vec<_> = edges.iter().map(|e| e.out.view()).collect();
        let concat = concatenate(Axis(1), &views).expect("equal row counts");
        let pw_pre = concat.dot(&params.tensors[lay.pw_w]) + &row_vec(&params.tensors[lay.pw_b]);
        let g = self.cfg.global_feature;
        let mut pool_arg = vec![0; g];
        let mut v = Array1::zeros(g);
        for c in 0..g {
            let col = pw_pre.column(c);
            let mut best = 0;
            for i in 1..n {
                if col[i] > col[best] {
                    best = i;
                }
            }
            pool_arg[c] = best;
            v[c] = relu(col[best]);
        }

        let last = lay.fc.len() - 1;
        let mut dense = Vec::with_capacity(lay.fc.len());
        let mut logits = Array1::zeros(0);
        for (i, &(w, b)) in lay.fc.iter().enumerate() {
            let (input, se) = if self.cfg.attention {
                let (y, cache) = se_forward(v, self.cfg.se_shapes[i], params, &lay.se[i]);
                (y, Some(cache))
            } else {
                (v, None)
            };
            let pre = input.dot(&params.tensors[w]) + row_vec(&params.tensors[b]);
            v = if i == last { pre.clone() } else { pre.mapv(relu) };
            if i == last {
                logits = pre.clone();
            }
            dense.push(DenseCache { se, input, pre });
        }

        Ok(Forward {
            x: cloud.clone(),
            st_arg,
            edges,
            concat,
            pw_pre,
            pool_arg,
            dense,
            logits,
        })
    }

    fn st_forward(&self, params: &Params, cloud: &Array2<f64>) -> (Vec<usize>, Array2<f64>) {
        let lay = &self.layout;
        let n = cloud.nrows();
        let k = self.cfg.k;
        // x_i·T + (x_j − x_i)·T collapses to x_j·T
        let t = params.tensors[lay.a].dot(&params.tensors[lay.b]);
        let y = cloud.dot(&t);
        let knn = knn_graph(cloud, k);
        let mut arg = vec![0; n * 3];
        let mut out = Array2::zeros((n, 3));
        for i in 0..n {
            for d in 0..3 {
                let mut best = knn[i * k];
                for &j in &knn[i * k + 1..(i + 1) * k] {
                    if y[[j, d]] > y[[best, d]] {
                        best = j;
                    }
                }
                arg[i * 3 + d] = best;
                out[[i, d]] = y[[best, d]];
            }
        }
        (arg, out)
    }

    /// Learned 3×3 transform `T = A·B` applied to every edge of the input
    /// neighbour graph, max-pooled over each point's neighbours.
    pub fn spatial_transform(&self, params: &Params, cloud: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(params)?;
        if cloud.ncols() != 3 || cloud.nrows() <= self.cfg.k {
            return Err(Error::Shape(format!("cloud {:?} needs 3 columns and more than k rows", cloud.dim())));
        }
        Ok(self.st_forward(params, cloud).1)
    }

    /// Edge convolution `layer` (0-based) on `features`, whose width must
    /// equal the summed channels of the earlier layers (3 for the first).
    pub fn edge_conv(&self, params: &Params, layer: usize, features: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(params)?;
        let idx = self
            .layout
            .edge
            .get(layer)
            .ok_or_else(|| Error::Shape(format!("no edge convolution {layer}")))?;
        if features.ncols() != idx.fin || features.nrows() <= self.cfg.k {
            return Err(Error::Shape(format!(
                "edge convolution {layer} takes {} features per point, got {:?}",
                idx.fin,
                features.dim()
            )));
        }
        Ok(self.edge_forward(params, idx, features.clone()).out)
    }

    fn edge_forward(&self, params: &Params, idx: &EdgeIdx, input: Array2<f64>) -> EdgeCache {
        let n = input.nrows();
        let k = self.cfg.k;
        let knn = knn_graph(&input, k);
        let w1 = &params.tensors[idx.w1];
        let w_self = w1.slice(s![..idx.fin, ..]);
        let w_diff = w1.slice(s![idx.fin.., ..]);
        // [f_i, f_j − f_i]·W1 = f_i·(W_self − W_diff) + f_j·W_diff
        let p = input.dot(&(&w_self - &w_diff));
        let q = input.dot(&w_diff);
        let b1 = row_vec(&params.tensors[idx.b1]);
        let hidden = w1.ncols();
        let mut h = Array2::zeros((n * k, hidden));
        for i in 0..n {
            for m in 0..k {
                let j = knn[i * k + m];
                let mut row = h.row_mut(i * k + m);
                row.assign(&p.row(i));
                row += &q.row(j);
                row += &b1;
            }
        }
        let a = h.mapv(relu);
        let z = a.dot(&params.tensors[idx.w2]) + &row_vec(&params.tensors[idx.b2]);
        let c = z.ncols();
        let mut arg = vec![0; n * c];
        let mut out = Array2::zeros((n, c));
        for i in 0..n {
            for ch in 0..c {
                let mut best = i * k;
                for e in i * k + 1..(i + 1) * k {
                    if z[[e, ch]] > z[[best, ch]] {
                        best = e;
                    }
                }
                arg[i * c + ch] = best;
                out[[i, ch]] = relu(z[[best, ch]]);
            }
        }
        EdgeCache {
            input,
            knn,
            h,
            a,
            z,
            arg,
            out,
        }
    }

    /// Gradient of the edge layer's input; parameter gradients are added
    /// to `grads`.
    fn edge_backward(&self, params: &Params, idx: &EdgeIdx, cache: &EdgeCache, dout: &Array2<f64>, grads: &mut Params) -> Array2<f64> {
        let k = self.cfg.k;
        let (n, c) = dout.dim();
        let mut dz = Array2::zeros(cache.z.raw_dim());
        for i in 0..n {
            for ch in 0..c {
                let e = cache.arg[i * c + ch];
                if cache.z[[e, ch]] > 0.0 {
                    dz[[e, ch]] += dout[[i, ch]];
                }
            }
        }
        grads.tensors[idx.w2] += &cache.a.t().dot(&dz);
        grads.tensors[idx.b2].row_mut(0).scaled_add(1.0, &dz.sum_axis(Axis(0)));
        let mut dh = dz.dot(&params.tensors[idx.w2].t());
        dh.zip_mut_with(&cache.h, |d, &h| {
            if h <= 0.0 {
                *d = 0.0;
            }
        });
        grads.tensors[idx.b1].row_mut(0).scaled_add(1.0, &dh.sum_axis(Axis(0)));
        let hidden = dh.ncols();
        let mut dp = Array2::zeros((n, hidden));
        let mut dq = Array2::zeros((n, hidden));
        for i in 0..n {
            for m in 0..k {
                let e = i * k + m;
                let j = cache.knn[e];
                dp.row_mut(i).scaled_add(1.0, &dh.row(e));
                dq.row_mut(j).scaled_add(1.0, &dh.row(e));
            }
        }
        let fin = idx.fin;
        let d_self = cache.input.t().dot(&dp);
        let d_diff = cache.input.t().dot(&(&dq - &dp));
        {
            let g = &mut grads.tensors[idx.w1];
            let mut top = g.slice_mut(s![..fin, ..]);
            top += &d_self;
            let mut bottom = g.slice_mut(s![fin.., ..]);
            bottom += &d_diff;
        }
        let w1 = &params.tensors[idx.w1];
        let w_self = w1.slice(s![..fin, ..]);
        let w_diff = w1.slice(s![fin.., ..]);
        dp.dot(&(&w_self - &w_diff).t()) + dq.dot(&w_diff.t())
    }

    /// Adds `d loss / d params` to `grads`, given `d loss / d logits`.
    pub fn backward(&self, params: &Params, fwd: &Forward, dlogits: ArrayView1<f64>, grads: &mut Params) {
        let lay = &self.layout;
        let last = lay.fc.len() - 1;
        let mut dv = dlogits.to_owned();
        for (i, &(w, b)) in lay.fc.iter().enumerate().rev() {
            let cache = &fwd.dense[i];
            let dpre = if i == last {
                dv
            } else {
                Array1::from_shape_fn(dv.len(), |j| if cache.pre[j] > 0.0 { dv[j] } else { 0.0 })
            };
            outer_add(&mut grads.tensors[w], &cache.input, &dpre);
            grads.tensors[b].row_mut(0).scaled_add(1.0, &dpre);
            dv = params.tensors[w].dot(&dpre);
            if let Some(se) = &cache.se {
                dv = se_backward(&dv, self.cfg.se_shapes[i], se, params, &lay.se[i], grads);
            }
        }

        let n = self.cfg.num_points;
        let mut du = Array2::zeros(fwd.pw_pre.raw_dim());
        for (c, &i) in fwd.pool_arg.iter().enumerate() {
            if fwd.pw_pre[[i, c]] > 0.0 {
                du[[i, c]] = dv[c];
            }
        }
        grads.tensors[lay.pw_w] += &fwd.concat.t().dot(&du);
        grads.tensors[lay.pw_b].row_mut(0).scaled_add(1.0, &du.sum_axis(Axis(0)));
        let dconcat = du.dot(&params.tensors[lay.pw_w].t());

        let mut offsets = vec![0];
        for &c in &self.cfg.channels {
            offsets.push(offsets.last().unwrap() + c);
        }
        let mut douts: Vec<Array2<f64>> = (0..self.cfg.channels.len())
            .map(|l| dconcat.slice(s![.., offsets[l]..offsets[l + 1]]).to_owned())
            .collect();
        let mut dst = Array2::zeros((n, 3));
        for l in (0..lay.edge.len()).rev() {
            let din = self.edge_backward(params, &lay.edge[l], &fwd.edges[l], &douts[l], grads);
            if l == 0 {
                dst = din;
            } else {
                for prev in 0..l {
                    douts[prev] += &din.slice(s![.., offsets[prev]..offsets[prev + 1]]);
                }
            }
        }

        let mut dy = Array2::zeros((n, 3));
        for i in 0..n {
            for d in 0..3 {
                dy[[fwd.st_arg[i * 3 + d], d]] += dst[[i, d]];
            }
        }
        let dt = fwd.x.t().dot(&dy);
        grads.tensors[lay.a] += &dt.dot(&params.tensors[lay.b].t());
        grads.tensors[lay.b] += &params.tensors[lay.a].t().dot(&dt);
    }

    pub fn logits(&self, params: &Params, cloud: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward(params, cloud)?.logits)
    }

    pub fn predict(&self, params: &Params, cloud: &Array2<f64>) -> Result<Prediction> {
        let logits = self.logits(params, cloud)?;
        let probs = softmax(logits.view());
        let label = (0..probs.len()).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
        Ok(Prediction { label, probs })
    }

    /// Mean cross-entropy of a batch and its parameter gradient, scaled by
    /// `loss_scale`.
    pub fn loss_and_grad(
        &self,
        params: &Params,
        clouds: &[&Array2<f64>],
        labels: &[usize],
        loss_scale: f64,
        parallel: bool,
    ) -> Result<(f64, Gradients)> {
        if clouds.len() != labels.len() || clouds.is_empty() {
            return Err(Error::Shape(format!("{} clouds for {} labels", clouds.len(), labels.len())));
        }
        let classes = self.cfg.num_classes();
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::LabelOutOfRange { label: bad, classes });
        }
        let batch = clouds.len() as f64;
        let run_chunk = |range: std::ops::Range<usize>| -> Result<(f64, Gradients)> {
            let mut grads = params.zeros_like();
            let mut loss = 0.0;
            for s in range {
                let fwd = self.forward(params, clouds[s])?;
                let logits = fwd.logits.clone().insert_axis(Axis(0));
                let (l, d) = cross_entropy(&logits, &labels[s..s + 1])?;
                loss += l;
                let d = d.row(0).mapv(|v| v * loss_scale / batch);
                self.backward(params, &fwd, d.view(), &mut grads);
            }
            Ok((loss, grads))
        };
        let ranges: Vec<_> = (0..clouds.len())
            .step_by(CHUNK)
            .map(|s| s..(s + CHUNK).min(clouds.len()))
            .collect();
        let parts: Vec<Result<(f64, Gradients)>> = if parallel {
            ranges.into_par_iter().map(run_chunk).collect()
        } else {
            ranges.into_iter().map(run_chunk).collect()
        };
        let mut loss = 0.0;
        let mut grads: Option<Gradients> = None;
        for part in parts {
            let (l, g) = part?;
            loss += l;
            match &mut grads {
                Some(acc) => acc.add_assign(&g),
                None => grads = Some(g),
            }
        }
        let grads = grads.expect("non-empty batch");
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient(format!("parameter {name}")));
        }
        Ok((loss_scale * loss / batch, grads))
    }
}
