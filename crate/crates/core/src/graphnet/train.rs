//! Mini-batch training with Adam, periodic validation, best-model
//! selection, and checkpoints that resume bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::model::{Gradients, Network, ParamKind, Params, Prediction};
use super::NetConfig;
use crate::error::{Error, Result};
use crate::store::{atomic_write, load_tensor, save_tensor, Tensor, TensorData};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to weight gradients (biases are exempt).
    pub weight_decay: f64,
    /// Validate after every this many batches.
    pub val_every: usize,
    pub seed: u64,
    /// Single-threaded execution.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 20,
            lr: 0.00147,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            val_every: 10,
            seed: 0,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || self.batch_size == 0 || self.val_every == 0 {
            return Err(Error::Config("lr must be non-negative; batch_size and val_every positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("Adam moments need β in [0, 1) and ε > 0".into()));
        }
        Ok(())
    }
}

/// Point clouds with class labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CloudSet {
    pub clouds: Vec<Array2<f64>>,
    pub labels: Vec<usize>,
}

impl CloudSet {
    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn push(&mut self, cloud: Array2<f64>, label: usize) {
        self.clouds.push(cloud);
        self.labels.push(label);
    }
}

/// Per-coordinate affine map to zero mean and unit variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Standardizer {
    fn default() -> Self {
        Standardizer {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

impl Standardizer {
    /// Statistics over every point of every cloud; constant coordinates
    /// keep unit scale.
    pub fn fit(clouds: &[Array2<f64>]) -> Standardizer {
        let mut s = Standardizer::default();
        let count: usize = clouds.iter().map(|c| c.nrows()).sum();
        if count == 0 {
            return s;
        }
        for d in 0..3 {
            let mean = clouds.iter().map(|c| c.column(d).sum()).sum::<f64>() / count as f64;
            let var = clouds
                .iter()
                .map(|c| c.column(d).iter().map(|v| (v - mean).powi(2)).sum::<f64>())
                .sum::<f64>()
                / count as f64;
            s.mean[d] = mean;
            s.std[d] = if var > 1e-24 { var.sqrt() } else { 1.0 };
        }
        s
    }

    pub fn apply(&self, cloud: &Array2<f64>) -> Array2<f64> {
        let mut out = cloud.clone();
        for d in 0..3.min(out.ncols()) {
            out.column_mut(d).mapv_inplace(|v| (v - self.mean[d]) / self.std[d]);
        }
        out
    }
}

/// First and second moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &Params) -> AdamState {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update; weights get `λ·w` added to their
    /// gradient first.
    pub fn update(&mut self, params: &mut Params, grads: &Gradients, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..params.tensors.len() {
            let decay = if params.kinds[i] == ParamKind::Weight { cfg.weight_decay } else { 0.0 };
            let w = &mut params.tensors[i];
            let m = &mut self.m.tensors[i];
            let v = &mut self.v.tensors[i];
            ndarray::Zip::from(w).and(m).and(v).and(&grads.tensors[i]).for_each(|w, m, v, &g| {
                let g = g + decay * *w;
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *w -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
            });
        }
    }
}

/// One training log line; validation fields are set on validation batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub batch: usize,
    pub epoch: usize,
    pub loss: f64,
    pub val_acc: Option<f64>,
    pub val_loss: Option<f64>,
}

/// A trained network ready for inference.
pub struct Model {
    pub net: Network,
    pub params: Params,
    pub standardizer: Standardizer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    net: NetConfig,
    standardizer: Standardizer,
    parameters: Vec<(String, [usize; 2])>,
    param_count: usize,
    #[serde(default)]
    metrics: serde_json::Map<String, serde_json::Value>,
}

const MODEL_FORMAT: &str = "mdcorner-model-1";

fn params_tensor(p: &Params) -> Tensor {
    Tensor::new(vec![p.count()], TensorData::F64(p.flatten())).expect("non-empty parameter vector")
}

fn load_flat(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let flat: Vec<f64> = load_tensor(path)?.to_f64_dyn()?.into_iter().collect();
    if flat.len() != expected {
        return Err(Error::Shape(format!(
            "{}: {} values, network needs {expected}",
            path.display(),
            flat.len()
        )));
    }
    Ok(flat)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

impl Model {
    pub fn predict(&self, cloud: &Array2<f64>) -> Result<Prediction> {
        self.net.predict(&self.params, &self.standardizer.apply(cloud))
    }

    pub fn predict_batch(&self, clouds: &[Array2<f64>], parallel: bool) -> Result<Vec<Prediction>> {
        if parallel {
            clouds.par_iter().map(|c| self.predict(c)).collect()
        } else {
            clouds.iter().map(|c| self.predict(c)).collect()
        }
    }

    /// Accuracy and mean cross-entropy over a labelled set.
    pub fn evaluate(&self, set: &CloudSet, parallel: bool) -> Result<(f64, f64, Vec<Prediction>)> {
        let preds = self.predict_batch(&set.clouds, parallel)?;
        if preds.is_empty() {
            return Ok((0.0, 0.0, preds));
        }
        let mut correct = 0;
        let mut loss = 0.0;
        for (p, &y) in preds.iter().zip(&set.labels) {
            if y >= p.probs.len() {
                return Err(Error::LabelOutOfRange { label: y, classes: p.probs.len() });
            }
            correct += usize::from(p.label == y);
            loss -= p.probs[y].max(f64::MIN_POSITIVE).ln();
        }
        let n = preds.len() as f64;
        Ok((correct as f64 / n, loss / n, preds))
    }

    /// `model.json` (configuration, parameter layout, metrics) plus the
    /// flattened parameters in `params.mdt`.
    pub fn save(&self, dir: &Path, metrics: serde_json::Map<String, serde_json::Value>) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            net: self.net.cfg.clone(),
            standardizer: self.standardizer.clone(),
            parameters: self.net.shapes().into_iter().map(|(n, s)| (n, [s.0, s.1])).collect(),
            param_count: self.params.count(),
            metrics,
        };
        save_tensor(&dir.join("params.mdt"), &params_tensor(&self.params))?;
        write_json(&dir.join("model.json"), &file)
    }

    pub fn load(dir: &Path) -> Result<Model> {
        let file: ModelFile = read_json(&dir.join("model.json"))?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Schema(format!("unknown model format {:?}", file.format)));
        }
        let net = Network::new(file.net)?;
        let mut params = net.init(0);
        params.assign_flat(&load_flat(&dir.join("params.mdt"), params.count())?)?;
        Ok(Model {
            net,
            params,
            standardizer: file.standardizer,
        })
    }
}

/// Result of a full run: the best-validation model and the log.
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<LogRow>,
    pub best_val_acc: f64,
    /// Global batch count at which the kept parameters were recorded.
    pub best_batch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Best {
    acc: f64,
    loss: f64,
    batch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StateFile {
    net: NetConfig,
    train: TrainConfig,
    standardizer: Standardizer,
    epoch: usize,
    cursor: usize,
    batches: usize,
    adam_t: u64,
    best: Option<Best>,
    log: Vec<LogRow>,
}

pub struct Trainer {
    pub net: Network,
    pub params: Params,
    pub adam: AdamState,
    pub cfg: TrainConfig,
    pub standardizer: Standardizer,
    /// Completed epochs.
    pub epoch: usize,
    /// Next batch within the epoch.
    pub cursor: usize,
    /// Completed batches overall.
    pub batches: usize,
    best: Option<(Best, Params)>,
    pub log: Vec<LogRow>,
}

impl Trainer {
    /// Fresh parameters from `cfg.seed`; the standardizer is fitted on
    /// `train`.
    pub fn new(net_cfg: NetConfig, cfg: TrainConfig, train: &CloudSet) -> Result<Trainer> {
        cfg.validate()?;
        let net = Network::new(net_cfg)?;
        let params = net.init(cfg.seed);
        Ok(Trainer {
            adam: AdamState::new(&params),
            standardizer: Standardizer::fit(&train.clouds),
            net,
            params,
            cfg,
            epoch: 0,
            cursor: 0,
            batches: 0,
            best: None,
            log: Vec::new(),
        })
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    fn epoch_order(&self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ (self.epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.shuffle(&mut rng);
        order
    }

    /// Trains on the next mini-batch and returns its loss.
    pub fn step(&mut self, train: &CloudSet) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let n = train.len();
        let per_epoch = n.div_ceil(self.cfg.batch_size);
        let order = self.epoch_order(n);
        let lo = self.cursor * self.cfg.batch_size;
        let idx = &order[lo..(lo + self.cfg.batch_size).min(n)];
        let clouds: Vec<Array2<f64>> = idx.iter().map(|&i| self.standardizer.apply(&train.clouds[i])).collect();
        let refs: Vec<&Array2<f64>> = clouds.iter().collect();
        let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
        let (loss, grads) = self
            .net
            .loss_and_grad(&self.params, &refs, &labels, 1.0, !self.cfg.deterministic)?;
        self.adam.update(&mut self.params, &grads, &self.cfg);
        self.batches += 1;
        self.log.push(LogRow {
            batch: self.batches,
            epoch: self.epoch,
            loss,
            val_acc: None,
            val_loss: None,
        });
        self.cursor += 1;
        if self.cursor == per_epoch {
            self.cursor = 0;
            self.epoch += 1;
        }
        Ok(loss)
    }

    fn current_model(&self, params: Params) -> Result<Model> {
        Ok(Model {
            net: Network::new(self.net.cfg.clone())?,
            params,
            standardizer: self.standardizer.clone(),
        })
    }

    /// Scores the current parameters on `val`, logs the result on the
    /// latest row and keeps the parameters if they are the best so far
    /// (higher accuracy, then lower loss).
    pub fn validate(&mut self, val: &CloudSet) -> Result<(f64, f64)> {
        let model = self.current_model(self.params.clone())?;
        let (acc, loss, _) = model.evaluate(val, !self.cfg.deterministic)?;
        if let Some(row) = self.log.last_mut() {
            row.val_acc = Some(acc);
            row.val_loss = Some(loss);
        }
        let better = match &self.best {
            None => true,
            Some((b, _)) => acc > b.acc || (acc == b.acc && loss < b.loss),
        };
        if better {
            self.best = Some((
                Best {
                    acc,
                    loss,
                    batch: self.batches,
                },
                self.params.clone(),
            ));
        }
        Ok((acc, loss))
    }

    /// Runs the remaining epochs. With an empty validation set the final
    /// parameters are kept.
    pub fn run(mut self, train: &CloudSet, val: &CloudSet) -> Result<TrainOutcome> {
        while !self.finished() {
            self.step(train)?;
            let due = self.batches % self.cfg.val_every == 0 || self.finished();
            if due && !val.is_empty() {
                self.validate(val)?;
            }
        }
        let (best_val_acc, best_batch, params) = match self.best.take() {
            Some((b, p)) => (b.acc, b.batch, p),
            None => (f64::NAN, self.batches, self.params.clone()),
        };
        Ok(TrainOutcome {
            model: self.current_model(params)?,
            log: self.log,
            best_val_acc,
            best_batch,
        })
    }

    /// Full training state: parameters, moments, counters, best-so-far and
    /// the log.
    pub fn save_state(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_tensor(&dir.join("params.mdt"), &params_tensor(&self.params))?;
        save_tensor(&dir.join("adam_m.mdt"), &params_tensor(&self.adam.m))?;
        save_tensor(&dir.join("adam_v.mdt"), &params_tensor(&self.adam.v))?;
        if let Some((_, p)) = &self.best {
            save_tensor(&dir.join("best.mdt"), &params_tensor(p))?;
        }
        let state = StateFile {
            net: self.net.cfg.clone(),
            train: self.cfg.clone(),
            standardizer: self.standardizer.clone(),
            epoch: self.epoch,
            cursor: self.cursor,
            batches: self.batches,
            adam_t: self.adam.t,
            best: self.best.as_ref().map(|(b, _)| b.clone()),
            log: self.log.clone(),
        };
        write_json(&dir.join("state.json"), &state)
    }

    pub fn load_state(dir: &Path) -> Result<Trainer> {
        let state: StateFile = read_json(&dir.join("state.json"))?;
        state.train.validate()?;
        let net = Network::new(state.net)?;
        let mut params = net.init(0);
        let count = params.count();
        params.assign_flat(&load_flat(&dir.join("params.mdt"), count)?)?;
        let mut adam = AdamState::new(&params);
        adam.m.assign_flat(&load_flat(&dir.join("adam_m.mdt"), count)?)?;
        adam.v.assign_flat(&load_flat(&dir.join("adam_v.mdt"), count)?)?;
        adam.t = state.adam_t;
        let best = match state.best {
            Some(b) => {
                let mut p = params.zeros_like();
                p.assign_flat(&load_flat(&dir.join("best.mdt"), count)?)?;
                Some((b, p))
            }
            None => None,
        };
        Ok(Trainer {
            net,
            params,
            adam,
            cfg: state.train,
            standardizer: state.standardizer,
            epoch: state.epoch,
            cursor: state.cursor,
            batches: state.batches,
            best,
            log: state.log,
        })
    }
}

/// `batch,epoch,loss,val_acc,val_loss`; validation cells are empty on
/// batches without validation.
pub fn log_csv(log: &[LogRow]) -> String {
    let mut s = String::from("batch,epoch,loss,val_acc,val_loss\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in log {
        writeln!(s, "{},{},{},{},{}", r.batch, r.epoch, r.loss, opt(r.val_acc), opt(r.val_loss)).expect("string write");
    }
    s
}

/// Metrics map for [`Model::save`].
pub fn outcome_metrics(outcome: &TrainOutcome) -> serde_json::Map<String, serde_json::Value> {
    let v = json!({
        "best_val_acc": if outcome.best_val_acc.is_finite() { json!(outcome.best_val_acc) } else { json!(null) },
        "best_batch": outcome.best_batch,
        "batches": outcome.log.len(),
    });
    match v {
        serde_json::Value::Object(m) => m,
        _ => unreachable!(),
    }
}
