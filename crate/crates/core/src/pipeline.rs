//! Disk-backed stages of the chain. Every stage reads `manifest.json` in
//! the work directory, writes its artifacts next to it, records their
//! relative paths in the manifest and saves it again.
//!
//! ```text
//! manifest.json
//! samples/<id>.echo.mdt          (simulate, only with keep_echo)
//! maps/<id>.{r2tm,d2tm}.mdt + .json axes
//! corners/<id>.{r,d}.candidates.csv, <id>.{r,d}.csv, <id>.{r,d}.json
//! clouds/<id>.cloud.mdt/.csv
//! model/, train_log.csv
//! eval/<group>.confusion.csv, eval/<group>.summary.json
//! plots/<id>.*.pgm
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Map;

use crate::config::PipelineConfig;
use crate::corner::{adaptive_extract, CornerSet, DogDetector, MapSource};
use crate::error::{Error, Result};
use crate::filter::{filter_corners, fuse_nms, PointCloud3D};
use crate::graphnet::{log_csv, outcome_metrics, CloudSet, Model, Trainer, TrainOutcome};
use crate::metrics::{accumulate, summarize, summary_json, Summary};
use crate::preprocess::{map_to_pgm, AxisKind, SquaredAxisMap};
use crate::preprocess::preprocess_echo;
use crate::sim::dataset::{generate_dataset, plan_dataset, PlannedSample, Split, SPLIT_RATIO};
use crate::sim::{ActivityClass, EchoMatrix};
use crate::store::{
    atomic_write, load_manifest, load_tensor, save_manifest, save_tensor, DatasetManifest, SampleRecord, Tensor,
    SCHEMA_VERSION,
};

pub const MANIFEST: &str = "manifest.json";

fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST)
}

fn run_each<T, R, F>(items: &[T], parallel: bool, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

fn path_of<'a>(rec: &'a SampleRecord, key: &str, stage: &str) -> Result<&'a str> {
    rec.paths.get(key).map(String::as_str).ok_or_else(|| {
        Error::Schema(format!("sample {} has no {key}; run `{stage}` first", rec.id))
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    atomic_write(path, text.as_bytes())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Label index of a record's class.
pub fn class_label(rec: &SampleRecord) -> Result<usize> {
    ActivityClass::parse(&rec.class)
        .map(ActivityClass::index)
        .ok_or_else(|| Error::Schema(format!("unknown class {:?} in sample {}", rec.class, rec.id)))
}

pub fn class_names() -> Vec<String> {
    ActivityClass::ALL.iter().map(|c| c.name().to_string()).collect()
}

fn planned(rec: &SampleRecord) -> Result<PlannedSample> {
    let split = match rec.split.as_str() {
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        other => return Err(Error::Schema(format!("unknown split {other:?} in sample {}", rec.id))),
    };
    let class = ActivityClass::parse(&rec.class)
        .ok_or_else(|| Error::Schema(format!("unknown class {:?} in sample {}", rec.class, rec.id)))?;
    Ok(PlannedSample {
        id: rec.id.clone(),
        class,
        split,
        height_m: rec.height_m,
        seed: rec.seed,
    })
}

/// Evaluation group of a record: `val`, `train` or `test-h<height>`.
pub fn group_of(rec: &SampleRecord) -> String {
    if rec.split == "test" {
        format!("test-h{:.2}", rec.height_m)
    } else {
        rec.split.clone()
    }
}

fn groups(m: &DatasetManifest) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for rec in &m.samples {
        let g = group_of(rec);
        if !out.contains(&g) {
            out.push(g);
        }
    }
    out
}

// ---------- simulate ----------

/// Plans the dataset and writes the manifest; echoes are written only with
/// `keep_echo`.
pub fn simulate(cfg: &PipelineConfig, dir: &Path) -> Result<DatasetManifest> {
    cfg.dataset.validate()?;
    if cfg.keep_echo {
        return generate_dataset(&cfg.dataset, dir, cfg.parallel());
    }
    let samples = plan_dataset(&cfg.dataset)?
        .into_iter()
        .map(|s| SampleRecord {
            id: s.id,
            class: s.class.name().to_string(),
            split: s.split.as_str().to_string(),
            height_m: s.height_m,
            seed: s.seed,
            paths: BTreeMap::new(),
            extra: Map::new(),
        })
        .collect();
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        radar: cfg.dataset.radar.clone(),
        scene: cfg.dataset.scene.clone(),
        classes: cfg.dataset.classes.iter().map(|c| c.name().to_string()).collect(),
        split_ratio: SPLIT_RATIO,
        creation_seed: cfg.dataset.seed,
        samples,
        extra: Map::new(),
    };
    save_manifest(manifest_path(dir), &manifest)?;
    Ok(manifest)
}

/// The echo of a record: read from disk when stored, otherwise simulated
/// again from its seed.
pub fn load_echo(m: &DatasetManifest, rec: &SampleRecord, dir: &Path) -> Result<EchoMatrix> {
    match rec.paths.get("echo") {
        Some(rel) => Ok(EchoMatrix {
            data: load_tensor(dir.join(rel))?.to_c64()?,
            params: m.radar.clone(),
        }),
        None => planned(rec)?.simulate(&m.radar, &m.scene),
    }
}

// ---------- preprocess ----------

#[derive(Serialize, Deserialize)]
struct MapMeta {
    axis_kind: AxisKind,
    axis_max: f64,
    axis_values: Vec<f64>,
    time_axis_s: Vec<f64>,
    degenerate: bool,
}

fn save_map(dir: &Path, rel: &str, map: &SquaredAxisMap) -> Result<()> {
    let path = dir.join(rel);
    save_tensor(&path, &Tensor::from_f64(&map.data))?;
    write_json(
        &path.with_extension("json"),
        &MapMeta {
            axis_kind: map.axis_kind,
            axis_max: map.axis_max,
            axis_values: map.axis_values.clone(),
            time_axis_s: map.time_axis_s.clone(),
            degenerate: map.degenerate,
        },
    )
}

/// Reads a map written by the preprocess stage; its axes live in the
/// `.json` file next to the tensor.
pub fn load_map(dir: &Path, rel: &str) -> Result<SquaredAxisMap> {
    let path = dir.join(rel);
    let data = load_tensor(&path)?.to_f64()?;
    let meta: MapMeta = read_json(&path.with_extension("json"))?;
    if meta.axis_values.len() != data.nrows() || meta.time_axis_s.len() != data.ncols() {
        return Err(Error::Format(format!("{}: axes do not match the map", path.display())));
    }
    Ok(SquaredAxisMap {
        data,
        axis_kind: meta.axis_kind,
        axis_values: meta.axis_values,
        time_axis_s: meta.time_axis_s,
        axis_max: meta.axis_max,
        degenerate: meta.degenerate,
    })
}

fn update_paths(m: &mut DatasetManifest, updates: Vec<Vec<(&'static str, String)>>) {
    for (rec, ups) in m.samples.iter_mut().zip(updates) {
        for (k, v) in ups {
            rec.paths.insert(k.to_string(), v);
        }
    }
}

pub fn preprocess(cfg: &PipelineConfig, dir: &Path) -> Result<DatasetManifest> {
    let mut m = load_manifest(manifest_path(dir))?;
    let updates = run_each(&m.samples, cfg.parallel(), |rec| {
        let echo = load_echo(&m, rec, dir)?;
        let pair = preprocess_echo(&echo, &cfg.preprocess)?;
        let r = format!("maps/{}.r2tm.mdt", rec.id);
        let d = format!("maps/{}.d2tm.mdt", rec.id);
        save_map(dir, &r, &pair.r2tm)?;
        save_map(dir, &d, &pair.d2tm)?;
        Ok(vec![("r2tm", r), ("d2tm", d)])
    })?;
    update_paths(&mut m, updates);
    save_manifest(manifest_path(dir), &m)?;
    Ok(m)
}

// ---------- corners ----------

/// Candidates, then the filtered subset, for one map.
pub fn map_corners(map: &Array2<f64>, source: MapSource, cfg: &PipelineConfig) -> Result<(CornerSet, CornerSet)> {
    let proposer = DogDetector { cfg: cfg.corner.dog.clone() };
    let ex = adaptive_extract(map, cfg.filter.cor0, &cfg.corner, &proposer, source)?;
    let filtered = filter_corners(&ex.corners, &cfg.filter)?;
    Ok((ex.corners, filtered.corners))
}

pub fn corners(cfg: &PipelineConfig, dir: &Path) -> Result<DatasetManifest> {
    let mut m = load_manifest(manifest_path(dir))?;
    let updates = run_each(&m.samples, cfg.parallel(), |rec| {
        let mut ups = Vec::new();
        for (key, tag, source) in [("r2tm", "r", MapSource::Range), ("d2tm", "d", MapSource::Doppler)] {
            let map = load_tensor(dir.join(path_of(rec, key, "preprocess")?))?.to_f64()?;
            let (cands, kept) = map_corners(&map, source, cfg)?;
            let stem = format!("corners/{}.{tag}", rec.id);
            write_text(&dir.join(format!("{stem}.candidates.csv")), &cands.to_csv())?;
            write_text(&dir.join(format!("{stem}.csv")), &kept.to_csv())?;
            write_json(&dir.join(format!("{stem}.json")), &kept)?;
            ups.push((if tag == "r" { "corners_r" } else { "corners_d" }, format!("{stem}.json")));
        }
        Ok(ups)
    })?;
    update_paths(&mut m, updates);
    save_manifest(manifest_path(dir), &m)?;
    Ok(m)
}

// ---------- fuse ----------

pub fn fuse(cfg: &PipelineConfig, dir: &Path) -> Result<DatasetManifest> {
    let mut m = load_manifest(manifest_path(dir))?;
    let updates = run_each(&m.samples, cfg.parallel(), |rec| {
        let r2tm = load_map(dir, path_of(rec, "r2tm", "preprocess")?)?;
        let d2tm = load_map(dir, path_of(rec, "d2tm", "preprocess")?)?;
        let pc_r: CornerSet = read_json(&dir.join(path_of(rec, "corners_r", "corners")?))?;
        let pc_d: CornerSet = read_json(&dir.join(path_of(rec, "corners_d", "corners")?))?;
        let cloud = fuse_nms(&pc_r, &pc_d, &r2tm, &d2tm, &cfg.fuse)?;
        let stem = format!("clouds/{}.cloud", rec.id);
        save_tensor(dir.join(format!("{stem}.mdt")), &Tensor::from_f64(&cloud.points))?;
        write_text(&dir.join(format!("{stem}.csv")), &cloud.to_csv())?;
        Ok(vec![("cloud", format!("{stem}.mdt"))])
    })?;
    update_paths(&mut m, updates);
    save_manifest(manifest_path(dir), &m)?;
    Ok(m)
}

/// Clouds and labels of the records accepted by `keep`.
pub fn load_clouds(m: &DatasetManifest, dir: &Path, keep: impl Fn(&SampleRecord) -> bool) -> Result<CloudSet> {
    let mut set = CloudSet::default();
    for rec in m.samples.iter().filter(|r| keep(r)) {
        let cloud = load_tensor(dir.join(path_of(rec, "cloud", "fuse")?))?.to_f64()?;
        set.push(cloud, class_label(rec)?);
    }
    Ok(set)
}

// ---------- train ----------

pub fn train(cfg: &PipelineConfig, dir: &Path) -> Result<TrainOutcome> {
    let m = load_manifest(manifest_path(dir))?;
    let train = load_clouds(&m, dir, |r| r.split == "train")?;
    let val = load_clouds(&m, dir, |r| r.split == "val")?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config(format!(
            "training needs train and val samples; {} has {} and {}",
            dir.display(),
            train.len(),
            val.len()
        )));
    }
    let mut tcfg = cfg.train.clone();
    tcfg.deterministic |= cfg.deterministic;
    let outcome = Trainer::new(cfg.net.clone(), tcfg, &train)?.run(&train, &val)?;
    outcome.model.save(&dir.join("model"), outcome_metrics(&outcome))?;
    write_text(&dir.join("train_log.csv"), &log_csv(&outcome.log))?;
    Ok(outcome)
}

// ---------- eval ----------

/// Scores the saved model on every non-training group.
pub fn eval(cfg: &PipelineConfig, dir: &Path) -> Result<Vec<(String, Summary)>> {
    let m = load_manifest(manifest_path(dir))?;
    let model = Model::load(&dir.join("model"))?;
    let names = class_names();
    let mut out = Vec::new();
    for g in groups(&m).into_iter().filter(|g| g != "train") {
        let set = load_clouds(&m, dir, |r| group_of(r) == g)?;
        let preds: Vec<usize> = model
            .predict_batch(&set.clouds, cfg.parallel())?
            .into_iter()
            .map(|p| p.label)
            .collect();
        let cm = accumulate(&preds, &set.labels, names.len())?;
        let summary = summarize(&cm)?;
        write_text(&dir.join(format!("eval/{g}.confusion.csv")), &cm.to_csv(&names)?)?;
        write_json(&dir.join(format!("eval/{g}.summary.json")), &summary_json(&summary, &names))?;
        out.push((g, summary));
    }
    Ok(out)
}

// ---------- plot ----------

/// Scatter of slow time against another cloud coordinate spanning
/// `y_range`, as a map for [`map_to_pgm`].
pub fn scatter_image(cloud: &Array2<f64>, y_col: usize, y_range: (f64, f64), size: usize) -> Array2<f64> {
    let mut img = Array2::zeros((size, size));
    let last = (size - 1) as f64;
    for p in cloud.rows() {
        let x = (p[0].clamp(0.0, 1.0) * last).round() as usize;
        let y = ((p[y_col] - y_range.0) / (y_range.1 - y_range.0)).clamp(0.0, 1.0);
        // row 0 is drawn at the bottom
        let row = (y * last).round() as usize;
        for r in row.saturating_sub(1)..=(row + 1).min(size - 1) {
            for c in x.saturating_sub(1)..=(x + 1).min(size - 1) {
                img[[r, c]] = 1.0;
            }
        }
    }
    img
}

/// Renders the first `plot.per_class` samples of each class in each group:
/// both maps with their kept corners marked, and two cloud projections.
pub fn plot(cfg: &PipelineConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let m = load_manifest(manifest_path(dir))?;
    let mut seen: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut written = Vec::new();
    for rec in &m.samples {
        let n = seen.entry((group_of(rec), rec.class.clone())).or_default();
        if *n >= cfg.plot.per_class {
            continue;
        }
        *n += 1;
        for (map_key, corner_key, name) in [("r2tm", "corners_r", "r2tm"), ("d2tm", "corners_d", "d2tm")] {
            let Some(stem) = rec.paths.get(map_key) else { continue };
            let map = load_map(dir, stem)?;
            let path = dir.join(format!("plots/{}.{name}.pgm", rec.id));
            atomic_write(&path, &map_to_pgm(&map.data))?;
            written.push(path);
            if let Some(rel) = rec.paths.get(corner_key) {
                let set: CornerSet = read_json(&dir.join(rel))?;
                let mut marked = map.data.mapv(|v| 0.6 * v);
                for c in &set.corners {
                    for r in c.row.saturating_sub(2)..=(c.row + 2).min(marked.nrows() - 1) {
                        for col in c.col.saturating_sub(2)..=(c.col + 2).min(marked.ncols() - 1) {
                            marked[[r, col]] = 1.0;
                        }
                    }
                }
                let path = dir.join(format!("plots/{}.{name}.corners.pgm", rec.id));
                atomic_write(&path, &map_to_pgm(&marked))?;
                written.push(path);
            }
        }
        if let Some(rel) = rec.paths.get("cloud") {
            let cloud = load_tensor(dir.join(rel))?.to_f64()?;
            for (col, range, name) in [(1, (0.0, 1.0), "cloud_tr"), (2, (-1.0, 1.0), "cloud_td")] {
                let path = dir.join(format!("plots/{}.{name}.pgm", rec.id));
                atomic_write(&path, &map_to_pgm(&scatter_image(&cloud, col, range, 256)))?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

// ---------- everything ----------

#[derive(Debug)]
pub struct PipelineReport {
    pub samples: usize,
    pub best_val_acc: f64,
    pub groups: Vec<(String, Summary)>,
}

pub fn run_pipeline(cfg: &PipelineConfig, dir: &Path) -> Result<PipelineReport> {
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join("config.json"), &cfg.to_json())?;
    let m = simulate(cfg, dir)?;
    preprocess(cfg, dir)?;
    corners(cfg, dir)?;
    fuse(cfg, dir)?;
    let outcome = train(cfg, dir)?;
    let groups = eval(cfg, dir)?;
    plot(cfg, dir)?;
    Ok(PipelineReport {
        samples: m.samples.len(),
        best_val_acc: outcome.best_val_acc,
        groups,
    })
}

/// Map pair, corner sets and fused cloud of one echo, in memory.
pub fn echo_to_cloud(echo: &EchoMatrix, cfg: &PipelineConfig) -> Result<(crate::preprocess::MapPair, CornerSet, CornerSet, PointCloud3D)> {
    let pair = preprocess_echo(echo, &cfg.preprocess)?;
    let (_, pc_r) = map_corners(&pair.r2tm.data, MapSource::Range, cfg)?;
    let (_, pc_d) = map_corners(&pair.d2tm.data, MapSource::Doppler, cfg)?;
    let cloud = fuse_nms(&pc_r, &pc_d, &pair.r2tm, &pair.d2tm, &cfg.fuse)?;
    Ok((pair, pc_r, pc_d, cloud))
}
