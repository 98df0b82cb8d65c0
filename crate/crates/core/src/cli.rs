//! `mdcorner` command line. Exit codes: 0 success, 1 pipeline error,
//! 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::pipeline;
use crate::sim::ActivityClass;

#[derive(Parser, Debug)]
#[command(name = "mdcorner", version, about = "Through-wall radar activity recognition from micro-Doppler corner clouds")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Master seed of the dataset
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Work directory (alias --data)
    #[arg(long, visible_alias = "data", global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// JSON file overriding any subset of the defaults
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Single-threaded, bit-reproducible run
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Print the effective configuration and exit
    #[arg(long, global = true)]
    pub dump_config: bool,
}

#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    /// `all` or a comma-separated list such as S1,S4
    #[arg(long)]
    pub classes: Option<String>,
    /// Train plus validation samples per class
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Comma-separated test heights in metres
    #[arg(long)]
    pub heights: Option<String>,
    /// Store simulated echoes instead of regenerating them from seeds
    #[arg(long)]
    pub keep_echo: bool,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Plan a labelled dataset and write its manifest
    Simulate(DataArgs),
    /// Build R²TM and D²TM maps for every sample
    Preprocess,
    /// Propose and filter corners on every map
    Corners,
    /// Fuse range and Doppler corners into point clouds
    Fuse,
    /// Train the classifier on the train split
    Train(TrainArgs),
    /// Score the trained model on validation and test groups
    Eval,
    /// Render maps, corners and clouds as PGM images
    Plot,
    /// Run every stage in order
    Pipeline {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
}

fn parse_classes(s: &str) -> Result<Vec<ActivityClass>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(ActivityClass::ALL.to_vec());
    }
    s.split(',')
        .map(|c| ActivityClass::parse(c).ok_or_else(|| Error::Config(format!("unknown class {c:?}"))))
        .collect()
}

fn parse_heights(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|h| {
            h.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad height {h:?}")))
        })
        .collect()
}

impl DataArgs {
    fn apply(&self, cfg: &mut PipelineConfig) -> Result<()> {
        if let Some(c) = &self.classes {
            cfg.dataset.classes = parse_classes(c)?;
        }
        if let Some(n) = self.per_class {
            cfg.dataset.per_class = n;
        }
        if let Some(h) = &self.heights {
            cfg.dataset.heights_m = parse_heights(h)?;
        }
        cfg.keep_echo |= self.keep_echo;
        Ok(())
    }
}

impl TrainArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.train.batch_size = b;
        }
        if let Some(lr) = self.lr {
            cfg.train.lr = lr;
        }
    }
}

/// Defaults, then the `--config` file, then explicit flags.
pub fn effective_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.dataset.seed = seed;
        cfg.train.seed = seed;
    }
    if cli.common.deterministic {
        cfg.deterministic = true;
        cfg.train.deterministic = true;
    }
    match &cli.command {
        Some(Command::Simulate(d)) => d.apply(&mut cfg)?,
        Some(Command::Train(t)) => t.apply(&mut cfg),
        Some(Command::Pipeline { data, train }) => {
            data.apply(&mut cfg)?;
            train.apply(&mut cfg);
        }
        _ => {}
    }
    Ok(cfg)
}

fn work_dir(common: &Common) -> Result<&Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| Error::Config("--out <DIR> is required".into()))
}

fn execute(cli: &Cli, cfg: &PipelineConfig) -> Result<()> {
    let Some(command) = &cli.command else { return Ok(()) };
    let dir = work_dir(&cli.common)?;
    match command {
        Command::Simulate(_) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let m = pipeline::simulate(cfg, dir)?;
            let count = |s: &str| m.samples.iter().filter(|r| r.split == s).count();
            println!(
                "{} samples (train {}, val {}, test {}) -> {}",
                m.samples.len(),
                count("train"),
                count("val"),
                count("test"),
                dir.display()
            );
        }
        Command::Preprocess => {
            let m = pipeline::preprocess(cfg, dir)?;
            println!("{} map pairs -> {}", m.samples.len(), dir.join("maps").display());
        }
        Command::Corners => {
            let m = pipeline::corners(cfg, dir)?;
            println!("{} corner sets -> {}", 2 * m.samples.len(), dir.join("corners").display());
        }
        Command::Fuse => {
            let m = pipeline::fuse(cfg, dir)?;
            println!("{} clouds -> {}", m.samples.len(), dir.join("clouds").display());
        }
        Command::Train(_) => {
            let out = pipeline::train(cfg, dir)?;
            println!(
                "best validation accuracy {:.4} at batch {} -> {}",
                out.best_val_acc,
                out.best_batch,
                dir.join("model").display()
            );
        }
        Command::Eval => {
            for (group, s) in pipeline::eval(cfg, dir)? {
                println!("{group}: accuracy {:.4}, macro F-1 {:.4}, n = {}", s.accuracy, s.macro_f1, s.total);
            }
        }
        Command::Plot => {
            let files = pipeline::plot(cfg, dir)?;
            println!("{} images -> {}", files.len(), dir.join("plots").display());
        }
        Command::Pipeline { .. } => {
            let r = pipeline::run_pipeline(cfg, dir)?;
            println!("{} samples, best validation accuracy {:.4}", r.samples, r.best_val_acc);
            for (group, s) in &r.groups {
                println!("{group}: accuracy {:.4}, macro F-1 {:.4}, n = {}", s.accuracy, s.macro_f1, s.total);
            }
        }
    }
    Ok(())
}

/// Parses `argv` (program name first) and runs it; returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match effective_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if cli.common.dump_config {
        print!("{}", cfg.to_json());
        return 0;
    }
    if cli.command.is_none() {
        eprintln!("error: a subcommand is required (see --help)");
        return 2;
    }
    if cfg.deterministic {
        // keep any library-internal parallelism on the calling thread
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    match execute(&cli, &cfg) {
        Ok(()) => 0,
        Err(Error::Config(msg)) if msg.starts_with("--out") => {
            eprintln!("error: {msg}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("mdcorner").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        std::fs::write(&file, r#"{"dataset": {"per_class": 3, "seed": 9}, "train": {"epochs": 2}}"#).unwrap();
        let f = file.to_str().unwrap();
        let cfg = effective_config(&parse(&["--config", f, "simulate"])).unwrap();
        assert_eq!((cfg.dataset.per_class, cfg.dataset.seed), (3, 9));
        let cfg = effective_config(&parse(&["--config", f, "--seed", "4", "simulate", "--per-class", "5"])).unwrap();
        assert_eq!((cfg.dataset.per_class, cfg.dataset.seed), (5, 4));
        let cfg = effective_config(&parse(&["--config", f, "train", "--epochs", "7"])).unwrap();
        assert_eq!(cfg.train.epochs, 7);
    }

    #[test]
    fn class_and_height_lists() {
        let cfg = effective_config(&parse(&["simulate", "--classes", "S1,s4", "--heights", "1.8,1.6"])).unwrap();
        assert_eq!(cfg.dataset.classes, vec![ActivityClass::S1, ActivityClass::S4]);
        assert_eq!(cfg.dataset.heights_m, vec![1.8, 1.6]);
        assert!(effective_config(&parse(&["simulate", "--classes", "S13"])).is_err());
        assert!(effective_config(&parse(&["simulate", "--heights", "tall"])).is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["mdcorner", "frobnicate"]), 2);
        assert_eq!(run(["mdcorner", "simulate", "--bogus"]), 2);
        assert_eq!(run(["mdcorner"]), 2);
        assert_eq!(run(["mdcorner", "pipeline", "--help"]), 0);
        assert_eq!(run(["mdcorner", "--dump-config"]), 0);
    }
}
