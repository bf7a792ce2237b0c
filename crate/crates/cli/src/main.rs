use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use latentnas::diffmath::OptimizerKind;
use latentnas::metrics::{evaluate, latent_sweep, sweep_csv, EvalConfig};
use latentnas::oracle::{build_dataset, Dataset, OracleConfig};
use latentnas::searcher::{search, DecodeMode, SearchConfig};
use latentnas::trainer::{train, ModelCheckpoint, TrainConfig};
use latentnas::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_MISSING_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_DEGENERATE: u8 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct SweepConfig {
    half_width: f64,
    resolution: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { half_width: 3.0, resolution: 41 }
    }
}

/// Everything a command needs; echoed post-override into each output
/// directory as `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    seed: u64,
    data: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    out: Option<PathBuf>,
    n: usize,
    internal_nodes: usize,
    split_fraction: f64,
    score_with_oracle: bool,
    serial: bool,
    oracle: OracleConfig,
    train: TrainConfig,
    eval: EvalConfig,
    search: SearchConfig,
    sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: None,
            checkpoint: None,
            out: None,
            n: 1000,
            internal_nodes: 6,
            split_fraction: 0.9,
            score_with_oracle: false,
            serial: false,
            oracle: OracleConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            search: SearchConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Parser)]
#[command(name = "latentnas", version, about = "Latent-space architecture search with a graph VAE")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Seed for every random stream of the command.
    #[arg(long)]
    seed: Option<u64>,
    /// Single-threaded, bitwise-reproducible execution.
    #[arg(long)]
    serial: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Sample and label a dataset of architectures.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        internal_nodes: Option<usize>,
        #[arg(long)]
        split_fraction: Option<f64>,
    },
    /// Train a model on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        kl_weight: Option<f64>,
        /// sgd or adam
        #[arg(long)]
        optimizer: Option<String>,
        #[arg(long)]
        eval_every: Option<usize>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Gradient-ascent search in the latent space of a checkpoint.
    Search {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Label results with the surrogate oracle.
        #[arg(long)]
        score_with_oracle: bool,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        step_size: Option<f64>,
        #[arg(long)]
        complexity_weight: Option<f64>,
        /// greedy, or stochastic:K
        #[arg(long)]
        decode: Option<String>,
    },
    /// Predicted-performance grid over the top two latent principal components.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        half_width: Option<f64>,
        #[arg(long)]
        resolution: Option<usize>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NonFinite(_) => EXIT_NUMERICAL,
            Error::Degenerate(_) => EXIT_DEGENERATE,
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING_INPUT,
            _ => EXIT_FAILURE,
        };
        Failure { code, message: e.to_string() }
    }
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = read_input(path, "config")?;
            serde_json::from_str(&text).map_err(|e| fail(EXIT_FAILURE, format!("config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
        cfg.eval.seed = seed;
        cfg.search.seed = seed;
    }
    if common.serial {
        cfg.serial = true;
    }
    cfg.train.serial = cfg.serial;
    cfg.eval.serial = cfg.serial;
    cfg.search.serial = cfg.serial;
    cfg.train.record_wall_time = !cfg.serial;
    cfg.out = Some(common.out.clone());
    Ok(cfg)
}

fn read_input(path: &Path, what: &str) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| {
        let code = if e.kind() == std::io::ErrorKind::NotFound { EXIT_MISSING_INPUT } else { EXIT_FAILURE };
        fail(code, format!("cannot read {what} {}: {e}", path.display()))
    })
}

fn required(path: &Option<PathBuf>, what: &str) -> Result<PathBuf, Failure> {
    let p = path.clone().ok_or_else(|| fail(EXIT_MISSING_INPUT, format!("no {what} given")))?;
    if !p.exists() {
        return Err(fail(EXIT_MISSING_INPUT, format!("{what} {} does not exist", p.display())));
    }
    Ok(p)
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let out = cfg.out.clone().expect("output directory is always set");
    fs::create_dir_all(&out).map_err(|e| fail(EXIT_FAILURE, format!("cannot create {}: {e}", out.display())))?;
    let echo = serde_json::to_string_pretty(cfg).expect("config serializes");
    write(&out.join("config.json"), &echo)?;
    Ok(out)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| fail(EXIT_FAILURE, format!("cannot write {}: {e}", path.display())))
}

fn load_dataset(path: &Path, cfg: &RunConfig) -> Result<Dataset, Failure> {
    let text = read_input(path, "dataset")?;
    Ok(Dataset::from_jsonl(&text, cfg.seed, cfg.split_fraction)?)
}

fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint<f64>, Failure> {
    let text = read_input(path, "checkpoint")?;
    Ok(ModelCheckpoint::from_json(&text)?)
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, Failure> {
    match s.to_ascii_lowercase().as_str() {
        "sgd" => Ok(OptimizerKind::Sgd),
        "adam" => Ok(OptimizerKind::Adam),
        other => Err(fail(EXIT_FAILURE, format!("unknown optimizer {other:?}, expected sgd or adam"))),
    }
}

fn parse_decode(s: &str) -> Result<DecodeMode, Failure> {
    if s.eq_ignore_ascii_case("greedy") {
        return Ok(DecodeMode::Greedy);
    }
    s.strip_prefix("stochastic:")
        .and_then(|k| k.parse().ok())
        .map(DecodeMode::Stochastic)
        .ok_or_else(|| fail(EXIT_FAILURE, format!("bad decode mode {s:?}, expected greedy or stochastic:K")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData { common, n, internal_nodes, split_fraction } => {
            let mut cfg = load_config(&common)?;
            cfg.n = n.unwrap_or(cfg.n);
            cfg.internal_nodes = internal_nodes.unwrap_or(cfg.internal_nodes);
            cfg.split_fraction = split_fraction.unwrap_or(cfg.split_fraction);
            let ds = build_dataset(&cfg.oracle, cfg.n, cfg.internal_nodes, cfg.seed, cfg.split_fraction)?;
            let out = prepare_out(&cfg)?;
            let path = out.join("dataset.jsonl");
            ds.write(&path)?;
            eprintln!("wrote {} graphs ({} train, {} test) to {}", ds.len(), ds.train.len(), ds.test.len(), path.display());
        }
        Command::Train { common, data, epochs, learning_rate, batch_size, kl_weight, optimizer, eval_every } => {
            let mut cfg = load_config(&common)?;
            cfg.data = data.or(cfg.data);
            let t = &mut cfg.train;
            t.epochs = epochs.unwrap_or(t.epochs);
            t.learning_rate = learning_rate.unwrap_or(t.learning_rate);
            t.batch_size = batch_size.unwrap_or(t.batch_size);
            t.kl_weight = kl_weight.unwrap_or(t.kl_weight);
            t.eval_every = eval_every.unwrap_or(t.eval_every);
            if let Some(o) = optimizer {
                t.optimizer = parse_optimizer(&o)?;
            }
            let data = required(&cfg.data, "dataset")?;
            let ds = load_dataset(&data, &cfg)?;
            let out = prepare_out(&cfg)?;
            let (checkpoint, log) = train::<f64>(&ds, &cfg.train).map_err(|e| {
                let f = Failure::from(e);
                if f.code == EXIT_NUMERICAL {
                    fail(f.code, format!("training diverged: {}", f.message))
                } else {
                    f
                }
            })?;
            checkpoint.save(&out.join("checkpoint.json"))?;
            write(&out.join("trainlog.csv"), &log.to_csv())?;
            if !log.evals.is_empty() {
                write(&out.join("evals.json"), &serde_json::to_string_pretty(&log.evals).expect("reports serialize"))?;
            }
            if let Some(last) = log.epochs.last() {
                eprintln!("epoch {}: rec {:.4} kl {:.4} pred {:.5}", last.epoch, last.rec_loss, last.kl, last.pred_loss);
            }
        }
        Command::Eval { common, checkpoint, data } => {
            let mut cfg = load_config(&common)?;
            cfg.checkpoint = checkpoint.or(cfg.checkpoint);
            cfg.data = data.or(cfg.data);
            let ck = load_checkpoint(&required(&cfg.checkpoint, "checkpoint")?)?;
            let ds = load_dataset(&required(&cfg.data, "dataset")?, &cfg)?;
            if ds.fingerprint() != ck.dataset_fingerprint {
                eprintln!("warning: dataset fingerprint differs from the one the checkpoint was trained on");
            }
            let out = prepare_out(&cfg)?;
            let report = evaluate(&ck.model, &ds, &cfg.eval, Some(ck.epoch))?;
            write(&out.join("eval.json"), &report.to_json())?;
        }
        Command::Search {
            common,
            checkpoint,
            score_with_oracle,
            restarts,
            iterations,
            step_size,
            complexity_weight,
            decode,
        } => {
            let mut cfg = load_config(&common)?;
            cfg.checkpoint = checkpoint.or(cfg.checkpoint);
            cfg.score_with_oracle |= score_with_oracle;
            let s = &mut cfg.search;
            s.restarts = restarts.unwrap_or(s.restarts);
            s.iterations = iterations.unwrap_or(s.iterations);
            s.step_size = step_size.unwrap_or(s.step_size);
            s.complexity_weight = complexity_weight.unwrap_or(s.complexity_weight);
            if let Some(d) = decode {
                s.decode = parse_decode(&d)?;
            }
            let ck = load_checkpoint(&required(&cfg.checkpoint, "checkpoint")?)?;
            let out = prepare_out(&cfg)?;
            let oracle = cfg.score_with_oracle.then_some(&cfg.oracle);
            let result = search(&ck.model, &cfg.search, oracle)?;
            write(&out.join("search.json"), &result.to_json())?;
            write(&out.join("trajectories.csv"), &result.trajectory_csv())?;
            if let Some(best) = result.best() {
                eprintln!("best {} predicted f {:.4}", best.architecture, best.predicted_f);
            }
        }
        Command::Sweep { common, checkpoint, data, half_width, resolution } => {
            let mut cfg = load_config(&common)?;
            cfg.checkpoint = checkpoint.or(cfg.checkpoint);
            cfg.data = data.or(cfg.data);
            cfg.sweep.half_width = half_width.unwrap_or(cfg.sweep.half_width);
            cfg.sweep.resolution = resolution.unwrap_or(cfg.sweep.resolution);
            let ck = load_checkpoint(&required(&cfg.checkpoint, "checkpoint")?)?;
            let ds = load_dataset(&required(&cfg.data, "dataset")?, &cfg)?;
            let out = prepare_out(&cfg)?;
            let archs: Vec<_> = ds.all().map(|r| r.arch.clone()).collect();
            let rows = latent_sweep(&ck.model, &archs, cfg.sweep.half_width, cfg.sweep.resolution)?;
            write(&out.join("sweep.csv"), &sweep_csv(&rows))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
