//! Joint minibatch training of encoder, decoder and predictors, with
//! per-epoch telemetry and checkpoints.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::Architecture;
use crate::diffmath::{GradBuffer, OptimizerKind, Optimizer, Tape, TensorRecord, Var};
use crate::encoder::standard_normal;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalConfig, EvalReport};
use crate::model::{ModelConfig, NasModel};
use crate::oracle::{Dataset, Labeled};
use crate::scalar::Real;
use crate::seeding::{derive_seed, stream, tags};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub kl_weight: f64,
    pub optimizer: OptimizerKind,
    pub clip_norm: f64,
    pub seed: u64,
    pub model: ModelConfig,
    /// Evaluate every this many epochs (and after the last); 0 disables.
    pub eval_every: usize,
    pub eval: EvalConfig,
    /// Single-threaded execution. Parallel runs reduce per-graph gradients
    /// in the same fixed order and give the same numbers.
    pub serial: bool,
    /// Record wall-clock seconds in the log. Off for byte-reproducible logs.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 300,
            kl_weight: 1.0,
            optimizer: OptimizerKind::Sgd,
            clip_norm: 5.0,
            seed: 0,
            model: ModelConfig::default(),
            eval_every: 50,
            eval: EvalConfig::default(),
            serial: true,
            record_wall_time: true,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::NonPositiveLearningRate(self.learning_rate));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        if !(self.kl_weight >= 0.0) {
            return Err(Error::Config("kl_weight must be non-negative".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        self.model.check()
    }
}

/// The four loss terms of one pass and their total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub node: f64,
    pub edge: f64,
    pub kl: f64,
    pub predictor: f64,
    pub total: f64,
}

impl LossParts {
    pub fn reconstruction(&self) -> f64 {
        self.node + self.edge
    }
}

/// Records `L_n + L_e + beta * KL + (f_perf(s) - y)^2 + (f_comp(s) - z)^2`
/// with `s = mu + exp(logvar / 2) * eps`.
pub fn record_total_loss<T: Real>(
    model: &NasModel<T>,
    tape: &mut Tape<'_, T>,
    arch: &Architecture,
    y: f64,
    z: f64,
    eps: Vec<T>,
    kl_weight: f64,
) -> Result<(Var, LossParts)> {
    let h = model.encoder.encode(tape, arch, model.config.max_nodes)?;
    let (mu, logvar) = model.encoder.posterior(tape, h)?;
    let s = tape.reparameterize(mu, logvar, eps)?;
    let (ln, le) = model.decoder.teacher_forced_loss(tape, arch, s, model.config.max_nodes)?;
    let kl = tape.kl_standard_normal(mu, logvar)?;
    let pred = model.predictors.squared_loss(tape, s, y, z)?;
    let rec = tape.add(ln, le)?;
    let kl_w = tape.scale(kl, T::lit(kl_weight));
    let t = tape.add(rec, kl_w)?;
    let total = tape.add(t, pred)?;
    let parts = LossParts {
        node: tape.scalar(ln).as_f64(),
        edge: tape.scalar(le).as_f64(),
        kl: tape.scalar(kl).as_f64(),
        predictor: tape.scalar(pred).as_f64(),
        total: tape.scalar(total).as_f64(),
    };
    Ok((total, parts))
}

/// One stochastic pass, drawing `eps` from `rng`.
pub fn total_loss<T: Real, R: Rng + ?Sized>(
    model: &NasModel<T>,
    arch: &Architecture,
    y: f64,
    z: f64,
    rng: &mut R,
    kl_weight: f64,
) -> Result<LossParts> {
    let mut tape = Tape::new(&model.params);
    let eps = standard_normal(rng, model.latent_dim());
    Ok(record_total_loss(model, &mut tape, arch, y, z, eps, kl_weight)?.1)
}

/// Loss parts and parameter gradients of one stochastic pass.
pub fn loss_and_gradients<T: Real>(
    model: &NasModel<T>,
    record: &Labeled,
    eps: Vec<T>,
    kl_weight: f64,
) -> Result<(LossParts, GradBuffer<T>)> {
    let mut tape = Tape::new(&model.params);
    let (loss, parts) = record_total_loss(model, &mut tape, &record.arch, record.perf, record.comp, eps, kl_weight)?;
    if !parts.total.is_finite() {
        return Err(Error::NonFinite(format!("loss {} on {}", parts.total, record.arch)));
    }
    Ok((parts, tape.backward(loss)?.into_params()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean `L_n + L_e` per graph.
    pub rec_loss: f64,
    pub kl: f64,
    pub pred_loss: f64,
    pub total: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub evals: Vec<EvalReport>,
}

impl TrainLog {
    /// CSV with header `epoch,rec_loss,kl,pred_loss,total,seconds`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,rec_loss,kl,pred_loss,total,seconds\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.epoch, r.rec_loss, r.kl, r.pred_loss, r.total, r.seconds);
        }
        out
    }
}

/// Trained parameters with the configuration and data they came from.
#[derive(Debug, Clone)]
pub struct ModelCheckpoint<T> {
    pub model: NasModel<T>,
    pub config: TrainConfig,
    pub epoch: usize,
    pub dataset_fingerprint: String,
}

#[derive(Deserialize)]
struct CheckpointFile {
    format: u32,
    epoch: usize,
    dataset_fingerprint: String,
    config: TrainConfig,
    params: BTreeMap<String, TensorRecord>,
}

const CHECKPOINT_FORMAT: u32 = 1;

impl<T: Real> ModelCheckpoint<T> {
    pub fn to_json(&self) -> String {
        format!(
            "{{\"format\":{CHECKPOINT_FORMAT},\"epoch\":{},\"dataset_fingerprint\":{},\"config\":{},\"params\":{}}}",
            self.epoch,
            serde_json::to_string(&self.dataset_fingerprint).expect("string serializes"),
            serde_json::to_string(&self.config).expect("config serializes"),
            self.model.params.to_json()
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Parse(format!("unsupported checkpoint format {}", file.format)));
        }
        let mut model = NasModel::new(file.config.model, file.config.seed)?;
        model.params.load_records(&file.params)?;
        Ok(Self { model, config: file.config, epoch: file.epoch, dataset_fingerprint: file.dataset_fingerprint })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Trains a freshly initialised model.
pub fn train<T: Real>(dataset: &Dataset, config: &TrainConfig) -> Result<(ModelCheckpoint<T>, TrainLog)> {
    config.check()?;
    let model = NasModel::new(config.model, config.seed)?;
    train_model(model, dataset, config, |_, _| {})
}

/// Trains `model` in place of a fresh one. `on_epoch` sees every finished
/// epoch record together with the current parameters.
pub fn train_model<T: Real, F>(
    mut model: NasModel<T>,
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<(ModelCheckpoint<T>, TrainLog)>
where
    F: FnMut(&EpochRecord, &NasModel<T>),
{
    config.check()?;
    if dataset.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for r in dataset.all() {
        r.check_labels()?;
    }
    let mut optimizer = Optimizer::new(config.optimizer, &model.params);
    let mut log = TrainLog::default();
    let start = Instant::now();
    let n = dataset.train.len();

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(config.seed, tags::SHUFFLE, epoch as u64));
        let mut sums = LossParts::default();

        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let jobs: Vec<(usize, usize)> = batch.iter().enumerate().map(|(k, &i)| (b * config.batch_size + k, i)).collect();
            let run = |&(slot, i): &(usize, usize)| {
                let mut rng = stream(derive_seed(config.seed, tags::TRAIN_EPS, epoch as u64), tags::TRAIN_EPS, slot as u64);
                let eps = standard_normal(&mut rng, model.latent_dim());
                loss_and_gradients(&model, &dataset.train[i], eps, config.kl_weight)
            };
            let results: Vec<Result<(LossParts, GradBuffer<T>)>> =
                if config.serial { jobs.iter().map(run).collect() } else { jobs.par_iter().map(run).collect() };

            let mut acc = model.params.zero_buffer();
            for r in results {
                let (parts, g) = r?;
                sums.node += parts.node;
                sums.edge += parts.edge;
                sums.kl += parts.kl;
                sums.predictor += parts.predictor;
                sums.total += parts.total;
                acc.add_assign(&g);
            }
            acc.scale(T::one() / T::lit(batch.len() as f64));
            model.params.accumulate(&acc);
            optimizer.step(&mut model.params, config.learning_rate, config.clip_norm)?;
            if !model.params.all_finite() {
                return Err(Error::NonFinite(format!("parameters after epoch {epoch} batch {b}")));
            }
        }

        let nf = n as f64;
        let record = EpochRecord {
            epoch,
            rec_loss: (sums.node + sums.edge) / nf,
            kl: sums.kl / nf,
            pred_loss: sums.predictor / nf,
            total: sums.total / nf,
            seconds: if config.record_wall_time { start.elapsed().as_secs_f64() } else { 0.0 },
        };
        if !record.total.is_finite() {
            return Err(Error::NonFinite(format!("mean loss at epoch {epoch}")));
        }
        on_epoch(&record, &model);
        log.epochs.push(record);

        let due = config.eval_every > 0 && (epoch % config.eval_every == 0 || epoch == config.epochs);
        if due && !dataset.test.is_empty() {
            let mut eval_cfg = config.eval.clone();
            eval_cfg.serial = config.serial;
            log.evals.push(evaluate(&model, dataset, &eval_cfg, Some(epoch))?);
        }
    }

    let checkpoint = ModelCheckpoint {
        model,
        config: config.clone(),
        epoch: config.epochs,
        dataset_fingerprint: dataset.fingerprint(),
    };
    Ok((checkpoint, log))
}
