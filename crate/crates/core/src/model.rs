use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::arch::{Architecture, DEFAULT_MAX_NODES};
use crate::decoder::{Decoder, GenerationTrace};
use crate::diffmath::{ParamStore, ParamStoreBuilder, Tape};
use crate::encoder::{Encoder, Posterior};
use crate::error::{Error, Result};
use crate::predictors::Predictors;
use crate::scalar::Real;

/// Layer widths and the node budget shared by all components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Node-state width `H`.
    pub hidden: usize,
    /// Latent dimensionality `J`.
    pub latent: usize,
    /// Predictor hidden width `P`.
    pub predictor_hidden: usize,
    pub max_nodes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: 64, latent: 16, predictor_hidden: 64, max_nodes: DEFAULT_MAX_NODES }
    }
}

impl ModelConfig {
    pub fn check(&self) -> Result<()> {
        if self.hidden == 0 || self.latent == 0 || self.predictor_hidden == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.max_nodes < 2 {
            return Err(Error::Config("max_nodes must be at least 2".into()));
        }
        Ok(())
    }
}

/// Encoder, decoder and both predictors over one parameter store.
#[derive(Debug, Clone)]
pub struct NasModel<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub predictors: Predictors,
}

impl<T: Real> NasModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.check()?;
        let mut b = ParamStoreBuilder::new();
        let encoder = Encoder::register(&mut b, config.hidden, config.latent);
        let decoder = Decoder::register(&mut b, config.hidden, config.latent);
        let predictors = Predictors::register(&mut b, config.latent, config.predictor_hidden);
        Ok(Self { config, params: b.build(seed), encoder, decoder, predictors })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent
    }

    fn check_latent(&self, s: &[T]) -> Result<()> {
        if s.len() != self.config.latent {
            return Err(Error::Shape(format!("latent code has length {}, expected {}", s.len(), self.config.latent)));
        }
        Ok(())
    }

    pub fn posterior(&self, arch: &Architecture) -> Result<Posterior<T>> {
        let mut tape = Tape::new(&self.params);
        let h = self.encoder.encode(&mut tape, arch, self.config.max_nodes)?;
        let (mu, lv) = self.encoder.posterior(&mut tape, h)?;
        Ok(Posterior { mu: tape.value(mu).to_vec(), logvar: tape.value(lv).to_vec() })
    }

    /// `(f_perf(s), f_comp(s))`.
    pub fn predict(&self, s: &[T]) -> Result<(T, T)> {
        self.check_latent(s)?;
        let mut tape = Tape::new(&self.params);
        let sv = tape.input(s.to_vec());
        let y = self.predictors.predict_perf(&mut tape, sv)?;
        let z = self.predictors.predict_comp(&mut tape, sv)?;
        Ok((tape.scalar(y), tape.scalar(z)))
    }

    pub fn objective(&self, s: &[T], complexity_weight: f64) -> Result<T> {
        self.check_latent(s)?;
        let mut tape = Tape::new(&self.params);
        let sv = tape.input(s.to_vec());
        let f = self.predictors.combined_objective(&mut tape, sv, complexity_weight)?;
        Ok(tape.scalar(f))
    }

    /// Objective value and its gradient with respect to `s`.
    pub fn objective_with_grad(&self, s: &[T], complexity_weight: f64) -> Result<(T, Vec<T>)> {
        self.check_latent(s)?;
        let mut tape = Tape::new(&self.params);
        let sv = tape.input(s.to_vec());
        let f = self.predictors.combined_objective(&mut tape, sv, complexity_weight)?;
        let value = tape.scalar(f);
        let grads = tape.backward(f)?;
        Ok((value, grads.wrt(sv).to_vec()))
    }

    pub fn generate<R: RngCore>(&self, s: &[T], rng: &mut R) -> Result<(Architecture, GenerationTrace)> {
        self.check_latent(s)?;
        let mut tape = Tape::new(&self.params);
        let sv = tape.input(s.to_vec());
        self.decoder.generate(&mut tape, sv, rng, self.config.max_nodes)
    }

    pub fn greedy_generate(&self, s: &[T]) -> Result<Architecture> {
        self.check_latent(s)?;
        let mut tape = Tape::new(&self.params);
        let sv = tape.input(s.to_vec());
        Ok(self.decoder.greedy_generate(&mut tape, sv, self.config.max_nodes)?.0)
    }

    /// `(L_n, L_e)` for `arch` decoded from `s`.
    pub fn reconstruction_losses(&self, arch: &Architecture, s: &[T]) -> Result<(T, T)> {
        self.check_latent(s)?;
        let mut tape = Tape::new(&self.params);
        let sv = tape.input(s.to_vec());
        let (ln, le) = self.decoder.teacher_forced_loss(&mut tape, arch, sv, self.config.max_nodes)?;
        Ok((tape.scalar(ln), tape.scalar(le)))
    }
}
