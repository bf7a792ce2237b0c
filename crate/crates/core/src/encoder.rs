//! Asynchronous message passing over an architecture, ending in a diagonal
//! Gaussian posterior over latent codes.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::arch::{Architecture, OpType};
use crate::diffmath::{kl_terms, Activation, GruCell, Linear, Mlp, MlpSpec, ParamStoreBuilder, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Gated-sum aggregation: `sum_u logistic(Gate h_u) * Map h_u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GatedSum {
    pub gate: Linear,
    pub map: Linear,
}

impl GatedSum {
    pub fn register(b: &mut ParamStoreBuilder, prefix: &str, hidden: usize) -> Self {
        Self {
            gate: Linear::register(b, &format!("{prefix}.gate"), hidden, hidden),
            map: Linear::register(b, &format!("{prefix}.map"), hidden, hidden),
        }
    }

    /// The contribution of a single hidden state.
    pub fn term<T: Real>(&self, tape: &mut Tape<'_, T>, h: Var) -> Result<Var> {
        let g = self.gate.forward(tape, h)?;
        let g = tape.logistic(g);
        let m = self.map.forward(tape, h)?;
        tape.mul(g, m)
    }

    /// Sums precomputed terms; the empty set gives the zero vector.
    pub fn sum_terms<T: Real>(&self, tape: &mut Tape<'_, T>, terms: &[Var]) -> Result<Var> {
        Ok(match tape.sum_set(terms)? {
            Some(v) => v,
            None => tape.zeros(self.map.outputs),
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, hiddens: &[Var]) -> Result<Var> {
        for &h in hiddens {
            if tape.dim(h) != self.gate.inputs {
                return Err(Error::Shape(format!("gated sum expects width {}, got {}", self.gate.inputs, tape.dim(h))));
            }
        }
        let terms = hiddens.iter().map(|&h| self.term(tape, h)).collect::<Result<Vec<_>>>()?;
        self.sum_terms(tape, &terms)
    }
}

/// Diagonal Gaussian `N(mu, exp(logvar))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior<T> {
    pub mu: Vec<T>,
    pub logvar: Vec<T>,
}

impl<T: Real> Posterior<T> {
    /// `-1/2 sum_j (1 + logvar_j - mu_j^2 - exp(logvar_j))`.
    pub fn kl_divergence(&self) -> T {
        kl_terms(&self.mu, &self.logvar)
    }

    /// `mu + exp(logvar / 2) * eps` with `eps ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let eps = standard_normal::<T, R>(rng, self.mu.len());
        let half = T::lit(0.5);
        self.mu.iter().zip(&self.logvar).zip(eps).map(|((&m, &l), e)| m + (l * half).exp() * e).collect()
    }
}

pub fn kl_divergence<T: Real>(post: &Posterior<T>) -> T {
    post.kl_divergence()
}

pub fn sample_latent<T: Real, R: Rng + ?Sized>(post: &Posterior<T>, rng: &mut R) -> Vec<T> {
    post.sample(rng)
}

pub fn standard_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<T> {
    (0..n).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoder {
    pub hidden: usize,
    pub latent: usize,
    pub aggregate: GatedSum,
    pub gru: GruCell,
    pub f_mean: Mlp,
    pub f_logvar: Mlp,
}

impl Encoder {
    pub fn register(b: &mut ParamStoreBuilder, hidden: usize, latent: usize) -> Self {
        let head = || MlpSpec::new(&[hidden, hidden, latent], Activation::Tanh, Activation::Identity);
        Self {
            hidden,
            latent,
            aggregate: GatedSum::register(b, "encoder.aggregate", hidden),
            gru: GruCell::register(b, "encoder.gru", OpType::COUNT, hidden),
            f_mean: Mlp::register(b, "encoder.mean", head()),
            f_logvar: Mlp::register(b, "encoder.logvar", head()),
        }
    }

    /// Hidden state of the output node. Nodes are visited in index order,
    /// which is topological because every edge points forward.
    pub fn encode<T: Real>(&self, tape: &mut Tape<'_, T>, arch: &Architecture, max_nodes: usize) -> Result<Var> {
        arch.ensure_valid(max_nodes)?;
        let n = arch.num_nodes();
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in arch.edges() {
            preds[v].push(u);
        }
        let mut terms: Vec<Var> = Vec::with_capacity(n);
        let mut h_last = None;
        for (v, op) in arch.types().iter().enumerate() {
            let incoming: Vec<Var> = preds[v].iter().map(|&u| terms[u]).collect();
            let agg = self.aggregate.sum_terms(tape, &incoming)?;
            let x = tape.one_hot(OpType::COUNT, op.code() as usize);
            let h = self.gru.forward(tape, x, agg)?;
            if v + 1 < n {
                terms.push(self.aggregate.term(tape, h)?);
            }
            h_last = Some(h);
        }
        Ok(h_last.expect("valid architectures have nodes"))
    }

    /// `(mu, logvar)` with logvar clamped to `[-10, 10]`.
    pub fn posterior<T: Real>(&self, tape: &mut Tape<'_, T>, h_out: Var) -> Result<(Var, Var)> {
        let mu = self.f_mean.forward(tape, h_out)?;
        let raw = self.f_logvar.forward(tape, h_out)?;
        let logvar = tape.clamp(raw, T::lit(LOGVAR_MIN), T::lit(LOGVAR_MAX));
        Ok((mu, logvar))
    }
}
