//! Performance and complexity regressors on the latent space.

use crate::diffmath::{Activation, Mlp, MlpSpec, ParamStoreBuilder, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Predictors {
    pub perf: Mlp,
    pub comp: Mlp,
}

impl Predictors {
    pub fn register(b: &mut ParamStoreBuilder, latent: usize, hidden: usize) -> Self {
        let spec = || MlpSpec::new(&[latent, hidden, hidden, 1], Activation::Tanh, Activation::Logistic);
        Self { perf: Mlp::register(b, "predictor.perf", spec()), comp: Mlp::register(b, "predictor.comp", spec()) }
    }

    pub fn predict_perf<T: Real>(&self, tape: &mut Tape<'_, T>, s: Var) -> Result<Var> {
        self.perf.forward(tape, s)
    }

    pub fn predict_comp<T: Real>(&self, tape: &mut Tape<'_, T>, s: Var) -> Result<Var> {
        self.comp.forward(tape, s)
    }

    /// `(f_perf(s) - y)^2 + (f_comp(s) - z)^2`.
    pub fn squared_loss<T: Real>(&self, tape: &mut Tape<'_, T>, s: Var, y: f64, z: f64) -> Result<Var> {
        for v in [y, z] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::LabelOutOfRange(v));
            }
        }
        let yh = self.predict_perf(tape, s)?;
        let zh = self.predict_comp(tape, s)?;
        let ly = tape.squared_error(yh, T::lit(y))?;
        let lz = tape.squared_error(zh, T::lit(z))?;
        tape.add(ly, lz)
    }

    /// Summed squared loss over a batch of `(s, y, z)`.
    pub fn predictor_loss<T: Real>(&self, tape: &mut Tape<'_, T>, batch: &[(Var, f64, f64)]) -> Result<Var> {
        let parts = batch.iter().map(|&(s, y, z)| self.squared_loss(tape, s, y, z)).collect::<Result<Vec<_>>>()?;
        crate::decoder::sum_scalars(tape, &parts)
    }

    /// `f_perf(s) - complexity_weight * f_comp(s)`.
    pub fn combined_objective<T: Real>(&self, tape: &mut Tape<'_, T>, s: Var, complexity_weight: f64) -> Result<Var> {
        let yh = self.predict_perf(tape, s)?;
        let zh = self.predict_comp(tape, s)?;
        let zh = tape.scale(zh, T::lit(complexity_weight));
        tape.sub(yh, zh)
    }
}
