use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Rescales stored gradients so their global norm is at most `clip_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients<T: Real>(params: &mut ParamStore<T>, clip_norm: f64) -> T {
    let norm = params.grad_norm();
    let clip = T::lit(clip_norm);
    if clip_norm.is_finite() && norm > clip {
        let k = clip / norm;
        for g in params.grads_mut() {
            g.values_mut().iter_mut().for_each(|x| *x *= k);
        }
    }
    norm
}

/// Clip, then `p <- p - lr * g` for every entry, then zero the gradients.
pub fn sgd_step<T: Real>(params: &mut ParamStore<T>, learning_rate: f64, clip_norm: f64) -> Result<()> {
    if !(learning_rate > 0.0) {
        return Err(Error::NonPositiveLearningRate(learning_rate));
    }
    clip_gradients(params, clip_norm);
    let lr = T::lit(learning_rate);
    let (values, grads) = params.values_and_grads_mut();
    for (v, g) in values.iter_mut().zip(grads) {
        for (p, &d) in v.values_mut().iter_mut().zip(g.values()) {
            *p -= lr * d;
        }
    }
    params.zero_grad();
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Adaptive-moment descent with bias correction. Clipping and gradient
/// zeroing behave as in [`sgd_step`].
#[derive(Debug, Clone)]
pub struct Adam<T> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = params.ids().map(|id| vec![T::zero(); params.value(id).len()]).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, learning_rate: f64, clip_norm: f64) -> Result<()> {
        if !(learning_rate > 0.0) {
            return Err(Error::NonPositiveLearningRate(learning_rate));
        }
        clip_gradients(params, clip_norm);
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::one() - b1.powi(self.step);
        let c2 = T::one() - b2.powi(self.step);
        let lr = T::lit(learning_rate);
        let eps = T::lit(self.eps);
        let (values, grads) = params.values_and_grads_mut();
        for (((v, g), m), s) in values.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &d), mi), si) in v.values_mut().iter_mut().zip(g.values()).zip(m.iter_mut()).zip(s.iter_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * d;
                *si = b2 * *si + (T::one() - b2) * d * d;
                let mhat = *mi / c1;
                let shat = *si / c2;
                *p -= lr * mhat / (shat.sqrt() + eps);
            }
        }
        params.zero_grad();
        Ok(())
    }
}

/// Either optimizer behind one interface.
#[derive(Debug, Clone)]
pub enum Optimizer<T> {
    Sgd,
    Adam(Adam<T>),
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, params: &ParamStore<T>) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(params)),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, learning_rate: f64, clip_norm: f64) -> Result<()> {
        match self {
            Optimizer::Sgd => sgd_step(params, learning_rate, clip_norm),
            Optimizer::Adam(a) => a.step(params, learning_rate, clip_norm),
        }
    }
}
