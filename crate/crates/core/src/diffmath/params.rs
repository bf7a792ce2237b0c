use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
}

/// Collects parameter declarations. The finished store has a fixed set of
/// names and shapes.
#[derive(Debug, Default)]
pub struct ParamStoreBuilder {
    decls: Vec<(String, Vec<usize>, Init)>,
}

impl ParamStoreBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a parameter. Ids are handed out in declaration order.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        let name = name.into();
        assert!(
            !self.decls.iter().any(|(n, _, _)| *n == name),
            "duplicate parameter name {name}"
        );
        assert!(shape.iter().all(|&d| d > 0), "zero extent in {name}");
        self.decls.push((name, shape.to_vec(), init));
        ParamId(self.decls.len() - 1)
    }

    pub fn build<T: Real>(self, seed: u64) -> ParamStore<T> {
        let mut names = Vec::with_capacity(self.decls.len());
        let mut values = Vec::with_capacity(self.decls.len());
        let mut grads = Vec::with_capacity(self.decls.len());
        for (name, shape, init) in self.decls {
            let mut t = Tensor::zeros(&shape);
            if let Init::FanIn(fan_in) = init {
                // each parameter draws from its own generator keyed by name,
                // so values do not depend on declaration order
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(&name));
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                for v in t.values_mut() {
                    *v = T::lit(rng.gen_range(-bound..=bound));
                }
            }
            grads.push(Tensor::zeros(&shape));
            values.push(t);
            names.push(name);
        }
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), ParamId(i))).collect();
        ParamStore { names, values, grads, index, seed }
    }
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Named trainable tensors with gradient accumulators of identical shape.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    grads: Vec<Tensor<T>>,
    index: BTreeMap<String, ParamId>,
    seed: u64,
}

/// Per-worker gradient buffer, one tensor per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer<T> {
    pub(crate) grads: Vec<Vec<T>>,
}

impl<T: Real> GradBuffer<T> {
    pub fn get(&self, id: ParamId) -> &[T] {
        &self.grads[id.0]
    }

    /// Adds `other` into `self`, element by element.
    pub fn add_assign(&mut self, other: &GradBuffer<T>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, k: T) {
        self.grads.iter_mut().flatten().for_each(|x| *x *= k);
    }

    pub fn sq_norm(&self) -> T {
        self.grads.iter().flatten().map(|&x| x * x).sum()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zero_buffer(&self) -> GradBuffer<T> {
        GradBuffer { grads: self.values.iter().map(|t| vec![T::zero(); t.len()]).collect() }
    }

    /// Adds a worker buffer into the stored gradients.
    pub fn accumulate(&mut self, buf: &GradBuffer<T>) {
        for (g, b) in self.grads.iter_mut().zip(&buf.grads) {
            for (x, y) in g.values_mut().iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(T::zero()));
    }

    pub fn grad_norm(&self) -> T {
        self.grads.iter().map(Tensor::sq_norm).sum::<T>().sqrt()
    }

    pub(crate) fn grads_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.grads
    }

    pub(crate) fn values_and_grads_mut(&mut self) -> (&mut [Tensor<T>], &[Tensor<T>]) {
        (&mut self.values, &self.grads)
    }

    /// Sets every value to zero.
    pub fn zero_values(&mut self) {
        self.values.iter_mut().for_each(|v| v.fill(T::zero()));
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::is_finite)
    }

    /// `{name: {shape: [...], values: [...]}}` with names in sorted order
    /// and every float written with 17 significant digits.
    pub fn to_json(&self) -> String {
        let mut out = String::from("{");
        for (i, (name, id)) in self.index.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let t = &self.values[id.0];
            out.push_str(&serde_json::to_string(name).expect("string serializes"));
            out.push_str(":{\"shape\":[");
            for (k, d) in t.shape().iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{d}");
            }
            out.push_str("],\"values\":[");
            for (k, v) in t.values().iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                write_float(&mut out, v.as_f64());
            }
            out.push_str("]}");
        }
        out.push('}');
        out
    }

    /// Overwrites values from [`ParamStore::to_json`] output. Names and
    /// shapes must match this store exactly.
    pub fn load_json(&mut self, text: &str) -> Result<()> {
        let records: BTreeMap<String, TensorRecord> = serde_json::from_str(text)?;
        self.load_records(&records)
    }

    pub(crate) fn load_records(&mut self, records: &BTreeMap<String, TensorRecord>) -> Result<()> {
        if records.len() != self.names.len() {
            return Err(Error::ParamMismatch(format!(
                "expected {} parameters, found {}",
                self.names.len(),
                records.len()
            )));
        }
        let mut staged = Vec::with_capacity(self.values.len());
        for (name, &id) in &self.index {
            let rec = records
                .get(name)
                .ok_or_else(|| Error::ParamMismatch(format!("missing parameter {name}")))?;
            if rec.shape != self.values[id.0].shape() {
                return Err(Error::ParamMismatch(format!(
                    "{name}: shape {:?} does not match {:?}",
                    rec.shape,
                    self.values[id.0].shape()
                )));
            }
            let vals = rec.values.iter().map(|&v| T::lit(v)).collect();
            staged.push((id, Tensor::new(rec.shape.clone(), vals)?));
        }
        for (id, t) in staged {
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("parameter {}", self.names[id.0])));
            }
            self.values[id.0] = t;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
pub(crate) struct TensorRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

fn write_float(out: &mut String, v: f64) {
    if v == 0.0 {
        // keep the sign of negative zero
        out.push_str(if v.is_sign_negative() { "-0.0" } else { "0.0" });
    } else {
        let _ = write!(out, "{v:.16e}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ParamStore<f64> {
        let mut b = ParamStoreBuilder::new();
        b.add("layer.w", &[3, 4], Init::FanIn(4));
        b.add("layer.b", &[3], Init::Zeros);
        b.build(11)
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let s = small();
        let w = s.value(s.id("layer.w").unwrap());
        assert!(w.values().iter().all(|v| v.abs() <= 0.5));
        assert!(w.values().iter().any(|v| *v != 0.0));
        assert!(s.value(s.id("layer.b").unwrap()).values().iter().all(|v| *v == 0.0));
        assert_eq!(small().to_json(), s.to_json());

        // declaration order does not change a parameter's initial values
        let mut b = ParamStoreBuilder::new();
        b.add("layer.b", &[3], Init::Zeros);
        b.add("layer.w", &[3, 4], Init::FanIn(4));
        let other: ParamStore<f64> = b.build(11);
        assert_eq!(other.value(other.id("layer.w").unwrap()), w);
    }

    #[test]
    fn grads_match_value_shapes() {
        let s = small();
        for id in s.ids() {
            assert_eq!(s.value(id).shape(), s.grad(id).shape());
        }
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let s = small();
        let text = s.to_json();
        assert!(text.starts_with("{\"layer.b\":{\"shape\":[3],\"values\":[0.0,"));
        let mut t = small();
        t.zero_values();
        t.load_json(&text).unwrap();
        for id in s.ids() {
            assert_eq!(s.value(id), t.value(id));
        }
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let mut s = small();
        let bad = r#"{"layer.b":{"shape":[2],"values":[0,0]},"layer.w":{"shape":[3,4],"values":[0,0,0,0,0,0,0,0,0,0,0,0]}}"#;
        assert!(matches!(s.load_json(bad), Err(Error::ParamMismatch(_))));
        let missing = r#"{"layer.b":{"shape":[3],"values":[0,0,0]}}"#;
        assert!(s.load_json(missing).is_err());
    }

    #[test]
    fn seventeen_digit_format() {
        let mut s = String::new();
        write_float(&mut s, 0.1);
        assert_eq!(s, "1.0000000000000001e-1");
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
    }
}
