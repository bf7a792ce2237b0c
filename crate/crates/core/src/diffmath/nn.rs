//! Neural building blocks recorded on a [`Tape`]: affine layers, MLPs and
//! the gated recurrent cell.

use serde::{Deserialize, Serialize};

use super::params::{Init, ParamId, ParamStoreBuilder};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Softmax after subtracting the maximum logit.
pub fn softmax_stable<T: Real>(logits: &[T]) -> Result<Vec<T>> {
    if logits.is_empty() {
        return Err(Error::EmptyLogits);
    }
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = logits.iter().map(|&x| (x - m).exp()).collect();
    let z: T = out.iter().copied().sum();
    out.iter_mut().for_each(|p| *p /= z);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Logistic,
    Softmax,
}

impl Activation {
    pub fn apply<T: Real>(self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        Ok(match self {
            Activation::Identity => x,
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::Logistic => tape.logistic(x),
            Activation::Softmax => tape.softmax(x)?,
        })
    }
}

/// `W x + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn register(b: &mut ParamStoreBuilder, prefix: &str, inputs: usize, outputs: usize) -> Self {
        let weight = b.add(format!("{prefix}.weight"), &[outputs, inputs], Init::FanIn(inputs));
        let bias = b.add(format!("{prefix}.bias"), &[outputs], Init::FanIn(inputs));
        Self { weight, bias, inputs, outputs }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let wx = tape.linear(self.weight, x)?;
        tape.add_bias(self.bias, wx)
    }
}

/// Layer widths plus the activation between layers and after the last one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(widths: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        Self { widths: widths.to_vec(), hidden, output }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn register(b: &mut ParamStoreBuilder, prefix: &str, spec: MlpSpec) -> Self {
        let layers = spec
            .widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::register(b, &format!("{prefix}.{i}"), w[0], w[1]))
            .collect();
        Self { spec, layers }
    }

    pub fn input_width(&self) -> usize {
        self.spec.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.spec.widths.last().unwrap()
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        mlp_forward(tape, x, self)
    }
}

/// Alternating affine maps and activations.
pub fn mlp_forward<T: Real>(tape: &mut Tape<'_, T>, x: Var, mlp: &Mlp) -> Result<Var> {
    if tape.dim(x) != mlp.input_width() {
        return Err(Error::Shape(format!(
            "mlp input {} vs first width {}",
            tape.dim(x),
            mlp.input_width()
        )));
    }
    let last = mlp.layers.len() - 1;
    let mut h = x;
    for (i, layer) in mlp.layers.iter().enumerate() {
        h = layer.forward(tape, h)?;
        let act = if i == last { mlp.spec.output } else { mlp.spec.hidden };
        h = act.apply(tape, h)?;
    }
    Ok(h)
}

/// Gated recurrent unit with the reset gate applied before the hidden
/// projection:
///
/// ```text
/// r  = logistic(W_r x + U_r h + b_r)
/// u  = logistic(W_u x + U_u h + b_u)
/// h~ = tanh(W_h x + U_h (r * h) + b_h)
/// h' = (1 - u) * h + u * h~
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruCell {
    pub inputs: usize,
    pub hidden: usize,
    w_r: ParamId,
    u_r: ParamId,
    b_r: ParamId,
    w_u: ParamId,
    u_u: ParamId,
    b_u: ParamId,
    w_h: ParamId,
    u_h: ParamId,
    b_h: ParamId,
}

impl GruCell {
    pub fn register(b: &mut ParamStoreBuilder, prefix: &str, inputs: usize, hidden: usize) -> Self {
        let mut w = |n: &str, shape: &[usize]| {
            let fan_in = if shape.len() == 2 { shape[1] } else { hidden };
            b.add(format!("{prefix}.{n}"), shape, Init::FanIn(fan_in))
        };
        Self {
            inputs,
            hidden,
            w_r: w("w_r", &[hidden, inputs]),
            u_r: w("u_r", &[hidden, hidden]),
            b_r: w("b_r", &[hidden]),
            w_u: w("w_u", &[hidden, inputs]),
            u_u: w("u_u", &[hidden, hidden]),
            b_u: w("b_u", &[hidden]),
            w_h: w("w_h", &[hidden, inputs]),
            u_h: w("u_h", &[hidden, hidden]),
            b_h: w("b_h", &[hidden]),
        }
    }

    pub fn params(&self) -> [ParamId; 9] {
        [self.w_r, self.u_r, self.b_r, self.w_u, self.u_u, self.b_u, self.w_h, self.u_h, self.b_h]
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var, h: Var) -> Result<Var> {
        if tape.dim(x) != self.inputs || tape.dim(h) != self.hidden {
            return Err(Error::Shape(format!(
                "gru expects input {} / hidden {}, got {} / {}",
                self.inputs,
                self.hidden,
                tape.dim(x),
                tape.dim(h)
            )));
        }
        let r = self.gate(tape, self.w_r, self.u_r, self.b_r, x, h)?;
        let r = tape.logistic(r);
        let u = self.gate(tape, self.w_u, self.u_u, self.b_u, x, h)?;
        let u = tape.logistic(u);
        let rh = tape.mul(r, h)?;
        let cand = self.gate(tape, self.w_h, self.u_h, self.b_h, x, rh)?;
        let cand = tape.tanh(cand);
        let keep = tape.one_minus(u);
        let old = tape.mul(keep, h)?;
        let new = tape.mul(u, cand)?;
        tape.add(old, new)
    }

    fn gate<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        w: ParamId,
        u: ParamId,
        b: ParamId,
        x: Var,
        h: Var,
    ) -> Result<Var> {
        let wx = tape.linear(w, x)?;
        let uh = tape.linear(u, h)?;
        let s = tape.add(wx, uh)?;
        tape.add_bias(b, s)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::diffmath::ParamStore;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn matvec(w: &[f64], rows: usize, x: &[f64]) -> Vec<f64> {
        let cols = x.len();
        (0..rows).map(|r| (0..cols).map(|c| w[r * cols + c] * x[c]).sum()).collect()
    }

    #[test]
    fn softmax_examples() {
        let u = softmax_stable(&[0.0f64, 0.0, 0.0]).unwrap();
        assert!(u.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        let p = softmax_stable(&[1.0f64, 2.0, 3.0]).unwrap();
        let want = [0.090_030_573_170_380_46, 0.244_728_471_054_797_67, 0.665_240_955_774_821_9];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        let shifted = softmax_stable(&[1001.0f64, 1002.0, 1003.0]).unwrap();
        for (a, b) in p.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(softmax_stable::<f64>(&[]), Err(Error::EmptyLogits)));
    }

    fn gru_store(k: usize, h: usize, seed: u64) -> (GruCell, ParamStore<f64>) {
        let mut b = ParamStoreBuilder::new();
        let cell = GruCell::register(&mut b, "gru", k, h);
        (cell, b.build(seed))
    }

    #[test]
    fn zero_gru_halves_hidden_state() {
        let (cell, mut store) = gru_store(8, 5, 1);
        store.zero_values();
        let mut tape = Tape::new(&store);
        let x = tape.one_hot(8, 3);
        let h = tape.input(vec![1.0, -2.0, 0.5, 3.0, -0.25]);
        let out = cell.forward(&mut tape, x, h).unwrap();
        assert_eq!(tape.value(out), &[0.5, -1.0, 0.25, 1.5, -0.125]);

        let z = tape.zeros(5);
        let out = cell.forward(&mut tape, x, z).unwrap();
        assert!(tape.value(out).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gru_matches_straight_line_equations() {
        let (cell, store) = gru_store(4, 6, 99);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..4).map(|i| if i == 2 { 1.0 } else { 0.0 }).collect();
        let h: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = |n: &str| store.value(store.id(&format!("gru.{n}")).unwrap()).values().to_vec();
        let add3 = |a: Vec<f64>, b: Vec<f64>, c: Vec<f64>| -> Vec<f64> {
            a.iter().zip(&b).zip(&c).map(|((x, y), z)| x + y + z).collect()
        };
        let r: Vec<f64> =
            add3(matvec(&p("w_r"), 6, &x), matvec(&p("u_r"), 6, &h), p("b_r")).into_iter().map(sig).collect();
        let u: Vec<f64> =
            add3(matvec(&p("w_u"), 6, &x), matvec(&p("u_u"), 6, &h), p("b_u")).into_iter().map(sig).collect();
        let rh: Vec<f64> = r.iter().zip(&h).map(|(a, b)| a * b).collect();
        let cand: Vec<f64> = add3(matvec(&p("w_h"), 6, &x), matvec(&p("u_h"), 6, &rh), p("b_h"))
            .into_iter()
            .map(f64::tanh)
            .collect();
        let want: Vec<f64> = (0..6).map(|i| (1.0 - u[i]) * h[i] + u[i] * cand[i]).collect();

        let mut tape = Tape::new(&store);
        let xv = tape.input(x);
        let hv = tape.input(h);
        let out = cell.forward(&mut tape, xv, hv).unwrap();
        for (a, b) in tape.value(out).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_shape_mismatch() {
        let (cell, store) = gru_store(4, 6, 1);
        let mut tape = Tape::new(&store);
        let x = tape.zeros(3);
        let h = tape.zeros(6);
        assert!(cell.forward(&mut tape, x, h).is_err());
    }

    #[test]
    fn mlp_examples() {
        // identity-initialised single affine layer
        let mut b = ParamStoreBuilder::new();
        let mlp = Mlp::register(&mut b, "id", MlpSpec::new(&[3, 3], Activation::Tanh, Activation::Identity));
        let mut store: ParamStore<f64> = b.build(0);
        store.zero_values();
        let w = mlp.layers[0].weight;
        for i in 0..3 {
            store.value_mut(w).values_mut()[i * 3 + i] = 1.0;
        }
        let mut tape = Tape::new(&store);
        let x = tape.input(vec![0.3, -1.2, 7.0]);
        let y = mlp.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(y), &[0.3, -1.2, 7.0]);

        // zero weights with logistic output
        let mut b = ParamStoreBuilder::new();
        let mlp = Mlp::register(&mut b, "z", MlpSpec::new(&[3, 4, 2], Activation::Tanh, Activation::Logistic));
        let mut store: ParamStore<f64> = b.build(0);
        store.zero_values();
        let mut tape = Tape::new(&store);
        let x = tape.input(vec![5.0, -5.0, 1.0]);
        let y = mlp.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(y), &[0.5, 0.5]);

        let bad = tape.input(vec![1.0, 2.0]);
        assert!(mlp.forward(&mut tape, bad).is_err());
    }

    #[test]
    fn mlp_matches_hand_rolled_arithmetic() {
        let mut b = ParamStoreBuilder::new();
        let mlp = Mlp::register(&mut b, "m", MlpSpec::new(&[4, 5, 3, 2], Activation::Tanh, Activation::Softmax));
        let store: ParamStore<f64> = b.build(123);
        let x = vec![0.2, -0.4, 1.1, 0.05];
        let mut h = x.clone();
        for (i, l) in mlp.layers.iter().enumerate() {
            let w = store.value(l.weight).values();
            let bias = store.value(l.bias).values();
            let mut z = matvec(w, l.outputs, &h);
            z.iter_mut().zip(bias).for_each(|(a, b)| *a += b);
            h = if i + 1 < mlp.layers.len() {
                z.into_iter().map(f64::tanh).collect()
            } else {
                let m = z.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|v| v / s).collect()
            };
        }
        let mut tape = Tape::new(&store);
        let xv = tape.input(x);
        let y = mlp.forward(&mut tape, xv).unwrap();
        for (a, b) in tape.value(y).iter().zip(&h) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
