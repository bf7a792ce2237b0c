//! Vector-level reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive in forward order. [`Tape::backward`]
//! walks the records in exact reverse order, once, and returns the adjoints
//! of every node together with a dense buffer of parameter gradients.

use std::cmp::Ordering;

use super::params::{GradBuffer, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::{logistic, softplus, Real};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Param(ParamId),
    /// `W x` with `W` of shape `[out, in]`.
    Linear { w: ParamId, x: Var },
    AddBias { b: ParamId, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    OneMinus(Var),
    Logistic(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Concat(Var, Var),
    SumAll(Var),
    /// Sum of equal-length vectors taken in an order fixed by their values.
    SumSet(Vec<Var>),
    Clamp(Var, T, T),
    Softmax(Var),
    CrossEntropy { logits: Var, target: usize },
    BceLogit { logit: Var, target: T },
    SquaredError { x: Var, target: T },
    Kl { mu: Var, logvar: Var },
    Reparam { mu: Var, logvar: Var, eps: Vec<T> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    value: Vec<T>,
}

/// Ordered record of a forward pass over a borrowed [`ParamStore`].
pub struct Tape<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Result of one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    adjoints: Vec<Vec<T>>,
    params: GradBuffer<T>,
}

impl<T: Real> Gradients<T> {
    /// Adjoint of any node, typically an [`Tape::input`].
    pub fn wrt(&self, v: Var) -> &[T] {
        &self.adjoints[v.0]
    }

    pub fn params(&self) -> &GradBuffer<T> {
        &self.params
    }

    pub fn into_params(self) -> GradBuffer<T> {
        self.params
    }
}

fn total_order<T: Real>(a: &[T], b: &[T]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x.as_f64(), y.as_f64());
        match x.total_cmp(&y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self { params, nodes: Vec::with_capacity(256), consumed: false }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Clears all records so the tape can be reused for a new forward pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn value(&self, v: Var) -> &[T] {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.value(id).values(),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.value(v).len()
    }

    fn push(&mut self, op: Op<T>, value: Vec<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn same_len(&self, a: Var, b: Var, what: &str) -> Result<usize> {
        let (la, lb) = (self.dim(a), self.dim(b));
        if la != lb {
            return Err(Error::Shape(format!("{what}: lengths {la} and {lb}")));
        }
        Ok(la)
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(op, value)
    }

    /// Leaf whose adjoint is reported by [`Gradients::wrt`].
    pub fn input(&mut self, values: Vec<T>) -> Var {
        self.push(Op::Input, values)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.input(vec![T::zero(); n])
    }

    pub fn one_hot(&mut self, n: usize, hot: usize) -> Var {
        let mut v = vec![T::zero(); n];
        v[hot] = T::one();
        self.input(v)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Op::Param(id), Vec::new())
    }

    pub fn linear(&mut self, w: ParamId, x: Var) -> Result<Var> {
        let wt = self.params.value(w);
        let (rows, cols) = match wt.shape() {
            [r, c] => (*r, *c),
            s => return Err(Error::Shape(format!("linear weight must be 2-D, got {s:?}"))),
        };
        let xv = self.value(x);
        if xv.len() != cols {
            return Err(Error::Shape(format!(
                "linear {}: input {} vs weight columns {cols}",
                self.params.name(w),
                xv.len()
            )));
        }
        let wv = wt.values();
        let mut out = vec![T::zero(); rows];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &wv[r * cols..(r + 1) * cols];
            let mut acc = T::zero();
            for (a, b) in row.iter().zip(xv) {
                acc += *a * *b;
            }
            *o = acc;
        }
        Ok(self.push(Op::Linear { w, x }, out))
    }

    pub fn add_bias(&mut self, b: ParamId, x: Var) -> Result<Var> {
        let bv = self.params.value(b).values();
        let xv = self.value(x);
        if bv.len() != xv.len() {
            return Err(Error::Shape(format!(
                "bias {}: {} vs input {}",
                self.params.name(b),
                bv.len(),
                xv.len()
            )));
        }
        let out = xv.iter().zip(bv).map(|(&a, &c)| a + c).collect();
        Ok(self.push(Op::AddBias { b, x }, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "add")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "sub")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x - y).collect();
        Ok(self.push(Op::Sub(a, b), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "mul")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        self.map(a, |x| x * k, Op::Scale(a, k))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.map(a, |x| T::one() - x, Op::OneMinus(a))
    }

    pub fn logistic(&mut self, a: Var) -> Var {
        self.map(a, logistic, Op::Logistic(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        self.map(a, |x| x.max(lo).min(hi), Op::Clamp(a, lo, hi))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).to_vec();
        out.extend_from_slice(self.value(b));
        self.push(Op::Concat(a, b), out)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        self.push(Op::SumAll(a), vec![s])
    }

    /// Sums a set of equal-length vectors. Terms are accumulated in an order
    /// determined by their values, so any permutation of `terms` produces a
    /// bitwise-identical result. An empty set yields `None`.
    pub fn sum_set(&mut self, terms: &[Var]) -> Result<Option<Var>> {
        let Some(&first) = terms.first() else { return Ok(None) };
        let n = self.dim(first);
        for &t in terms {
            if self.dim(t) != n {
                return Err(Error::Shape(format!("sum_set: lengths {n} and {}", self.dim(t))));
            }
        }
        let mut order: Vec<Var> = terms.to_vec();
        order.sort_by(|&a, &b| total_order(self.value(a), self.value(b)));
        let mut acc = vec![T::zero(); n];
        for &t in &order {
            for (a, &x) in acc.iter_mut().zip(self.value(t)) {
                *a += x;
            }
        }
        Ok(Some(self.push(Op::SumSet(order), acc)))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = super::nn::softmax_stable(self.value(a))?;
        Ok(self.push(Op::Softmax(a), out))
    }

    /// `-ln softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let lv = self.value(logits);
        if lv.is_empty() {
            return Err(Error::EmptyLogits);
        }
        if target >= lv.len() {
            return Err(Error::Shape(format!("target {target} outside {} classes", lv.len())));
        }
        let m = lv.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + lv.iter().map(|&x| (x - m).exp()).sum::<T>().ln();
        let loss = lse - lv[target];
        Ok(self.push(Op::CrossEntropy { logits, target }, vec![loss]))
    }

    /// Binary cross-entropy of `logistic(logit)` against `target` in [0, 1].
    pub fn bce_logit(&mut self, logit: Var, target: T) -> Result<Var> {
        if self.dim(logit) != 1 {
            return Err(Error::Shape("bce_logit expects a scalar logit".into()));
        }
        let l = self.scalar(logit);
        let loss = softplus(l) - l * target;
        Ok(self.push(Op::BceLogit { logit, target }, vec![loss]))
    }

    /// `(x - target)^2` for scalar `x`.
    pub fn squared_error(&mut self, x: Var, target: T) -> Result<Var> {
        if self.dim(x) != 1 {
            return Err(Error::Shape("squared_error expects a scalar".into()));
        }
        let d = self.scalar(x) - target;
        Ok(self.push(Op::SquaredError { x, target }, vec![d * d]))
    }

    /// KL divergence of `N(mu, exp(logvar))` from the standard normal.
    pub fn kl_standard_normal(&mut self, mu: Var, logvar: Var) -> Result<Var> {
        self.same_len(mu, logvar, "kl")?;
        let kl = kl_terms(self.value(mu), self.value(logvar));
        Ok(self.push(Op::Kl { mu, logvar }, vec![kl]))
    }

    /// `mu + exp(logvar / 2) * eps`.
    pub fn reparameterize(&mut self, mu: Var, logvar: Var, eps: Vec<T>) -> Result<Var> {
        let n = self.same_len(mu, logvar, "reparameterize")?;
        if eps.len() != n {
            return Err(Error::Shape(format!("eps length {} vs {n}", eps.len())));
        }
        let half = T::lit(0.5);
        let out = self
            .value(mu)
            .iter()
            .zip(self.value(logvar))
            .zip(&eps)
            .map(|((&m, &lv), &e)| m + (lv * half).exp() * e)
            .collect();
        Ok(self.push(Op::Reparam { mu, logvar, eps }, out))
    }

    /// Runs the reverse sweep from scalar `loss`. A tape supports exactly one
    /// backward pass until [`Tape::reset`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::BackwardConsumed);
        }
        if self.dim(loss) != 1 {
            return Err(Error::Shape(format!("loss must be scalar, has length {}", self.dim(loss))));
        }
        self.consumed = true;
        let mut adj: Vec<Vec<T>> = self.nodes.iter().map(|_| Vec::new()).collect();
        let mut pg = self.params.zero_buffer();
        adj[loss.0] = vec![T::one()];

        for i in (0..=loss.0).rev() {
            if adj[i].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut adj[i]);
            self.backprop_node(i, &g, &mut adj, &mut pg);
            adj[i] = g;
        }
        for (i, a) in adj.iter_mut().enumerate() {
            if a.is_empty() {
                *a = vec![T::zero(); self.value(Var(i)).len()];
            }
        }
        Ok(Gradients { adjoints: adj, params: pg })
    }

    fn backprop_node(&self, i: usize, g: &[T], adj: &mut [Vec<T>], pg: &mut GradBuffer<T>) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Input => {}
            Op::Param(id) => {
                for (a, &d) in pg.grads[id.0].iter_mut().zip(g) {
                    *a += d;
                }
            }
            Op::Linear { w, x } => {
                let wt = self.params.value(*w);
                let cols = wt.shape()[1];
                let wv = wt.values();
                let xv = self.value(*x);
                let gw = &mut pg.grads[w.0];
                for (r, &d) in g.iter().enumerate() {
                    if d == T::zero() {
                        continue;
                    }
                    let row = &mut gw[r * cols..(r + 1) * cols];
                    for (a, &xc) in row.iter_mut().zip(xv) {
                        *a += d * xc;
                    }
                }
                let gx = acc(adj, *x, cols);
                for (r, &d) in g.iter().enumerate() {
                    if d == T::zero() {
                        continue;
                    }
                    let row = &wv[r * cols..(r + 1) * cols];
                    for (a, &wc) in gx.iter_mut().zip(row) {
                        *a += d * wc;
                    }
                }
            }
            Op::AddBias { b, x } => {
                for (a, &d) in pg.grads[b.0].iter_mut().zip(g) {
                    *a += d;
                }
                add_into(acc(adj, *x, g.len()), g);
            }
            Op::Add(a, b) => {
                add_into(acc(adj, *a, g.len()), g);
                add_into(acc(adj, *b, g.len()), g);
            }
            Op::Sub(a, b) => {
                add_into(acc(adj, *a, g.len()), g);
                let gb = acc(adj, *b, g.len());
                for (x, &d) in gb.iter_mut().zip(g) {
                    *x -= d;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = acc(adj, *a, g.len());
                for ((x, &d), &y) in ga.iter_mut().zip(g).zip(bv) {
                    *x += d * y;
                }
                let gb = acc(adj, *b, g.len());
                for ((x, &d), &y) in gb.iter_mut().zip(g).zip(av) {
                    *x += d * y;
                }
            }
            Op::Scale(a, k) => {
                let ga = acc(adj, *a, g.len());
                for (x, &d) in ga.iter_mut().zip(g) {
                    *x += d * *k;
                }
            }
            Op::OneMinus(a) => {
                let ga = acc(adj, *a, g.len());
                for (x, &d) in ga.iter_mut().zip(g) {
                    *x -= d;
                }
            }
            Op::Logistic(a) => {
                let ga = acc(adj, *a, g.len());
                for ((x, &d), &y) in ga.iter_mut().zip(g).zip(out) {
                    *x += d * y * (T::one() - y);
                }
            }
            Op::Tanh(a) => {
                let ga = acc(adj, *a, g.len());
                for ((x, &d), &y) in ga.iter_mut().zip(g).zip(out) {
                    *x += d * (T::one() - y * y);
                }
            }
            Op::Relu(a) => {
                let ga = acc(adj, *a, g.len());
                for ((x, &d), &y) in ga.iter_mut().zip(g).zip(out) {
                    if y > T::zero() {
                        *x += d;
                    }
                }
            }
            Op::Exp(a) => {
                let ga = acc(adj, *a, g.len());
                for ((x, &d), &y) in ga.iter_mut().zip(g).zip(out) {
                    *x += d * y;
                }
            }
            Op::Clamp(a, lo, hi) => {
                let av = self.value(*a);
                let ga = acc(adj, *a, g.len());
                for ((x, &d), &v) in ga.iter_mut().zip(g).zip(av) {
                    if v >= *lo && v <= *hi {
                        *x += d;
                    }
                }
            }
            Op::Concat(a, b) => {
                let na = self.dim(*a);
                add_into(acc(adj, *a, na), &g[..na]);
                add_into(acc(adj, *b, g.len() - na), &g[na..]);
            }
            Op::SumAll(a) => {
                let n = self.dim(*a);
                let ga = acc(adj, *a, n);
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }
            Op::SumSet(terms) => {
                for &t in terms {
                    add_into(acc(adj, t, g.len()), g);
                }
            }
            Op::Softmax(a) => {
                let dot: T = g.iter().zip(out).map(|(&d, &y)| d * y).sum();
                let ga = acc(adj, *a, g.len());
                for ((x, &d), &y) in ga.iter_mut().zip(g).zip(out) {
                    *x += y * (d - dot);
                }
            }
            Op::CrossEntropy { logits, target } => {
                let p = super::nn::softmax_stable(self.value(*logits)).expect("non-empty logits");
                let ga = acc(adj, *logits, p.len());
                for (k, (x, &pk)) in ga.iter_mut().zip(&p).enumerate() {
                    let t = if k == *target { T::one() } else { T::zero() };
                    *x += g[0] * (pk - t);
                }
            }
            Op::BceLogit { logit, target } => {
                let p = logistic(self.scalar(*logit));
                acc(adj, *logit, 1)[0] += g[0] * (p - *target);
            }
            Op::SquaredError { x, target } => {
                let d = self.scalar(*x) - *target;
                acc(adj, *x, 1)[0] += g[0] * T::lit(2.0) * d;
            }
            Op::Kl { mu, logvar } => {
                let (mv, lv) = (self.value(*mu), self.value(*logvar));
                let half = T::lit(0.5);
                let gm = acc(adj, *mu, mv.len());
                for (x, &m) in gm.iter_mut().zip(mv) {
                    *x += g[0] * m;
                }
                let gl = acc(adj, *logvar, lv.len());
                for (x, &l) in gl.iter_mut().zip(lv) {
                    *x += g[0] * half * (l.exp() - T::one());
                }
            }
            Op::Reparam { mu, logvar, eps } => {
                let lv = self.value(*logvar);
                let half = T::lit(0.5);
                add_into(acc(adj, *mu, g.len()), g);
                let gl = acc(adj, *logvar, g.len());
                for (((x, &d), &l), &e) in gl.iter_mut().zip(g).zip(lv).zip(eps) {
                    *x += d * half * (l * half).exp() * e;
                }
            }
        }
    }
}

fn acc<T: Real>(adj: &mut [Vec<T>], v: Var, n: usize) -> &mut Vec<T> {
    let a = &mut adj[v.0];
    if a.is_empty() {
        *a = vec![T::zero(); n];
    }
    a
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// `-1/2 * sum(1 + logvar - mu^2 - exp(logvar))`.
pub fn kl_terms<T: Real>(mu: &[T], logvar: &[T]) -> T {
    let half = T::lit(0.5);
    -half
        * mu.iter()
            .zip(logvar)
            .map(|(&m, &l)| T::one() + l - m * m - l.exp())
            .sum::<T>()
}

#[cfg(test)]
mod tests {
    use super::super::params::{Init, ParamStoreBuilder};
    use super::*;

    fn empty() -> ParamStore<f64> {
        ParamStoreBuilder::new().build(0)
    }

    #[test]
    fn squared_loss_gradient_closed_form() {
        // loss = (w.x - y)^2 ; dloss/dw = 2(w.x - y) x
        let mut b = ParamStoreBuilder::new();
        let w = b.add("w", &[1, 3], Init::Zeros);
        let mut store: ParamStore<f64> = b.build(0);
        store.value_mut(w).values_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        let x = [1.5, 0.25, -0.75];
        let y = 0.3;
        let mut tape = Tape::new(&store);
        let xv = tape.input(x.to_vec());
        let wx = tape.linear(w, xv).unwrap();
        let loss = tape.squared_error(wx, y).unwrap();
        let grads = tape.backward(loss).unwrap();
        let r = 0.5 * 1.5 - 0.25 - 1.5 - y;
        for (g, xi) in grads.params().get(w).iter().zip(x) {
            assert!((g - 2.0 * r * xi).abs() < 1e-14);
        }
    }

    #[test]
    fn logistic_derivative_at_zero() {
        let store = empty();
        let mut tape = Tape::new(&store);
        let x = tape.input(vec![0.0]);
        let y = tape.logistic(x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x), &[0.25]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let store = empty();
        let mut tape = Tape::new(&store);
        let x = tape.input(vec![1.0]);
        let y = tape.tanh(x);
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::BackwardConsumed)));
        tape.reset();
        let x = tape.input(vec![1.0]);
        let y = tape.tanh(x);
        assert!(tape.backward(y).is_ok());
    }

    #[test]
    fn sum_set_is_order_free() {
        let store = empty();
        let mut tape = Tape::new(&store);
        let a = tape.input(vec![0.1, 1e16]);
        let b = tape.input(vec![0.2, -1e16]);
        let c = tape.input(vec![0.3, 1.0]);
        let s1 = tape.sum_set(&[a, b, c]).unwrap().unwrap();
        let s2 = tape.sum_set(&[c, a, b]).unwrap().unwrap();
        let s3 = tape.sum_set(&[b, c, a]).unwrap().unwrap();
        assert_eq!(tape.value(s1), tape.value(s2));
        assert_eq!(tape.value(s1), tape.value(s3));
        assert!(tape.sum_set(&[]).unwrap().is_none());
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_terms(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((kl_terms::<f64>(&[1.0, 0.0], &[0.0, 0.0]) - 0.5).abs() < 1e-15);
        let v = kl_terms(&[0.0], &[4f64.ln()]);
        assert!((v - 0.806_852_819_440_054_6).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let store = empty();
        let mut tape = Tape::new(&store);
        let a = tape.input(vec![1.0, 2.0]);
        let b = tape.input(vec![1.0]);
        assert!(matches!(tape.add(a, b), Err(Error::Shape(_))));
        assert!(tape.backward(a).is_err());
    }
}
