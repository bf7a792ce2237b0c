//! Autoregressive graph generation from a latent code, and the
//! teacher-forced reconstruction losses.
//!
//! Every decode starts from `h_0 = Init(s)` as the input node's state. Each
//! new node draws its type from the previous node's state, then considers
//! incoming edges from `v-1` down to `0`, refreshing its own state after every
//! accepted edge. A node's state also receives a learned projection of the
//! previous node's state, so equal types and predecessor sets at different
//! positions stay distinguishable. Two forcing rules make every decode valid: a node that
//! accepts no edge is wired to `v-1`, and the output node (sampled or
//! appended at the node budget) collects every node still lacking a
//! successor.

use std::collections::BTreeSet;

use rand::{Rng, RngCore};

use crate::arch::{Architecture, OpType};
use crate::diffmath::{softmax_stable, Activation, GruCell, Linear, Mlp, MlpSpec, ParamStoreBuilder, Tape, Var};
use crate::encoder::GatedSum;
use crate::error::{Error, Result};
use crate::scalar::{logistic, Real};

/// Number of type logits: codes 1..=7, the input type is never emitted.
pub const EMITTABLE_TYPES: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoder {
    pub hidden: usize,
    pub latent: usize,
    pub init: Mlp,
    pub gru: GruCell,
    pub aggregate: GatedSum,
    /// Previous node's state into the next node's GRU hidden input.
    pub context: Linear,
    pub add_node: Mlp,
    pub add_edge: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeStep {
    pub from: usize,
    pub prob: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeStep {
    pub op: OpType,
    /// Type distribution over codes 1..=7; `None` when the output node was
    /// appended at the node budget.
    pub type_probs: Option<Vec<f64>>,
    pub edges: Vec<EdgeStep>,
    /// Edges added by the forcing rules.
    pub forced: Vec<usize>,
}

/// Per-node decisions of one decode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenerationTrace {
    pub steps: Vec<NodeStep>,
}

impl GenerationTrace {
    /// Rebuilds the emitted architecture from the recorded decisions.
    pub fn replay(&self) -> Result<Architecture> {
        let mut types = vec![OpType::Input];
        let mut edges = Vec::new();
        for (i, step) in self.steps.iter().enumerate() {
            let v = i + 1;
            types.push(step.op);
            edges.extend(step.edges.iter().filter(|e| e.accepted).map(|e| (e.from, v)));
            edges.extend(step.forced.iter().map(|&u| (u, v)));
        }
        Architecture::new(types, edges)
    }
}

enum Policy<'r> {
    Sample(&'r mut dyn RngCore),
    Greedy,
}

impl Policy<'_> {
    fn pick_type(&mut self, probs: &[f64]) -> usize {
        match self {
            Policy::Sample(rng) => {
                let r: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if r < acc {
                        return i;
                    }
                }
                probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
            }
            Policy::Greedy => {
                let mut best = 0;
                for (i, &p) in probs.iter().enumerate() {
                    if p > probs[best] {
                        best = i;
                    }
                }
                best
            }
        }
    }

    fn accept_edge(&mut self, prob: f64) -> bool {
        match self {
            Policy::Sample(rng) => rng.gen::<f64>() < prob,
            Policy::Greedy => prob > 0.5,
        }
    }
}

impl Decoder {
    pub fn register(b: &mut ParamStoreBuilder, hidden: usize, latent: usize) -> Self {
        Self {
            hidden,
            latent,
            init: Mlp::register(b, "decoder.init", MlpSpec::new(&[latent, hidden, hidden], Activation::Tanh, Activation::Tanh)),
            gru: GruCell::register(b, "decoder.gru", OpType::COUNT, hidden),
            aggregate: GatedSum::register(b, "decoder.aggregate", hidden),
            context: Linear::register(b, "decoder.context", hidden, hidden),
            add_node: Mlp::register(
                b,
                "decoder.add_node",
                MlpSpec::new(&[hidden, hidden, EMITTABLE_TYPES], Activation::Tanh, Activation::Identity),
            ),
            add_edge: Mlp::register(
                b,
                "decoder.add_edge",
                MlpSpec::new(&[2 * hidden, hidden, 1], Activation::Tanh, Activation::Identity),
            ),
        }
    }

    fn check_latent<T: Real>(&self, tape: &Tape<'_, T>, s: Var) -> Result<()> {
        if tape.dim(s) != self.latent {
            return Err(Error::Shape(format!("latent code has length {}, expected {}", tape.dim(s), self.latent)));
        }
        Ok(())
    }

    /// `gru(one_hot(op), gated_sum(incoming) + context(prev))`.
    fn node_state<T: Real>(&self, tape: &mut Tape<'_, T>, op: OpType, incoming: &[Var], ctx: Var) -> Result<Var> {
        let x = tape.one_hot(OpType::COUNT, op.code() as usize);
        let agg = self.aggregate.sum_terms(tape, incoming)?;
        let hin = tape.add(agg, ctx)?;
        self.gru.forward(tape, x, hin)
    }

    fn edge_logit<T: Real>(&self, tape: &mut Tape<'_, T>, h_from: Var, h_to: Var) -> Result<Var> {
        let pair = tape.concat(h_from, h_to);
        self.add_edge.forward(tape, pair)
    }

    /// Stochastic decode.
    pub fn generate<T: Real, R: RngCore>(
        &self,
        tape: &mut Tape<'_, T>,
        s: Var,
        rng: &mut R,
        max_nodes: usize,
    ) -> Result<(Architecture, GenerationTrace)> {
        self.decode(tape, s, Policy::Sample(rng), max_nodes)
    }

    /// Deterministic decode: most likely type (lowest code on ties), edges
    /// kept only when their probability exceeds one half.
    pub fn greedy_generate<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        s: Var,
        max_nodes: usize,
    ) -> Result<(Architecture, GenerationTrace)> {
        self.decode(tape, s, Policy::Greedy, max_nodes)
    }

    fn decode<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        s: Var,
        mut policy: Policy<'_>,
        max_nodes: usize,
    ) -> Result<(Architecture, GenerationTrace)> {
        self.check_latent(tape, s)?;
        if max_nodes < 2 {
            return Err(Error::Config(format!("max_nodes must be at least 2, got {max_nodes}")));
        }
        let h0 = self.init.forward(tape, s)?;
        let mut states = vec![h0];
        let mut terms = vec![self.aggregate.term(tape, h0)?];
        let mut types = vec![OpType::Input];
        let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
        let mut has_succ = vec![false];
        let mut trace = GenerationTrace::default();

        loop {
            let v = types.len();
            if v + 1 == max_nodes {
                // node budget reached: append the output node
                let forced: Vec<usize> = (0..v).filter(|&u| !has_succ[u]).collect();
                for &u in &forced {
                    edges.insert((u, v));
                }
                types.push(OpType::Output);
                trace.steps.push(NodeStep { op: OpType::Output, type_probs: None, edges: Vec::new(), forced });
                break;
            }

            let logits = self.add_node.forward(tape, states[v - 1])?;
            let logits: Vec<f64> = tape.value(logits).iter().map(|x| x.as_f64()).collect();
            let probs = softmax_stable(&logits)?;
            let op = OpType::from_code(policy.pick_type(&probs) as u8 + 1)?;

            let ctx = self.context.forward(tape, states[v - 1])?;
            let mut h = self.node_state(tape, op, &[], ctx)?;
            let mut accepted: Vec<Var> = Vec::new();
            let mut steps = Vec::with_capacity(v);
            for u in (0..v).rev() {
                let logit = self.edge_logit(tape, states[u], h)?;
                let prob = logistic(tape.scalar(logit).as_f64());
                let take = policy.accept_edge(prob);
                steps.push(EdgeStep { from: u, prob, accepted: take });
                if take {
                    edges.insert((u, v));
                    has_succ[u] = true;
                    accepted.push(terms[u]);
                    h = self.node_state(tape, op, &accepted, ctx)?;
                }
            }
            let mut forced = Vec::new();
            if accepted.is_empty() {
                forced.push(v - 1);
                edges.insert((v - 1, v));
                has_succ[v - 1] = true;
                accepted.push(terms[v - 1]);
                h = self.node_state(tape, op, &accepted, ctx)?;
            }
            types.push(op);
            if op == OpType::Output {
                for u in 0..v {
                    if !has_succ[u] {
                        forced.push(u);
                        edges.insert((u, v));
                    }
                }
                trace.steps.push(NodeStep { op, type_probs: Some(probs), edges: steps, forced });
                break;
            }
            trace.steps.push(NodeStep { op, type_probs: Some(probs), edges: steps, forced });
            has_succ.push(false);
            terms.push(self.aggregate.term(tape, h)?);
            states.push(h);
        }
        Ok((Architecture::new(types, edges)?, trace))
    }

    /// Node and edge reconstruction losses `(L_n, L_e)` of `arch` given `s`,
    /// conditioning every step on the true history.
    ///
    /// `L_n` sums the categorical cross-entropy of every non-input node's type;
    /// `L_e` sums the binary cross-entropy of every candidate pair `u < v`.
    pub fn teacher_forced_loss<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        arch: &Architecture,
        s: Var,
        max_nodes: usize,
    ) -> Result<(Var, Var)> {
        arch.ensure_valid(max_nodes)?;
        self.check_latent(tape, s)?;
        let h0 = self.init.forward(tape, s)?;
        let mut states = vec![h0];
        let mut terms = vec![self.aggregate.term(tape, h0)?];
        let mut node_losses = Vec::new();
        let mut edge_losses = Vec::new();
        let n = arch.num_nodes();
        for v in 1..n {
            let op = arch.types()[v];
            let logits = self.add_node.forward(tape, states[v - 1])?;
            node_losses.push(tape.cross_entropy(logits, op.code() as usize - 1)?);

            let ctx = self.context.forward(tape, states[v - 1])?;
            let mut h = self.node_state(tape, op, &[], ctx)?;
            let mut accepted = Vec::new();
            for u in (0..v).rev() {
                let logit = self.edge_logit(tape, states[u], h)?;
                let present = arch.has_edge(u, v);
                edge_losses.push(tape.bce_logit(logit, if present { T::one() } else { T::zero() })?);
                if present {
                    accepted.push(terms[u]);
                    h = self.node_state(tape, op, &accepted, ctx)?;
                }
            }
            if v + 1 < n {
                terms.push(self.aggregate.term(tape, h)?);
            }
            states.push(h);
        }
        Ok((sum_scalars(tape, &node_losses)?, sum_scalars(tape, &edge_losses)?))
    }
}

/// Left-to-right sum of scalar nodes.
pub(crate) fn sum_scalars<T: Real>(tape: &mut Tape<'_, T>, xs: &[Var]) -> Result<Var> {
    let Some((&first, rest)) = xs.split_first() else {
        return Ok(tape.zeros(1));
    };
    let mut acc = first;
    for &x in rest {
        acc = tape.add(acc, x)?;
    }
    Ok(acc)
}
