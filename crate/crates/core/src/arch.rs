//! Architectures as typed DAGs: vocabulary, validity, identity keys,
//! JSON-lines records and random generation.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_NODES: usize = 8;

/// Node operation. The discriminant is the on-disk type code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum OpType {
    Input = 0,
    Conv3x3 = 1,
    Sep3x3 = 2,
    Conv5x5 = 3,
    Sep5x5 = 4,
    AvgPool = 5,
    MaxPool = 6,
    Output = 7,
}

impl OpType {
    /// Size of the one-hot type encoding.
    pub const COUNT: usize = 8;
    pub const ALL: [OpType; 8] = [
        OpType::Input,
        OpType::Conv3x3,
        OpType::Sep3x3,
        OpType::Conv5x5,
        OpType::Sep5x5,
        OpType::AvgPool,
        OpType::MaxPool,
        OpType::Output,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::Parse(format!("unknown type code {code}")))
    }

    pub fn is_internal(self) -> bool {
        !matches!(self, OpType::Input | OpType::Output)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Violation {
    NoPred { node: usize },
    NoSucc { node: usize },
    BadInput,
    BadOutput,
    BadType { node: usize },
    TooManyNodes { count: usize, max: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoPred { node } => write!(f, "NO_PRED({node})"),
            Violation::NoSucc { node } => write!(f, "NO_SUCC({node})"),
            Violation::BadInput => f.write_str("BAD_INPUT"),
            Violation::BadOutput => f.write_str("BAD_OUTPUT"),
            Violation::BadType { node } => write!(f, "BAD_TYPE({node})"),
            Violation::TooManyNodes { count, max } => write!(f, "TOO_MANY_NODES({count}>{max})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.valid {
            return f.write_str("valid");
        }
        let parts: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(", "))
    }
}

/// A network cell: node types in topological order plus forward edges
/// `(u, v)` with `u < v`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Architecture {
    types: Vec<OpType>,
    edges: BTreeSet<(usize, usize)>,
}

impl Architecture {
    /// Builds an architecture, rejecting backward, self or out-of-range edges.
    /// Structural validity is a separate question; see [`Architecture::validate`].
    pub fn new(types: Vec<OpType>, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let n = types.len();
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= v {
                return Err(Error::Parse(format!("edge [{u},{v}] is not forward (needs u < v)")));
            }
            if v >= n {
                return Err(Error::Parse(format!("edge [{u},{v}] references a node beyond {}", n.saturating_sub(1))));
            }
            set.insert((u, v));
        }
        Ok(Self { types, edges: set })
    }

    /// `INPUT -> op -> OUTPUT`.
    pub fn chain(op: OpType) -> Self {
        Self::new(vec![OpType::Input, op, OpType::Output], [(0, 1), (1, 2)]).expect("chain is well-formed")
    }

    pub fn types(&self) -> &[OpType] {
        &self.types
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn num_nodes(&self) -> usize {
        self.types.len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&(u, v))
    }

    /// Predecessors of `v` in ascending order.
    pub fn predecessors(&self, v: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.1 == v).map(|e| e.0).collect()
    }

    pub fn indegree(&self, v: usize) -> usize {
        self.edges.iter().filter(|e| e.1 == v).count()
    }

    pub fn outdegree(&self, u: usize) -> usize {
        self.edges.iter().filter(|e| e.0 == u).count()
    }

    pub fn validate(&self, max_nodes: usize) -> ValidityReport {
        let n = self.types.len();
        let mut violations = Vec::new();
        if n > max_nodes {
            violations.push(Violation::TooManyNodes { count: n, max: max_nodes });
        }
        let inputs = self.types.iter().filter(|&&t| t == OpType::Input).count();
        if self.types.first() != Some(&OpType::Input) || inputs != 1 {
            violations.push(Violation::BadInput);
        }
        let outputs = self.types.iter().filter(|&&t| t == OpType::Output).count();
        if n < 2 || self.types.last() != Some(&OpType::Output) || outputs != 1 {
            violations.push(Violation::BadOutput);
        }
        if n >= 2 {
            for (v, t) in self.types.iter().enumerate().take(n - 1).skip(1) {
                if !t.is_internal() {
                    violations.push(Violation::BadType { node: v });
                }
            }
        }
        let mut has_pred = vec![false; n];
        let mut has_succ = vec![false; n];
        for &(u, v) in &self.edges {
            has_succ[u] = true;
            has_pred[v] = true;
        }
        for v in 0..n {
            if v > 0 && !has_pred[v] {
                violations.push(Violation::NoPred { node: v });
            }
            if v + 1 < n && !has_succ[v] {
                violations.push(Violation::NoSucc { node: v });
            }
        }
        ValidityReport { valid: violations.is_empty(), violations }
    }

    pub fn is_valid(&self, max_nodes: usize) -> bool {
        self.validate(max_nodes).valid
    }

    /// Returns `self` if valid, otherwise the report as an error.
    pub fn ensure_valid(&self, max_nodes: usize) -> Result<()> {
        let report = self.validate(max_nodes);
        if report.valid {
            Ok(())
        } else {
            Err(Error::InvalidArchitecture(report))
        }
    }

    /// `"0,1,7|0-1,1-2"`: type codes, then edges in lexicographic order.
    pub fn identity_key(&self) -> String {
        let types: Vec<String> = self.types.iter().map(|t| t.code().to_string()).collect();
        let edges: Vec<String> = self.edges.iter().map(|(u, v)| format!("{u}-{v}")).collect();
        format!("{}|{}", types.join(","), edges.join(","))
    }

    fn to_wire(&self) -> WireArch {
        WireArch {
            types: self.types.iter().map(|t| t.code()).collect(),
            edges: self.edges.iter().map(|&(u, v)| [u, v]).collect(),
        }
    }

    /// One JSON object on a single line.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_wire()).expect("architecture serializes")
    }

    pub fn from_json_line(text: &str) -> Result<Self> {
        let wire: WireArch =
            serde_json::from_str(text.trim()).map_err(|e| Error::Parse(format!("malformed architecture record: {e}")))?;
        wire.into_arch()
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.identity_key())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WireArch {
    types: Vec<u8>,
    edges: Vec<[usize; 2]>,
}

impl WireArch {
    fn into_arch(self) -> Result<Architecture> {
        let types = self.types.into_iter().map(OpType::from_code).collect::<Result<Vec<_>>>()?;
        Architecture::new(types, self.edges.into_iter().map(|[u, v]| (u, v)))
    }
}

impl Serialize for Architecture {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_wire().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Architecture {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        WireArch::deserialize(deserializer)?.into_arch().map_err(serde::de::Error::custom)
    }
}

/// A dataset line: an architecture with optional labels and split tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub arch: Architecture,
    pub perf: Option<f64>,
    pub comp: Option<f64>,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Serialize, Deserialize)]
struct WireRecord {
    types: Vec<u8>,
    edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    perf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    comp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

impl Record {
    pub fn to_json_line(&self) -> String {
        let w = self.arch.to_wire();
        let rec = WireRecord { types: w.types, edges: w.edges, perf: self.perf, comp: self.comp, split: self.split };
        serde_json::to_string(&rec).expect("record serializes")
    }

    pub fn from_json_line(text: &str) -> Result<Self> {
        let w: WireRecord =
            serde_json::from_str(text.trim()).map_err(|e| Error::Parse(format!("malformed dataset record: {e}")))?;
        for (name, v) in [("perf", w.perf), ("comp", w.comp)] {
            if let Some(x) = v {
                if !x.is_finite() {
                    return Err(Error::Parse(format!("{name} is not finite")));
                }
            }
        }
        let arch = WireArch { types: w.types, edges: w.edges }.into_arch()?;
        Ok(Self { arch, perf: w.perf, comp: w.comp, split: w.split })
    }
}

/// Samples a valid architecture with `n_internal` operation nodes.
///
/// Internal types are uniform over the six operations. Each internal node
/// `v` takes edge `(u, v)` with probability 1/2 for every `u < v`, falling
/// back to `(v-1, v)` when none is drawn. The output node collects every
/// node that is still without a successor.
pub fn random_architecture<R: Rng + ?Sized>(rng: &mut R, n_internal: usize) -> Architecture {
    assert!(n_internal >= 1, "need at least one internal node");
    let mut types = Vec::with_capacity(n_internal + 2);
    types.push(OpType::Input);
    for _ in 0..n_internal {
        types.push(OpType::from_code(rng.gen_range(1..=6)).expect("code in range"));
    }
    types.push(OpType::Output);

    let mut edges = BTreeSet::new();
    for v in 1..=n_internal {
        let before = edges.len();
        for u in 0..v {
            if rng.gen_bool(0.5) {
                edges.insert((u, v));
            }
        }
        if edges.len() == before {
            edges.insert((v - 1, v));
        }
    }
    let out = n_internal + 1;
    let mut has_succ = vec![false; out];
    for &(u, _) in &edges {
        has_succ[u] = true;
    }
    for (u, s) in has_succ.iter().enumerate() {
        if !s {
            edges.insert((u, out));
        }
    }
    Architecture { types, edges }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn chain_is_valid() {
        let a = Architecture::chain(OpType::Conv3x3);
        assert!(a.validate(8).valid);
        assert_eq!(a.identity_key(), "0,1,7|0-1,1-2");
    }

    #[test]
    fn missing_edge_reports_both_ends() {
        let a = Architecture::new(vec![OpType::Input, OpType::Conv3x3, OpType::Output], [(0, 1)]).unwrap();
        let r = a.validate(8);
        assert!(!r.valid);
        let got: BTreeSet<_> = r.violations.iter().copied().collect();
        let want: BTreeSet<_> = [Violation::NoPred { node: 2 }, Violation::NoSucc { node: 1 }].into_iter().collect();
        assert_eq!(got, want);
    }

    #[test]
    fn too_many_nodes() {
        let mut types = vec![OpType::Input];
        types.extend([OpType::Conv3x3; 7]);
        types.push(OpType::Output);
        let a = Architecture::new(types, (0..8).map(|i| (i, i + 1))).unwrap();
        assert_eq!(a.num_nodes(), 9);
        let r = a.validate(8);
        assert_eq!(r.violations, vec![Violation::TooManyNodes { count: 9, max: 8 }]);
        assert!(a.validate(9).valid);
    }

    #[test]
    fn bad_types_and_endpoints() {
        let a = Architecture::new(vec![OpType::Conv3x3, OpType::Input, OpType::Output], [(0, 1), (1, 2)]).unwrap();
        let r = a.validate(8);
        assert!(r.violations.contains(&Violation::BadInput));
        assert!(r.violations.contains(&Violation::BadType { node: 1 }));

        let b = Architecture::new(vec![OpType::Input, OpType::Output, OpType::Conv3x3], [(0, 1), (1, 2)]).unwrap();
        let r = b.validate(8);
        assert!(r.violations.contains(&Violation::BadOutput));
    }

    #[test]
    fn keys_track_representation() {
        let a = Architecture::new(vec![OpType::Input, OpType::Sep3x3, OpType::Output], [(1, 2), (0, 1)]).unwrap();
        let b = Architecture::new(vec![OpType::Input, OpType::Sep3x3, OpType::Output], [(0, 1), (1, 2)]).unwrap();
        assert_eq!(a.identity_key(), b.identity_key());
        let c = Architecture::new(vec![OpType::Input, OpType::Sep3x3, OpType::Output], [(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_ne!(a.identity_key(), c.identity_key());
    }

    #[test]
    fn json_line_format() {
        let a = Architecture::chain(OpType::Conv3x3);
        let line = a.to_json_line();
        assert_eq!(line, r#"{"types":[0,1,7],"edges":[[0,1],[1,2]]}"#);
        assert_eq!(Architecture::from_json_line(&line).unwrap(), a);
    }

    #[test]
    fn json_line_rejections() {
        assert!(matches!(
            Architecture::from_json_line(r#"{"types":[0,1,7],"edges":[[2,1]]}"#),
            Err(Error::Parse(_))
        ));
        assert!(Architecture::from_json_line(r#"{"types":[0,9,7],"edges":[[0,1],[1,2]]}"#).is_err());
        assert!(Architecture::from_json_line(r#"{"types":[0,1,7],"edges":[[0,5]]}"#).is_err());
        assert!(Architecture::from_json_line("not json").is_err());
        assert!(Architecture::from_json_line(r#"{"types":[0,1,7]}"#).is_err());
    }

    #[test]
    fn labeled_record_roundtrip() {
        let r = Record { arch: Architecture::chain(OpType::MaxPool), perf: Some(0.25), comp: Some(0.005), split: Some(Split::Test) };
        let line = r.to_json_line();
        assert_eq!(line, r#"{"types":[0,6,7],"edges":[[0,1],[1,2]],"perf":0.25,"comp":0.005,"split":"test"}"#);
        assert_eq!(Record::from_json_line(&line).unwrap(), r);
        let unlabeled = Record::from_json_line(r#"{"types":[0,6,7],"edges":[[0,1],[1,2]]}"#).unwrap();
        assert_eq!(unlabeled.perf, None);
    }

    #[test]
    fn single_internal_node_is_a_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = random_architecture(&mut rng, 1);
            assert_eq!(a.edges().iter().copied().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
            assert!(a.is_valid(8));
        }
    }

    #[test]
    fn generator_is_valid_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10_000 {
            let a = random_architecture(&mut rng, 6);
            assert!(a.validate(8).valid, "{a}");
        }
        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| random_architecture(&mut r, 6).identity_key()).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }
}
