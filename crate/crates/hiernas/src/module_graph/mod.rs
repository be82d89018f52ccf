//! Hierarchical module genotypes: DAGs of computational nodes that reference
//! primitive layers or other modules, plus flattening and canonical hashing.

mod export;
mod flatten;
mod hash;

pub use export::{flat_graph_to_dot, flat_graph_to_json, hierarchy_to_dot, hierarchy_to_json};
pub use flatten::{flatten, FlattenError};
pub use hash::canonical_hash;

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Category of a primitive layer operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Convolution,
    Pooling,
    Other,
}

/// A primitive layer operation. The label is an opaque identifier; no tensor
/// semantics are attached.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerOp {
    pub label: String,
    pub kind: OpKind,
}

impl LayerOp {
    pub fn new(label: impl Into<String>, kind: OpKind) -> Self {
        Self {
            label: label.into(),
            kind,
        }
    }

    pub fn conv(label: impl Into<String>) -> Self {
        Self::new(label, OpKind::Convolution)
    }

    pub fn pool(label: impl Into<String>) -> Self {
        Self::new(label, OpKind::Pooling)
    }
}

/// Content-derived identity of a module (SHA-256 of its canonical form).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModuleId([u8; 32]);

impl ModuleId {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let raw = hex::decode(s)?;
        let arr: [u8; 32] = raw
            .try_into()
            .map_err(|_| hex::FromHexError::InvalidStringLength)?;
        Ok(Self(arr))
    }
}

impl fmt::Debug for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ModuleId({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex()[..12])
    }
}

impl Serialize for ModuleId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ModuleId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        ModuleId::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// What a computational node points at: a primitive layer or another module.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRef {
    Layer(LayerOp),
    Module(ModuleId),
}

/// Graph endpoint: the module's input terminal, a computational node by
/// index, or the output terminal. Ordering is Input < Node(_) < Output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Input,
    Node(usize),
    Output,
}

pub type Edge = (Endpoint, Endpoint);

/// A module genotype: an ordered list of computational nodes and a DAG over
/// {INPUT, nodes, OUTPUT}. Immutable after construction; mutation builds new
/// definitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleDef {
    pub nodes: Vec<NodeRef>,
    pub edges: BTreeSet<Edge>,
}

impl ModuleDef {
    pub fn new(nodes: Vec<NodeRef>, edges: impl IntoIterator<Item = Edge>) -> Self {
        Self {
            nodes,
            edges: edges.into_iter().collect(),
        }
    }

    /// A single-node module wrapping one primitive layer.
    pub fn seed(op: LayerOp) -> Self {
        Self::new(
            vec![NodeRef::Layer(op)],
            [
                (Endpoint::Input, Endpoint::Node(0)),
                (Endpoint::Node(0), Endpoint::Output),
            ],
        )
    }

    /// Number of computational nodes in this module's own graph (not
    /// recursive).
    pub fn complexity(&self) -> usize {
        self.nodes.len()
    }

    pub fn module_refs(&self) -> impl Iterator<Item = ModuleId> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            NodeRef::Module(id) => Some(*id),
            NodeRef::Layer(_) => None,
        })
    }

    fn successors(&self, from: Endpoint) -> impl Iterator<Item = Endpoint> + '_ {
        self.edges
            .iter()
            .filter(move |(s, _)| *s == from)
            .map(|(_, d)| *d)
    }

    fn predecessors(&self, to: Endpoint) -> impl Iterator<Item = Endpoint> + '_ {
        self.edges
            .iter()
            .filter(move |(_, d)| *d == to)
            .map(|(s, _)| *s)
    }
}

/// Why a module failed validation.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Violation {
    #[error("module has no computational nodes")]
    NoComputeNodes,
    #[error("edge {0:?} references node index out of range")]
    EdgeOutOfRange(Edge),
    #[error("edge {0:?} enters INPUT or leaves OUTPUT")]
    TerminalDirection(Edge),
    #[error("edge {0:?} lies on a directed cycle")]
    Cycle(Edge),
    #[error("node {0} is not on any INPUT-to-OUTPUT path")]
    Disconnected(usize),
}

pub type ValidationResult = Result<(), Violation>;

/// Checks the structural invariants of a single module graph. Violations are
/// returned, not thrown; the first violated invariant wins.
pub fn validate(module: &ModuleDef) -> ValidationResult {
    let n = module.nodes.len();
    if n == 0 {
        return Err(Violation::NoComputeNodes);
    }
    for &edge in &module.edges {
        let (src, dst) = edge;
        if let Endpoint::Node(i) = src {
            if i >= n {
                return Err(Violation::EdgeOutOfRange(edge));
            }
        }
        if let Endpoint::Node(i) = dst {
            if i >= n {
                return Err(Violation::EdgeOutOfRange(edge));
            }
        }
        if dst == Endpoint::Input || src == Endpoint::Output || src == dst {
            return Err(Violation::TerminalDirection(edge));
        }
    }
    if let Some(edge) = find_cycle_edge(module) {
        return Err(Violation::Cycle(edge));
    }
    // Every computational node must be forward-reachable from INPUT and
    // backward-reachable from OUTPUT.
    let from_input = reach(module, Endpoint::Input, false);
    let to_output = reach(module, Endpoint::Output, true);
    for i in 0..n {
        let ep = Endpoint::Node(i);
        if !from_input.contains(&ep) || !to_output.contains(&ep) {
            return Err(Violation::Disconnected(i));
        }
    }
    Ok(())
}

fn reach(module: &ModuleDef, start: Endpoint, reverse: bool) -> BTreeSet<Endpoint> {
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([start]);
    while let Some(ep) = queue.pop_front() {
        if !seen.insert(ep) {
            continue;
        }
        let next: Vec<Endpoint> = if reverse {
            module.predecessors(ep).collect()
        } else {
            module.successors(ep).collect()
        };
        queue.extend(next);
    }
    seen
}

/// Returns some edge participating in a directed cycle, if one exists.
fn find_cycle_edge(module: &ModuleDef) -> Option<Edge> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Unseen,
        Active,
        Done,
    }
    let mut marks: HashMap<Endpoint, Mark> = HashMap::new();
    let endpoints: Vec<Endpoint> = std::iter::once(Endpoint::Input)
        .chain((0..module.nodes.len()).map(Endpoint::Node))
        .chain(std::iter::once(Endpoint::Output))
        .collect();

    fn visit(
        module: &ModuleDef,
        ep: Endpoint,
        marks: &mut HashMap<Endpoint, Mark>,
    ) -> Option<Edge> {
        marks.insert(ep, Mark::Active);
        for next in module.successors(ep) {
            match marks.get(&next).copied().unwrap_or(Mark::Unseen) {
                Mark::Active => return Some((ep, next)),
                Mark::Unseen => {
                    if let Some(e) = visit(module, next, marks) {
                        return Some(e);
                    }
                }
                Mark::Done => {}
            }
        }
        marks.insert(ep, Mark::Done);
        None
    }

    for ep in endpoints {
        if marks.get(&ep).copied().unwrap_or(Mark::Unseen) == Mark::Unseen {
            if let Some(e) = visit(module, ep, &mut marks) {
                return Some(e);
            }
        }
    }
    None
}

/// Resolves module ids to their definitions during flattening and hashing.
pub trait ModuleResolver {
    fn resolve(&self, id: &ModuleId) -> Option<&ModuleDef>;
}

impl ModuleResolver for std::collections::BTreeMap<ModuleId, ModuleDef> {
    fn resolve(&self, id: &ModuleId) -> Option<&ModuleDef> {
        self.get(id)
    }
}

impl ModuleResolver for HashMap<ModuleId, ModuleDef> {
    fn resolve(&self, id: &ModuleId) -> Option<&ModuleDef> {
        self.get(id)
    }
}

/// Empty resolver for modules without module references.
pub struct NoModules;

impl ModuleResolver for NoModules {
    fn resolve(&self, _id: &ModuleId) -> Option<&ModuleDef> {
        None
    }
}

/// Fully expanded layer-level phenotype. Node indices refer into `nodes`;
/// edges still use `Endpoint` with Input/Output as the graph terminals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatGraph {
    pub nodes: Vec<LayerOp>,
    pub edges: BTreeSet<Edge>,
}

impl FlatGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// (node_count, edge_count) counting terminal wiring edges.
    pub fn stats(&self) -> (usize, usize) {
        (self.node_count(), self.edge_count())
    }

    /// Length in compute nodes of the longest INPUT-to-OUTPUT path.
    pub fn depth(&self) -> usize {
        let order = self.topo_order();
        let mut longest: HashMap<Endpoint, usize> = HashMap::new();
        longest.insert(Endpoint::Input, 0);
        for ep in order {
            let here = *longest.get(&ep).unwrap_or(&0);
            let weight = usize::from(matches!(ep, Endpoint::Node(_)));
            for (s, d) in &self.edges {
                if *s == ep {
                    let cand = here + weight;
                    let entry = longest.entry(*d).or_insert(0);
                    if cand > *entry {
                        *entry = cand;
                    }
                }
            }
        }
        *longest.get(&Endpoint::Output).unwrap_or(&0)
    }

    /// Topological order over all endpoints (terminals included). Assumes the
    /// graph is acyclic.
    pub fn topo_order(&self) -> Vec<Endpoint> {
        let mut indeg: HashMap<Endpoint, usize> = HashMap::new();
        indeg.insert(Endpoint::Input, 0);
        indeg.insert(Endpoint::Output, 0);
        for i in 0..self.nodes.len() {
            indeg.insert(Endpoint::Node(i), 0);
        }
        for (_, d) in &self.edges {
            *indeg.entry(*d).or_insert(0) += 1;
        }
        let mut ready: BTreeSet<Endpoint> = indeg
            .iter()
            .filter(|(_, deg)| **deg == 0)
            .map(|(ep, _)| *ep)
            .collect();
        let mut order = Vec::with_capacity(indeg.len());
        while let Some(ep) = ready.iter().next().copied() {
            ready.remove(&ep);
            order.push(ep);
            for (s, d) in &self.edges {
                if *s == ep {
                    let deg = indeg.get_mut(d).unwrap();
                    *deg -= 1;
                    if *deg == 0 {
                        ready.insert(*d);
                    }
                }
            }
        }
        order
    }

    pub fn is_acyclic(&self) -> bool {
        self.topo_order().len() == self.nodes.len() + 2
    }
}
