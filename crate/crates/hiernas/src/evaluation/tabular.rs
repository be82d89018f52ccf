//! Tabular cell-benchmark lookup: canonical cell keys, line-delimited JSON
//! table loading, and the constraint-checked evaluator.

use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    check_constraints, CellConstraints, EvaluationResult, EvaluationStatus, Evaluator,
};
use crate::module_graph::{Endpoint, FlatGraph};

/// Canonical cell key: the (n+2)x(n+2) adjacency matrix bits over
/// [IN, compute nodes, OUT] in canonical order, row-major, then the op label
/// sequence. Invariant under compute-node permutations that preserve the
/// labeled graph.
pub fn cell_key(graph: &FlatGraph) -> String {
    let order = canonical_node_order(graph);
    let n = graph.nodes.len();
    let side = n + 2;
    // Position of each endpoint in the matrix.
    let pos = |ep: Endpoint| -> usize {
        match ep {
            Endpoint::Input => 0,
            Endpoint::Output => side - 1,
            Endpoint::Node(i) => 1 + order.iter().position(|&x| x == i).unwrap(),
        }
    };
    let mut bits = vec![b'0'; side * side];
    for (s, d) in &graph.edges {
        bits[pos(*s) * side + pos(*d)] = b'1';
    }
    let labels: Vec<&str> = order.iter().map(|&i| graph.nodes[i].label.as_str()).collect();
    format!("{}:{}", String::from_utf8(bits).unwrap(), labels.join(","))
}

/// Topological order of compute nodes with ties broken by label and then by
/// an iterated neighborhood signature, so the order depends only on the
/// labeled structure.
fn canonical_node_order(graph: &FlatGraph) -> Vec<usize> {
    let n = graph.nodes.len();
    let idx = |ep: Endpoint| -> usize {
        match ep {
            Endpoint::Input => n,
            Endpoint::Output => n + 1,
            Endpoint::Node(i) => i,
        }
    };
    let mut sigs: Vec<[u8; 32]> = (0..n + 2)
        .map(|i| {
            let seed = match i {
                x if x == n => "IN".to_string(),
                x if x == n + 1 => "OUT".to_string(),
                x => graph.nodes[x].label.clone(),
            };
            Sha256::digest(seed.as_bytes()).into()
        })
        .collect();
    for _ in 0..3 {
        let mut next = Vec::with_capacity(n + 2);
        for i in 0..n + 2 {
            let mut preds: Vec<&[u8; 32]> = Vec::new();
            let mut succs: Vec<&[u8; 32]> = Vec::new();
            for (s, d) in &graph.edges {
                if idx(*d) == i {
                    preds.push(&sigs[idx(*s)]);
                }
                if idx(*s) == i {
                    succs.push(&sigs[idx(*d)]);
                }
            }
            preds.sort();
            succs.sort();
            let mut hasher = Sha256::new();
            hasher.update(sigs[i]);
            hasher.update(b"p");
            for p in preds {
                hasher.update(p);
            }
            hasher.update(b"s");
            for s in succs {
                hasher.update(s);
            }
            next.push(hasher.finalize().into());
        }
        sigs = next;
    }

    let mut indeg = vec![0usize; n];
    for (s, d) in &graph.edges {
        if let (Endpoint::Node(_), Endpoint::Node(j)) = (s, d) {
            indeg[*j] += 1;
        }
    }
    let mut ready: BTreeSet<(&str, &[u8; 32], usize)> = (0..n)
        .filter(|&i| indeg[i] == 0)
        .map(|i| (graph.nodes[i].label.as_str(), &sigs[i], i))
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(entry) = ready.iter().next().copied() {
        ready.remove(&entry);
        let i = entry.2;
        order.push(i);
        for (s, d) in &graph.edges {
            if let (Endpoint::Node(si), Endpoint::Node(j)) = (s, d) {
                if *si == i {
                    indeg[*j] -= 1;
                    if indeg[*j] == 0 {
                        ready.insert((graph.nodes[*j].label.as_str(), &sigs[*j], *j));
                    }
                }
            }
        }
    }
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub key: String,
    pub validation_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum TableLoadError {
    #[error("cannot read table file: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {source}")]
    Malformed {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: accuracy out of [0,1]")]
    AccuracyOutOfRange { line: usize },
    #[error("line {line}: malformed cell key")]
    BadKey { line: usize },
}

/// In-memory accuracy table keyed by canonical cell key.
#[derive(Debug, Clone, Default)]
pub struct BenchmarkTable {
    entries: HashMap<String, TableEntry>,
}

impl BenchmarkTable {
    pub fn from_entries(entries: impl IntoIterator<Item = TableEntry>) -> Self {
        Self {
            entries: entries.into_iter().map(|e| (e.key.clone(), e)).collect(),
        }
    }

    /// Loads a line-delimited JSON file of `{key, validation_accuracy,
    /// test_accuracy}` records.
    pub fn load(path: &Path) -> Result<Self, TableLoadError> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut entries = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TableEntry = serde_json::from_str(&line)
                .map_err(|source| TableLoadError::Malformed { line: i + 1, source })?;
            let ok_range = |v: f64| (0.0..=1.0).contains(&v);
            if !ok_range(entry.validation_accuracy) || !ok_range(entry.test_accuracy) {
                return Err(TableLoadError::AccuracyOutOfRange { line: i + 1 });
            }
            if !well_formed_key(&entry.key) {
                return Err(TableLoadError::BadKey { line: i + 1 });
            }
            entries.insert(entry.key.clone(), entry);
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&TableEntry> {
        self.entries.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }
}

fn well_formed_key(key: &str) -> bool {
    let Some((bits, ops)) = key.split_once(':') else {
        return false;
    };
    if !bits.bytes().all(|b| b == b'0' || b == b'1') {
        return false;
    }
    let n_ops = if ops.is_empty() { 0 } else { ops.split(',').count() };
    let side = n_ops + 2;
    bits.len() == side * side
}

pub struct TabularEvaluator {
    table: BenchmarkTable,
    constraints: CellConstraints,
}

impl TabularEvaluator {
    pub fn new(table: BenchmarkTable, constraints: CellConstraints) -> Self {
        Self { table, constraints }
    }

    pub fn table(&self) -> &BenchmarkTable {
        &self.table
    }
}

impl Evaluator for TabularEvaluator {
    fn evaluate(&self, graph: &FlatGraph, epochs_hint: u32) -> EvaluationResult {
        let stats = graph.stats();
        if check_constraints(graph, &self.constraints).is_err() {
            return EvaluationResult::failure(
                EvaluationStatus::ConstraintViolation,
                epochs_hint,
                stats,
            );
        }
        match self.table.get(&cell_key(graph)) {
            Some(entry) => EvaluationResult {
                fitness: entry.validation_accuracy,
                epochs_used: epochs_hint,
                phenotype_stats: stats,
                status: EvaluationStatus::Ok,
            },
            None => EvaluationResult::failure(EvaluationStatus::LookupMiss, epochs_hint, stats),
        }
    }
}
