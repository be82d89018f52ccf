//! Deterministic synthetic cell table: a reproducible sample of valid cells
//! with accuracies derived from each cell's canonical key, used for the
//! bundled lookup table and for exercising hit/miss behavior.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::tabular::{cell_key, TableEntry};
use crate::module_graph::{Endpoint, FlatGraph, LayerOp};

/// The op vocabulary of the constrained cell space.
pub fn sample_ops() -> Vec<LayerOp> {
    vec![
        LayerOp::conv("conv1x1-bn-relu"),
        LayerOp::conv("conv3x3-bn-relu"),
        LayerOp::pool("maxpool3x3"),
    ]
}

/// Accuracies are a pure function of the canonical key, so regenerating the
/// table always reproduces the same values.
pub fn accuracy_for_key(key: &str) -> (f64, f64) {
    let digest = Sha256::digest(key.as_bytes());
    let raw = u64::from_be_bytes(digest[..8].try_into().unwrap());
    let unit = raw as f64 / u64::MAX as f64;
    let validation = 0.80 + 0.15 * unit;
    let test = validation - 0.01;
    (validation, test)
}

/// Generates one random valid cell: 1-5 compute nodes, forward edges only,
/// repaired so every node lies on an input-output path, at most 9 edges.
fn random_cell(ops: &[LayerOp], rng: &mut ChaCha8Rng) -> FlatGraph {
    loop {
        let n = rng.gen_range(1..=5usize);
        let nodes: Vec<LayerOp> = (0..n).map(|_| ops[rng.gen_range(0..ops.len())].clone()).collect();
        let mut edges: BTreeSet<(Endpoint, Endpoint)> = BTreeSet::new();
        for i in 0..n {
            if rng.gen_bool(0.4) {
                edges.insert((Endpoint::Input, Endpoint::Node(i)));
            }
            if rng.gen_bool(0.4) {
                edges.insert((Endpoint::Node(i), Endpoint::Output));
            }
            for j in i + 1..n {
                if rng.gen_bool(0.3) {
                    edges.insert((Endpoint::Node(i), Endpoint::Node(j)));
                }
            }
        }
        for i in 0..n {
            if !edges.iter().any(|(_, d)| *d == Endpoint::Node(i)) {
                edges.insert((Endpoint::Input, Endpoint::Node(i)));
            }
            if !edges.iter().any(|(s, _)| *s == Endpoint::Node(i)) {
                edges.insert((Endpoint::Node(i), Endpoint::Output));
            }
        }
        if edges.len() <= 9 {
            return FlatGraph { nodes, edges };
        }
    }
}

/// A deterministic sample of `count` distinct cells keyed canonically.
pub fn sample_cells(count: usize, seed: u64) -> BTreeMap<String, (FlatGraph, TableEntry)> {
    let ops = sample_ops();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = BTreeMap::new();
    while cells.len() < count {
        let graph = random_cell(&ops, &mut rng);
        let key = cell_key(&graph);
        let (validation_accuracy, test_accuracy) = accuracy_for_key(&key);
        cells.entry(key.clone()).or_insert((
            graph,
            TableEntry {
                key,
                validation_accuracy,
                test_accuracy,
            },
        ));
    }
    cells
}

/// Renders the sample as line-delimited JSON, one record per cell.
pub fn sample_table_jsonl(count: usize, seed: u64) -> String {
    let mut out = String::new();
    for (_, (_, entry)) in sample_cells(count, seed) {
        out.push_str(&serde_json::to_string(&entry).expect("entry serializes"));
        out.push('\n');
    }
    out
}
