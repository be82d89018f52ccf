//! Cell search-space limits: node cap, edge cap, allowed operation set.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::module_graph::FlatGraph;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellConstraints {
    pub max_nodes: usize,
    pub max_edges: usize,
    pub allowed_ops: BTreeSet<String>,
    /// When true (the benchmark's published convention), the input and
    /// output terminals count as two of the `max_nodes`.
    #[serde(default = "default_true")]
    pub count_terminals: bool,
}

fn default_true() -> bool {
    true
}

impl CellConstraints {
    pub fn nasbench101(ops: impl IntoIterator<Item = String>) -> Self {
        Self {
            max_nodes: 7,
            max_edges: 9,
            allowed_ops: ops.into_iter().collect(),
            count_terminals: true,
        }
    }

    fn effective_node_count(&self, graph: &FlatGraph) -> usize {
        graph.node_count() + if self.count_terminals { 2 } else { 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConstraintViolation {
    #[error("cell has {count} nodes, limit {limit}")]
    TooManyNodes { count: usize, limit: usize },
    #[error("cell has {count} edges, limit {limit}")]
    TooManyEdges { count: usize, limit: usize },
    #[error("operation {0:?} is not in the allowed set")]
    ForeignOp(String),
}

/// Ok iff the phenotype fits inside the cell limits. Violations are
/// returned, not thrown; node and edge checks come first so the result is
/// monotone under graph growth.
pub fn check_constraints(
    graph: &FlatGraph,
    constraints: &CellConstraints,
) -> Result<(), ConstraintViolation> {
    let nodes = constraints.effective_node_count(graph);
    if nodes > constraints.max_nodes {
        return Err(ConstraintViolation::TooManyNodes {
            count: nodes,
            limit: constraints.max_nodes,
        });
    }
    let edges = graph.edge_count();
    if edges > constraints.max_edges {
        return Err(ConstraintViolation::TooManyEdges {
            count: edges,
            limit: constraints.max_edges,
        });
    }
    for op in &graph.nodes {
        if !constraints.allowed_ops.contains(&op.label) {
            return Err(ConstraintViolation::ForeignOp(op.label.clone()));
        }
    }
    Ok(())
}
