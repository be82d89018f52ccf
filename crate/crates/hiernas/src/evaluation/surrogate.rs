//! Deterministic structural fitness surrogate.
//!
//! Scores a phenotype from three structural components, all invariant under
//! node relabeling:
//!   * preferred-op fraction: share of layer nodes whose label is in the
//!     configured preferred set,
//!   * depth: longest INPUT-to-OUTPUT path in compute nodes, with a quadratic
//!     penalty for missing the target depth,
//!   * connectivity richness: edge count, with returns capped at `edge_cap`.
//! The weighted sum is scaled by a diminishing-returns epoch factor
//! `1 - 2^(-epochs)`.

use serde::{Deserialize, Serialize};

use super::{EvaluationResult, EvaluationStatus, Evaluator};
use crate::module_graph::FlatGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateParams {
    pub preferred_ops: Vec<String>,
    pub target_depth: usize,
    pub edge_cap: usize,
    pub weight_ops: f64,
    pub weight_depth: f64,
    pub weight_edges: f64,
}

impl Default for SurrogateParams {
    /// Defaults make the optimum a composed multi-layer graph, never a
    /// single-layer phenotype.
    fn default() -> Self {
        Self {
            preferred_ops: vec!["conv3x3_32".into(), "maxpool3".into()],
            target_depth: 4,
            edge_cap: 12,
            weight_ops: 0.3,
            weight_depth: 0.4,
            weight_edges: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SurrogateEvaluator {
    params: SurrogateParams,
}

impl SurrogateEvaluator {
    pub fn new(params: SurrogateParams) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &SurrogateParams {
        &self.params
    }

    /// Structural score in [0,1] before the epoch factor.
    pub fn structure_score(&self, graph: &FlatGraph) -> f64 {
        let p = &self.params;
        let n = graph.node_count();
        let op_score = if n == 0 {
            0.0
        } else {
            graph
                .nodes
                .iter()
                .filter(|op| p.preferred_ops.iter().any(|l| *l == op.label))
                .count() as f64
                / n as f64
        };
        let depth = graph.depth() as f64;
        let target = p.target_depth as f64;
        let depth_score = (1.0 - ((depth - target) / target).powi(2)).max(0.0);
        let edge_score = (graph.edge_count().min(p.edge_cap)) as f64 / p.edge_cap as f64;
        let total_weight = p.weight_ops + p.weight_depth + p.weight_edges;
        (p.weight_ops * op_score + p.weight_depth * depth_score + p.weight_edges * edge_score)
            / total_weight
    }
}

impl Evaluator for SurrogateEvaluator {
    fn evaluate(&self, graph: &FlatGraph, epochs_hint: u32) -> EvaluationResult {
        let epoch_factor = 1.0 - 0.5f64.powi(epochs_hint as i32);
        EvaluationResult {
            fitness: self.structure_score(graph) * epoch_factor,
            epochs_used: epochs_hint,
            phenotype_stats: graph.stats(),
            status: EvaluationStatus::Ok,
        }
    }
}
