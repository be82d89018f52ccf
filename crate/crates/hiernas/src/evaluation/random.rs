//! Random-search control: every topology receives the same constant fitness,
//! so promotion depends only on occurrence counts, TTL, and notable capacity.

use super::{EvaluationResult, EvaluationStatus, Evaluator};
use crate::module_graph::FlatGraph;

#[derive(Debug, Clone)]
pub struct RandomEvaluator {
    constant: f64,
}

impl RandomEvaluator {
    pub fn new(constant: f64) -> Self {
        Self { constant }
    }
}

impl Default for RandomEvaluator {
    fn default() -> Self {
        Self::new(0.5)
    }
}

impl Evaluator for RandomEvaluator {
    fn evaluate(&self, graph: &FlatGraph, epochs_hint: u32) -> EvaluationResult {
        EvaluationResult {
            fitness: self.constant,
            epochs_used: epochs_hint,
            phenotype_stats: graph.stats(),
            status: EvaluationStatus::Ok,
        }
    }
}
