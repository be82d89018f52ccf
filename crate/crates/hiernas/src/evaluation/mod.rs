//! Fitness evaluators: deterministic structural surrogate, tabular cell
//! benchmark lookup with constraint checking, and the constant-fitness
//! random-search control.

mod constraints;
mod random;
pub mod sample;
mod surrogate;
mod tabular;

pub use constraints::{check_constraints, CellConstraints, ConstraintViolation};
pub use random::RandomEvaluator;
pub use surrogate::{SurrogateEvaluator, SurrogateParams};
pub use tabular::{cell_key, BenchmarkTable, TableEntry, TableLoadError, TabularEvaluator};

use serde::{Deserialize, Serialize};

use crate::module_graph::FlatGraph;

/// Fitness assigned when an evaluation cannot produce a score; violators get
/// purged by replacement instead of crashing the run.
pub const FAILURE_FITNESS: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationStatus {
    Ok,
    ConstraintViolation,
    LookupMiss,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub fitness: f64,
    pub epochs_used: u32,
    pub phenotype_stats: (usize, usize),
    pub status: EvaluationStatus,
}

impl EvaluationResult {
    pub fn failure(status: EvaluationStatus, epochs: u32, stats: (usize, usize)) -> Self {
        Self {
            fitness: FAILURE_FITNESS,
            epochs_used: epochs,
            phenotype_stats: stats,
            status,
        }
    }
}

/// Pure, read-only fitness function over phenotypes. `Sync` so dirty members
/// can be evaluated concurrently.
pub trait Evaluator: Sync {
    fn evaluate(&self, graph: &FlatGraph, epochs_hint: u32) -> EvaluationResult;
}
