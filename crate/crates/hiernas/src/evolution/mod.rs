//! The generational loop: population management, module generation and
//! mutation, the training-epochs budget, and shared-fitness propagation.

mod generate;
mod mutate;

pub use generate::generate_module;
pub use mutate::{mutate, mutate_edge, mutate_node, MutationKind};

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evaluation::{EvaluationStatus, Evaluator, FAILURE_FITNESS};
use crate::module_graph::{
    canonical_hash, flatten, validate, FlatGraph, FlattenError, ModuleDef, ModuleId, NodeRef,
};
use crate::registry::Registry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub population_size: usize,
    pub notable_max: usize,
    pub base_ttl: u32,
    pub min_observations: u64,
    pub replace_fraction: f64,
    pub p_node_mut: f64,
    pub p_edge_mut: f64,
    /// Node count for freshly generated module graphs.
    pub gen_graph_nodes: usize,
    /// Edge density of the random DAG built during module generation.
    pub p_edge_gen: f64,
    pub max_epochs: u32,
    pub prior_fitness: f64,
    /// When true, a module referenced k times by one member receives k
    /// observations per generation instead of one.
    pub fitness_per_occurrence: bool,
}

impl Default for EvolutionConfig {
    /// The Fashion-MNIST search configuration.
    fn default() -> Self {
        Self {
            population_size: 20,
            notable_max: 10,
            base_ttl: 4,
            min_observations: 2,
            replace_fraction: 0.4,
            p_node_mut: 0.15,
            p_edge_mut: 0.55,
            gen_graph_nodes: 2,
            p_edge_gen: 0.5,
            max_epochs: 10,
            prior_fitness: 0.5,
            fitness_per_occurrence: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("mutation probabilities must satisfy p_node + p_edge <= 1")]
    MutationProbabilities,
    #[error("{0} must be >= 1")]
    ZeroCount(&'static str),
    #[error("{0} must lie in [0,1]")]
    OutOfRange(&'static str),
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.p_node_mut) {
            return Err(ConfigError::OutOfRange("p_node_mut"));
        }
        if !(0.0..=1.0).contains(&self.p_edge_mut) {
            return Err(ConfigError::OutOfRange("p_edge_mut"));
        }
        if self.p_node_mut + self.p_edge_mut > 1.0 {
            return Err(ConfigError::MutationProbabilities);
        }
        if !(0.0..=1.0).contains(&self.replace_fraction) {
            return Err(ConfigError::OutOfRange("replace_fraction"));
        }
        if !(0.0..=1.0).contains(&self.p_edge_gen) {
            return Err(ConfigError::OutOfRange("p_edge_gen"));
        }
        for (name, v) in [
            ("population_size", self.population_size),
            ("notable_max", self.notable_max),
            ("gen_graph_nodes", self.gen_graph_nodes),
        ] {
            if v == 0 {
                return Err(ConfigError::ZeroCount(name));
            }
        }
        if self.max_epochs == 0 {
            return Err(ConfigError::ZeroCount("max_epochs"));
        }
        if self.min_observations == 0 {
            return Err(ConfigError::ZeroCount("min_observations"));
        }
        Ok(())
    }
}

/// One member's module hierarchy: the root definition plus every
/// transitively referenced definition. Each member owns its copy, so
/// mutating one member can never change another's phenotype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleTree {
    pub root: ModuleDef,
    pub store: BTreeMap<ModuleId, ModuleDef>,
}

impl ModuleTree {
    pub fn new(root: ModuleDef, store: BTreeMap<ModuleId, ModuleDef>) -> Self {
        let mut tree = Self { root, store };
        tree.prune();
        tree
    }

    pub fn root_id(&self) -> ModuleId {
        canonical_hash(&self.root, &self.store).expect("member trees are closed and acyclic")
    }

    pub fn flatten(&self) -> Result<FlatGraph, FlattenError> {
        flatten(&self.root, &self.store)
    }

    /// Every distinct module in the hierarchy, including the root and the
    /// implicit single-layer module behind each bare layer reference. Values
    /// are the defining graphs, keys their canonical ids.
    pub fn distinct_modules(&self) -> BTreeMap<ModuleId, ModuleDef> {
        let root_id = self.root_id();
        let mut out = BTreeMap::new();
        out.insert(root_id, self.root.clone());
        self.collect_modules(root_id, &self.root, &mut out);
        out
    }

    /// Ids with reference multiplicity: how many times each module occurs in
    /// the fully expanded reference tree (root counts once).
    pub fn occurrence_counts(&self) -> BTreeMap<ModuleId, u64> {
        let root_id = self.root_id();
        let mut out = BTreeMap::new();
        out.insert(root_id, 1);
        self.count_occurrences(root_id, &self.root, 1, &mut out);
        out
    }

    // A bare layer reference stands for the single-layer seed module of that
    // op. Inside a seed module itself the layer node IS the module, so the
    // walkers skip it there to avoid counting the seed twice.
    fn collect_modules(
        &self,
        def_id: ModuleId,
        def: &ModuleDef,
        out: &mut BTreeMap<ModuleId, ModuleDef>,
    ) {
        for node in &def.nodes {
            match node {
                NodeRef::Layer(op) => {
                    let seed = ModuleDef::seed(op.clone());
                    let id = canonical_hash(&seed, &self.store).unwrap();
                    if id != def_id {
                        out.entry(id).or_insert(seed);
                    }
                }
                NodeRef::Module(id) => {
                    if !out.contains_key(id) {
                        let child = self.store[id].clone();
                        out.insert(*id, child.clone());
                        self.collect_modules(*id, &child, out);
                    }
                }
            }
        }
    }

    fn count_occurrences(
        &self,
        def_id: ModuleId,
        def: &ModuleDef,
        mult: u64,
        out: &mut BTreeMap<ModuleId, u64>,
    ) {
        for node in &def.nodes {
            match node {
                NodeRef::Layer(op) => {
                    let seed = ModuleDef::seed(op.clone());
                    let id = canonical_hash(&seed, &self.store).unwrap();
                    if id != def_id {
                        *out.entry(id).or_insert(0) += mult;
                    }
                }
                NodeRef::Module(id) => {
                    *out.entry(*id).or_insert(0) += mult;
                    let child = self.store[id].clone();
                    self.count_occurrences(*id, &child, mult, out);
                }
            }
        }
    }

    /// Drops store entries no longer reachable from the root.
    pub fn prune(&mut self) {
        let mut keep = std::collections::BTreeSet::new();
        let mut queue: Vec<ModuleId> = self.root.module_refs().collect();
        while let Some(id) = queue.pop() {
            if keep.insert(id) {
                if let Some(def) = self.store.get(&id) {
                    queue.extend(def.module_refs());
                }
            }
        }
        self.store.retain(|id, _| keep.contains(id));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationMember {
    pub tree: ModuleTree,
    pub fitness: Option<f64>,
    pub dirty: bool,
    pub age: u32,
}

impl PopulationMember {
    pub fn fresh(tree: ModuleTree) -> Self {
        Self {
            tree,
            fitness: None,
            dirty: true,
            age: 0,
        }
    }
}

/// Training budget: `max(1, min(complexity / max(ln(generation+1), 1),
/// max_epochs))`, with the quotient floored to whole epochs.
pub fn training_epochs(complexity: u32, generation: u32, max_epochs: u32) -> u32 {
    let denom = f64::from(generation + 1).ln().max(1.0);
    let quotient = (f64::from(complexity) / denom).floor();
    quotient.min(f64::from(max_epochs)).max(1.0) as u32
}

/// Shares one member's fitness with every module in its hierarchy.
pub fn propagate_fitness(
    member: &PopulationMember,
    fitness: f64,
    registry: &mut Registry,
    config: &EvolutionConfig,
) {
    let modules = member.tree.distinct_modules();
    if config.fitness_per_occurrence {
        let counts = member.tree.occurrence_counts();
        for (id, def) in &modules {
            for _ in 0..counts[id] {
                registry.record_fitness(*id, def, fitness, config.base_ttl);
            }
        }
    } else {
        for (id, def) in &modules {
            registry.record_fitness(*id, def, fitness, config.base_ttl);
        }
    }
}

/// Per-generation CSV-facing statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: u32,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub notable_size: usize,
    pub candidate_size: usize,
    pub banned_size: usize,
    pub promotions: usize,
    pub bans: usize,
    pub evaluations: usize,
}

fn evaluate_member(
    member: &PopulationMember,
    evaluator: &dyn Evaluator,
    generation: u32,
    max_epochs: u32,
) -> (f64, EvaluationStatus) {
    match member.tree.flatten() {
        Ok(graph) => {
            // Complexity is the expanded phenotype's size, so composed
            // hierarchies earn a larger training budget than their root
            // definitions alone would suggest.
            let epochs = training_epochs(graph.node_count() as u32, generation, max_epochs);
            let result = evaluator.evaluate(&graph, epochs);
            (result.fitness, result.status)
        }
        Err(_) => (FAILURE_FITNESS, EvaluationStatus::Failed),
    }
}

/// Evaluates the dirty members in index order, sequentially.
pub fn evaluate_population_seq(
    population: &[PopulationMember],
    evaluator: &dyn Evaluator,
    generation: u32,
    max_epochs: u32,
) -> Vec<(usize, f64, EvaluationStatus)> {
    population
        .iter()
        .enumerate()
        .filter(|(_, m)| m.dirty)
        .map(|(i, m)| {
            let (f, s) = evaluate_member(m, evaluator, generation, max_epochs);
            (i, f, s)
        })
        .collect()
}

/// Data-parallel evaluation of the dirty members. Results come back in index
/// order, so downstream updates are identical to the sequential path.
#[cfg(feature = "parallel")]
pub fn evaluate_population_par(
    population: &[PopulationMember],
    evaluator: &dyn Evaluator,
    generation: u32,
    max_epochs: u32,
) -> Vec<(usize, f64, EvaluationStatus)> {
    use rayon::prelude::*;
    let dirty: Vec<(usize, &PopulationMember)> = population
        .iter()
        .enumerate()
        .filter(|(_, m)| m.dirty)
        .collect();
    dirty
        .par_iter()
        .map(|(i, m)| {
            let (f, s) = evaluate_member(m, evaluator, generation, max_epochs);
            (*i, f, s)
        })
        .collect()
}

fn evaluate_population(
    population: &[PopulationMember],
    evaluator: &dyn Evaluator,
    generation: u32,
    max_epochs: u32,
) -> Vec<(usize, f64, EvaluationStatus)> {
    #[cfg(feature = "parallel")]
    {
        evaluate_population_par(population, evaluator, generation, max_epochs)
    }
    #[cfg(not(feature = "parallel"))]
    {
        evaluate_population_seq(population, evaluator, generation, max_epochs)
    }
}

/// Builds the initial population from freshly generated modules.
pub fn initial_population(
    registry: &Registry,
    config: &EvolutionConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<PopulationMember> {
    (0..config.population_size)
        .map(|_| {
            let tree = generate_module(registry, config.gen_graph_nodes, config.p_edge_gen, rng)
                .expect("notable list is seeded non-empty");
            PopulationMember::fresh(tree)
        })
        .collect()
}

/// Result of one generation step: the CSV-facing stats, a snapshot of the
/// best member at evaluation time (before replacement and mutation), and
/// optional report-evaluator metrics over the evaluated population.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub stats: GenerationStats,
    pub best_member: PopulationMember,
    pub report_best: Option<f64>,
    pub report_mean: Option<f64>,
}

/// Runs one generation: evaluate dirty members, propagate shared fitness,
/// adjudicate the lists, replace the worst fraction, then mutate survivors.
///
/// `report_evaluator`, when given, re-scores the whole evaluated population
/// with an independent fitness function; the search itself is driven only by
/// `evaluator`. This mirrors the random-search control, where selection runs
/// on a constant fitness while true fitness is still recorded for reporting.
pub fn step_generation(
    population: &mut Vec<PopulationMember>,
    registry: &mut Registry,
    evaluator: &dyn Evaluator,
    report_evaluator: Option<&dyn Evaluator>,
    config: &EvolutionConfig,
    generation: u32,
    rng: &mut ChaCha8Rng,
) -> StepOutcome {
    assert!(!population.is_empty(), "population must be non-empty");

    // (1) Evaluate everything new or mutated.
    let results = evaluate_population(population, evaluator, generation, config.max_epochs);
    let evaluations = results.len();
    for (i, fitness, _status) in &results {
        population[*i].fitness = Some(*fitness);
        population[*i].dirty = false;
    }

    // (2) Shared fitness: each evaluated member updates every module in its
    // hierarchy.
    for (i, fitness, _) in &results {
        propagate_fitness(&population[*i], *fitness, registry, config);
    }

    // (3) Generation-boundary list adjudication.
    let outcome = registry.end_of_generation(config.min_observations, config.notable_max);

    let fitnesses: Vec<f64> = population.iter().map(|m| m.fitness.unwrap_or(0.0)).collect();
    let best_fitness = fitnesses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean_fitness = fitnesses.iter().sum::<f64>() / fitnesses.len() as f64;
    let best_index = fitnesses
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let best_member = population[best_index].clone();

    let (report_best, report_mean) = match report_evaluator {
        Some(report) => {
            let scores: Vec<f64> = population
                .iter()
                .map(|m| evaluate_member(m, report, generation, config.max_epochs).0)
                .collect();
            let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            (Some(best), Some(mean))
        }
        None => (None, None),
    };

    // (4) Replace the worst fraction. Ties: older first, then digest.
    let replace_count =
        ((config.replace_fraction * population.len() as f64).ceil() as usize).min(population.len());
    let mut order: Vec<usize> = (0..population.len()).collect();
    order.sort_by(|&a, &b| {
        fitnesses[a]
            .partial_cmp(&fitnesses[b])
            .unwrap()
            .then(population[b].age.cmp(&population[a].age))
            .then(population[a].tree.root_id().cmp(&population[b].tree.root_id()))
    });
    let replaced: Vec<usize> = order.into_iter().take(replace_count).collect();
    let mut replaced_sorted = replaced.clone();
    replaced_sorted.sort_unstable();
    for &i in &replaced_sorted {
        let tree = generate_module(registry, config.gen_graph_nodes, config.p_edge_gen, rng)
            .expect("notable list never empties");
        population[i] = PopulationMember::fresh(tree);
    }

    // (5) Mutate every surviving member (at most one mutation each).
    for (i, member) in population.iter_mut().enumerate() {
        if replaced_sorted.binary_search(&i).is_ok() {
            continue;
        }
        member.age += 1;
        *member = mutate(member, registry, config, rng);
    }

    debug_assert!(population.iter().all(|m| validate(&m.tree.root).is_ok()));

    StepOutcome {
        stats: GenerationStats {
            generation,
            best_fitness,
            mean_fitness,
            notable_size: registry.notable_len(),
            candidate_size: registry.candidate_len(),
            banned_size: registry.banned_len(),
            promotions: outcome.promotions.len(),
            bans: outcome.bans.len(),
            evaluations,
        },
        best_member,
        report_best,
        report_mean,
    }
}
