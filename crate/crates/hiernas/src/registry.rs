//! The notable / candidate / banned module lists: fitness averaging, TTL
//! countdown, admission and eviction, and fitness-weighted sampling.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::module_graph::{canonical_hash, LayerOp, ModuleDef, ModuleId, ModuleResolver, NoModules};

/// Sampling weight floor so zero or negative surrogate averages keep a
/// nonzero probability and the normalization stays defined.
pub const WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub fitness_sum: f64,
    pub observation_count: u64,
    /// Generations left to gather observations; meaningful only while the
    /// module sits on the candidate list.
    pub ttl_remaining: u32,
}

impl FitnessRecord {
    pub fn average(&self) -> Option<f64> {
        (self.observation_count > 0).then(|| self.fitness_sum / self.observation_count as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("layer set is empty")]
    EmptyLayerSet,
    #[error("duplicate layer label {0:?}")]
    DuplicateLayerLabel(String),
    #[error("notable list is empty")]
    EmptyNotableList,
}

/// What `end_of_generation` decided.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GenerationOutcome {
    pub promotions: Vec<ModuleId>,
    pub bans: Vec<ModuleId>,
}

/// The three-list partition of every module ever seen, plus the definitions
/// backing the listed ids. Single-writer; queries are read-only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    notable: BTreeMap<ModuleId, FitnessRecord>,
    candidate: BTreeMap<ModuleId, FitnessRecord>,
    banned: BTreeSet<ModuleId>,
    module_store: BTreeMap<ModuleId, ModuleDef>,
}

impl Registry {
    /// Seeds the notable list with one single-node module per layer, each
    /// carrying a neutral prior observation.
    pub fn initialize(layer_set: &[LayerOp], prior_fitness: f64) -> Result<Self, RegistryError> {
        if layer_set.is_empty() {
            return Err(RegistryError::EmptyLayerSet);
        }
        let mut labels = BTreeSet::new();
        for op in layer_set {
            if !labels.insert(op.label.clone()) {
                return Err(RegistryError::DuplicateLayerLabel(op.label.clone()));
            }
        }
        let mut registry = Registry {
            notable: BTreeMap::new(),
            candidate: BTreeMap::new(),
            banned: BTreeSet::new(),
            module_store: BTreeMap::new(),
        };
        for op in layer_set {
            let def = ModuleDef::seed(op.clone());
            let id = canonical_hash(&def, &NoModules).expect("seed modules have no references");
            registry.module_store.insert(id, def);
            registry.notable.insert(
                id,
                FitnessRecord {
                    fitness_sum: prior_fitness,
                    observation_count: 1,
                    ttl_remaining: 0,
                },
            );
        }
        Ok(registry)
    }

    pub fn notable_len(&self) -> usize {
        self.notable.len()
    }

    pub fn candidate_len(&self) -> usize {
        self.candidate.len()
    }

    pub fn banned_len(&self) -> usize {
        self.banned.len()
    }

    pub fn is_banned(&self, id: &ModuleId) -> bool {
        self.banned.contains(id)
    }

    pub fn notable_ids(&self) -> impl Iterator<Item = &ModuleId> {
        self.notable.keys()
    }

    pub fn candidate_ids(&self) -> impl Iterator<Item = &ModuleId> {
        self.candidate.keys()
    }

    pub fn banned_ids(&self) -> impl Iterator<Item = &ModuleId> {
        self.banned.iter()
    }

    pub fn record(&self, id: &ModuleId) -> Option<&FitnessRecord> {
        self.notable.get(id).or_else(|| self.candidate.get(id))
    }

    pub fn definition(&self, id: &ModuleId) -> Option<&ModuleDef> {
        self.module_store.get(id)
    }

    /// Adds one fitness observation for a module. Unseen modules enter the
    /// candidate list with a fresh TTL; banned observations are dropped.
    pub fn record_fitness(&mut self, id: ModuleId, def: &ModuleDef, fitness: f64, base_ttl: u32) {
        if self.banned.contains(&id) {
            return;
        }
        if let Some(rec) = self.notable.get_mut(&id).or_else(|| self.candidate.get_mut(&id)) {
            rec.fitness_sum += fitness;
            rec.observation_count += 1;
            return;
        }
        self.module_store.insert(id, def.clone());
        self.candidate.insert(
            id,
            FitnessRecord {
                fitness_sum: fitness,
                observation_count: 1,
                ttl_remaining: base_ttl,
            },
        );
    }

    /// Generation-boundary adjudication: decrement candidate TTLs, promote
    /// candidates that beat the worst notable once they have enough
    /// observations, ban the rest when their time runs out. Promotion into a
    /// full notable list evicts the worst notable to banned.
    pub fn end_of_generation(&mut self, min_observations: u64, n_max: usize) -> GenerationOutcome {
        let mut outcome = GenerationOutcome::default();
        for rec in self.candidate.values_mut() {
            rec.ttl_remaining = rec.ttl_remaining.saturating_sub(1);
        }
        let ids: Vec<ModuleId> = self.candidate.keys().copied().collect();
        for id in ids {
            let rec = self.candidate[&id].clone();
            if rec.observation_count >= min_observations {
                let avg = rec.average().expect("observation_count >= 1");
                let beats_worst = match self.worst_notable() {
                    Some((_, worst_avg)) => avg > worst_avg,
                    None => true,
                };
                self.candidate.remove(&id);
                if beats_worst {
                    if self.notable.len() >= n_max {
                        if let Some((worst_id, _)) = self.worst_notable() {
                            self.notable.remove(&worst_id);
                            self.banned.insert(worst_id);
                            outcome.bans.push(worst_id);
                        }
                    }
                    self.notable.insert(id, rec);
                    outcome.promotions.push(id);
                } else {
                    self.banned.insert(id);
                    outcome.bans.push(id);
                }
            } else if rec.ttl_remaining == 0 {
                self.candidate.remove(&id);
                self.banned.insert(id);
                outcome.bans.push(id);
            }
        }
        outcome
    }

    /// Draws `n` notable ids with replacement, probability proportional to
    /// `max(average, WEIGHT_FLOOR)`.
    pub fn sample_notables<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<ModuleId>, RegistryError> {
        if self.notable.is_empty() {
            return Err(RegistryError::EmptyNotableList);
        }
        let entries: Vec<(ModuleId, f64)> = self
            .notable
            .iter()
            .map(|(id, rec)| {
                let avg = rec.average().unwrap_or(0.0);
                (*id, avg.max(WEIGHT_FLOOR))
            })
            .collect();
        let total: f64 = entries.iter().map(|(_, w)| w).sum();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = entries[entries.len() - 1].0;
            for (id, w) in &entries {
                if target < *w {
                    chosen = *id;
                    break;
                }
                target -= w;
            }
            out.push(chosen);
        }
        Ok(out)
    }

    /// Worst-average notable entry; ties go to the smallest digest.
    pub fn worst_notable(&self) -> Option<(ModuleId, f64)> {
        self.notable
            .iter()
            .map(|(id, rec)| (*id, rec.average().unwrap_or(0.0)))
            .min_by(|(id_a, avg_a), (id_b, avg_b)| {
                avg_a.partial_cmp(avg_b).unwrap().then(id_a.cmp(id_b))
            })
    }

    /// Iterates (id, record) pairs for checkpointing.
    pub fn notable_entries(&self) -> impl Iterator<Item = (&ModuleId, &FitnessRecord)> {
        self.notable.iter()
    }

    pub fn candidate_entries(&self) -> impl Iterator<Item = (&ModuleId, &FitnessRecord)> {
        self.candidate.iter()
    }

    /// Every stored definition, including those only reachable as children
    /// of listed modules.
    pub fn store_entries(&self) -> impl Iterator<Item = (&ModuleId, &ModuleDef)> {
        self.module_store.iter()
    }

    /// Rebuilds a registry from checkpoint parts. Callers are responsible
    /// for handing back the exact lists a checkpoint recorded.
    pub fn from_parts(
        notable: BTreeMap<ModuleId, FitnessRecord>,
        candidate: BTreeMap<ModuleId, FitnessRecord>,
        banned: BTreeSet<ModuleId>,
        module_store: BTreeMap<ModuleId, ModuleDef>,
    ) -> Self {
        Self {
            notable,
            candidate,
            banned,
            module_store,
        }
    }

    /// Disjointness and size invariants; used by tests and debug assertions.
    pub fn check_invariants(&self, n_max: usize) -> Result<(), String> {
        for id in self.notable.keys() {
            if self.candidate.contains_key(id) || self.banned.contains(id) {
                return Err(format!("id {id} on multiple lists"));
            }
        }
        for id in self.candidate.keys() {
            if self.banned.contains(id) {
                return Err(format!("candidate {id} also banned"));
            }
        }
        if self.notable.len() > n_max {
            return Err(format!("notable size {} exceeds cap {n_max}", self.notable.len()));
        }
        for id in self.notable.keys().chain(self.candidate.keys()) {
            if !self.module_store.contains_key(id) {
                return Err(format!("listed id {id} missing from module store"));
            }
        }
        Ok(())
    }
}

impl ModuleResolver for Registry {
    fn resolve(&self, id: &ModuleId) -> Option<&ModuleDef> {
        self.module_store.get(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer_set(n: usize) -> Vec<LayerOp> {
        (0..n).map(|i| LayerOp::conv(format!("op{i}"))).collect()
    }

    fn some_id(byte: u8) -> ModuleId {
        ModuleId::from_bytes([byte; 32])
    }

    fn dummy_def() -> ModuleDef {
        ModuleDef::seed(LayerOp::conv("dummy"))
    }

    #[test]
    fn initialize_seeds_one_notable_per_layer() {
        let reg = Registry::initialize(&layer_set(6), 0.5).unwrap();
        assert_eq!(reg.notable_len(), 6);
        assert_eq!(reg.candidate_len(), 0);
        assert_eq!(reg.banned_len(), 0);
        for id in reg.notable_ids() {
            assert_eq!(reg.record(id).unwrap().average(), Some(0.5));
        }
    }

    #[test]
    fn initialize_rejects_empty_and_duplicates() {
        assert_eq!(Registry::initialize(&[], 0.5), Err(RegistryError::EmptyLayerSet));
        let dup = vec![LayerOp::conv("x"), LayerOp::pool("x")];
        assert!(matches!(
            Registry::initialize(&dup, 0.5),
            Err(RegistryError::DuplicateLayerLabel(_))
        ));
    }

    #[test]
    fn unseen_module_enters_candidate_with_ttl() {
        let mut reg = Registry::initialize(&layer_set(2), 0.5).unwrap();
        let id = some_id(1);
        reg.record_fitness(id, &dummy_def(), 0.8, 4);
        let rec = reg.record(&id).unwrap();
        assert_eq!(rec.fitness_sum, 0.8);
        assert_eq!(rec.observation_count, 1);
        assert_eq!(rec.ttl_remaining, 4);
        assert_eq!(reg.candidate_len(), 1);
    }

    #[test]
    fn running_average_updates() {
        let mut reg = Registry::initialize(&layer_set(2), 0.5).unwrap();
        let id = some_id(1);
        reg.record_fitness(id, &dummy_def(), 0.9, 4);
        reg.record_fitness(id, &dummy_def(), 0.7, 4);
        reg.record_fitness(id, &dummy_def(), 0.7, 4);
        let rec = reg.record(&id).unwrap();
        assert_eq!(rec.observation_count, 3);
        assert!((rec.average().unwrap() - 2.3 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn banned_observations_are_dropped() {
        let mut reg = Registry::initialize(&layer_set(2), 0.5).unwrap();
        let id = some_id(1);
        reg.record_fitness(id, &dummy_def(), 0.1, 1);
        reg.end_of_generation(2, 10); // ttl hits 0 with 1 obs -> banned
        assert!(reg.is_banned(&id));
        let before = reg.clone();
        reg.record_fitness(id, &dummy_def(), 0.9, 4);
        assert_eq!(reg, before);
    }

    #[test]
    fn promotion_beats_worst_notable() {
        let mut reg = Registry::initialize(&layer_set(3), 0.5).unwrap();
        let id = some_id(1);
        reg.record_fitness(id, &dummy_def(), 0.9, 4);
        reg.record_fitness(id, &dummy_def(), 0.9, 4);
        let outcome = reg.end_of_generation(2, 10);
        assert_eq!(outcome.promotions, vec![id]);
        assert!(outcome.bans.is_empty());
        assert_eq!(reg.notable_len(), 4);
    }

    #[test]
    fn promotion_into_full_list_evicts_worst() {
        let mut reg = Registry::initialize(&layer_set(3), 0.5).unwrap();
        let worst = reg.worst_notable().unwrap().0;
        let id = some_id(1);
        reg.record_fitness(id, &dummy_def(), 0.9, 4);
        reg.record_fitness(id, &dummy_def(), 0.9, 4);
        let outcome = reg.end_of_generation(2, 3);
        assert_eq!(outcome.promotions, vec![id]);
        assert_eq!(outcome.bans, vec![worst]);
        assert_eq!(reg.notable_len(), 3);
        assert!(reg.is_banned(&worst));
    }

    #[test]
    fn losing_candidate_is_banned() {
        let mut reg = Registry::initialize(&layer_set(3), 0.5).unwrap();
        let id = some_id(1);
        reg.record_fitness(id, &dummy_def(), 0.4, 4);
        reg.record_fitness(id, &dummy_def(), 0.4, 4);
        let outcome = reg.end_of_generation(2, 10);
        assert_eq!(outcome.bans, vec![id]);
        assert!(reg.is_banned(&id));
    }

    #[test]
    fn tie_with_worst_notable_is_banned() {
        // Strict improvement required: average exactly equal to the worst
        // notable loses.
        let mut reg = Registry::initialize(&layer_set(3), 0.5).unwrap();
        let id = some_id(1);
        reg.record_fitness(id, &dummy_def(), 0.5, 4);
        reg.record_fitness(id, &dummy_def(), 0.5, 4);
        let outcome = reg.end_of_generation(2, 10);
        assert_eq!(outcome.bans, vec![id]);
    }

    #[test]
    fn ttl_expiry_bans_underobserved_candidate() {
        let mut reg = Registry::initialize(&layer_set(2), 0.5).unwrap();
        let id = some_id(1);
        reg.record_fitness(id, &dummy_def(), 0.9, 1);
        let outcome = reg.end_of_generation(2, 10);
        assert_eq!(outcome.bans, vec![id]);
    }

    #[test]
    fn end_of_generation_without_candidates_is_identity() {
        let mut reg = Registry::initialize(&layer_set(4), 0.5).unwrap();
        let before = reg.clone();
        let outcome = reg.end_of_generation(2, 10);
        assert_eq!(outcome, GenerationOutcome::default());
        assert_eq!(reg, before);
    }

    #[test]
    fn worst_notable_tie_breaks_on_digest() {
        let mut reg = Registry::initialize(&layer_set(2), 0.5).unwrap();
        let ids: Vec<ModuleId> = reg.notable_ids().copied().collect();
        let (id, avg) = reg.worst_notable().unwrap();
        assert_eq!(avg, 0.5);
        assert_eq!(id, ids[0]);
        // Make one strictly worse and check it is now selected.
        reg.record_fitness(ids[1], &dummy_def(), 0.0, 4);
        let (id, _) = reg.worst_notable().unwrap();
        assert_eq!(id, ids[1]);
    }

    #[test]
    fn sample_single_notable_is_degenerate() {
        let reg = Registry::initialize(&layer_set(1), 0.5).unwrap();
        let only = *reg.notable_ids().next().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let drawn = reg.sample_notables(3, &mut rng).unwrap();
        assert_eq!(drawn, vec![only, only, only]);
    }

    #[test]
    fn sampling_follows_average_weights() {
        let mut reg = Registry::initialize(&layer_set(2), 0.5).unwrap();
        let ids: Vec<ModuleId> = reg.notable_ids().copied().collect();
        // Push averages to 0.75 and 0.25.
        for rec_target in [(ids[0], 1.0), (ids[1], 0.0)] {
            let (id, f) = rec_target;
            reg.record_fitness(id, &dummy_def(), f, 4);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = reg.sample_notables(10_000, &mut rng).unwrap();
        let first = draws.iter().filter(|id| **id == ids[0]).count() as f64 / 10_000.0;
        assert!((first - 0.75).abs() < 0.02, "frequency {first}");
    }

    #[test]
    fn equal_averages_sample_uniformly() {
        let reg = Registry::initialize(&layer_set(4), 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = reg.sample_notables(20_000, &mut rng).unwrap();
        let mut counts: BTreeMap<ModuleId, usize> = BTreeMap::new();
        for id in draws {
            *counts.entry(id).or_insert(0) += 1;
        }
        // chi-square against uniform, 3 dof; 16.27 is the 0.1% cutoff.
        let expected = 20_000.0 / 4.0;
        let chi2: f64 = counts
            .values()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }

    #[test]
    fn empty_notable_sampling_errors() {
        let reg = Registry {
            notable: BTreeMap::new(),
            candidate: BTreeMap::new(),
            banned: BTreeSet::new(),
            module_store: BTreeMap::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            reg.sample_notables(1, &mut rng),
            Err(RegistryError::EmptyNotableList)
        );
        assert_eq!(reg.worst_notable(), None);
    }
}
