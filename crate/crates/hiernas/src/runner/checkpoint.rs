//! Checkpoint document: enough state to resume a run bit-exactly, including
//! the RNG stream position.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, RunError};
use crate::evolution::{GenerationStats, ModuleTree, PopulationMember};
use crate::module_graph::{ModuleDef, ModuleId};
use crate::registry::{FitnessRecord, Registry};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NotableEntry {
    pub id: ModuleId,
    pub def: ModuleDef,
    pub sum: f64,
    pub count: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub id: ModuleId,
    pub def: ModuleDef,
    pub sum: f64,
    pub count: u64,
    pub ttl: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BestSnapshot {
    pub fitness: f64,
    pub tree: ModuleTree,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    /// Next generation index to run.
    pub generation: u32,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub notable: Vec<NotableEntry>,
    pub candidate: Vec<CandidateEntry>,
    pub banned: Vec<ModuleId>,
    /// The full definition store: listed modules may reference child modules
    /// that carry no list entry of their own.
    pub module_store: BTreeMap<ModuleId, ModuleDef>,
    pub population: Vec<PopulationMember>,
    pub best: Option<BestSnapshot>,
    pub stats_so_far: Vec<GenerationStats>,
    pub rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn capture(
        config: &ExperimentConfig,
        seed: u64,
        generation: u32,
        registry: &Registry,
        population: &[PopulationMember],
        best: Option<&BestSnapshot>,
        stats: &[GenerationStats],
        rng: &ChaCha8Rng,
    ) -> Self {
        let notable = registry
            .notable_entries()
            .map(|(id, rec)| NotableEntry {
                id: *id,
                def: registry.definition(id).expect("listed ids are stored").clone(),
                sum: rec.fitness_sum,
                count: rec.observation_count,
            })
            .collect();
        let candidate = registry
            .candidate_entries()
            .map(|(id, rec)| CandidateEntry {
                id: *id,
                def: registry.definition(id).expect("listed ids are stored").clone(),
                sum: rec.fitness_sum,
                count: rec.observation_count,
                ttl: rec.ttl_remaining,
            })
            .collect();
        Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            generation,
            seed,
            config: config.clone(),
            notable,
            candidate,
            banned: registry.banned_ids().copied().collect(),
            module_store: registry
                .store_entries()
                .map(|(id, def)| (*id, def.clone()))
                .collect(),
            population: population.to_vec(),
            best: best.cloned(),
            stats_so_far: stats.to_vec(),
            rng: rng.clone(),
        }
    }

    pub fn restore_registry(&self) -> Registry {
        let mut store: BTreeMap<ModuleId, ModuleDef> = self.module_store.clone();
        let mut notable = BTreeMap::new();
        for e in &self.notable {
            store.insert(e.id, e.def.clone());
            notable.insert(
                e.id,
                FitnessRecord {
                    fitness_sum: e.sum,
                    observation_count: e.count,
                    ttl_remaining: 0,
                },
            );
        }
        let mut candidate = BTreeMap::new();
        for e in &self.candidate {
            store.insert(e.id, e.def.clone());
            candidate.insert(
                e.id,
                FitnessRecord {
                    fitness_sum: e.sum,
                    observation_count: e.count,
                    ttl_remaining: e.ttl,
                },
            );
        }
        let banned: BTreeSet<ModuleId> = self.banned.iter().copied().collect();
        Registry::from_parts(notable, candidate, banned, store)
    }

    pub fn save(&self, path: &Path) -> Result<(), RunError> {
        let json = serde_json::to_string(self).map_err(RunError::CheckpointEncode)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| RunError::CorruptCheckpoint(e.to_string()))?;
        if ckpt.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(RunError::CorruptCheckpoint(format!(
                "unsupported schema version {}",
                ckpt.schema_version
            )));
        }
        Ok(ckpt)
    }
}
