//! Experiment orchestration: config loading, seeded runs, the random-search
//! comparison, per-generation CSV reporting, checkpoint/resume, and
//! phenotype export.

mod checkpoint;

pub use checkpoint::{BestSnapshot, CandidateEntry, Checkpoint, NotableEntry, CHECKPOINT_SCHEMA_VERSION};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evaluation::{
    BenchmarkTable, CellConstraints, Evaluator, RandomEvaluator, SurrogateEvaluator,
    SurrogateParams, TableLoadError, TabularEvaluator,
};
use crate::evolution::{
    initial_population, step_generation, ConfigError, EvolutionConfig, GenerationStats,
    ModuleTree, PopulationMember,
};
use crate::module_graph::{
    flat_graph_to_dot, flat_graph_to_json, hierarchy_to_dot, hierarchy_to_json, LayerOp, ModuleDef,
    ModuleId,
};
use crate::registry::Registry;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvaluatorConfig {
    Surrogate,
    Tabular { table_path: PathBuf },
    Random { constant: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub evolution: EvolutionConfig,
    pub generations: u32,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub layers: Vec<LayerOp>,
    pub evaluator: EvaluatorConfig,
    #[serde(default)]
    pub constraints: Option<CellConstraints>,
    #[serde(default)]
    pub surrogate: SurrogateParams,
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
}

fn default_schema_version() -> u32 {
    CONFIG_SCHEMA_VERSION
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Evolution(#[from] ConfigError),
    #[error(transparent)]
    TableLoad(#[from] TableLoadError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("cannot encode checkpoint: {0}")]
    CheckpointEncode(serde_json::Error),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, RunError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), RunError> {
        self.evolution.validate()?;
        if self.generations == 0 {
            return Err(RunError::Config("generations must be >= 1".into()));
        }
        if self.layers.is_empty() {
            return Err(RunError::Config("layer set must be non-empty".into()));
        }
        if let EvaluatorConfig::Tabular { table_path } = &self.evaluator {
            if !table_path.exists() {
                return Err(RunError::Config(format!(
                    "benchmark table {} does not exist",
                    table_path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn build_evaluator(&self) -> Result<Box<dyn Evaluator>, RunError> {
        match &self.evaluator {
            EvaluatorConfig::Surrogate => {
                Ok(Box::new(SurrogateEvaluator::new(self.surrogate.clone())))
            }
            EvaluatorConfig::Random { constant } => Ok(Box::new(RandomEvaluator::new(*constant))),
            EvaluatorConfig::Tabular { table_path } => {
                let table = BenchmarkTable::load(table_path)?;
                let constraints = self.constraints.clone().unwrap_or_else(|| {
                    CellConstraints::nasbench101(self.layers.iter().map(|l| l.label.clone()))
                });
                Ok(Box::new(TabularEvaluator::new(table, constraints)))
            }
        }
    }

    /// The Fashion-MNIST surrogate search preset.
    pub fn fmnist_surrogate(output_dir: PathBuf) -> Self {
        Self {
            evolution: EvolutionConfig::default(),
            generations: 20,
            seeds: vec![0],
            output_dir,
            layers: vec![
                LayerOp::conv("conv1x1_32"),
                LayerOp::conv("conv2x2_32"),
                LayerOp::conv("conv3x3_32"),
                LayerOp::pool("maxpool2"),
                LayerOp::pool("maxpool3"),
                LayerOp::pool("maxpool5"),
            ],
            evaluator: EvaluatorConfig::Surrogate,
            constraints: None,
            surrogate: SurrogateParams::default(),
            schema_version: CONFIG_SCHEMA_VERSION,
        }
    }

    /// The constrained cell-space preset (population 10, 3 ops, 7/9 limits).
    pub fn nasbench(output_dir: PathBuf, table_path: PathBuf) -> Self {
        let layers = vec![
            LayerOp::conv("conv1x1-bn-relu"),
            LayerOp::conv("conv3x3-bn-relu"),
            LayerOp::pool("maxpool3x3"),
        ];
        Self {
            evolution: EvolutionConfig {
                population_size: 10,
                ..EvolutionConfig::default()
            },
            generations: 20,
            seeds: vec![0],
            output_dir,
            constraints: Some(CellConstraints::nasbench101(
                layers.iter().map(|l| l.label.clone()),
            )),
            layers,
            evaluator: EvaluatorConfig::Tabular { table_path },
            surrogate: SurrogateParams::default(),
            schema_version: CONFIG_SCHEMA_VERSION,
        }
    }
}

pub const STATS_CSV_HEADER: &str =
    "generation,best_fitness,mean_fitness,notable_size,candidate_size,banned_size,promotions,bans,evaluations";

/// Fixed-precision row formatting so identical runs are byte-identical.
pub fn stats_csv_row(s: &GenerationStats) -> String {
    format!(
        "{},{:.6},{:.6},{},{},{},{},{},{}",
        s.generation,
        s.best_fitness,
        s.mean_fitness,
        s.notable_size,
        s.candidate_size,
        s.banned_size,
        s.promotions,
        s.bans,
        s.evaluations
    )
}

/// In-flight state of one seeded run.
pub struct SeedRun {
    pub seed: u64,
    pub registry: Registry,
    pub population: Vec<PopulationMember>,
    pub rng: ChaCha8Rng,
    pub stats: Vec<GenerationStats>,
    /// (best, mean) per generation under the report evaluator, when one is
    /// in use.
    pub report_curves: Vec<(f64, f64)>,
    pub best: Option<BestSnapshot>,
    pub next_generation: u32,
}

impl SeedRun {
    pub fn start(config: &ExperimentConfig, seed: u64) -> Result<Self, RunError> {
        let registry = Registry::initialize(&config.layers, config.evolution.prior_fitness)
            .map_err(|e| RunError::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let population = initial_population(&registry, &config.evolution, &mut rng);
        Ok(Self {
            seed,
            registry,
            population,
            rng,
            stats: Vec::new(),
            report_curves: Vec::new(),
            best: None,
            next_generation: 0,
        })
    }

    pub fn resume_from(checkpoint: &Checkpoint) -> Self {
        Self {
            seed: checkpoint.seed,
            registry: checkpoint.restore_registry(),
            population: checkpoint.population.clone(),
            rng: checkpoint.rng.clone(),
            stats: checkpoint.stats_so_far.clone(),
            report_curves: Vec::new(),
            best: checkpoint.best.clone(),
            next_generation: checkpoint.generation,
        }
    }

    pub fn step(
        &mut self,
        evaluator: &dyn Evaluator,
        report_evaluator: Option<&dyn Evaluator>,
        config: &ExperimentConfig,
    ) -> GenerationStats {
        let outcome = step_generation(
            &mut self.population,
            &mut self.registry,
            evaluator,
            report_evaluator,
            &config.evolution,
            self.next_generation,
            &mut self.rng,
        );
        let fitness = outcome.best_member.fitness.unwrap_or(f64::NEG_INFINITY);
        if self.best.as_ref().map_or(true, |b| fitness > b.fitness) {
            self.best = Some(BestSnapshot {
                fitness,
                tree: outcome.best_member.tree.clone(),
            });
        }
        if let (Some(best), Some(mean)) = (outcome.report_best, outcome.report_mean) {
            self.report_curves.push((best, mean));
        }
        self.stats.push(outcome.stats.clone());
        self.next_generation += 1;
        outcome.stats
    }

    pub fn best_so_far(&self) -> f64 {
        self.stats
            .iter()
            .map(|s| s.best_fitness)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub best_fitness: f64,
    pub best_curve: Vec<f64>,
    pub mean_curve: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seeds: Vec<SeedSummary>,
    /// Across-seed averages per generation.
    pub aggregate_best: Vec<f64>,
    pub aggregate_mean: Vec<f64>,
}

fn aggregate(curves: &[Vec<f64>]) -> Vec<f64> {
    if curves.is_empty() {
        return Vec::new();
    }
    let gens = curves[0].len();
    (0..gens)
        .map(|g| curves.iter().map(|c| c[g]).sum::<f64>() / curves.len() as f64)
        .collect()
}

fn seed_dir(config: &ExperimentConfig, seed: u64) -> PathBuf {
    config.output_dir.join(format!("seed_{seed}"))
}

/// Runs every configured seed: per-seed directory with a config snapshot,
/// incrementally flushed stats CSV, per-generation checkpoint, and best
/// phenotype exports.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport, RunError> {
    config.validate()?;
    let evaluator = config.build_evaluator()?;
    let mut summaries = Vec::new();
    for &seed in &config.seeds {
        let state = run_seed(config, seed, evaluator.as_ref())?;
        summaries.push(SeedSummary {
            seed,
            best_fitness: state.best_so_far(),
            best_curve: state.stats.iter().map(|s| s.best_fitness).collect(),
            mean_curve: state.stats.iter().map(|s| s.mean_fitness).collect(),
        });
    }
    let report = ExperimentReport {
        aggregate_best: aggregate(
            &summaries.iter().map(|s| s.best_curve.clone()).collect::<Vec<_>>(),
        ),
        aggregate_mean: aggregate(
            &summaries.iter().map(|s| s.mean_curve.clone()).collect::<Vec<_>>(),
        ),
        seeds: summaries,
    };
    std::fs::write(
        config.output_dir.join("report.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok(report)
}

fn run_seed(
    config: &ExperimentConfig,
    seed: u64,
    evaluator: &dyn Evaluator,
) -> Result<SeedRun, RunError> {
    let dir = seed_dir(config, seed);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), config.to_toml_string())?;
    let mut state = SeedRun::start(config, seed)?;
    drive_to_completion(&mut state, config, evaluator, &dir)?;
    Ok(state)
}

/// Advances a run (fresh or resumed) to `config.generations`, rewriting the
/// stats CSV from the full history and checkpointing every generation so an
/// interrupt loses at most the generation in flight.
fn drive_to_completion(
    state: &mut SeedRun,
    config: &ExperimentConfig,
    evaluator: &dyn Evaluator,
    dir: &Path,
) -> Result<(), RunError> {
    while state.next_generation < config.generations {
        state.step(evaluator, None, config);
        write_stats_csv(&dir.join("stats.csv"), &state.stats)?;
        let ckpt = Checkpoint::capture(
            config,
            state.seed,
            state.next_generation,
            &state.registry,
            &state.population,
            state.best.as_ref(),
            &state.stats,
            &state.rng,
        );
        ckpt.save(&dir.join("checkpoint.json"))?;
    }
    if let Some(best) = &state.best {
        std::fs::write(dir.join("best.json"), export_best_json(best)?)?;
        std::fs::write(dir.join("best.dot"), export_best_dot(best))?;
    }
    Ok(())
}

fn write_stats_csv(path: &Path, stats: &[GenerationStats]) -> Result<(), RunError> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "{STATS_CSV_HEADER}")?;
    for s in stats {
        writeln!(file, "{}", stats_csv_row(s))?;
    }
    file.flush()?;
    Ok(())
}

/// Continues an interrupted run from its checkpoint; subsequent stats match
/// an uninterrupted run because the RNG stream position was serialized.
pub fn resume(checkpoint_path: &Path) -> Result<ExperimentReport, RunError> {
    let ckpt = Checkpoint::load(checkpoint_path)?;
    let config = ckpt.config.clone();
    config.validate()?;
    let evaluator = config.build_evaluator()?;
    let dir = seed_dir(&config, ckpt.seed);
    std::fs::create_dir_all(&dir)?;
    let mut state = SeedRun::resume_from(&ckpt);
    drive_to_completion(&mut state, &config, evaluator.as_ref(), &dir)?;
    Ok(ExperimentReport {
        aggregate_best: state.stats.iter().map(|s| s.best_fitness).collect(),
        aggregate_mean: state.stats.iter().map(|s| s.mean_fitness).collect(),
        seeds: vec![SeedSummary {
            seed: state.seed,
            best_fitness: state.best_so_far(),
            best_curve: state.stats.iter().map(|s| s.best_fitness).collect(),
            mean_curve: state.stats.iter().map(|s| s.mean_fitness).collect(),
        }],
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub search_final_best: f64,
    pub random_final_best: f64,
    /// True at the first generation (if any, within the first ten) where the
    /// search arm's mean population fitness exceeds the random arm's best.
    pub early_crossover: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub per_seed: Vec<SeedComparison>,
    pub search_wins: usize,
    pub early_crossovers: usize,
    pub seeds_total: usize,
    /// One-sided Wilcoxon signed-rank p-value for "search beats random" on
    /// final best fitness.
    pub p_value: f64,
    pub search_best_curve: Vec<f64>,
    pub search_mean_curve: Vec<f64>,
    pub random_best_curve: Vec<f64>,
    pub random_mean_curve: Vec<f64>,
}

/// Runs the surrogate experiment twice per seed: once driven by true
/// surrogate fitness, once driven by a constant fitness (the random-search
/// control) with surrogate fitness recorded for reporting only.
pub fn compare_baseline(config: &ExperimentConfig, seeds: &[u64]) -> Result<ComparisonReport, RunError> {
    if seeds.len() < 5 {
        return Err(RunError::Config("compare requires at least 5 seeds".into()));
    }
    config.validate()?;
    let surrogate = SurrogateEvaluator::new(config.surrogate.clone());
    let random = RandomEvaluator::default();

    let mut per_seed = Vec::new();
    let mut search_best_curves = Vec::new();
    let mut search_mean_curves = Vec::new();
    let mut random_best_curves = Vec::new();
    let mut random_mean_curves = Vec::new();

    for &seed in seeds {
        let mut search = SeedRun::start(config, seed)?;
        for _ in 0..config.generations {
            search.step(&surrogate, None, config);
        }
        let mut control = SeedRun::start(config, seed)?;
        for _ in 0..config.generations {
            control.step(&random, Some(&surrogate), config);
        }

        let search_best: Vec<f64> = search.stats.iter().map(|s| s.best_fitness).collect();
        let search_mean: Vec<f64> = search.stats.iter().map(|s| s.mean_fitness).collect();
        let random_best: Vec<f64> = control.report_curves.iter().map(|(b, _)| *b).collect();
        let random_mean: Vec<f64> = control.report_curves.iter().map(|(_, m)| *m).collect();

        let search_final = search_best.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let random_final = random_best.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let horizon = search_mean.len().min(random_best.len()).min(10);
        let early_crossover =
            (0..horizon).any(|g| search_mean[g] > random_best[g]);

        per_seed.push(SeedComparison {
            seed,
            search_final_best: search_final,
            random_final_best: random_final,
            early_crossover,
        });
        search_best_curves.push(search_best);
        search_mean_curves.push(search_mean);
        random_best_curves.push(random_best);
        random_mean_curves.push(random_mean);
    }

    let search_wins = per_seed
        .iter()
        .filter(|c| c.search_final_best > c.random_final_best)
        .count();
    let early_crossovers = per_seed.iter().filter(|c| c.early_crossover).count();
    let diffs: Vec<f64> = per_seed
        .iter()
        .map(|c| c.search_final_best - c.random_final_best)
        .collect();
    let p_value = wilcoxon_signed_rank_one_sided(&diffs);

    Ok(ComparisonReport {
        search_wins,
        early_crossovers,
        seeds_total: per_seed.len(),
        p_value,
        per_seed,
        search_best_curve: aggregate(&search_best_curves),
        search_mean_curve: aggregate(&search_mean_curves),
        random_best_curve: aggregate(&random_best_curves),
        random_mean_curve: aggregate(&random_mean_curves),
    })
}

/// One-sided Wilcoxon signed-rank test (alternative: median difference > 0),
/// normal approximation with average ranks for ties.
pub fn wilcoxon_signed_rank_one_sided(diffs: &[f64]) -> f64 {
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nonzero.len();
    if n == 0 {
        return 0.5;
    }
    let mut by_abs: Vec<(f64, f64)> = nonzero.iter().map(|&d| (d.abs(), d)).collect();
    by_abs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    // Average ranks over ties.
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && by_abs[j + 1].0 == by_abs[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for r in ranks.iter_mut().take(j + 1).skip(i) {
            *r = avg_rank;
        }
        i = j + 1;
    }
    let w_plus: f64 = by_abs
        .iter()
        .zip(&ranks)
        .filter(|((_, d), _)| *d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
    let z = (w_plus - mean) / var.sqrt();
    1.0 - normal_cdf(z)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

// Abramowitz & Stegun 7.1.26, |error| < 1.5e-7.
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Dot,
}

/// JSON export of a best snapshot: flattened phenotype plus one entry per
/// distinct module in the hierarchy.
pub fn export_best_json(best: &BestSnapshot) -> Result<String, RunError> {
    let flat = best
        .tree
        .flatten()
        .map_err(|e| RunError::CorruptCheckpoint(e.to_string()))?;
    let modules = best.tree.distinct_modules();
    let mut doc = hierarchy_to_json(best.tree.root_id(), &modules);
    doc["flat"] = flat_graph_to_json(&flat);
    doc["fitness"] = serde_json::json!(best.fitness);
    Ok(serde_json::to_string_pretty(&doc).expect("export serializes"))
}

/// DOT export: the flattened phenotype graph followed by the module
/// hierarchy, one cluster per distinct module.
pub fn export_best_dot(best: &BestSnapshot) -> String {
    let mut out = String::new();
    if let Ok(flat) = best.tree.flatten() {
        out.push_str(&flat_graph_to_dot(&flat));
    }
    out.push_str(&hierarchy_to_dot(best.tree.root_id(), &best.tree.distinct_modules()));
    out
}

/// Rebuilds a module tree from the JSON export; the round trip preserves the
/// canonical hash.
pub fn import_best_json(text: &str) -> Result<(f64, ModuleTree), RunError> {
    let doc: serde_json::Value =
        serde_json::from_str(text).map_err(|e| RunError::CorruptCheckpoint(e.to_string()))?;
    let fitness = doc["fitness"]
        .as_f64()
        .ok_or_else(|| RunError::CorruptCheckpoint("missing fitness".into()))?;
    let root_id = ModuleId::from_hex(
        doc["root"]
            .as_str()
            .ok_or_else(|| RunError::CorruptCheckpoint("missing root".into()))?,
    )
    .map_err(|e| RunError::CorruptCheckpoint(e.to_string()))?;
    let mut store: BTreeMap<ModuleId, ModuleDef> = BTreeMap::new();
    let mut root = None;
    for entry in doc["modules"]
        .as_array()
        .ok_or_else(|| RunError::CorruptCheckpoint("missing modules".into()))?
    {
        let id = ModuleId::from_hex(
            entry["id"]
                .as_str()
                .ok_or_else(|| RunError::CorruptCheckpoint("module entry missing id".into()))?,
        )
        .map_err(|e| RunError::CorruptCheckpoint(e.to_string()))?;
        let def: ModuleDef = serde_json::from_value(entry["def"].clone())
            .map_err(|e| RunError::CorruptCheckpoint(e.to_string()))?;
        if id == root_id {
            root = Some(def.clone());
        }
        store.insert(id, def);
    }
    let root = root.ok_or_else(|| RunError::CorruptCheckpoint("root def missing".into()))?;
    Ok((fitness, ModuleTree::new(root, store)))
}
