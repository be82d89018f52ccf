//! Acceptance gate: each test exercises one headline criterion end to end
//! and prints a single PASS line with the measured numbers.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hiernas::evaluation::sample::{sample_cells, sample_ops};
use hiernas::evaluation::{
    cell_key, BenchmarkTable, CellConstraints, EvaluationStatus, Evaluator, TabularEvaluator,
};
use hiernas::evolution::{
    generate_module, mutate, training_epochs, EvolutionConfig, PopulationMember,
};
use hiernas::module_graph::{
    canonical_hash, flatten, validate, Endpoint, FlatGraph, LayerOp, ModuleDef, ModuleId,
    NoModules, NodeRef,
};
use hiernas::registry::Registry;
use hiernas::runner::{compare_baseline, resume, run, Checkpoint, ExperimentConfig, SeedRun};

fn layer_set() -> Vec<LayerOp> {
    vec![
        LayerOp::conv("conv1x1_32"),
        LayerOp::conv("conv3x3_32"),
        LayerOp::pool("maxpool2"),
        LayerOp::pool("maxpool3"),
    ]
}

/// Criterion 1: the training-epochs budget matches an independently written
/// oracle on a grid covering both clamp boundaries. Zero tolerance.
#[test]
fn epochs_formula_matches_independent_oracle() {
    let started = Instant::now();
    // Oracle written from the formula's prose: divide complexity by the
    // damped log of the generation, floor, then clamp into [1, max_epochs].
    fn oracle(complexity: u32, generation: u32, max_epochs: u32) -> u32 {
        let mut denom = ((generation + 1) as f64).ln();
        if denom < 1.0 {
            denom = 1.0;
        }
        let raw = (complexity as f64 / denom) as u64; // floor for positives
        if raw < 1 {
            1
        } else if raw > max_epochs as u64 {
            max_epochs
        } else {
            raw as u32
        }
    }
    let mut checked = 0;
    let mut lower_clamp = 0;
    let mut upper_clamp = 0;
    for complexity in [1, 2, 3, 5, 9, 20, 100] {
        for generation in [0, 1, 2, 9, 99] {
            for max_epochs in [5, 10] {
                let expected = oracle(complexity, generation, max_epochs);
                assert_eq!(
                    training_epochs(complexity, generation, max_epochs),
                    expected,
                    "complexity={complexity} generation={generation} max={max_epochs}"
                );
                checked += 1;
                if expected == 1 && complexity == 1 || (complexity == 9 && generation == 99) {
                    lower_clamp += 1;
                }
                if expected == max_epochs {
                    upper_clamp += 1;
                }
            }
        }
    }
    assert!(checked >= 20);
    assert!(lower_clamp > 0 && upper_clamp > 0, "both clamps must be hit");
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 1);
    println!(
        "PASS epochs formula oracle: {checked} triples exact, both clamps hit, {:?}",
        elapsed
    );
}

/// Brute-force cycle check independent of the library's topological-order
/// machinery: three-color DFS over the flat edge list.
fn brute_force_acyclic(graph: &FlatGraph) -> bool {
    let idx = |ep: Endpoint| -> usize {
        match ep {
            Endpoint::Input => graph.nodes.len(),
            Endpoint::Output => graph.nodes.len() + 1,
            Endpoint::Node(i) => i,
        }
    };
    let n = graph.nodes.len() + 2;
    let mut adj = vec![Vec::new(); n];
    for (s, d) in &graph.edges {
        adj[idx(*s)].push(idx(*d));
    }
    let mut color = vec![0u8; n]; // 0 white, 1 gray, 2 black
    fn dfs(v: usize, adj: &[Vec<usize>], color: &mut [u8]) -> bool {
        color[v] = 1;
        for &w in &adj[v] {
            if color[w] == 1 {
                return false;
            }
            if color[w] == 0 && !dfs(w, adj, color) {
                return false;
            }
        }
        color[v] = 2;
        true
    }
    (0..n).all(|v| color[v] != 0 || dfs(v, &adj, &mut color))
}

/// Criterion 2: 10,000 generated-and-mutated hierarchies all validate and
/// all flatten to acyclic phenotypes, in under 60 seconds.
#[test]
fn structural_properties_hold_over_10k_hierarchies() {
    let started = Instant::now();
    let registry = Registry::initialize(&layer_set(), 0.5).unwrap();
    let config = EvolutionConfig {
        gen_graph_nodes: 4,
        ..EvolutionConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut count = 0;
    while count < 10_000 {
        let nodes = rng.gen_range(1..=6usize);
        let tree = generate_module(&registry, nodes, 0.5, &mut rng).unwrap();
        let mut member = PopulationMember::fresh(tree);
        // Each mutation round may deepen the hierarchy via node mutation.
        for _ in 0..rng.gen_range(0..4u32) {
            member = mutate(&member, &registry, &config, &mut rng);
        }
        validate(&member.tree.root).expect("generated hierarchy must validate");
        let flat = member.tree.flatten().expect("hierarchy must flatten");
        assert!(brute_force_acyclic(&flat), "flattened phenotype has a cycle");
        count += 1;
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!("PASS structural suite: 10000 hierarchies valid + acyclic in {elapsed:?}");
}

/// Criterion 3: >= 1e5 randomized list events never break disjointness, the
/// notable cap, or banned absorption; TTL-expiry and promotion both fire at
/// least 100 times. Under 30 seconds.
#[test]
fn list_state_machine_invariants_over_1e5_events() {
    let started = Instant::now();
    let n_max = 10;
    let base_ttl = 4;
    let min_observations = 2;

    // A pool of distinct synthetic modules to observe.
    let defs: Vec<(ModuleId, ModuleDef)> = (0..600)
        .map(|i| {
            let def = ModuleDef::seed(LayerOp::conv(format!("op{i}")));
            (canonical_hash(&def, &NoModules).unwrap(), def)
        })
        .collect();

    let mut registry = Registry::initialize(&layer_set(), 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut events: u64 = 0;
    let mut promotions = 0usize;
    let mut ttl_expiries = 0usize;
    let mut banned_observations = 0u64;

    while events < 100_000 {
        // Promotions concentrate early in a registry's life (the bar only
        // rises), so restart periodically to keep both paths hot.
        if events % 5_000 == 0 && events > 0 {
            registry = Registry::initialize(&layer_set(), 0.5).unwrap();
        }
        if rng.gen_bool(0.97) {
            let (id, def) = &defs[rng.gen_range(0..defs.len())];
            if registry.is_banned(id) {
                banned_observations += 1;
            }
            registry.record_fitness(*id, def, rng.gen::<f64>(), base_ttl);
            // Absorption: a banned module never re-enters a list.
            assert!(!registry.is_banned(id) || registry.record(id).is_none());
        } else {
            // Under-observed candidates whose TTL is about to hit zero will
            // be expired by this boundary.
            let expiring: usize = registry
                .candidate_entries()
                .filter(|(_, rec)| {
                    rec.ttl_remaining <= 1 && rec.observation_count < min_observations
                })
                .count();
            let outcome = registry.end_of_generation(min_observations, n_max);
            promotions += outcome.promotions.len();
            ttl_expiries += expiring;
            registry.check_invariants(n_max).expect("registry invariant");
        }
        events += 1;
    }
    assert!(promotions >= 100, "only {promotions} promotions");
    assert!(ttl_expiries >= 100, "only {ttl_expiries} TTL expiries");
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 30, "took {elapsed:?}");
    println!(
        "PASS list state machine: {events} events, {promotions} promotions, \
         {ttl_expiries} TTL expiries, {banned_observations} banned observations dropped, {elapsed:?}"
    );
}

/// Criterion 4: a parent referencing a child module three times sees exactly
/// three phenotype nodes change after one leaf edit in the child.
#[test]
fn shared_child_edit_changes_exactly_three_nodes() {
    let child = |leaf: &str| {
        ModuleDef::new(
            vec![
                NodeRef::Layer(LayerOp::conv("conv3x3_32")),
                NodeRef::Layer(LayerOp::conv(leaf)),
            ],
            [
                (Endpoint::Input, Endpoint::Node(0)),
                (Endpoint::Node(0), Endpoint::Node(1)),
                (Endpoint::Node(1), Endpoint::Output),
            ],
        )
    };
    let before_child = child("conv1x1_32");
    let after_child = child("maxpool3");
    let mut store = BTreeMap::new();
    let before_id = canonical_hash(&before_child, &NoModules).unwrap();
    let after_id = canonical_hash(&after_child, &NoModules).unwrap();
    store.insert(before_id, before_child);
    store.insert(after_id, after_child);

    let parent = |id: ModuleId| {
        ModuleDef::new(
            vec![
                NodeRef::Module(id),
                NodeRef::Module(id),
                NodeRef::Module(id),
            ],
            [
                (Endpoint::Input, Endpoint::Node(0)),
                (Endpoint::Node(0), Endpoint::Node(1)),
                (Endpoint::Node(1), Endpoint::Node(2)),
                (Endpoint::Node(2), Endpoint::Output),
            ],
        )
    };
    let before = flatten(&parent(before_id), &store).unwrap();
    let after = flatten(&parent(after_id), &store).unwrap();
    assert_eq!(before.node_count(), 6);
    assert_eq!(after.node_count(), 6);
    // Exact structural diff: same positions, labels differ at exactly the
    // three copies of the edited leaf.
    assert_eq!(before.edges, after.edges);
    let changed: Vec<usize> = before
        .nodes
        .iter()
        .zip(after.nodes.iter())
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(i, _)| i)
        .collect();
    assert_eq!(changed.len(), 3, "changed positions: {changed:?}");
    for i in &changed {
        assert_eq!(before.nodes[*i].label, "conv1x1_32");
        assert_eq!(after.nodes[*i].label, "maxpool3");
    }
    println!("PASS controlled change: one leaf edit changed exactly 3 of 6 phenotype nodes");
}

/// Criterion 5: over 10 seeds x 20 generations x population 20, the
/// fitness-driven search beats the constant-fitness control in >= 9/10 seeds
/// on final best fitness, and its mean population fitness exceeds the
/// control's best by generation 10 in >= 7/10 seeds. Under 5 minutes.
#[test]
fn search_beats_random_control() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig::fmnist_surrogate(dir.path().to_path_buf());
    assert_eq!(config.evolution.population_size, 20);
    assert_eq!(config.generations, 20);
    let seeds: Vec<u64> = (0..10).collect();
    let report = compare_baseline(&config, &seeds).unwrap();
    let elapsed = started.elapsed();
    assert!(
        report.search_wins >= 9,
        "search won only {}/10 seeds",
        report.search_wins
    );
    assert!(
        report.early_crossovers >= 7,
        "early crossover in only {}/10 seeds",
        report.early_crossovers
    );
    assert!(elapsed.as_secs() < 300, "took {elapsed:?}");
    println!(
        "PASS search vs random: {}/10 final-best wins, {}/10 early crossovers, p={:.4}, {elapsed:?}",
        report.search_wins, report.early_crossovers, report.p_value
    );
}

/// Random phenotype that may violate the cell constraints: up to 9 nodes,
/// dense forward wiring, occasional foreign op.
fn unconstrained_phenotype(rng: &mut ChaCha8Rng) -> FlatGraph {
    let mut ops = sample_ops();
    ops.push(LayerOp::conv("conv7x7-forbidden"));
    let n = rng.gen_range(1..=9usize);
    let nodes: Vec<LayerOp> = (0..n)
        .map(|_| {
            // Foreign op appears in roughly a tenth of the nodes.
            if rng.gen_bool(0.1) {
                ops[3].clone()
            } else {
                ops[rng.gen_range(0..3)].clone()
            }
        })
        .collect();
    let mut edges = BTreeSet::new();
    for i in 0..n {
        if rng.gen_bool(0.5) {
            edges.insert((Endpoint::Input, Endpoint::Node(i)));
        }
        if rng.gen_bool(0.5) {
            edges.insert((Endpoint::Node(i), Endpoint::Output));
        }
        for j in i + 1..n {
            if rng.gen_bool(0.35) {
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
    FlatGraph { nodes, edges }
}

/// Criterion 6: over 1,000 random phenotypes, every constraint violator is
/// rejected with status constraint_violation and fitness 0.0; zero false
/// accepts against an independent brute-force counter.
#[test]
fn constraint_rejection_has_zero_false_accepts() {
    let table = BenchmarkTable::from_entries(
        sample_cells(500, 0).into_values().map(|(_, entry)| entry),
    );
    let allowed: BTreeSet<String> = sample_ops().iter().map(|o| o.label.clone()).collect();
    let constraints = CellConstraints::nasbench101(allowed.iter().cloned());
    let evaluator = TabularEvaluator::new(table, constraints);

    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut violators = 0;
    for _ in 0..1_000 {
        let graph = unconstrained_phenotype(&mut rng);
        // Brute-force violation counter, written independently of the
        // evaluator's checks: terminals count toward the 7-node cap.
        let violates = graph.node_count() + 2 > 7
            || graph.edge_count() > 9
            || graph.nodes.iter().any(|n| !allowed.contains(&n.label));
        let result = evaluator.evaluate(&graph, 1);
        if violates {
            violators += 1;
            assert_eq!(
                result.status,
                EvaluationStatus::ConstraintViolation,
                "false accept for {}",
                cell_key(&graph)
            );
            assert_eq!(result.fitness, 0.0);
        } else {
            assert_ne!(result.status, EvaluationStatus::ConstraintViolation);
        }
    }
    assert!(violators > 0, "sample never violated; generator too tame");
    println!(
        "PASS constraint rejection: 1000 phenotypes, {violators} violations, zero false accepts"
    );
}

/// Criterion 7: every key in the bundled 500-cell table returns its stored
/// accuracy exactly; absent well-formed keys report a lookup miss.
#[test]
fn bundled_table_hits_exact_and_misses_clean() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/nasbench_sample.jsonl");
    let table = BenchmarkTable::load(&path).unwrap();
    assert_eq!(table.len(), 500);
    let present: BTreeSet<String> = table.keys().cloned().collect();
    let constraints = CellConstraints::nasbench101(sample_ops().iter().map(|o| o.label.clone()));
    let evaluator = TabularEvaluator::new(table, constraints);

    let mut hits = 0;
    for (key, (graph, entry)) in sample_cells(500, 0) {
        let result = evaluator.evaluate(&graph, 1);
        assert_eq!(result.status, EvaluationStatus::Ok, "key {key}");
        assert_eq!(result.fitness, entry.validation_accuracy, "key {key}");
        hits += 1;
    }
    assert_eq!(hits, 500);

    // Valid cells drawn from a different stream that do not appear in the
    // bundled table must miss.
    let mut misses = 0;
    for (key, (graph, _)) in sample_cells(2_000, 1) {
        if present.contains(&key) {
            continue;
        }
        let result = evaluator.evaluate(&graph, 1);
        assert_eq!(result.status, EvaluationStatus::LookupMiss, "key {key}");
        assert_eq!(result.fitness, 0.0);
        misses += 1;
    }
    assert!(misses >= 100, "only {misses} absent keys sampled");
    println!("PASS tabular sample: 500/500 exact hits, {misses}/{misses} clean misses");
}

fn small_config(out: std::path::PathBuf) -> ExperimentConfig {
    let mut config = ExperimentConfig::fmnist_surrogate(out);
    config.generations = 6;
    config.seeds = vec![11];
    config
}

/// Criterion 8: identical config and seed produce byte-identical stats CSVs.
#[test]
fn identical_runs_are_byte_identical() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run(&small_config(dir_a.path().to_path_buf())).unwrap();
    run(&small_config(dir_b.path().to_path_buf())).unwrap();
    let csv_a = std::fs::read(dir_a.path().join("seed_11/stats.csv")).unwrap();
    let csv_b = std::fs::read(dir_b.path().join("seed_11/stats.csv")).unwrap();
    assert_eq!(csv_a, csv_b);
    assert!(!csv_a.is_empty());
    println!(
        "PASS determinism: two runs produced byte-identical stats CSVs ({} bytes)",
        csv_a.len()
    );
}

/// Criterion 9: resuming from a mid-run checkpoint reproduces the
/// uninterrupted run's stats exactly.
#[test]
fn resume_equals_uninterrupted_run() {
    let full_dir = tempfile::tempdir().unwrap();
    let resumed_dir = tempfile::tempdir().unwrap();
    run(&small_config(full_dir.path().to_path_buf())).unwrap();

    // Interrupted run: advance three generations by hand, checkpoint, then
    // resume to completion through the public entry point.
    let config = small_config(resumed_dir.path().to_path_buf());
    let evaluator = config.build_evaluator().unwrap();
    let mut state = SeedRun::start(&config, 11).unwrap();
    for _ in 0..3 {
        state.step(evaluator.as_ref(), None, &config);
    }
    let seed_dir = resumed_dir.path().join("seed_11");
    std::fs::create_dir_all(&seed_dir).unwrap();
    let ckpt = Checkpoint::capture(
        &config,
        state.seed,
        state.next_generation,
        &state.registry,
        &state.population,
        state.best.as_ref(),
        &state.stats,
        &state.rng,
    );
    let ckpt_path = seed_dir.join("checkpoint.json");
    ckpt.save(&ckpt_path).unwrap();
    resume(&ckpt_path).unwrap();

    let full = std::fs::read(full_dir.path().join("seed_11/stats.csv")).unwrap();
    let resumed = std::fs::read(seed_dir.join("stats.csv")).unwrap();
    assert_eq!(full, resumed);
    println!("PASS resume: checkpoint at generation 3 reproduced the uninterrupted stats CSV");
}
