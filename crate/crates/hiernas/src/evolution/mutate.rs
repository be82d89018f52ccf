//! The mutation operator: node mutation (leaf replacement, recursive) and
//! edge mutation (acyclic edge insertion, recursive), at most one mutation
//! per member per generation.
//!
//! Mutation is copy-on-write: it edits a member-local copy of the module
//! tree, and every module along the recursion path gets a fresh canonical
//! id, so no other member's phenotype can change.

use std::collections::BTreeMap;

use rand::Rng;

use super::{generate_module, EvolutionConfig, ModuleTree, PopulationMember};
use crate::module_graph::{canonical_hash, Endpoint, ModuleDef, ModuleId, NodeRef};
use crate::registry::Registry;

/// Retry budget for finding a legal edge before degrading to no-op.
const EDGE_RETRIES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationKind {
    Node,
    Edge,
    None,
}

/// Draws the mutation selector `s` and dispatches: `[0, p_node)` node
/// mutation, `[p_node, p_node + p_edge)` edge mutation, otherwise identity.
pub fn mutate<R: Rng>(
    member: &PopulationMember,
    registry: &Registry,
    config: &EvolutionConfig,
    rng: &mut R,
) -> PopulationMember {
    let s: f64 = rng.gen();
    mutate_with_sample(member, s, registry, config, rng)
}

/// Dispatch with an explicit selector sample; `mutate` is this plus the draw.
pub fn mutate_with_sample<R: Rng>(
    member: &PopulationMember,
    s: f64,
    registry: &Registry,
    config: &EvolutionConfig,
    rng: &mut R,
) -> PopulationMember {
    let kind = if s < config.p_node_mut {
        MutationKind::Node
    } else if s < config.p_node_mut + config.p_edge_mut {
        MutationKind::Edge
    } else {
        MutationKind::None
    };
    let old_id = member.tree.root_id();
    let tree = match kind {
        MutationKind::Node => mutate_node(&member.tree, registry, config, rng),
        MutationKind::Edge => mutate_edge(&member.tree, rng),
        MutationKind::None => return member.clone(),
    };
    if tree.root_id() == old_id {
        // Saturated edge mutation degraded to no-op.
        return member.clone();
    }
    PopulationMember {
        tree,
        fitness: None,
        dirty: true,
        age: member.age,
    }
}

/// Node mutation: one uniformly chosen computational node. A layer reference
/// is replaced by a freshly generated module; a module reference recurses
/// into a copy of the child, so exactly one leaf changes per invocation.
pub fn mutate_node<R: Rng>(
    tree: &ModuleTree,
    registry: &Registry,
    config: &EvolutionConfig,
    rng: &mut R,
) -> ModuleTree {
    let mut store = tree.store.clone();
    let root = node_mutation(&tree.root, &mut store, registry, config, rng);
    ModuleTree::new(root, store)
}

fn node_mutation<R: Rng>(
    def: &ModuleDef,
    store: &mut BTreeMap<ModuleId, ModuleDef>,
    registry: &Registry,
    config: &EvolutionConfig,
    rng: &mut R,
) -> ModuleDef {
    let idx = rng.gen_range(0..def.nodes.len());
    let mut new_def = def.clone();
    match &def.nodes[idx] {
        NodeRef::Layer(_) => {
            let fresh = generate_module(registry, config.gen_graph_nodes, config.p_edge_gen, rng)
                .expect("notable list is non-empty during evolution");
            store.extend(fresh.store.clone());
            let fresh_id = fresh.root_id();
            store.insert(fresh_id, fresh.root);
            new_def.nodes[idx] = NodeRef::Module(fresh_id);
        }
        NodeRef::Module(child_id) => {
            let child = store
                .get(child_id)
                .or_else(|| registry.definition(child_id))
                .expect("member trees are closed over their references")
                .clone();
            let new_child = node_mutation(&child, store, registry, config, rng);
            let new_id = canonical_hash(&new_child, store).expect("mutated child stays acyclic");
            store.insert(new_id, new_child);
            new_def.nodes[idx] = NodeRef::Module(new_id);
        }
    }
    new_def
}

/// Edge mutation: uniformly picks this module or one of its module-reference
/// children (recursing on a copy in the child case), then tries up to
/// `EDGE_RETRIES` random ordered endpoint pairs, accepting the first that is
/// absent, non-self, and keeps the graph acyclic. Saturation is a no-op.
pub fn mutate_edge<R: Rng>(tree: &ModuleTree, rng: &mut R) -> ModuleTree {
    let mut store = tree.store.clone();
    let root = edge_mutation(&tree.root, &mut store, rng);
    ModuleTree::new(root, store)
}

fn edge_mutation<R: Rng>(
    def: &ModuleDef,
    store: &mut BTreeMap<ModuleId, ModuleDef>,
    rng: &mut R,
) -> ModuleDef {
    let child_nodes: Vec<usize> = def
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| matches!(n, NodeRef::Module(_)))
        .map(|(i, _)| i)
        .collect();
    let choice = rng.gen_range(0..=child_nodes.len());
    if choice == 0 {
        try_add_edge(def, rng)
    } else {
        let idx = child_nodes[choice - 1];
        let NodeRef::Module(child_id) = def.nodes[idx] else {
            unreachable!()
        };
        let child = store
            .get(&child_id)
            .expect("member trees are closed over their references")
            .clone();
        let new_child = edge_mutation(&child, store, rng);
        let new_id = canonical_hash(&new_child, store).expect("edge insertion keeps acyclicity");
        store.insert(new_id, new_child.clone());
        let mut new_def = def.clone();
        new_def.nodes[idx] = NodeRef::Module(new_id);
        new_def
    }
}

fn try_add_edge<R: Rng>(def: &ModuleDef, rng: &mut R) -> ModuleDef {
    let n = def.nodes.len();
    for _ in 0..EDGE_RETRIES {
        // src drawn from {INPUT} ∪ nodes, dst from nodes ∪ {OUTPUT}.
        let src = match rng.gen_range(0..=n) {
            0 => Endpoint::Input,
            i => Endpoint::Node(i - 1),
        };
        let dst = match rng.gen_range(0..=n) {
            x if x == n => Endpoint::Output,
            i => Endpoint::Node(i),
        };
        if src == dst || def.edges.contains(&(src, dst)) {
            continue;
        }
        if creates_cycle(def, src, dst) {
            continue;
        }
        let mut new_def = def.clone();
        new_def.edges.insert((src, dst));
        return new_def;
    }
    def.clone()
}

/// Adding src→dst creates a cycle iff src is reachable from dst.
fn creates_cycle(def: &ModuleDef, src: Endpoint, dst: Endpoint) -> bool {
    let mut seen = std::collections::BTreeSet::new();
    let mut queue = vec![dst];
    while let Some(ep) = queue.pop() {
        if ep == src {
            return true;
        }
        if !seen.insert(ep) {
            continue;
        }
        for (s, d) in &def.edges {
            if *s == ep {
                queue.push(*d);
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::module_graph::{validate, LayerOp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn registry() -> Registry {
        Registry::initialize(
            &[
                LayerOp::conv("conv1x1_32"),
                LayerOp::conv("conv3x3_32"),
                LayerOp::pool("maxpool3"),
            ],
            0.5,
        )
        .unwrap()
    }

    fn seed_member(reg: &Registry, rng: &mut ChaCha8Rng) -> PopulationMember {
        let tree = generate_module(reg, 2, 0.5, rng).unwrap();
        PopulationMember {
            tree,
            fitness: Some(0.4),
            dirty: false,
            age: 3,
        }
    }

    #[test]
    fn dispatch_follows_selector_ranges() {
        let reg = registry();
        let config = EvolutionConfig::default(); // 0.15 / 0.55
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let member = seed_member(&reg, &mut rng);

        let node_mut = mutate_with_sample(&member, 0.10, &reg, &config, &mut rng);
        assert!(node_mut.dirty);
        assert_ne!(node_mut.tree.root_id(), member.tree.root_id());

        let edge_mut = mutate_with_sample(&member, 0.50, &reg, &config, &mut rng);
        // Either a legal edge was found (changed) or saturation no-op.
        if edge_mut.dirty {
            assert_ne!(edge_mut.tree.root_id(), member.tree.root_id());
        }

        let untouched = mutate_with_sample(&member, 0.90, &reg, &config, &mut rng);
        assert!(!untouched.dirty);
        assert_eq!(untouched.tree, member.tree);
        assert_eq!(untouched.fitness, Some(0.4));
        assert_eq!(untouched.age, 3);
    }

    #[test]
    fn node_mutation_replaces_layer_with_generated_module() {
        let reg = registry();
        let config = EvolutionConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Member whose root is a single seed reference; its leaf is a layer.
        let tree = generate_module(&reg, 1, 0.5, &mut rng).unwrap();
        let mutated = mutate_node(&tree, &reg, &config, &mut rng);
        assert_eq!(validate(&mutated.root), Ok(()));
        // The flattened phenotype must have grown: the leaf layer became a
        // two-node module.
        let before = tree.flatten().unwrap().node_count();
        let after = mutated.flatten().unwrap().node_count();
        assert_eq!(before, 1);
        assert_eq!(after, 2);
    }

    #[test]
    fn mutation_is_copy_on_write() {
        let reg = registry();
        let config = EvolutionConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let member = seed_member(&reg, &mut rng);
        let twin = member.clone();
        let twin_flat = twin.tree.flatten().unwrap();
        for _ in 0..20 {
            let _ = mutate(&member, &reg, &config, &mut rng);
        }
        assert_eq!(twin.tree.flatten().unwrap(), twin_flat);
        assert_eq!(member.tree, twin.tree);
    }

    #[test]
    fn edge_mutation_results_validate() {
        let reg = registry();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..1000 {
            let tree = generate_module(&reg, 1 + i % 5, 0.4, &mut rng).unwrap();
            let mutated = mutate_edge(&tree, &mut rng);
            assert_eq!(validate(&mutated.root), Ok(()));
            assert!(mutated.flatten().unwrap().is_acyclic());
        }
    }

    #[test]
    fn saturated_module_degrades_to_no_op() {
        let reg = registry();
        let config = EvolutionConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // Single node: the only legal edges INPUT->0 and 0->OUTPUT already
        // exist; INPUT->OUTPUT remains, so saturate that too.
        let mut tree = generate_module(&reg, 1, 0.5, &mut rng).unwrap();
        tree.root.edges.insert((Endpoint::Input, Endpoint::Output));
        // Saturate the child seed module the same way.
        let child_id = *tree.store.keys().next().unwrap();
        let child = tree.store.get_mut(&child_id).unwrap();
        child.edges.insert((Endpoint::Input, Endpoint::Output));
        let member = PopulationMember {
            tree,
            fitness: Some(0.4),
            dirty: false,
            age: 0,
        };
        for _ in 0..20 {
            let out = mutate_with_sample(&member, 0.5, &reg, &config, &mut rng);
            assert!(!out.dirty);
            assert_eq!(out.tree, member.tree);
        }
    }

    #[test]
    fn deep_chain_changes_exactly_one_leaf() {
        // Depth-d chain of single-reference modules; node mutation must
        // change exactly one leaf of the flattened phenotype.
        let reg = registry();
        let config = EvolutionConfig {
            gen_graph_nodes: 1,
            ..EvolutionConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut tree = generate_module(&reg, 1, 0.5, &mut rng).unwrap();
        for _ in 0..3 {
            // Wrap the current root in another single-node module.
            let root_id = tree.root_id();
            let mut store = tree.store.clone();
            store.insert(root_id, tree.root.clone());
            let wrapper = ModuleDef::new(
                vec![NodeRef::Module(root_id)],
                [
                    (Endpoint::Input, Endpoint::Node(0)),
                    (Endpoint::Node(0), Endpoint::Output),
                ],
            );
            tree = ModuleTree::new(wrapper, store);
        }
        let before = tree.flatten().unwrap();
        let mutated = mutate_node(&tree, &reg, &config, &mut rng);
        let after = mutated.flatten().unwrap();
        // gen_graph_nodes = 1 keeps the phenotype a single chain, so the
        // node lists stay comparable position by position.
        assert_eq!(before.node_count(), after.node_count());
        let diffs = before
            .nodes
            .iter()
            .zip(after.nodes.iter())
            .filter(|(a, b)| a.label != b.label)
            .count();
        assert!(diffs <= 1, "at most one leaf changes, saw {diffs}");
    }
}
