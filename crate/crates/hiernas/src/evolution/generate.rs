//! Fitness-weighted generation of new modules.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::ModuleTree;
use crate::module_graph::{Endpoint, ModuleDef, ModuleId, NodeRef};
use crate::registry::{Registry, RegistryError};

/// Builds a new module: samples `n_nodes` notable modules weighted by
/// average fitness, wires them into a random DAG with edge density
/// `p_edge_gen`, then repairs connectivity so the result always validates.
/// The returned tree carries copies of every referenced definition.
pub fn generate_module<R: Rng>(
    registry: &Registry,
    n_nodes: usize,
    p_edge_gen: f64,
    rng: &mut R,
) -> Result<ModuleTree, RegistryError> {
    assert!(n_nodes >= 1);
    let sampled = registry.sample_notables(n_nodes, rng)?;

    // Random topological order, then forward edges sampled independently.
    let mut order: Vec<usize> = (0..n_nodes).collect();
    order.shuffle(rng);
    let mut rank = vec![0usize; n_nodes];
    for (pos, &node) in order.iter().enumerate() {
        rank[node] = pos;
    }
    let mut edges = Vec::new();
    for i in 0..n_nodes {
        for j in 0..n_nodes {
            if rank[i] < rank[j] && rng.gen::<f64>() < p_edge_gen {
                edges.push((Endpoint::Node(i), Endpoint::Node(j)));
            }
        }
    }
    // Repair: sources hang off INPUT, sinks feed OUTPUT.
    for i in 0..n_nodes {
        let ep = Endpoint::Node(i);
        if !edges.iter().any(|(_, d)| *d == ep) {
            edges.push((Endpoint::Input, ep));
        }
        if !edges.iter().any(|(s, _)| *s == ep) {
            edges.push((ep, Endpoint::Output));
        }
    }

    let nodes: Vec<NodeRef> = sampled.iter().map(|id| NodeRef::Module(*id)).collect();
    let root = ModuleDef::new(nodes, edges);

    let mut store = BTreeMap::new();
    let mut queue: Vec<ModuleId> = sampled;
    while let Some(id) = queue.pop() {
        if store.contains_key(&id) {
            continue;
        }
        let def = registry
            .definition(&id)
            .expect("sampled ids are backed by the module store")
            .clone();
        queue.extend(def.module_refs());
        store.insert(id, def);
    }
    Ok(ModuleTree::new(root, store))
}
