//! Recursive expansion of module hierarchies into layer-only phenotypes.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use super::{Endpoint, FlatGraph, LayerOp, ModuleDef, ModuleId, ModuleResolver, NodeRef};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FlattenError {
    #[error("no definition for referenced module {0}")]
    UnresolvedReference(ModuleId),
    #[error("module {0} transitively references itself")]
    RecursiveReference(ModuleId),
}

/// Working graph during expansion: layer nodes plus wire nodes standing in
/// for module terminals. Wires are contracted away before output.
struct PortGraph {
    layers: Vec<Option<LayerOp>>, // None = wire
    edges: BTreeSet<(usize, usize)>,
    input: usize,
    output: usize,
}

impl PortGraph {
    fn add_wire(&mut self) -> usize {
        self.layers.push(None);
        self.layers.len() - 1
    }

    fn add_layer(&mut self, op: LayerOp) -> usize {
        self.layers.push(Some(op));
        self.layers.len() - 1
    }
}

/// Expands every module reference into an independent copy of the referenced
/// module's graph. Child INPUT/OUTPUT terminals become wiring; the result
/// contains only layer nodes between the top-level terminals.
pub fn flatten(module: &ModuleDef, resolver: &impl ModuleResolver) -> Result<FlatGraph, FlattenError> {
    let mut graph = PortGraph {
        layers: Vec::new(),
        edges: BTreeSet::new(),
        input: 0,
        output: 0,
    };
    graph.input = graph.add_wire();
    graph.output = graph.add_wire();
    let (input, output) = (graph.input, graph.output);
    let mut stack = Vec::new();
    expand_into(module, resolver, &mut graph, input, output, &mut stack)?;
    Ok(contract_wires(graph))
}

fn expand_into(
    module: &ModuleDef,
    resolver: &impl ModuleResolver,
    graph: &mut PortGraph,
    in_port: usize,
    out_port: usize,
    stack: &mut Vec<ModuleId>,
) -> Result<(), FlattenError> {
    // Per-node (entry, exit) ports inside the working graph.
    let mut ports: Vec<(usize, usize)> = Vec::with_capacity(module.nodes.len());
    for node in &module.nodes {
        match node {
            NodeRef::Layer(op) => {
                let v = graph.add_layer(op.clone());
                ports.push((v, v));
            }
            NodeRef::Module(id) => {
                if stack.contains(id) {
                    return Err(FlattenError::RecursiveReference(*id));
                }
                let child = resolver
                    .resolve(id)
                    .ok_or(FlattenError::UnresolvedReference(*id))?;
                let child_in = graph.add_wire();
                let child_out = graph.add_wire();
                stack.push(*id);
                expand_into(child, resolver, graph, child_in, child_out, stack)?;
                stack.pop();
                ports.push((child_in, child_out));
            }
        }
    }
    for (src, dst) in &module.edges {
        let from = match src {
            Endpoint::Input => in_port,
            Endpoint::Node(i) => ports[*i].1,
            Endpoint::Output => unreachable!("validated module has no edge out of OUTPUT"),
        };
        let to = match dst {
            Endpoint::Input => unreachable!("validated module has no edge into INPUT"),
            Endpoint::Node(i) => ports[*i].0,
            Endpoint::Output => out_port,
        };
        graph.edges.insert((from, to));
    }
    Ok(())
}

/// Removes internal wire nodes by splicing each wire's predecessors onto its
/// successors, then renumbers layer nodes into a canonical topological order.
fn contract_wires(graph: PortGraph) -> FlatGraph {
    let PortGraph {
        layers,
        mut edges,
        input,
        output,
    } = graph;
    for v in 0..layers.len() {
        if layers[v].is_some() || v == input || v == output {
            continue;
        }
        let preds: Vec<usize> = edges.iter().filter(|(_, d)| *d == v).map(|(s, _)| *s).collect();
        let succs: Vec<usize> = edges.iter().filter(|(s, _)| *s == v).map(|(_, d)| *d).collect();
        edges.retain(|(s, d)| *s != v && *d != v);
        for &p in &preds {
            for &s in &succs {
                edges.insert((p, s));
            }
        }
    }

    // Canonical topological order of the surviving layer nodes: ready set
    // sorted by (label, creation index).
    let alive: Vec<usize> = (0..layers.len())
        .filter(|&v| layers[v].is_some() || v == input || v == output)
        .collect();
    let alive_set: HashSet<usize> = alive.iter().copied().collect();
    debug_assert!(edges
        .iter()
        .all(|(s, d)| alive_set.contains(s) && alive_set.contains(d)));

    let mut indeg: BTreeMap<usize, usize> = alive.iter().map(|&v| (v, 0)).collect();
    for (_, d) in &edges {
        *indeg.get_mut(d).unwrap() += 1;
    }
    let key = |v: usize| -> (u8, String, usize) {
        if v == input {
            (0, String::new(), v)
        } else if v == output {
            (2, String::new(), v)
        } else {
            (1, layers[v].as_ref().unwrap().label.clone(), v)
        }
    };
    let mut ready: BTreeSet<(u8, String, usize)> = indeg
        .iter()
        .filter(|(_, deg)| **deg == 0)
        .map(|(&v, _)| key(v))
        .collect();
    let mut position: BTreeMap<usize, Endpoint> = BTreeMap::new();
    let mut nodes: Vec<LayerOp> = Vec::new();
    while let Some(k) = ready.iter().next().cloned() {
        ready.remove(&k);
        let v = k.2;
        let ep = if v == input {
            Endpoint::Input
        } else if v == output {
            Endpoint::Output
        } else {
            nodes.push(layers[v].clone().unwrap());
            Endpoint::Node(nodes.len() - 1)
        };
        position.insert(v, ep);
        for (s, d) in &edges {
            if *s == v {
                let deg = indeg.get_mut(d).unwrap();
                *deg -= 1;
                if *deg == 0 {
                    ready.insert(key(*d));
                }
            }
        }
    }

    let flat_edges: BTreeSet<(Endpoint, Endpoint)> = edges
        .iter()
        .map(|(s, d)| (position[s], position[d]))
        .collect();
    FlatGraph {
        nodes,
        edges: flat_edges,
    }
}
