//! Canonical, content-derived module identity.
//!
//! Children are hashed bottom-up; a module's digest covers its node keys
//! (layer label or child digest) and its edge set under a canonical node
//! order, so structurally identical modules hash equal regardless of how
//! their node lists happen to be numbered.

use std::collections::{BTreeSet, HashMap};

use sha2::{Digest, Sha256};

use super::{Endpoint, FlattenError, ModuleDef, ModuleId, ModuleResolver, NodeRef};

/// Computes the canonical digest of a module. Errors mirror `flatten`:
/// unresolved or recursive module references are rejected.
pub fn canonical_hash(
    module: &ModuleDef,
    resolver: &impl ModuleResolver,
) -> Result<ModuleId, FlattenError> {
    let mut memo = HashMap::new();
    let mut stack = Vec::new();
    hash_inner(module, resolver, &mut memo, &mut stack)
}

fn hash_inner(
    module: &ModuleDef,
    resolver: &impl ModuleResolver,
    memo: &mut HashMap<ModuleId, ModuleId>,
    stack: &mut Vec<ModuleId>,
) -> Result<ModuleId, FlattenError> {
    // Node keys: layer label or recursively computed child digest.
    let mut keys: Vec<String> = Vec::with_capacity(module.nodes.len());
    for node in &module.nodes {
        match node {
            NodeRef::Layer(op) => keys.push(format!("L:{}", op.label)),
            NodeRef::Module(id) => {
                let digest = if let Some(d) = memo.get(id) {
                    *d
                } else {
                    if stack.contains(id) {
                        return Err(FlattenError::RecursiveReference(*id));
                    }
                    let child = resolver
                        .resolve(id)
                        .ok_or(FlattenError::UnresolvedReference(*id))?;
                    stack.push(*id);
                    let d = hash_inner(child, resolver, memo, stack)?;
                    stack.pop();
                    memo.insert(*id, d);
                    d
                };
                keys.push(format!("M:{}", digest.to_hex()));
            }
        }
    }

    let order = canonical_order(module, &keys);
    let position: HashMap<usize, usize> = order.iter().enumerate().map(|(p, &i)| (i, p)).collect();

    let mut hasher = Sha256::new();
    hasher.update(b"module.v1\n");
    for &i in &order {
        hasher.update(keys[i].as_bytes());
        hasher.update(b"\n");
    }
    hasher.update(b"edges\n");
    let mut edge_lines: Vec<String> = module
        .edges
        .iter()
        .map(|(s, d)| format!("{}>{}", endpoint_token(*s, &position), endpoint_token(*d, &position)))
        .collect();
    edge_lines.sort();
    for line in edge_lines {
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
    }
    Ok(ModuleId::from_bytes(hasher.finalize().into()))
}

fn endpoint_token(ep: Endpoint, position: &HashMap<usize, usize>) -> String {
    match ep {
        Endpoint::Input => "I".to_string(),
        Endpoint::Output => "O".to_string(),
        Endpoint::Node(i) => position[&i].to_string(),
    }
}

/// Topological order over computational nodes with ties broken by node key
/// and then by a direction-aware refinement signature, so the order depends
/// only on structure, not on input numbering.
fn canonical_order(module: &ModuleDef, keys: &[String]) -> Vec<usize> {
    let n = module.nodes.len();
    let sigs = refinement_signatures(module, keys);

    let mut indeg = vec![0usize; n];
    for (s, d) in &module.edges {
        if let (Endpoint::Node(_), Endpoint::Node(j)) = (s, d) {
            indeg[*j] += 1;
        }
    }
    let mut ready: BTreeSet<(&String, &[u8; 32], usize)> = (0..n)
        .filter(|&i| indeg[i] == 0)
        .map(|i| (&keys[i], &sigs[i], i))
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(entry) = ready.iter().next().copied() {
        ready.remove(&entry);
        let i = entry.2;
        order.push(i);
        for (s, d) in &module.edges {
            if let (Endpoint::Node(si), Endpoint::Node(j)) = (s, d) {
                if *si == i {
                    indeg[*j] -= 1;
                    if indeg[*j] == 0 {
                        ready.insert((&keys[*j], &sigs[*j], *j));
                    }
                }
            }
        }
    }
    debug_assert_eq!(order.len(), n, "canonical_order requires an acyclic module");
    order
}

/// Weisfeiler-Leman style signatures over {INPUT, nodes, OUTPUT}, refined a
/// fixed number of rounds with sorted predecessor and successor signatures.
fn refinement_signatures(module: &ModuleDef, keys: &[String]) -> Vec<[u8; 32]> {
    let n = module.nodes.len();
    let idx = |ep: Endpoint| -> usize {
        match ep {
            Endpoint::Input => n,
            Endpoint::Output => n + 1,
            Endpoint::Node(i) => i,
        }
    };
    let mut sigs: Vec<[u8; 32]> = (0..n + 2)
        .map(|i| {
            let seed = match i {
                x if x == n => "INPUT".to_string(),
                x if x == n + 1 => "OUTPUT".to_string(),
                x => keys[x].clone(),
            };
            Sha256::digest(seed.as_bytes()).into()
        })
        .collect();
    for _ in 0..3 {
        let mut next = Vec::with_capacity(n + 2);
        for i in 0..n + 2 {
            let mut preds: Vec<&[u8; 32]> = Vec::new();
            let mut succs: Vec<&[u8; 32]> = Vec::new();
            for (s, d) in &module.edges {
                if idx(*d) == i {
                    preds.push(&sigs[idx(*s)]);
                }
                if idx(*s) == i {
                    succs.push(&sigs[idx(*d)]);
                }
            }
            preds.sort();
            succs.sort();
            let mut hasher = Sha256::new();
            hasher.update(sigs[i]);
            hasher.update(b"p");
            for p in preds {
                hasher.update(p);
            }
            hasher.update(b"s");
            for s in succs {
                hasher.update(s);
            }
            next.push(hasher.finalize().into());
        }
        sigs = next;
    }
    sigs.truncate(n);
    sigs
}
