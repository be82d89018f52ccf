//! JSON and Graphviz DOT export of phenotypes and module hierarchies.

use std::collections::BTreeMap;

use serde_json::json;

use super::{Endpoint, FlatGraph, ModuleDef, ModuleId, NodeRef};

fn endpoint_id(ep: Endpoint) -> String {
    match ep {
        Endpoint::Input => "IN".to_string(),
        Endpoint::Output => "OUT".to_string(),
        Endpoint::Node(i) => format!("n{i}"),
    }
}

/// `{nodes:[{id, op}], edges:[[src, dst]]}` with nodes in canonical
/// topological order (the order `FlatGraph` already carries).
pub fn flat_graph_to_json(graph: &FlatGraph) -> serde_json::Value {
    let nodes: Vec<_> = graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, op)| json!({"id": format!("n{i}"), "op": op.label}))
        .collect();
    let edges: Vec<_> = graph
        .edges
        .iter()
        .map(|(s, d)| json!([endpoint_id(*s), endpoint_id(*d)]))
        .collect();
    json!({"nodes": nodes, "edges": edges})
}

pub fn flat_graph_to_dot(graph: &FlatGraph) -> String {
    let mut out = String::from("digraph phenotype {\n  rankdir=TB;\n");
    out.push_str("  IN [shape=circle];\n  OUT [shape=circle];\n");
    for (i, op) in graph.nodes.iter().enumerate() {
        out.push_str(&format!("  n{i} [shape=box, label=\"{}\"];\n", op.label));
    }
    for (s, d) in &graph.edges {
        out.push_str(&format!("  {} -> {};\n", endpoint_id(*s), endpoint_id(*d)));
    }
    out.push_str("}\n");
    out
}

fn node_label(node: &NodeRef) -> String {
    match node {
        NodeRef::Layer(op) => op.label.clone(),
        NodeRef::Module(id) => format!("mod:{id}"),
    }
}

/// One entry per distinct module in the hierarchy, keyed by id, root first in
/// the `root` field.
pub fn hierarchy_to_json(root_id: ModuleId, modules: &BTreeMap<ModuleId, ModuleDef>) -> serde_json::Value {
    let entries: Vec<_> = modules
        .iter()
        .map(|(id, def)| json!({"id": id.to_hex(), "def": serde_json::to_value(def).unwrap()}))
        .collect();
    json!({"root": root_id.to_hex(), "modules": entries})
}

/// One cluster subgraph per distinct module id.
pub fn hierarchy_to_dot(root_id: ModuleId, modules: &BTreeMap<ModuleId, ModuleDef>) -> String {
    let mut out = String::from("digraph hierarchy {\n  rankdir=TB;\n");
    for (ci, (id, def)) in modules.iter().enumerate() {
        let tag = if *id == root_id { " (root)" } else { "" };
        out.push_str(&format!(
            "  subgraph cluster_{ci} {{\n    label=\"{id}{tag}\";\n"
        ));
        out.push_str(&format!(
            "    m{ci}_in [shape=circle, label=\"IN\"];\n    m{ci}_out [shape=circle, label=\"OUT\"];\n"
        ));
        for (ni, node) in def.nodes.iter().enumerate() {
            out.push_str(&format!(
                "    m{ci}_n{ni} [shape=box, label=\"{}\"];\n",
                node_label(node)
            ));
        }
        for (s, d) in &def.edges {
            let name = |ep: Endpoint| match ep {
                Endpoint::Input => format!("m{ci}_in"),
                Endpoint::Output => format!("m{ci}_out"),
                Endpoint::Node(i) => format!("m{ci}_n{i}"),
            };
            out.push_str(&format!("    {} -> {};\n", name(*s), name(*d)));
        }
        out.push_str("  }\n");
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::module_graph::{canonical_hash, flatten, LayerOp, NoModules};

    #[test]
    fn single_node_dot_has_three_vertices() {
        let m = ModuleDef::seed(LayerOp::conv("conv3x3"));
        let flat = flatten(&m, &NoModules).unwrap();
        let dot = flat_graph_to_dot(&flat);
        assert!(dot.contains("IN [shape=circle]"));
        assert!(dot.contains("OUT [shape=circle]"));
        assert!(dot.contains("n0 [shape=box, label=\"conv3x3\"]"));
        assert!(dot.contains("IN -> n0;"));
        assert!(dot.contains("n0 -> OUT;"));
    }

    #[test]
    fn flat_json_shape() {
        let m = ModuleDef::seed(LayerOp::conv("conv3x3"));
        let flat = flatten(&m, &NoModules).unwrap();
        let v = flat_graph_to_json(&flat);
        assert_eq!(v["nodes"][0]["op"], "conv3x3");
        assert_eq!(v["edges"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn hierarchy_json_counts_modules() {
        let leaf = ModuleDef::seed(LayerOp::conv("conv3x3"));
        let leaf_id = canonical_hash(&leaf, &NoModules).unwrap();
        let mut store = BTreeMap::new();
        store.insert(leaf_id, leaf);
        let v = hierarchy_to_json(leaf_id, &store);
        assert_eq!(v["modules"].as_array().unwrap().len(), 1);
        assert_eq!(v["root"], leaf_id.to_hex());
    }
}
