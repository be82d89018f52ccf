//! Hierarchical evolutionary neural architecture search.
//!
//! Genotypes are recursive module graphs; a three-list memory (notable,
//! candidate, banned) curates sub-structures across generations; pluggable
//! evaluators score phenotypes so the search dynamics run at desk scale.

pub mod evaluation;
pub mod evolution;
pub mod module_graph;
pub mod registry;
pub mod runner;
