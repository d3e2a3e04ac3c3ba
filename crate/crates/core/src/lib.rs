//! Hierarchical entity tagging for radiology report graphs: the label
//! taxonomy, the annotation schema, corpus tooling, two-phase training and
//! strict evaluation.

pub mod checks;
pub mod cli;
pub mod corpus;
pub mod evaluator;
pub mod schema;
pub mod synthetic;
pub mod taxonomy;
pub mod trainer;
