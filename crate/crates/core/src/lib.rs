//! Multi-query optimization engine.
//!
//! A batch of relational-algebra queries is represented as a single AND-OR
//! DAG with common subexpressions unified, refined into a physical DAG with
//! sort-order and index properties, and then optimized by one of four
//! strategies that decide which intermediate results to materialize:
//!
//! * plain Volcano (no sharing),
//! * Volcano-SH (post-pass over the consolidated best plan),
//! * Volcano-RU (sequence-sensitive reuse, forward and reverse),
//! * a greedy benefit-driven selector with incremental cost update,
//!
//! plus an exhaustive subset oracle that serves as ground truth on small
//! instances.

pub mod catalog;
pub mod cost_model;
pub mod error;
pub mod greedy;
pub mod logical_dag;
pub mod oracle;
pub mod physical_dag;
pub mod query_ir;
pub mod rules;
pub mod testkit;
pub mod volcano;
pub mod volcano_ru;
pub mod volcano_sh;
pub mod workload;

pub use error::{Error, Result};
