//! Error type shared by all engine modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("catalog parse error at line {line}: {msg}")]
    CatalogParse { line: usize, msg: String },

    #[error("catalog invariant violated for relation `{relation}`, field `{field}`: {msg}")]
    CatalogInvariant {
        relation: String,
        field: String,
        msg: String,
    },

    #[error("duplicate relation `{0}` in catalog")]
    DuplicateRelation(String),

    #[error("query syntax error at byte {pos}: {msg}")]
    QuerySyntax { pos: usize, msg: String },

    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("join predicate is not an equi-join: {0}")]
    NonEquiJoin(String),

    #[error("expansion budget of {budget} equivalence nodes exceeded")]
    ExpansionBudget { budget: usize },

    #[error("cycle detected in DAG: {0}")]
    CycleDetected(String),

    #[error("unification rejected: {0}")]
    BadUnification(String),

    #[error("exhaustive search refused: {sharable} sharable nodes exceeds limit of {max}")]
    OracleTooLarge { sharable: usize, max: usize },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("unknown algorithm `{0}` (expected volcano, sh, ru, greedy or exhaustive)")]
    UnknownAlgorithm(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
