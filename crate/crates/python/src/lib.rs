//! Python extension module exposing the optimizer: catalog and batch
//! parsing, the full multi-algorithm run with a JSON report, and the
//! scaleup workload generator.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use mqo_core::workload::{self, Algorithm, RunOptions};

fn err(e: mqo_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Relation statistics and cost-model constants.
#[pyclass(skip_from_py_object)]
struct Catalog {
    inner: mqo_core::catalog::Catalog,
}

#[pymethods]
impl Catalog {
    /// Parses the line-oriented catalog format.
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        let inner = mqo_core::catalog::parse_catalog(text).map_err(err)?;
        Ok(Catalog { inner })
    }

    fn relation_names(&self) -> Vec<String> {
        self.inner.relations.keys().cloned().collect()
    }

    /// Number of blocks a relation occupies.
    fn blocks(&self, relation: &str) -> PyResult<u64> {
        Ok(self.inner.relation(relation).map_err(err)?.blocks())
    }

    fn __len__(&self) -> usize {
        self.inner.relations.len()
    }

    fn __repr__(&self) -> String {
        format!("Catalog({} relations)", self.inner.relations.len())
    }
}

/// A parsed, schema-checked query batch.
#[pyclass]
struct QueryBatch {
    inner: mqo_core::query_ir::QueryBatch,
}

#[pymethods]
impl QueryBatch {
    #[staticmethod]
    fn parse(text: &str, catalog: &Catalog) -> PyResult<Self> {
        let inner = mqo_core::query_ir::parse_batch(text, &catalog.inner).map_err(err)?;
        Ok(QueryBatch { inner })
    }

    fn weights(&self) -> Vec<u64> {
        self.inner.queries.iter().map(|(_, w)| *w).collect()
    }

    /// Renders the batch back to the query-file format.
    fn render(&self) -> String {
        self.inner.render()
    }

    fn __len__(&self) -> usize {
        self.inner.queries.len()
    }

    fn __repr__(&self) -> String {
        format!("QueryBatch({} queries)", self.inner.queries.len())
    }
}

/// Builds the shared DAG once, runs the requested algorithms
/// (volcano, sh, ru, greedy, exhaustive) and returns the report as a JSON
/// string.
#[pyfunction]
#[pyo3(signature = (catalog_text, queries_text, algorithms, trace=false))]
fn run(
    catalog_text: &str,
    queries_text: &str,
    algorithms: Vec<String>,
    trace: bool,
) -> PyResult<String> {
    let algorithms: Vec<Algorithm> = algorithms
        .iter()
        .map(|s| s.parse().map_err(err))
        .collect::<PyResult<_>>()?;
    let report = workload::run(
        catalog_text,
        queries_text,
        &algorithms,
        &RunOptions {
            trace,
            ..RunOptions::default()
        },
    )
    .map_err(err)?;
    Ok(report.to_json())
}

/// Generates the scaleup workload CQ_i; returns (catalog_text, queries_text).
#[pyfunction]
fn generate_scaleup(i: u32, seed: u64) -> PyResult<(String, String)> {
    workload::generate_scaleup(i, seed).map_err(err)
}

/// Join-atom and selection-atom counts of a batch (shape checks).
#[pyfunction]
fn predicate_counts(catalog_text: &str, queries_text: &str) -> PyResult<(usize, usize)> {
    workload::predicate_counts(catalog_text, queries_text).map_err(err)
}

#[pymodule]
fn mqo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Catalog>()?;
    m.add_class::<QueryBatch>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scaleup, m)?)?;
    m.add_function(wrap_pyfunction!(predicate_counts, m)?)?;
    Ok(())
}
