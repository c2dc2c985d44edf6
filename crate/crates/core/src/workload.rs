//! Command-line-facing layer: builds the DAG once, runs the requested
//! algorithms over it, and emits machine- and human-readable reports. Also
//! hosts the chain-query scaleup workload generator.

use std::collections::BTreeSet;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::parse_catalog;
use crate::cost_model::best_plan_given;
use crate::error::{Error, Result};
use crate::greedy::{compute_sharability, greedy_select, GreedyOptions};
use crate::logical_dag::build_initial_dag;
use crate::oracle::{exhaustive_optimize, OracleOptions};
use crate::physical_dag::{build_physical_dag, PhysicalDag};
use crate::query_ir::parse_batch;
use crate::rules::{expand, RuleSet};
use crate::volcano::{optimize_volcano, render_plan};
use crate::volcano_ru::volcano_ru_bidirectional;
use crate::volcano_sh::volcano_sh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Volcano,
    Sh,
    Ru,
    Greedy,
    Exhaustive,
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "volcano" => Ok(Algorithm::Volcano),
            "sh" | "volcano-sh" => Ok(Algorithm::Sh),
            "ru" | "volcano-ru" => Ok(Algorithm::Ru),
            "greedy" => Ok(Algorithm::Greedy),
            "exhaustive" | "oracle" => Ok(Algorithm::Exhaustive),
            other => Err(Error::UnknownAlgorithm(other.to_string())),
        }
    }
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Volcano => "volcano",
            Algorithm::Sh => "volcano-sh",
            Algorithm::Ru => "volcano-ru",
            Algorithm::Greedy => "greedy",
            Algorithm::Exhaustive => "exhaustive",
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DagStats {
    pub queries: usize,
    pub logical_equiv_nodes: usize,
    pub logical_op_nodes: usize,
    pub physical_nodes: usize,
    pub physical_ops: usize,
    pub sharable_nodes: usize,
    pub parse_ms: f64,
    pub expand_ms: f64,
    pub physical_build_ms: f64,
}

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct GreedyCounters {
    pub iterations: usize,
    pub candidates: usize,
    pub benefit_recomputations: u64,
    pub benefit_recomputations_per_iteration: Vec<u64>,
    pub cost_propagations: u64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct AlgoReport {
    pub algorithm: Algorithm,
    pub cost_ms: f64,
    pub materialized: Vec<String>,
    pub optimize_wall_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order_won: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub greedy: Option<GreedyCounters>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsets_examined: Option<u64>,
    pub plan: String,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RunReport {
    pub dag: DagStats,
    pub algorithms: Vec<AlgoReport>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("== dag ==\n");
        out.push_str(&format!("queries: {}\n", self.dag.queries));
        out.push_str(&format!(
            "logical-nodes: {} equiv, {} ops\n",
            self.dag.logical_equiv_nodes, self.dag.logical_op_nodes
        ));
        out.push_str(&format!(
            "physical-nodes: {} equiv, {} ops\n",
            self.dag.physical_nodes, self.dag.physical_ops
        ));
        out.push_str(&format!("sharable-nodes: {}\n", self.dag.sharable_nodes));
        out.push_str(&format!(
            "build-ms: parse={:.3} expand={:.3} physical={:.3}\n",
            self.dag.parse_ms, self.dag.expand_ms, self.dag.physical_build_ms
        ));
        for a in &self.algorithms {
            out.push_str(&format!("== {} ==\n", a.algorithm.name()));
            out.push_str(&format!("cost-ms: {:.3}\n", a.cost_ms));
            out.push_str(&format!("optimize-wall-ms: {:.3}\n", a.optimize_wall_ms));
            if a.materialized.is_empty() {
                out.push_str("materialized: (none)\n");
            } else {
                out.push_str("materialized:\n");
                for m in &a.materialized {
                    out.push_str(&format!("  {m}\n"));
                }
            }
            if let Some(order) = &a.order_won {
                out.push_str(&format!("order-won: {order}\n"));
            }
            if let Some(g) = &a.greedy {
                out.push_str(&format!(
                    "greedy: iterations={} candidates={} benefit-recomputations={} cost-propagations={}\n",
                    g.iterations, g.candidates, g.benefit_recomputations, g.cost_propagations
                ));
            }
            if let Some(n) = a.subsets_examined {
                out.push_str(&format!("subsets-examined: {n}\n"));
            }
            out.push_str("plan:\n");
            for line in a.plan.lines() {
                out.push_str(&format!("  {line}\n"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub trace: bool,
    pub validate_incremental: bool,
    pub oracle_max_nodes: Option<usize>,
}

/// Parses the inputs and builds the expanded physical DAG once.
pub fn build_dag(catalog_text: &str, queries_text: &str) -> Result<(PhysicalDag, DagStats)> {
    let t0 = Instant::now();
    let catalog = parse_catalog(catalog_text)?;
    let batch = parse_batch(queries_text, &catalog)?;
    let parse_ms = t0.elapsed().as_secs_f64() * 1e3;

    let t1 = Instant::now();
    let mut dag = build_initial_dag(&batch, &catalog)?;
    expand(&mut dag, &RuleSet::default())?;
    dag.apply_nomaterialize(&batch.nomaterialize);
    let expand_ms = t1.elapsed().as_secs_f64() * 1e3;

    let t2 = Instant::now();
    let logical_equiv_nodes = dag.equiv_count();
    let logical_op_nodes = dag.op_count();
    let pd = build_physical_dag(dag)?;
    let physical_build_ms = t2.elapsed().as_secs_f64() * 1e3;

    let stats = DagStats {
        queries: batch.queries.len(),
        logical_equiv_nodes,
        logical_op_nodes,
        physical_nodes: pd.node_count(),
        physical_ops: pd.op_count(),
        sharable_nodes: 0,
        parse_ms,
        expand_ms,
        physical_build_ms,
    };
    Ok((pd, stats))
}

fn describe_set(pd: &PhysicalDag, set: &BTreeSet<crate::physical_dag::PhysEquivId>) -> Vec<String> {
    set.iter().map(|e| pd.describe_node(*e)).collect()
}

/// Runs the requested algorithms over one DAG and assembles the report.
pub fn run(
    catalog_text: &str,
    queries_text: &str,
    algorithms: &[Algorithm],
    opts: &RunOptions,
) -> Result<RunReport> {
    let (pd, mut dag_stats) = build_dag(catalog_text, queries_text)?;
    let sharability = compute_sharability(&pd.logical);
    dag_stats.sharable_nodes = sharability.sharable.len();

    let mut reports = Vec::new();
    for &algo in algorithms {
        let t = Instant::now();
        let report = match algo {
            Algorithm::Volcano => {
                let (plan, cost, state) = optimize_volcano(&pd)?;
                let wall = t.elapsed().as_secs_f64() * 1e3;
                AlgoReport {
                    algorithm: algo,
                    cost_ms: cost,
                    materialized: Vec::new(),
                    optimize_wall_ms: wall,
                    order_won: None,
                    greedy: None,
                    subsets_examined: None,
                    plan: render_plan(&pd, &plan, &state),
                }
            }
            Algorithm::Sh => {
                let (plan, _, state) = optimize_volcano(&pd)?;
                let sh = volcano_sh(&pd, &plan, &state)?;
                let wall = t.elapsed().as_secs_f64() * 1e3;
                let display_state = best_plan_given(&pd, &sh.mat);
                AlgoReport {
                    algorithm: algo,
                    cost_ms: sh.cost,
                    materialized: describe_set(&pd, &sh.mat),
                    optimize_wall_ms: wall,
                    order_won: None,
                    greedy: None,
                    subsets_examined: None,
                    plan: render_plan(&pd, &sh.plan, &display_state),
                }
            }
            Algorithm::Ru => {
                let base = best_plan_given(&pd, &BTreeSet::new());
                let ru = volcano_ru_bidirectional(&pd, &base)?;
                let wall = t.elapsed().as_secs_f64() * 1e3;
                let display_state = best_plan_given(&pd, &ru.mat);
                AlgoReport {
                    algorithm: algo,
                    cost_ms: ru.cost,
                    materialized: describe_set(&pd, &ru.mat),
                    optimize_wall_ms: wall,
                    order_won: Some(format!(
                        "{:?} (forward {:.3} ms, reverse {:.3} ms)",
                        ru.order, ru.forward_cost, ru.reverse_cost
                    )),
                    greedy: None,
                    subsets_examined: None,
                    plan: render_plan(&pd, &ru.plan, &display_state),
                }
            }
            Algorithm::Greedy => {
                // Sharability is part of the greedy overhead; time it here.
                let sharability = compute_sharability(&pd.logical);
                let res = greedy_select(
                    &pd,
                    &sharability,
                    &GreedyOptions {
                        exhaustive_benefits: false,
                        validate_incremental: opts.validate_incremental,
                        trace: opts.trace,
                    },
                )?;
                let wall = t.elapsed().as_secs_f64() * 1e3;
                let display_state = best_plan_given(&pd, &res.x);
                if opts.trace {
                    for line in &res.trace_lines {
                        eprintln!("greedy: {line}");
                    }
                }
                AlgoReport {
                    algorithm: algo,
                    cost_ms: res.cost,
                    materialized: describe_set(&pd, &res.x),
                    optimize_wall_ms: wall,
                    order_won: None,
                    greedy: Some(GreedyCounters {
                        iterations: res.iterations,
                        candidates: res.candidate_count,
                        benefit_recomputations: res.total_benefit_recomputations,
                        benefit_recomputations_per_iteration: res
                            .benefit_recomputations_per_iteration
                            .clone(),
                        cost_propagations: res.cost_propagations,
                    }),
                    subsets_examined: None,
                    plan: render_plan(&pd, &res.plan, &display_state),
                }
            }
            Algorithm::Exhaustive => {
                let sharability = compute_sharability(&pd.logical);
                let res = exhaustive_optimize(
                    &pd,
                    &sharability,
                    &OracleOptions {
                        max_nodes: opts.oracle_max_nodes,
                        validate_incremental: opts.validate_incremental,
                    },
                )?;
                let wall = t.elapsed().as_secs_f64() * 1e3;
                let state = best_plan_given(&pd, &res.s_opt);
                let plan = crate::volcano::extract_plan(&pd, &state)?;
                AlgoReport {
                    algorithm: algo,
                    cost_ms: res.opt_cost,
                    materialized: describe_set(&pd, &res.s_opt),
                    optimize_wall_ms: wall,
                    order_won: None,
                    greedy: None,
                    subsets_examined: Some(res.subsets_examined),
                    plan: render_plan(&pd, &plan, &state),
                }
            }
        };
        reports.push(report);
    }
    Ok(RunReport {
        dag: dag_stats,
        algorithms: reports,
    })
}

// ---------------------------------------------------------------------------
// Scaleup workload generator
// ---------------------------------------------------------------------------

/// Composite chain-query workload: `CQ_i` uses relations `PSP_1..PSP_{4i+2}`
/// (tuple counts drawn uniformly from [20000, 40000], 25 tuples per block,
/// no indexes) and component queries `SQ_1..SQ_{4i-2}`, where `SQ_j` is a
/// pair of five-relation chain queries joined on `PSP_m.SP = PSP_{m+1}.P`
/// that differ only in the selection constant on `PSP_j.NUM`.
pub fn generate_scaleup(i: u32, seed: u64) -> Result<(String, String)> {
    if !(1..=5).contains(&i) {
        return Err(Error::Internal(format!(
            "scaleup index {i} outside 1..=5"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nrel = 4 * i as usize + 2;
    let mut catalog = String::new();
    // 512 KB of operator memory: the chain joins then run multi-pass, which
    // is the regime where sharing intermediate results pays off.
    catalog.push_str("costparams seek=10 read=2 write=4 cpu=0.2 block=4096 memblocks=128\n");
    for r in 1..=nrel {
        let tuples: u64 = rng.random_range(20_000..=40_000);
        catalog.push_str(&format!("relation PSP{r} tuples={tuples} perblock=25\n"));
        catalog.push_str(&format!("column P distinct={tuples}\n"));
        catalog.push_str(&format!("column SP distinct={tuples}\n"));
        catalog.push_str("column NUM distinct=100\n");
    }
    let mut queries = String::new();
    let components = 4 * i as usize - 2;
    for j in 1..=components {
        let a: i64 = rng.random_range(1..=100);
        let b: i64 = {
            let mut b = rng.random_range(1..=100);
            while b == a {
                b = rng.random_range(1..=100);
            }
            b
        };
        for threshold in [a, b] {
            let mut expr = format!("(select (>= PSP{j}.NUM {threshold}) (scan PSP{j}))");
            for m in j..j + 4 {
                expr = format!(
                    "(join (= PSP{m}.SP PSP{next}.P) {expr} (scan PSP{next}))",
                    next = m + 1
                );
            }
            queries.push_str(&format!("{expr};\n"));
        }
    }
    Ok((catalog, queries))
}

/// Join-atom and selection-atom counts over a batch text (shape checks for
/// the generated workloads).
pub fn predicate_counts(catalog_text: &str, queries_text: &str) -> Result<(usize, usize)> {
    use crate::query_ir::LogicalExpr;
    let catalog = parse_catalog(catalog_text)?;
    let batch = parse_batch(queries_text, &catalog)?;
    fn walk(e: &LogicalExpr, joins: &mut usize, selects: &mut usize) {
        match e {
            LogicalExpr::Scan(_) => {}
            LogicalExpr::Select(p, input) => {
                *selects += p.atoms().len();
                walk(input, joins, selects);
            }
            LogicalExpr::Project(_, input) => walk(input, joins, selects),
            LogicalExpr::Join(p, l, r) => {
                *joins += p.atoms().len();
                walk(l, joins, selects);
                walk(r, joins, selects);
            }
            LogicalExpr::Aggregate { input, .. } => walk(input, joins, selects),
        }
    }
    let mut joins = 0;
    let mut selects = 0;
    for (q, _) in &batch.queries {
        walk(q, &mut joins, &mut selects);
    }
    Ok((joins, selects))
}
