//! Exhaustive subset-enumeration optimizer over the sharable candidates:
//! the ground truth for small instances. Subsets are visited in Gray-code
//! order so consecutive sets differ by one node and the incremental cost
//! engine carries all the work.

use std::collections::BTreeSet;

use crate::cost_model::{best_plan_given, Cost, PlanState};
use crate::error::{Error, Result};
use crate::greedy::{candidates, update_cost, SharabilityInfo};
use crate::physical_dag::{PhysEquivId, PhysicalDag};

pub const DEFAULT_MAX_NODES: usize = 14;

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub s_opt: BTreeSet<PhysEquivId>,
    pub opt_cost: Cost,
    pub subsets_examined: u64,
}

#[derive(Debug, Clone, Default)]
pub struct OracleOptions {
    pub max_nodes: Option<usize>,
    pub validate_incremental: bool,
}

/// Enumerates every subset of the candidate set and returns the cheapest.
/// Refuses when the candidate set exceeds the limit.
pub fn exhaustive_optimize(
    pd: &PhysicalDag,
    sharability: &SharabilityInfo,
    opts: &OracleOptions,
) -> Result<OracleResult> {
    let max_nodes = opts.max_nodes.unwrap_or(DEFAULT_MAX_NODES);
    let mut state = best_plan_given(pd, &BTreeSet::new());
    let y = candidates(pd, sharability, &state);
    if y.len() > max_nodes {
        return Err(Error::OracleTooLarge {
            sharable: y.len(),
            max: max_nodes,
        });
    }
    let k = y.len() as u32;
    let mut best_set: BTreeSet<PhysEquivId> = BTreeSet::new();
    let mut best_cost = state.total;
    let mut current: BTreeSet<PhysEquivId> = BTreeSet::new();
    for i in 1..(1u64 << k) {
        let bit = i.trailing_zeros() as usize;
        let node = y[bit];
        if !current.remove(&node) {
            current.insert(node);
        }
        update_cost(pd, &mut state, &current);
        if opts.validate_incremental {
            let fresh = best_plan_given(pd, &current);
            if !state.annotations_equal(&PlanState {
                propagations: state.propagations,
                ..fresh
            }) {
                return Err(Error::Internal(
                    "oracle incremental state diverged from full recomputation".into(),
                ));
            }
        }
        if state.total < best_cost {
            best_cost = state.total;
            best_set = current.clone();
        }
    }
    Ok(OracleResult {
        s_opt: best_set,
        opt_cost: best_cost,
        subsets_examined: 1u64 << k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::parse_catalog;
    use crate::greedy::compute_sharability;
    use crate::logical_dag::build_initial_dag;
    use crate::physical_dag::build_physical_dag;
    use crate::query_ir::parse_batch;
    use crate::rules::{expand, RuleSet};

    fn build(catalog_text: &str, queries: &str) -> PhysicalDag {
        let cat = parse_catalog(catalog_text).unwrap();
        let batch = parse_batch(queries, &cat).unwrap();
        let mut dag = build_initial_dag(&batch, &cat).unwrap();
        expand(&mut dag, &RuleSet::default()).unwrap();
        build_physical_dag(dag).unwrap()
    }

    #[test]
    fn no_candidates_returns_volcano() {
        let pd = build(
            "relation R tuples=1000 perblock=10\ncolumn a distinct=10\n",
            "(scan R);",
        );
        let info = compute_sharability(&pd.logical);
        let res = exhaustive_optimize(&pd, &info, &OracleOptions::default()).unwrap();
        assert!(res.s_opt.is_empty());
        assert_eq!(res.subsets_examined, 1);
        let (_, volcano_cost, _) = crate::volcano::optimize_volcano(&pd).unwrap();
        assert_eq!(res.opt_cost, volcano_cost);
    }

    #[test]
    fn refuses_oversized_candidate_sets() {
        let pd = build(
            "relation R tuples=50000 perblock=10\ncolumn b distinct=100\n\
             relation S tuples=50000 perblock=10\ncolumn b distinct=100\n",
            "@weight=3 (join (= R.b S.b) (scan R) (scan S));\n\
             @weight=2 (join (= R.b S.b) (scan R) (scan S));",
        );
        let info = compute_sharability(&pd.logical);
        let err = exhaustive_optimize(
            &pd,
            &info,
            &OracleOptions {
                max_nodes: Some(1),
                ..OracleOptions::default()
            },
        )
        .unwrap_err();
        match err {
            Error::OracleTooLarge { sharable, max } => {
                assert!(sharable > 1);
                assert_eq!(max, 1);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn gray_enumeration_matches_naive_enumeration() {
        for seed in [3u64, 5, 11] {
            let inst = crate::testkit::gen_random_instance(seed);
            let cat = parse_catalog(&inst.catalog_text).unwrap();
            let batch = parse_batch(&inst.queries_text, &cat).unwrap();
            let mut dag = build_initial_dag(&batch, &cat).unwrap();
            expand(&mut dag, &RuleSet::default()).unwrap();
            let pd = build_physical_dag(dag).unwrap();
            let info = compute_sharability(&pd.logical);
            let base = crate::cost_model::best_plan_given(&pd, &BTreeSet::new());
            let y = crate::greedy::candidates(&pd, &info, &base);
            if y.len() > 8 {
                continue;
            }
            let res = exhaustive_optimize(&pd, &info, &OracleOptions::default()).unwrap();
            // Naive: recompute every subset from scratch (non-Gray order).
            let mut best = f64::INFINITY;
            let mut best_set = BTreeSet::new();
            for mask in 0..(1u64 << y.len()) {
                let set: BTreeSet<PhysEquivId> = y
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, id)| *id)
                    .collect();
                let s = crate::cost_model::best_plan_given(&pd, &set);
                if s.total < best {
                    best = s.total;
                    best_set = set;
                }
            }
            assert_eq!(res.opt_cost, best, "seed {seed}");
            assert_eq!(res.s_opt, best_set, "seed {seed}");
        }
    }
}
