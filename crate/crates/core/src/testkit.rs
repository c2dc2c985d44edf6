//! Test support: brute-force oracles kept independent of the optimizer
//! implementation paths they check, plus a seeded random instance generator.
//!
//! Everything here is reference-grade code: correct and simple over fast.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost_model::{op_cost, Cost, Pricing};
use crate::error::{Error, Result};
use crate::logical_dag::{EquivNodeId, LogicalDag, LogicalOp, OpNodeId};
use crate::physical_dag::{PhysEquivId, PhysOpKind, PhysProp, PhysicalDag};
use crate::volcano::Plan;

/// Number of derivation trees rooted at the pseudo-root, saturating at
/// `cap`.
pub fn count_plan_trees(pd: &PhysicalDag, cap: u64) -> u64 {
    let mut counts: Vec<u64> = vec![0; pd.node_count()];
    for &e in pd.topo_order() {
        let node = pd.node(e);
        let mut total: u64 = 0;
        for &op_id in &node.child_ops {
            let mut prod: u64 = 1;
            for input in &pd.op(op_id).inputs {
                prod = prod.saturating_mul(counts[input.0 as usize]);
            }
            total = total.saturating_add(prod);
        }
        counts[e.0 as usize] = total.min(cap);
    }
    counts[pd.root.0 as usize]
}

/// Minimum cost over all fully expanded plan trees, enumerated explicitly
/// (no memoized recursion). Refuses when the tree count exceeds `cap`.
pub fn brute_force_min_cost(pd: &PhysicalDag, cap: u64) -> Result<Cost> {
    if count_plan_trees(pd, cap.saturating_add(1)) > cap {
        return Err(Error::Internal(format!(
            "instance exceeds the {cap}-plan-tree enumeration cap"
        )));
    }
    let empty = BTreeSet::new();
    fn tree_costs(
        pd: &PhysicalDag,
        e: PhysEquivId,
        scratch: &mut Vec<Cost>,
        memo: &mut HashMap<PhysEquivId, Vec<Cost>>,
        empty: &BTreeSet<PhysEquivId>,
    ) -> Vec<Cost> {
        if let Some(v) = memo.get(&e) {
            return v.clone();
        }
        let node = pd.node(e);
        let mut out = Vec::new();
        for &op_id in &node.child_ops {
            let inputs = pd.op(op_id).inputs.clone();
            let per_input: Vec<Vec<Cost>> = inputs
                .iter()
                .map(|i| tree_costs(pd, *i, scratch, memo, empty))
                .collect();
            if per_input.iter().any(|v| v.is_empty()) {
                continue;
            }
            // Cartesian product over input tree choices.
            let mut idx = vec![0usize; inputs.len()];
            loop {
                for (k, input) in inputs.iter().enumerate() {
                    scratch[input.0 as usize] = per_input[k][idx[k]];
                }
                let c = op_cost(pd, op_id, scratch, empty, Pricing::MinReuse);
                if c.is_finite() {
                    out.push(c);
                }
                // Advance the mixed-radix counter.
                let mut k = 0;
                while k < inputs.len() {
                    idx[k] += 1;
                    if idx[k] < per_input[k].len() {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
                if k == inputs.len() {
                    break;
                }
            }
        }
        memo.insert(e, out.clone());
        out
    }
    let mut scratch = vec![f64::INFINITY; pd.node_count()];
    let mut memo = HashMap::new();
    let costs = tree_costs(pd, pd.root, &mut scratch, &mut memo, &empty);
    costs
        .into_iter()
        .min_by(|a, b| a.partial_cmp(b).unwrap())
        .ok_or_else(|| Error::Internal("no finite plan tree".into()))
}

/// Independent recursive-descent reference for the cost recursion with a
/// materialized set: depth-first with memoization rather than the engine's
/// topological sweep.
pub fn reference_node_costs(pd: &PhysicalDag, mat: &BTreeSet<PhysEquivId>) -> Vec<Cost> {
    fn visit(
        pd: &PhysicalDag,
        e: PhysEquivId,
        mat: &BTreeSet<PhysEquivId>,
        memo: &mut Vec<Option<Cost>>,
        costs: &mut Vec<Cost>,
    ) -> Cost {
        if let Some(c) = memo[e.0 as usize] {
            return c;
        }
        let node = pd.node(e);
        let mut best = f64::INFINITY;
        for &op_id in &node.child_ops {
            for input in &pd.op(op_id).inputs {
                visit(pd, *input, mat, memo, costs);
            }
            let c = op_cost(pd, op_id, costs, mat, Pricing::MinReuse);
            if c < best {
                best = c;
            }
        }
        memo[e.0 as usize] = Some(best);
        costs[e.0 as usize] = best;
        best
    }
    let mut memo = vec![None; pd.node_count()];
    let mut costs = vec![f64::INFINITY; pd.node_count()];
    for &e in pd.topo_order() {
        visit(pd, e, mat, &mut memo, &mut costs);
    }
    costs
}

/// All DAG-structured plans of the logical DAG (one derivation chosen per
/// reachable equivalence node). Returns None when more than `cap` plans
/// exist.
pub fn enumerate_logical_plans(
    ld: &LogicalDag,
    cap: usize,
) -> Option<Vec<BTreeMap<EquivNodeId, OpNodeId>>> {
    fn rec(
        ld: &LogicalDag,
        needed: &mut Vec<EquivNodeId>,
        chosen: &mut BTreeMap<EquivNodeId, OpNodeId>,
        out: &mut Vec<BTreeMap<EquivNodeId, OpNodeId>>,
        cap: usize,
    ) -> bool {
        // Pick the unchosen needed node with the largest topo number.
        let next = needed
            .iter()
            .filter(|e| !chosen.contains_key(e))
            .max_by_key(|e| ld.equiv(**e).topo)
            .copied();
        let Some(e) = next else {
            if out.len() >= cap {
                return false;
            }
            out.push(chosen.clone());
            return true;
        };
        let ops: Vec<OpNodeId> = ld.equiv(e).child_ops.iter().copied().collect();
        for op_id in ops {
            if !ld.op(op_id).alive {
                continue;
            }
            chosen.insert(e, op_id);
            let added: Vec<EquivNodeId> = ld
                .op(op_id)
                .inputs
                .iter()
                .map(|i| ld.find(*i))
                .filter(|i| !needed.contains(i))
                .collect();
            needed.extend(added.iter().copied());
            let ok = rec(ld, needed, chosen, out, cap);
            needed.truncate(needed.len() - added.len());
            chosen.remove(&e);
            if !ok {
                return false;
            }
        }
        true
    }
    let mut out = Vec::new();
    let mut needed = vec![ld.find(ld.root)];
    let ok = rec(ld, &mut needed, &mut BTreeMap::new(), &mut out, cap);
    ok.then_some(out)
}

/// Brute-force degree of sharing: maximum occurrence count of every
/// equivalence node over the plan trees of all DAG plans. Weighted edges of
/// the pseudo-root count as that many occurrences.
pub fn brute_force_sharing_degrees(
    ld: &LogicalDag,
    cap: usize,
) -> Option<HashMap<EquivNodeId, u64>> {
    let plans = enumerate_logical_plans(ld, cap)?;
    let mut degrees: HashMap<EquivNodeId, u64> = HashMap::new();
    for plan in plans {
        // Expand occurrence counts top-down.
        let mut occ: HashMap<EquivNodeId, u64> = HashMap::new();
        occ.insert(ld.find(ld.root), 1);
        let mut nodes: Vec<EquivNodeId> = plan.keys().copied().collect();
        nodes.sort_by_key(|e| std::cmp::Reverse(ld.equiv(*e).topo));
        for e in nodes {
            let n = occ.get(&e).copied().unwrap_or(0);
            if n == 0 {
                continue;
            }
            let op = ld.op(plan[&e]);
            for (i, input) in op.inputs.iter().enumerate() {
                let w = match &op.op {
                    LogicalOp::NoOp { weights } => weights.get(i).copied().unwrap_or(1),
                    _ => 1,
                };
                *occ.entry(ld.find(*input)).or_insert(0) += w * n;
            }
        }
        for (e, n) in occ {
            let d = degrees.entry(e).or_insert(0);
            *d = (*d).max(n);
        }
    }
    Some(degrees)
}

/// Walks an extracted plan and checks that every operator's input-property
/// requirements hold: merge joins see inputs sorted on the join columns,
/// sort-based aggregation sees its group-by order, indexed operators see the
/// probe-column index, and every guarantee covers the property of the node
/// the operator is attached to.
pub fn check_plan_properties(pd: &PhysicalDag, plan: &Plan) -> Result<()> {
    let sorted_on = |e: PhysEquivId, cols: &[String]| -> bool {
        pd.node(e).prop.satisfies(&PhysProp::sorted(cols.to_vec()))
    };
    for (&e, &op_id) in &plan.choice {
        let op = pd.op(op_id);
        if op.parent != e {
            return Err(Error::Internal(format!(
                "plan maps {e} to {op_id}, which belongs to another node"
            )));
        }
        match &op.kind {
            PhysOpKind::MergeJoin => {
                let lop = op.logical_op.ok_or_else(|| {
                    Error::Internal("merge join without logical operation".into())
                })?;
                let LogicalOp::Join(atoms) = &pd.logical.op(lop).op else {
                    return Err(Error::Internal("merge join over non-join".into()));
                };
                for atom in atoms {
                    let cols = atom.columns();
                    for input in &op.inputs {
                        let schema = &pd.logical.equiv(pd.node(*input).logical).schema;
                        let side: Vec<String> = cols
                            .iter()
                            .filter(|c| schema.iter().any(|s| s == **c))
                            .map(|c| c.to_string())
                            .collect();
                        if side.len() == 1 && pd.node(*input).prop.sort.is_empty() {
                            return Err(Error::Internal(format!(
                                "merge join input {input} is unsorted"
                            )));
                        }
                    }
                }
            }
            PhysOpKind::SortAgg => {
                let lop = op.logical_op.unwrap();
                if let LogicalOp::Aggregate { group_by, .. } = &pd.logical.op(lop).op {
                    if !group_by.is_empty() && !sorted_on(op.inputs[0], group_by) {
                        return Err(Error::Internal(format!(
                            "aggregation input {} lacks the group-by order",
                            op.inputs[0]
                        )));
                    }
                }
            }
            PhysOpKind::IndexedJoin { probe_col } => {
                let inner = op.inputs[1];
                if pd.node(inner).prop.index_on.as_deref() != Some(probe_col.as_str()) {
                    return Err(Error::Internal(format!(
                        "indexed join inner {inner} lacks the {probe_col} index"
                    )));
                }
                if !pd.is_catalog_indexed_base(inner) && !plan.mat.contains(&inner) {
                    return Err(Error::Internal(format!(
                        "indexed join probes {inner}, which is neither stored nor materialized"
                    )));
                }
            }
            PhysOpKind::IndexedSelect { index_col, .. } => {
                let input = op.inputs[0];
                if pd.node(input).prop.index_on.as_deref() != Some(index_col.as_str()) {
                    return Err(Error::Internal(format!(
                        "indexed select input {input} lacks the {index_col} index"
                    )));
                }
                if !pd.is_catalog_indexed_base(input) && !plan.mat.contains(&input) {
                    return Err(Error::Internal(format!(
                        "indexed select probes {input}, which is neither stored nor materialized"
                    )));
                }
            }
            PhysOpKind::BuildIndex { col } if !sorted_on(op.inputs[0], std::slice::from_ref(col)) => {
                return Err(Error::Internal(format!(
                    "index build over input not sorted on {col}"
                )));
            }
            _ => {}
        }
        for input in &op.inputs {
            if !plan.choice.contains_key(input) {
                return Err(Error::Internal(format!(
                    "plan node {e} consumes {input}, which has no chosen derivation"
                )));
            }
        }
    }
    Ok(())
}

/// Re-evaluates an extracted plan bottom-up, independently of the stored
/// annotations, and returns the total under the plan's materialized set.
pub fn reevaluate_plan(pd: &PhysicalDag, plan: &Plan) -> Cost {
    let mut costs: Vec<Cost> = vec![f64::INFINITY; pd.node_count()];
    let mut nodes: Vec<PhysEquivId> = plan.nodes().collect();
    nodes.sort_by_key(|e| pd.node(*e).topo);
    for e in nodes {
        costs[e.0 as usize] = op_cost(
            pd,
            plan.choice[&e],
            &costs,
            &plan.mat,
            Pricing::MinReuse,
        );
    }
    let mut total = costs[plan.root.0 as usize];
    for m in &plan.mat {
        total += costs[m.0 as usize] + crate::cost_model::matcost(pd, *m);
    }
    total
}

/// Canonical structural signature of every equivalence node; two DAGs are
/// isomorphic iff the signature sets match.
pub fn canonical_signatures(ld: &LogicalDag) -> BTreeSet<String> {
    fn sig(
        ld: &LogicalDag,
        e: EquivNodeId,
        memo: &mut HashMap<EquivNodeId, String>,
    ) -> String {
        let e = ld.find(e);
        if let Some(s) = memo.get(&e) {
            return s.clone();
        }
        let node = ld.equiv(e);
        let mut op_sigs: Vec<String> = node
            .child_ops
            .iter()
            .filter(|o| ld.op(**o).alive)
            .map(|o| {
                let op = ld.op(*o);
                let inputs: Vec<String> =
                    op.inputs.iter().map(|i| sig(ld, *i, memo)).collect();
                format!("{}({})", op.op, inputs.join(","))
            })
            .collect();
        op_sigs.sort();
        let s = format!("{{{}}}", op_sigs.join("|"));
        memo.insert(e, s.clone());
        s
    }
    let mut memo = HashMap::new();
    ld.alive_equivs().map(|e| sig(ld, e.id, &mut memo)).collect()
}

// ---------------------------------------------------------------------------
// Seeded random instances
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub catalog_text: String,
    pub queries_text: String,
}

/// Deterministic random instance: a handful of relations over a shared
/// column pool and 1..3 chain-join queries with optional selections,
/// aggregates and weights. Queries draw from the same relations so shared
/// subexpressions arise naturally.
pub fn gen_random_instance(seed: u64) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nrel = rng.random_range(2..=4usize);
    let pool = ["a", "b", "c"];
    let mut catalog = String::new();
    for r in 0..nrel {
        let tuples = 10f64.powf(rng.random_range(2.0..4.2f64)) as u64;
        let perblock = [10u64, 25, 50][rng.random_range(0..3usize)];
        let index = if rng.random_bool(0.25) { " index=a" } else { "" };
        catalog.push_str(&format!(
            "relation R{r} tuples={tuples} perblock={perblock}{index}\n"
        ));
        for col in pool {
            let distinct = rng.random_range(2..=tuples.clamp(2, 1000));
            catalog.push_str(&format!("column {col} distinct={distinct}\n"));
        }
    }
    let nq = rng.random_range(1..=3usize);
    let mut queries = String::new();
    for _ in 0..nq {
        let k = rng.random_range(2..=nrel.min(3));
        // Pick k distinct relations.
        let mut rels: Vec<usize> = (0..nrel).collect();
        for i in (1..rels.len()).rev() {
            let j = rng.random_range(0..=i);
            rels.swap(i, j);
        }
        rels.truncate(k);
        let mut expr = format!("(scan R{})", rels[0]);
        if rng.random_bool(0.6) {
            let col = pool[rng.random_range(0..pool.len())];
            let op = ["<", ">=", "="][rng.random_range(0..3usize)];
            let val = rng.random_range(0..50i64);
            expr = format!("(select ({op} R{}.{col} {val}) {expr})", rels[0]);
        }
        for w in 1..k {
            let col = pool[rng.random_range(0..pool.len())];
            expr = format!(
                "(join (= R{}.{col} R{}.{col}) {expr} (scan R{}))",
                rels[w - 1],
                rels[w],
                rels[w]
            );
        }
        if rng.random_bool(0.2) {
            let g = pool[rng.random_range(0..pool.len())];
            let s = pool[rng.random_range(0..pool.len())];
            expr = format!(
                "(agg (R{0}.{g}) ((sum R{0}.{s})) {expr})",
                rels[0]
            );
        }
        let weight = if rng.random_bool(0.2) {
            rng.random_range(2..=4u64)
        } else {
            1
        };
        if weight > 1 {
            queries.push_str(&format!("@weight={weight} "));
        }
        queries.push_str(&format!("{expr};\n"));
    }
    RandomInstance {
        catalog_text: catalog,
        queries_text: queries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::parse_catalog;
    use crate::logical_dag::build_initial_dag;
    use crate::query_ir::parse_batch;

    #[test]
    fn random_instances_parse() {
        for seed in 0..30 {
            let inst = gen_random_instance(seed);
            let cat = parse_catalog(&inst.catalog_text).unwrap();
            let batch = parse_batch(&inst.queries_text, &cat).unwrap();
            assert!(!batch.queries.is_empty());
        }
    }

    #[test]
    fn same_seed_same_instance() {
        let a = gen_random_instance(7);
        let b = gen_random_instance(7);
        assert_eq!(a.catalog_text, b.catalog_text);
        assert_eq!(a.queries_text, b.queries_text);
    }

    #[test]
    fn plan_enumeration_counts_tree_query() {
        let cat = parse_catalog(
            "relation A tuples=100 perblock=10\ncolumn m distinct=10\n",
        )
        .unwrap();
        let batch = parse_batch("(scan A);", &cat).unwrap();
        let dag = build_initial_dag(&batch, &cat).unwrap();
        let plans = enumerate_logical_plans(&dag, 100).unwrap();
        assert_eq!(plans.len(), 1);
    }
}
