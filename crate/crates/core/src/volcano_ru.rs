//! Volcano-RU: sequence-sensitive optimization. Queries are optimized in
//! order; nodes of earlier best plans that would be worth materializing if
//! used once more are treated as materialized for later queries. A final
//! Volcano-SH pass over the combined plan makes the actual materialization
//! decisions. Both the given order and its reverse are tried and the
//! cheaper result returned; the DAG is built only once.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::cost_model::{matcost, op_cost, reusecost, Cost, PlanState, Pricing};
use crate::error::{Error, Result};
use crate::physical_dag::{PhysEquivId, PhysOpId, PhysicalDag};
use crate::volcano::Plan;
use crate::volcano_sh::{volcano_sh, ShResult};

#[derive(Debug, Clone)]
struct CacheEntry {
    cost: Cost,
    best: PhysOpId,
    /// Index (position in the optimization order) of the query during whose
    /// optimization this plan was computed.
    tag: usize,
}

/// State of one ordered Volcano-RU run.
#[derive(Debug, Default)]
pub struct RuState {
    /// Candidate-materialized nodes.
    n_set: BTreeSet<PhysEquivId>,
    /// Times each node appeared in earlier best plans.
    count: HashMap<PhysEquivId, u64>,
    cache: HashMap<PhysEquivId, CacheEntry>,
    /// Nodes of all earlier chosen plans; their cached best plans stay valid.
    in_earlier_plans: BTreeSet<PhysEquivId>,
    /// Working view of node costs for operator costing.
    node_cost: Vec<Cost>,
}

#[derive(Debug, Clone)]
pub struct RuResult {
    pub mat: BTreeSet<PhysEquivId>,
    pub plan: Plan,
    pub cost: Cost,
    /// Query indices in the order that won.
    pub order: Vec<usize>,
    pub forward_cost: Cost,
    pub reverse_cost: Cost,
}

fn optimize_node(pd: &PhysicalDag, ru: &mut RuState, e: PhysEquivId, qpos: usize) -> Cost {
    if let Some(entry) = ru.cache.get(&e) {
        if entry.tag == qpos || ru.in_earlier_plans.contains(&e) {
            let c = entry.cost;
            ru.node_cost[e.0 as usize] = c;
            return c;
        }
    }
    let node = pd.node(e);
    let mut best = f64::INFINITY;
    let mut best_id = None;
    let child_ops = node.child_ops.clone();
    for op_id in child_ops {
        for input in pd.op(op_id).inputs.clone() {
            optimize_node(pd, ru, input, qpos);
        }
        let c = op_cost(pd, op_id, &ru.node_cost, &ru.n_set, Pricing::MinReuse);
        if c < best {
            best = c;
            best_id = Some(op_id);
        }
    }
    let best_id = best_id.expect("every physical node has at least one derivation");
    ru.cache.insert(
        e,
        CacheEntry {
            cost: best,
            best: best_id,
            tag: qpos,
        },
    );
    ru.node_cost[e.0 as usize] = best;
    best
}

/// Nodes of the best plan for one query. Descent stops at inputs that are
/// reused from the candidate set (strictly cheaper to reuse than recompute);
/// those nodes still belong to the plan.
fn extract_query_plan(
    pd: &PhysicalDag,
    ru: &RuState,
    root_q: PhysEquivId,
) -> Vec<(PhysEquivId, PhysOpId)> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut stack = vec![(root_q, true)];
    while let Some((e, descend)) = stack.pop() {
        if !seen.insert(e) {
            continue;
        }
        let entry = &ru.cache[&e];
        out.push((e, entry.best));
        if !descend {
            continue;
        }
        for &input in &pd.op(entry.best).inputs {
            let reused = ru.n_set.contains(&input)
                && reusecost(pd, input) < ru.cache.get(&input).map_or(f64::INFINITY, |c| c.cost);
            stack.push((input, !reused));
        }
    }
    out
}

/// Volcano-SH over the plain Volcano plan: the no-reuse baseline each order
/// must beat. Phase-1 reuse can commit later queries to plans that only pay
/// off if the shared node is materialized; when the final decision pass
/// rejects the node, the combined plan can end up worse than not reusing at
/// all, so the baseline is kept as a candidate.
fn no_reuse_baseline(pd: &PhysicalDag, base_state: &PlanState) -> Result<ShResult> {
    let plan = crate::volcano::extract_plan(pd, base_state)?;
    volcano_sh(pd, &plan, base_state)
}

fn run_order(
    pd: &PhysicalDag,
    order: &[usize],
    base_state: &PlanState,
) -> Result<ShResult> {
    let root_op = {
        let root = pd.node(pd.root);
        *root
            .child_ops
            .first()
            .ok_or_else(|| Error::Internal("pseudo-root without no-op".into()))?
    };
    let query_roots: Vec<PhysEquivId> = pd.op(root_op).inputs.clone();
    let mut ru = RuState {
        node_cost: vec![f64::INFINITY; pd.node_count()],
        ..RuState::default()
    };
    let mut combined: BTreeMap<PhysEquivId, PhysOpId> = BTreeMap::new();
    for (qpos, &qi) in order.iter().enumerate() {
        let root_q = query_roots[qi];
        optimize_node(pd, &mut ru, root_q, qpos);
        let plan_i = extract_query_plan(pd, &ru, root_q);
        for &(e, best) in &plan_i {
            let c = *ru.count.entry(e).or_insert(0) + 1;
            ru.count.insert(e, c);
            let cost_e = ru.cache[&e].cost;
            // Worth materializing if used once more.
            if cost_e.is_finite()
                && cost_e + matcost(pd, e) + c as f64 * reusecost(pd, e)
                    < (c + 1) as f64 * cost_e
            {
                ru.n_set.insert(e);
            }
            combined.entry(e).or_insert(best);
            ru.in_earlier_plans.insert(e);
        }
    }
    combined.insert(pd.root, root_op);
    let combined_plan = Plan {
        root: pd.root,
        choice: combined,
        mat: BTreeSet::new(),
    };
    volcano_sh(pd, &combined_plan, base_state)
}

/// Volcano-RU over the given order followed by the Volcano-SH decision pass.
pub fn volcano_ru(
    pd: &PhysicalDag,
    order: &[usize],
    base_state: &PlanState,
) -> Result<RuResult> {
    let mut sh = run_order(pd, order, base_state)?;
    let baseline = no_reuse_baseline(pd, base_state)?;
    if baseline.cost < sh.cost {
        sh = baseline;
    }
    Ok(RuResult {
        mat: sh.mat,
        plan: sh.plan,
        cost: sh.cost,
        order: order.to_vec(),
        forward_cost: sh.cost,
        reverse_cost: f64::NAN,
    })
}

/// Runs the batch order forward and reversed, returning the cheaper result.
pub fn volcano_ru_bidirectional(pd: &PhysicalDag, base_state: &PlanState) -> Result<RuResult> {
    let root_op = pd
        .node(pd.root)
        .child_ops
        .first()
        .copied()
        .ok_or_else(|| Error::Internal("pseudo-root without no-op".into()))?;
    let k = pd.op(root_op).inputs.len();
    let forward: Vec<usize> = (0..k).collect();
    let reverse: Vec<usize> = (0..k).rev().collect();
    let baseline = no_reuse_baseline(pd, base_state)?;
    let mut f = run_order(pd, &forward, base_state)?;
    if baseline.cost < f.cost {
        f = baseline.clone();
    }
    let mut r = run_order(pd, &reverse, base_state)?;
    if baseline.cost < r.cost {
        r = baseline;
    }
    let (winner, order) = if r.cost < f.cost {
        (&r, reverse.clone())
    } else {
        (&f, forward.clone())
    };
    Ok(RuResult {
        mat: winner.mat.clone(),
        plan: winner.plan.clone(),
        cost: winner.cost,
        order,
        forward_cost: f.cost,
        reverse_cost: r.cost,
    })
}
