//! Execution, materialization and reuse costs, and the Volcano cost
//! recursion with a materialized set.
//!
//! Costs are scalar milliseconds combining I/O and CPU. Intermediate results
//! are pipelined: only scans, index probes, enforcer sorts, materializations
//! and reuses touch the I/O terms. Every operator cost is rounded half-up to
//! 0.001 ms so runs are reproducible bit-for-bit.

use std::collections::BTreeSet;

use crate::catalog::DerivedStats;
use crate::physical_dag::{PhysEquivId, PhysOpId, PhysOpKind, PhysicalDag};
use crate::query_ir::{Atom, CmpOp, Predicate};

/// Scalar cost in milliseconds.
pub type Cost = f64;

pub fn round_ms(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    (x * 1000.0 + 0.5).floor() / 1000.0
}

/// How materialized inputs are priced when computing an operation's cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pricing {
    /// `C(e) = min(cost(e), reusecost(e))` for members of the set.
    MinReuse,
    /// `C(e) = reusecost(e)` for members of the set (Volcano-SH accounting).
    ForcedReuse,
}

fn stats_of(pd: &PhysicalDag, e: PhysEquivId) -> &DerivedStats {
    &pd.logical.equiv(pd.node(e).logical).stats
}

fn blocks_of_node(pd: &PhysicalDag, e: PhysEquivId) -> f64 {
    stats_of(pd, e).blocks() as f64
}

/// Cost of materializing a node: sequential write of the result.
pub fn matcost(pd: &PhysicalDag, e: PhysEquivId) -> Cost {
    let p = &pd.catalog().params;
    round_ms(p.seek_ms + blocks_of_node(pd, e) * p.write_ms_per_block)
}

/// Cost of reusing a materialized result: sequential read plus CPU.
pub fn reusecost(pd: &PhysicalDag, e: PhysEquivId) -> Cost {
    let p = &pd.catalog().params;
    round_ms(
        p.seek_ms + blocks_of_node(pd, e) * (p.read_ms_per_block + p.cpu_ms_per_block),
    )
}

/// Selectivity of the first conjunct atom on `column`, used to price
/// clustered-index range accesses.
fn index_atom_selectivity(pred: &Predicate, column: &str, stats: &DerivedStats) -> f64 {
    for conj in pred.conjuncts() {
        if let Predicate::Atom(Atom::ColConst { column: c, op, .. }) = conj {
            if c == column {
                let v = stats
                    .column(c)
                    .map(|ci| ci.base_distinct.max(1))
                    .unwrap_or(1) as f64;
                return match op {
                    CmpOp::Eq => 1.0 / v,
                    CmpOp::Lt | CmpOp::Le | CmpOp::Gt | CmpOp::Ge => 1.0 / 3.0,
                    CmpOp::Ne => 1.0,
                };
            }
        }
    }
    1.0
}

/// True when an index-property input is usable: the catalog provides the
/// index on a stored base relation, or the node is materialized.
fn indexed_input_valid(pd: &PhysicalDag, e: PhysEquivId, mat: &BTreeSet<PhysEquivId>) -> bool {
    pd.is_catalog_indexed_base(e) || mat.contains(&e)
}

fn priced_input(
    pd: &PhysicalDag,
    e: PhysEquivId,
    node_cost: &[Cost],
    mat: &BTreeSet<PhysEquivId>,
    parent: PhysEquivId,
    pricing: Pricing,
) -> Cost {
    let c = node_cost[e.0 as usize];
    if !mat.contains(&e) {
        return c;
    }
    // A materialized node's own plan may not reuse another materialized
    // variant of the same logical node.
    if mat.contains(&parent) && pd.node(e).logical == pd.node(parent).logical {
        return c;
    }
    match pricing {
        Pricing::MinReuse => c.min(reusecost(pd, e)),
        Pricing::ForcedReuse => reusecost(pd, e),
    }
}

/// Full cost of one physical operation given the computation costs of all
/// nodes (`node_cost`) and the materialized set. Deterministic; rounded.
pub fn op_cost(
    pd: &PhysicalDag,
    op_id: PhysOpId,
    node_cost: &[Cost],
    mat: &BTreeSet<PhysEquivId>,
    pricing: Pricing,
) -> Cost {
    let op = pd.op(op_id);
    let p = &pd.catalog().params;
    let parent = op.parent;
    let total = match &op.kind {
        PhysOpKind::NoOp { weights } => {
            let mut sum = 0.0;
            for (i, input) in op.inputs.iter().enumerate() {
                let w = weights.get(i).copied().unwrap_or(1) as f64;
                sum += w * priced_input(pd, *input, node_cost, mat, parent, pricing);
            }
            sum
        }
        PhysOpKind::TableScan { relation } => {
            let stats = pd
                .catalog()
                .relation(relation)
                .expect("relation checked during construction");
            p.seek_ms
                + stats.blocks() as f64 * (p.read_ms_per_block + p.cpu_ms_per_block)
        }
        PhysOpKind::StoredIndexedBase { .. } => 0.0,
        PhysOpKind::Filter { .. } | PhysOpKind::Project { .. } => {
            let input = op.inputs[0];
            p.cpu_ms_per_block * blocks_of_node(pd, input)
                + priced_input(pd, input, node_cost, mat, parent, pricing)
        }
        PhysOpKind::IndexedSelect { pred, index_col } => {
            let input = op.inputs[0];
            if !indexed_input_valid(pd, input, mat) {
                return f64::INFINITY;
            }
            let sel = index_atom_selectivity(pred, index_col, stats_of(pd, input));
            let matching = (sel * blocks_of_node(pd, input)).ceil();
            p.seek_ms + matching * (p.read_ms_per_block + p.cpu_ms_per_block)
        }
        PhysOpKind::NestedLoopsJoin => {
            let (outer, inner) = (op.inputs[0], op.inputs[1]);
            let b_outer = blocks_of_node(pd, outer);
            let b_inner = blocks_of_node(pd, inner);
            let mem = (p.operator_memory_blocks.saturating_sub(1)).max(1) as f64;
            let passes = (b_outer / mem).ceil().max(1.0);
            let exec = p.cpu_ms_per_block * (b_outer + passes * b_inner);
            let rereadable = pd.is_base_relation(inner) || mat.contains(&inner);
            let rereads = if passes > 1.0 {
                if rereadable {
                    (passes - 1.0) * b_inner * p.read_ms_per_block
                } else {
                    (passes - 1.0) * node_cost[inner.0 as usize]
                }
            } else {
                0.0
            };
            exec + rereads
                + priced_input(pd, outer, node_cost, mat, parent, pricing)
                + priced_input(pd, inner, node_cost, mat, parent, pricing)
        }
        PhysOpKind::MergeJoin => {
            let (l, r) = (op.inputs[0], op.inputs[1]);
            p.cpu_ms_per_block * (blocks_of_node(pd, l) + blocks_of_node(pd, r))
                + priced_input(pd, l, node_cost, mat, parent, pricing)
                + priced_input(pd, r, node_cost, mat, parent, pricing)
        }
        PhysOpKind::IndexedJoin { probe_col } => {
            let (outer, inner) = (op.inputs[0], op.inputs[1]);
            if !indexed_input_valid(pd, inner, mat) {
                return f64::INFINITY;
            }
            let inner_stats = stats_of(pd, inner);
            let probes = stats_of(pd, outer).rows as f64;
            let distinct = inner_stats.distinct(probe_col).unwrap_or(1).max(1) as f64;
            let matching_blocks = (inner_stats.rows as f64
                / distinct
                / inner_stats.tuples_per_block.max(1) as f64)
                .ceil();
            probes * (p.seek_ms + matching_blocks * (p.read_ms_per_block + p.cpu_ms_per_block))
                + priced_input(pd, outer, node_cost, mat, parent, pricing)
        }
        PhysOpKind::SortAgg => {
            let input = op.inputs[0];
            p.cpu_ms_per_block * blocks_of_node(pd, input)
                + priced_input(pd, input, node_cost, mat, parent, pricing)
        }
        PhysOpKind::Sort => {
            let input = op.inputs[0];
            let b = blocks_of_node(pd, input);
            let mem = p.operator_memory_blocks as f64;
            let exec = if b <= mem {
                p.cpu_ms_per_block * b
            } else {
                let runs = (b / mem).ceil();
                let merge_fanin = (mem - 1.0).max(2.0);
                let passes = (runs.ln() / merge_fanin.ln()).ceil().max(1.0);
                2.0 * b
                    * (p.read_ms_per_block + p.write_ms_per_block + p.cpu_ms_per_block)
                    * passes
            };
            exec + priced_input(pd, input, node_cost, mat, parent, pricing)
        }
        PhysOpKind::BuildIndex { .. } => {
            let input = op.inputs[0];
            blocks_of_node(pd, input) * (p.read_ms_per_block + p.write_ms_per_block)
                + priced_input(pd, input, node_cost, mat, parent, pricing)
        }
    };
    round_ms(total)
}

/// Per-run cost annotations over the physical DAG.
#[derive(Debug, Clone)]
pub struct PlanState {
    pub mat: BTreeSet<PhysEquivId>,
    pub node_cost: Vec<Cost>,
    pub op_cost: Vec<Cost>,
    pub best_op: Vec<Option<PhysOpId>>,
    pub total: Cost,
    /// Number of per-node cost propagations performed by incremental
    /// updates.
    pub propagations: u64,
}

impl PlanState {
    /// Exact equality of all annotations; used to check the incremental
    /// engine against from-scratch recomputation.
    pub fn annotations_equal(&self, other: &PlanState) -> bool {
        self.mat == other.mat
            && self.node_cost == other.node_cost
            && self.op_cost == other.op_cost
            && self.best_op == other.best_op
            && self.total == other.total
    }
}

/// Batch total: weighted root cost plus computation and materialization of
/// every member of the set.
pub fn total_cost(pd: &PhysicalDag, state: &PlanState) -> Cost {
    let mut total = state.node_cost[pd.root.0 as usize];
    for s in &state.mat {
        total += state.node_cost[s.0 as usize] + matcost(pd, *s);
    }
    total
}

/// Full Volcano recursion with the reuse substitution for members of `mat`:
/// costs, best child choices and the batch total for every physical node.
pub fn best_plan_given(pd: &PhysicalDag, mat: &BTreeSet<PhysEquivId>) -> PlanState {
    let mut state = PlanState {
        mat: mat.clone(),
        node_cost: vec![f64::INFINITY; pd.node_count()],
        op_cost: vec![f64::INFINITY; pd.op_count()],
        best_op: vec![None; pd.node_count()],
        total: 0.0,
        propagations: 0,
    };
    for &e in pd.topo_order() {
        let node = pd.node(e);
        let mut best = f64::INFINITY;
        let mut best_id = None;
        for &op_id in &node.child_ops {
            let c = op_cost(pd, op_id, &state.node_cost, mat, Pricing::MinReuse);
            state.op_cost[op_id.0 as usize] = c;
            if c < best {
                best = c;
                best_id = Some(op_id);
            }
        }
        state.node_cost[e.0 as usize] = best;
        state.best_op[e.0 as usize] = best_id;
    }
    state.total = total_cost(pd, &state);
    state
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_half_up() {
        assert_eq!(round_ms(1.0004), 1.0);
        assert_eq!(round_ms(1.0005), 1.001);
        assert_eq!(round_ms(229.9999), 230.0);
        assert!(round_ms(f64::INFINITY).is_infinite());
    }

    // Formula spot checks with default parameters (seek 10, read 2, write 4,
    // cpu 0.2): scan of 100 blocks = 230 ms; merge join of 100+200 blocks
    // = 60 ms; mat/reuse of 50 blocks = 210/120 ms. Exercised end to end in
    // the volcano tests; the direct arithmetic is pinned here.
    #[test]
    fn formula_constants() {
        let p = crate::catalog::CostParams::default();
        let scan = p.seek_ms + 100.0 * (p.read_ms_per_block + p.cpu_ms_per_block);
        assert_eq!(round_ms(scan), 230.0);
        let merge = p.cpu_ms_per_block * (100.0 + 200.0);
        assert_eq!(round_ms(merge), 60.0);
        let sort_small = p.cpu_ms_per_block * 10.0;
        assert_eq!(round_ms(sort_small), 2.0);
        let mat = p.seek_ms + 50.0 * p.write_ms_per_block;
        assert_eq!(round_ms(mat), 210.0);
        let reuse = p.seek_ms + 50.0 * (p.read_ms_per_block + p.cpu_ms_per_block);
        assert_eq!(round_ms(reuse), 120.0);
    }
}
