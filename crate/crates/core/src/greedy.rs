//! Greedy materialization selection with the three implementation
//! optimizations that make it practical: a sharability pre-filter over the
//! logical DAG, incremental cost update driven by a topological priority
//! heap, and a benefit heap that treats previously computed benefits as
//! upper bounds (the monotonicity heuristic).

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use crate::cost_model::{best_plan_given, op_cost, total_cost, Cost, PlanState, Pricing};
use crate::error::{Error, Result};
use crate::logical_dag::{EquivNodeId, LogicalDag, LogicalOp};
use crate::physical_dag::{PhysEquivId, PhysicalDag};
use crate::volcano::{extract_plan, Plan};

// ---------------------------------------------------------------------------
// Sharability
// ---------------------------------------------------------------------------

/// Degree of sharing per logical equivalence node: the maximum number of
/// occurrences of the node over all plan trees represented by the DAG.
#[derive(Debug, Clone)]
pub struct SharabilityInfo {
    pub degree: HashMap<EquivNodeId, u64>,
    pub sharable: BTreeSet<EquivNodeId>,
}

/// Bottom-up degree-of-sharing computation, one target node at a time:
/// operation nodes sum their inputs' counts (pseudo-root edges weighted),
/// equivalence nodes take the maximum over their derivations. Counts are
/// zero outside the target's ancestors, so each pass only walks the
/// ancestor closure. The DAG is flattened into dense index arrays up front;
/// the passes then touch nothing but flat vectors.
pub fn compute_sharability(ld: &LogicalDag) -> SharabilityInfo {
    let order = ld.topo_order();
    let slots = ld.num_equiv_slots();
    let root = ld.find(ld.root);

    // Flat views of the DAG in dense topological indices: per-equiv
    // derivation ranges, per-derivation weighted input ranges, and parent
    // adjacency, all in CSR layout so the per-target passes stay on arrays.
    let mut dense: Vec<u32> = vec![u32::MAX; slots];
    for (i, e) in order.iter().enumerate() {
        dense[e.0 as usize] = i as u32;
    }
    let n = order.len();
    let mut op_parent: Vec<u32> = Vec::new();
    let mut op_input_start: Vec<u32> = vec![0];
    let mut op_inputs: Vec<(u32, u64)> = Vec::new();
    let mut parent_count: Vec<u32> = vec![0; n];
    for op in ld.alive_ops() {
        let parent = dense[ld.find(op.parent).0 as usize];
        op_parent.push(parent);
        for (i, input) in op.inputs.iter().enumerate() {
            let w = match &op.op {
                LogicalOp::NoOp { weights } => weights.get(i).copied().unwrap_or(1),
                _ => 1,
            };
            let child = dense[ld.find(*input).0 as usize];
            op_inputs.push((child, w));
            parent_count[child as usize] += 1;
        }
        op_input_start.push(op_inputs.len() as u32);
    }
    let n_ops = op_parent.len();
    // Ops grouped under their parent equiv.
    let mut equiv_op_start: Vec<u32> = vec![0; n + 1];
    for &p in &op_parent {
        equiv_op_start[p as usize + 1] += 1;
    }
    for i in 0..n {
        equiv_op_start[i + 1] += equiv_op_start[i];
    }
    let mut equiv_ops: Vec<u32> = vec![0; n_ops];
    let mut cursor = equiv_op_start.clone();
    for (o, &p) in op_parent.iter().enumerate() {
        equiv_ops[cursor[p as usize] as usize] = o as u32;
        cursor[p as usize] += 1;
    }
    // Parent adjacency (possibly with repeats; the visited flags dedup).
    let mut parent_start: Vec<u32> = vec![0; n + 1];
    for i in 0..n {
        parent_start[i + 1] = parent_start[i] + parent_count[i];
    }
    let mut parent_list: Vec<u32> = vec![0; op_inputs.len()];
    let mut pcursor = parent_start.clone();
    for (o, &p) in op_parent.iter().enumerate() {
        let range = op_input_start[o] as usize..op_input_start[o + 1] as usize;
        for &(child, _) in &op_inputs[range] {
            parent_list[pcursor[child as usize] as usize] = p;
            pcursor[child as usize] += 1;
        }
    }

    // A node's degree exceeds one only if some operation has two inputs
    // (or one input with edge weight > 1) whose sub-DAGs both contain it:
    // otherwise every count in the recursion stays 0 or 1. Descendant
    // bitsets give that set of potentially-shared targets exactly, and the
    // expensive per-target pass runs only for those.
    let words = n.div_ceil(64);
    let mut desc: Vec<u64> = vec![0; n * words];
    for x in 0..n {
        desc[x * words + x / 64] |= 1u64 << (x % 64);
        for &o in &equiv_ops[equiv_op_start[x] as usize..equiv_op_start[x + 1] as usize] {
            let range = op_input_start[o as usize] as usize..op_input_start[o as usize + 1] as usize;
            for k in range {
                let child = op_inputs[k].0 as usize;
                // Split borrows: inputs precede x in dense order.
                let (lo, hi) = desc.split_at_mut(x * words);
                let src = &lo[child * words..child * words + words];
                let dst = &mut hi[..words];
                for w in 0..words {
                    dst[w] |= src[w];
                }
            }
        }
    }
    let mut potential: Vec<u64> = vec![0; words];
    for o in 0..n_ops {
        let inputs = &op_inputs[op_input_start[o] as usize..op_input_start[o + 1] as usize];
        for (i, &(a, wa)) in inputs.iter().enumerate() {
            let a_bits = &desc[a as usize * words..a as usize * words + words];
            if wa > 1 {
                for w in 0..words {
                    potential[w] |= a_bits[w];
                }
            }
            for &(b, _) in &inputs[i + 1..] {
                let b_bits = &desc[b as usize * words..b as usize * words + words];
                for w in 0..words {
                    potential[w] |= a_bits[w] & b_bits[w];
                }
            }
        }
    }

    let mut degree = HashMap::new();
    let mut counts: Vec<u64> = vec![0; n];
    let mut is_ancestor: Vec<bool> = vec![false; n];
    let mut touched: Vec<u32> = Vec::with_capacity(n);
    let mut stack: Vec<u32> = Vec::new();
    for z in 0..n as u32 {
        if potential[z as usize / 64] & (1 << (z % 64)) == 0 {
            degree.insert(order[z as usize], 1);
            continue;
        }
        touched.clear();
        touched.push(z);
        is_ancestor[z as usize] = true;
        stack.push(z);
        while let Some(e) = stack.pop() {
            let range = parent_start[e as usize] as usize..parent_start[e as usize + 1] as usize;
            for k in range {
                let p = parent_list[k];
                if !is_ancestor[p as usize] {
                    is_ancestor[p as usize] = true;
                    touched.push(p);
                    stack.push(p);
                }
            }
        }
        // Dense indices follow topological order, so a plain sort visits
        // descendants first; z itself is the minimum of its ancestor set.
        touched.sort_unstable();
        counts[z as usize] = 1;
        for &x in &touched[1..] {
            let mut best = 0;
            let op_range =
                equiv_op_start[x as usize] as usize..equiv_op_start[x as usize + 1] as usize;
            for &o in &equiv_ops[op_range] {
                let mut sum: u64 = 0;
                let range =
                    op_input_start[o as usize] as usize..op_input_start[o as usize + 1] as usize;
                for k in range {
                    let (child, w) = op_inputs[k];
                    sum += w * counts[child as usize];
                }
                best = best.max(sum);
            }
            counts[x as usize] = best;
        }
        degree.insert(order[z as usize], counts[dense[root.0 as usize] as usize]);
        for &x in &touched {
            counts[x as usize] = 0;
            is_ancestor[x as usize] = false;
        }
    }
    let sharable = degree
        .iter()
        .filter(|(e, d)| **d > 1 && ld.equiv(**e).materializable)
        .map(|(e, _)| *e)
        .collect();
    SharabilityInfo { degree, sharable }
}

/// Physical materialization candidates: every variant of a sharable,
/// materializable logical node with a nonzero computation cost.
pub fn candidates(
    pd: &PhysicalDag,
    sharability: &SharabilityInfo,
    base_state: &PlanState,
) -> Vec<PhysEquivId> {
    pd.nodes()
        .iter()
        .filter(|n| {
            n.id != pd.root
                && sharability.sharable.contains(&pd.logical.find(n.logical))
                && pd.logical.equiv(n.logical).materializable
                && base_state.node_cost[n.id.0 as usize].is_finite()
                && base_state.node_cost[n.id.0 as usize] > 0.0
        })
        .map(|n| n.id)
        .collect()
}

// ---------------------------------------------------------------------------
// Incremental cost update (PropHeap)
// ---------------------------------------------------------------------------

/// Incrementally transforms `state` (consistent for its current set) into
/// the state for `new_mat`. Change seeds are the symmetric difference; cost
/// changes propagate to parents in ascending topological order, each node
/// entering the heap at most once. Annotations end identical to a
/// from-scratch `best_plan_given`.
pub fn update_cost(pd: &PhysicalDag, state: &mut PlanState, new_mat: &BTreeSet<PhysEquivId>) {
    let symdiff: BTreeSet<PhysEquivId> = state
        .mat
        .symmetric_difference(new_mat)
        .copied()
        .collect();
    state.mat = new_mat.clone();
    if symdiff.is_empty() {
        return;
    }
    let mut heap: BinaryHeap<Reverse<(u32, PhysEquivId)>> = BinaryHeap::new();
    let mut queued: BTreeSet<PhysEquivId> = BTreeSet::new();
    for &e in &symdiff {
        if queued.insert(e) {
            heap.push(Reverse((pd.node(e).topo, e)));
        }
    }
    while let Some(Reverse((_, n))) = heap.pop() {
        queued.remove(&n);
        state.propagations += 1;
        let node = pd.node(n);
        let in_symdiff = symdiff.contains(&n);
        if in_symdiff {
            // Membership changes this node's own operator pricing (reuse of
            // same-logical variants, re-read terms), so refresh child ops.
            for &op_id in &node.child_ops {
                state.op_cost[op_id.0 as usize] =
                    op_cost(pd, op_id, &state.node_cost, &state.mat, Pricing::MinReuse);
            }
        }
        let old_cost = state.node_cost[n.0 as usize];
        let mut best = f64::INFINITY;
        let mut best_id = None;
        for &op_id in &node.child_ops {
            let c = state.op_cost[op_id.0 as usize];
            if c < best {
                best = c;
                best_id = Some(op_id);
            }
        }
        state.node_cost[n.0 as usize] = best;
        state.best_op[n.0 as usize] = best_id;
        if best != old_cost || in_symdiff {
            for &p in &node.parent_ops {
                state.op_cost[p.0 as usize] =
                    op_cost(pd, p, &state.node_cost, &state.mat, Pricing::MinReuse);
                let pe = pd.op(p).parent;
                if queued.insert(pe) {
                    heap.push(Reverse((pd.node(pe).topo, pe)));
                }
            }
        }
    }
    state.total = total_cost(pd, state);
}

// ---------------------------------------------------------------------------
// Benefit heap (monotonicity heuristic)
// ---------------------------------------------------------------------------

/// Max-heap of candidate nodes ordered by benefit upper bounds, with lazy
/// staleness: superseded entries are skipped on access.
#[derive(Debug)]
pub struct BenefitHeap {
    heap: BinaryHeap<(OrdF64, Reverse<PhysEquivId>)>,
    bound: HashMap<PhysEquivId, f64>,
    live: BTreeSet<PhysEquivId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl BenefitHeap {
    pub fn new() -> Self {
        BenefitHeap {
            heap: BinaryHeap::new(),
            bound: HashMap::new(),
            live: BTreeSet::new(),
        }
    }

    pub fn insert(&mut self, id: PhysEquivId, bound: f64) {
        self.bound.insert(id, bound);
        self.live.insert(id);
        self.heap.push((OrdF64(bound), Reverse(id)));
    }

    pub fn update(&mut self, id: PhysEquivId, bound: f64) {
        self.bound.insert(id, bound);
        self.heap.push((OrdF64(bound), Reverse(id)));
    }

    pub fn remove(&mut self, id: PhysEquivId) {
        self.live.remove(&id);
        self.bound.remove(&id);
    }

    pub fn peek(&mut self) -> Option<(PhysEquivId, f64)> {
        while let Some(&(OrdF64(b), Reverse(id))) = self.heap.peek() {
            if self.live.contains(&id) && self.bound.get(&id) == Some(&b) {
                return Some((id, b));
            }
            self.heap.pop();
        }
        None
    }

    pub fn live_ids(&self) -> Vec<PhysEquivId> {
        self.live.iter().copied().collect()
    }

    pub fn is_empty(&mut self) -> bool {
        self.peek().is_none()
    }
}

impl Default for BenefitHeap {
    fn default() -> Self {
        Self::new()
    }
}

// ---------------------------------------------------------------------------
// Greedy selection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct GreedyOptions {
    /// Recompute every candidate's exact benefit each iteration instead of
    /// using the monotonicity heap.
    pub exhaustive_benefits: bool,
    /// Check incremental state against from-scratch recomputation after
    /// every update (exact equality).
    pub validate_incremental: bool,
    pub trace: bool,
}

#[derive(Debug, Clone)]
pub struct GreedyResult {
    pub x: BTreeSet<PhysEquivId>,
    pub plan: Plan,
    pub cost: Cost,
    pub volcano_cost: Cost,
    pub iterations: usize,
    pub benefit_recomputations_per_iteration: Vec<u64>,
    pub total_benefit_recomputations: u64,
    pub cost_propagations: u64,
    pub candidate_count: usize,
    pub trace_lines: Vec<String>,
}

fn check_incremental(pd: &PhysicalDag, state: &PlanState) -> Result<()> {
    let fresh = best_plan_given(pd, &state.mat);
    if !state.annotations_equal(&PlanState {
        propagations: state.propagations,
        ..fresh
    }) {
        return Err(Error::Internal(
            "incremental state diverged from full recomputation".into(),
        ));
    }
    Ok(())
}

/// Exact benefit of adding `x` to the current set: the state is advanced to
/// `X + {x}` and rolled back, both incrementally.
fn exact_benefit(
    pd: &PhysicalDag,
    state: &mut PlanState,
    x: PhysEquivId,
    validate: bool,
) -> Result<f64> {
    let base = state.total;
    let without = state.mat.clone();
    let mut with = without.clone();
    with.insert(x);
    update_cost(pd, state, &with);
    if validate {
        check_incremental(pd, state)?;
    }
    let t = state.total;
    update_cost(pd, state, &without);
    if validate {
        check_incremental(pd, state)?;
    }
    debug_assert_eq!(state.total, base);
    Ok(base - t)
}

/// One pick with the monotonicity heuristic: recompute the top's exact
/// benefit, reorder, and return it once it survives at the top. Returns
/// None when the best exact benefit is not positive.
///
/// Stored bounds are upper bounds only while benefits shrink; adding a
/// member can raise another node's benefit above its stale bound. Before
/// accepting termination, every remaining bound is refreshed once, so a
/// node hidden by a stale bound is still found.
fn monotonic_pick(
    pd: &PhysicalDag,
    state: &mut PlanState,
    heap: &mut BenefitHeap,
    recomputations: &mut u64,
    opts: &GreedyOptions,
) -> Result<Option<(PhysEquivId, f64)>> {
    let mut recomputed: BTreeSet<PhysEquivId> = BTreeSet::new();
    let mut swept = false;
    loop {
        let Some((top, bound)) = heap.peek() else {
            return Ok(None);
        };
        let exact = if recomputed.contains(&top) {
            // The bound is already exact for the current set.
            bound
        } else {
            let exact = exact_benefit(pd, state, top, opts.validate_incremental)?;
            *recomputations += 1;
            heap.update(top, exact);
            recomputed.insert(top);
            let (new_top, _) = heap.peek().expect("entry was just re-inserted");
            if new_top != top {
                continue;
            }
            exact
        };
        if exact > 0.0 {
            return Ok(Some((top, exact)));
        }
        if swept {
            return Ok(None);
        }
        // Verification sweep: refresh every live bound once.
        for cand in heap.live_ids() {
            if !recomputed.contains(&cand) {
                let b = exact_benefit(pd, state, cand, opts.validate_incremental)?;
                *recomputations += 1;
                heap.update(cand, b);
                recomputed.insert(cand);
            }
        }
        swept = true;
    }
}

/// The greedy algorithm: iteratively materialize the node with the highest
/// exact benefit until no node improves the plan.
pub fn greedy_select(
    pd: &PhysicalDag,
    sharability: &SharabilityInfo,
    opts: &GreedyOptions,
) -> Result<GreedyResult> {
    let mut state = best_plan_given(pd, &BTreeSet::new());
    let volcano_cost = state.total;
    let y = candidates(pd, sharability, &state);
    let candidate_count = y.len();

    let mut heap = BenefitHeap::new();
    for &x in &y {
        let degree = sharability
            .degree
            .get(&pd.logical.find(pd.node(x).logical))
            .copied()
            .unwrap_or(1);
        heap.insert(x, state.node_cost[x.0 as usize] * degree as f64);
    }

    let mut live: BTreeSet<PhysEquivId> = y.iter().copied().collect();
    let mut x_set: BTreeSet<PhysEquivId> = BTreeSet::new();
    let mut per_iteration: Vec<u64> = Vec::new();
    let mut trace_lines = Vec::new();
    let mut iterations = 0;

    loop {
        let mut recomputations = 0u64;
        let picked = if opts.exhaustive_benefits {
            let mut best: Option<(PhysEquivId, f64)> = None;
            for &cand in &live {
                let b = exact_benefit(pd, &mut state, cand, opts.validate_incremental)?;
                recomputations += 1;
                let better = match best {
                    None => true,
                    Some((_, bb)) => b > bb,
                };
                if better {
                    best = Some((cand, b));
                }
            }
            best.filter(|(_, b)| *b > 0.0)
        } else {
            monotonic_pick(pd, &mut state, &mut heap, &mut recomputations, opts)?
        };
        if recomputations > 0 {
            per_iteration.push(recomputations);
        }
        let Some((x, benefit)) = picked else {
            break;
        };
        iterations += 1;
        let before = state.total;
        let mut with = x_set.clone();
        with.insert(x);
        update_cost(pd, &mut state, &with);
        if opts.validate_incremental {
            check_incremental(pd, &state)?;
        }
        if state.total >= before {
            return Err(Error::Internal(format!(
                "admitted node {x} did not strictly improve the plan"
            )));
        }
        x_set = with;
        heap.remove(x);
        live.remove(&x);
        if opts.trace {
            trace_lines.push(format!(
                "iter={iterations} picked={x} benefit={benefit:.3} recomputations={recomputations} total={:.3}",
                state.total
            ));
        }
    }

    let plan = extract_plan(pd, &state)?;
    Ok(GreedyResult {
        x: x_set,
        plan,
        cost: state.total,
        volcano_cost,
        iterations,
        total_benefit_recomputations: per_iteration.iter().sum(),
        benefit_recomputations_per_iteration: per_iteration,
        cost_propagations: state.propagations,
        candidate_count,
        trace_lines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::parse_catalog;
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
    fn tree_query_has_no_sharable_nodes() {
        let pd = build(
            "relation A tuples=1000 perblock=10\ncolumn m distinct=10\n\
             relation B tuples=1000 perblock=10\ncolumn m distinct=10\n",
            "(join (= A.m B.m) (scan A) (scan B));",
        );
        let info = compute_sharability(&pd.logical);
        assert!(info.sharable.is_empty());
        for d in info.degree.values() {
            assert_eq!(*d, 1);
        }
        let opts = GreedyOptions::default();
        let res = greedy_select(&pd, &info, &opts).unwrap();
        assert!(res.x.is_empty());
        assert_eq!(res.cost, res.volcano_cost);
    }

    #[test]
    fn motivating_pair_shares_the_common_join() {
        // Q1 = (R join S) join P, Q2 = (R join S) join T; R join S is
        // sharable, R join T is not.
        let cat = "relation R tuples=200000 perblock=10\ncolumn s distinct=200000\ncolumn t distinct=2\ncolumn p distinct=2\n\
                   relation S tuples=200000 perblock=10\ncolumn s distinct=200000\n\
                   relation P tuples=100 perblock=10\ncolumn p distinct=2\n\
                   relation T tuples=100 perblock=10\ncolumn t distinct=2\n";
        let pd = build(
            cat,
            "(join (= R.p P.p) (join (= R.s S.s) (scan R) (scan S)) (scan P));\n\
             (join (= R.t T.t) (join (= R.s S.s) (scan R) (scan S)) (scan T));",
        );
        let info = compute_sharability(&pd.logical);
        // Find the logical node for R join S and check sharability.
        let rs = pd
            .logical
            .alive_equivs()
            .find(|e| {
                let d = pd.logical.describe(e.id);
                d.contains("join") && d.contains("R") && d.contains("S") && !d.contains("P")
                    && !d.contains("T")
            })
            .unwrap();
        assert!(info.sharable.contains(&rs.id), "degree {:?}", info.degree.get(&rs.id));
        let res = greedy_select(&pd, &info, &GreedyOptions::default()).unwrap();
        assert!(res.cost < res.volcano_cost);
        assert!(!res.x.is_empty());
        // The materialized set contains a variant of R join S.
        assert!(res
            .x
            .iter()
            .any(|p| pd.logical.find(pd.node(*p).logical) == rs.id));
    }

    #[test]
    fn update_cost_round_trip_is_identity() {
        let pd = build(
            "relation R tuples=20000 perblock=10\ncolumn b distinct=100\n\
             relation S tuples=20000 perblock=10\ncolumn b distinct=100\n",
            "@weight=5 (join (= R.b S.b) (scan R) (scan S));",
        );
        let base = best_plan_given(&pd, &BTreeSet::new());
        let mut state = base.clone();
        let target = pd
            .nodes()
            .iter()
            .find(|n| !pd.is_base_relation(n.id) && n.id != pd.root)
            .unwrap()
            .id;
        let mut with = BTreeSet::new();
        with.insert(target);
        update_cost(&pd, &mut state, &with);
        let fresh = best_plan_given(&pd, &with);
        assert!(state.annotations_equal(&PlanState {
            propagations: state.propagations,
            ..fresh
        }));
        update_cost(&pd, &mut state, &BTreeSet::new());
        assert!(state.annotations_equal(&PlanState {
            propagations: state.propagations,
            ..base.clone()
        }));
    }

    // With an extreme write cost no materialization can pay for itself;
    // greedy must return the plain plan and the oracle must agree.
    #[test]
    fn huge_write_cost_means_empty_set() {
        let pd = build(
            "costparams seek=10 read=2 write=40000 cpu=0.2 block=4096 memblocks=1536\n\
             relation R tuples=100000 perblock=10\ncolumn b distinct=100000\n\
             relation S tuples=100000 perblock=10\ncolumn b distinct=100000\n",
            "(join (= R.b S.b) (scan R) (scan S));\n(join (= R.b S.b) (scan R) (scan S));",
        );
        let info = compute_sharability(&pd.logical);
        assert!(!info.sharable.is_empty());
        let res = greedy_select(&pd, &info, &GreedyOptions::default()).unwrap();
        assert!(res.x.is_empty());
        assert_eq!(res.cost, res.volcano_cost);
        let oracle = crate::oracle::exhaustive_optimize(
            &pd,
            &info,
            &crate::oracle::OracleOptions::default(),
        )
        .unwrap();
        assert!(oracle.s_opt.is_empty());
        assert_eq!(oracle.opt_cost, res.cost);
    }

    #[test]
    fn greedy_plans_satisfy_input_properties() {
        for seed in [1u64, 4, 8, 12] {
            let inst = crate::testkit::gen_random_instance(seed);
            let cat = parse_catalog(&inst.catalog_text).unwrap();
            let batch = parse_batch(&inst.queries_text, &cat).unwrap();
            let mut dag = build_initial_dag(&batch, &cat).unwrap();
            expand(&mut dag, &RuleSet::default()).unwrap();
            let pd = build_physical_dag(dag).unwrap();
            let info = compute_sharability(&pd.logical);
            let res = greedy_select(&pd, &info, &GreedyOptions::default()).unwrap();
            crate::testkit::check_plan_properties(&pd, &res.plan).unwrap();
            assert_eq!(
                crate::testkit::reevaluate_plan(&pd, &res.plan),
                res.cost,
                "seed {seed}"
            );
        }
    }

    // Materializing one mid-DAG node may change only its ancestors' costs.
    #[test]
    fn update_cost_touches_only_ancestors() {
        let pd = build(
            "relation R tuples=20000 perblock=10\ncolumn b distinct=100\n\
             relation S tuples=20000 perblock=10\ncolumn b distinct=100\n\
             relation T tuples=500 perblock=10\ncolumn b distinct=100\n",
            "(join (= R.b S.b) (scan R) (scan S));\n(scan T);",
        );
        let base = best_plan_given(&pd, &BTreeSet::new());
        let target = pd
            .nodes()
            .iter()
            .find(|n| !pd.is_base_relation(n.id) && n.id != pd.root && n.prop.is_plain())
            .unwrap()
            .id;
        // Ancestor closure of the target in the physical graph.
        let mut ancestors = BTreeSet::new();
        let mut stack = vec![target];
        while let Some(e) = stack.pop() {
            if !ancestors.insert(e) {
                continue;
            }
            for &op in &pd.node(e).parent_ops {
                stack.push(pd.op(op).parent);
            }
        }
        let mut state = base.clone();
        let mut with = BTreeSet::new();
        with.insert(target);
        update_cost(&pd, &mut state, &with);
        for node in pd.nodes() {
            let i = node.id.0 as usize;
            if base.node_cost[i] != state.node_cost[i] {
                assert!(
                    ancestors.contains(&node.id),
                    "{} changed but is not an ancestor of {target}",
                    node.id
                );
            }
        }
    }

    // A single-candidate heap needs exactly one benefit recomputation.
    #[test]
    fn singleton_candidate_recomputed_once() {
        let pd = build(
            "relation R tuples=1000 perblock=10\ncolumn a distinct=10\n",
            "(scan R);\n(scan R);",
        );
        let info = compute_sharability(&pd.logical);
        let base = best_plan_given(&pd, &BTreeSet::new());
        assert_eq!(candidates(&pd, &info, &base).len(), 1);
        let res = greedy_select(&pd, &info, &GreedyOptions::default()).unwrap();
        assert_eq!(res.total_benefit_recomputations, 1);
        // Re-reading a copied scan equals scanning; never beneficial.
        assert!(res.x.is_empty());
    }

    // Doubling a query's weight never decreases the benefit of a node used
    // only by that query.
    #[test]
    fn doubling_query_weight_never_shrinks_benefit() {
        let catalog = "relation R tuples=100000 perblock=10\ncolumn b distinct=100000\n\
                       relation S tuples=100000 perblock=10\ncolumn b distinct=100000\n";
        let benefit_at = |weight: u64| -> f64 {
            let pd = build(
                catalog,
                &format!("@weight={weight} (join (= R.b S.b) (scan R) (scan S));"),
            );
            let base = best_plan_given(&pd, &BTreeSet::new());
            let join_node = pd
                .nodes()
                .iter()
                .find(|n| !pd.is_base_relation(n.id) && n.id != pd.root && n.prop.is_plain())
                .unwrap()
                .id;
            let mut with = BTreeSet::new();
            with.insert(join_node);
            let s = best_plan_given(&pd, &with);
            base.total - s.total
        };
        for w in [1u64, 2, 4, 8] {
            assert!(
                benefit_at(2 * w) >= benefit_at(w),
                "weight {w}: benefit shrank when doubled"
            );
        }
    }

    // Costs are monotone in the materialized set when every member's reuse
    // cost does not exceed its computation cost.
    #[test]
    fn costs_monotone_in_materialized_set() {
        for seed in [0u64, 5, 9, 13] {
            let inst = crate::testkit::gen_random_instance(seed);
            let cat = parse_catalog(&inst.catalog_text).unwrap();
            let batch = parse_batch(&inst.queries_text, &cat).unwrap();
            let mut dag = build_initial_dag(&batch, &cat).unwrap();
            expand(&mut dag, &RuleSet::default()).unwrap();
            let pd = build_physical_dag(dag).unwrap();
            let info = compute_sharability(&pd.logical);
            let base = best_plan_given(&pd, &BTreeSet::new());
            let mat: BTreeSet<_> = candidates(&pd, &info, &base)
                .into_iter()
                .filter(|x| {
                    crate::cost_model::reusecost(&pd, *x) <= base.node_cost[x.0 as usize]
                })
                .collect();
            let with = best_plan_given(&pd, &mat);
            for node in pd.nodes() {
                let i = node.id.0 as usize;
                assert!(
                    with.node_cost[i] <= base.node_cost[i],
                    "seed {seed}: node {} cost rose from {} to {}",
                    node.id,
                    base.node_cost[i],
                    with.node_cost[i]
                );
            }
        }
    }

    #[test]
    fn exhaustive_and_heap_variants_agree() {
        for seed in 0..15 {
            let inst = crate::testkit::gen_random_instance(seed);
            let cat = parse_catalog(&inst.catalog_text).unwrap();
            let batch = parse_batch(&inst.queries_text, &cat).unwrap();
            let mut dag = build_initial_dag(&batch, &cat).unwrap();
            expand(&mut dag, &RuleSet::default()).unwrap();
            let pd = build_physical_dag(dag).unwrap();
            let info = compute_sharability(&pd.logical);
            let heap_run = greedy_select(&pd, &info, &GreedyOptions::default()).unwrap();
            let exhaustive_run = greedy_select(
                &pd,
                &info,
                &GreedyOptions {
                    exhaustive_benefits: true,
                    ..GreedyOptions::default()
                },
            )
            .unwrap();
            assert_eq!(heap_run.x, exhaustive_run.x, "seed {seed}");
            assert_eq!(heap_run.cost, exhaustive_run.cost, "seed {seed}");
        }
    }
}
