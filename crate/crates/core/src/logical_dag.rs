//! The memo: an AND-OR DAG over equivalence nodes (OR) and operation nodes
//! (AND), with hashing-based unification of repeated derivations.
//!
//! Equivalence nodes represent result sets; their children are the
//! alternative operations that produce the result. Operation-node memo keys
//! (operator kind, canonical parameters, input id list) are unique DAG-wide;
//! inserting a derivation that already exists under a different parent
//! unifies the two parents. Join inputs are normalized to the smaller
//! equivalence id first, which makes commutative duplicates hit the memo
//! instead of creating twin nodes.
//!
//! The whole batch hangs under a single pseudo-root whose one child is a
//! no-op operation taking every query root as input; per-query invocation
//! weights live on those input edges.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use crate::catalog::{join_selectivity, selectivity, Catalog, ColumnInfo, DerivedStats};
use crate::error::{Error, Result};
use crate::query_ir::{agg_output_name, AggFn, Atom, LogicalExpr, Predicate, QueryBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub struct EquivNodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub struct OpNodeId(pub u32);

impl fmt::Display for EquivNodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for OpNodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "o{}", self.0)
    }
}

/// Logical operator kind plus parameters; part of the operation memo key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LogicalOp {
    Scan(String),
    Select(Predicate),
    Project(Vec<String>),
    /// Equi-join atoms, canonicalized (smaller column name first, sorted).
    Join(Vec<Atom>),
    Aggregate {
        group_by: Vec<String>,
        aggs: Vec<(AggFn, String)>,
        /// Re-aggregation of partial aggregates: output columns keep the
        /// input aggregate column names.
        reagg: bool,
    },
    /// Pseudo-root operation; one input edge per query with its weight.
    NoOp { weights: Vec<u64> },
}

impl LogicalOp {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LogicalOp::Scan(_) => "scan",
            LogicalOp::Select(_) => "select",
            LogicalOp::Project(_) => "project",
            LogicalOp::Join(_) => "join",
            LogicalOp::Aggregate { .. } => "agg",
            LogicalOp::NoOp { .. } => "noop",
        }
    }

    /// Columns appearing in selection/join predicates (used for the
    /// nomaterialize taint).
    pub fn predicate_columns(&self) -> Vec<&str> {
        match self {
            LogicalOp::Select(p) => p.columns(),
            LogicalOp::Join(atoms) => atoms.iter().flat_map(|a| a.columns()).collect(),
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for LogicalOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogicalOp::Scan(r) => write!(f, "scan {r}"),
            LogicalOp::Select(p) => write!(f, "select {p}"),
            LogicalOp::Project(cols) => write!(f, "project ({})", cols.join(" ")),
            LogicalOp::Join(atoms) => {
                write!(f, "join")?;
                for a in atoms {
                    write!(f, " {a}")?;
                }
                if atoms.is_empty() {
                    write!(f, " (cross)")?;
                }
                Ok(())
            }
            LogicalOp::Aggregate {
                group_by,
                aggs,
                reagg,
            } => {
                write!(f, "{} ({})", if *reagg { "reagg" } else { "agg" }, group_by.join(" "))?;
                for (fun, col) in aggs {
                    write!(f, " ({} {})", fun.name(), col)?;
                }
                Ok(())
            }
            LogicalOp::NoOp { weights } => {
                write!(f, "noop weights={weights:?}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct OpKey {
    op: LogicalOp,
    inputs: Vec<EquivNodeId>,
}

/// What [`LogicalDag::add_op`] did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddOutcome {
    /// Fresh operation node (and possibly a fresh equivalence node).
    Created,
    /// The memo already held the operation under the expected parent.
    Existing,
    /// The memo held the operation under a different parent; the two
    /// equivalence nodes were unified.
    Unified,
}

/// Result of inserting an operation into the memo.
#[derive(Debug, Clone, Copy)]
pub struct AddResult {
    pub parent: EquivNodeId,
    pub op: OpNodeId,
    pub outcome: AddOutcome,
}

#[derive(Debug, Clone)]
pub struct EquivNode {
    pub id: EquivNodeId,
    pub child_ops: BTreeSet<OpNodeId>,
    pub parent_ops: BTreeSet<OpNodeId>,
    pub schema: Vec<String>,
    pub stats: DerivedStats,
    pub topo: u32,
    pub materializable: bool,
    /// Introduced by a subsumption derivation (disjunction or group-by-union
    /// node); Volcano-SH applies its stricter materialization test to these.
    pub subsumption_introduced: bool,
    pub alive: bool,
}

#[derive(Debug, Clone)]
pub struct OpNode {
    pub id: OpNodeId,
    pub op: LogicalOp,
    pub inputs: Vec<EquivNodeId>,
    pub parent: EquivNodeId,
    pub alive: bool,
}

#[derive(Debug, Clone)]
pub struct LogicalDag {
    equivs: Vec<EquivNode>,
    ops: Vec<OpNode>,
    memo: HashMap<OpKey, OpNodeId>,
    /// Canonical expression fingerprint -> equivalence node, for the initial
    /// construction.
    expr_index: HashMap<String, EquivNodeId>,
    /// Id forwarding: unification redirects stale ids to the winner.
    forward: Vec<u32>,
    /// Operations added as subsumption derivations (one result computed from
    /// another); the Volcano-SH prepass switches plans onto these.
    pub subsumption_ops: BTreeSet<OpNodeId>,
    pub root: EquivNodeId,
    pub catalog: Catalog,
}

impl LogicalDag {
    fn new(catalog: Catalog) -> Self {
        LogicalDag {
            equivs: Vec::new(),
            ops: Vec::new(),
            memo: HashMap::new(),
            expr_index: HashMap::new(),
            forward: Vec::new(),
            subsumption_ops: BTreeSet::new(),
            root: EquivNodeId(0),
            catalog,
        }
    }

    /// Resolves an equivalence id through the unification forwarding table.
    pub fn find(&self, id: EquivNodeId) -> EquivNodeId {
        let mut cur = id.0;
        while self.forward[cur as usize] != cur {
            cur = self.forward[cur as usize];
        }
        EquivNodeId(cur)
    }

    pub fn equiv(&self, id: EquivNodeId) -> &EquivNode {
        &self.equivs[self.find(id).0 as usize]
    }

    pub fn equiv_mut(&mut self, id: EquivNodeId) -> &mut EquivNode {
        let id = self.find(id);
        &mut self.equivs[id.0 as usize]
    }

    pub fn op(&self, id: OpNodeId) -> &OpNode {
        &self.ops[id.0 as usize]
    }

    pub fn alive_equivs(&self) -> impl Iterator<Item = &EquivNode> {
        self.equivs.iter().filter(|e| e.alive)
    }

    pub fn alive_ops(&self) -> impl Iterator<Item = &OpNode> {
        self.ops.iter().filter(|o| o.alive)
    }

    pub fn equiv_count(&self) -> usize {
        self.equivs.iter().filter(|e| e.alive).count()
    }

    pub fn op_count(&self) -> usize {
        self.ops.iter().filter(|o| o.alive).count()
    }

    pub fn num_equiv_slots(&self) -> usize {
        self.equivs.len()
    }

    pub fn num_op_slots(&self) -> usize {
        self.ops.len()
    }

    /// The single child operation of the pseudo-root (the weighted no-op).
    pub fn root_op(&self) -> &OpNode {
        let root = self.equiv(self.root);
        let id = root
            .child_ops
            .iter()
            .next()
            .expect("pseudo-root always has its no-op child");
        self.op(*id)
    }

    fn new_equiv(
        &mut self,
        schema: Vec<String>,
        stats: DerivedStats,
        subsumption_introduced: bool,
    ) -> EquivNodeId {
        let id = EquivNodeId(self.equivs.len() as u32);
        self.equivs.push(EquivNode {
            id,
            child_ops: BTreeSet::new(),
            parent_ops: BTreeSet::new(),
            schema,
            stats,
            topo: 0,
            materializable: true,
            subsumption_introduced,
            alive: true,
        });
        self.forward.push(id.0);
        id
    }

    fn canonical_op(&self, op: LogicalOp, inputs: &mut [EquivNodeId]) -> LogicalOp {
        for i in inputs.iter_mut() {
            *i = self.find(*i);
        }
        match op {
            LogicalOp::Join(mut atoms) => {
                inputs.sort();
                for atom in atoms.iter_mut() {
                    if let Atom::ColCol { left, right } = atom {
                        if left > right {
                            std::mem::swap(left, right);
                        }
                    }
                }
                atoms.sort();
                atoms.dedup();
                LogicalOp::Join(atoms)
            }
            LogicalOp::Select(p) => LogicalOp::Select(p.canonicalize()),
            LogicalOp::Aggregate {
                mut group_by,
                mut aggs,
                reagg,
            } => {
                group_by.sort();
                group_by.dedup();
                aggs.sort();
                aggs.dedup();
                LogicalOp::Aggregate {
                    group_by,
                    aggs,
                    reagg,
                }
            }
            other => other,
        }
    }

    /// Inserts an operation into the memo. Creates a fresh parent
    /// equivalence node unless `target` is given or the key already exists.
    /// A memo hit under a different parent than `target` unifies the two
    /// nodes (cascading as needed).
    pub fn add_op(
        &mut self,
        op: LogicalOp,
        inputs: Vec<EquivNodeId>,
        target: Option<EquivNodeId>,
    ) -> Result<AddResult> {
        let mut inputs = inputs;
        let op = self.canonical_op(op, &mut inputs);
        let key = OpKey {
            op: op.clone(),
            inputs: inputs.clone(),
        };
        if let Some(&existing) = self.memo.get(&key) {
            let parent = self.find(self.ops[existing.0 as usize].parent);
            return match target.map(|t| self.find(t)) {
                Some(t) if t != parent => {
                    let winner = self.unify(parent, t)?;
                    Ok(AddResult {
                        parent: winner,
                        op: existing,
                        outcome: AddOutcome::Unified,
                    })
                }
                _ => Ok(AddResult {
                    parent,
                    op: existing,
                    outcome: AddOutcome::Existing,
                }),
            };
        }
        let parent = match target.map(|t| self.find(t)) {
            Some(t) => t,
            None => {
                let schema = self.derive_schema(&op, &inputs)?;
                let stats = self.derive_stats(&op, &inputs)?;
                self.new_equiv(schema, stats, false)
            }
        };
        let id = OpNodeId(self.ops.len() as u32);
        self.ops.push(OpNode {
            id,
            op,
            inputs: inputs.clone(),
            parent,
            alive: true,
        });
        self.memo.insert(key, id);
        self.equivs[parent.0 as usize].child_ops.insert(id);
        for input in inputs {
            self.equivs[input.0 as usize].parent_ops.insert(id);
        }
        Ok(AddResult {
            parent,
            op: id,
            outcome: AddOutcome::Created,
        })
    }

    fn derive_schema(&self, op: &LogicalOp, inputs: &[EquivNodeId]) -> Result<Vec<String>> {
        Ok(match op {
            LogicalOp::Scan(name) => {
                let rel = self.catalog.relation(name)?;
                rel.columns
                    .iter()
                    .map(|c| format!("{}.{}", name, c.name))
                    .collect()
            }
            LogicalOp::Select(_) => self.equiv(inputs[0]).schema.clone(),
            LogicalOp::Project(cols) => cols.clone(),
            LogicalOp::Join(_) => {
                let mut schema = self.equiv(inputs[0]).schema.clone();
                schema.extend(self.equiv(inputs[1]).schema.iter().cloned());
                schema
            }
            LogicalOp::Aggregate {
                group_by,
                aggs,
                reagg,
            } => {
                let mut out = group_by.clone();
                for (f, col) in aggs {
                    if *reagg {
                        out.push(col.clone());
                    } else {
                        out.push(agg_output_name(*f, col));
                    }
                }
                out
            }
            LogicalOp::NoOp { .. } => Vec::new(),
        })
    }

    fn derive_stats(&self, op: &LogicalOp, inputs: &[EquivNodeId]) -> Result<DerivedStats> {
        let params = &self.catalog.params;
        Ok(match op {
            LogicalOp::Scan(name) => {
                DerivedStats::of_base(self.catalog.relation(name)?, params)
            }
            LogicalOp::Select(pred) => {
                let input = &self.equiv(inputs[0]).stats;
                let sel = selectivity(pred, input)?;
                let rows = (input.rows as f64 * sel).ceil() as u64;
                DerivedStats {
                    rows,
                    ..input.clone()
                }
            }
            LogicalOp::Project(cols) => {
                let input = &self.equiv(inputs[0]).stats;
                DerivedStats {
                    rows: input.rows,
                    width_bytes: input.width_bytes,
                    tuples_per_block: input.tuples_per_block,
                    columns: cols
                        .iter()
                        .map(|c| input.column(c).cloned())
                        .collect::<Result<_>>()?,
                }
            }
            LogicalOp::Join(atoms) => {
                let left = &self.equiv(inputs[0]).stats;
                let right = &self.equiv(inputs[1]).stats;
                let sel = join_selectivity(atoms, left, right)?;
                let rows = (left.rows as f64 * right.rows as f64 * sel).ceil() as u64;
                let width = left.width_bytes + right.width_bytes;
                let tuples_per_block =
                    ((params.block_size_bytes as f64 / width).floor() as u64).max(1);
                let mut columns = left.columns.clone();
                columns.extend(right.columns.iter().cloned());
                DerivedStats {
                    rows,
                    width_bytes: width,
                    tuples_per_block,
                    columns,
                }
            }
            LogicalOp::Aggregate {
                group_by, aggs, reagg,
            } => {
                let input = &self.equiv(inputs[0]).stats;
                let mut groups = 1f64;
                for g in group_by {
                    groups *= input.distinct(g)? as f64;
                    groups = groups.min(input.rows.max(1) as f64);
                }
                let rows = if group_by.is_empty() {
                    1
                } else {
                    (groups.ceil() as u64).min(input.rows).max(1.min(input.rows))
                };
                let mut columns: Vec<ColumnInfo> = group_by
                    .iter()
                    .map(|g| input.column(g).cloned())
                    .collect::<Result<_>>()?;
                for (f, col) in aggs {
                    let name = if *reagg {
                        col.clone()
                    } else {
                        agg_output_name(*f, col)
                    };
                    columns.push(ColumnInfo {
                        name,
                        base_distinct: rows.max(1),
                    });
                }
                DerivedStats {
                    rows,
                    width_bytes: input.width_bytes,
                    tuples_per_block: input.tuples_per_block,
                    columns,
                }
            }
            LogicalOp::NoOp { .. } => DerivedStats {
                rows: 0,
                width_bytes: 1.0,
                tuples_per_block: 1,
                columns: Vec::new(),
            },
        })
    }

    /// True if `needle` occurs in the sub-DAG rooted at `from`.
    fn reaches(&self, from: EquivNodeId, needle: EquivNodeId) -> bool {
        let mut stack = vec![self.find(from)];
        let mut seen = HashSet::new();
        let needle = self.find(needle);
        while let Some(e) = stack.pop() {
            if e == needle {
                return true;
            }
            if !seen.insert(e) {
                continue;
            }
            let node = &self.equivs[e.0 as usize];
            for &op in &node.child_ops {
                let op = &self.ops[op.0 as usize];
                if op.alive {
                    stack.extend(op.inputs.iter().map(|i| self.find(*i)));
                }
            }
        }
        false
    }

    /// Merges `loser` into `winner`: re-hangs child and parent operations,
    /// rehashes affected memo keys, and cascades any operation merges that
    /// become key-identical. Fails if the two nodes stand in an
    /// ancestor/descendant relation (the merge would create a cycle).
    pub fn unify(&mut self, winner: EquivNodeId, loser: EquivNodeId) -> Result<EquivNodeId> {
        let mut work = vec![(winner, loser)];
        let mut final_winner = self.find(winner);
        let mut first = true;
        while let Some((w, l)) = work.pop() {
            let w = self.find(w);
            let l = self.find(l);
            if w == l {
                if first {
                    return Err(Error::BadUnification(format!(
                        "{w} with itself"
                    )));
                }
                first = false;
                continue;
            }
            first = false;
            if self.reaches(w, l) || self.reaches(l, w) {
                return Err(Error::BadUnification(format!(
                    "merging {w} and {l} would create a cycle"
                )));
            }
            self.merge_into(w, l, &mut work);
            final_winner = self.find(final_winner);
        }
        Ok(final_winner)
    }

    fn op_key(&self, op: &OpNode) -> OpKey {
        OpKey {
            op: op.op.clone(),
            inputs: op.inputs.clone(),
        }
    }

    fn merge_into(
        &mut self,
        winner: EquivNodeId,
        loser: EquivNodeId,
        work: &mut Vec<(EquivNodeId, EquivNodeId)>,
    ) {
        // Re-hang the loser's derivations onto the winner.
        let child_ops: Vec<OpNodeId> = self.equivs[loser.0 as usize]
            .child_ops
            .iter()
            .copied()
            .collect();
        for op_id in child_ops {
            if !self.ops[op_id.0 as usize].alive {
                continue;
            }
            self.ops[op_id.0 as usize].parent = winner;
            self.equivs[winner.0 as usize].child_ops.insert(op_id);
        }

        // Redirect parent operations; their memo keys change, which may
        // reveal duplicate operations whose parents must unify in turn.
        let parent_ops: Vec<OpNodeId> = self.equivs[loser.0 as usize]
            .parent_ops
            .iter()
            .copied()
            .collect();
        for op_id in parent_ops {
            if !self.ops[op_id.0 as usize].alive {
                continue;
            }
            let old_key = self.op_key(&self.ops[op_id.0 as usize]);
            self.memo.remove(&old_key);
            {
                let op = &mut self.ops[op_id.0 as usize];
                for input in op.inputs.iter_mut() {
                    if *input == loser {
                        *input = winner;
                    }
                }
                if let LogicalOp::Join(_) = op.op {
                    op.inputs.sort();
                }
            }
            let new_key = self.op_key(&self.ops[op_id.0 as usize]);
            if let Some(&existing) = self.memo.get(&new_key) {
                // Duplicate operation: drop this one, unify the parents.
                let dying_parent = self.ops[op_id.0 as usize].parent;
                let surviving_parent = self.ops[existing.0 as usize].parent;
                self.kill_op(op_id);
                let (sp, dp) = (self.find(surviving_parent), self.find(dying_parent));
                if sp != dp {
                    work.push((sp, dp));
                }
            } else {
                self.memo.insert(new_key, op_id);
                self.equivs[winner.0 as usize].parent_ops.insert(op_id);
            }
        }

        let loser_node = &mut self.equivs[loser.0 as usize];
        loser_node.alive = false;
        loser_node.child_ops.clear();
        loser_node.parent_ops.clear();
        let loser_mat = loser_node.materializable;
        let loser_sub = loser_node.subsumption_introduced;
        let winner_node = &mut self.equivs[winner.0 as usize];
        winner_node.materializable &= loser_mat;
        winner_node.subsumption_introduced |= loser_sub;
        self.forward[loser.0 as usize] = winner.0;
    }

    fn kill_op(&mut self, op_id: OpNodeId) {
        let op = &mut self.ops[op_id.0 as usize];
        op.alive = false;
        let parent = op.parent;
        let inputs = op.inputs.clone();
        self.equivs[parent.0 as usize].child_ops.remove(&op_id);
        for input in inputs {
            // The op may be referenced from forwarded ids; remove from the
            // resolved node as well as the recorded one.
            self.equivs[input.0 as usize].parent_ops.remove(&op_id);
            let resolved = self.find(input);
            self.equivs[resolved.0 as usize].parent_ops.remove(&op_id);
        }
    }

    /// Drops nodes unreachable from the pseudo-root.
    pub fn prune_unreachable(&mut self) {
        let mut reachable_e = HashSet::new();
        let mut reachable_o = HashSet::new();
        let mut stack = vec![self.find(self.root)];
        while let Some(e) = stack.pop() {
            if !reachable_e.insert(e) {
                continue;
            }
            for &op_id in &self.equivs[e.0 as usize].child_ops {
                let op = &self.ops[op_id.0 as usize];
                if op.alive && reachable_o.insert(op_id) {
                    stack.extend(op.inputs.iter().map(|i| self.find(*i)));
                }
            }
        }
        let dead_ops: Vec<OpNodeId> = self
            .ops
            .iter()
            .filter(|o| o.alive && !reachable_o.contains(&o.id))
            .map(|o| o.id)
            .collect();
        for op_id in dead_ops {
            let key = self.op_key(&self.ops[op_id.0 as usize]);
            self.memo.remove(&key);
            self.kill_op(op_id);
        }
        for e in self.equivs.iter_mut() {
            if e.alive && !reachable_e.contains(&e.id) {
                e.alive = false;
            }
        }
    }

    /// Numbers equivalence nodes so every node's number is greater than
    /// those of all nodes in its sub-DAG. Fails on cycles.
    pub fn assign_topo_numbers(&mut self) -> Result<()> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            White,
            Gray,
            Black,
        }
        let mut marks = vec![Mark::White; self.equivs.len()];
        let mut order: Vec<EquivNodeId> = Vec::new();
        // Iterative DFS with explicit post-visit frames.
        let root = self.find(self.root);
        let mut stack: Vec<(EquivNodeId, bool)> = vec![(root, false)];
        while let Some((e, post)) = stack.pop() {
            if post {
                marks[e.0 as usize] = Mark::Black;
                order.push(e);
                continue;
            }
            match marks[e.0 as usize] {
                Mark::Black => continue,
                Mark::Gray => {
                    return Err(Error::CycleDetected(format!("at {e}")));
                }
                Mark::White => {}
            }
            marks[e.0 as usize] = Mark::Gray;
            stack.push((e, true));
            let node = &self.equivs[e.0 as usize];
            for &op_id in node.child_ops.iter().rev() {
                let op = &self.ops[op_id.0 as usize];
                if !op.alive {
                    continue;
                }
                for &input in op.inputs.iter().rev() {
                    let input = self.find(input);
                    match marks[input.0 as usize] {
                        Mark::White => stack.push((input, false)),
                        Mark::Gray => {
                            return Err(Error::CycleDetected(format!("{input} under {e}")));
                        }
                        Mark::Black => {}
                    }
                }
            }
        }
        for (number, e) in order.iter().enumerate() {
            self.equivs[e.0 as usize].topo = number as u32;
        }
        Ok(())
    }

    /// Alive equivalence nodes in ascending topological order (descendants
    /// first).
    pub fn topo_order(&self) -> Vec<EquivNodeId> {
        let mut ids: Vec<EquivNodeId> = self.alive_equivs().map(|e| e.id).collect();
        ids.sort_by_key(|e| self.equiv(*e).topo);
        ids
    }

    /// Marks results that depend on any of the given columns (and all their
    /// ancestors) as not materializable.
    pub fn apply_nomaterialize(&mut self, columns: &[String]) {
        if columns.is_empty() {
            return;
        }
        let flagged: HashSet<&str> = columns.iter().map(|s| s.as_str()).collect();
        let order = self.topo_order();
        for e in order {
            let node = &self.equivs[e.0 as usize];
            let mut tainted = false;
            for &op_id in &node.child_ops {
                let op = &self.ops[op_id.0 as usize];
                if !op.alive {
                    continue;
                }
                if op
                    .op
                    .predicate_columns()
                    .iter()
                    .any(|c| flagged.contains(c))
                {
                    tainted = true;
                    break;
                }
                if op
                    .inputs
                    .iter()
                    .any(|i| !self.equiv(*i).materializable)
                {
                    tainted = true;
                    break;
                }
            }
            if tainted {
                self.equivs[e.0 as usize].materializable = false;
            }
        }
    }

    /// Checks that no two alive operations share a memo key and that all
    /// edges are consistent. Used by debug assertions and tests.
    pub fn check_consistency(&self) -> Result<()> {
        let mut seen: HashMap<OpKey, OpNodeId> = HashMap::new();
        for op in self.alive_ops() {
            let key = self.op_key(op);
            if let Some(prev) = seen.insert(key, op.id) {
                return Err(Error::Internal(format!(
                    "memo key shared by {} and {}",
                    prev, op.id
                )));
            }
            let parent = &self.equivs[op.parent.0 as usize];
            if !parent.alive || !parent.child_ops.contains(&op.id) {
                return Err(Error::Internal(format!(
                    "{} not registered under its parent {}",
                    op.id, op.parent
                )));
            }
            for input in &op.inputs {
                let node = self.equiv(*input);
                if !node.alive {
                    return Err(Error::Internal(format!(
                        "{} has dead input {input}",
                        op.id
                    )));
                }
                if !node.parent_ops.contains(&op.id) {
                    return Err(Error::Internal(format!(
                        "{} missing from parent_ops of {input}",
                        op.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Compact description of an equivalence node (first derivation,
    /// rendered recursively).
    pub fn describe(&self, id: EquivNodeId) -> String {
        fn go(dag: &LogicalDag, id: EquivNodeId, memo: &mut HashMap<EquivNodeId, String>) -> String {
            let id = dag.find(id);
            if let Some(s) = memo.get(&id) {
                return s.clone();
            }
            let node = dag.equiv(id);
            let Some(&first) = node.child_ops.iter().next() else {
                return format!("{id}?");
            };
            let op = dag.op(first);
            let rendered = match &op.op {
                LogicalOp::Scan(r) => r.clone(),
                LogicalOp::Select(p) => {
                    format!("select[{p}]({})", go(dag, op.inputs[0], memo))
                }
                LogicalOp::Project(cols) => {
                    format!("project[{}]({})", cols.join(","), go(dag, op.inputs[0], memo))
                }
                LogicalOp::Join(atoms) => {
                    let preds: Vec<String> = atoms.iter().map(|a| a.to_string()).collect();
                    format!(
                        "join[{}]({}, {})",
                        preds.join(" "),
                        go(dag, op.inputs[0], memo),
                        go(dag, op.inputs[1], memo)
                    )
                }
                LogicalOp::Aggregate {
                    group_by, aggs, reagg,
                } => {
                    let aggs: Vec<String> = aggs
                        .iter()
                        .map(|(f, c)| format!("{} {c}", f.name()))
                        .collect();
                    format!(
                        "{}[{}; {}]({})",
                        if *reagg { "reagg" } else { "agg" },
                        group_by.join(","),
                        aggs.join(","),
                        go(dag, op.inputs[0], memo)
                    )
                }
                LogicalOp::NoOp { .. } => "batch-root".to_string(),
            };
            memo.insert(id, rendered.clone());
            rendered
        }
        go(self, id, &mut HashMap::new())
    }

    /// Deterministic text rendering of the DAG for golden tests: nodes
    /// sorted by id, alive nodes only.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in self.alive_equivs() {
            out.push_str(&format!(
                "equiv {} topo={} rows={} mat={}{} schema=[{}]\n",
                e.id,
                e.topo,
                e.stats.rows,
                e.materializable,
                if e.subsumption_introduced { " subs" } else { "" },
                e.schema.join(","),
            ));
            for op_id in &e.child_ops {
                let op = self.op(*op_id);
                if !op.alive {
                    continue;
                }
                let inputs: Vec<String> = op.inputs.iter().map(|i| i.to_string()).collect();
                out.push_str(&format!(
                    "  op {} {} inputs=[{}]\n",
                    op.id,
                    op.op,
                    inputs.join(","),
                ));
            }
        }
        out
    }
}

/// Recursively inserts an expression tree, unifying syntactic duplicates via
/// the memo.
fn insert_expr(dag: &mut LogicalDag, expr: &LogicalExpr) -> Result<EquivNodeId> {
    let fingerprint = expr.to_string();
    if let Some(&id) = dag.expr_index.get(&fingerprint) {
        return Ok(dag.find(id));
    }
    let id = match expr {
        LogicalExpr::Scan(name) => {
            dag.catalog.relation(name)?;
            dag.add_op(LogicalOp::Scan(name.clone()), vec![], None)?.parent
        }
        LogicalExpr::Select(pred, input) => {
            let child = insert_expr(dag, input)?;
            dag.add_op(LogicalOp::Select(pred.clone()), vec![child], None)?.parent
        }
        LogicalExpr::Project(cols, input) => {
            let child = insert_expr(dag, input)?;
            dag.add_op(LogicalOp::Project(cols.clone()), vec![child], None)?.parent
        }
        LogicalExpr::Join(pred, left, right) => {
            let l = insert_expr(dag, left)?;
            let r = insert_expr(dag, right)?;
            let atoms: Vec<Atom> = pred.atoms().into_iter().cloned().collect();
            dag.add_op(LogicalOp::Join(atoms), vec![l, r], None)?.parent
        }
        LogicalExpr::Aggregate {
            group_by,
            aggs,
            input,
        } => {
            let child = insert_expr(dag, input)?;
            dag.add_op(
                LogicalOp::Aggregate {
                    group_by: group_by.clone(),
                    aggs: aggs.clone(),
                    reagg: false,
                },
                vec![child],
                None,
            )?
            .parent
        }
    };
    dag.expr_index.insert(fingerprint, id);
    Ok(id)
}

/// Builds the initial AND-OR DAG for a batch: one equivalence node per
/// distinct subexpression, a pseudo-root no-op over all query roots, and
/// invocation weights on the root's input edges.
pub fn build_initial_dag(batch: &QueryBatch, catalog: &Catalog) -> Result<LogicalDag> {
    if batch.queries.is_empty() {
        return Err(Error::Internal("empty batch".into()));
    }
    let mut dag = LogicalDag::new(catalog.clone());
    let mut roots = Vec::new();
    let mut weights = Vec::new();
    for (expr, weight) in &batch.queries {
        roots.push(insert_expr(&mut dag, expr)?);
        weights.push(*weight);
    }
    let root = dag.add_op(LogicalOp::NoOp { weights }, roots, None)?.parent;
    dag.root = root;
    dag.assign_topo_numbers()?;
    debug_assert!(dag.check_consistency().is_ok());
    Ok(dag)
}
