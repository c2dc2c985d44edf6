//! Physical refinement of the logical DAG: equivalence nodes keyed by
//! (logical node, physical property), algorithm nodes, and enforcer nodes.
//!
//! Properties are generated only where interesting: sort orders required by a
//! merge join or sort-based aggregation above, and indexes on columns probed
//! by an indexed join or indexed select. Enforcers run strictly from the
//! plain variant towards stronger variants (sort, then build-index), so the
//! physical DAG stays acyclic by construction.
//!
//! A clustered index is modeled as the only index kind. Building an index
//! implies materializing its input, so an index property on an intermediate
//! result is usable only when that node is in the materialized set; for base
//! relations the catalog index is free.

use std::collections::{BTreeSet, HashMap};

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::logical_dag::{EquivNodeId, LogicalDag, LogicalOp, OpNodeId};
use crate::query_ir::{Atom, Predicate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub struct PhysEquivId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub struct PhysOpId(pub u32);

impl std::fmt::Display for PhysEquivId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl std::fmt::Display for PhysOpId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "q{}", self.0)
    }
}

/// Physical property: a (possibly empty) sort order plus an optional
/// clustered index. An index on `c` implies the data is stored in `c` order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, serde::Serialize)]
pub struct PhysProp {
    pub sort: Vec<String>,
    pub index_on: Option<String>,
}

impl PhysProp {
    pub fn plain() -> PhysProp {
        PhysProp::default()
    }

    pub fn sorted(cols: Vec<String>) -> PhysProp {
        PhysProp {
            sort: cols,
            index_on: None,
        }
    }

    pub fn indexed(col: String) -> PhysProp {
        PhysProp {
            sort: vec![col.clone()],
            index_on: Some(col),
        }
    }

    pub fn is_plain(&self) -> bool {
        self.sort.is_empty() && self.index_on.is_none()
    }

    /// True if a result guaranteeing `self` can serve where `required` is
    /// expected: the required sort must be a prefix of the guaranteed one and
    /// index demands must match exactly.
    pub fn satisfies(&self, required: &PhysProp) -> bool {
        if required.index_on.is_some() && required.index_on != self.index_on {
            return false;
        }
        required.sort.len() <= self.sort.len()
            && self.sort[..required.sort.len()] == required.sort[..]
    }

    pub fn render(&self) -> String {
        match (&self.index_on, self.sort.is_empty()) {
            (Some(c), _) => format!("indexed({c})"),
            (None, true) => "plain".to_string(),
            (None, false) => format!("sorted({})", self.sort.join(",")),
        }
    }
}

/// Physical operator: an algorithm implementing a logical operation, or a
/// property enforcer.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PhysOpKind {
    TableScan { relation: String },
    /// Zero-cost access path for a base relation with a catalog clustered
    /// index; priced per probe by the consuming operator.
    StoredIndexedBase { relation: String },
    IndexedSelect { pred: Predicate, index_col: String },
    Filter { pred: Predicate },
    Project { cols: Vec<String> },
    /// `inputs[0]` = outer, `inputs[1]` = inner.
    NestedLoopsJoin,
    MergeJoin,
    /// `inputs[0]` = outer, `inputs[1]` = inner (indexed on `probe_col`).
    IndexedJoin { probe_col: String },
    SortAgg,
    NoOp { weights: Vec<u64> },
    Sort,
    BuildIndex { col: String },
}

impl PhysOpKind {
    pub fn is_enforcer(&self) -> bool {
        matches!(self, PhysOpKind::Sort | PhysOpKind::BuildIndex { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            PhysOpKind::TableScan { .. } => "scan",
            PhysOpKind::StoredIndexedBase { .. } => "stored-index",
            PhysOpKind::IndexedSelect { .. } => "indexed-select",
            PhysOpKind::Filter { .. } => "filter",
            PhysOpKind::Project { .. } => "project",
            PhysOpKind::NestedLoopsJoin => "nested-loops-join",
            PhysOpKind::MergeJoin => "merge-join",
            PhysOpKind::IndexedJoin { .. } => "indexed-join",
            PhysOpKind::SortAgg => "sort-agg",
            PhysOpKind::NoOp { .. } => "noop",
            PhysOpKind::Sort => "sort",
            PhysOpKind::BuildIndex { .. } => "build-index",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhysEquivNode {
    pub id: PhysEquivId,
    pub logical: EquivNodeId,
    pub prop: PhysProp,
    pub child_ops: Vec<PhysOpId>,
    pub parent_ops: Vec<PhysOpId>,
    pub topo: u32,
}

#[derive(Debug, Clone)]
pub struct PhysOpNode {
    pub id: PhysOpId,
    pub kind: PhysOpKind,
    pub inputs: Vec<PhysEquivId>,
    pub parent: PhysEquivId,
    /// The logical operation this algorithm implements (None for enforcers
    /// and the stored-base access path).
    pub logical_op: Option<OpNodeId>,
}

#[derive(Debug)]
pub struct PhysicalDag {
    pub logical: LogicalDag,
    nodes: Vec<PhysEquivNode>,
    ops: Vec<PhysOpNode>,
    by_key: HashMap<(EquivNodeId, PhysProp), PhysEquivId>,
    pub root: PhysEquivId,
    /// Physical nodes in ascending topological order.
    topo_order: Vec<PhysEquivId>,
}

impl PhysicalDag {
    pub fn node(&self, id: PhysEquivId) -> &PhysEquivNode {
        &self.nodes[id.0 as usize]
    }

    pub fn op(&self, id: PhysOpId) -> &PhysOpNode {
        &self.ops[id.0 as usize]
    }

    pub fn nodes(&self) -> &[PhysEquivNode] {
        &self.nodes
    }

    pub fn ops(&self) -> &[PhysOpNode] {
        &self.ops
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn op_count(&self) -> usize {
        self.ops.len()
    }

    pub fn catalog(&self) -> &Catalog {
        &self.logical.catalog
    }

    pub fn lookup(&self, logical: EquivNodeId, prop: &PhysProp) -> Option<PhysEquivId> {
        self.by_key
            .get(&(self.logical.find(logical), prop.clone()))
            .copied()
    }

    pub fn variants(&self, logical: EquivNodeId) -> Vec<PhysEquivId> {
        let logical = self.logical.find(logical);
        let mut out: Vec<PhysEquivId> = self
            .by_key
            .iter()
            .filter(|((l, _), _)| *l == logical)
            .map(|(_, id)| *id)
            .collect();
        out.sort();
        out
    }

    pub fn topo_order(&self) -> &[PhysEquivId] {
        &self.topo_order
    }

    /// Enforcer operations rooted at this node: for the plain variant, the
    /// sort enforcers to each interesting order; for a sorted variant, the
    /// build-index enforcer to the matching index property. Chains are never
    /// longer than two (sort, then index).
    pub fn enforcer_edges(&self, id: PhysEquivId) -> Vec<(PhysOpId, PhysProp)> {
        self.node(id)
            .parent_ops
            .iter()
            .filter(|o| self.op(**o).kind.is_enforcer())
            .map(|o| (*o, self.node(self.op(*o).parent).prop.clone()))
            .collect()
    }

    /// True if the node's logical equivalence node is a stored base relation
    /// (its only derivations are scans).
    pub fn is_base_relation(&self, id: PhysEquivId) -> bool {
        let logical = self.logical.equiv(self.node(id).logical);
        logical
            .child_ops
            .iter()
            .all(|o| matches!(self.logical.op(*o).op, LogicalOp::Scan(_)))
    }

    /// True if the node carries an index that exists in the catalog (free
    /// access path, no materialization needed).
    pub fn is_catalog_indexed_base(&self, id: PhysEquivId) -> bool {
        let node = self.node(id);
        let Some(col) = &node.prop.index_on else {
            return false;
        };
        let logical = self.logical.equiv(node.logical);
        logical.child_ops.iter().any(|o| {
            if let LogicalOp::Scan(rel) = &self.logical.op(*o).op {
                if let Ok(stats) = self.logical.catalog.relation(rel) {
                    return stats
                        .clustered_index_on
                        .as_ref()
                        .map(|c| format!("{rel}.{c}") == *col)
                        .unwrap_or(false);
                }
            }
            false
        })
    }

    pub fn describe_node(&self, id: PhysEquivId) -> String {
        let node = self.node(id);
        format!(
            "{} {}",
            self.logical.describe(node.logical),
            node.prop.render()
        )
    }

    /// Deterministic dump grouped under logical node ids.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut by_logical: Vec<(EquivNodeId, PhysEquivId)> = self
            .nodes
            .iter()
            .map(|n| (n.logical, n.id))
            .collect();
        by_logical.sort();
        let mut last = None;
        for (logical, id) in by_logical {
            if Some(logical) != last {
                out.push_str(&format!("logical {logical}\n"));
                last = Some(logical);
            }
            let node = self.node(id);
            out.push_str(&format!("  phys {} {} topo={}\n", id, node.prop.render(), node.topo));
            for op_id in &node.child_ops {
                let op = self.op(*op_id);
                let inputs: Vec<String> = op.inputs.iter().map(|i| i.to_string()).collect();
                out.push_str(&format!(
                    "    op {} {} inputs=[{}]\n",
                    op.id,
                    op.kind.name(),
                    inputs.join(",")
                ));
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

struct Builder {
    nodes: Vec<PhysEquivNode>,
    ops: Vec<PhysOpNode>,
    by_key: HashMap<(EquivNodeId, PhysProp), PhysEquivId>,
    op_memo: HashMap<(PhysOpKind, Vec<PhysEquivId>, PhysEquivId), PhysOpId>,
}

impl Builder {
    fn node_id(&mut self, logical: EquivNodeId, prop: PhysProp) -> PhysEquivId {
        if let Some(&id) = self.by_key.get(&(logical, prop.clone())) {
            return id;
        }
        let id = PhysEquivId(self.nodes.len() as u32);
        self.nodes.push(PhysEquivNode {
            id,
            logical,
            prop: prop.clone(),
            child_ops: Vec::new(),
            parent_ops: Vec::new(),
            topo: 0,
        });
        self.by_key.insert((logical, prop), id);
        id
    }

    fn add_op(
        &mut self,
        kind: PhysOpKind,
        inputs: Vec<PhysEquivId>,
        parent: PhysEquivId,
        logical_op: Option<OpNodeId>,
    ) -> PhysOpId {
        let key = (kind.clone(), inputs.clone(), parent);
        if let Some(&id) = self.op_memo.get(&key) {
            return id;
        }
        let id = PhysOpId(self.ops.len() as u32);
        self.ops.push(PhysOpNode {
            id,
            kind,
            inputs: inputs.clone(),
            parent,
            logical_op,
        });
        self.op_memo.insert(key, id);
        self.nodes[parent.0 as usize].child_ops.push(id);
        for input in inputs {
            self.nodes[input.0 as usize].parent_ops.push(id);
        }
        id
    }
}

/// Sort lists required by a join's sides, in canonical atom order.
fn join_side_cols(dag: &LogicalDag, atoms: &[Atom], left: EquivNodeId) -> (Vec<String>, Vec<String>) {
    let left_schema: BTreeSet<&String> = dag.equiv(left).schema.iter().collect();
    let mut l_cols = Vec::new();
    let mut r_cols = Vec::new();
    for atom in atoms {
        if let Atom::ColCol { left: a, right: b } = atom {
            if left_schema.contains(a) {
                l_cols.push(a.clone());
                r_cols.push(b.clone());
            } else {
                l_cols.push(b.clone());
                r_cols.push(a.clone());
            }
        }
    }
    (l_cols, r_cols)
}

/// Columns of col-constant conjunct atoms of a selection predicate, in
/// order, deduplicated. These are the candidate index columns.
fn indexable_columns(pred: &Predicate) -> Vec<String> {
    let mut cols = Vec::new();
    for conj in pred.conjuncts() {
        if let Predicate::Atom(Atom::ColConst { column, .. }) = conj {
            if !cols.contains(column) {
                cols.push(column.clone());
            }
        }
    }
    cols
}

/// The prefix of `sort` consisting of retained columns.
fn retained_prefix(sort: &[String], cols: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for c in sort {
        if cols.contains(c) {
            out.push(c.clone());
        } else {
            break;
        }
    }
    out
}

/// Refines an expanded logical DAG into the physical DAG.
pub fn build_physical_dag(logical: LogicalDag) -> Result<PhysicalDag> {
    let mut b = Builder {
        nodes: Vec::new(),
        ops: Vec::new(),
        by_key: HashMap::new(),
        op_memo: HashMap::new(),
    };

    // Pass 1: interesting properties per logical node, read off parent
    // operations.
    let mut interesting: HashMap<EquivNodeId, BTreeSet<PhysProp>> = HashMap::new();
    let add_sort = |map: &mut HashMap<EquivNodeId, BTreeSet<PhysProp>>,
                        e: EquivNodeId,
                        cols: Vec<String>| {
        if !cols.is_empty() {
            map.entry(e).or_default().insert(PhysProp::sorted(cols));
        }
    };
    let order = logical.topo_order();
    for &e in &order {
        interesting.entry(e).or_default();
    }
    for op in logical.alive_ops() {
        match &op.op {
            LogicalOp::Join(atoms) if !atoms.is_empty() => {
                let l = logical.find(op.inputs[0]);
                let r = logical.find(op.inputs[1]);
                let (l_cols, r_cols) = join_side_cols(&logical, atoms, l);
                add_sort(&mut interesting, l, l_cols.clone());
                add_sort(&mut interesting, r, r_cols.clone());
                if atoms.len() == 1 {
                    // Either side can be the indexed inner of an indexed join.
                    interesting
                        .entry(l)
                        .or_default()
                        .insert(PhysProp::indexed(l_cols[0].clone()));
                    add_sort(&mut interesting, l, vec![l_cols[0].clone()]);
                    interesting
                        .entry(r)
                        .or_default()
                        .insert(PhysProp::indexed(r_cols[0].clone()));
                    add_sort(&mut interesting, r, vec![r_cols[0].clone()]);
                }
            }
            LogicalOp::Aggregate { group_by, .. } if !group_by.is_empty() => {
                let input = logical.find(op.inputs[0]);
                add_sort(&mut interesting, input, group_by.clone());
            }
            LogicalOp::Select(pred) => {
                let input = logical.find(op.inputs[0]);
                for col in indexable_columns(pred) {
                    interesting
                        .entry(input)
                        .or_default()
                        .insert(PhysProp::indexed(col.clone()));
                    add_sort(&mut interesting, input, vec![col]);
                }
            }
            _ => {}
        }
    }
    // Catalog clustered indexes are free access paths; surface them even if
    // nothing asked, so indexed operators can consider them.
    for &e in &order {
        let node = logical.equiv(e);
        for op_id in &node.child_ops {
            if let LogicalOp::Scan(rel) = &logical.op(*op_id).op {
                let stats = logical.catalog.relation(rel)?;
                if let Some(c) = &stats.clustered_index_on {
                    let col = format!("{rel}.{c}");
                    interesting
                        .entry(e)
                        .or_default()
                        .insert(PhysProp::indexed(col.clone()));
                    interesting
                        .entry(e)
                        .or_default()
                        .insert(PhysProp::sorted(vec![col]));
                }
            }
        }
    }

    // Pass 2: create the physical nodes.
    for &e in &order {
        b.node_id(e, PhysProp::plain());
        for prop in interesting.get(&e).into_iter().flatten() {
            b.node_id(e, prop.clone());
        }
    }

    // Pass 3: algorithm instances. Each instance is attached to every parent
    // variant whose property its guaranteed output satisfies.
    let attach = |b: &mut Builder,
                  logical_dag: &LogicalDag,
                  parent_logical: EquivNodeId,
                  guarantee: &PhysProp,
                  kind: PhysOpKind,
                  inputs: Vec<PhysEquivId>,
                  lop: Option<OpNodeId>| {
        let mut variants: Vec<(PhysProp, PhysEquivId)> = b
            .by_key
            .iter()
            .filter(|((l, _), _)| *l == logical_dag.find(parent_logical))
            .map(|((_, p), id)| (p.clone(), *id))
            .collect();
        variants.sort();
        for (prop, pv) in variants {
            if prop.index_on.is_none() && guarantee.satisfies(&prop) {
                b.add_op(kind.clone(), inputs.clone(), pv, lop);
            }
        }
    };

    let mut op_ids: Vec<OpNodeId> = logical.alive_ops().map(|o| o.id).collect();
    op_ids.sort();
    for op_id in op_ids {
        let op = logical.op(op_id).clone();
        let parent = logical.find(op.parent);
        match &op.op {
            LogicalOp::Scan(rel) => {
                let stats = logical.catalog.relation(rel)?;
                let guarantee = match &stats.clustered_index_on {
                    Some(c) => PhysProp::sorted(vec![format!("{rel}.{c}")]),
                    None => PhysProp::plain(),
                };
                attach(
                    &mut b,
                    &logical,
                    parent,
                    &guarantee,
                    PhysOpKind::TableScan {
                        relation: rel.clone(),
                    },
                    vec![],
                    Some(op_id),
                );
                if let Some(c) = &stats.clustered_index_on {
                    let prop = PhysProp::indexed(format!("{rel}.{c}"));
                    if let Some(&pv) = b.by_key.get(&(parent, prop)) {
                        b.add_op(
                            PhysOpKind::StoredIndexedBase {
                                relation: rel.clone(),
                            },
                            vec![],
                            pv,
                            Some(op_id),
                        );
                    }
                }
            }
            LogicalOp::Select(pred) => {
                let input = logical.find(op.inputs[0]);
                let in_variants: Vec<(PhysProp, PhysEquivId)> = {
                    let mut v: Vec<(PhysProp, PhysEquivId)> = b
                        .by_key
                        .iter()
                        .filter(|((l, _), _)| *l == input)
                        .map(|((_, p), id)| (p.clone(), *id))
                        .collect();
                    v.sort();
                    v
                };
                for (prop, iv) in &in_variants {
                    match &prop.index_on {
                        None => {
                            attach(
                                &mut b,
                                &logical,
                                parent,
                                prop,
                                PhysOpKind::Filter { pred: pred.clone() },
                                vec![*iv],
                                Some(op_id),
                            );
                        }
                        Some(col) => {
                            if indexable_columns(pred).contains(col) {
                                attach(
                                    &mut b,
                                    &logical,
                                    parent,
                                    &PhysProp::sorted(vec![col.clone()]),
                                    PhysOpKind::IndexedSelect {
                                        pred: pred.clone(),
                                        index_col: col.clone(),
                                    },
                                    vec![*iv],
                                    Some(op_id),
                                );
                            }
                        }
                    }
                }
            }
            LogicalOp::Project(cols) => {
                let input = logical.find(op.inputs[0]);
                let in_variants: Vec<(PhysProp, PhysEquivId)> = {
                    let mut v: Vec<(PhysProp, PhysEquivId)> = b
                        .by_key
                        .iter()
                        .filter(|((l, _), _)| *l == input)
                        .map(|((_, p), id)| (p.clone(), *id))
                        .collect();
                    v.sort();
                    v
                };
                for (prop, iv) in &in_variants {
                    if prop.index_on.is_some() {
                        continue;
                    }
                    let guarantee = PhysProp::sorted(retained_prefix(&prop.sort, cols));
                    attach(
                        &mut b,
                        &logical,
                        parent,
                        &guarantee,
                        PhysOpKind::Project { cols: cols.clone() },
                        vec![*iv],
                        Some(op_id),
                    );
                }
            }
            LogicalOp::Join(atoms) => {
                let l = logical.find(op.inputs[0]);
                let r = logical.find(op.inputs[1]);
                let l_plain = b.node_id(l, PhysProp::plain());
                let r_plain = b.node_id(r, PhysProp::plain());
                // Nested loops join, both role assignments.
                for (outer, inner) in [(l_plain, r_plain), (r_plain, l_plain)] {
                    attach(
                        &mut b,
                        &logical,
                        parent,
                        &PhysProp::plain(),
                        PhysOpKind::NestedLoopsJoin,
                        vec![outer, inner],
                        Some(op_id),
                    );
                }
                if !atoms.is_empty() {
                    let (l_cols, r_cols) = join_side_cols(&logical, atoms, l);
                    let ls = b.node_id(l, PhysProp::sorted(l_cols.clone()));
                    let rs = b.node_id(r, PhysProp::sorted(r_cols.clone()));
                    for guarantee in [PhysProp::sorted(l_cols.clone()), PhysProp::sorted(r_cols.clone())] {
                        attach(
                            &mut b,
                            &logical,
                            parent,
                            &guarantee,
                            PhysOpKind::MergeJoin,
                            vec![ls, rs],
                            Some(op_id),
                        );
                    }
                    if atoms.len() == 1 {
                        let l_idx = b.node_id(l, PhysProp::indexed(l_cols[0].clone()));
                        let r_idx = b.node_id(r, PhysProp::indexed(r_cols[0].clone()));
                        for (outer, inner, probe) in [
                            (l_plain, r_idx, r_cols[0].clone()),
                            (r_plain, l_idx, l_cols[0].clone()),
                        ] {
                            attach(
                                &mut b,
                                &logical,
                                parent,
                                &PhysProp::plain(),
                                PhysOpKind::IndexedJoin { probe_col: probe },
                                vec![outer, inner],
                                Some(op_id),
                            );
                        }
                    }
                }
            }
            LogicalOp::Aggregate { group_by, .. } => {
                let input = logical.find(op.inputs[0]);
                let (iv, guarantee) = if group_by.is_empty() {
                    (b.node_id(input, PhysProp::plain()), PhysProp::plain())
                } else {
                    (
                        b.node_id(input, PhysProp::sorted(group_by.clone())),
                        PhysProp::sorted(group_by.clone()),
                    )
                };
                attach(
                    &mut b,
                    &logical,
                    parent,
                    &guarantee,
                    PhysOpKind::SortAgg,
                    vec![iv],
                    Some(op_id),
                );
            }
            LogicalOp::NoOp { weights } => {
                let inputs: Vec<PhysEquivId> = op
                    .inputs
                    .iter()
                    .map(|i| b.node_id(logical.find(*i), PhysProp::plain()))
                    .collect();
                let pv = b.node_id(parent, PhysProp::plain());
                b.add_op(
                    PhysOpKind::NoOp {
                        weights: weights.clone(),
                    },
                    inputs,
                    pv,
                    Some(op_id),
                );
            }
        }
    }

    // Pass 4: enforcers. Sort reaches every interesting order from the plain
    // variant; build-index reaches an index from the matching sorted variant.
    let all_keys: Vec<(EquivNodeId, PhysProp)> = {
        let mut v: Vec<(EquivNodeId, PhysProp)> = b.by_key.keys().cloned().collect();
        v.sort();
        v
    };
    for (logical_id, prop) in all_keys {
        if prop.is_plain() {
            continue;
        }
        let target = b.by_key[&(logical_id, prop.clone())];
        match &prop.index_on {
            None => {
                let plain = b.node_id(logical_id, PhysProp::plain());
                b.add_op(PhysOpKind::Sort, vec![plain], target, None);
            }
            Some(col) => {
                let sorted = b.node_id(logical_id, PhysProp::sorted(vec![col.clone()]));
                b.add_op(
                    PhysOpKind::BuildIndex { col: col.clone() },
                    vec![sorted],
                    target,
                    None,
                );
            }
        }
    }

    // Pass 5: topological numbering over the physical graph.
    let root_logical = logical.find(logical.root);
    let root = b.node_id(root_logical, PhysProp::plain());
    let mut dag = PhysicalDag {
        logical,
        nodes: b.nodes,
        ops: b.ops,
        by_key: b.by_key,
        root,
        topo_order: Vec::new(),
    };
    assign_phys_topo(&mut dag)?;
    Ok(dag)
}

fn assign_phys_topo(dag: &mut PhysicalDag) -> Result<()> {
    let n = dag.nodes.len();
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Gray,
        Black,
    }
    let mut marks = vec![Mark::White; n];
    let mut order = Vec::with_capacity(n);
    for start in 0..n {
        if marks[start] != Mark::White {
            continue;
        }
        let mut stack: Vec<(u32, bool)> = vec![(start as u32, false)];
        while let Some((v, post)) = stack.pop() {
            if post {
                marks[v as usize] = Mark::Black;
                order.push(PhysEquivId(v));
                continue;
            }
            match marks[v as usize] {
                Mark::Black => continue,
                Mark::Gray => {
                    return Err(Error::CycleDetected(format!(
                        "physical node p{v}"
                    )));
                }
                Mark::White => {}
            }
            marks[v as usize] = Mark::Gray;
            stack.push((v, true));
            for &op_id in &dag.nodes[v as usize].child_ops {
                for &input in &dag.ops[op_id.0 as usize].inputs {
                    match marks[input.0 as usize] {
                        Mark::White => stack.push((input.0, false)),
                        Mark::Gray => {
                            return Err(Error::CycleDetected(format!(
                                "physical node {input} under p{v}"
                            )));
                        }
                        Mark::Black => {}
                    }
                }
            }
        }
    }
    for (i, id) in order.iter().enumerate() {
        dag.nodes[id.0 as usize].topo = i as u32;
    }
    dag.topo_order = order;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::parse_catalog;
    use crate::logical_dag::build_initial_dag;
    use crate::query_ir::parse_batch;
    use crate::rules::{expand, RuleSet};

    fn rs_dag(index: bool) -> PhysicalDag {
        let cat = parse_catalog(&format!(
            "relation R tuples=10000 perblock=10{}\n\
             column b distinct=100\n\
             relation S tuples=20000 perblock=10\n\
             column b distinct=100\n",
            if index { " index=b" } else { "" }
        ))
        .unwrap();
        let batch = parse_batch("(join (= R.b S.b) (scan R) (scan S));", &cat).unwrap();
        let mut dag = build_initial_dag(&batch, &cat).unwrap();
        expand(&mut dag, &RuleSet::default()).unwrap();
        build_physical_dag(dag).unwrap()
    }

    #[test]
    fn merge_join_forces_sorted_variants_and_enforcers() {
        let pd = rs_dag(false);
        // R and S each get a sorted-on-join-column variant with a sort
        // enforcer from the plain variant.
        let mut sorted_nodes = 0;
        for node in pd.nodes() {
            if node.prop.index_on.is_none() && !node.prop.sort.is_empty() {
                sorted_nodes += 1;
                let has_sort_enforcer = node
                    .child_ops
                    .iter()
                    .any(|o| matches!(pd.op(*o).kind, PhysOpKind::Sort));
                let is_base_scan_order = node
                    .child_ops
                    .iter()
                    .any(|o| matches!(pd.op(*o).kind, PhysOpKind::TableScan { .. }));
                assert!(has_sort_enforcer || is_base_scan_order);
            }
        }
        assert!(sorted_nodes >= 2);
        let has_merge = pd
            .ops()
            .iter()
            .any(|o| matches!(o.kind, PhysOpKind::MergeJoin));
        assert!(has_merge);
    }

    #[test]
    fn catalog_index_gives_stored_access_path() {
        let pd = rs_dag(true);
        let stored: Vec<&PhysOpNode> = pd
            .ops()
            .iter()
            .filter(|o| matches!(o.kind, PhysOpKind::StoredIndexedBase { .. }))
            .collect();
        assert_eq!(stored.len(), 1);
        let node = pd.node(stored[0].parent);
        assert_eq!(node.prop.index_on.as_deref(), Some("R.b"));
        assert!(pd.is_catalog_indexed_base(stored[0].parent));
    }

    #[test]
    fn no_interesting_order_means_plain_only() {
        let cat = parse_catalog(
            "relation R tuples=1000 perblock=10\ncolumn a distinct=10\n",
        )
        .unwrap();
        let batch = parse_batch("(scan R);", &cat).unwrap();
        let mut dag = build_initial_dag(&batch, &cat).unwrap();
        expand(&mut dag, &RuleSet::default()).unwrap();
        let pd = build_physical_dag(dag).unwrap();
        // Only the plain variant exists for the scan node and the root.
        for node in pd.nodes() {
            assert!(node.prop.is_plain());
        }
    }

    #[test]
    fn enforcer_edges_reach_interesting_props() {
        let pd = rs_dag(false);
        // The plain variant of R has a sort enforcer to the merge-join
        // order; the sorted variant has no further sort edges.
        let logical_r = pd
            .logical
            .alive_equivs()
            .find(|e| {
                e.child_ops
                    .iter()
                    .any(|o| matches!(pd.logical.op(*o).op, crate::logical_dag::LogicalOp::Scan(ref n) if n == "R"))
            })
            .map(|e| e.id)
            .unwrap();
        let plain = pd.lookup(logical_r, &PhysProp::plain()).unwrap();
        let edges = pd.enforcer_edges(plain);
        assert!(edges
            .iter()
            .any(|(o, p)| matches!(pd.op(*o).kind, PhysOpKind::Sort) && p.sort == ["R.b"]));
        let sorted = pd
            .lookup(logical_r, &PhysProp::sorted(vec!["R.b".into()]))
            .unwrap();
        let from_sorted = pd.enforcer_edges(sorted);
        assert!(from_sorted
            .iter()
            .all(|(o, _)| !matches!(pd.op(*o).kind, PhysOpKind::Sort)));
    }

    #[test]
    fn topo_respects_edges() {
        let pd = rs_dag(true);
        for op in pd.ops() {
            let pt = pd.node(op.parent).topo;
            for input in &op.inputs {
                assert!(pd.node(*input).topo < pt, "{} under {}", input, op.parent);
            }
        }
    }
}
