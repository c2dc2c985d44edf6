//! Base-relation statistics, cost-model constants and cardinality estimation.
//!
//! The catalog is loaded once from a line-oriented text file and is immutable
//! afterwards, so any number of optimization runs can share it. Cardinality
//! and selectivity estimation follow the System-R conventions: `1/V(col)` for
//! equality, `1/3` for ranges, `1/max(V,V)` for equi-joins, products for
//! conjunctions and capped sums for disjunctions.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::query_ir::{Atom, CmpOp, Predicate};

/// Cost-model constants. Defaults: 4 KB blocks, 10 ms seek, 2 ms/block read,
/// 4 ms/block write, 0.2 ms/block CPU, 1536 blocks (6 MB) per operator.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CostParams {
    pub block_size_bytes: u64,
    pub seek_ms: f64,
    pub read_ms_per_block: f64,
    pub write_ms_per_block: f64,
    pub cpu_ms_per_block: f64,
    pub operator_memory_blocks: u64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            block_size_bytes: 4096,
            seek_ms: 10.0,
            read_ms_per_block: 2.0,
            write_ms_per_block: 4.0,
            cpu_ms_per_block: 0.2,
            operator_memory_blocks: 1536,
        }
    }
}

impl CostParams {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("seek", self.seek_ms),
            ("read", self.read_ms_per_block),
            ("write", self.write_ms_per_block),
            ("cpu", self.cpu_ms_per_block),
        ];
        for (field, v) in positive {
            if v <= 0.0 {
                return Err(Error::CatalogInvariant {
                    relation: "<costparams>".into(),
                    field: field.into(),
                    msg: format!("must be strictly positive, got {v}"),
                });
            }
        }
        if self.block_size_bytes == 0 || self.operator_memory_blocks == 0 {
            return Err(Error::CatalogInvariant {
                relation: "<costparams>".into(),
                field: "block/memblocks".into(),
                msg: "must be strictly positive".into(),
            });
        }
        if self.write_ms_per_block < self.read_ms_per_block {
            return Err(Error::CatalogInvariant {
                relation: "<costparams>".into(),
                field: "write".into(),
                msg: "write cost must be >= read cost".into(),
            });
        }
        Ok(())
    }
}

/// Per-column statistics: the number of distinct values.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct ColumnStats {
    pub name: String,
    pub distinct: u64,
}

/// Statistics for one stored base relation.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RelationStats {
    pub name: String,
    pub tuple_count: u64,
    pub tuples_per_block: u64,
    pub columns: Vec<ColumnStats>,
    pub clustered_index_on: Option<String>,
}

impl RelationStats {
    pub fn blocks(&self) -> u64 {
        blocks_of(self)
    }

    fn validate(&self) -> Result<()> {
        if self.tuples_per_block < 1 {
            return Err(Error::CatalogInvariant {
                relation: self.name.clone(),
                field: "perblock".into(),
                msg: "tuples_per_block must be >= 1".into(),
            });
        }
        for c in &self.columns {
            if self.tuple_count >= 1 && (c.distinct < 1 || c.distinct > self.tuple_count) {
                return Err(Error::CatalogInvariant {
                    relation: self.name.clone(),
                    field: c.name.clone(),
                    msg: format!(
                        "distinct count {} outside [1, {}]",
                        c.distinct, self.tuple_count
                    ),
                });
            }
        }
        if let Some(idx) = &self.clustered_index_on {
            if !self.columns.iter().any(|c| &c.name == idx) {
                return Err(Error::CatalogInvariant {
                    relation: self.name.clone(),
                    field: "index".into(),
                    msg: format!("index column `{idx}` is not a column of the relation"),
                });
            }
        }
        Ok(())
    }
}

/// Number of blocks occupied by a relation: `ceil(tuples / tuples_per_block)`.
pub fn blocks_of(stats: &RelationStats) -> u64 {
    stats.tuple_count.div_ceil(stats.tuples_per_block)
}

/// The catalog: every base relation plus the cost-model constants.
/// Immutable after load.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct Catalog {
    pub relations: BTreeMap<String, RelationStats>,
    pub params: CostParams,
}

impl Catalog {
    pub fn relation(&self, name: &str) -> Result<&RelationStats> {
        self.relations
            .get(name)
            .ok_or_else(|| Error::UnknownRelation(name.to_string()))
    }
}

/// Reads a catalog file from disk. See [`parse_catalog`] for the format.
pub fn load_catalog(path: &std::path::Path) -> Result<Catalog> {
    let text = std::fs::read_to_string(path)?;
    parse_catalog(&text)
}

/// Parses the line-oriented catalog format:
///
/// ```text
/// relation <name> tuples=<n> perblock=<k> [index=<col>]
/// column <name> distinct=<v>        # attaches to the preceding relation
/// costparams seek=<ms> read=<ms> write=<ms> cpu=<ms> block=<bytes> memblocks=<n>
/// ```
///
/// Blank lines and lines starting with `#` are ignored. Missing costparams
/// fields keep their defaults.
pub fn parse_catalog(text: &str) -> Result<Catalog> {
    let mut catalog = Catalog::default();
    let mut current: Option<RelationStats> = None;

    let finish = |cat: &mut Catalog, rel: Option<RelationStats>| -> Result<()> {
        if let Some(rel) = rel {
            rel.validate()?;
            if cat.relations.contains_key(&rel.name) {
                return Err(Error::DuplicateRelation(rel.name));
            }
            cat.relations.insert(rel.name.clone(), rel);
        }
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        let head = toks.next().unwrap();
        let rest: Vec<&str> = toks.collect();
        // The first bare token (no `=`) is a name; everything else is key=value.
        let name_tok = rest.iter().find(|t| !t.contains('=')).copied();
        let kvs: Vec<(&str, &str)> = rest
            .iter()
            .filter(|t| t.contains('='))
            .map(|t| t.split_once('=').unwrap())
            .collect();
        let get = |key: &str| kvs.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
        let parse_u64 = |key: &str| -> Result<Option<u64>> {
            match get(key) {
                None => Ok(None),
                Some(v) => v.parse::<u64>().map(Some).map_err(|_| Error::CatalogParse {
                    line: lineno,
                    msg: format!("`{key}` is not an unsigned integer: `{v}`"),
                }),
            }
        };
        let parse_f64 = |key: &str| -> Result<Option<f64>> {
            match get(key) {
                None => Ok(None),
                Some(v) => v.parse::<f64>().map(Some).map_err(|_| Error::CatalogParse {
                    line: lineno,
                    msg: format!("`{key}` is not a number: `{v}`"),
                }),
            }
        };

        match head {
            "relation" => {
                finish(&mut catalog, current.take())?;
                let rel_name = name_tok.ok_or(Error::CatalogParse {
                    line: lineno,
                    msg: "relation line needs a name".into(),
                })?;
                let tuples = parse_u64("tuples")?.ok_or(Error::CatalogParse {
                    line: lineno,
                    msg: "relation line needs tuples=<n>".into(),
                })?;
                let perblock = parse_u64("perblock")?.ok_or(Error::CatalogParse {
                    line: lineno,
                    msg: "relation line needs perblock=<k>".into(),
                })?;
                current = Some(RelationStats {
                    name: rel_name.to_string(),
                    tuple_count: tuples,
                    tuples_per_block: perblock,
                    columns: Vec::new(),
                    clustered_index_on: get("index").map(str::to_string),
                });
            }
            "column" => {
                let rel = current.as_mut().ok_or(Error::CatalogParse {
                    line: lineno,
                    msg: "column line before any relation line".into(),
                })?;
                let col_name = name_tok.ok_or(Error::CatalogParse {
                    line: lineno,
                    msg: "column line needs a name".into(),
                })?;
                let distinct = parse_u64("distinct")?.ok_or(Error::CatalogParse {
                    line: lineno,
                    msg: "column line needs distinct=<v>".into(),
                })?;
                if rel.columns.iter().any(|c| c.name == col_name) {
                    return Err(Error::CatalogParse {
                        line: lineno,
                        msg: format!("duplicate column `{col_name}`"),
                    });
                }
                rel.columns.push(ColumnStats {
                    name: col_name.to_string(),
                    distinct,
                });
            }
            "costparams" => {
                let mut p = CostParams::default();
                if let Some(v) = parse_f64("seek")? {
                    p.seek_ms = v;
                }
                if let Some(v) = parse_f64("read")? {
                    p.read_ms_per_block = v;
                }
                if let Some(v) = parse_f64("write")? {
                    p.write_ms_per_block = v;
                }
                if let Some(v) = parse_f64("cpu")? {
                    p.cpu_ms_per_block = v;
                }
                if let Some(v) = parse_u64("block")? {
                    p.block_size_bytes = v;
                }
                if let Some(v) = parse_u64("memblocks")? {
                    p.operator_memory_blocks = v;
                }
                p.validate()?;
                catalog.params = p;
            }
            other => {
                return Err(Error::CatalogParse {
                    line: lineno,
                    msg: format!("unknown directive `{other}`"),
                });
            }
        }
    }
    finish(&mut catalog, current.take())?;
    Ok(catalog)
}

// ---------------------------------------------------------------------------
// Derived statistics
// ---------------------------------------------------------------------------

/// Column information carried by derived results. `base_distinct` is the
/// distinct count at the column's source; selectivity formulas use it so that
/// estimates do not depend on the derivation order of an expression.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnInfo {
    pub name: String,
    pub base_distinct: u64,
}

/// Estimated statistics of a (derived) relation.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedStats {
    pub rows: u64,
    /// Average tuple width in bytes; kept so join outputs can compute their
    /// own tuples_per_block.
    pub width_bytes: f64,
    pub tuples_per_block: u64,
    pub columns: Vec<ColumnInfo>,
}

impl DerivedStats {
    pub fn blocks(&self) -> u64 {
        self.rows.div_ceil(self.tuples_per_block.max(1))
    }

    pub fn column(&self, name: &str) -> Result<&ColumnInfo> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    /// Distinct count capped by the current cardinality.
    pub fn distinct(&self, name: &str) -> Result<u64> {
        Ok(self.column(name)?.base_distinct.min(self.rows.max(1)))
    }

    /// Stats of a stored base relation. Column names are qualified as
    /// `relation.column`.
    pub fn of_base(rel: &RelationStats, params: &CostParams) -> DerivedStats {
        DerivedStats {
            rows: rel.tuple_count,
            width_bytes: params.block_size_bytes as f64 / rel.tuples_per_block as f64,
            tuples_per_block: rel.tuples_per_block,
            columns: rel
                .columns
                .iter()
                .map(|c| ColumnInfo {
                    name: format!("{}.{}", rel.name, c.name),
                    base_distinct: c.distinct.max(1),
                })
                .collect(),
        }
    }
}

fn atom_selectivity(atom: &Atom, input: &DerivedStats) -> Result<f64> {
    let sel = match atom {
        Atom::ColConst { column, op, .. } => {
            let v = input.column(column)?.base_distinct.max(1) as f64;
            match op {
                CmpOp::Eq => 1.0 / v,
                CmpOp::Lt | CmpOp::Le | CmpOp::Gt | CmpOp::Ge => 1.0 / 3.0,
                // Not covered by the stated rules; complement of equality,
                // clamped away from zero.
                CmpOp::Ne => (1.0 - 1.0 / v).max(1.0 / (2.0 * v)),
            }
        }
        Atom::ColCol { left, right } => {
            let vl = input.column(left)?.base_distinct.max(1);
            let vr = input.column(right)?.base_distinct.max(1);
            1.0 / vl.max(vr) as f64
        }
    };
    Ok(sel.clamp(f64::MIN_POSITIVE, 1.0))
}

/// Selectivity of a predicate against the given input stats.
///
/// Equality `col = const` is `1/V(col)`; ranges are `1/3`; equi-join atoms
/// are `1/max(V, V)`; conjunctions multiply; disjunctions sum, capped at 1.
pub fn selectivity(pred: &Predicate, input: &DerivedStats) -> Result<f64> {
    let sel = match pred {
        Predicate::Atom(a) => atom_selectivity(a, input)?,
        Predicate::And(parts) => {
            let mut s = 1.0;
            for p in parts {
                s *= selectivity(p, input)?;
            }
            s
        }
        Predicate::Or(parts) => {
            let mut s = 0.0;
            for p in parts {
                s += selectivity(p, input)?;
            }
            s.min(1.0)
        }
    };
    Ok(sel.clamp(f64::MIN_POSITIVE, 1.0))
}

/// Selectivity of a set of equi-join atoms joining two inputs. Uses the base
/// distinct counts of both sides so the estimate is independent of join order.
pub fn join_selectivity(
    atoms: &[Atom],
    left: &DerivedStats,
    right: &DerivedStats,
) -> Result<f64> {
    let mut s = 1.0;
    for atom in atoms {
        let Atom::ColCol { left: a, right: b } = atom else {
            return Err(Error::NonEquiJoin(format!("{atom}")));
        };
        let (ca, cb) = if left.column(a).is_ok() {
            (left.column(a)?, right.column(b)?)
        } else {
            (right.column(a)?, left.column(b)?)
        };
        s *= 1.0 / ca.base_distinct.max(1).max(cb.base_distinct.max(1)) as f64;
    }
    Ok(s.clamp(f64::MIN_POSITIVE, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query_ir::{Atom, CmpOp, Predicate};

    fn stats(cols: &[(&str, u64)]) -> DerivedStats {
        DerivedStats {
            rows: 1000,
            width_bytes: 40.0,
            tuples_per_block: 100,
            columns: cols
                .iter()
                .map(|(n, d)| ColumnInfo {
                    name: n.to_string(),
                    base_distinct: *d,
                })
                .collect(),
        }
    }

    fn eq(col: &str, v: i64) -> Predicate {
        Predicate::Atom(Atom::ColConst {
            column: col.into(),
            op: CmpOp::Eq,
            value: v,
        })
    }

    #[test]
    fn blocks_rounding() {
        let mut rel = RelationStats {
            name: "R".into(),
            tuple_count: 1000,
            tuples_per_block: 10,
            columns: vec![],
            clustered_index_on: None,
        };
        assert_eq!(blocks_of(&rel), 100);
        rel.tuple_count = 0;
        assert_eq!(blocks_of(&rel), 0);
        rel.tuple_count = 1001;
        assert_eq!(blocks_of(&rel), 101);
    }

    #[test]
    fn selectivity_rules() {
        let s = stats(&[("R.a", 100), ("R.b", 4)]);
        assert_eq!(selectivity(&eq("R.a", 5), &s).unwrap(), 0.01);
        let range = Predicate::Atom(Atom::ColConst {
            column: "R.a".into(),
            op: CmpOp::Lt,
            value: 7,
        });
        assert_eq!(selectivity(&range, &s).unwrap(), 1.0 / 3.0);
        // (a=5 AND b=2) with V(a)=10, V(b)=4 -> 0.025
        let s2 = stats(&[("R.a", 10), ("R.b", 4)]);
        let conj = Predicate::And(vec![eq("R.a", 5), eq("R.b", 2)]);
        assert_eq!(selectivity(&conj, &s2).unwrap(), 0.025);
    }

    #[test]
    fn conjunction_bounded_by_min() {
        let s = stats(&[("R.a", 10), ("R.b", 4)]);
        let p1 = eq("R.a", 5);
        let p2 = eq("R.b", 2);
        let conj = Predicate::And(vec![p1.clone(), p2.clone()]);
        let sc = selectivity(&conj, &s).unwrap();
        assert!(sc <= selectivity(&p1, &s).unwrap());
        assert!(sc <= selectivity(&p2, &s).unwrap());
    }

    #[test]
    fn unknown_column_is_estimation_error() {
        let s = stats(&[("R.a", 10)]);
        assert!(matches!(
            selectivity(&eq("R.z", 1), &s),
            Err(Error::UnknownColumn(_))
        ));
    }

    #[test]
    fn parse_minimal_catalog() {
        let cat = parse_catalog("relation R tuples=1000 perblock=10\ncolumn a distinct=100\n")
            .unwrap();
        assert_eq!(cat.relations.len(), 1);
        assert_eq!(cat.relations["R"].blocks(), 100);
        // paper defaults when costparams line absent
        assert_eq!(cat.params.seek_ms, 10.0);
        assert_eq!(cat.params.read_ms_per_block, 2.0);
        assert_eq!(cat.params.write_ms_per_block, 4.0);
        assert_eq!(cat.params.cpu_ms_per_block, 0.2);
        assert_eq!(cat.params.block_size_bytes, 4096);
        assert_eq!(cat.params.operator_memory_blocks, 1536);
    }

    #[test]
    fn duplicate_relation_rejected() {
        let err = parse_catalog(
            "relation R tuples=10 perblock=1\nrelation R tuples=20 perblock=1\n",
        )
        .unwrap_err();
        match err {
            Error::DuplicateRelation(name) => assert_eq!(name, "R"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_catalog("relation R tuples=10 perblock=1\nbogus line here\n").unwrap_err();
        match err {
            Error::CatalogParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn invariant_errors_name_the_field() {
        let err =
            parse_catalog("relation R tuples=10 perblock=1\ncolumn a distinct=50\n").unwrap_err();
        match err {
            Error::CatalogInvariant { relation, field, .. } => {
                assert_eq!(relation, "R");
                assert_eq!(field, "a");
            }
            other => panic!("unexpected error {other}"),
        }
    }
}
