//! Logical-algebra input language for query batches.
//!
//! A query file holds one parenthesized expression per query, terminated by
//! `;`, optionally prefixed with `@weight=<n>`. Lines of the form
//! `@nomaterialize=<column>` mark columns whose dependent results must never
//! be materialized (stand-in for correlation variables).
//!
//! ```text
//! @weight=40 (join (= R.b S.b) (scan R) (scan S));
//! (project (R.a) (select (and (< R.a 10) (= R.b 2)) (scan R)));
//! (agg (R.a) ((sum R.b)) (scan R));
//! ```

use std::fmt;

use crate::catalog::Catalog;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CmpOp {
    Eq,
    Lt,
    Le,
    Gt,
    Ge,
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Ne => "!=",
        }
    }

    pub fn eval(self, lhs: i64, rhs: i64) -> bool {
        match self {
            CmpOp::Eq => lhs == rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Ne => lhs != rhs,
        }
    }
}

/// A comparison atom: column vs. integer constant, or column vs. column
/// (equality only, i.e. an equi-join atom).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Atom {
    ColConst {
        column: String,
        op: CmpOp,
        value: i64,
    },
    ColCol {
        left: String,
        right: String,
    },
}

impl Atom {
    pub fn columns(&self) -> Vec<&str> {
        match self {
            Atom::ColConst { column, .. } => vec![column],
            Atom::ColCol { left, right } => vec![left, right],
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::ColConst { column, op, value } => {
                write!(f, "({} {} {})", op.symbol(), column, value)
            }
            Atom::ColCol { left, right } => write!(f, "(= {left} {right})"),
        }
    }
}

/// Boolean combination of atoms. Conjunctions and disjunctions are flattened
/// and never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Predicate {
    Atom(Atom),
    And(Vec<Predicate>),
    Or(Vec<Predicate>),
}

impl Predicate {
    /// Flattens nested and/or nodes and sorts the parts so that structurally
    /// equal predicates print identically.
    pub fn canonicalize(self) -> Predicate {
        match self {
            Predicate::Atom(a) => Predicate::Atom(a),
            Predicate::And(parts) => {
                let mut flat = Vec::new();
                for p in parts {
                    match p.canonicalize() {
                        Predicate::And(inner) => flat.extend(inner),
                        other => flat.push(other),
                    }
                }
                flat.sort();
                flat.dedup();
                if flat.len() == 1 {
                    flat.pop().unwrap()
                } else {
                    Predicate::And(flat)
                }
            }
            Predicate::Or(parts) => {
                let mut flat = Vec::new();
                for p in parts {
                    match p.canonicalize() {
                        Predicate::Or(inner) => flat.extend(inner),
                        other => flat.push(other),
                    }
                }
                flat.sort();
                flat.dedup();
                if flat.len() == 1 {
                    flat.pop().unwrap()
                } else {
                    Predicate::Or(flat)
                }
            }
        }
    }

    /// All atoms, in order.
    pub fn atoms(&self) -> Vec<&Atom> {
        match self {
            Predicate::Atom(a) => vec![a],
            Predicate::And(ps) | Predicate::Or(ps) => ps.iter().flat_map(|p| p.atoms()).collect(),
        }
    }

    /// Top-level conjuncts (the predicate itself if not a conjunction).
    pub fn conjuncts(&self) -> Vec<&Predicate> {
        match self {
            Predicate::And(ps) => ps.iter().collect(),
            other => vec![other],
        }
    }

    pub fn columns(&self) -> Vec<&str> {
        self.atoms().into_iter().flat_map(|a| a.columns()).collect()
    }

    /// Evaluates the predicate on an assignment of columns to values.
    /// Used by the brute-force implication oracle in tests.
    pub fn eval(&self, lookup: &dyn Fn(&str) -> i64) -> bool {
        match self {
            Predicate::Atom(Atom::ColConst { column, op, value }) => {
                op.eval(lookup(column), *value)
            }
            Predicate::Atom(Atom::ColCol { left, right }) => lookup(left) == lookup(right),
            Predicate::And(ps) => ps.iter().all(|p| p.eval(lookup)),
            Predicate::Or(ps) => ps.iter().any(|p| p.eval(lookup)),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Atom(a) => write!(f, "{a}"),
            Predicate::And(ps) => {
                write!(f, "(and")?;
                for p in ps {
                    write!(f, " {p}")?;
                }
                write!(f, ")")
            }
            Predicate::Or(ps) => {
                write!(f, "(or")?;
                for p in ps {
                    write!(f, " {p}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AggFn {
    Min,
    Max,
    Sum,
    Count,
}

impl AggFn {
    pub fn name(self) -> &'static str {
        match self {
            AggFn::Min => "min",
            AggFn::Max => "max",
            AggFn::Sum => "sum",
            AggFn::Count => "count",
        }
    }

    /// Function used to re-aggregate partial results of `self` grouped on a
    /// superset of columns: counts add up, the rest are idempotent.
    pub fn reaggregate_with(self) -> AggFn {
        match self {
            AggFn::Count => AggFn::Sum,
            other => other,
        }
    }
}

/// Output column name for an aggregate over a (possibly qualified) column.
pub fn agg_output_name(f: AggFn, column: &str) -> String {
    let base = column.rsplit('.').next().unwrap_or(column);
    format!("{}_{}", f.name(), base)
}

/// A logical-algebra expression tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LogicalExpr {
    Scan(String),
    Select(Predicate, Box<LogicalExpr>),
    Project(Vec<String>, Box<LogicalExpr>),
    /// Equi-join; the predicate is a conjunction of column-equality atoms.
    Join(Predicate, Box<LogicalExpr>, Box<LogicalExpr>),
    Aggregate {
        group_by: Vec<String>,
        aggs: Vec<(AggFn, String)>,
        input: Box<LogicalExpr>,
    },
}

impl fmt::Display for LogicalExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogicalExpr::Scan(r) => write!(f, "(scan {r})"),
            LogicalExpr::Select(p, e) => write!(f, "(select {p} {e})"),
            LogicalExpr::Project(cols, e) => write!(f, "(project ({}) {e})", cols.join(" ")),
            LogicalExpr::Join(p, l, r) => write!(f, "(join {p} {l} {r})"),
            LogicalExpr::Aggregate {
                group_by,
                aggs,
                input,
            } => {
                write!(f, "(agg ({}) (", group_by.join(" "))?;
                for (i, (fun, col)) in aggs.iter().enumerate() {
                    if i > 0 {
                        write!(f, " ")?;
                    }
                    write!(f, "({} {})", fun.name(), col)?;
                }
                write!(f, ") {input})")
            }
        }
    }
}

/// An ordered batch of queries with positive invocation weights. The order is
/// preserved as given because Volcano-RU is order-sensitive.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBatch {
    pub queries: Vec<(LogicalExpr, u64)>,
    /// Columns whose dependent results may not be materialized.
    pub nomaterialize: Vec<String>,
}

impl QueryBatch {
    /// Renders the batch back to the query-file format.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for col in &self.nomaterialize {
            out.push_str(&format!("@nomaterialize={col}\n"));
        }
        for (q, w) in &self.queries {
            if *w != 1 {
                out.push_str(&format!("@weight={w} "));
            }
            out.push_str(&format!("{q};\n"));
        }
        out
    }
}

/// Ordered output column list of an expression.
pub fn schema_of(expr: &LogicalExpr, catalog: &Catalog) -> Result<Vec<String>> {
    match expr {
        LogicalExpr::Scan(name) => {
            let rel = catalog.relation(name)?;
            Ok(rel
                .columns
                .iter()
                .map(|c| format!("{}.{}", name, c.name))
                .collect())
        }
        LogicalExpr::Select(pred, input) => {
            let schema = schema_of(input, catalog)?;
            for col in pred.columns() {
                if !schema.iter().any(|c| c == col) {
                    return Err(Error::UnknownColumn(col.to_string()));
                }
            }
            Ok(schema)
        }
        LogicalExpr::Project(cols, input) => {
            let schema = schema_of(input, catalog)?;
            for col in cols {
                if !schema.contains(col) {
                    return Err(Error::UnknownColumn(col.clone()));
                }
            }
            Ok(cols.clone())
        }
        LogicalExpr::Join(pred, left, right) => {
            let mut schema = schema_of(left, catalog)?;
            let rs = schema_of(right, catalog)?;
            for c in &rs {
                if schema.contains(c) {
                    return Err(Error::QuerySyntax {
                        pos: 0,
                        msg: format!("ambiguous column `{c}` on both join sides"),
                    });
                }
            }
            schema.extend(rs);
            let ls = schema_of(left, catalog)?;
            for atom in pred.atoms() {
                match atom {
                    Atom::ColCol { left: a, right: b } => {
                        let a_left = ls.contains(a);
                        let b_left = ls.contains(b);
                        if !schema.iter().any(|c| c == a) || !schema.iter().any(|c| c == b) {
                            return Err(Error::UnknownColumn(
                                if schema.iter().any(|c| c == a) { b } else { a }.clone(),
                            ));
                        }
                        if a_left == b_left {
                            return Err(Error::NonEquiJoin(format!(
                                "atom {atom} does not connect the two inputs"
                            )));
                        }
                    }
                    other => {
                        return Err(Error::NonEquiJoin(format!("{other}")));
                    }
                }
            }
            match pred {
                Predicate::Atom(_) | Predicate::And(_) => {}
                Predicate::Or(_) => {
                    return Err(Error::NonEquiJoin(
                        "disjunctive join predicates are not supported".into(),
                    ))
                }
            }
            Ok(schema)
        }
        LogicalExpr::Aggregate {
            group_by,
            aggs,
            input,
        } => {
            let schema = schema_of(input, catalog)?;
            for col in group_by {
                if !schema.contains(col) {
                    return Err(Error::UnknownColumn(col.clone()));
                }
            }
            let mut out = group_by.clone();
            for (f, col) in aggs {
                if !schema.contains(col) {
                    return Err(Error::UnknownColumn(col.clone()));
                }
                out.push(agg_output_name(*f, col));
            }
            Ok(out)
        }
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::QuerySyntax {
            pos: self.pos,
            msg: msg.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() {
            let b = self.src[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.src.len() && self.src[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, b: u8) -> Result<()> {
        if self.peek() == Some(b) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected `{}`", b as char)))
        }
    }

    fn token(&mut self) -> Result<&'a str> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() {
            let b = self.src[self.pos];
            if b.is_ascii_whitespace() || b == b'(' || b == b')' || b == b';' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected a token"));
        }
        Ok(std::str::from_utf8(&self.src[start..self.pos]).unwrap())
    }

    fn parse_predicate(&mut self) -> Result<Predicate> {
        self.expect(b'(')?;
        let head = self.token()?;
        let pred = match head {
            "and" | "or" => {
                let mut parts = Vec::new();
                while self.peek() == Some(b'(') {
                    parts.push(self.parse_predicate()?);
                }
                if parts.is_empty() {
                    return Err(self.err(format!("empty ({head} ...)")));
                }
                if head == "and" {
                    Predicate::And(parts)
                } else {
                    Predicate::Or(parts)
                }
            }
            sym => {
                let op = match sym {
                    "=" => CmpOp::Eq,
                    "<" => CmpOp::Lt,
                    "<=" => CmpOp::Le,
                    ">" => CmpOp::Gt,
                    ">=" => CmpOp::Ge,
                    "!=" => CmpOp::Ne,
                    other => return Err(self.err(format!("unknown comparator `{other}`"))),
                };
                let lhs = self.token()?.to_string();
                let rhs = self.token()?;
                if let Ok(value) = rhs.parse::<i64>() {
                    Predicate::Atom(Atom::ColConst {
                        column: lhs,
                        op,
                        value,
                    })
                } else if op == CmpOp::Eq {
                    Predicate::Atom(Atom::ColCol {
                        left: lhs,
                        right: rhs.to_string(),
                    })
                } else {
                    return Err(self.err(format!(
                        "column-to-column comparison must be `=`, got `{sym}`"
                    )));
                }
            }
        };
        self.expect(b')')?;
        Ok(pred)
    }

    fn parse_column_list(&mut self) -> Result<Vec<String>> {
        self.expect(b'(')?;
        let mut cols = Vec::new();
        while self.peek() != Some(b')') {
            cols.push(self.token()?.to_string());
        }
        self.expect(b')')?;
        Ok(cols)
    }

    fn parse_expr(&mut self) -> Result<LogicalExpr> {
        self.expect(b'(')?;
        let head = self.token()?;
        let expr = match head {
            "scan" => LogicalExpr::Scan(self.token()?.to_string()),
            "select" => {
                let pred = self.parse_predicate()?.canonicalize();
                let input = self.parse_expr()?;
                LogicalExpr::Select(pred, Box::new(input))
            }
            "project" => {
                let cols = self.parse_column_list()?;
                if cols.is_empty() {
                    return Err(self.err("project needs at least one column"));
                }
                let input = self.parse_expr()?;
                LogicalExpr::Project(cols, Box::new(input))
            }
            "join" => {
                let pred = self.parse_predicate()?.canonicalize();
                let left = self.parse_expr()?;
                let right = self.parse_expr()?;
                LogicalExpr::Join(pred, Box::new(left), Box::new(right))
            }
            "agg" => {
                let group_by = self.parse_column_list()?;
                self.expect(b'(')?;
                let mut aggs = Vec::new();
                while self.peek() == Some(b'(') {
                    self.expect(b'(')?;
                    let f = match self.token()? {
                        "min" => AggFn::Min,
                        "max" => AggFn::Max,
                        "sum" => AggFn::Sum,
                        "count" => AggFn::Count,
                        other => {
                            return Err(self.err(format!("unknown aggregate `{other}`")));
                        }
                    };
                    let col = self.token()?.to_string();
                    aggs.push((f, col));
                    self.expect(b')')?;
                }
                self.expect(b')')?;
                if aggs.is_empty() {
                    return Err(self.err("agg needs at least one aggregate"));
                }
                let input = self.parse_expr()?;
                LogicalExpr::Aggregate {
                    group_by,
                    aggs,
                    input: Box::new(input),
                }
            }
            other => return Err(self.err(format!("unknown operator `{other}`"))),
        };
        self.expect(b')')?;
        Ok(expr)
    }
}

/// Parses a query file into a batch, schema-checking every expression
/// against the catalog. Weights default to 1.
pub fn parse_batch(text: &str, catalog: &Catalog) -> Result<QueryBatch> {
    let mut parser = Parser::new(text);
    let mut queries = Vec::new();
    let mut nomaterialize = Vec::new();
    while let Some(b) = parser.peek() {
        let mut weight = 1u64;
        if b == b'@' {
            parser.pos += 1;
            let tok = parser.token()?;
            if let Some(v) = tok.strip_prefix("weight=") {
                weight = v.parse::<u64>().map_err(|_| {
                    parser.err(format!("bad weight `{v}`"))
                })?;
                if weight < 1 {
                    return Err(parser.err("weight must be >= 1"));
                }
            } else if let Some(col) = tok.strip_prefix("nomaterialize=") {
                nomaterialize.push(col.to_string());
                continue;
            } else {
                return Err(parser.err(format!("unknown annotation `@{tok}`")));
            }
        }
        let expr = parser.parse_expr()?;
        parser.expect(b';')?;
        schema_of(&expr, catalog)?;
        queries.push((expr, weight));
    }
    if queries.is_empty() {
        return Err(Error::QuerySyntax {
            pos: 0,
            msg: "empty batch".into(),
        });
    }
    Ok(QueryBatch {
        queries,
        nomaterialize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::parse_catalog;

    fn demo_catalog() -> Catalog {
        parse_catalog(
            "relation R tuples=1000 perblock=10\n\
             column a distinct=100\n\
             column b distinct=50\n\
             relation S tuples=2000 perblock=10\n\
             column b distinct=50\n\
             column c distinct=20\n",
        )
        .unwrap()
    }

    #[test]
    fn parse_single_join() {
        let cat = demo_catalog();
        let batch = parse_batch("(join (= R.b S.b) (scan R) (scan S));", &cat).unwrap();
        assert_eq!(batch.queries.len(), 1);
        assert_eq!(batch.queries[0].1, 1);
    }

    #[test]
    fn identical_queries_stay_separate_trees() {
        let cat = demo_catalog();
        let text = "(join (= R.b S.b) (scan R) (scan S));\n\
                    (join (= R.b S.b) (scan R) (scan S));";
        let batch = parse_batch(text, &cat).unwrap();
        assert_eq!(batch.queries.len(), 2);
        assert_eq!(batch.queries[0].0, batch.queries[1].0);
    }

    #[test]
    fn weight_annotation() {
        let cat = demo_catalog();
        let batch = parse_batch("@weight=40 (scan R);", &cat).unwrap();
        assert_eq!(batch.queries[0].1, 40);
    }

    #[test]
    fn schema_rules() {
        let cat = demo_catalog();
        let scan = LogicalExpr::Scan("R".into());
        assert_eq!(schema_of(&scan, &cat).unwrap(), vec!["R.a", "R.b"]);
        let proj = LogicalExpr::Project(vec!["R.a".into()], Box::new(scan.clone()));
        assert_eq!(schema_of(&proj, &cat).unwrap(), vec!["R.a"]);
        let agg = LogicalExpr::Aggregate {
            group_by: vec!["R.a".into()],
            aggs: vec![(AggFn::Sum, "R.b".into())],
            input: Box::new(scan),
        };
        assert_eq!(schema_of(&agg, &cat).unwrap(), vec!["R.a", "sum_b"]);
    }

    #[test]
    fn non_equi_join_rejected() {
        let cat = demo_catalog();
        let err = parse_batch("(join (< R.b 5) (scan R) (scan S));", &cat).unwrap_err();
        assert!(matches!(err, Error::NonEquiJoin(_)));
    }

    #[test]
    fn unknown_relation_and_column() {
        let cat = demo_catalog();
        assert!(matches!(
            parse_batch("(scan Z);", &cat),
            Err(Error::UnknownRelation(_))
        ));
        assert!(matches!(
            parse_batch("(select (= R.zz 1) (scan R));", &cat),
            Err(Error::UnknownColumn(_))
        ));
    }

    #[test]
    fn syntax_error_carries_position() {
        let cat = demo_catalog();
        let err = parse_batch("(scan R;", &cat).unwrap_err();
        match err {
            Error::QuerySyntax { pos, .. } => assert!(pos > 0),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn nomaterialize_annotation() {
        let cat = demo_catalog();
        let batch = parse_batch("@nomaterialize=R.a\n(scan R);", &cat).unwrap();
        assert_eq!(batch.nomaterialize, vec!["R.a"]);
    }

    proptest::proptest! {
        // Round trip: print-then-parse yields a structurally identical batch.
        #[test]
        fn print_parse_roundtrip(weight in 1u64..5, sel_val in -50i64..50, use_agg: bool) {
            let cat = demo_catalog();
            let base = LogicalExpr::Join(
                Predicate::Atom(Atom::ColCol { left: "R.b".into(), right: "S.b".into() }),
                Box::new(LogicalExpr::Select(
                    Predicate::Atom(Atom::ColConst { column: "R.a".into(), op: CmpOp::Lt, value: sel_val }),
                    Box::new(LogicalExpr::Scan("R".into())),
                )),
                Box::new(LogicalExpr::Scan("S".into())),
            );
            let expr = if use_agg {
                LogicalExpr::Aggregate {
                    group_by: vec!["R.a".into()],
                    aggs: vec![(AggFn::Sum, "S.c".into())],
                    input: Box::new(base),
                }
            } else {
                base
            };
            let batch = QueryBatch { queries: vec![(expr, weight)], nomaterialize: vec![] };
            let text = batch.render();
            let reparsed = parse_batch(&text, &cat).unwrap();
            proptest::prop_assert_eq!(batch, reparsed);
        }
    }
}
