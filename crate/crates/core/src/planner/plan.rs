//! Logical plans, expressions and their canonical serialization.
//!
//! Canonical text grammar (hashed by [`super::fingerprint`]):
//!
//! ```text
//! plan   := TS(table)
//!         | FI(expr;plan)
//!         | PR(expr,...;plan)
//!         | HJ(expr=expr,...;plan,plan)
//!         | UA(expr,...|agg,...;plan)
//!         | OT(sort:expr asc|desc,...;plan) | OT(limit:n;plan) | OT(distinct;plan)
//! expr   := table.column | literal | (expr op expr) | and(expr,...) | or(expr,...)
//!         | not(expr) | like(expr,'p') | notlike(expr,'p') | in(expr;lit,...)
//!         | notin(expr;lit,...) | isnull(expr) | notnull(expr)
//!         | semantic_like(expr,'phrase',threshold)
//! agg    := count(*) | fn(expr) | fn(distinct expr)
//! ```
//!
//! Literals use SQL spelling: integers without leading zeros, floats in
//! shortest round-trip form with a `.0` suffix when integral, strings single
//! quoted with `''` escaping, and `true`/`false`/`null`.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::value::{format_float, DataType, Value};

pub use super::sql::{AggFunc, CmpOp};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    /// A column of the input, by its internal name (`table.column` for base
    /// columns, the canonical text of the expression for derived ones).
    Column(String),
    Literal(Value),
    Cmp { op: CmpOp, left: Box<Expr>, right: Box<Expr> },
    And(Vec<Expr>),
    Or(Vec<Expr>),
    Not(Box<Expr>),
    Like { expr: Box<Expr>, pattern: String, negated: bool },
    In { expr: Box<Expr>, list: Vec<Value>, negated: bool },
    IsNull { expr: Box<Expr>, negated: bool },
    SemanticLike { expr: Box<Expr>, phrase: String, threshold: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggExpr {
    pub func: AggFunc,
    pub arg: Option<Expr>,
    pub distinct: bool,
}

impl AggExpr {
    pub fn canonical(&self) -> String {
        match &self.arg {
            None => format!("{}(*)", self.func.name()),
            Some(a) if self.distinct => format!("{}(distinct {})", self.func.name(), a.canonical()),
            Some(a) => format!("{}({})", self.func.name(), a.canonical()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SortKey {
    pub expr: Expr,
    pub asc: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Field {
    /// Internal identity used for column resolution.
    pub name: String,
    /// Presentation name in result sets.
    pub label: String,
    #[serde(rename = "type")]
    pub ty: DataType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    #[serde(rename = "TS")]
    Scan,
    #[serde(rename = "FI")]
    Filter,
    #[serde(rename = "PR")]
    Project,
    #[serde(rename = "HJ")]
    HashJoin,
    #[serde(rename = "UA")]
    Aggregate,
    #[serde(rename = "OT")]
    Other,
}

impl NodeKind {
    pub fn code(self) -> &'static str {
        match self {
            NodeKind::Scan => "TS",
            NodeKind::Filter => "FI",
            NodeKind::Project => "PR",
            NodeKind::HashJoin => "HJ",
            NodeKind::Aggregate => "UA",
            NodeKind::Other => "OT",
        }
    }

    pub const ALL: [NodeKind; 6] = [
        NodeKind::Scan,
        NodeKind::Filter,
        NodeKind::Project,
        NodeKind::HashJoin,
        NodeKind::Aggregate,
        NodeKind::Other,
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogicalPlan {
    Scan { table: String, fields: Vec<Field> },
    Filter { predicate: Expr, input: Box<LogicalPlan> },
    Project { exprs: Vec<Expr>, labels: Vec<String>, input: Box<LogicalPlan> },
    /// Equality keys: each pair is (expression over left, expression over right).
    HashJoin { on: Vec<(Expr, Expr)>, left: Box<LogicalPlan>, right: Box<LogicalPlan> },
    Aggregate { group_by: Vec<Expr>, aggs: Vec<AggExpr>, input: Box<LogicalPlan> },
    Sort { keys: Vec<SortKey>, input: Box<LogicalPlan> },
    Limit { n: u64, input: Box<LogicalPlan> },
    Distinct { input: Box<LogicalPlan> },
}

fn write_list<T>(out: &mut String, items: &[T], sep: &str, f: impl Fn(&mut String, &T)) {
    for (i, it) in items.iter().enumerate() {
        if i > 0 {
            out.push_str(sep);
        }
        f(out, it);
    }
}

fn quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

impl Expr {
    pub fn col(name: impl Into<String>) -> Expr {
        Expr::Column(name.into())
    }

    pub fn lit(v: impl Into<Value>) -> Expr {
        Expr::Literal(v.into())
    }

    pub fn cmp(op: CmpOp, left: Expr, right: Expr) -> Expr {
        Expr::Cmp { op, left: Box::new(left), right: Box::new(right) }
    }

    pub fn canonical(&self) -> String {
        let mut s = String::new();
        self.write_canonical(&mut s);
        s
    }

    fn write_canonical(&self, out: &mut String) {
        match self {
            Expr::Column(c) => out.push_str(c),
            Expr::Literal(v) => out.push_str(&v.to_sql_literal()),
            Expr::Cmp { op, left, right } => {
                out.push('(');
                left.write_canonical(out);
                let _ = write!(out, " {} ", op.symbol());
                right.write_canonical(out);
                out.push(')');
            }
            Expr::And(xs) | Expr::Or(xs) => {
                out.push_str(if matches!(self, Expr::And(_)) { "and(" } else { "or(" });
                write_list(out, xs, ",", |o, e| e.write_canonical(o));
                out.push(')');
            }
            Expr::Not(e) => {
                out.push_str("not(");
                e.write_canonical(out);
                out.push(')');
            }
            Expr::Like { expr, pattern, negated } => {
                out.push_str(if *negated { "notlike(" } else { "like(" });
                expr.write_canonical(out);
                let _ = write!(out, ",{})", quote(pattern));
            }
            Expr::In { expr, list, negated } => {
                out.push_str(if *negated { "notin(" } else { "in(" });
                expr.write_canonical(out);
                out.push(';');
                write_list(out, list, ",", |o, v| o.push_str(&v.to_sql_literal()));
                out.push(')');
            }
            Expr::IsNull { expr, negated } => {
                out.push_str(if *negated { "notnull(" } else { "isnull(" });
                expr.write_canonical(out);
                out.push(')');
            }
            Expr::SemanticLike { expr, phrase, threshold } => {
                out.push_str("semantic_like(");
                expr.write_canonical(out);
                let _ = write!(out, ",{},{})", quote(phrase), format_float(*threshold));
            }
        }
    }

    /// Internal column names referenced by this expression.
    pub fn columns(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit_columns(&mut |c| out.push(c));
        out
    }

    fn visit_columns<'a>(&'a self, f: &mut impl FnMut(&'a str)) {
        match self {
            Expr::Column(c) => f(c),
            Expr::Literal(_) => {}
            Expr::Cmp { left, right, .. } => {
                left.visit_columns(f);
                right.visit_columns(f);
            }
            Expr::And(xs) | Expr::Or(xs) => xs.iter().for_each(|x| x.visit_columns(f)),
            Expr::Not(e) => e.visit_columns(f),
            Expr::Like { expr, .. }
            | Expr::In { expr, .. }
            | Expr::IsNull { expr, .. }
            | Expr::SemanticLike { expr, .. } => expr.visit_columns(f),
        }
    }

    /// Top-level conjuncts.
    pub fn conjuncts(&self) -> Vec<&Expr> {
        match self {
            Expr::And(xs) => xs.iter().flat_map(|x| x.conjuncts()).collect(),
            other => vec![other],
        }
    }

    pub fn and_all(mut xs: Vec<Expr>) -> Option<Expr> {
        match xs.len() {
            0 => None,
            1 => xs.pop(),
            _ => Some(Expr::And(xs)),
        }
    }

    pub fn data_type(&self, input: &[Field]) -> Result<DataType> {
        Ok(match self {
            Expr::Column(c) => {
                input
                    .iter()
                    .find(|f| &f.name == c)
                    .ok_or_else(|| Error::UnknownColumn(c.clone()))?
                    .ty
            }
            Expr::Literal(v) => v.data_type().unwrap_or(DataType::Text),
            _ => DataType::Bool,
        })
    }
}

impl LogicalPlan {
    pub fn kind(&self) -> NodeKind {
        match self {
            LogicalPlan::Scan { .. } => NodeKind::Scan,
            LogicalPlan::Filter { .. } => NodeKind::Filter,
            LogicalPlan::Project { .. } => NodeKind::Project,
            LogicalPlan::HashJoin { .. } => NodeKind::HashJoin,
            LogicalPlan::Aggregate { .. } => NodeKind::Aggregate,
            LogicalPlan::Sort { .. } | LogicalPlan::Limit { .. } | LogicalPlan::Distinct { .. } => {
                NodeKind::Other
            }
        }
    }

    pub fn children(&self) -> Vec<&LogicalPlan> {
        match self {
            LogicalPlan::Scan { .. } => vec![],
            LogicalPlan::HashJoin { left, right, .. } => vec![left, right],
            LogicalPlan::Filter { input, .. }
            | LogicalPlan::Project { input, .. }
            | LogicalPlan::Aggregate { input, .. }
            | LogicalPlan::Sort { input, .. }
            | LogicalPlan::Limit { input, .. }
            | LogicalPlan::Distinct { input } => vec![input],
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().iter().map(|c| c.node_count()).sum::<usize>()
    }

    /// Tables scanned anywhere in the plan, in scan order.
    pub fn tables(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk(&mut |n| {
            if let LogicalPlan::Scan { table, .. } = n {
                out.push(table.as_str());
            }
        });
        out
    }

    /// Pre-order traversal.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a LogicalPlan)) {
        f(self);
        for c in self.children() {
            c.walk(f);
        }
    }

    pub fn has_aggregate(&self) -> bool {
        let mut found = false;
        self.walk(&mut |n| found |= matches!(n, LogicalPlan::Aggregate { .. }));
        found
    }

    pub fn fields(&self) -> Result<Vec<Field>> {
        Ok(match self {
            LogicalPlan::Scan { fields, .. } => fields.clone(),
            LogicalPlan::Filter { input, .. }
            | LogicalPlan::Sort { input, .. }
            | LogicalPlan::Limit { input, .. }
            | LogicalPlan::Distinct { input } => input.fields()?,
            LogicalPlan::Project { exprs, labels, input } => {
                let inner = input.fields()?;
                exprs
                    .iter()
                    .zip(labels)
                    .map(|(e, l)| Ok(Field { name: e.canonical(), label: l.clone(), ty: e.data_type(&inner)? }))
                    .collect::<Result<_>>()?
            }
            LogicalPlan::HashJoin { left, right, .. } => {
                let mut f = left.fields()?;
                f.extend(right.fields()?);
                f
            }
            LogicalPlan::Aggregate { group_by, aggs, input } => {
                let inner = input.fields()?;
                let mut out = Vec::with_capacity(group_by.len() + aggs.len());
                for g in group_by {
                    let label = match g {
                        Expr::Column(c) => inner
                            .iter()
                            .find(|f| &f.name == c)
                            .map(|f| f.label.clone())
                            .unwrap_or_else(|| c.clone()),
                        other => other.canonical(),
                    };
                    out.push(Field { name: g.canonical(), label, ty: g.data_type(&inner)? });
                }
                for a in aggs {
                    let ty = match a.func {
                        AggFunc::Count => DataType::Int64,
                        AggFunc::Avg => DataType::Float64,
                        AggFunc::Sum | AggFunc::Min | AggFunc::Max => {
                            a.arg.as_ref().map(|e| e.data_type(&inner)).transpose()?.unwrap_or(DataType::Int64)
                        }
                    };
                    let name = a.canonical();
                    out.push(Field { label: name.clone(), name, ty });
                }
                out
            }
        })
    }

    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        self.write_canonical(&mut s);
        s
    }

    fn write_canonical(&self, out: &mut String) {
        match self {
            LogicalPlan::Scan { table, .. } => {
                let _ = write!(out, "TS({table})");
            }
            LogicalPlan::Filter { predicate, input } => {
                let _ = write!(out, "FI({};", predicate.canonical());
                input.write_canonical(out);
                out.push(')');
            }
            LogicalPlan::Project { exprs, input, .. } => {
                out.push_str("PR(");
                write_list(out, exprs, ",", |o, e| e.write_canonical(o));
                out.push(';');
                input.write_canonical(out);
                out.push(')');
            }
            LogicalPlan::HashJoin { on, left, right } => {
                out.push_str("HJ(");
                write_list(out, on, ",", |o, (l, r)| {
                    l.write_canonical(o);
                    o.push('=');
                    r.write_canonical(o);
                });
                out.push(';');
                left.write_canonical(out);
                out.push(',');
                right.write_canonical(out);
                out.push(')');
            }
            LogicalPlan::Aggregate { group_by, aggs, input } => {
                out.push_str("UA(");
                write_list(out, group_by, ",", |o, e| e.write_canonical(o));
                out.push('|');
                write_list(out, aggs, ",", |o, a| o.push_str(&a.canonical()));
                out.push(';');
                input.write_canonical(out);
                out.push(')');
            }
            LogicalPlan::Sort { keys, input } => {
                out.push_str("OT(sort:");
                write_list(out, keys, ",", |o, k| {
                    k.expr.write_canonical(o);
                    o.push_str(if k.asc { " asc" } else { " desc" });
                });
                out.push(';');
                input.write_canonical(out);
                out.push(')');
            }
            LogicalPlan::Limit { n, input } => {
                let _ = write!(out, "OT(limit:{n};");
                input.write_canonical(out);
                out.push(')');
            }
            LogicalPlan::Distinct { input } => {
                out.push_str("OT(distinct;");
                input.write_canonical(out);
                out.push(')');
            }
        }
    }

    /// Compact single-line description with node kinds, for logs.
    pub fn shape(&self) -> String {
        let mut kinds = Vec::new();
        self.walk(&mut |n| kinds.push(n.kind().code()));
        kinds.reverse();
        kinds.join(" -> ")
    }
}
