//! Name resolution and plan construction from parsed statements.

use std::sync::Arc;

use crate::catalog::{self, Schema};
use crate::error::{Error, Result};
use crate::value::{DataType, Value};

use super::plan::{AggExpr, Expr, Field, LogicalPlan, SortKey};
use super::sql::{parse_select, AstExpr, CmpOp, SelectItem, SelectStmt, TableRef};

/// Source of table schemas for name resolution.
pub trait SchemaProvider {
    fn table_schema(&self, name: &str) -> Option<Arc<Schema>>;
}

impl<F> SchemaProvider for F
where
    F: Fn(&str) -> Option<Arc<Schema>>,
{
    fn table_schema(&self, name: &str) -> Option<Arc<Schema>> {
        self(name)
    }
}

/// Parse and resolve a statement into a logical plan.
pub fn parse_sql(sql: &str, catalog: &dyn SchemaProvider) -> Result<LogicalPlan> {
    let stmt = parse_select(sql)?;
    Binder { catalog, scope: Vec::new() }.bind(&stmt)
}

struct ScopeEntry {
    alias: Option<String>,
    schema: Arc<Schema>,
}

struct Binder<'a> {
    catalog: &'a dyn SchemaProvider,
    scope: Vec<ScopeEntry>,
}

fn lookup_schema(catalog: &dyn SchemaProvider, t: &TableRef) -> Result<Arc<Schema>> {
    if t.name == catalog::CATALOG_TABLES {
        return Ok(Arc::new(catalog::catalog_tables_schema()));
    }
    if t.name == catalog::CATALOG_COLUMNS {
        return Ok(Arc::new(catalog::catalog_columns_schema()));
    }
    catalog.table_schema(&t.name).ok_or_else(|| Error::UnknownTable(t.name.clone()))
}

fn scan_of(schema: &Schema) -> LogicalPlan {
    LogicalPlan::Scan {
        table: schema.table_name.clone(),
        fields: schema
            .columns
            .iter()
            .map(|c| Field {
                name: format!("{}.{}", schema.table_name, c.name),
                label: c.name.clone(),
                ty: c.ty,
            })
            .collect(),
    }
}

fn compatible(a: DataType, b: DataType) -> bool {
    a == b || (a.is_numeric() && b.is_numeric())
}

fn type_of_value(v: &Value) -> Option<DataType> {
    v.data_type()
}

fn contains_agg(e: &AstExpr) -> bool {
    match e {
        AstExpr::Agg { .. } => true,
        AstExpr::Column { .. } | AstExpr::Literal(_) => false,
        AstExpr::Cmp { left, right, .. } => contains_agg(left) || contains_agg(right),
        AstExpr::And(a, b) | AstExpr::Or(a, b) => contains_agg(a) || contains_agg(b),
        AstExpr::Not(e) => contains_agg(e),
        AstExpr::Like { expr, .. }
        | AstExpr::InList { expr, .. }
        | AstExpr::IsNull { expr, .. }
        | AstExpr::SemanticLike { expr, .. } => contains_agg(expr),
    }
}

impl Binder<'_> {
    fn bind(mut self, stmt: &SelectStmt) -> Result<LogicalPlan> {
        // FROM / JOIN
        let schema = lookup_schema(self.catalog, &stmt.from)?;
        let mut plan = scan_of(&schema);
        self.scope.push(ScopeEntry { alias: stmt.from.alias.clone(), schema });
        for j in &stmt.joins {
            let schema = lookup_schema(self.catalog, &j.table)?;
            if self.scope.iter().any(|s| s.schema.table_name == schema.table_name) {
                return Err(Error::Unsupported(format!("self-join on {}", schema.table_name)));
            }
            let right_table = schema.table_name.clone();
            let right = scan_of(&schema);
            self.scope.push(ScopeEntry { alias: j.table.alias.clone(), schema });
            let on = self.bind_join_keys(&j.on, &right_table)?;
            plan = LogicalPlan::HashJoin { on, left: Box::new(plan), right: Box::new(right) };
        }

        if let Some(w) = &stmt.selection {
            if contains_agg(w) {
                return Err(Error::Unsupported("aggregate in WHERE".into()));
            }
            let fields = plan.fields()?;
            let predicate = self.bind_expr(w, None)?;
            self.check_predicate(&predicate, &fields)?;
            plan = LogicalPlan::Filter { predicate, input: Box::new(plan) };
        }

        let aggregating = !stmt.group_by.is_empty()
            || stmt.items.iter().any(|i| matches!(i, SelectItem::Expr { expr, .. } if contains_agg(expr)))
            || stmt.order_by.iter().any(|(e, _)| contains_agg(e));

        // Select items as (expr, label). Aggregates are rewritten to columns
        // of the aggregate output.
        let mut items: Vec<(Expr, String)> = Vec::new();
        let mut aggs: Vec<AggExpr> = Vec::new();
        let mut group_by: Vec<Expr> = Vec::new();
        if aggregating {
            for g in &stmt.group_by {
                if contains_agg(g) {
                    return Err(Error::Unsupported("aggregate in GROUP BY".into()));
                }
                group_by.push(self.bind_expr(g, None)?);
            }
        }
        for item in &stmt.items {
            match item {
                SelectItem::Wildcard | SelectItem::QualifiedWildcard(_) if aggregating => {
                    return Err(Error::Unsupported("* with aggregation".into()));
                }
                SelectItem::Wildcard => {
                    for s in &self.scope {
                        for c in &s.schema.columns {
                            items.push((Expr::Column(format!("{}.{}", s.schema.table_name, c.name)), c.name.clone()));
                        }
                    }
                }
                SelectItem::QualifiedWildcard(q) => {
                    let s = self.entry(q)?;
                    for c in &s.schema.columns {
                        items.push((Expr::Column(format!("{}.{}", s.schema.table_name, c.name)), c.name.clone()));
                    }
                }
                SelectItem::Expr { expr, alias } => {
                    let bound = if aggregating {
                        self.bind_expr(expr, Some(&mut aggs))?
                    } else {
                        self.bind_expr(expr, None)?
                    };
                    let label = alias.clone().unwrap_or_else(|| default_label(expr, &bound));
                    items.push((bound, label));
                }
            }
        }

        let mut order: Vec<SortKey> = Vec::new();
        for (e, asc) in &stmt.order_by {
            let by_alias = match e {
                AstExpr::Column { qualifier: None, name } => stmt.items.iter().zip(&items).find_map(|(it, (b, _))| {
                    matches!(it, SelectItem::Expr { alias: Some(a), .. } if a == name).then(|| b.clone())
                }),
                _ => None,
            };
            let bound = match by_alias {
                Some(b) => b,
                None if aggregating => self.bind_expr(e, Some(&mut aggs))?,
                None => self.bind_expr(e, None)?,
            };
            order.push(SortKey { expr: bound, asc: *asc });
        }

        if aggregating {
            let group_names: Vec<String> = group_by.iter().map(|g| g.canonical()).collect();
            let input_fields = plan.fields()?;
            for g in &group_by {
                g.data_type(&input_fields)?;
            }
            plan = LogicalPlan::Aggregate { group_by: group_by.clone(), aggs: aggs.clone(), input: Box::new(plan) };
            let out_fields = plan.fields()?;
            let rewrite = |e: Expr| -> Result<Expr> {
                let e = replace_group_exprs(e, &group_names);
                for c in e.columns() {
                    if !out_fields.iter().any(|f| f.name == c) {
                        return Err(Error::UnknownColumn(format!("{c} must appear in GROUP BY or an aggregate")));
                    }
                }
                Ok(e)
            };
            items = items.into_iter().map(|(e, l)| Ok((rewrite(e)?, l))).collect::<Result<_>>()?;
            order = order
                .into_iter()
                .map(|k| Ok(SortKey { expr: rewrite(k.expr)?, asc: k.asc }))
                .collect::<Result<_>>()?;
        }

        let pre_fields = plan.fields()?;
        for (e, _) in &items {
            e.data_type(&pre_fields)?;
        }
        if !stmt.distinct && !order.is_empty() {
            for k in &order {
                k.expr.data_type(&pre_fields)?;
            }
            plan = LogicalPlan::Sort { keys: order.clone(), input: Box::new(plan) };
        }

        let identity = aggregating
            && items.len() == pre_fields.len()
            && items.iter().zip(&pre_fields).all(|((e, l), f)| e.canonical() == f.name && *l == f.label);
        if !identity {
            let (exprs, labels): (Vec<_>, Vec<_>) = items.into_iter().unzip();
            plan = LogicalPlan::Project { exprs, labels, input: Box::new(plan) };
        }

        if stmt.distinct {
            plan = LogicalPlan::Distinct { input: Box::new(plan) };
            if !order.is_empty() {
                let out = plan.fields()?;
                let keys = order
                    .into_iter()
                    .map(|k| {
                        let name = k.expr.canonical();
                        if out.iter().any(|f| f.name == name) {
                            Ok(SortKey { expr: Expr::Column(name), asc: k.asc })
                        } else {
                            Err(Error::Unsupported(format!(
                                "ORDER BY {name} must appear in the select list with DISTINCT"
                            )))
                        }
                    })
                    .collect::<Result<_>>()?;
                plan = LogicalPlan::Sort { keys, input: Box::new(plan) };
            }
        }
        if let Some(n) = stmt.limit {
            plan = LogicalPlan::Limit { n, input: Box::new(plan) };
        }
        Ok(plan)
    }

    fn entry(&self, qualifier: &str) -> Result<&ScopeEntry> {
        self.scope
            .iter()
            .find(|s| s.alias.as_deref() == Some(qualifier))
            .or_else(|| self.scope.iter().find(|s| s.schema.table_name == qualifier))
            .ok_or_else(|| Error::UnknownTable(qualifier.to_string()))
    }

    fn resolve(&self, qualifier: Option<&str>, name: &str) -> Result<(String, DataType)> {
        match qualifier {
            Some(q) => {
                let s = self.entry(q)?;
                let c = s
                    .schema
                    .columns
                    .iter()
                    .find(|c| c.name == name)
                    .ok_or_else(|| Error::UnknownColumn(format!("{q}.{name}")))?;
                Ok((format!("{}.{}", s.schema.table_name, c.name), c.ty))
            }
            None => {
                let mut found = None;
                for s in &self.scope {
                    if let Some(c) = s.schema.columns.iter().find(|c| c.name == name) {
                        if found.is_some() {
                            return Err(Error::AmbiguousColumn(name.to_string()));
                        }
                        found = Some((format!("{}.{}", s.schema.table_name, c.name), c.ty));
                    }
                }
                found.ok_or_else(|| Error::UnknownColumn(name.to_string()))
            }
        }
    }

    fn type_of(&self, e: &Expr) -> Option<DataType> {
        match e {
            Expr::Column(c) => {
                let (t, col) = c.split_once('.')?;
                let s = self.scope.iter().find(|s| s.schema.table_name == t)?;
                s.schema.columns.iter().find(|x| x.name == col).map(|x| x.ty)
            }
            Expr::Literal(v) => type_of_value(v),
            _ => Some(DataType::Bool),
        }
    }

    fn bind_expr(&self, e: &AstExpr, mut aggs: Option<&mut Vec<AggExpr>>) -> Result<Expr> {
        Ok(match e {
            AstExpr::Column { qualifier, name } => Expr::Column(self.resolve(qualifier.as_deref(), name)?.0),
            AstExpr::Literal(v) => Expr::Literal(v.clone()),
            AstExpr::Cmp { op, left, right } => {
                let l = self.bind_expr(left, aggs.as_deref_mut())?;
                let r = self.bind_expr(right, aggs.as_deref_mut())?;
                if let (Some(a), Some(b)) = (self.type_of(&l), self.type_of(&r)) {
                    if !compatible(a, b) {
                        return Err(Error::Type(format!("cannot compare {a} with {b} in {}", Expr::cmp(*op, l, r).canonical())));
                    }
                }
                Expr::cmp(*op, l, r)
            }
            AstExpr::And(a, b) => Expr::And(vec![self.bind_expr(a, aggs.as_deref_mut())?, self.bind_expr(b, aggs)?]),
            AstExpr::Or(a, b) => Expr::Or(vec![self.bind_expr(a, aggs.as_deref_mut())?, self.bind_expr(b, aggs)?]),
            AstExpr::Not(x) => Expr::Not(Box::new(self.bind_expr(x, aggs)?)),
            AstExpr::Like { expr, pattern, negated } => {
                let x = self.bind_expr(expr, aggs)?;
                self.require_text(&x, "LIKE")?;
                Expr::Like { expr: Box::new(x), pattern: pattern.clone(), negated: *negated }
            }
            AstExpr::InList { expr, list, negated } => {
                let x = self.bind_expr(expr, aggs)?;
                if let Some(t) = self.type_of(&x) {
                    for v in list {
                        if let Some(vt) = v.data_type() {
                            if !compatible(t, vt) {
                                return Err(Error::Type(format!("IN list value {v} does not match {t}")));
                            }
                        }
                    }
                }
                Expr::In { expr: Box::new(x), list: list.clone(), negated: *negated }
            }
            AstExpr::IsNull { expr, negated } => Expr::IsNull { expr: Box::new(self.bind_expr(expr, aggs)?), negated: *negated },
            AstExpr::SemanticLike { expr, phrase, threshold } => {
                let x = self.bind_expr(expr, aggs)?;
                self.require_text(&x, "SEMANTIC_LIKE")?;
                Expr::SemanticLike { expr: Box::new(x), phrase: phrase.clone(), threshold: *threshold }
            }
            AstExpr::Agg { func, arg, distinct } => {
                let Some(aggs) = aggs else {
                    return Err(Error::Unsupported("aggregate not allowed here".into()));
                };
                let arg = match arg {
                    Some(a) => {
                        if contains_agg(a) {
                            return Err(Error::Unsupported("nested aggregate".into()));
                        }
                        let x = self.bind_expr(a, None)?;
                        if matches!(func, super::sql::AggFunc::Sum | super::sql::AggFunc::Avg)
                            && !self.type_of(&x).is_some_and(|t| t.is_numeric())
                        {
                            return Err(Error::Type(format!("{}() requires a numeric argument", func.name())));
                        }
                        Some(x)
                    }
                    None => None,
                };
                let agg = AggExpr { func: *func, arg, distinct: *distinct };
                let name = agg.canonical();
                if !aggs.iter().any(|a| a.canonical() == name) {
                    aggs.push(agg);
                }
                Expr::Column(name)
            }
        })
    }

    fn require_text(&self, e: &Expr, what: &str) -> Result<()> {
        match self.type_of(e) {
            Some(DataType::Text) | None => Ok(()),
            Some(t) => Err(Error::Type(format!("{what} requires text, got {t}"))),
        }
    }

    fn check_predicate(&self, p: &Expr, fields: &[Field]) -> Result<()> {
        if p.data_type(fields)? != DataType::Bool {
            return Err(Error::Type(format!("WHERE clause {} is not a predicate", p.canonical())));
        }
        Ok(())
    }

    fn bind_join_keys(&self, on: &AstExpr, right_table: &str) -> Result<Vec<(Expr, Expr)>> {
        let mut conj = Vec::new();
        flatten_and(on, &mut conj);
        let prefix = format!("{right_table}.");
        let mut keys = Vec::new();
        for c in conj {
            let AstExpr::Cmp { op: CmpOp::Eq, left, right } = c else {
                return Err(Error::Unsupported("join conditions must be equalities".into()));
            };
            let l = self.bind_expr(left, None)?;
            let r = self.bind_expr(right, None)?;
            let side = |e: &Expr| -> Result<Option<bool>> {
                let cols = e.columns();
                if cols.is_empty() {
                    return Ok(None);
                }
                let on_right = cols.iter().filter(|c| c.starts_with(&prefix)).count();
                if on_right == cols.len() {
                    Ok(Some(true))
                } else if on_right == 0 {
                    Ok(Some(false))
                } else {
                    Err(Error::Unsupported("join key mixes both inputs".into()))
                }
            };
            let (ls, rs) = (side(&l)?, side(&r)?);
            if let (Some(a), Some(b)) = (self.type_of(&l), self.type_of(&r)) {
                if !compatible(a, b) {
                    return Err(Error::Type(format!("join key types {a} and {b} differ")));
                }
            }
            match (ls, rs) {
                (Some(true), Some(true)) | (Some(false), Some(false)) => {
                    return Err(Error::Unsupported("join key must relate both inputs".into()))
                }
                (Some(true), _) | (_, Some(false)) => keys.push((r, l)),
                _ => keys.push((l, r)),
            }
        }
        Ok(keys)
    }
}

fn flatten_and<'a>(e: &'a AstExpr, out: &mut Vec<&'a AstExpr>) {
    match e {
        AstExpr::And(a, b) => {
            flatten_and(a, out);
            flatten_and(b, out);
        }
        other => out.push(other),
    }
}

fn default_label(ast: &AstExpr, bound: &Expr) -> String {
    match ast {
        AstExpr::Column { name, .. } => name.clone(),
        _ => bound.canonical(),
    }
}

/// Replace subexpressions equal to a GROUP BY expression with a reference to
/// the aggregate's output column of the same name.
fn replace_group_exprs(e: Expr, group_names: &[String]) -> Expr {
    let c = e.canonical();
    if group_names.contains(&c) {
        return Expr::Column(c);
    }
    let rec = |x: Box<Expr>| Box::new(replace_group_exprs(*x, group_names));
    match e {
        Expr::Cmp { op, left, right } => Expr::Cmp { op, left: rec(left), right: rec(right) },
        Expr::And(xs) => Expr::And(xs.into_iter().map(|x| replace_group_exprs(x, group_names)).collect()),
        Expr::Or(xs) => Expr::Or(xs.into_iter().map(|x| replace_group_exprs(x, group_names)).collect()),
        Expr::Not(x) => Expr::Not(rec(x)),
        Expr::Like { expr, pattern, negated } => Expr::Like { expr: rec(expr), pattern, negated },
        Expr::In { expr, list, negated } => Expr::In { expr: rec(expr), list, negated },
        Expr::IsNull { expr, negated } => Expr::IsNull { expr: rec(expr), negated },
        Expr::SemanticLike { expr, phrase, threshold } => Expr::SemanticLike { expr: rec(expr), phrase, threshold },
        other => other,
    }
}
