//! Heuristic cardinality and cost model.
//!
//! Selectivities: equality 0.1, range 0.3, LIKE 0.25; conjunctions multiply,
//! disjunctions add (capped at 1). Join output is `|L|·|R| / max(nd_L, nd_R)`
//! per key pair. Cost is measured in row-touches: the sum over nodes of
//! their input cardinalities, where a scan's input is the table itself.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog::TableStats;
use crate::value::Value;

use super::plan::{CmpOp, Expr, LogicalPlan, NodeKind};

pub const EQ_SELECTIVITY: f64 = 0.1;
pub const RANGE_SELECTIVITY: f64 = 0.3;
pub const LIKE_SELECTIVITY: f64 = 0.25;

pub trait StatsProvider {
    fn stats(&self, table: &str) -> Option<Arc<TableStats>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEstimate {
    pub kind: NodeKind,
    pub rows: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    /// Estimated output rows per node, in pre-order.
    pub nodes: Vec<NodeEstimate>,
    pub rows: f64,
    pub total_cost: f64,
}

pub fn selectivity(e: &Expr) -> f64 {
    match e {
        Expr::Literal(Value::Bool(true)) => 1.0,
        Expr::Literal(Value::Bool(false)) | Expr::Literal(Value::Null) => 0.0,
        Expr::Literal(_) | Expr::Column(_) => 0.5,
        Expr::Cmp { op, .. } => match op {
            CmpOp::Eq => EQ_SELECTIVITY,
            CmpOp::NotEq => 1.0 - EQ_SELECTIVITY,
            _ => RANGE_SELECTIVITY,
        },
        Expr::And(xs) => xs.iter().map(selectivity).product(),
        Expr::Or(xs) => xs.iter().map(selectivity).sum::<f64>().min(1.0),
        Expr::Not(x) => 1.0 - selectivity(x),
        Expr::Like { negated, .. } => {
            if *negated {
                1.0 - LIKE_SELECTIVITY
            } else {
                LIKE_SELECTIVITY
            }
        }
        Expr::SemanticLike { .. } => LIKE_SELECTIVITY,
        Expr::In { list, negated, .. } => {
            let s = (EQ_SELECTIVITY * list.len() as f64).min(1.0);
            if *negated {
                1.0 - s
            } else {
                s
            }
        }
        Expr::IsNull { negated, .. } => {
            if *negated {
                1.0 - EQ_SELECTIVITY
            } else {
                EQ_SELECTIVITY
            }
        }
    }
}

fn n_distinct(e: &Expr, stats: &dyn StatsProvider) -> f64 {
    match e {
        Expr::Column(c) => c
            .split_once('.')
            .and_then(|(t, col)| stats.stats(t).and_then(|s| s.column(col).map(|c| c.n_distinct as f64)))
            .unwrap_or(1.0)
            .max(1.0),
        _ => 1.0,
    }
}

fn scan_rows(table: &str, stats: &dyn StatsProvider) -> f64 {
    stats.stats(table).map(|s| s.n_rows as f64).unwrap_or(0.0)
}

pub fn estimate_cost(plan: &LogicalPlan, stats: &dyn StatsProvider) -> CostEstimate {
    let mut nodes = Vec::new();
    let mut total = 0.0;
    let rows = walk(plan, stats, &mut nodes, &mut total);
    CostEstimate { nodes, rows, total_cost: total }
}

fn walk(plan: &LogicalPlan, stats: &dyn StatsProvider, nodes: &mut Vec<NodeEstimate>, total: &mut f64) -> f64 {
    let slot = nodes.len();
    nodes.push(NodeEstimate { kind: plan.kind(), rows: 0.0 });
    let rows = match plan {
        LogicalPlan::Scan { table, .. } => {
            let n = scan_rows(table, stats);
            *total += n;
            n
        }
        LogicalPlan::Filter { predicate, input } => {
            let n = walk(input, stats, nodes, total);
            *total += n;
            n * selectivity(predicate)
        }
        LogicalPlan::Project { input, .. } | LogicalPlan::Sort { input, .. } | LogicalPlan::Distinct { input } => {
            let n = walk(input, stats, nodes, total);
            *total += n;
            n
        }
        LogicalPlan::Limit { n: limit, input } => {
            let n = walk(input, stats, nodes, total);
            *total += n;
            n.min(*limit as f64)
        }
        LogicalPlan::HashJoin { on, left, right } => {
            let l = walk(left, stats, nodes, total);
            let r = walk(right, stats, nodes, total);
            *total += l + r;
            let div: f64 = on
                .iter()
                .map(|(a, b)| n_distinct(a, stats).max(n_distinct(b, stats)))
                .product();
            l * r / div.max(1.0)
        }
        LogicalPlan::Aggregate { group_by, input, .. } => {
            let n = walk(input, stats, nodes, total);
            *total += n;
            if group_by.is_empty() {
                1.0
            } else {
                let groups: f64 = group_by.iter().map(|g| n_distinct(g, stats)).product();
                n.min(groups)
            }
        }
    };
    nodes[slot].rows = rows;
    rows
}
