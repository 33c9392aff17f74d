//! Rule-based activity labels for probes, used by trace reports.
//!
//! Rules apply in order and the first match wins:
//! 1. `metadata_exploration`: reads a catalog table, or has `LIMIT n` with
//!    n ≤ 10 and no aggregate.
//! 2. `column_statistics`: one base table, and either a DISTINCT or an
//!    aggregate touching at most two distinct columns.
//! 3. `full_solution`: reads every table of the task manifest and contains
//!    the manifest's aggregate shape.
//! 4. `partial_solution`: everything else.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::catalog::is_catalog_table;
use crate::planner::{Expr, LogicalPlan};
use crate::protocol::Phase;

/// Largest LIMIT still counted as a peek at the data.
pub const PEEK_LIMIT: u64 = 10;

/// The aggregate a task's answer must contain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateShape {
    /// `count`, `sum`, `avg`, `min` or `max`.
    pub func: String,
    /// Unqualified argument column; `None` accepts any argument.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    /// Unqualified grouping columns that must all appear.
    #[serde(default)]
    pub group_by: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskManifest {
    pub task_id: String,
    pub tables: Vec<String>,
    pub aggregate: AggregateShape,
    #[serde(default)]
    pub description: String,
}

fn unqualified(name: &str) -> &str {
    name.rsplit_once('.').map_or(name, |(_, c)| c)
}

fn expr_columns(e: &Expr, out: &mut BTreeSet<String>) {
    for c in e.columns() {
        out.insert(c.to_string());
    }
}

fn has_peek_limit(plan: &LogicalPlan) -> bool {
    let mut found = false;
    plan.walk(&mut |n| {
        if let LogicalPlan::Limit { n, .. } = n {
            found |= *n <= PEEK_LIMIT;
        }
    });
    found
}

fn has_distinct(plan: &LogicalPlan) -> bool {
    let mut found = false;
    plan.walk(&mut |n| found |= matches!(n, LogicalPlan::Distinct { .. }));
    found
}

/// Columns touched by aggregates (grouping keys and arguments), if any.
fn aggregate_columns(plan: &LogicalPlan) -> Option<BTreeSet<String>> {
    let mut cols: Option<BTreeSet<String>> = None;
    plan.walk(&mut |n| {
        if let LogicalPlan::Aggregate { group_by, aggs, .. } = n {
            let set = cols.get_or_insert_with(BTreeSet::new);
            group_by.iter().for_each(|g| expr_columns(g, set));
            aggs.iter().filter_map(|a| a.arg.as_ref()).for_each(|a| expr_columns(a, set));
        }
    });
    cols
}

fn matches_shape(plan: &LogicalPlan, shape: &AggregateShape) -> bool {
    let mut ok = false;
    plan.walk(&mut |n| {
        let LogicalPlan::Aggregate { group_by, aggs, .. } = n else { return };
        let agg_ok = aggs.iter().any(|a| {
            a.func.name() == shape.func
                && match (&shape.column, &a.arg) {
                    (None, _) => true,
                    (Some(want), Some(arg)) => arg.columns().iter().any(|c| unqualified(c) == want),
                    (Some(_), None) => false,
                }
        });
        let groups: BTreeSet<&str> =
            group_by.iter().flat_map(|g| g.columns()).map(unqualified).collect();
        ok |= agg_ok && shape.group_by.iter().all(|g| groups.contains(g.as_str()));
    });
    ok
}

/// Label one query plan.
pub fn classify_query(plan: &LogicalPlan, manifest: Option<&TaskManifest>) -> Phase {
    let tables = plan.tables();
    if tables.iter().any(|t| is_catalog_table(t)) || (has_peek_limit(plan) && !plan.has_aggregate()) {
        return Phase::MetadataExploration;
    }
    let distinct_tables: BTreeSet<&str> = tables.iter().copied().collect();
    if distinct_tables.len() == 1 {
        if has_distinct(plan) {
            return Phase::ColumnStatistics;
        }
        if aggregate_columns(plan).is_some_and(|c| c.len() <= 2) {
            return Phase::ColumnStatistics;
        }
    }
    if let Some(m) = manifest {
        if m.tables.iter().all(|t| distinct_tables.contains(t.as_str())) && matches_shape(plan, &m.aggregate) {
            return Phase::FullSolution;
        }
    }
    Phase::PartialSolution
}

/// Label a probe: the earliest phase (in rule order) among its queries.
/// A probe without plans is metadata exploration.
pub fn classify_activity(plans: &[LogicalPlan], manifest: Option<&TaskManifest>) -> Phase {
    plans.iter().map(|p| classify_query(p, manifest)).min().unwrap_or(Phase::MetadataExploration)
}
