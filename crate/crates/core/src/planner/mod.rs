//! SQL dialect, logical plans, canonical fingerprints, cost model and
//! corpus-wide similarity search.

mod bind;
mod canon;
mod cost;
mod locate;
mod plan;
mod sql;

pub use bind::{parse_sql, SchemaProvider};
pub use canon::{
    canonical_expr, canonicalize, enumerate_subplans, fingerprint, fnv1a64, subexpression_stats, subplan_records,
    Bucket, Fingerprint, Subplan, SubplanRecord, SubplanStats,
};
pub use cost::{
    estimate_cost, selectivity, CostEstimate, NodeEstimate, StatsProvider, EQ_SELECTIVITY, LIKE_SELECTIVITY,
    RANGE_SELECTIVITY,
};
pub use locate::{locate, LocateKind, LocateMatch, CELL_SAMPLE_CAP};
pub use plan::{AggExpr, AggFunc, CmpOp, Expr, Field, LogicalPlan, NodeKind, SortKey};
pub use sql::{parse_select, AstExpr, SelectStmt};

/// Parse, resolve and canonicalize in one step.
pub fn plan_sql(sql: &str, catalog: &dyn SchemaProvider) -> crate::error::Result<LogicalPlan> {
    Ok(canonicalize(&parse_sql(sql, catalog)?))
}
