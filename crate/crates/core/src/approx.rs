//! Approximate and incremental evaluation.
//!
//! Sampled execution draws an independent Bernoulli sample at every scan
//! (seeded per table, so every plan sees the same sample of a table for a
//! given seed and fraction). Aggregates over sampled input use
//! Horvitz-Thompson scaling: a row surviving scans with combined inclusion
//! probability `π` stands for `1/π` rows, and
//!
//! ```text
//!   COUNT ≈ n / π           Var ≈ n (1-π) / π²
//!   SUM   ≈ Σy / π          Var ≈ (1-π) / π² · Σy²
//!   AVG   ≈ Σy / n          Var ≈ (1-π) / n² · Σ(y - ȳ)²
//! ```
//!
//! MIN and MAX are the sample extremes, flagged as bounds: a sample MIN is an
//! upper bound of the true MIN and a sample MAX a lower bound of the true MAX.
//! The "degree of approximation" a probe asks for is this sampling fraction.
//!
//! Incremental execution streams the driving scan of a pipeline and checks a
//! termination criterion every `checkpoint_rows` output rows.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::db::Snapshot;
use crate::error::{Error, Result};
use crate::exec::{compile, source_versions, BoundExpr, ColumnMeta, Executor, JoinProbe, ResultSet, Sampling};
use crate::planner::{Field, LogicalPlan};
use crate::protocol::{evaluate_termination, FactLookup, TerminationCriterion};
use crate::value::{Row, Value};

pub const DEFAULT_CHECKPOINT_ROWS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Computed over all rows.
    Exact,
    /// Scaled by the inverse inclusion probability.
    HorvitzThompson,
    /// Ratio of scaled sum to scaled count; the scales cancel.
    Ratio,
    /// Sample minimum or maximum, never scaled.
    SampleExtreme,
}

/// Which side of the true value a sample extreme lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// The true value is at least this.
    Lower,
    /// The true value is at most this.
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggEstimate {
    pub group: Vec<Value>,
    pub aggregate: String,
    pub point: Value,
    pub std_error: Option<f64>,
    /// Input rows of the group that survived sampling.
    pub n_sampled: u64,
    pub sample_fraction: f64,
    /// Probability that one input row was drawn (fraction per scan, multiplied over joins).
    pub inclusion: f64,
    pub scaling: Scaling,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<Bound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub result: ResultSet,
    pub aggregates: Vec<AggEstimate>,
    pub sample_fraction: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Horvitz-Thompson count, rounded to the nearest integer.
pub fn scale_count(n: u64, inclusion: f64) -> i64 {
    (n as f64 / inclusion).round() as i64
}

fn has_distinct_aggregate(plan: &LogicalPlan) -> bool {
    let mut found = false;
    plan.walk(&mut |n| {
        if let LogicalPlan::Aggregate { aggs, .. } = n {
            found |= aggs.iter().any(|a| a.distinct);
        }
    });
    found
}

impl Executor<'_> {
    /// Evaluate under this executor's sampling (none means fraction 1).
    /// Plans with DISTINCT aggregates are answered exactly, with a warning.
    pub fn estimate(&self, plan: &LogicalPlan) -> Result<Estimate> {
        let sampling = self.sampling().unwrap_or(Sampling { fraction: 1.0, seed: 0 });
        if !(sampling.fraction > 0.0 && sampling.fraction <= 1.0) {
            return Err(Error::Eval(format!("sample fraction {} is outside (0, 1]", sampling.fraction)));
        }
        let mut warnings = Vec::new();
        let mut fraction = sampling.fraction;
        if fraction < 1.0 && has_distinct_aggregate(plan) {
            warnings.push("distinct aggregates are not estimable from a sample; answered exactly".to_string());
            fraction = 1.0;
            self.set_sampling(Some(Sampling { fraction, seed: sampling.seed }));
        }
        let out = self.execute_with_estimates(plan);
        self.set_sampling(Some(sampling));
        let (result, aggs) = out?;
        Ok(Estimate { result, aggregates: aggs.as_ref().clone(), sample_fraction: fraction, seed: sampling.seed, warnings })
    }
}

/// Sampled evaluation without a shared cache.
pub fn execute_sampled(snap: &Snapshot, plan: &LogicalPlan, fraction: f64, seed: u64) -> Result<Estimate> {
    Executor::new(snap).with_sampling(Sampling { fraction, seed }).estimate(plan)
}

/// Running count, mean and sum of squared deviations (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Sample variance; needs two values.
    pub fn variance(&self) -> Option<f64> {
        (self.count >= 2).then(|| self.m2 / (self.count - 1) as f64)
    }

    pub fn stddev(&self) -> Option<f64> {
        self.variance().map(|v| v.max(0.0).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialResult {
    pub columns: Vec<ColumnMeta>,
    pub rows: Vec<Row>,
    /// Per column; only numeric non-null values contribute.
    pub moments: Vec<Moments>,
    pub checkpoint: u64,
}

impl PartialResult {
    pub fn new(columns: Vec<ColumnMeta>) -> Self {
        let moments = vec![Moments::default(); columns.len()];
        PartialResult { columns, rows: Vec::new(), moments, checkpoint: 0 }
    }

    pub fn from_result(rs: &ResultSet) -> Self {
        let mut p = PartialResult::new(rs.columns.clone());
        for r in &rs.rows {
            p.push(r.clone());
        }
        p
    }

    pub fn push(&mut self, row: Row) {
        for (m, v) in self.moments.iter_mut().zip(&row) {
            if let Some(x) = v.as_f64() {
                m.push(x);
            }
        }
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct IncrementalOutcome {
    pub result: ResultSet,
    pub partial: PartialResult,
    pub terminated_early: bool,
    pub warnings: Vec<String>,
    pub executed_operators: u64,
}

enum Stage {
    Filter(BoundExpr),
    Project(Vec<BoundExpr>),
    Join(JoinProbe),
    Distinct(HashSet<Row>),
    Limit(u64),
}

/// Streaming spine of a plan: nodes from the root down to the driving scan,
/// following the probe (left) side of joins. `None` when a blocking operator
/// sits on the spine.
fn spine(plan: &LogicalPlan) -> Option<(Vec<&LogicalPlan>, &str, &[Field])> {
    let mut nodes = Vec::new();
    let mut cur = plan;
    loop {
        match cur {
            LogicalPlan::Scan { table, fields } => return Some((nodes, table, fields)),
            LogicalPlan::Filter { input, .. }
            | LogicalPlan::Project { input, .. }
            | LogicalPlan::Limit { input, .. }
            | LogicalPlan::Distinct { input } => {
                nodes.push(cur);
                cur = input;
            }
            LogicalPlan::HashJoin { left, .. } => {
                nodes.push(cur);
                cur = left;
            }
            LogicalPlan::Aggregate { .. } | LogicalPlan::Sort { .. } => return None,
        }
    }
}

/// Run `plan`, checking `criterion` after every `checkpoint_rows` output
/// rows. Blocking plans (aggregates, sorts) run to completion.
pub fn execute_incremental(
    snap: &Snapshot,
    plan: &LogicalPlan,
    criterion: Option<&TerminationCriterion>,
    checkpoint_rows: usize,
    facts: &dyn FactLookup,
) -> Result<IncrementalOutcome> {
    if checkpoint_rows == 0 {
        return Err(Error::Eval("checkpoint_rows must be at least 1".into()));
    }
    let columns: Vec<ColumnMeta> = plan.fields()?.into_iter().map(|f| ColumnMeta { name: f.label, ty: f.ty }).collect();
    let exec = Executor::new(snap);
    let Some((nodes, table, scan_fields)) = spine(plan) else {
        let result = exec.execute(plan)?;
        let partial = PartialResult::from_result(&result);
        return Ok(IncrementalOutcome {
            result,
            partial,
            terminated_early: false,
            warnings: Vec::new(),
            executed_operators: exec.executed_operators(),
        });
    };

    let mut stages = Vec::with_capacity(nodes.len());
    let mut fields = scan_fields.to_vec();
    for node in nodes.iter().rev() {
        match node {
            LogicalPlan::Filter { predicate, .. } => stages.push(Stage::Filter(compile(predicate, &fields)?)),
            LogicalPlan::Project { exprs, .. } => {
                stages.push(Stage::Project(exprs.iter().map(|e| compile(e, &fields)).collect::<Result<_>>()?));
                fields = node.fields()?;
            }
            LogicalPlan::HashJoin { on, right, .. } => {
                let built = exec.run(right)?;
                stages.push(Stage::Join(JoinProbe::new(on, &fields, &built.fields, built.rows.clone())?));
                fields.extend(built.fields.iter().cloned());
            }
            LogicalPlan::Distinct { .. } => stages.push(Stage::Distinct(HashSet::new())),
            LogicalPlan::Limit { n, .. } => stages.push(Stage::Limit(*n)),
            _ => unreachable!("spine holds streaming nodes only"),
        }
    }
    let executed_operators = exec.executed_operators() + nodes.len() as u64 + 1;

    let mut partial = PartialResult::new(columns.clone());
    let mut warnings = Vec::new();
    let mut watching = criterion.is_some();
    let mut next_checkpoint = checkpoint_rows;
    let mut terminated_early = false;
    let mut exhausted = false;
    'scan: for row in snap.scan(table)? {
        let mut cur = vec![row.clone()];
        for stage in stages.iter_mut() {
            if cur.is_empty() {
                break;
            }
            cur = match stage {
                Stage::Filter(p) => {
                    let mut keep = Vec::with_capacity(cur.len());
                    for r in cur {
                        if p.truthy(&r)? {
                            keep.push(r);
                        }
                    }
                    keep
                }
                Stage::Project(exprs) => cur
                    .iter()
                    .map(|r| exprs.iter().map(|e| e.eval(r)).collect::<Result<Row>>())
                    .collect::<Result<_>>()?,
                Stage::Join(probe) => {
                    let mut out = Vec::new();
                    for r in &cur {
                        probe.probe(r, &mut out)?;
                    }
                    out
                }
                Stage::Distinct(seen) => cur.into_iter().filter(|r| seen.insert(r.clone())).collect(),
                Stage::Limit(left) => {
                    let take = (*left as usize).min(cur.len());
                    cur.truncate(take);
                    *left -= take as u64;
                    if *left == 0 {
                        exhausted = true;
                    }
                    cur
                }
            };
        }
        for r in cur {
            partial.push(r);
        }
        while partial.rows.len() >= next_checkpoint {
            partial.checkpoint += 1;
            next_checkpoint += checkpoint_rows;
            if let (true, Some(c)) = (watching, criterion) {
                match evaluate_termination(c, &partial, facts) {
                    Ok(true) => {
                        terminated_early = true;
                        break 'scan;
                    }
                    Ok(false) | Err(Error::InsufficientRows(_)) => {}
                    Err(e) => {
                        warnings.push(format!("termination criterion disabled: {e}"));
                        watching = false;
                    }
                }
            }
        }
        if exhausted {
            break;
        }
    }

    let result = ResultSet {
        columns,
        rows: partial.rows.clone(),
        exact: !terminated_early,
        source_version: source_versions(snap, plan),
    };
    Ok(IncrementalOutcome { result, partial, terminated_early, warnings, executed_operators })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_scaling_arithmetic() {
        assert_eq!(scale_count(37, 0.1), 370);
        assert_eq!(scale_count(0, 0.5), 0);
        assert_eq!(scale_count(5, 1.0), 5);
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs = [3.0, 1.5, 9.25, -4.0, 2.0, 2.0];
        let mut m = Moments::default();
        xs.iter().for_each(|x| m.push(*x));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((m.mean - mean).abs() < 1e-12);
        assert!((m.variance().unwrap() - var).abs() < 1e-12);
        let mut one = Moments::default();
        one.push(1.0);
        assert_eq!(one.stddev(), None);
    }
}
