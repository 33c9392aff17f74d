//! Sleeper agents: deterministic rules that attach steering feedback to a
//! probe response.
//!
//! Payload schemas per kind:
//!
//! | kind            | payload fields                                                                  |
//! |-----------------|---------------------------------------------------------------------------------|
//! | `why_not`       | `conjunct`, `column?`, `literal?`, `rows_without`, `sample_fraction`, `suggestions` |
//! | `cost_warning`  | `total_cost`, `threshold`, `suggested_column?`, `cost_with_suggestion?`          |
//! | `related_table` | `scope`, `tables: [{table, column, via_column, score}]`                          |
//! | `cache_notice`  | `fact_key`, `data_versions`                                                      |
//! | `batching_hint` | `probes`, `fingerprints`, `shared_cost`, `estimated_saving`                      |

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::branch::BranchId;
use crate::catalog::is_catalog_table;
use crate::db::Snapshot;
use crate::error::Result;
use crate::exec::{Executor, Sampling};
use crate::planner::{estimate_cost, CmpOp, Expr, LogicalPlan, StatsProvider};
use crate::protocol::{Probe, QueryOutcome};
use crate::similarity::{bottom_k, jaccard, trigram_similarity};
use crate::value::{DataType, Value};

/// Diagnostic sample fraction for why-not.
pub const WHY_NOT_FRACTION: f64 = 0.1;
pub const WHY_NOT_SUGGESTIONS: usize = 5;
/// Values sampled per column for join discovery.
pub const RELATED_SAMPLE: usize = 1000;
pub const RELATED_THRESHOLD: f64 = 0.3;
pub const RELATED_TOP: usize = 3;
pub const BATCHING_WINDOW: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    WhyNot,
    CostWarning,
    RelatedTable,
    CacheNotice,
    BatchingHint,
}

impl FeedbackKind {
    pub fn name(self) -> &'static str {
        match self {
            FeedbackKind::WhyNot => "why_not",
            FeedbackKind::CostWarning => "cost_warning",
            FeedbackKind::RelatedTable => "related_table",
            FeedbackKind::CacheNotice => "cache_notice",
            FeedbackKind::BatchingHint => "batching_hint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feedback {
    pub kind: FeedbackKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_qid: Option<String>,
    pub message: String,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhyNotPayload {
    /// Canonical text of the offending conjunct.
    pub conjunct: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub literal: Option<Value>,
    /// Rows produced on the diagnostic sample once the conjunct is dropped.
    pub rows_without: u64,
    pub sample_fraction: f64,
    pub suggestions: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostWarningPayload {
    pub total_cost: f64,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggested_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_with_suggestion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelatedTable {
    pub table: String,
    pub column: String,
    /// Column of a scope table it pairs with, as `table.column`.
    pub via_column: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelatedTablePayload {
    pub scope: Vec<String>,
    pub tables: Vec<RelatedTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheNoticePayload {
    pub fact_key: String,
    pub data_versions: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchingHintPayload {
    pub probes: Vec<String>,
    /// Shared sub-plan fingerprints, largest first.
    pub fingerprints: Vec<String>,
    pub shared_cost: f64,
    pub estimated_saving: f64,
}

fn to_payload<T: Serialize>(p: &T) -> serde_json::Value {
    serde_json::to_value(p).expect("payloads serialize")
}

impl Feedback {
    pub fn why_not(qid: Option<&str>, p: &WhyNotPayload) -> Feedback {
        let mut message = format!(
            "no rows: dropping `{}` yields {} rows on a {:.0}% sample",
            p.conjunct,
            p.rows_without,
            p.sample_fraction * 100.0
        );
        if !p.suggestions.is_empty() {
            let vals: Vec<String> = p.suggestions.iter().map(Value::to_sql_literal).collect();
            message.push_str(&format!("; closest values: {}", vals.join(", ")));
        }
        Feedback { kind: FeedbackKind::WhyNot, target_qid: qid.map(str::to_string), message, payload: to_payload(p) }
    }

    pub fn cost_warning(qid: Option<&str>, p: &CostWarningPayload) -> Feedback {
        let mut message = format!("estimated cost {:.0} row-touches exceeds {:.0}", p.total_cost, p.threshold);
        if let (Some(c), Some(after)) = (&p.suggested_column, p.cost_with_suggestion) {
            message.push_str(&format!("; an equality filter on {c} brings it to about {after:.0}"));
        }
        Feedback { kind: FeedbackKind::CostWarning, target_qid: qid.map(str::to_string), message, payload: to_payload(p) }
    }

    pub fn related_tables(p: &RelatedTablePayload) -> Feedback {
        let names: Vec<String> = p.tables.iter().map(|t| format!("{} (via {})", t.table, t.via_column)).collect();
        Feedback {
            kind: FeedbackKind::RelatedTable,
            target_qid: None,
            message: format!("related tables: {}", names.join(", ")),
            payload: to_payload(p),
        }
    }

    pub fn cache_notice(qid: Option<&str>, p: &CacheNoticePayload) -> Feedback {
        Feedback {
            kind: FeedbackKind::CacheNotice,
            target_qid: qid.map(str::to_string),
            message: format!("answered from memory fact {}", p.fact_key),
            payload: to_payload(p),
        }
    }

    pub fn batching_hint(p: &BatchingHintPayload) -> Feedback {
        Feedback {
            kind: FeedbackKind::BatchingHint,
            target_qid: None,
            message: format!(
                "the last {} probes share {} sub-plan(s); batching them saves about {:.0} row-touches",
                p.probes.len(),
                p.fingerprints.len(),
                p.estimated_saving
            ),
            payload: to_payload(p),
        }
    }
}

// ---------------------------------------------------------------------------
// why_not

/// Strip the output-shaping operators above the first filter, join or scan.
fn row_core(plan: &LogicalPlan) -> &LogicalPlan {
    match plan {
        LogicalPlan::Project { input, .. }
        | LogicalPlan::Aggregate { input, .. }
        | LogicalPlan::Sort { input, .. }
        | LogicalPlan::Limit { input, .. }
        | LogicalPlan::Distinct { input } => row_core(input),
        other => other,
    }
}

/// All filter conjuncts of the plan, in pre-order then canonical order.
fn conjuncts(plan: &LogicalPlan) -> Vec<Expr> {
    let mut out = Vec::new();
    plan.walk(&mut |n| {
        if let LogicalPlan::Filter { predicate, .. } = n {
            out.extend(predicate.conjuncts().into_iter().cloned());
        }
    });
    out
}

/// The plan with conjunct number `skip` (in [`conjuncts`] order) removed.
fn without_conjunct(plan: &LogicalPlan, skip: usize) -> LogicalPlan {
    fn go(p: &LogicalPlan, skip: usize, seen: &mut usize) -> LogicalPlan {
        match p {
            LogicalPlan::Filter { predicate, input } => {
                let parts = predicate.conjuncts();
                let base = *seen;
                *seen += parts.len();
                let kept: Vec<Expr> = parts
                    .into_iter()
                    .enumerate()
                    .filter(|(i, _)| base + i != skip)
                    .map(|(_, e)| e.clone())
                    .collect();
                let input = go(input, skip, seen);
                match Expr::and_all(kept) {
                    Some(predicate) => LogicalPlan::Filter { predicate, input: Box::new(input) },
                    None => input,
                }
            }
            LogicalPlan::Scan { .. } => p.clone(),
            LogicalPlan::Project { exprs, labels, input } => LogicalPlan::Project {
                exprs: exprs.clone(),
                labels: labels.clone(),
                input: Box::new(go(input, skip, seen)),
            },
            LogicalPlan::HashJoin { on, left, right } => {
                let left = Box::new(go(left, skip, seen));
                let right = Box::new(go(right, skip, seen));
                LogicalPlan::HashJoin { on: on.clone(), left, right }
            }
            LogicalPlan::Aggregate { group_by, aggs, input } => LogicalPlan::Aggregate {
                group_by: group_by.clone(),
                aggs: aggs.clone(),
                input: Box::new(go(input, skip, seen)),
            },
            LogicalPlan::Sort { keys, input } => LogicalPlan::Sort { keys: keys.clone(), input: Box::new(go(input, skip, seen)) },
            LogicalPlan::Limit { n, input } => LogicalPlan::Limit { n: *n, input: Box::new(go(input, skip, seen)) },
            LogicalPlan::Distinct { input } => LogicalPlan::Distinct { input: Box::new(go(input, skip, seen)) },
        }
    }
    go(plan, skip, &mut 0)
}

/// Column and literal a conjunct tests, when it has that shape.
fn column_and_literal(e: &Expr) -> Option<(&str, Option<&Value>)> {
    match e {
        Expr::Cmp { left, right, .. } => match (left.as_ref(), right.as_ref()) {
            (Expr::Column(c), Expr::Literal(v)) | (Expr::Literal(v), Expr::Column(c)) => Some((c, Some(v))),
            _ => None,
        },
        Expr::Like { expr, .. } | Expr::SemanticLike { expr, .. } | Expr::IsNull { expr, .. } => match expr.as_ref() {
            Expr::Column(c) => Some((c, None)),
            _ => None,
        },
        Expr::In { expr, list, .. } => match expr.as_ref() {
            Expr::Column(c) => Some((c, list.first())),
            _ => None,
        },
        Expr::Not(x) => column_and_literal(x),
        _ => None,
    }
}

fn probe_text(e: &Expr) -> Option<String> {
    match e {
        Expr::Like { pattern, .. } => Some(pattern.replace(['%', '_'], " ")),
        Expr::SemanticLike { phrase, .. } => Some(phrase.clone()),
        _ => None,
    }
}

/// Up to five column values closest to the literal the conjunct tests.
fn suggest_values(snap: &Snapshot, column: &str, target: &Value) -> Vec<Value> {
    let Some((table, col)) = column.split_once('.') else { return Vec::new() };
    let Ok(t) = snap.table(table) else { return Vec::new() };
    let Some(i) = t.schema.column_index(col) else { return Vec::new() };
    let values = bottom_k(t.rows().map(|r| (&r[i], ())), crate::planner::CELL_SAMPLE_CAP);
    let mut scored: Vec<(f64, Value)> = match target {
        Value::Text(s) => values
            .into_iter()
            .filter_map(|(v, _)| match &v {
                Value::Text(x) => Some((trigram_similarity(s, x), v)),
                _ => None,
            })
            .filter(|(s, _)| *s > 0.0)
            .collect(),
        other => match other.as_f64() {
            Some(x) => values
                .into_iter()
                .filter_map(|(v, _)| v.as_f64().map(|y| (-(x - y).abs(), v)))
                .collect(),
            None => Vec::new(),
        },
    };
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.total_cmp(&b.1)));
    scored.into_iter().take(WHY_NOT_SUGGESTIONS).map(|(_, v)| v).collect()
}

/// Plans whose result came back empty: no rows, or a global COUNT of zero.
pub fn result_looks_empty(plan: &LogicalPlan, rows: &[crate::value::Row]) -> bool {
    if rows.is_empty() {
        return true;
    }
    if let LogicalPlan::Aggregate { group_by, aggs, .. } = row_shape_root(plan) {
        if group_by.is_empty() && rows.len() == 1 {
            if let Some(pos) = aggs.iter().position(|a| a.func == crate::planner::AggFunc::Count) {
                return rows[0].get(pos) == Some(&Value::Int(0));
            }
        }
    }
    false
}

fn row_shape_root(plan: &LogicalPlan) -> &LogicalPlan {
    match plan {
        LogicalPlan::Project { input, .. } | LogicalPlan::Sort { input, .. } | LogicalPlan::Limit { input, .. } => {
            row_shape_root(input)
        }
        other => other,
    }
}

/// Name the conjunct responsible for an empty result.
///
/// Conjuncts are dropped one at a time in canonical order and the row core
/// of the plan is re-run on a 10% Bernoulli sample; if no removal yields rows
/// on the sample the same pass is repeated on the full data.
pub fn diagnose_empty_result(plan: &LogicalPlan, snap: &Snapshot, seed: u64, qid: Option<&str>) -> Result<Option<Feedback>> {
    let core = row_core(plan);
    let parts = conjuncts(core);
    if parts.is_empty() {
        return Ok(None);
    }
    for fraction in [WHY_NOT_FRACTION, 1.0] {
        for (i, c) in parts.iter().enumerate() {
            let relaxed = without_conjunct(core, i);
            let ex = Executor::new(snap).with_sampling(Sampling { fraction, seed });
            let n = ex.execute(&relaxed)?.rows.len() as u64;
            if n == 0 {
                continue;
            }
            let (column, literal) = match column_and_literal(c) {
                Some((col, lit)) => (Some(col.to_string()), lit.cloned()),
                None => (None, None),
            };
            let target = literal.clone().or_else(|| probe_text(c).map(Value::Text));
            let suggestions = match (&column, &target) {
                (Some(col), Some(t)) => suggest_values(snap, col, t),
                _ => Vec::new(),
            };
            let p = WhyNotPayload { conjunct: c.canonical(), column, literal, rows_without: n, sample_fraction: fraction, suggestions };
            return Ok(Some(Feedback::why_not(qid, &p)));
        }
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// cost_warning

fn wrap_scan(plan: &LogicalPlan, table: &str, pred: &Expr) -> LogicalPlan {
    match plan {
        LogicalPlan::Scan { table: t, .. } if t == table => {
            LogicalPlan::Filter { predicate: pred.clone(), input: Box::new(plan.clone()) }
        }
        LogicalPlan::Scan { .. } => plan.clone(),
        _ => map_children(plan, &|c| wrap_scan(c, table, pred)),
    }
}

fn replace_conjunct(plan: &LogicalPlan, skip: usize, with: &Expr) -> LogicalPlan {
    let relaxed = without_conjunct(plan, skip);
    let table_of = conjuncts(plan)[skip].columns().first().and_then(|c| c.split_once('.').map(|(t, _)| t.to_string()));
    match table_of {
        Some(t) => wrap_scan(&relaxed, &t, with),
        None => relaxed,
    }
}

fn map_children(plan: &LogicalPlan, f: &dyn Fn(&LogicalPlan) -> LogicalPlan) -> LogicalPlan {
    match plan {
        LogicalPlan::Scan { .. } => plan.clone(),
        LogicalPlan::Filter { predicate, input } => LogicalPlan::Filter { predicate: predicate.clone(), input: Box::new(f(input)) },
        LogicalPlan::Project { exprs, labels, input } => {
            LogicalPlan::Project { exprs: exprs.clone(), labels: labels.clone(), input: Box::new(f(input)) }
        }
        LogicalPlan::HashJoin { on, left, right } => {
            LogicalPlan::HashJoin { on: on.clone(), left: Box::new(f(left)), right: Box::new(f(right)) }
        }
        LogicalPlan::Aggregate { group_by, aggs, input } => {
            LogicalPlan::Aggregate { group_by: group_by.clone(), aggs: aggs.clone(), input: Box::new(f(input)) }
        }
        LogicalPlan::Sort { keys, input } => LogicalPlan::Sort { keys: keys.clone(), input: Box::new(f(input)) },
        LogicalPlan::Limit { n, input } => LogicalPlan::Limit { n: *n, input: Box::new(f(input)) },
        LogicalPlan::Distinct { input } => LogicalPlan::Distinct { input: Box::new(f(input)) },
    }
}

/// The column whose equality restriction lowers estimated cost the most,
/// with the resulting cost. Candidates are columns of existing filter
/// conjuncts (the conjunct is replaced by an equality at the scan) and
/// grouping columns (an equality is added at the scan). Ties go to the
/// lexicographically smallest column.
pub fn suggest_restriction(plan: &LogicalPlan, stats: &dyn StatsProvider) -> Option<(String, f64)> {
    let mut best: Option<(f64, String)> = None;
    let mut consider = |col: &str, candidate: LogicalPlan| {
        let cost = estimate_cost(&candidate, stats).total_cost;
        let better = match &best {
            None => true,
            Some((c, name)) => cost < *c || (cost == *c && col < name.as_str()),
        };
        if better {
            best = Some((cost, col.to_string()));
        }
    };
    for (i, c) in conjuncts(plan).iter().enumerate() {
        if let Some((col, lit)) = column_and_literal(c) {
            let eq = Expr::cmp(CmpOp::Eq, Expr::col(col), Expr::Literal(lit.cloned().unwrap_or(Value::Null)));
            consider(col, replace_conjunct(plan, i, &eq));
        }
    }
    let mut groups = Vec::new();
    plan.walk(&mut |n| {
        if let LogicalPlan::Aggregate { group_by, .. } = n {
            for g in group_by {
                if let Expr::Column(c) = g {
                    groups.push(c.clone());
                }
            }
        }
    });
    for col in groups {
        if let Some((t, _)) = col.split_once('.') {
            let eq = Expr::cmp(CmpOp::Eq, Expr::col(col.as_str()), Expr::Literal(Value::Null));
            consider(&col, wrap_scan(plan, t, &eq));
        }
    }
    let original = estimate_cost(plan, stats).total_cost;
    best.filter(|(c, _)| *c < original).map(|(c, n)| (n, c))
}

pub fn cost_feedback(plan: &LogicalPlan, stats: &dyn StatsProvider, threshold: f64, qid: Option<&str>) -> Option<Feedback> {
    let total = estimate_cost(plan, stats).total_cost;
    if total <= threshold {
        return None;
    }
    let suggestion = suggest_restriction(plan, stats);
    let p = CostWarningPayload {
        total_cost: total,
        threshold,
        suggested_column: suggestion.as_ref().map(|s| s.0.clone()),
        cost_with_suggestion: suggestion.map(|s| s.1),
    };
    Some(Feedback::cost_warning(qid, &p))
}

// ---------------------------------------------------------------------------
// related_table

type SampleKey = (BranchId, String, u64, usize);

/// Memoized per-column value samples for join discovery.
#[derive(Default)]
pub struct ValueSamples {
    cache: Mutex<HashMap<SampleKey, Arc<HashSet<String>>>>,
}

impl ValueSamples {
    fn get(&self, snap: &Snapshot, table: &str, col: usize) -> Arc<HashSet<String>> {
        let Ok(t) = snap.table(table) else { return Arc::default() };
        let key = (snap.branch, table.to_string(), t.version, col);
        if let Some(s) = self.cache.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return s.clone();
        }
        let set: HashSet<String> =
            bottom_k(t.rows().map(|r| (&r[col], ())), RELATED_SAMPLE).into_iter().map(|(v, _)| v.to_sql_literal()).collect();
        let set = Arc::new(set);
        self.cache.lock().unwrap_or_else(|e| e.into_inner()).insert(key, set.clone());
        set
    }
}

fn join_compatible(a: DataType, b: DataType) -> bool {
    a == b || (a.is_numeric() && b.is_numeric())
}

/// Tables outside `scope` ranked by the best column pair score
/// `name_similarity × value_jaccard`.
pub fn rank_related_tables(scope: &[&str], snap: &Snapshot, samples: &ValueSamples) -> Vec<RelatedTable> {
    let mut out = Vec::new();
    for cand in snap.tables.keys() {
        if scope.contains(&cand.as_str()) || is_catalog_table(cand) {
            continue;
        }
        let cs = &snap.tables[cand].schema;
        let mut best: Option<RelatedTable> = None;
        for s in scope {
            let Ok(st) = snap.table(s) else { continue };
            for (i, a) in st.schema.columns.iter().enumerate() {
                for (j, b) in cs.columns.iter().enumerate() {
                    if !join_compatible(a.ty, b.ty) {
                        continue;
                    }
                    let name = trigram_similarity(&a.name, &b.name);
                    if name <= 0.0 {
                        continue;
                    }
                    let overlap = jaccard(&samples.get(snap, s, i), &samples.get(snap, cand, j));
                    let score = name * overlap;
                    let r = RelatedTable { table: cand.clone(), column: b.name.clone(), via_column: format!("{s}.{}", a.name), score };
                    if score > 0.0 && best.as_ref().is_none_or(|x| score > x.score) {
                        best = Some(r);
                    }
                }
            }
        }
        out.extend(best);
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.table.cmp(&b.table)));
    out
}

pub fn suggest_related_tables(scope: &[&str], snap: &Snapshot, samples: &ValueSamples) -> Option<Feedback> {
    if scope.is_empty() {
        return None;
    }
    let mut ranked = rank_related_tables(scope, snap, samples);
    if ranked.first().is_none_or(|r| r.score < RELATED_THRESHOLD) {
        return None;
    }
    ranked.truncate(RELATED_TOP);
    let p = RelatedTablePayload { scope: scope.iter().map(|s| s.to_string()).collect(), tables: ranked };
    Some(Feedback::related_tables(&p))
}

// ---------------------------------------------------------------------------
// batching_hint

/// What the batching rule remembers about one past probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub probe_id: String,
    pub query_count: usize,
    /// Sub-plan fingerprint hex to (size, estimated cost of that sub-plan).
    pub subplans: BTreeMap<String, (usize, f64)>,
}

impl ProbeSummary {
    pub fn new(probe_id: impl Into<String>, plans: &[&LogicalPlan], query_count: usize, stats: &dyn StatsProvider) -> Self {
        let mut subplans = BTreeMap::new();
        for p in plans {
            for s in crate::planner::enumerate_subplans(p) {
                let fp = crate::planner::fingerprint(s.node).hex();
                subplans.entry(fp).or_insert_with(|| (s.size, estimate_cost(s.node, stats).total_cost));
            }
        }
        ProbeSummary { probe_id: probe_id.into(), query_count, subplans }
    }
}

/// Hint when the last three probes were single-query and share a sub-plan
/// of two or more operators. Saving is the largest shared sub-plan's cost
/// times (n − 1).
pub fn batching_hint(history: &[ProbeSummary]) -> Option<Feedback> {
    if history.len() < BATCHING_WINDOW {
        return None;
    }
    let recent = &history[history.len() - BATCHING_WINDOW..];
    if recent.iter().any(|p| p.query_count != 1) {
        return None;
    }
    let mut shared: Vec<(&String, usize, f64)> = recent[0]
        .subplans
        .iter()
        .filter(|(fp, (size, _))| *size >= 2 && recent[1..].iter().all(|p| p.subplans.contains_key(*fp)))
        .map(|(fp, (size, cost))| (fp, *size, *cost))
        .collect();
    if shared.is_empty() {
        return None;
    }
    shared.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| b.2.total_cmp(&a.2)).then_with(|| a.0.cmp(b.0)));
    let shared_cost = shared[0].2;
    let p = BatchingHintPayload {
        probes: recent.iter().map(|p| p.probe_id.clone()).collect(),
        fingerprints: shared.iter().map(|s| s.0.clone()).collect(),
        shared_cost,
        estimated_saving: shared_cost * (BATCHING_WINDOW as f64 - 1.0),
    };
    Some(Feedback::batching_hint(&p))
}

// ---------------------------------------------------------------------------
// Registry

/// One executed (or planned) query of the current probe.
pub struct QueryContext<'a> {
    pub qid: &'a str,
    pub plan: &'a LogicalPlan,
    pub outcome: &'a QueryOutcome,
}

pub struct FeedbackContext<'a> {
    pub snap: &'a Snapshot,
    pub probe: &'a Probe,
    pub queries: Vec<QueryContext<'a>>,
    /// This agent's probes, oldest first, ending with the current one.
    pub history: &'a [ProbeSummary],
    pub cost_threshold: f64,
    pub seed: u64,
}

/// A feedback rule. Rules only read.
pub trait SleeperAgent: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(&self, ctx: &FeedbackContext<'_>) -> Result<Vec<Feedback>>;
}

pub struct WhyNotAgent;

impl SleeperAgent for WhyNotAgent {
    fn name(&self) -> &'static str {
        "why_not"
    }

    fn run(&self, ctx: &FeedbackContext<'_>) -> Result<Vec<Feedback>> {
        let mut out = Vec::new();
        for q in &ctx.queries {
            let Some(rows) = q.outcome.rows() else { continue };
            if result_looks_empty(q.plan, rows) {
                out.extend(diagnose_empty_result(q.plan, ctx.snap, ctx.seed, Some(q.qid))?);
            }
        }
        Ok(out)
    }
}

pub struct CostWarningAgent;

impl SleeperAgent for CostWarningAgent {
    fn name(&self) -> &'static str {
        "cost_warning"
    }

    fn run(&self, ctx: &FeedbackContext<'_>) -> Result<Vec<Feedback>> {
        Ok(ctx
            .queries
            .iter()
            .filter(|q| q.outcome.rows().is_some())
            .filter_map(|q| cost_feedback(q.plan, ctx.snap, ctx.cost_threshold, Some(q.qid)))
            .collect())
    }
}

#[derive(Default)]
pub struct RelatedTableAgent {
    samples: ValueSamples,
}

impl SleeperAgent for RelatedTableAgent {
    fn name(&self) -> &'static str {
        "related_table"
    }

    fn run(&self, ctx: &FeedbackContext<'_>) -> Result<Vec<Feedback>> {
        let mut scope: Vec<&str> = ctx.queries.iter().flat_map(|q| q.plan.tables()).filter(|t| !is_catalog_table(t)).collect();
        scope.sort_unstable();
        scope.dedup();
        Ok(suggest_related_tables(&scope, ctx.snap, &self.samples).into_iter().collect())
    }
}

pub struct BatchingHintAgent;

impl SleeperAgent for BatchingHintAgent {
    fn name(&self) -> &'static str {
        "batching_hint"
    }

    fn run(&self, ctx: &FeedbackContext<'_>) -> Result<Vec<Feedback>> {
        Ok(batching_hint(ctx.history).into_iter().collect())
    }
}

/// Ordered set of rules run after a probe's results are produced.
pub struct FeedbackEngine {
    agents: Vec<Box<dyn SleeperAgent>>,
    /// Advisory per-probe budget; overruns are logged, output is kept so
    /// feedback stays a pure function of state.
    pub budget: Duration,
}

impl Default for FeedbackEngine {
    fn default() -> Self {
        FeedbackEngine {
            agents: vec![
                Box::new(WhyNotAgent),
                Box::new(CostWarningAgent),
                Box::new(RelatedTableAgent::default()),
                Box::new(BatchingHintAgent),
            ],
            budget: Duration::from_millis(50),
        }
    }
}

impl FeedbackEngine {
    pub fn empty() -> Self {
        FeedbackEngine { agents: Vec::new(), budget: Duration::from_millis(50) }
    }

    pub fn register(&mut self, agent: Box<dyn SleeperAgent>) {
        self.agents.push(agent);
    }

    pub fn agent_names(&self) -> Vec<&'static str> {
        self.agents.iter().map(|a| a.name()).collect()
    }

    pub fn run(&self, ctx: &FeedbackContext<'_>) -> Vec<Feedback> {
        let start = Instant::now();
        let mut out = Vec::new();
        for a in &self.agents {
            match a.run(ctx) {
                Ok(f) => out.extend(f),
                Err(e) => tracing::warn!(agent = a.name(), error = %e, "sleeper agent failed"),
            }
        }
        let spent = start.elapsed();
        if spent > self.budget {
            tracing::debug!(probe = %ctx.probe.probe_id, ?spent, budget = ?self.budget, "feedback over budget");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batching_needs_three_single_query_probes() {
        let mk = |id: &str, fps: &[(&str, usize, f64)]| ProbeSummary {
            probe_id: id.into(),
            query_count: 1,
            subplans: fps.iter().map(|(f, s, c)| (f.to_string(), (*s, *c))).collect(),
        };
        let h = vec![
            mk("a", &[("j", 3, 500.0), ("s", 1, 100.0), ("x", 4, 600.0)]),
            mk("b", &[("j", 3, 500.0), ("s", 1, 100.0), ("y", 4, 600.0)]),
            mk("c", &[("j", 3, 500.0), ("s", 1, 100.0)]),
        ];
        let f = batching_hint(&h).unwrap();
        let p: BatchingHintPayload = serde_json::from_value(f.payload).unwrap();
        assert_eq!(p.fingerprints, vec!["j".to_string()]);
        assert_eq!(p.estimated_saving, 1000.0);
        assert!(batching_hint(&h[..2]).is_none());
        let unrelated = vec![mk("a", &[("s", 1, 1.0)]), mk("b", &[("s", 1, 1.0)]), mk("c", &[("t", 2, 1.0)])];
        assert!(batching_hint(&unrelated).is_none());
    }

    #[test]
    fn messages_are_templated_from_payload() {
        let p = CacheNoticePayload { fact_key: "00ff".into(), data_versions: BTreeMap::new() };
        assert_eq!(Feedback::cache_notice(Some("q"), &p), Feedback::cache_notice(Some("q"), &p));
        assert_eq!(Feedback::cache_notice(None, &p).message, "answered from memory fact 00ff");
    }
}
