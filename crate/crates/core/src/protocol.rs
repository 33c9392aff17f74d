//! The probe wire protocol.
//!
//! One UTF-8 JSON document per probe, newline-delimited when streamed:
//!
//! ```json
//! {"probe_id":"p1","agent_id":"a1","principal":"team","turn":0,"kind":"sql_batch",
//!  "queries":[{"qid":"q1","sql":"SELECT COUNT(*) FROM sales","accuracy":0.2,"priority":1}],
//!  "brief":{"phase":"column_statistics","goal":"sales trend",
//!           "k_of_n":[{"k":1,"qids":["q1"]}],
//!           "termination":[{"qid":"q1","criterion":"rowcount >= 10"}],
//!           "pairwise_priorities":[["q1","q1"]]}}
//! ```
//!
//! Optional extension keys: `branch` (branch to read or operate on),
//! `op`/`target`/`table`/`rows`/`delete` for `branch_op` probes, and
//! `scope`/`top_k` for `locate` probes, whose phrase is `brief.goal`.
//! Unknown keys are rejected.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approx::{Estimate, PartialResult};
use crate::branch::{BranchId, MergeReport};
use crate::error::{Error, Result};
use crate::exec::ResultSet;
use crate::feedback::Feedback;
use crate::planner::LocateMatch;
use crate::similarity::tokens;
use crate::value::{Row, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("unknown phase: {0}")]
    UnknownPhase(String),
    #[error("unknown probe kind: {0}")]
    UnknownKind(String),
    #[error("duplicate qid: {0}")]
    DuplicateQid(String),
    #[error("qid {0} is referenced but not defined")]
    DanglingQid(String),
    #[error("bad termination criterion: {0}")]
    BadCriterion(String),
    #[error("invalid accuracy: {0}")]
    InvalidAccuracy(String),
    #[error("invalid k_of_n group: {0}")]
    InvalidKOfN(String),
    #[error("invalid locate probe: {0}")]
    InvalidLocate(String),
    #[error("invalid branch operation: {0}")]
    InvalidBranchOp(String),
    #[error("duplicate probe_id: {0}")]
    DuplicateProbeId(String),
}

impl ProtocolError {
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::Malformed(_) => "malformed_document",
            ProtocolError::UnknownPhase(_) => "unknown_phase",
            ProtocolError::UnknownKind(_) => "unknown_kind",
            ProtocolError::DuplicateQid(_) => "duplicate_qid",
            ProtocolError::DanglingQid(_) => "dangling_qid",
            ProtocolError::BadCriterion(_) => "bad_criterion",
            ProtocolError::InvalidAccuracy(_) => "invalid_accuracy",
            ProtocolError::InvalidKOfN(_) => "invalid_k_of_n",
            ProtocolError::InvalidLocate(_) => "invalid_locate",
            ProtocolError::InvalidBranchOp(_) => "invalid_branch_op",
            ProtocolError::DuplicateProbeId(_) => "duplicate_probe_id",
        }
    }

    /// Every code this module can produce.
    pub const CODES: [&'static str; 11] = [
        "malformed_document",
        "unknown_phase",
        "unknown_kind",
        "duplicate_qid",
        "dangling_qid",
        "bad_criterion",
        "invalid_accuracy",
        "invalid_k_of_n",
        "invalid_locate",
        "invalid_branch_op",
        "duplicate_probe_id",
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    MetadataExploration,
    ColumnStatistics,
    PartialSolution,
    FullSolution,
}

impl Phase {
    pub const ALL: [Phase; 4] =
        [Phase::MetadataExploration, Phase::ColumnStatistics, Phase::PartialSolution, Phase::FullSolution];

    pub fn name(self) -> &'static str {
        match self {
            Phase::MetadataExploration => "metadata_exploration",
            Phase::ColumnStatistics => "column_statistics",
            Phase::PartialSolution => "partial_solution",
            Phase::FullSolution => "full_solution",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        Phase::ALL.into_iter().find(|p| p.name() == s)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProbeKind {
    SqlBatch,
    Locate,
    BranchOp,
}

impl ProbeKind {
    pub fn name(self) -> &'static str {
        match self {
            ProbeKind::SqlBatch => "sql_batch",
            ProbeKind::Locate => "locate",
            ProbeKind::BranchOp => "branch_op",
        }
    }

    fn parse(s: &str) -> Option<ProbeKind> {
        [ProbeKind::SqlBatch, ProbeKind::Locate, ProbeKind::BranchOp].into_iter().find(|k| k.name() == s)
    }
}

/// Requested accuracy: exact, or a sampling-fraction floor in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Accuracy {
    Exact,
    Fraction(f64),
}

impl Accuracy {
    /// Sampling fraction, with exact counting as 1.
    pub fn fraction(self) -> f64 {
        match self {
            Accuracy::Exact => 1.0,
            Accuracy::Fraction(f) => f,
        }
    }

    fn to_json(self) -> serde_json::Value {
        match self {
            Accuracy::Exact => serde_json::Value::from("exact"),
            Accuracy::Fraction(f) => serde_json::Value::from(f),
        }
    }

    fn from_json(v: &serde_json::Value) -> Result<Accuracy, ProtocolError> {
        match v {
            serde_json::Value::String(s) if s == "exact" => Ok(Accuracy::Exact),
            serde_json::Value::Number(n) => {
                let f = n.as_f64().unwrap_or(f64::NAN);
                if f > 0.0 && f <= 1.0 {
                    Ok(Accuracy::Fraction(f))
                } else {
                    Err(ProtocolError::InvalidAccuracy(format!("{f} is outside (0, 1]")))
                }
            }
            other => Err(ProtocolError::InvalidAccuracy(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeQuery {
    pub qid: String,
    pub sql: String,
    /// `None` when the document omits it; the optimizer then applies the
    /// phase policy. Reads through [`ProbeQuery::accuracy`] default to exact.
    pub accuracy: Option<Accuracy>,
    pub priority: i64,
}

impl ProbeQuery {
    pub fn new(qid: impl Into<String>, sql: impl Into<String>) -> Self {
        ProbeQuery { qid: qid.into(), sql: sql.into(), accuracy: None, priority: 0 }
    }

    pub fn accuracy(&self) -> Accuracy {
        self.accuracy.unwrap_or(Accuracy::Exact)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KOfN {
    pub k: usize,
    pub qids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Termination {
    pub qid: String,
    pub criterion: TerminationCriterion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Brief {
    pub phase: Phase,
    pub goal: String,
    pub k_of_n: Vec<KOfN>,
    pub termination: Vec<Termination>,
    /// `(a, b)`: a must be at least as accurate as b.
    pub pairwise_priorities: Vec<(String, String)>,
}

impl Brief {
    pub fn new(phase: Phase) -> Self {
        Brief { phase, goal: String::new(), k_of_n: Vec::new(), termination: Vec::new(), pairwise_priorities: Vec::new() }
    }

    /// The goal as a bag of lowercase tokens.
    pub fn goal_tokens(&self) -> Vec<String> {
        tokens(&self.goal)
    }

    pub fn termination_for(&self, qid: &str) -> Option<&TerminationCriterion> {
        self.termination.iter().find(|t| t.qid == qid).map(|t| &t.criterion)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchOpKind {
    Fork,
    Rollback,
    Merge,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocateScope {
    TableNames,
    ColumnNames,
    Cells,
}

impl LocateScope {
    pub const ALL: [LocateScope; 3] = [LocateScope::TableNames, LocateScope::ColumnNames, LocateScope::Cells];
}

/// A validated branch operation.
#[derive(Debug, Clone, PartialEq)]
pub enum BranchOp {
    Fork { parent: BranchId },
    Rollback { branch: BranchId },
    Merge { source: BranchId, target: BranchId },
    Write { branch: BranchId, table: String, rows: Vec<Row>, delete: Vec<Value> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub probe_id: String,
    pub agent_id: String,
    pub principal: String,
    pub turn: u64,
    pub kind: ProbeKind,
    pub queries: Vec<ProbeQuery>,
    pub brief: Brief,
    pub branch: Option<u64>,
    pub op: Option<BranchOpKind>,
    pub target: Option<u64>,
    pub table: Option<String>,
    pub rows: Option<Vec<Row>>,
    pub delete: Option<Vec<Value>>,
    pub scope: Option<Vec<LocateScope>>,
    pub top_k: Option<usize>,
}

impl Probe {
    /// A `sql_batch` probe with no extensions.
    pub fn sql_batch(
        probe_id: impl Into<String>,
        agent_id: impl Into<String>,
        principal: impl Into<String>,
        turn: u64,
        queries: Vec<ProbeQuery>,
        brief: Brief,
    ) -> Probe {
        Probe {
            probe_id: probe_id.into(),
            agent_id: agent_id.into(),
            principal: principal.into(),
            turn,
            kind: ProbeKind::SqlBatch,
            queries,
            brief,
            branch: None,
            op: None,
            target: None,
            table: None,
            rows: None,
            delete: None,
            scope: None,
            top_k: None,
        }
    }

    pub fn query(&self, qid: &str) -> Option<&ProbeQuery> {
        self.queries.iter().find(|q| q.qid == qid)
    }

    /// Locate phrase (the goal text).
    pub fn phrase(&self) -> &str {
        &self.brief.goal
    }

    pub fn locate_scope(&self) -> Vec<LocateScope> {
        self.scope.clone().unwrap_or_else(|| LocateScope::ALL.to_vec())
    }

    pub fn branch_op(&self) -> Result<BranchOp, ProtocolError> {
        let bad = |m: &str| ProtocolError::InvalidBranchOp(m.to_string());
        let op = self.op.ok_or_else(|| bad("branch_op requires op"))?;
        let branch = self.branch.map(BranchId);
        Ok(match op {
            BranchOpKind::Fork => BranchOp::Fork { parent: branch.unwrap_or(BranchId::MAINLINE) },
            BranchOpKind::Rollback => BranchOp::Rollback { branch: branch.ok_or_else(|| bad("rollback requires branch"))? },
            BranchOpKind::Merge => BranchOp::Merge {
                source: branch.ok_or_else(|| bad("merge requires branch"))?,
                target: BranchId(self.target.ok_or_else(|| bad("merge requires target"))?),
            },
            BranchOpKind::Write => {
                if self.rows.is_none() && self.delete.is_none() {
                    return Err(bad("write requires rows or delete"));
                }
                BranchOp::Write {
                    branch: branch.ok_or_else(|| bad("write requires branch"))?,
                    table: self.table.clone().ok_or_else(|| bad("write requires table"))?,
                    rows: self.rows.clone().unwrap_or_default(),
                    delete: self.delete.clone().unwrap_or_default(),
                }
            }
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_doc()).expect("probe documents always serialize")
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self.to_doc()).expect("probe documents always serialize")
    }

    fn to_doc(&self) -> ProbeDoc {
        ProbeDoc {
            probe_id: self.probe_id.clone(),
            agent_id: self.agent_id.clone(),
            principal: self.principal.clone(),
            turn: self.turn,
            kind: self.kind.name().to_string(),
            queries: self
                .queries
                .iter()
                .map(|q| QueryDoc {
                    qid: q.qid.clone(),
                    sql: q.sql.clone(),
                    accuracy: q.accuracy.map(Accuracy::to_json),
                    priority: q.priority,
                })
                .collect(),
            brief: BriefDoc {
                phase: self.brief.phase.name().to_string(),
                goal: self.brief.goal.clone(),
                k_of_n: self.brief.k_of_n.clone(),
                termination: self
                    .brief
                    .termination
                    .iter()
                    .map(|t| TerminationDoc { qid: t.qid.clone(), criterion: t.criterion.to_string() })
                    .collect(),
                pairwise_priorities: self.brief.pairwise_priorities.clone(),
            },
            branch: self.branch,
            op: self.op,
            target: self.target,
            table: self.table.clone(),
            rows: self.rows.clone(),
            delete: self.delete.clone(),
            scope: self.scope.clone(),
            top_k: self.top_k,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryDoc {
    qid: String,
    sql: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    accuracy: Option<serde_json::Value>,
    #[serde(default)]
    priority: i64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TerminationDoc {
    qid: String,
    criterion: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BriefDoc {
    phase: String,
    #[serde(default)]
    goal: String,
    #[serde(default)]
    k_of_n: Vec<KOfN>,
    #[serde(default)]
    termination: Vec<TerminationDoc>,
    #[serde(default)]
    pairwise_priorities: Vec<(String, String)>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbeDoc {
    probe_id: String,
    agent_id: String,
    principal: String,
    turn: u64,
    kind: String,
    #[serde(default)]
    queries: Vec<QueryDoc>,
    brief: BriefDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    branch: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    op: Option<BranchOpKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    table: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rows: Option<Vec<Row>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delete: Option<Vec<Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scope: Option<Vec<LocateScope>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    top_k: Option<usize>,
}

/// Parse and fully validate one probe document.
pub fn parse_probe(wire: &[u8]) -> Result<Probe, ProtocolError> {
    let text = std::str::from_utf8(wire).map_err(|e| ProtocolError::Malformed(format!("not UTF-8: {e}")))?;
    let doc: ProbeDoc = serde_json::from_str(text.trim()).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    from_doc(doc)
}

fn from_doc(doc: ProbeDoc) -> Result<Probe, ProtocolError> {
    let kind = ProbeKind::parse(&doc.kind).ok_or_else(|| ProtocolError::UnknownKind(doc.kind.clone()))?;
    let phase = Phase::parse(&doc.brief.phase).ok_or_else(|| ProtocolError::UnknownPhase(doc.brief.phase.clone()))?;

    let mut qids = HashSet::new();
    let mut queries = Vec::with_capacity(doc.queries.len());
    for q in doc.queries {
        if !qids.insert(q.qid.clone()) {
            return Err(ProtocolError::DuplicateQid(q.qid));
        }
        let accuracy = q.accuracy.as_ref().map(Accuracy::from_json).transpose()?;
        queries.push(ProbeQuery { qid: q.qid, sql: q.sql, accuracy, priority: q.priority });
    }
    let known = |qid: &str| -> Result<(), ProtocolError> {
        if qids.contains(qid) {
            Ok(())
        } else {
            Err(ProtocolError::DanglingQid(qid.to_string()))
        }
    };

    for g in &doc.brief.k_of_n {
        for q in &g.qids {
            known(q)?;
        }
        let distinct: BTreeSet<&String> = g.qids.iter().collect();
        if distinct.len() != g.qids.len() {
            return Err(ProtocolError::InvalidKOfN("group lists a qid twice".into()));
        }
        if g.k < 1 || g.k > g.qids.len() {
            return Err(ProtocolError::InvalidKOfN(format!("k={} with {} qids", g.k, g.qids.len())));
        }
    }
    let mut termination = Vec::new();
    for t in doc.brief.termination {
        known(&t.qid)?;
        let criterion = t.criterion.parse::<TerminationCriterion>()?;
        termination.push(Termination { qid: t.qid, criterion });
    }
    for (a, b) in &doc.brief.pairwise_priorities {
        known(a)?;
        known(b)?;
    }

    let has_branch_ext = doc.op.is_some()
        || doc.target.is_some()
        || doc.table.is_some()
        || doc.rows.is_some()
        || doc.delete.is_some();
    let has_locate_ext = doc.scope.is_some() || doc.top_k.is_some();
    match kind {
        ProbeKind::Locate => {
            if !queries.is_empty() {
                return Err(ProtocolError::InvalidLocate("locate probes carry no queries".into()));
            }
            if doc.brief.goal.trim().is_empty() {
                return Err(ProtocolError::InvalidLocate("locate probes need a phrase in brief.goal".into()));
            }
            if doc.top_k == Some(0) {
                return Err(ProtocolError::InvalidLocate("top_k must be at least 1".into()));
            }
            if has_branch_ext {
                return Err(ProtocolError::Malformed("branch_op keys on a locate probe".into()));
            }
        }
        ProbeKind::BranchOp => {
            if !queries.is_empty() {
                return Err(ProtocolError::InvalidBranchOp("branch_op probes carry no queries".into()));
            }
            if has_locate_ext {
                return Err(ProtocolError::Malformed("locate keys on a branch_op probe".into()));
            }
        }
        ProbeKind::SqlBatch => {
            if has_branch_ext || has_locate_ext {
                return Err(ProtocolError::Malformed("extension keys on a sql_batch probe".into()));
            }
        }
    }

    let probe = Probe {
        probe_id: doc.probe_id,
        agent_id: doc.agent_id,
        principal: doc.principal,
        turn: doc.turn,
        kind,
        queries,
        brief: Brief {
            phase,
            goal: doc.brief.goal,
            k_of_n: doc.brief.k_of_n,
            termination,
            pairwise_priorities: doc.brief.pairwise_priorities,
        },
        branch: doc.branch,
        op: doc.op,
        target: doc.target,
        table: doc.table,
        rows: doc.rows,
        delete: doc.delete,
        scope: doc.scope,
        top_k: doc.top_k,
    };
    if kind == ProbeKind::BranchOp {
        probe.branch_op()?;
    }
    Ok(probe)
}

// ---------------------------------------------------------------------------
// Termination criteria

#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    RowCount,
    Min(String),
    Max(String),
    Mean(String),
    Stddev(String),
    JaccardTo(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparator {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl Comparator {
    fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Eq => "=",
        }
    }

    fn holds(self, o: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            Comparator::Lt => o == Less,
            Comparator::Le => o != Greater,
            Comparator::Gt => o == Greater,
            Comparator::Ge => o != Less,
            Comparator::Eq => o == Equal,
        }
    }
}

/// `metric comparator literal`, e.g. `stddev(amount) < 2.5`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminationCriterion {
    pub metric: Metric,
    pub comparator: Comparator,
    pub literal: Value,
}

impl fmt::Display for TerminationCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.metric {
            Metric::RowCount => f.write_str("rowcount")?,
            Metric::Min(c) => write!(f, "min({c})")?,
            Metric::Max(c) => write!(f, "max({c})")?,
            Metric::Mean(c) => write!(f, "mean({c})")?,
            Metric::Stddev(c) => write!(f, "stddev({c})")?,
            Metric::JaccardTo(k) => write!(f, "jaccard_to({k})")?,
        }
        write!(f, " {} {}", self.comparator.symbol(), self.literal.to_sql_literal())
    }
}

impl std::str::FromStr for TerminationCriterion {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, ProtocolError> {
        let bad = |m: String| ProtocolError::BadCriterion(format!("{m} in {s:?}"));
        let s = s.trim();
        let name_end = s.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(s.len());
        let name = &s[..name_end];
        let mut rest = s[name_end..].trim_start();
        let arg = if let Some(r) = rest.strip_prefix('(') {
            let close = r.find(')').ok_or_else(|| bad("missing ')'".into()))?;
            let a = r[..close].trim();
            if a.is_empty() || !a.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '-') {
                return Err(bad(format!("bad argument {a:?}")));
            }
            rest = r[close + 1..].trim_start();
            Some(a.to_string())
        } else {
            None
        };
        let metric = match (name, arg) {
            ("rowcount", None) => Metric::RowCount,
            ("min", Some(a)) => Metric::Min(a),
            ("max", Some(a)) => Metric::Max(a),
            ("mean", Some(a)) => Metric::Mean(a),
            ("stddev", Some(a)) => Metric::Stddev(a),
            ("jaccard_to", Some(a)) => Metric::JaccardTo(a),
            (n, _) => return Err(bad(format!("unknown metric {n:?}"))),
        };
        let (comparator, lit) = [("<=", Comparator::Le), (">=", Comparator::Ge), ("<", Comparator::Lt), (">", Comparator::Gt), ("=", Comparator::Eq)]
            .into_iter()
            .find_map(|(sym, c)| rest.strip_prefix(sym).map(|r| (c, r.trim())))
            .ok_or_else(|| bad("missing comparator".into()))?;
        let literal = parse_literal(lit).ok_or_else(|| bad(format!("bad literal {lit:?}")))?;
        if !matches!(metric, Metric::Min(_) | Metric::Max(_)) && literal.as_f64().is_none() {
            return Err(bad("metric needs a numeric literal".into()));
        }
        Ok(TerminationCriterion { metric, comparator, literal })
    }
}

fn parse_literal(s: &str) -> Option<Value> {
    if let Some(inner) = s.strip_prefix('\'').and_then(|r| r.strip_suffix('\'')) {
        if inner.replace("''", "").contains('\'') {
            return None;
        }
        return Some(Value::Text(inner.replace("''", "'")));
    }
    if s.is_empty() || !s.chars().all(|c| c.is_ascii_digit() || matches!(c, '-' | '+' | '.' | 'e' | 'E')) {
        return None;
    }
    if let Ok(i) = s.parse::<i64>() {
        return Some(Value::Int(i));
    }
    s.parse::<f64>().ok().filter(|f| f.is_finite()).map(Value::Float)
}

/// Stored answer rows of a memory fact, for `jaccard_to`.
pub trait FactLookup {
    fn fact_rows(&self, fact_key: &str) -> Option<Vec<Row>>;
}

/// No memory available: every fact is missing.
impl FactLookup for () {
    fn fact_rows(&self, _: &str) -> Option<Vec<Row>> {
        None
    }
}

/// Pure evaluation of a criterion on a partial result.
///
/// Returns [`Error::InsufficientRows`] when the metric is not yet defined
/// (no values, or fewer than two for `stddev`); callers treat that as "not yet".
pub fn evaluate_termination(c: &TerminationCriterion, partial: &PartialResult, facts: &dyn FactLookup) -> Result<bool> {
    let column = |name: &str| -> Result<usize> {
        partial.column_index(name).ok_or_else(|| Error::UnknownColumn(name.to_string()))
    };
    let numeric = |x: f64| -> Result<bool> {
        let lit = c.literal.as_f64().ok_or_else(|| Error::Type("numeric metric against non-numeric literal".into()))?;
        Ok(x.partial_cmp(&lit).is_some_and(|o| c.comparator.holds(o)))
    };
    match &c.metric {
        Metric::RowCount => numeric(partial.rows.len() as f64),
        Metric::Min(col) | Metric::Max(col) => {
            let i = column(col)?;
            let vals = partial.rows.iter().map(|r| &r[i]).filter(|v| !v.is_null());
            let want_min = matches!(c.metric, Metric::Min(_));
            let best = vals.reduce(|a, b| if (b.total_cmp(a).is_lt()) == want_min { b } else { a });
            let best = best.ok_or_else(|| Error::InsufficientRows(format!("no values in {col}")))?;
            Ok(best.sql_cmp(&c.literal)?.is_some_and(|o| c.comparator.holds(o)))
        }
        Metric::Mean(col) | Metric::Stddev(col) => {
            let i = column(col)?;
            if !partial.columns[i].ty.is_numeric() {
                return Err(Error::Type(format!("{col} is not numeric")));
            }
            let m = &partial.moments[i];
            if matches!(c.metric, Metric::Mean(_)) {
                if m.count == 0 {
                    return Err(Error::InsufficientRows(format!("no values in {col}")));
                }
                numeric(m.mean)
            } else {
                let sd = m.stddev().ok_or_else(|| Error::InsufficientRows(format!("stddev({col}) needs two values")))?;
                numeric(sd)
            }
        }
        Metric::JaccardTo(key) => {
            let stored = facts.fact_rows(key).ok_or_else(|| Error::UnknownFact(key.clone()))?;
            let a: HashSet<&Row> = partial.rows.iter().collect();
            let b: HashSet<&Row> = stored.iter().collect();
            let j = if a.is_empty() && b.is_empty() { 1.0 } else { crate::similarity::jaccard(&a, &b) };
            numeric(j)
        }
    }
}

// ---------------------------------------------------------------------------
// Responses

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Result,
    Estimate,
    Pruned,
    Deferred,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryOutcome {
    pub qid: String,
    pub status: OutcomeStatus,
    /// Optimizer action that produced this outcome.
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ResultSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<Estimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fact_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminated_early: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl QueryOutcome {
    pub fn rows(&self) -> Option<&[Row]> {
        self.result
            .as_ref()
            .map(|r| r.rows.as_slice())
            .or_else(|| self.estimate.as_ref().map(|e| e.result.rows.as_slice()))
    }

    pub fn result_set(&self) -> Option<&ResultSet> {
        self.result.as_ref().or_else(|| self.estimate.as_ref().map(|e| &e.result))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseStats {
    pub executed_operator_count: u64,
    pub cache_hit_operator_count: u64,
    pub total_operator_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchOpResult {
    pub op: BranchOpKind,
    pub branch: BranchId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge: Option<MergeReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeResponse {
    pub probe_id: String,
    pub branch: BranchId,
    pub outcomes: Vec<QueryOutcome>,
    pub feedback: Vec<Feedback>,
    pub stats: ResponseStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locate: Option<Vec<LocateMatch>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_op: Option<BranchOpResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl ProbeResponse {
    pub fn error(probe_id: impl Into<String>, branch: BranchId, err: &Error) -> Self {
        ProbeResponse {
            probe_id: probe_id.into(),
            branch,
            outcomes: Vec::new(),
            feedback: Vec::new(),
            stats: ResponseStats::default(),
            locate: None,
            branch_op: None,
            error: Some(ErrorBody { code: err.code().to_string(), message: err.to_string() }),
        }
    }

    pub fn outcome(&self, qid: &str) -> Option<&QueryOutcome> {
        self.outcomes.iter().find(|o| o.qid == qid)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("responses always serialize")
    }
}
