//! The probe-serving kernel: plans, optimizes and executes probes against a
//! [`Database`], keeps agent histories, memory and materialized views, runs
//! feedback rules and writes traces.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use rayon::prelude::*;

use crate::approx::execute_incremental;
use crate::branch::{BranchId, WriteOp};
use crate::classify::{classify_query, TaskManifest};
use crate::config::{Config, EngineConfig, Features};
use crate::db::{Database, Snapshot};
use crate::error::{Error, Result};
use crate::exec::{ColumnMeta, Executor, MaterializedViews, ResultSet, Sampling, SharedResults};
use crate::feedback::{CacheNoticePayload, Feedback, FeedbackContext, FeedbackEngine, ProbeSummary, QueryContext};
use crate::memory::{FactKind, MemoryFact, MemoryQuery, MemoryStore, ScopeRef};
use crate::optimizer::{
    optimize_batch, Action, AgentHistory, BatchInput, MaterializationAdvisor, OptimizerConfig, QueryDecision, SeenPlan,
};
use crate::planner::{enumerate_subplans, estimate_cost, fingerprint, locate, plan_sql, subplan_records, LogicalPlan};
use crate::protocol::{
    parse_probe, BranchOp, BranchOpResult, OutcomeStatus, Probe, ProbeKind, ProbeResponse, ProtocolError, QueryOutcome,
    ResponseStats,
};
use crate::similarity::TrigramScorer;
use crate::trace::{TraceQuery, TraceRecord, TraceWriter};

/// Probe summaries kept per agent for the batching rule.
const SUMMARY_WINDOW: usize = 16;
/// Smallest sub-plan the materialization advisor tracks.
const ADVISOR_MIN_SIZE: usize = 2;

#[derive(Default)]
struct AgentState {
    probe_ids: HashSet<String>,
    summaries: Vec<ProbeSummary>,
    seen: AgentHistory,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

pub struct Kernel {
    db: Arc<Database>,
    memory: MemoryStore,
    features: Features,
    engine: EngineConfig,
    optimizer: OptimizerConfig,
    feedback: FeedbackEngine,
    views: MaterializedViews,
    advisor: Mutex<MaterializationAdvisor>,
    agents: Mutex<HashMap<String, AgentState>>,
    inflight_exact: Mutex<f64>,
    seq: AtomicU64,
    batch: AtomicU64,
    turn: AtomicU64,
    trace: Option<Mutex<TraceWriter>>,
    tasks: HashMap<String, TaskManifest>,
}

impl std::fmt::Debug for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Kernel").field("features", &self.features).field("memory", &self.memory).finish_non_exhaustive()
    }
}

/// Subtracts a batch's exact cost from the in-flight total when dropped.
struct Inflight<'a> {
    total: &'a Mutex<f64>,
    cost: f64,
}

impl Drop for Inflight<'_> {
    fn drop(&mut self) {
        *lock(self.total) -= self.cost;
    }
}

/// (executed, cache-hit) operator counts for one query.
type OpCounts = (u64, u64);
type Planned = (Vec<LogicalPlan>, Vec<OpCounts>);

struct Executed {
    outcome: QueryOutcome,
    executed: u64,
    hits: u64,
}

impl Kernel {
    /// A kernel with default configuration over `db`.
    pub fn new(db: Arc<Database>) -> Self {
        Self::with_parts(db, &Config::default(), MemoryStore::new())
    }

    /// Build from configuration, opening the memory log and trace file
    /// when they are configured.
    pub fn from_config(db: Arc<Database>, config: &Config) -> Result<Self> {
        let memory = match &config.engine.memory_log {
            Some(p) => MemoryStore::open(p)?,
            None => MemoryStore::new(),
        };
        let mut k = Self::with_parts(db, config, memory);
        if let Some(p) = &config.engine.trace {
            k.trace = Some(Mutex::new(TraceWriter::create(p)?));
        }
        Ok(k)
    }

    pub fn with_parts(db: Arc<Database>, config: &Config, memory: MemoryStore) -> Self {
        let mut feedback = FeedbackEngine::default();
        feedback.budget = Duration::from_millis(config.engine.feedback_budget_ms);
        Kernel {
            db,
            memory,
            features: config.features,
            engine: config.engine.clone(),
            optimizer: config.optimizer.clone(),
            feedback,
            views: MaterializedViews::new(),
            advisor: Mutex::new(MaterializationAdvisor::new(config.advisor)),
            agents: Mutex::new(HashMap::new()),
            inflight_exact: Mutex::new(0.0),
            seq: AtomicU64::new(0),
            batch: AtomicU64::new(0),
            turn: AtomicU64::new(0),
            trace: None,
            tasks: HashMap::new(),
        }
    }

    pub fn with_features(mut self, features: Features) -> Self {
        self.features = features;
        self
    }

    pub fn with_feedback(mut self, feedback: FeedbackEngine) -> Self {
        self.feedback = feedback;
        self
    }

    pub fn with_trace(mut self, writer: TraceWriter) -> Self {
        self.trace = Some(Mutex::new(writer));
        self
    }

    /// Task manifests let traces carry a task id and the classifier
    /// recognize full solutions. Agent ids of the form `<task_id>/...`
    /// are attributed to the task.
    pub fn with_tasks(mut self, tasks: impl IntoIterator<Item = TaskManifest>) -> Self {
        self.tasks = tasks.into_iter().map(|t| (t.task_id.clone(), t)).collect();
        self
    }

    pub fn database(&self) -> &Arc<Database> {
        &self.db
    }

    pub fn memory(&self) -> &MemoryStore {
        &self.memory
    }

    pub fn features(&self) -> Features {
        self.features
    }

    pub fn views(&self) -> &MaterializedViews {
        &self.views
    }

    /// Canonical texts the advisor currently wants materialized.
    pub fn advised_views(&self) -> Vec<String> {
        lock(&self.advisor).materialized()
    }

    fn task_of(&self, agent_id: &str) -> Option<&TaskManifest> {
        let id = agent_id.split('/').next()?;
        self.tasks.get(id)
    }

    /// Parse and serve one wire document. Malformed documents produce an
    /// error response; this never panics on input.
    pub fn handle_wire(&self, wire: &[u8]) -> ProbeResponse {
        match parse_probe(wire) {
            Ok(p) => self.handle(&p),
            Err(e) => {
                let id = serde_json::from_slice::<serde_json::Value>(wire)
                    .ok()
                    .and_then(|v| v.get("probe_id").and_then(|x| x.as_str()).map(str::to_string))
                    .unwrap_or_default();
                ProbeResponse::error(id, BranchId::MAINLINE, &Error::Protocol(e))
            }
        }
    }

    pub fn handle(&self, probe: &Probe) -> ProbeResponse {
        self.handle_batch(std::slice::from_ref(probe)).pop().expect("one response per probe")
    }

    /// Serve several probes. SQL probes reading the same branch are
    /// optimized together, so sharing and dedup reach across them.
    /// Responses come back in input order.
    pub fn handle_batch(&self, probes: &[Probe]) -> Vec<ProbeResponse> {
        let mut out: Vec<Option<ProbeResponse>> = vec![None; probes.len()];
        let mut groups: BTreeMap<BranchId, Vec<usize>> = BTreeMap::new();
        for (i, p) in probes.iter().enumerate() {
            let branch = BranchId(p.branch.unwrap_or(0));
            if let Err(e) = self.register_probe_id(p) {
                out[i] = Some(ProbeResponse::error(&p.probe_id, branch, &e));
                continue;
            }
            match p.kind {
                ProbeKind::SqlBatch => groups.entry(branch).or_default().push(i),
                ProbeKind::Locate => out[i] = Some(self.run_locate(p, branch)),
                ProbeKind::BranchOp => out[i] = Some(self.run_branch_op(p)),
            }
        }
        let mut labelled: HashMap<usize, (Vec<LogicalPlan>, Vec<OpCounts>)> = HashMap::new();
        for (branch, idx) in groups {
            let group: Vec<&Probe> = idx.iter().map(|&i| &probes[i]).collect();
            for (i, (resp, planned)) in idx.iter().zip(self.run_sql(&group, branch)) {
                out[*i] = Some(resp);
                if let Some(p) = planned {
                    labelled.insert(*i, p);
                }
            }
        }
        let responses: Vec<ProbeResponse> = out.into_iter().map(|r| r.expect("every probe answered")).collect();
        if self.trace.is_some() {
            let batch = self.batch.fetch_add(1, Ordering::Relaxed);
            for (i, (p, r)) in probes.iter().zip(&responses).enumerate() {
                let (plans, counts) = match labelled.get(&i) {
                    Some((p, c)) => (Some(p.as_slice()), c.as_slice()),
                    None => (None, &[][..]),
                };
                self.write_trace(batch, p, r, plans, counts);
            }
        }
        responses
    }

    fn register_probe_id(&self, p: &Probe) -> Result<()> {
        let mut agents = lock(&self.agents);
        let st = agents.entry(p.agent_id.clone()).or_default();
        if !st.probe_ids.insert(p.probe_id.clone()) {
            return Err(ProtocolError::DuplicateProbeId(p.probe_id.clone()).into());
        }
        Ok(())
    }

    fn empty_response(probe_id: &str, branch: BranchId) -> ProbeResponse {
        ProbeResponse {
            probe_id: probe_id.to_string(),
            branch,
            outcomes: Vec::new(),
            feedback: Vec::new(),
            stats: ResponseStats::default(),
            locate: None,
            branch_op: None,
            error: None,
        }
    }

    fn run_locate(&self, p: &Probe, branch: BranchId) -> ProbeResponse {
        let res = self
            .db
            .snapshot(branch)
            .and_then(|snap| locate(p.phrase(), &snap, &p.locate_scope(), p.top_k, &TrigramScorer));
        match res {
            Ok(matches) => {
                let mut r = Self::empty_response(&p.probe_id, branch);
                r.locate = Some(matches);
                r
            }
            Err(e) => ProbeResponse::error(&p.probe_id, branch, &e),
        }
    }

    fn run_branch_op(&self, p: &Probe) -> ProbeResponse {
        let branch = BranchId(p.branch.unwrap_or(0));
        let res = (|| -> Result<BranchOpResult> {
            let op = p.op.ok_or_else(|| ProtocolError::InvalidBranchOp("branch_op requires op".into()))?;
            Ok(match p.branch_op()? {
                BranchOp::Fork { parent } => {
                    BranchOpResult { op, branch: self.db.fork(parent)?, version: None, merge: None }
                }
                BranchOp::Rollback { branch } => {
                    self.db.rollback(branch)?;
                    BranchOpResult { op, branch, version: None, merge: None }
                }
                BranchOp::Merge { source, target } => {
                    let m = self.db.merge(source, target)?;
                    BranchOpResult { op, branch: target, version: None, merge: Some(m) }
                }
                BranchOp::Write { branch, table, rows, delete } => {
                    let ops = rows.into_iter().map(WriteOp::Upsert).chain(delete.into_iter().map(WriteOp::Delete)).collect();
                    let w = self.db.branch_write(branch, &table, ops)?;
                    BranchOpResult { op, branch, version: Some(w.version), merge: None }
                }
            })
        })();
        match res {
            Ok(b) => {
                let mut r = Self::empty_response(&p.probe_id, b.branch);
                r.branch_op = Some(b);
                r
            }
            Err(e) => ProbeResponse::error(&p.probe_id, branch, &e),
        }
    }

    /// Returns each probe's response and, when it planned, its plans and
    /// per-query operator counts.
    fn run_sql(&self, probes: &[&Probe], branch: BranchId) -> Vec<(ProbeResponse, Option<Planned>)> {
        let snap = match self.db.snapshot(branch) {
            Ok(s) => s,
            Err(e) => return probes.iter().map(|p| (ProbeResponse::error(&p.probe_id, branch, &e), None)).collect(),
        };
        let mut results: Vec<Option<(ProbeResponse, Option<Planned>)>> = vec![None; probes.len()];
        let mut live: Vec<usize> = Vec::new();
        let mut plans: Vec<Vec<LogicalPlan>> = Vec::new();
        for (i, p) in probes.iter().enumerate() {
            match p.queries.iter().map(|q| plan_sql(&q.sql, &snap)).collect::<Result<Vec<_>>>() {
                Ok(ps) => {
                    live.push(i);
                    plans.push(ps);
                }
                Err(e) => results[i] = Some((ProbeResponse::error(&p.probe_id, branch, &e), None)),
            }
        }
        if !live.is_empty() {
            let live_probes: Vec<Probe> = live.iter().map(|&i| probes[i].clone()).collect();
            let responses = self.run_planned(&live_probes, &plans, &snap);
            for ((i, (r, counts)), ps) in live.into_iter().zip(responses).zip(plans) {
                results[i] = Some((r, Some((ps, counts))));
            }
        }
        results.into_iter().map(|r| r.expect("every probe answered")).collect()
    }

    fn run_planned(
        &self,
        probes: &[Probe],
        plans: &[Vec<LogicalPlan>],
        snap: &Snapshot,
    ) -> Vec<(ProbeResponse, Vec<OpCounts>)> {
        let branch = snap.branch;
        let histories: HashMap<String, AgentHistory> = {
            let agents = lock(&self.agents);
            probes
                .iter()
                .filter_map(|p| agents.get(&p.agent_id).map(|s| (p.agent_id.clone(), s.seen.clone())))
                .collect()
        };
        let inflight_now = *lock(&self.inflight_exact);
        let decision = {
            let advisor = lock(&self.advisor);
            let input = BatchInput {
                probes,
                plans,
                snap,
                memory: self.features.memory.then_some(&self.memory),
                histories: &histories,
                sharing: self.features.sharing,
                inflight_exact_cost: inflight_now,
                advisor: &advisor,
            };
            optimize_batch(&input, &self.optimizer)
        };
        if self.features.sharing {
            for text in &decision.materialization_orders {
                self.views.request(branch, text);
            }
        }
        let exact_cost: f64 =
            decision.queries.iter().filter(|d| matches!(d.action, Action::ExecuteExact)).map(|d| d.cost).sum();
        *lock(&self.inflight_exact) += exact_cost;
        let _inflight = Inflight { total: &self.inflight_exact, cost: exact_cost };

        // Decision index -> (probe, query) position; decisions follow query order.
        let positions: Vec<(usize, usize)> =
            probes.iter().enumerate().flat_map(|(pi, p)| (0..p.queries.len()).map(move |qi| (pi, qi))).collect();

        let shared = SharedResults::new();
        let executed: Vec<(usize, Result<Executed>)> = decision
            .order
            .par_iter()
            .map(|&i| {
                let (pi, qi) = positions[i];
                (i, self.execute_one(snap, &probes[pi], qi, &plans[pi][qi], &decision.queries[i], &shared))
            })
            .collect();
        let mut done: HashMap<usize, Executed> = HashMap::new();
        let mut failed: HashMap<usize, Error> = HashMap::new();
        for (i, r) in executed {
            match r {
                Ok(e) => {
                    done.insert(i, e);
                }
                Err(e) => {
                    failed.entry(positions[i].0).or_insert(e);
                }
            }
        }

        let mut responses = Vec::with_capacity(probes.len());
        let mut cache_notices: Vec<Vec<Feedback>> = vec![Vec::new(); probes.len()];
        let mut outcomes: Vec<Vec<Option<Executed>>> = probes.iter().map(|p| p.queries.iter().map(|_| None).collect()).collect();
        for (i, d) in decision.queries.iter().enumerate() {
            let (pi, qi) = positions[i];
            if failed.contains_key(&pi) {
                continue;
            }
            let plan = &plans[pi][qi];
            let nodes = plan.node_count() as u64;
            let e = match &d.action {
                Action::ExecuteExact | Action::ExecuteSampled { .. } => {
                    let e = done.get(&i).expect("executed");
                    Executed { outcome: e.outcome.clone(), executed: e.executed, hits: e.hits }
                }
                Action::AnswerFromCache { fact_key, from_qid: Some(src) } => {
                    // The source may itself have been pruned or deferred later on.
                    let src_outcome = resolve_source(&decision.queries, probes, pi, src)
                        .and_then(|j| done.get(&j))
                        .map(|e| e.outcome.clone());
                    match src_outcome {
                        Some(o) => Executed {
                            outcome: QueryOutcome {
                                qid: d.qid.clone(),
                                action: d.action.name().to_string(),
                                fact_key: Some(fact_key.clone()),
                                ..o
                            },
                            executed: 0,
                            hits: nodes,
                        },
                        None => match self.execute_exact_fallback(snap, d, plan) {
                            Ok(e) => e,
                            Err(err) => {
                                failed.entry(pi).or_insert(err);
                                continue;
                            }
                        },
                    }
                }
                Action::AnswerFromCache { fact_key, from_qid: None } => {
                    match self.answer_from_memory(&probes[pi], d, plan, fact_key, snap) {
                        Some((e, notice)) => {
                            cache_notices[pi].push(notice);
                            e
                        }
                        None => match self.execute_exact_fallback(snap, d, plan) {
                            Ok(e) => e,
                            Err(err) => {
                                failed.entry(pi).or_insert(err);
                                continue;
                            }
                        },
                    }
                }
                Action::Pruned { reason, fact_key } => Executed {
                    outcome: bare_outcome(&d.qid, OutcomeStatus::Pruned, &d.action, Some(reason.clone()), fact_key.clone()),
                    executed: 0,
                    hits: 0,
                },
                Action::Deferred { reason } => Executed {
                    outcome: bare_outcome(&d.qid, OutcomeStatus::Deferred, &d.action, Some(reason.clone()), None),
                    executed: 0,
                    hits: 0,
                },
            };
            outcomes[pi][qi] = Some(e);
        }

        let turn = self.turn.fetch_add(1, Ordering::Relaxed);
        for (pi, probe) in probes.iter().enumerate() {
            if let Some(err) = failed.remove(&pi) {
                responses.push((ProbeResponse::error(&probe.probe_id, branch, &err), Vec::new()));
                continue;
            }
            let outs: Vec<Executed> = outcomes[pi].iter_mut().map(|o| o.take().expect("filled")).collect();
            let mut stats = ResponseStats::default();
            for (e, plan) in outs.iter().zip(&plans[pi]) {
                stats.executed_operator_count += e.executed;
                stats.cache_hit_operator_count += e.hits;
                stats.total_operator_count += plan.node_count() as u64;
            }
            let counts: Vec<OpCounts> = outs.iter().map(|e| (e.executed, e.hits)).collect();
            let outcomes: Vec<QueryOutcome> = outs.into_iter().map(|e| e.outcome).collect();

            if self.features.memory {
                self.remember(probe, &plans[pi], &outcomes, snap);
            }
            self.observe_for_advisor(probe, &plans[pi], &outcomes, snap, turn);

            let summary_refs: Vec<&LogicalPlan> = plans[pi].iter().collect();
            let summary = ProbeSummary::new(&probe.probe_id, &summary_refs, probe.queries.len(), snap);
            let history = {
                let mut agents = lock(&self.agents);
                let st = agents.entry(probe.agent_id.clone()).or_default();
                st.summaries.push(summary);
                if st.summaries.len() > SUMMARY_WINDOW {
                    st.summaries.remove(0);
                }
                for (o, plan) in outcomes.iter().zip(&plans[pi]) {
                    if o.result_set().is_some() {
                        st.seen.push(SeenPlan { qid: o.qid.clone(), fingerprint: fingerprint(plan).hex(), plan: plan.clone() });
                    }
                }
                st.summaries.clone()
            };

            let mut feedback = std::mem::take(&mut cache_notices[pi]);
            if self.features.feedback {
                let ctx = FeedbackContext {
                    snap,
                    probe,
                    queries: outcomes
                        .iter()
                        .zip(&plans[pi])
                        .map(|(o, plan)| QueryContext { qid: &o.qid, plan, outcome: o })
                        .collect(),
                    history: &history,
                    cost_threshold: self.engine.cost_warning_threshold,
                    seed: self.engine.seed,
                };
                feedback.extend(self.feedback.run(&ctx));
            }
            responses.push((
                ProbeResponse {
                    probe_id: probe.probe_id.clone(),
                    branch,
                    outcomes,
                    feedback,
                    stats,
                    locate: None,
                    branch_op: None,
                    error: None,
                },
                counts,
            ));
        }
        responses
    }

    fn execute_one(
        &self,
        snap: &Snapshot,
        probe: &Probe,
        qi: usize,
        plan: &LogicalPlan,
        d: &QueryDecision,
        shared: &SharedResults,
    ) -> Result<Executed> {
        let q = &probe.queries[qi];
        if d.incremental {
            let view = self.memory.view(&probe.principal, snap);
            let crit = probe.brief.termination_for(&q.qid);
            let out = execute_incremental(snap, plan, crit, self.engine.checkpoint_rows, &view)?;
            let mut o = bare_outcome(&d.qid, OutcomeStatus::Result, &d.action, None, None);
            o.result = Some(out.result);
            o.terminated_early = Some(out.terminated_early);
            o.warnings = out.warnings;
            return Ok(Executed { outcome: o, executed: out.executed_operators, hits: 0 });
        }
        let mut ex = Executor::new(snap);
        if self.features.sharing {
            ex = ex.with_shared(shared).with_views(&self.views);
        }
        match &d.action {
            Action::ExecuteSampled { fraction, row_cap } => {
                let ex = ex.with_sampling(Sampling { fraction: *fraction, seed: self.engine.seed });
                let mut est = ex.estimate(plan)?;
                if let Some(cap) = row_cap {
                    if est.result.rows.len() > *cap {
                        est.result.rows.truncate(*cap);
                        est.warnings.push(format!("row cap of {cap} applied"));
                    }
                }
                let mut o = bare_outcome(&d.qid, OutcomeStatus::Estimate, &d.action, None, None);
                o.estimate = Some(est);
                Ok(Executed { outcome: o, executed: ex.executed_operators(), hits: ex.cache_hit_operators() })
            }
            _ => {
                let rs = ex.execute(plan)?;
                let mut o = bare_outcome(&d.qid, OutcomeStatus::Result, &d.action, None, None);
                o.result = Some(rs);
                Ok(Executed { outcome: o, executed: ex.executed_operators(), hits: ex.cache_hit_operators() })
            }
        }
    }

    fn execute_exact_fallback(&self, snap: &Snapshot, d: &QueryDecision, plan: &LogicalPlan) -> Result<Executed> {
        let ex = Executor::new(snap);
        let rs = ex.execute(plan)?;
        let mut o = bare_outcome(&d.qid, OutcomeStatus::Result, &Action::ExecuteExact, None, None);
        o.result = Some(rs);
        Ok(Executed { outcome: o, executed: ex.executed_operators(), hits: 0 })
    }

    fn answer_from_memory(
        &self,
        probe: &Probe,
        d: &QueryDecision,
        plan: &LogicalPlan,
        key: &str,
        snap: &Snapshot,
    ) -> Option<(Executed, Feedback)> {
        let fact = self.memory.lookup(&MemoryQuery::by_key(key, &probe.principal), snap).into_iter().next()?;
        if fact.stale {
            return None;
        }
        let rows = fact.rows()?;
        let columns: Vec<ColumnMeta> =
            plan.fields().ok()?.into_iter().map(|f| ColumnMeta { name: f.label, ty: f.ty }).collect();
        let rs = ResultSet { columns, rows, exact: true, source_version: fact.data_versions.clone() };
        let mut o = bare_outcome(&d.qid, OutcomeStatus::Result, &d.action, None, Some(key.to_string()));
        o.result = Some(rs);
        let notice = Feedback::cache_notice(
            Some(&d.qid),
            &CacheNoticePayload { fact_key: key.to_string(), data_versions: fact.data_versions },
        );
        Some((Executed { outcome: o, executed: 0, hits: plan.node_count() as u64 }, notice))
    }

    /// Store exact, freshly executed results as probe-result facts.
    fn remember(&self, probe: &Probe, plans: &[LogicalPlan], outcomes: &[QueryOutcome], snap: &Snapshot) {
        for ((o, plan), q) in outcomes.iter().zip(plans).zip(&probe.queries) {
            if o.action != "execute_exact" || o.terminated_early == Some(true) {
                continue;
            }
            let Some(rs) = &o.result else { continue };
            if !rs.exact || rs.rows.len() > self.engine.memory_max_rows {
                continue;
            }
            let mut tables: Vec<&str> = plan.tables();
            tables.sort_unstable();
            tables.dedup();
            let scope = tables.into_iter().map(ScopeRef::table).collect();
            let content = serde_json::json!({ "columns": rs.columns, "rows": rs.rows, "exact": true });
            let mut fact = MemoryFact::new(fingerprint(plan).hex(), FactKind::ProbeResult, scope, content, &probe.principal);
            fact.created_by = probe.agent_id.clone();
            fact.created_turn = probe.turn;
            fact.sql = Some(q.sql.clone());
            fact.data_versions = rs.source_version.clone();
            if let Err(e) = self.memory.put(fact, snap) {
                tracing::warn!(error = %e, probe = %probe.probe_id, "could not store probe result");
            }
        }
    }

    fn observe_for_advisor(
        &self,
        probe: &Probe,
        plans: &[LogicalPlan],
        outcomes: &[QueryOutcome],
        snap: &Snapshot,
        turn: u64,
    ) {
        let mut advisor = lock(&self.advisor);
        let mut fps = Vec::new();
        for (o, plan) in outcomes.iter().zip(plans) {
            fps.push(fingerprint(plan).hex());
            if o.action != "execute_exact" || o.terminated_early.is_some() {
                continue;
            }
            for s in enumerate_subplans(plan).into_iter().filter(|s| s.size >= ADVISOR_MIN_SIZE) {
                let versions: BTreeMap<String, u64> =
                    s.node.tables().into_iter().filter_map(|t| snap.version_of(t).map(|v| (t.to_string(), v))).collect();
                let cost = estimate_cost(s.node, snap).total_cost;
                advisor.advise_materialization(&fingerprint(s.node).hex(), &s.node.canonical_text(), cost, turn, &versions);
            }
        }
        advisor.record_probe(&probe.agent_id, fps);
    }

    fn write_trace(&self, batch: u64, probe: &Probe, resp: &ProbeResponse, plans: Option<&[LogicalPlan]>, counts: &[OpCounts]) {
        let Some(w) = &self.trace else { return };
        let manifest = self.task_of(&probe.agent_id);
        let queries: Vec<TraceQuery> = probe
            .queries
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let plan = plans.and_then(|p| p.get(i));
                let o = resp.outcome(&q.qid);
                TraceQuery {
                    qid: q.qid.clone(),
                    sql: q.sql.clone(),
                    fingerprint: plan.map(|p| fingerprint(p).hex()),
                    label: plan.map(|p| classify_query(p, manifest)),
                    action: o.map(|o| o.action.clone()),
                    status: o.map(|o| o.status),
                    rows: o.and_then(|o| o.rows()).map(<[_]>::len),
                    executed: counts.get(i).map_or(0, |c| c.0),
                    cache_hits: counts.get(i).map_or(0, |c| c.1),
                    subplans: plan.map(subplan_records).unwrap_or_default(),
                }
            })
            .collect();
        let label = match probe.kind {
            ProbeKind::SqlBatch => queries.iter().filter_map(|q| q.label).min(),
            ProbeKind::Locate => Some(crate::protocol::Phase::MetadataExploration),
            ProbeKind::BranchOp => None,
        };
        let rec = TraceRecord {
            seq: self.seq.fetch_add(1, Ordering::Relaxed),
            batch,
            probe_id: probe.probe_id.clone(),
            agent_id: probe.agent_id.clone(),
            principal: probe.principal.clone(),
            turn: probe.turn,
            task: manifest.map(|m| m.task_id.clone()),
            kind: probe.kind.name().to_string(),
            phase: probe.brief.phase,
            label,
            branch: resp.branch,
            queries,
            feedback: resp.feedback.iter().map(|f| f.kind).collect(),
            stats: resp.stats,
            error: resp.error.as_ref().map(|e| e.code.clone()),
            probe: probe.to_value(),
        };
        if let Err(e) = lock(w).write(&rec) {
            tracing::warn!(error = %e, "trace write failed");
        }
    }
}

fn bare_outcome(
    qid: &str,
    status: OutcomeStatus,
    action: &Action,
    reason: Option<String>,
    fact_key: Option<String>,
) -> QueryOutcome {
    QueryOutcome {
        qid: qid.to_string(),
        status,
        action: action.name().to_string(),
        reason,
        result: None,
        estimate: None,
        fact_key,
        terminated_early: None,
        warnings: Vec::new(),
    }
}

/// Decision index named by an in-batch dedup source: a bare qid within the
/// same probe, or `probe_id:qid` across probes.
fn resolve_source(decisions: &[QueryDecision], probes: &[Probe], pi: usize, src: &str) -> Option<usize> {
    if let Some(j) = decisions.iter().position(|d| d.probe == pi && d.qid == src) {
        return Some(j);
    }
    decisions.iter().position(|d| {
        let pid = &probes[d.probe].probe_id;
        d.probe != pi
            && src.len() > pid.len()
            && src.starts_with(pid.as_str())
            && src.as_bytes()[pid.len()] == b':'
            && src[pid.len() + 1..] == d.qid
    })
}
