//! Per-batch execution decisions: what runs, at which accuracy, what is
//! shared, answered from memory, pruned or deferred.
//!
//! Rules are applied in this order, first match wins for each query:
//!
//! 1. k-of-n selection: the k cheapest members of a group (ties by qid)
//!    execute, the rest are pruned with `k_of_n_unselected`. Selected
//!    members skip rules 2 to 6.
//! 2. `no_new_information`: the same agent already received this canonical
//!    plan and the memory fact for it is still current.
//! 3. Memory hit: a current, visible `probe_result` fact answers the query.
//! 4. In-batch dedup: a canonically equal query with the same accuracy is
//!    already scheduled; this one is answered from its result.
//! 5. `subsumed_by(qid)`: the query only adds projection columns irrelevant
//!    to the goal over a query scheduled or answered earlier.
//! 6. `deferred_admission`: metadata exploration while the in-flight exact
//!    workload exceeds the admission budget.
//! 7. Accuracy: explicit accuracy, else the phase policy; then pairwise
//!    priorities are enforced by raising fractions to a fixpoint.
//!
//! The degree of approximation of a query is its sampling fraction.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::catalog::is_catalog_table;
use crate::db::Snapshot;
use crate::memory::{FactKind, MemoryQuery, MemoryStore};
use crate::planner::{enumerate_subplans, estimate_cost, fingerprint, Expr, LogicalPlan, NodeKind};
use crate::protocol::{Phase, Probe};
use crate::similarity::tokens;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseAccuracy {
    /// Sampling fraction; 1.0 means exact.
    pub fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_cap: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasePolicy {
    pub metadata_exploration: PhaseAccuracy,
    pub column_statistics: PhaseAccuracy,
    pub partial_solution: PhaseAccuracy,
    pub full_solution: PhaseAccuracy,
}

impl Default for PhasePolicy {
    fn default() -> Self {
        PhasePolicy {
            metadata_exploration: PhaseAccuracy { fraction: 0.05, row_cap: Some(100) },
            column_statistics: PhaseAccuracy { fraction: 0.20, row_cap: None },
            partial_solution: PhaseAccuracy { fraction: 0.50, row_cap: None },
            full_solution: PhaseAccuracy { fraction: 1.0, row_cap: None },
        }
    }
}

impl PhasePolicy {
    pub fn for_phase(&self, phase: Phase) -> PhaseAccuracy {
        match phase {
            Phase::MetadataExploration => self.metadata_exploration,
            Phase::ColumnStatistics => self.column_statistics,
            Phase::PartialSolution => self.partial_solution,
            Phase::FullSolution => self.full_solution,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    ExecuteExact,
    ExecuteSampled {
        fraction: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        row_cap: Option<usize>,
    },
    AnswerFromCache {
        fact_key: String,
        /// Set when the answer is another query of the same batch.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from_qid: Option<String>,
    },
    Pruned {
        reason: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fact_key: Option<String>,
    },
    Deferred {
        reason: String,
    },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::ExecuteExact => "execute_exact",
            Action::ExecuteSampled { .. } => "execute_sampled",
            Action::AnswerFromCache { .. } => "answer_from_cache",
            Action::Pruned { .. } => "pruned",
            Action::Deferred { .. } => "deferred",
        }
    }

    pub fn reason(&self) -> Option<&str> {
        match self {
            Action::Pruned { reason, .. } | Action::Deferred { reason } => Some(reason),
            _ => None,
        }
    }

    pub fn is_execute(&self) -> bool {
        matches!(self, Action::ExecuteExact | Action::ExecuteSampled { .. })
    }

    /// Sampling fraction, exact counting as 1.
    pub fn fraction(&self) -> Option<f64> {
        match self {
            Action::ExecuteExact => Some(1.0),
            Action::ExecuteSampled { fraction, .. } => Some(*fraction),
            _ => None,
        }
    }
}

pub const K_OF_N_UNSELECTED: &str = "k_of_n_unselected";
pub const NO_NEW_INFORMATION: &str = "no_new_information";
pub const DEFERRED_ADMISSION: &str = "deferred_admission";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDecision {
    /// Index of the probe in the batch.
    pub probe: usize,
    pub qid: String,
    pub fingerprint: String,
    pub cost: f64,
    pub priority: i64,
    #[serde(flatten)]
    pub action: Action,
    /// Run through the incremental executor (the query has a termination criterion).
    pub incremental: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagNode {
    pub fingerprint: String,
    pub kind: NodeKind,
    pub size: usize,
    pub children: Vec<String>,
    /// Queries whose plan contains this node, as `probe:qid`.
    pub consumers: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionDecision {
    pub queries: Vec<QueryDecision>,
    /// Distinct operators of all executing queries, children before parents.
    pub shared_dag: Vec<DagNode>,
    /// Indices into `queries` of executing queries, by priority then qid.
    pub order: Vec<usize>,
    /// Sub-plan canonical texts the executor should persist.
    pub materialization_orders: Vec<String>,
}

impl ExecutionDecision {
    pub fn get(&self, probe: usize, qid: &str) -> Option<&QueryDecision> {
        self.queries.iter().find(|q| q.probe == probe && q.qid == qid)
    }
}

// ---------------------------------------------------------------------------
// Materialization advisor

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvisorConfig {
    pub min_hits: u64,
    pub window_turns: u64,
    pub min_cost: f64,
}

impl Default for AdvisorConfig {
    fn default() -> Self {
        AdvisorConfig { min_hits: 3, window_turns: 20, min_cost: 1000.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdvisorEntry {
    pub hit_count: u64,
    pub last_turn: u64,
    pub estimated_cost: f64,
    pub materialized: bool,
    pub data_versions: BTreeMap<String, u64>,
    /// Turns of recent observations, oldest first.
    pub turns: VecDeque<u64>,
    /// Canonical text, kept so the executor can be told what to persist.
    pub canonical_text: String,
}

#[derive(Debug, Clone, Default)]
pub struct MaterializationAdvisor {
    pub config: AdvisorConfig,
    entries: HashMap<String, AdvisorEntry>,
    recent: HashMap<String, VecDeque<String>>,
}

const RECENT_PROBES: usize = 16;

impl MaterializationAdvisor {
    pub fn new(config: AdvisorConfig) -> Self {
        MaterializationAdvisor { config, ..Default::default() }
    }

    pub fn entry(&self, fingerprint: &str) -> Option<&AdvisorEntry> {
        self.entries.get(fingerprint)
    }

    /// Record one observation and decide. Observations at different data
    /// versions restart the count.
    pub fn advise_materialization(
        &mut self,
        fingerprint: &str,
        canonical_text: &str,
        cost: f64,
        turn: u64,
        versions: &BTreeMap<String, u64>,
    ) -> bool {
        let cfg = self.config;
        let e = self.entries.entry(fingerprint.to_string()).or_default();
        if e.hit_count > 0 && &e.data_versions != versions {
            *e = AdvisorEntry::default();
        }
        e.canonical_text = canonical_text.to_string();
        e.data_versions = versions.clone();
        e.hit_count += 1;
        e.last_turn = turn;
        e.estimated_cost = cost;
        e.turns.push_back(turn);
        while e.turns.front().is_some_and(|t| t + cfg.window_turns <= turn) {
            e.turns.pop_front();
        }
        let yes = e.turns.len() as u64 >= cfg.min_hits && cost >= cfg.min_cost;
        e.materialized |= yes;
        yes
    }

    /// Note the fingerprints an agent just probed.
    pub fn record_probe(&mut self, agent: &str, fingerprints: impl IntoIterator<Item = String>) {
        let ring = self.recent.entry(agent.to_string()).or_default();
        for f in fingerprints {
            ring.push_back(f);
            if ring.len() > RECENT_PROBES {
                ring.pop_front();
            }
        }
    }

    pub fn recent(&self, agent: &str) -> Vec<String> {
        self.recent.get(agent).map(|r| r.iter().cloned().collect()).unwrap_or_default()
    }

    /// Canonical texts currently advised for materialization.
    pub fn materialized(&self) -> Vec<String> {
        let mut v: Vec<String> =
            self.entries.values().filter(|e| e.materialized).map(|e| e.canonical_text.clone()).collect();
        v.sort();
        v
    }
}

// ---------------------------------------------------------------------------
// Pruning rules

/// Extra projection columns of `p_prime` over `p` when both are projections
/// of the same input and `p`'s columns are a subset of `p_prime`'s.
fn extra_projection(p: &LogicalPlan, p_prime: &LogicalPlan) -> Option<Vec<Expr>> {
    let (LogicalPlan::Project { exprs: a, input: ia, .. }, LogicalPlan::Project { exprs: b, input: ib, .. }) = (p, p_prime)
    else {
        return None;
    };
    if ia.canonical_text() != ib.canonical_text() {
        return None;
    }
    let have: HashSet<String> = a.iter().map(Expr::canonical).collect();
    let want: HashSet<String> = b.iter().map(Expr::canonical).collect();
    if !have.is_subset(&want) || have.len() == want.len() {
        return None;
    }
    Some(b.iter().filter(|e| !have.contains(&e.canonical())).cloned().collect())
}

fn column_tokens(e: &Expr) -> HashSet<String> {
    match e {
        Expr::Column(c) => tokens(c.rsplit_once('.').map_or(c.as_str(), |(_, col)| col)).into_iter().collect(),
        other => tokens(&other.canonical()).into_iter().collect(),
    }
}

/// Relevance of a column to the goal: token Jaccard.
pub fn relevance(e: &Expr, goal_tokens: &[String]) -> f64 {
    let goal: HashSet<String> = goal_tokens.iter().cloned().collect();
    crate::similarity::jaccard(&column_tokens(e), &goal)
}

pub const RELEVANCE_THRESHOLD: f64 = 0.1;

/// `subsumed_by(qid)` when `p_prime` only adds projection columns whose
/// relevance to the goal is below the threshold. No goal, no pruning.
pub fn prune_subsumed(p_qid: &str, p: &LogicalPlan, p_prime: &LogicalPlan, goal_tokens: &[String]) -> Option<String> {
    if goal_tokens.is_empty() {
        return None;
    }
    let extra = extra_projection(p, p_prime)?;
    if extra.iter().all(|e| relevance(e, goal_tokens) < RELEVANCE_THRESHOLD) {
        Some(format!("subsumed_by({p_qid})"))
    } else {
        None
    }
}

/// A plan the agent already received.
#[derive(Debug, Clone, PartialEq)]
pub struct SeenPlan {
    pub qid: String,
    pub fingerprint: String,
    pub plan: LogicalPlan,
}

/// Per-agent memory of what it was answered.
#[derive(Debug, Clone, Default)]
pub struct AgentHistory {
    pub seen: VecDeque<SeenPlan>,
}

const SEEN_CAP: usize = 256;

impl AgentHistory {
    pub fn push(&mut self, s: SeenPlan) {
        self.seen.retain(|x| x.fingerprint != s.fingerprint);
        self.seen.push_back(s);
        if self.seen.len() > SEEN_CAP {
            self.seen.pop_front();
        }
    }

    pub fn contains(&self, fingerprint: &str) -> bool {
        self.seen.iter().any(|s| s.fingerprint == fingerprint)
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

/// `no_new_information` with the prior fact key when the agent already got
/// this canonical plan and the fact for it is current and visible.
pub fn drop_uninformative_followup(
    fingerprint: &str,
    principal: &str,
    history: &AgentHistory,
    memory: &MemoryStore,
    snap: &Snapshot,
) -> Option<String> {
    if history.is_empty() || !history.contains(fingerprint) {
        return None;
    }
    current_fact(fingerprint, principal, memory, snap)
}

/// Key of a current, visible, exact probe-result fact for the fingerprint.
fn current_fact(fingerprint: &str, principal: &str, memory: &MemoryStore, snap: &Snapshot) -> Option<String> {
    let facts = memory.lookup(&MemoryQuery::by_key(fingerprint, principal), snap);
    let f = facts.into_iter().next()?;
    let exact = f.content.get("exact").and_then(|v| v.as_bool()).unwrap_or(false);
    (f.kind == FactKind::ProbeResult && !f.stale && exact).then_some(f.fact_key)
}

// ---------------------------------------------------------------------------
// Batch optimization

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default)]
    pub phase_policy: PhasePolicy,
    /// Row-touch budget for in-flight exact work before metadata
    /// exploration is deferred.
    #[serde(default = "default_admission_budget")]
    pub admission_budget: f64,
}

fn default_admission_budget() -> f64 {
    5.0e7
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { phase_policy: PhasePolicy::default(), admission_budget: default_admission_budget() }
    }
}

pub struct BatchInput<'a> {
    pub probes: &'a [Probe],
    /// Canonical plans, per probe, in query order.
    pub plans: &'a [Vec<LogicalPlan>],
    pub snap: &'a Snapshot,
    /// `None` disables rules 2 and 3.
    pub memory: Option<&'a MemoryStore>,
    pub histories: &'a HashMap<String, AgentHistory>,
    /// Disables in-batch dedup when false.
    pub sharing: bool,
    /// Estimated row-touches of exact work already running elsewhere.
    pub inflight_exact_cost: f64,
    pub advisor: &'a MaterializationAdvisor,
}

fn only_catalog(plan: &LogicalPlan) -> bool {
    plan.tables().iter().all(|t| is_catalog_table(t))
}

pub fn optimize_batch(input: &BatchInput<'_>, config: &OptimizerConfig) -> ExecutionDecision {
    struct Item<'p> {
        probe: usize,
        q: usize,
        plan: &'p LogicalPlan,
        fp: String,
        cost: f64,
        action: Option<Action>,
        selected: bool,
    }
    let mut items: Vec<Item> = Vec::new();
    for (pi, probe) in input.probes.iter().enumerate() {
        for (qi, _) in probe.queries.iter().enumerate() {
            let plan = &input.plans[pi][qi];
            items.push(Item {
                probe: pi,
                q: qi,
                plan,
                fp: fingerprint(plan).hex(),
                cost: estimate_cost(plan, input.snap).total_cost,
                action: None,
                selected: false,
            });
        }
    }
    let qid = |it: &Item| input.probes[it.probe].queries[it.q].qid.clone();

    // 1. k of n
    for (pi, probe) in input.probes.iter().enumerate() {
        let mut selected_any: HashSet<&str> = HashSet::new();
        let mut in_group: HashSet<&str> = HashSet::new();
        for g in &probe.brief.k_of_n {
            let mut members: Vec<(f64, &str)> = g
                .qids
                .iter()
                .map(|q| {
                    let it = items.iter().find(|it| it.probe == pi && input.probes[pi].queries[it.q].qid == *q);
                    (it.map_or(f64::INFINITY, |it| it.cost), q.as_str())
                })
                .collect();
            members.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
            for (i, (_, q)) in members.iter().enumerate() {
                in_group.insert(q);
                if i < g.k {
                    selected_any.insert(q);
                }
            }
        }
        for it in items.iter_mut().filter(|it| it.probe == pi) {
            let q = probe.queries[it.q].qid.as_str();
            if selected_any.contains(q) {
                it.selected = true;
            } else if in_group.contains(q) {
                it.action = Some(Action::Pruned { reason: K_OF_N_UNSELECTED.into(), fact_key: None });
            }
        }
    }

    // 2 and 3: memory
    if let Some(memory) = input.memory {
        for it in items.iter_mut().filter(|it| it.action.is_none() && !it.selected) {
            let probe = &input.probes[it.probe];
            let history = input.histories.get(&probe.agent_id);
            if let Some(h) = history {
                if let Some(k) = drop_uninformative_followup(&it.fp, &probe.principal, h, memory, input.snap) {
                    it.action = Some(Action::Pruned { reason: NO_NEW_INFORMATION.into(), fact_key: Some(k) });
                    continue;
                }
            }
            if let Some(k) = current_fact(&it.fp, &probe.principal, memory, input.snap) {
                it.action = Some(Action::AnswerFromCache { fact_key: k, from_qid: None });
            }
        }
    }

    // Accuracy each query would get, used by dedup and step 7.
    let base_accuracy = |it: &Item| -> PhaseAccuracy {
        let probe = &input.probes[it.probe];
        let q = &probe.queries[it.q];
        if probe.brief.termination_for(&q.qid).is_some() || only_catalog(it.plan) {
            return PhaseAccuracy { fraction: 1.0, row_cap: None };
        }
        match q.accuracy {
            Some(a) => PhaseAccuracy { fraction: a.fraction(), row_cap: None },
            None => config.phase_policy.for_phase(probe.brief.phase),
        }
    };

    // 4. dedup, in priority order so the kept copy is the most important
    let mut by_priority: Vec<usize> = (0..items.len()).collect();
    let prio = |it: &Item| input.probes[it.probe].queries[it.q].priority;
    by_priority.sort_by(|&a, &b| prio(&items[b]).cmp(&prio(&items[a])).then(a.cmp(&b)));
    if input.sharing {
        let mut first: HashMap<(String, u64, bool), usize> = HashMap::new();
        for &i in &by_priority {
            if items[i].action.is_some() {
                continue;
            }
            let acc = base_accuracy(&items[i]);
            let incremental = {
                let p = &input.probes[items[i].probe];
                p.brief.termination_for(&p.queries[items[i].q].qid).is_some()
            };
            let key = (items[i].fp.clone(), acc.fraction.to_bits(), incremental);
            match first.get(&key) {
                Some(&j) if !items[i].selected && !incremental => {
                    let from = qid(&items[j]);
                    let from = if items[j].probe == items[i].probe { from } else { format!("{}:{}", input.probes[items[j].probe].probe_id, from) };
                    items[i].action = Some(Action::AnswerFromCache { fact_key: items[i].fp.clone(), from_qid: Some(from) });
                }
                Some(_) => {}
                None => {
                    first.insert(key, i);
                }
            }
        }
    }

    // 5. subsumption against queries scheduled in this batch or seen before
    for &i in &by_priority {
        if items[i].action.is_some() || items[i].selected {
            continue;
        }
        let probe = &input.probes[items[i].probe];
        let goal = probe.brief.goal_tokens();
        if goal.is_empty() {
            continue;
        }
        let mut reason = None;
        for (j, other) in items.iter().enumerate() {
            if j == i || other.probe != items[i].probe {
                continue;
            }
            let live = other.action.as_ref().is_none_or(|a| matches!(a, Action::AnswerFromCache { .. }));
            if live {
                if let Some(r) = prune_subsumed(&qid(other), other.plan, items[i].plan, &goal) {
                    reason = Some(r);
                    break;
                }
            }
        }
        if reason.is_none() {
            if let Some(h) = input.histories.get(&probe.agent_id) {
                reason = h.seen.iter().rev().find_map(|s| prune_subsumed(&s.qid, &s.plan, items[i].plan, &goal));
            }
        }
        if let Some(r) = reason {
            items[i].action = Some(Action::Pruned { reason: r, fact_key: None });
        }
    }

    // 6. admission control
    let mut exact_load = input.inflight_exact_cost;
    for it in &items {
        if it.action.is_none() && base_accuracy(it).fraction >= 1.0 {
            exact_load += it.cost;
        }
    }
    if exact_load > config.admission_budget {
        for it in items.iter_mut() {
            let probe = &input.probes[it.probe];
            if it.action.is_none() && !it.selected && probe.brief.phase == Phase::MetadataExploration {
                it.action = Some(Action::Deferred { reason: DEFERRED_ADMISSION.into() });
            }
        }
    }

    // 7. accuracy and pairwise priorities
    let mut fractions: Vec<Option<PhaseAccuracy>> =
        items.iter().map(|it| if it.action.is_none() { Some(base_accuracy(it)) } else { None }).collect();
    loop {
        let mut changed = false;
        for (pi, probe) in input.probes.iter().enumerate() {
            for (a, b) in &probe.brief.pairwise_priorities {
                let ia = items.iter().position(|it| it.probe == pi && probe.queries[it.q].qid == *a);
                let ib = items.iter().position(|it| it.probe == pi && probe.queries[it.q].qid == *b);
                let (Some(ia), Some(ib)) = (ia, ib) else { continue };
                if let (Some(fa), Some(fb)) = (fractions[ia], fractions[ib]) {
                    if fa.fraction < fb.fraction {
                        fractions[ia] = Some(PhaseAccuracy { fraction: fb.fraction, row_cap: fa.row_cap });
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut queries = Vec::with_capacity(items.len());
    for (i, it) in items.iter().enumerate() {
        let probe = &input.probes[it.probe];
        let q = &probe.queries[it.q];
        let action = match (&it.action, fractions[i]) {
            (Some(a), _) => a.clone(),
            (None, Some(acc)) if acc.fraction >= 1.0 => Action::ExecuteExact,
            (None, Some(acc)) => Action::ExecuteSampled { fraction: acc.fraction, row_cap: acc.row_cap },
            (None, None) => Action::ExecuteExact,
        };
        queries.push(QueryDecision {
            probe: it.probe,
            qid: q.qid.clone(),
            fingerprint: it.fp.clone(),
            cost: it.cost,
            priority: q.priority,
            incremental: action.is_execute() && probe.brief.termination_for(&q.qid).is_some(),
            action,
        });
    }

    let order: Vec<usize> = by_priority.into_iter().filter(|&i| queries[i].action.is_execute()).collect();
    let shared_dag = build_dag(&order, &queries, &items.iter().map(|it| it.plan).collect::<Vec<_>>(), input.probes);
    let materialization_orders = input.advisor.materialized();
    let decision = ExecutionDecision { queries, shared_dag, order, materialization_orders };
    log_decision(input.probes, &decision);
    decision
}

fn build_dag(order: &[usize], queries: &[QueryDecision], plans: &[&LogicalPlan], probes: &[Probe]) -> Vec<DagNode> {
    let mut nodes: Vec<DagNode> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for &i in order {
        let consumer = format!("{}:{}", probes[queries[i].probe].probe_id, queries[i].qid);
        for s in enumerate_subplans(plans[i]) {
            let fp = fingerprint(s.node).hex();
            let at = match index.get(&fp) {
                Some(&at) => at,
                None => {
                    let children = s.node.children().into_iter().map(|c| fingerprint(c).hex()).collect();
                    nodes.push(DagNode { fingerprint: fp.clone(), kind: s.node.kind(), size: s.size, children, consumers: Vec::new() });
                    index.insert(fp, nodes.len() - 1);
                    nodes.len() - 1
                }
            };
            if !nodes[at].consumers.contains(&consumer) {
                nodes[at].consumers.push(consumer.clone());
            }
        }
    }
    nodes
}

fn log_decision(probes: &[Probe], d: &ExecutionDecision) {
    if !tracing::enabled!(target: "probekernel::decision", tracing::Level::INFO) {
        return;
    }
    let entries: Vec<serde_json::Value> = d
        .queries
        .iter()
        .map(|q| {
            serde_json::json!({
                "probe_id": probes[q.probe].probe_id,
                "qid": q.qid,
                "action": q.action.name(),
                "reason": q.action.reason(),
                "fingerprint": q.fingerprint,
            })
        })
        .collect();
    tracing::info!(target: "probekernel::decision", decision = %serde_json::Value::Array(entries), "batch decision");
}
