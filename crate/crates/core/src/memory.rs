//! Agentic memory: version-stamped grounding facts with lazy staleness and
//! principal-scoped sharing.
//!
//! Log format: one JSON object per line, one line per `put`, fields
//!
//! | field           | type                         | meaning                                      |
//! |-----------------|------------------------------|----------------------------------------------|
//! | `fact_key`      | string                       | fingerprint hex for probe results            |
//! | `kind`          | string                       | `probe_result`, `schema_summary`, ...        |
//! | `scope`         | `[{"table","column"?}]`      | tables/columns the fact describes            |
//! | `content`       | any JSON                     | payload (`{"columns","rows"}` for results)   |
//! | `note`          | string                       | free text, searched by similarity            |
//! | `data_versions` | `{table: version}`           | versions the fact was derived from           |
//! | `created_by`    | string                       | agent id                                     |
//! | `principal`     | string                       | access-control identity                      |
//! | `created_turn`  | integer                      |                                              |
//! | `stale`         | bool                         | true once superseded                         |
//! | `seq`           | integer                      | store-wide put order                         |
//! | `branch`        | integer                      | branch the versions refer to                 |
//! | `sql`           | string, optional             | query that produced a probe result           |
//!
//! Replaying the lines in order rebuilds the store: a later line with the same
//! key supersedes the earlier one, a line with an already-seen `seq` replaces it.
//!
//! Staleness is evaluated at read time: a fact is stale if it was superseded,
//! if any stamped table's current version differs from the stamp, or if it
//! is read on a branch other than the one it was stamped on.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::branch::BranchId;
use crate::db::{Snapshot, CATALOG_VERSION_KEY};
use crate::error::{Error, Result};
use crate::protocol::FactLookup;
use crate::similarity::{trigram_similarity, SimilarityScorer, TrigramScorer};
use crate::value::Row;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactKind {
    ProbeResult,
    SchemaSummary,
    ColumnStats,
    ValueFormat,
    JoinHint,
    FeedbackNote,
}

impl FactKind {
    pub const ALL: [FactKind; 6] = [
        FactKind::ProbeResult,
        FactKind::SchemaSummary,
        FactKind::ColumnStats,
        FactKind::ValueFormat,
        FactKind::JoinHint,
        FactKind::FeedbackNote,
    ];

    /// Metadata-derived facts are visible to every principal.
    pub fn shareable(self) -> bool {
        matches!(self, FactKind::SchemaSummary | FactKind::ColumnStats)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScopeRef {
    pub table: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
}

impl ScopeRef {
    pub fn table(t: impl Into<String>) -> Self {
        ScopeRef { table: t.into(), column: None }
    }

    pub fn column(t: impl Into<String>, c: impl Into<String>) -> Self {
        ScopeRef { table: t.into(), column: Some(c.into()) }
    }

    fn text(&self) -> String {
        match &self.column {
            Some(c) => format!("{} {}", self.table, c),
            None => self.table.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryFact {
    pub fact_key: String,
    pub kind: FactKind,
    pub scope: Vec<ScopeRef>,
    pub content: serde_json::Value,
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub data_versions: BTreeMap<String, u64>,
    pub created_by: String,
    pub principal: String,
    #[serde(default)]
    pub created_turn: u64,
    #[serde(default)]
    pub stale: bool,
    #[serde(default)]
    pub seq: u64,
    #[serde(default)]
    pub branch: BranchId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sql: Option<String>,
}

impl MemoryFact {
    pub fn new(
        fact_key: impl Into<String>,
        kind: FactKind,
        scope: Vec<ScopeRef>,
        content: serde_json::Value,
        principal: impl Into<String>,
    ) -> Self {
        let principal = principal.into();
        MemoryFact {
            fact_key: fact_key.into(),
            kind,
            scope,
            content,
            note: String::new(),
            data_versions: BTreeMap::new(),
            created_by: principal.clone(),
            principal,
            created_turn: 0,
            stale: false,
            seq: 0,
            branch: BranchId::MAINLINE,
            sql: None,
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    pub fn visible_to(&self, principal: &str) -> bool {
        self.principal == principal || self.kind.shareable()
    }

    /// Result rows stored in a `{"rows": [...]}` payload.
    pub fn rows(&self) -> Option<Vec<Row>> {
        serde_json::from_value(self.content.get("rows")?.clone()).ok()
    }

    /// Staleness against current versions (superseded facts stay stale).
    pub fn is_stale_at(&self, versions: &dyn VersionSource) -> bool {
        self.stale
            || self.branch != versions.branch()
            || self.data_versions.iter().any(|(t, v)| versions.current_version(t) != Some(*v))
    }

    fn searchable_text(&self) -> String {
        let mut s = self.note.clone();
        for r in &self.scope {
            s.push(' ');
            s.push_str(&r.text());
        }
        s
    }
}

/// Current table versions on one branch.
pub trait VersionSource {
    fn branch(&self) -> BranchId;
    fn current_version(&self, table: &str) -> Option<u64>;
}

impl VersionSource for Snapshot {
    fn branch(&self) -> BranchId {
        self.branch
    }

    fn current_version(&self, table: &str) -> Option<u64> {
        self.version_of(table)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LookupMode {
    ByKey(String),
    ByScope(ScopeRef),
    BySimilarity { phrase: String, top_k: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryQuery {
    pub mode: LookupMode,
    pub principal: String,
}

impl MemoryQuery {
    pub fn by_key(key: impl Into<String>, principal: impl Into<String>) -> Self {
        MemoryQuery { mode: LookupMode::ByKey(key.into()), principal: principal.into() }
    }

    pub fn by_scope(scope: ScopeRef, principal: impl Into<String>) -> Self {
        MemoryQuery { mode: LookupMode::ByScope(scope), principal: principal.into() }
    }

    pub fn by_similarity(phrase: impl Into<String>, top_k: usize, principal: impl Into<String>) -> Self {
        MemoryQuery { mode: LookupMode::BySimilarity { phrase: phrase.into(), top_k }, principal: principal.into() }
    }
}

#[derive(Default)]
struct Inner {
    /// Every version of every fact, in seq order.
    facts: Vec<MemoryFact>,
    /// Key to index of its newest version.
    current: HashMap<String, usize>,
    by_seq: HashMap<u64, usize>,
    next_seq: u64,
}

impl Inner {
    fn apply(&mut self, mut fact: MemoryFact) {
        if let Some(&i) = self.by_seq.get(&fact.seq) {
            self.facts[i] = fact;
            return;
        }
        if let Some(&old) = self.current.get(&fact.fact_key) {
            self.facts[old].stale = true;
        }
        fact.stale = false;
        self.next_seq = self.next_seq.max(fact.seq + 1);
        let i = self.facts.len();
        self.current.insert(fact.fact_key.clone(), i);
        self.by_seq.insert(fact.seq, i);
        self.facts.push(fact);
    }
}

pub struct MemoryStore {
    inner: RwLock<Inner>,
    log: Option<Mutex<File>>,
    scorer: Box<dyn SimilarityScorer>,
}

impl Default for MemoryStore {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for MemoryStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryStore").field("facts", &self.len()).finish()
    }
}

fn is_fingerprint_hex(s: &str) -> bool {
    s.len() == 16 && s.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase())
}

impl MemoryStore {
    pub fn new() -> Self {
        MemoryStore { inner: RwLock::new(Inner::default()), log: None, scorer: Box::new(TrigramScorer) }
    }

    pub fn with_scorer(mut self, scorer: Box<dyn SimilarityScorer>) -> Self {
        self.scorer = scorer;
        self
    }

    /// Open (or create) a log file and replay it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut inner = Inner::default();
        if path.exists() {
            for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let fact: MemoryFact = serde_json::from_str(&line)
                    .map_err(|e| Error::Config(format!("memory log line {}: {e}", n + 1)))?;
                inner.apply(fact);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(MemoryStore { inner: RwLock::new(inner), log: Some(Mutex::new(file)), scorer: Box::new(TrigramScorer) })
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Inner> {
        self.inner.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn len(&self) -> usize {
        self.read().current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Store a fact, superseding any current fact with the same key.
    /// Missing version stamps are filled from `versions`; schema summaries
    /// are also stamped with the catalog-wide version.
    pub fn put(&self, mut fact: MemoryFact, versions: &dyn VersionSource) -> Result<String> {
        for s in &fact.scope {
            if versions.current_version(&s.table).is_none() {
                return Err(Error::UnknownTable(s.table.clone()));
            }
        }
        if fact.kind == FactKind::ProbeResult && !is_fingerprint_hex(&fact.fact_key) {
            return Err(Error::Eval(format!("probe_result key {:?} is not a plan fingerprint", fact.fact_key)));
        }
        if fact.data_versions.is_empty() {
            for s in &fact.scope {
                let v = versions.current_version(&s.table).expect("checked above");
                fact.data_versions.insert(s.table.clone(), v);
            }
        }
        if fact.kind == FactKind::SchemaSummary {
            if let Some(v) = versions.current_version(CATALOG_VERSION_KEY) {
                fact.data_versions.entry(CATALOG_VERSION_KEY.to_string()).or_insert(v);
            }
        }
        fact.branch = versions.branch();
        let mut inner = self.inner.write().unwrap_or_else(|e| e.into_inner());
        fact.seq = inner.next_seq;
        fact.stale = false;
        if let Some(log) = &self.log {
            let mut f = log.lock().unwrap_or_else(|e| e.into_inner());
            writeln!(f, "{}", serde_json::to_string(&fact)?)?;
            f.flush()?;
        }
        let key = fact.fact_key.clone();
        inner.apply(fact);
        Ok(key)
    }

    /// Facts visible to the query's principal, with staleness evaluated now.
    pub fn lookup(&self, q: &MemoryQuery, versions: &dyn VersionSource) -> Vec<MemoryFact> {
        let inner = self.read();
        let flag = |f: &MemoryFact| {
            let mut f = f.clone();
            f.stale = f.is_stale_at(versions);
            f
        };
        match &q.mode {
            LookupMode::ByKey(k) => inner
                .current
                .get(k)
                .map(|&i| &inner.facts[i])
                .filter(|f| f.visible_to(&q.principal))
                .map(flag)
                .into_iter()
                .collect(),
            LookupMode::ByScope(s) => {
                let mut out: Vec<MemoryFact> = inner
                    .current
                    .values()
                    .map(|&i| &inner.facts[i])
                    .filter(|f| f.visible_to(&q.principal))
                    .filter(|f| f.scope.iter().any(|r| r.table == s.table && (s.column.is_none() || r.column == s.column)))
                    .map(flag)
                    .filter(|f| !f.stale)
                    .collect();
                out.sort_by_key(|f| std::cmp::Reverse(f.seq));
                out
            }
            LookupMode::BySimilarity { phrase, top_k } => {
                let mut scored: Vec<(f64, MemoryFact)> = inner
                    .current
                    .values()
                    .map(|&i| &inner.facts[i])
                    .filter(|f| f.visible_to(&q.principal))
                    .map(flag)
                    .filter(|f| !f.stale)
                    .map(|f| (self.scorer.score(phrase, &f.searchable_text()), f))
                    .filter(|(s, _)| *s > 0.0)
                    .collect();
                scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| b.1.seq.cmp(&a.1.seq)));
                scored.truncate(*top_k);
                scored.into_iter().map(|(_, f)| f).collect()
            }
        }
    }

    /// Current fact for a key regardless of principal, staleness evaluated.
    pub fn get(&self, key: &str, versions: &dyn VersionSource) -> Option<MemoryFact> {
        let inner = self.read();
        inner.current.get(key).map(|&i| {
            let mut f = inner.facts[i].clone();
            f.stale = f.is_stale_at(versions);
            f
        })
    }

    /// All stored versions of a key, oldest first.
    pub fn history(&self, key: &str) -> Vec<MemoryFact> {
        self.read().facts.iter().filter(|f| f.fact_key == key).cloned().collect()
    }

    /// Every stored fact version, in put order.
    pub fn all(&self) -> Vec<MemoryFact> {
        self.read().facts.clone()
    }

    /// Recheck a fact. With `refresh`, a stale fact is replaced by what the
    /// closure returns (typically a re-execution of `fact.sql`).
    pub fn revalidate(
        &self,
        key: &str,
        versions: &dyn VersionSource,
        refresh: Option<&dyn Fn(&MemoryFact) -> Result<MemoryFact>>,
    ) -> Result<MemoryFact> {
        let fact = self.get(key, versions).ok_or_else(|| Error::UnknownFact(key.to_string()))?;
        match refresh {
            Some(f) if fact.stale => {
                let mut fresh = f(&fact)?;
                fresh.fact_key = fact.fact_key.clone();
                self.put(fresh, versions)?;
                self.get(key, versions).ok_or_else(|| Error::UnknownFact(key.to_string()))
            }
            _ => Ok(fact),
        }
    }

    /// Read-only view for one principal, usable by termination criteria.
    pub fn view<'a>(&'a self, principal: &'a str, versions: &'a dyn VersionSource) -> MemoryView<'a> {
        MemoryView { store: self, principal, versions }
    }
}

pub struct MemoryView<'a> {
    store: &'a MemoryStore,
    principal: &'a str,
    versions: &'a dyn VersionSource,
}

impl FactLookup for MemoryView<'_> {
    fn fact_rows(&self, fact_key: &str) -> Option<Vec<Row>> {
        let q = MemoryQuery::by_key(fact_key, self.principal);
        self.store.lookup(&q, self.versions).into_iter().next().and_then(|f| f.rows())
    }
}

/// Similarity between a phrase and a fact, as used by `by_similarity`.
pub fn fact_similarity(phrase: &str, fact: &MemoryFact) -> f64 {
    trigram_similarity(phrase, &fact.searchable_text())
}
