//! Copy-on-write branch storage.
//!
//! Every branch owns a complete `ChunkMap` per table: an ordered list of
//! reference-counted segments of at most [`CHUNK_CAPACITY`] row slots. A fork
//! clones the chunk maps (reference increments only) and the persistent
//! primary-key index (O(1) structural share). A branch-local write copies a
//! segment the first time it mutates one that is still referenced elsewhere.
//!
//! Writes are tracked per branch as `(table, key) -> commit sequence`, where
//! the commit sequence is global to the store. Merges are three-way against
//! the state at which the two lineages diverged:
//!
//! ```text
//!   mainline  ──●──────●─────────●──>        ● = commit
//!                \ fork@s1        \ fork@s2
//!                 A ──●──>         B ──●──>
//! ```
//!
//! Merging B into A uses the divergence point `min(s1, s2)`: keys changed on
//! B (including mainline commits in `(s1, s2]` that B observed) apply to A
//! unless A also changed them, in which case the merge reports a conflict and
//! aborts without touching A.
//!
//! Rollback flips the status and moves the branch's chunk maps into a
//! reclamation queue; no row is visited. The queue is drained later.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog::Schema;
use crate::error::{Error, Result};
use crate::value::{Row, Value};

pub const CHUNK_CAPACITY: usize = 1024;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BranchId(pub u64);

impl BranchId {
    pub const MAINLINE: BranchId = BranchId(0);
}

impl std::fmt::Display for BranchId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchStatus {
    Active,
    RolledBack,
    Merged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchInfo {
    pub id: BranchId,
    pub parent: Option<BranchId>,
    /// Parent's table versions at fork time.
    pub fork_epoch: BTreeMap<String, u64>,
    /// Global commit sequence at fork time.
    pub fork_seq: u64,
    pub status: BranchStatus,
}

#[derive(Debug, Clone)]
pub(crate) struct Slot {
    pub key: Value,
    pub row: Option<Row>,
}

/// An immutable-once-shared run of row slots. Deleted rows leave a tombstone.
#[derive(Debug, Clone)]
pub struct Segment {
    id: u64,
    slots: Vec<Slot>,
}

impl Segment {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn rows(&self) -> impl Iterator<Item = &Row> {
        self.slots.iter().filter_map(|s| s.row.as_ref())
    }

    pub fn keyed_rows(&self) -> impl Iterator<Item = (&Value, &Row)> {
        self.slots.iter().filter_map(|s| s.row.as_ref().map(|r| (&s.key, r)))
    }
}

pub type ChunkMap = Vec<Arc<Segment>>;

#[derive(Debug, Clone)]
pub(crate) struct TableData {
    pub schema: Arc<Schema>,
    pub chunks: ChunkMap,
    index: imbl::HashMap<Value, (u32, u32)>,
    pub version: u64,
    pub live_rows: usize,
}

impl TableData {
    fn new(schema: Arc<Schema>) -> Self {
        TableData { schema, chunks: Vec::new(), index: imbl::HashMap::new(), version: 0, live_rows: 0 }
    }

    pub fn get(&self, key: &Value) -> Option<&Row> {
        let &(c, s) = self.index.get(key)?;
        self.chunks[c as usize].slots[s as usize].row.as_ref()
    }
}

/// Read-only view of one table on one branch. Holding it pins the segments.
#[derive(Debug, Clone)]
pub struct TableSnapshot {
    pub schema: Arc<Schema>,
    pub chunks: ChunkMap,
    pub version: u64,
    pub row_count: usize,
}

impl TableSnapshot {
    pub fn rows(&self) -> impl Iterator<Item = &Row> {
        self.chunks.iter().flat_map(|c| c.rows())
    }

    pub fn keyed_rows(&self) -> impl Iterator<Item = (&Value, &Row)> {
        self.chunks.iter().flat_map(|c| c.keyed_rows())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WriteOp {
    /// Insert, or replace the row with the same primary key.
    Upsert(Row),
    /// Delete by primary key (or by row id for tables without one).
    Delete(Value),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum WriteMode {
    /// Plain insert: duplicate primary keys are an error.
    Insert,
    Upsert,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteReport {
    pub version: u64,
    pub chunks_copied: usize,
    pub segments_created: usize,
    pub keys: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub table: String,
    /// `None` for a schema-level conflict on the whole table.
    pub key: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeReport {
    pub source: BranchId,
    pub target: BranchId,
    pub merged: bool,
    pub applied: usize,
    pub conflicts: Vec<Conflict>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SpaceStats {
    /// Segments ever created (fresh or copied).
    pub segments_allocated: u64,
    /// Distinct segments referenced by active branches.
    pub live_segments: usize,
    pub chunk_maps: usize,
}

pub(crate) struct Branch {
    pub info: BranchInfo,
    pub tables: BTreeMap<String, TableData>,
    pub catalog_version: u64,
    /// Commit sequences at which each key was written, ascending.
    writes: HashMap<(String, Value), Vec<u64>>,
    schema_changes: HashMap<String, Vec<u64>>,
    /// Active branches below this one. Merge needs an inactive branch's
    /// write log while any descendant is still active.
    live_descendants: usize,
}

/// All branches of one database. Not synchronized; `Database` wraps it in a lock.
pub(crate) struct Store {
    branches: Vec<Branch>,
    seq: u64,
    next_rowid: i64,
    next_segment: u64,
    segments_allocated: u64,
    reclaim_queue: Vec<Box<dyn std::any::Any + Send + Sync>>,
}

impl Default for Store {
    fn default() -> Self {
        Self::new()
    }
}

impl Store {
    pub fn new() -> Self {
        let main = Branch {
            info: BranchInfo {
                id: BranchId::MAINLINE,
                parent: None,
                fork_epoch: BTreeMap::new(),
                fork_seq: 0,
                status: BranchStatus::Active,
            },
            tables: BTreeMap::new(),
            catalog_version: 0,
            writes: HashMap::new(),
            schema_changes: HashMap::new(),
            live_descendants: 0,
        };
        Store {
            branches: vec![main],
            seq: 0,
            next_rowid: 1,
            next_segment: 1,
            segments_allocated: 0,
            reclaim_queue: Vec::new(),
        }
    }

    pub fn branch(&self, id: BranchId) -> Result<&Branch> {
        self.branches.get(id.0 as usize).ok_or(Error::UnknownBranch(id.0))
    }

    pub fn active(&self, id: BranchId) -> Result<&Branch> {
        let b = self.branch(id)?;
        if b.info.status != BranchStatus::Active {
            return Err(Error::InactiveBranch(id.0));
        }
        Ok(b)
    }

    fn active_mut(&mut self, id: BranchId) -> Result<&mut Branch> {
        self.active(id)?;
        Ok(&mut self.branches[id.0 as usize])
    }

    pub fn info(&self, id: BranchId) -> Result<BranchInfo> {
        Ok(self.branch(id)?.info.clone())
    }

    pub fn branch_ids(&self) -> Vec<BranchId> {
        self.branches.iter().map(|b| b.info.id).collect()
    }

    pub fn table(&self, branch: BranchId, name: &str) -> Result<&TableData> {
        self.active(branch)?
            .tables
            .get(name)
            .ok_or_else(|| Error::UnknownTable(name.to_string()))
    }

    pub fn snapshot(&self, branch: BranchId, name: &str) -> Result<TableSnapshot> {
        let t = self.table(branch, name)?;
        Ok(TableSnapshot {
            schema: t.schema.clone(),
            chunks: t.chunks.clone(),
            version: t.version,
            row_count: t.live_rows,
        })
    }

    pub fn create_table(&mut self, branch: BranchId, mut schema: Schema) -> Result<Arc<Schema>> {
        schema.validate()?;
        self.seq += 1;
        let seq = self.seq;
        let b = self.active_mut(branch)?;
        if b.tables.contains_key(&schema.table_name) {
            return Err(Error::TableExists(schema.table_name));
        }
        schema.version = 0;
        let schema = Arc::new(schema);
        b.tables.insert(schema.table_name.clone(), TableData::new(schema.clone()));
        b.schema_changes.entry(schema.table_name.clone()).or_default().push(seq);
        b.catalog_version += 1;
        Ok(schema)
    }

    pub fn fork(&mut self, parent: BranchId) -> Result<BranchId> {
        let p = self.active(parent)?;
        let id = BranchId(self.branches.len() as u64);
        let branch = Branch {
            info: BranchInfo {
                id,
                parent: Some(parent),
                fork_epoch: p.tables.iter().map(|(k, t)| (k.clone(), t.version)).collect(),
                fork_seq: self.seq,
                status: BranchStatus::Active,
            },
            tables: p.tables.clone(),
            catalog_version: p.catalog_version,
            writes: HashMap::new(),
            schema_changes: HashMap::new(),
            live_descendants: 0,
        };
        for a in self.lineage(parent) {
            self.branches[a.0 as usize].live_descendants += 1;
        }
        self.branches.push(branch);
        Ok(id)
    }

    /// Validate and apply one write batch atomically. On error nothing changes.
    pub(crate) fn write(
        &mut self,
        branch: BranchId,
        table: &str,
        ops: Vec<WriteOp>,
        mode: WriteMode,
    ) -> Result<WriteReport> {
        let t = self.table(branch, table)?;
        let schema = t.schema.clone();
        let pk = schema.primary_key_index();

        // Validate everything before touching state.
        let mut prepared: Vec<(Value, Option<Row>)> = Vec::with_capacity(ops.len());
        let mut batch_keys: HashSet<Value> = HashSet::new();
        let mut rowid = self.next_rowid;
        for op in ops {
            match op {
                WriteOp::Upsert(row) => {
                    if row.len() != schema.columns.len() {
                        return Err(Error::Arity { expected: schema.columns.len(), got: row.len() });
                    }
                    let row = row
                        .into_iter()
                        .zip(&schema.columns)
                        .map(|(v, c)| v.coerce_to(c.ty))
                        .collect::<Result<Row>>()?;
                    let key = match pk {
                        Some(i) => {
                            if row[i].is_null() {
                                return Err(Error::PrimaryKey {
                                    table: table.to_string(),
                                    key: "NULL".into(),
                                });
                            }
                            row[i].clone()
                        }
                        None => {
                            rowid += 1;
                            Value::Int(rowid - 1)
                        }
                    };
                    if mode == WriteMode::Insert
                        && (t.index.contains_key(&key) || batch_keys.contains(&key))
                    {
                        return Err(Error::PrimaryKey { table: table.to_string(), key: key.to_string() });
                    }
                    batch_keys.insert(key.clone());
                    prepared.push((key, Some(row)));
                }
                WriteOp::Delete(key) => {
                    let key = match pk {
                        Some(i) => key.coerce_to(schema.columns[i].ty)?,
                        None => key,
                    };
                    batch_keys.insert(key.clone());
                    prepared.push((key, None));
                }
            }
        }

        self.next_rowid = rowid;
        self.seq += 1;
        let seq = self.seq;
        let mut next_segment = self.next_segment;
        let mut copied: HashSet<u32> = HashSet::new();
        let mut created = 0usize;
        let mut keys = Vec::with_capacity(prepared.len());

        let b = &mut self.branches[branch.0 as usize];
        let t = b.tables.get_mut(table).expect("validated above");
        for (key, row) in prepared {
            apply_one(t, &key, row, &mut next_segment, &mut copied, &mut created);
            b.writes.entry((table.to_string(), key.clone())).or_default().push(seq);
            keys.push(key);
        }
        t.version += 1;
        let version = t.version;
        self.next_segment = next_segment;
        self.segments_allocated += (copied.len() + created) as u64;
        Ok(WriteReport { version, chunks_copied: copied.len(), segments_created: created, keys })
    }

    pub fn rollback(&mut self, branch: BranchId) -> Result<()> {
        if branch == BranchId::MAINLINE {
            return Err(Error::RollbackMainline);
        }
        let b = self.active_mut(branch)?;
        b.info.status = BranchStatus::RolledBack;
        let tables = std::mem::take(&mut b.tables);
        self.reclaim_queue.push(Box::new(tables));
        self.deactivated(branch);
        Ok(())
    }

    /// Bookkeeping after `branch` stops being active: release the write
    /// logs no active branch can reach any more.
    fn deactivated(&mut self, branch: BranchId) {
        let lineage = self.lineage(branch);
        for &a in &lineage[1..] {
            self.branches[a.0 as usize].live_descendants -= 1;
        }
        for a in lineage {
            let b = &mut self.branches[a.0 as usize];
            if b.info.status != BranchStatus::Active && b.live_descendants == 0 {
                let writes = std::mem::take(&mut b.writes);
                let schema = std::mem::take(&mut b.schema_changes);
                self.reclaim_queue.push(Box::new((writes, schema)));
            }
        }
    }

    /// Hand over everything released by rollbacks and merges so the caller
    /// can drop it outside any lock.
    pub fn take_reclaim_queue(&mut self) -> Vec<Box<dyn std::any::Any + Send + Sync>> {
        std::mem::take(&mut self.reclaim_queue)
    }

    fn lineage(&self, id: BranchId) -> Vec<BranchId> {
        let mut out = vec![id];
        let mut cur = id;
        while let Some(p) = self.branches[cur.0 as usize].info.parent {
            out.push(p);
            cur = p;
        }
        out
    }

    /// Divergence sequence of two lineages: commits after it on either side
    /// are that side's changes relative to the common ancestor.
    fn divergence_seq(&self, a: BranchId, b: BranchId) -> Result<u64> {
        let la = self.lineage(a);
        let lb = self.lineage(b);
        let lca = la
            .iter()
            .find(|x| lb.contains(x))
            .copied()
            .ok_or_else(|| Error::Eval("branches share no ancestor".into()))?;
        let side = |l: &[BranchId]| -> u64 {
            let pos = l.iter().position(|x| *x == lca).unwrap();
            if pos == 0 {
                u64::MAX
            } else {
                self.branches[l[pos - 1].0 as usize].info.fork_seq
            }
        };
        let s = side(&la).min(side(&lb));
        if s == u64::MAX {
            return Err(Error::Eval("cannot merge a branch into itself".into()));
        }
        Ok(s)
    }

    /// Keys changed on `id` in `(since, upto]`, including changes inherited
    /// from ancestors after `since`.
    fn changed_since(
        &self,
        id: BranchId,
        since: u64,
        upto: u64,
        keys: &mut HashSet<(String, Value)>,
        schema: &mut HashSet<String>,
    ) {
        let b = &self.branches[id.0 as usize];
        let within = |seqs: &[u64]| {
            // First commit after `since`, if it is not after `upto`.
            let i = seqs.partition_point(|&s| s <= since);
            seqs.get(i).is_some_and(|&s| s <= upto)
        };
        for (k, seqs) in &b.writes {
            if within(seqs) {
                keys.insert(k.clone());
            }
        }
        for (t, seqs) in &b.schema_changes {
            if within(seqs) {
                schema.insert(t.clone());
            }
        }
        if since < b.info.fork_seq {
            if let Some(p) = b.info.parent {
                self.changed_since(p, since, b.info.fork_seq.min(upto), keys, schema);
            }
        }
    }

    pub fn merge(&mut self, source: BranchId, target: BranchId) -> Result<MergeReport> {
        self.active(source)?;
        self.active(target)?;
        let since = self.divergence_seq(source, target)?;

        let (mut src_keys, mut src_schema) = (HashSet::new(), HashSet::new());
        self.changed_since(source, since, u64::MAX, &mut src_keys, &mut src_schema);
        let (mut dst_keys, mut dst_schema) = (HashSet::new(), HashSet::new());
        self.changed_since(target, since, u64::MAX, &mut dst_keys, &mut dst_schema);

        let dst_tables: HashSet<&str> = dst_keys.iter().map(|(t, _)| t.as_str()).collect();
        let src_tables: HashSet<&str> = src_keys.iter().map(|(t, _)| t.as_str()).collect();
        let mut conflicts: Vec<Conflict> = Vec::new();
        let mut schema_conflicts: BTreeSet<&String> = BTreeSet::new();
        for t in &src_schema {
            if dst_schema.contains(t) || dst_tables.contains(t.as_str()) {
                schema_conflicts.insert(t);
            }
        }
        for t in &dst_schema {
            if src_tables.contains(t.as_str()) {
                schema_conflicts.insert(t);
            }
        }
        conflicts.extend(schema_conflicts.into_iter().map(|t| Conflict { table: t.clone(), key: None }));
        for k in &src_keys {
            if dst_keys.contains(k) {
                conflicts.push(Conflict { table: k.0.clone(), key: Some(k.1.clone()) });
            }
        }
        if !conflicts.is_empty() {
            conflicts.sort_by(|a, b| {
                a.table.cmp(&b.table).then_with(|| match (&a.key, &b.key) {
                    (None, None) => std::cmp::Ordering::Equal,
                    (None, Some(_)) => std::cmp::Ordering::Less,
                    (Some(_), None) => std::cmp::Ordering::Greater,
                    (Some(x), Some(y)) => x.total_cmp(y),
                })
            });
            return Ok(MergeReport { source, target, merged: false, applied: 0, conflicts });
        }

        // Resolve source values first, then apply to the target.
        let src = &self.branches[source.0 as usize];
        let mut new_tables: Vec<TableData> = Vec::new();
        for t in &src_schema {
            if let Some(data) = src.tables.get(t) {
                new_tables.push(data.clone());
            }
        }
        let mut by_table: BTreeMap<String, Vec<(Value, Option<Row>)>> = BTreeMap::new();
        for (table, key) in src_keys {
            if src_schema.contains(&table) {
                continue;
            }
            let row = src.tables.get(&table).and_then(|t| t.get(&key)).cloned();
            by_table.entry(table).or_default().push((key, row));
        }
        for rows in by_table.values_mut() {
            rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        }

        self.seq += 1;
        let seq = self.seq;
        let mut next_segment = self.next_segment;
        let mut applied = 0;
        let mut allocated = 0u64;
        let dst = &mut self.branches[target.0 as usize];
        for data in new_tables {
            let name = data.schema.table_name.clone();
            for (key, _) in data.chunks.iter().flat_map(|c| c.keyed_rows()) {
                dst.writes.entry((name.clone(), key.clone())).or_default().push(seq);
            }
            dst.schema_changes.entry(name.clone()).or_default().push(seq);
            dst.catalog_version += 1;
            dst.tables.insert(name, data);
            applied += 1;
        }
        for (table, rows) in by_table {
            let Some(t) = dst.tables.get_mut(&table) else { continue };
            let mut copied = HashSet::new();
            let mut created = 0;
            for (key, row) in rows {
                apply_one(t, &key, row, &mut next_segment, &mut copied, &mut created);
                dst.writes.entry((table.clone(), key)).or_default().push(seq);
                applied += 1;
            }
            t.version += 1;
            allocated += (copied.len() + created) as u64;
        }
        self.next_segment = next_segment;
        self.segments_allocated += allocated;
        let s = &mut self.branches[source.0 as usize];
        s.info.status = BranchStatus::Merged;
        let tables = std::mem::take(&mut s.tables);
        self.reclaim_queue.push(Box::new(tables));
        self.deactivated(source);
        Ok(MergeReport { source, target, merged: true, applied, conflicts: Vec::new() })
    }

    /// Keys written since fork, sorted by table then key.
    pub fn write_set(&self, branch: BranchId) -> Result<Vec<(String, Value)>> {
        let b = self.branch(branch)?;
        let mut out: Vec<(String, Value)> = b.writes.keys().cloned().collect();
        out.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.total_cmp(&b.1)));
        Ok(out)
    }

    pub fn space_stats(&self) -> SpaceStats {
        let mut live: HashSet<*const Segment> = HashSet::new();
        let mut maps = 0;
        for b in &self.branches {
            for t in b.tables.values() {
                maps += 1;
                for c in &t.chunks {
                    live.insert(Arc::as_ptr(c));
                }
            }
        }
        SpaceStats { segments_allocated: self.segments_allocated, live_segments: live.len(), chunk_maps: maps }
    }
}

fn new_segment(next: &mut u64, slots: Vec<Slot>) -> Arc<Segment> {
    let id = *next;
    *next += 1;
    Arc::new(Segment { id, slots })
}

/// Mutable access to chunk `c`, copying it first if anything else holds it.
fn private_chunk<'a>(
    t: &'a mut TableData,
    c: usize,
    next: &mut u64,
    copied: &mut HashSet<u32>,
) -> &'a mut Segment {
    if Arc::get_mut(&mut t.chunks[c]).is_none() {
        let slots = t.chunks[c].slots.clone();
        t.chunks[c] = new_segment(next, slots);
        copied.insert(c as u32);
    }
    Arc::get_mut(&mut t.chunks[c]).expect("unique after copy")
}

fn apply_one(
    t: &mut TableData,
    key: &Value,
    row: Option<Row>,
    next: &mut u64,
    copied: &mut HashSet<u32>,
    created: &mut usize,
) {
    match (t.index.get(key).copied(), row) {
        (Some((c, s)), Some(row)) => {
            let seg = private_chunk(t, c as usize, next, copied);
            seg.slots[s as usize].row = Some(row);
        }
        (Some((c, s)), None) => {
            let seg = private_chunk(t, c as usize, next, copied);
            seg.slots[s as usize].row = None;
            t.index.remove(key);
            t.live_rows -= 1;
        }
        (None, Some(row)) => {
            let last = t.chunks.len();
            let fits = last > 0 && t.chunks[last - 1].slots.len() < CHUNK_CAPACITY;
            let c = if fits {
                last - 1
            } else {
                t.chunks.push(new_segment(next, Vec::with_capacity(CHUNK_CAPACITY)));
                *created += 1;
                // A fresh segment is private; do not count it as a copy.
                copied.remove(&(last as u32));
                last
            };
            let seg = private_chunk(t, c, next, copied);
            seg.slots.push(Slot { key: key.clone(), row: Some(row) });
            let s = seg.slots.len() - 1;
            t.index.insert(key.clone(), (c as u32, s as u32));
            t.live_rows += 1;
        }
        (None, None) => {}
    }
}
