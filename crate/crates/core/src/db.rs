//! Database facade: branch store behind a lock, consistent read snapshots,
//! catalog virtual tables and CSV ingestion.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use crate::branch::{BranchId, BranchInfo, MergeReport, SpaceStats, Store, TableSnapshot, WriteMode, WriteOp, WriteReport};
use crate::catalog::{self, ColumnDef, Schema, TableStats};
use crate::error::{Error, Result};
use crate::planner::{SchemaProvider, StatsProvider};
use crate::value::{DataType, Row, Value};

/// Pseudo-table key under which the catalog-wide version is stamped.
pub const CATALOG_VERSION_KEY: &str = "__catalog__";

type StatsCache = Mutex<HashMap<(BranchId, String, u64), Arc<TableStats>>>;

#[derive(Default)]
pub struct Database {
    store: RwLock<Store>,
    stats: Arc<StatsCache>,
}

impl std::fmt::Debug for Database {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Database").finish_non_exhaustive()
    }
}

impl Database {
    pub fn new() -> Self {
        Self::default()
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Store> {
        self.store.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Store> {
        self.store.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn create_table(&self, schema: Schema) -> Result<Arc<Schema>> {
        self.create_table_on(BranchId::MAINLINE, schema)
    }

    pub fn create_table_on(&self, branch: BranchId, schema: Schema) -> Result<Arc<Schema>> {
        self.write().create_table(branch, schema)
    }

    /// Append rows to a mainline table; returns the new table version.
    pub fn insert_rows(&self, table: &str, rows: Vec<Row>) -> Result<u64> {
        self.insert_rows_on(BranchId::MAINLINE, table, rows)
    }

    pub fn insert_rows_on(&self, branch: BranchId, table: &str, rows: Vec<Row>) -> Result<u64> {
        let ops = rows.into_iter().map(WriteOp::Upsert).collect();
        Ok(self.write().write(branch, table, ops, WriteMode::Insert)?.version)
    }

    /// Upserts and deletes on a branch, as one atomic batch.
    pub fn branch_write(&self, branch: BranchId, table: &str, ops: Vec<WriteOp>) -> Result<WriteReport> {
        self.write().write(branch, table, ops, WriteMode::Upsert)
    }

    pub fn fork(&self, parent: BranchId) -> Result<BranchId> {
        self.write().fork(parent)
    }

    pub fn rollback(&self, branch: BranchId) -> Result<()> {
        self.write().rollback(branch)
    }

    pub fn merge(&self, source: BranchId, target: BranchId) -> Result<MergeReport> {
        self.write().merge(source, target)
    }

    /// Free segments released by rollbacks and merges.
    pub fn reclaim(&self) -> usize {
        let queue = self.write().take_reclaim_queue();
        let n = queue.len();
        drop(queue);
        n
    }

    pub fn branch_info(&self, branch: BranchId) -> Result<BranchInfo> {
        self.read().info(branch)
    }

    pub fn branches(&self) -> Vec<BranchInfo> {
        let s = self.read();
        s.branch_ids().into_iter().filter_map(|b| s.info(b).ok()).collect()
    }

    pub fn write_set(&self, branch: BranchId) -> Result<Vec<(String, Value)>> {
        self.read().write_set(branch)
    }

    pub fn space_stats(&self) -> SpaceStats {
        self.read().space_stats()
    }

    pub fn table_snapshot(&self, branch: BranchId, table: &str) -> Result<TableSnapshot> {
        self.read().snapshot(branch, table)
    }

    /// Current version of one table on a branch.
    pub fn version(&self, branch: BranchId, table: &str) -> Result<u64> {
        Ok(self.read().table(branch, table)?.version)
    }

    /// A consistent view of every table on `branch`.
    pub fn snapshot(&self, branch: BranchId) -> Result<Snapshot> {
        let s = self.read();
        let b = s.active(branch)?;
        let tables = b
            .tables
            .iter()
            .map(|(name, t)| {
                (
                    name.clone(),
                    TableSnapshot {
                        schema: t.schema.clone(),
                        chunks: t.chunks.clone(),
                        version: t.version,
                        row_count: t.live_rows,
                    },
                )
            })
            .collect();
        Ok(Snapshot {
            branch,
            tables,
            catalog_version: b.catalog_version,
            stats_cache: self.stats.clone(),
            catalog_tables: OnceLock::new(),
            catalog_columns: OnceLock::new(),
        })
    }

    pub fn table_stats(&self, branch: BranchId, table: &str) -> Result<Arc<TableStats>> {
        self.snapshot(branch)?.stats(table).ok_or_else(|| Error::UnknownTable(table.to_string()))
    }

    /// Create `table` from a CSV file and load it. Returns the row count.
    pub fn load_csv(&self, path: impl AsRef<Path>, table: &str) -> Result<usize> {
        let f = std::fs::File::open(path)?;
        self.load_csv_reader(f, table)
    }

    pub fn load_csv_reader(&self, reader: impl Read, table: &str) -> Result<usize> {
        let (schema, rows) = read_csv(reader, table)?;
        let n = rows.len();
        self.create_table(schema)?;
        if n > 0 {
            self.insert_rows(table, rows)?;
        }
        Ok(n)
    }
}

fn is_null_cell(s: &str) -> bool {
    s.is_empty() || s == "NULL"
}

/// Parse a headed CSV, inferring each column as int64, else float64, else text.
pub fn read_csv(reader: impl Read, table: &str) -> Result<(Schema, Vec<Row>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_lowercase()).collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Error::InvalidSchema("CSV header row is required".into()));
    }
    let mut cells: Vec<Vec<String>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Arity { expected: header.len(), got: rec.len() });
        }
        cells.push(rec.iter().map(str::to_string).collect());
    }
    let types: Vec<DataType> = (0..header.len())
        .map(|i| {
            let vals = || cells.iter().map(|r| r[i].as_str()).filter(|s| !is_null_cell(s));
            if vals().all(|s| s.parse::<i64>().is_ok()) {
                DataType::Int64
            } else if vals().all(|s| s.parse::<f64>().is_ok()) {
                DataType::Float64
            } else {
                DataType::Text
            }
        })
        .collect();
    let schema = Schema::new(
        table,
        header.iter().zip(&types).map(|(h, t)| ColumnDef::new(h.clone(), *t)).collect(),
    );
    schema.validate()?;
    let rows = cells
        .into_iter()
        .map(|r| {
            r.into_iter()
                .zip(&types)
                .map(|(s, t)| {
                    if is_null_cell(&s) {
                        return Value::Null;
                    }
                    match t {
                        DataType::Int64 => Value::Int(s.parse().expect("inferred")),
                        DataType::Float64 => Value::Float(s.parse().expect("inferred")),
                        _ => Value::Text(s),
                    }
                })
                .collect()
        })
        .collect();
    Ok((schema, rows))
}

/// Immutable view of one branch at one instant. Cheap to take (reference
/// copies only) and safe to read from many threads.
pub struct Snapshot {
    pub branch: BranchId,
    pub tables: BTreeMap<String, TableSnapshot>,
    pub catalog_version: u64,
    stats_cache: Arc<StatsCache>,
    catalog_tables: OnceLock<Vec<Row>>,
    catalog_columns: OnceLock<Vec<Row>>,
}

impl std::fmt::Debug for Snapshot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Snapshot")
            .field("branch", &self.branch)
            .field("tables", &self.tables.keys().collect::<Vec<_>>())
            .field("catalog_version", &self.catalog_version)
            .finish()
    }
}

impl Snapshot {
    pub fn table(&self, name: &str) -> Result<&TableSnapshot> {
        self.tables.get(name).ok_or_else(|| Error::UnknownTable(name.to_string()))
    }

    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    pub fn schema(&self, name: &str) -> Option<Arc<Schema>> {
        match name {
            catalog::CATALOG_TABLES => Some(Arc::new(catalog::catalog_tables_schema())),
            catalog::CATALOG_COLUMNS => Some(Arc::new(catalog::catalog_columns_schema())),
            _ => self.tables.get(name).map(|t| t.schema.clone()),
        }
    }

    /// Version of a table, a catalog virtual table, or [`CATALOG_VERSION_KEY`].
    /// Virtual tables report the catalog version plus the sum of all table
    /// versions, which moves whenever any row they describe could change.
    pub fn version_of(&self, name: &str) -> Option<u64> {
        if name == CATALOG_VERSION_KEY {
            return Some(self.catalog_version);
        }
        if catalog::is_catalog_table(name) {
            return Some(self.catalog_version + self.tables.values().map(|t| t.version).sum::<u64>());
        }
        self.tables.get(name).map(|t| t.version)
    }

    pub fn versions(&self) -> BTreeMap<String, u64> {
        self.tables.iter().map(|(k, t)| (k.clone(), t.version)).collect()
    }

    pub fn row_count(&self, name: &str) -> Result<usize> {
        if catalog::is_catalog_table(name) {
            return Ok(self.virtual_rows(name).len());
        }
        Ok(self.table(name)?.row_count)
    }

    /// Iterate the live rows of a table or catalog virtual table.
    pub fn scan(&self, name: &str) -> Result<Box<dyn Iterator<Item = &Row> + '_>> {
        if catalog::is_catalog_table(name) {
            return Ok(Box::new(self.virtual_rows(name).iter()));
        }
        Ok(Box::new(self.table(name)?.rows()))
    }

    fn virtual_rows(&self, name: &str) -> &Vec<Row> {
        if name == catalog::CATALOG_TABLES {
            self.catalog_tables.get_or_init(|| {
                self.tables
                    .iter()
                    .map(|(n, t)| vec![Value::from(n.as_str()), Value::Int(t.row_count as i64), Value::Int(t.version as i64)])
                    .collect()
            })
        } else {
            self.catalog_columns.get_or_init(|| {
                let mut rows = Vec::new();
                for name in self.tables.keys() {
                    let st = self.stats(name).expect("table present");
                    for c in &st.columns {
                        let text = |v: &Option<Value>| v.as_ref().map(|v| Value::Text(v.to_string())).unwrap_or(Value::Null);
                        rows.push(vec![
                            Value::from(name.as_str()),
                            Value::from(c.column.as_str()),
                            Value::from(c.ty.name()),
                            Value::Int(c.n_distinct as i64),
                            Value::Int(c.n_null as i64),
                            text(&c.min),
                            text(&c.max),
                        ]);
                    }
                }
                rows
            })
        }
    }

    /// Statistics for a table at this snapshot's version, memoized per
    /// (branch, table, version).
    pub fn stats(&self, name: &str) -> Option<Arc<TableStats>> {
        if catalog::is_catalog_table(name) {
            let schema = self.schema(name)?;
            let rows = self.virtual_rows(name);
            let version = self.version_of(name)?;
            return Some(Arc::new(TableStats::compute(&schema, version, rows.iter().map(|r| r.as_slice()))));
        }
        let t = self.tables.get(name)?;
        let key = (self.branch, name.to_string(), t.version);
        if let Some(s) = self.stats_cache.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Some(s.clone());
        }
        let st = Arc::new(TableStats::compute(&t.schema, t.version, t.rows().map(|r| r.as_slice())));
        self.stats_cache.lock().unwrap_or_else(|e| e.into_inner()).insert(key, st.clone());
        Some(st)
    }
}

impl SchemaProvider for Snapshot {
    fn table_schema(&self, name: &str) -> Option<Arc<Schema>> {
        self.schema(name)
    }
}

impl StatsProvider for Snapshot {
    fn stats(&self, table: &str) -> Option<Arc<TableStats>> {
        Snapshot::stats(self, table)
    }
}
