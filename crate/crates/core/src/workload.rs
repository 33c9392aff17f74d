//! Synthetic datasets, task templates with mutated variants, and the
//! scripted agents that drive a [`Kernel`] through them.
//!
//! Files written by [`Dataset::write_dir`] and [`write_tasks`]:
//!
//! - `<table>.csv` for each of the six tables, with a header row;
//! - `dataset.json`: seed, scale and each table's schema and row count;
//! - `tasks.json`: every [`TaskSpec`], including its variants and manifest;
//! - `parallel_50.ndjson`: one `parallel_50` probe document per task.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::branch::BranchId;
use crate::catalog::{ColumnDef, Schema};
use crate::classify::{AggregateShape, TaskManifest};
use crate::config::Features;
use crate::db::{Database, Snapshot};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::feedback::{FeedbackKind, RelatedTablePayload};
use crate::kernel::Kernel;
use crate::memory::{FactKind, MemoryFact, MemoryQuery, ScopeRef};
use crate::planner::{fingerprint, plan_sql, LogicalPlan};
use crate::protocol::{parse_probe, Brief, Phase, Probe, ProbeQuery, ProbeResponse};
use crate::trace::{OutcomeSummary, TraceRecord};
use crate::value::{DataType, Row, Value};

pub const VARIANTS: usize = 50;
/// Variants whose filter literal is swapped for another pool value.
pub const LITERAL_VARIANTS: usize = 7;
/// Variants that carry an extra, unused aggregate column.
pub const PROJECTION_VARIANTS: usize = 10;
/// Smallest share of variants whose core plan equals the template's.
pub const CORE_EQUAL_FLOOR: f64 = 0.8;
/// Principal used by the built-in agents.
pub const PRINCIPAL: &str = "analyst";

// ---------------------------------------------------------------------------
// datasets

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Small,
    Medium,
}

impl Scale {
    pub fn sales_rows(self) -> usize {
        match self {
            Scale::Small => 10_000,
            Scale::Medium => 100_000,
        }
    }

    fn customers(self) -> usize {
        self.sales_rows() / 5
    }

    fn side_rows(self) -> usize {
        self.sales_rows() / 2
    }
}

impl std::str::FromStr for Scale {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "small" => Ok(Scale::Small),
            "medium" => Ok(Scale::Medium),
            _ => Err(format!("unknown scale {s:?} (small, medium)")),
        }
    }
}

pub const STORES: usize = 50;
pub const PRODUCTS: usize = 200;

/// (state, region, cities)
const STATES: [(&str, &str, [&str; 2]); 10] = [
    ("California", "West", ["Los Angeles", "San Francisco"]),
    ("Texas", "South", ["Austin", "Houston"]),
    ("New York", "Northeast", ["Buffalo", "New York City"]),
    ("Florida", "South", ["Miami", "Tampa"]),
    ("Illinois", "Midwest", ["Chicago", "Springfield"]),
    ("Washington", "West", ["Seattle", "Spokane"]),
    ("Oregon", "West", ["Portland", "Eugene"]),
    ("Ohio", "Midwest", ["Columbus", "Cleveland"]),
    ("Georgia", "South", ["Atlanta", "Savannah"]),
    ("Arizona", "West", ["Phoenix", "Tucson"]),
];
const CATEGORIES: [&str; 6] = ["Electronics", "Grocery", "Apparel", "Home", "Toys", "Sports"];
const BRANDS: [&str; 8] = ["Acme", "Globex", "Initech", "Umbrella", "Stark", "Wayne", "Hooli", "Vandelay"];
const SEGMENTS: [&str; 3] = ["Consumer", "Small Business", "Enterprise"];
const SALE_CHANNELS: [&str; 3] = ["online", "in_store", "phone"];
const ORDER_STATUS: [&str; 5] = ["pending", "shipped", "delivered", "returned", "cancelled"];
const PRIORITIES: [&str; 3] = ["low", "medium", "high"];
const CONTACT_TYPES: [&str; 4] = ["email", "chat", "call", "visit"];

#[derive(Debug, Clone, PartialEq)]
pub struct TableData {
    pub schema: Schema,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub scale: Scale,
    pub tables: Vec<TableData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableManifest {
    pub name: String,
    pub file: String,
    pub rows: usize,
    pub primary_key: Option<String>,
    pub columns: Vec<ColumnDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub scale: Scale,
    pub tables: Vec<TableManifest>,
}

fn schema(name: &str, cols: &[(&str, DataType)]) -> Schema {
    Schema::new(name, cols.iter().map(|(c, t)| ColumnDef::new(*c, *t)).collect()).with_primary_key(cols[0].0)
}

/// The six table schemas, without rows.
pub fn schemas() -> Vec<Schema> {
    use DataType::{Float64 as F, Int64 as I, Text as T};
    vec![
        schema("stores", &[("store_id", I), ("store_name", T), ("city", T), ("state", T), ("region", T), ("sqft", I)]),
        schema(
            "products",
            &[("product_id", I), ("product_name", T), ("category", T), ("brand", T), ("list_price", F)],
        ),
        schema(
            "customers",
            &[("customer_id", I), ("customer_name", T), ("state", T), ("segment", T), ("signup_year", I)],
        ),
        schema(
            "sales",
            &[
                ("sale_id", I),
                ("store_id", I),
                ("product_id", I),
                ("customer_id", I),
                ("quantity", I),
                ("amount", F),
                ("sale_month", I),
                ("channel", T),
            ],
        ),
        schema(
            "orders",
            &[("order_id", I), ("customer_id", I), ("status", T), ("order_total", F), ("order_month", I), ("priority", T)],
        ),
        schema(
            "interactions",
            &[("interaction_id", I), ("customer_id", I), ("contact_type", T), ("duration_s", I), ("satisfaction", I)],
        ),
    ]
}

fn text(s: impl Into<String>) -> Value {
    Value::Text(s.into())
}

fn cents(c: i64) -> Value {
    Value::Float(c as f64 / 100.0)
}

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs[rng.gen_range(0..xs.len())]
}

pub fn gen_dataset(seed: u64, scale: Scale) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schemas = schemas();
    let by_name = |n: &str| schemas.iter().find(|s| s.table_name == n).expect("known table").clone();

    let stores: Vec<Row> = (1..=STORES as i64)
        .map(|id| {
            let (state, region, cities) = STATES[rng.gen_range(0..STATES.len())];
            vec![
                Value::Int(id),
                text(format!("Store {id:03}")),
                text(cities[rng.gen_range(0..2)]),
                text(state),
                text(region),
                Value::Int(rng.gen_range(5_000..=50_000)),
            ]
        })
        .collect();

    let mut prices = Vec::with_capacity(PRODUCTS);
    let products: Vec<Row> = (1..=PRODUCTS as i64)
        .map(|id| {
            let category = pick(&mut rng, &CATEGORIES);
            let brand = pick(&mut rng, &BRANDS);
            let price = rng.gen_range(199..=49_999i64);
            prices.push(price);
            vec![Value::Int(id), text(format!("{brand} {category} {id}")), text(category), text(brand), cents(price)]
        })
        .collect();

    let n_customers = scale.customers() as i64;
    let customers: Vec<Row> = (1..=n_customers)
        .map(|id| {
            vec![
                Value::Int(id),
                text(format!("Customer {id:06}")),
                text(STATES[rng.gen_range(0..STATES.len())].0),
                text(pick(&mut rng, &SEGMENTS)),
                Value::Int(rng.gen_range(2015..=2024)),
            ]
        })
        .collect();

    let sales: Vec<Row> = (1..=scale.sales_rows() as i64)
        .map(|id| {
            let product = rng.gen_range(1..=PRODUCTS as i64);
            let quantity = rng.gen_range(1..=8i64);
            let discount = rng.gen_range(80..=100i64);
            let amount = prices[(product - 1) as usize] * quantity * discount / 100;
            vec![
                Value::Int(id),
                Value::Int(rng.gen_range(1..=STORES as i64)),
                Value::Int(product),
                Value::Int(rng.gen_range(1..=n_customers)),
                Value::Int(quantity),
                cents(amount),
                Value::Int(rng.gen_range(1..=12)),
                text(pick(&mut rng, &SALE_CHANNELS)),
            ]
        })
        .collect();

    let orders: Vec<Row> = (1..=scale.side_rows() as i64)
        .map(|id| {
            vec![
                Value::Int(id),
                Value::Int(rng.gen_range(1..=n_customers)),
                text(pick(&mut rng, &ORDER_STATUS)),
                cents(rng.gen_range(500..=200_000)),
                Value::Int(rng.gen_range(1..=12)),
                text(pick(&mut rng, &PRIORITIES)),
            ]
        })
        .collect();

    let interactions: Vec<Row> = (1..=scale.side_rows() as i64)
        .map(|id| {
            vec![
                Value::Int(id),
                Value::Int(rng.gen_range(1..=n_customers)),
                text(pick(&mut rng, &CONTACT_TYPES)),
                Value::Int(rng.gen_range(30..=3600)),
                Value::Int(rng.gen_range(1..=5)),
            ]
        })
        .collect();

    let tables = [
        ("stores", stores),
        ("products", products),
        ("customers", customers),
        ("sales", sales),
        ("orders", orders),
        ("interactions", interactions),
    ]
    .into_iter()
    .map(|(n, rows)| TableData { schema: by_name(n), rows })
    .collect();
    Dataset { seed, scale, tables }
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::Float(f) => format!("{f:.2}"),
        Value::Int(i) => i.to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Text(s) => s.clone(),
    }
}

fn parse_cell(s: &str, ty: DataType, table: &str, col: &str) -> Result<Value> {
    if s.is_empty() {
        return Ok(Value::Null);
    }
    let bad = || Error::Type(format!("{table}.{col}: cannot read {s:?} as {}", ty.name()));
    Ok(match ty {
        DataType::Int64 => Value::Int(s.parse().map_err(|_| bad())?),
        DataType::Float64 => Value::Float(s.parse().map_err(|_| bad())?),
        DataType::Bool => Value::Bool(s.parse().map_err(|_| bad())?),
        DataType::Text => Value::Text(s.to_string()),
    })
}

impl Dataset {
    pub fn table(&self, name: &str) -> Option<&TableData> {
        self.tables.iter().find(|t| t.schema.table_name == name)
    }

    pub fn to_csv(&self, table: &str) -> Result<Vec<u8>> {
        let t = self.table(table).ok_or_else(|| Error::UnknownTable(table.to_string()))?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(t.schema.columns.iter().map(|c| c.name.as_str()))?;
        for r in &t.rows {
            w.write_record(r.iter().map(csv_cell))?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            seed: self.seed,
            scale: self.scale,
            tables: self
                .tables
                .iter()
                .map(|t| TableManifest {
                    name: t.schema.table_name.clone(),
                    file: format!("{}.csv", t.schema.table_name),
                    rows: t.rows.len(),
                    primary_key: t.schema.primary_key.clone(),
                    columns: t.schema.columns.clone(),
                })
                .collect(),
        }
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for t in &self.tables {
            fs::write(dir.join(format!("{}.csv", t.schema.table_name)), self.to_csv(&t.schema.table_name)?)?;
        }
        fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&self.manifest())?)?;
        Ok(())
    }

    pub fn load_into(&self, db: &Database) -> Result<()> {
        for t in &self.tables {
            db.create_table(t.schema.clone())?;
            db.insert_rows(&t.schema.table_name, t.rows.clone())?;
        }
        Ok(())
    }

    pub fn database(&self) -> Result<Arc<Database>> {
        let db = Database::new();
        self.load_into(&db)?;
        Ok(Arc::new(db))
    }
}

/// Load a directory written by [`Dataset::write_dir`], using the typed
/// schemas from `dataset.json`. Without a manifest, every `*.csv` file is
/// loaded with inferred types and no primary key.
pub fn load_dataset_dir(dir: &Path, db: &Database) -> Result<Vec<String>> {
    let manifest_path = dir.join("dataset.json");
    if !manifest_path.exists() {
        let mut names = Vec::new();
        let mut files: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        for f in files {
            let name = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_lowercase();
            db.load_csv(&f, &name)?;
            names.push(name);
        }
        return Ok(names);
    }
    let m: DatasetManifest = serde_json::from_slice(&fs::read(&manifest_path)?)
        .map_err(|e| Error::Config(format!("{}: {e}", manifest_path.display())))?;
    let mut names = Vec::new();
    for t in &m.tables {
        let mut s = Schema::new(&t.name, t.columns.clone());
        s.primary_key = t.primary_key.clone();
        let mut rdr = csv::Reader::from_path(dir.join(&t.file))?;
        let mut rows = Vec::with_capacity(t.rows);
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != s.columns.len() {
                return Err(Error::Arity { expected: s.columns.len(), got: rec.len() });
            }
            let row = rec
                .iter()
                .zip(&s.columns)
                .map(|(cell, c)| parse_cell(cell, c.ty, &t.name, &c.name))
                .collect::<Result<Row>>()?;
            rows.push(row);
        }
        db.create_table(s)?;
        db.insert_rows(&t.name, rows)?;
        names.push(t.name.clone());
    }
    Ok(names)
}

// ---------------------------------------------------------------------------
// tasks

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColRef {
    pub table: String,
    pub column: String,
}

impl ColRef {
    fn new(table: &str, column: &str) -> Self {
        ColRef { table: table.into(), column: column.into() }
    }
}

/// Equality join on a column of the same name in both tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinEdge {
    pub left: String,
    pub right: String,
    pub column: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub col: ColRef,
    /// `=`, `<`, `<=`, `>` or `>=`.
    pub op: String,
    pub literal: Value,
    /// Alternatives used by literal-change variants.
    pub pool: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggSpec {
    pub func: String,
    /// `None` for `COUNT(*)`.
    pub col: Option<ColRef>,
}

/// One step of the scripted agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum Step {
    /// List the tables.
    Catalog,
    /// Look at a few rows of a table.
    Peek { table: String },
    /// Look up the columns of the table a join edge leads to.
    JoinLookup { edge: usize },
    /// Distinct values (text) or range (numbers) of a filter column.
    FilterValues { filter: usize },
    /// Range and mean of the aggregated column.
    AggregateStats,
    /// The joins and filters without aggregation.
    Partial,
    /// The whole query.
    Full,
}

impl Step {
    pub fn phase(&self) -> Phase {
        match self {
            Step::Catalog | Step::Peek { .. } | Step::JoinLookup { .. } => Phase::MetadataExploration,
            Step::FilterValues { .. } | Step::AggregateStats => Phase::ColumnStatistics,
            Step::Partial => Phase::PartialSolution,
            Step::Full => Phase::FullSolution,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub description: String,
    /// In template FROM order.
    pub tables: Vec<String>,
    /// `joins[i]` attaches `tables[i + 1]`.
    pub joins: Vec<JoinEdge>,
    pub filters: Vec<FilterSpec>,
    pub group_by: Vec<ColRef>,
    pub aggregate: AggSpec,
    /// Aggregates available to projection variants.
    pub extras: Vec<String>,
    pub template: String,
    pub variants: Vec<String>,
    pub script: Vec<Step>,
    pub manifest: TaskManifest,
}

/// Template alias per table.
fn base_alias(table: &str) -> &'static str {
    match table {
        "sales" => "s",
        "stores" => "st",
        "products" => "p",
        "customers" => "c",
        "orders" => "o",
        "interactions" => "i",
        _ => "t",
    }
}

#[derive(Debug, Clone)]
struct Render {
    /// Alias per table; `None` writes the bare table name.
    aliases: BTreeMap<String, Option<String>>,
    swap_first_join: bool,
    flip_join_keys: bool,
    filter_order: Vec<usize>,
    flip_filters: Vec<bool>,
    literals: Vec<Value>,
    out_alias: &'static str,
    extra: Option<String>,
    lowercase: bool,
}

impl Render {
    fn template(t: &TaskSpec) -> Render {
        Render {
            aliases: t.tables.iter().map(|n| (n.clone(), Some(base_alias(n).to_string()))).collect(),
            swap_first_join: false,
            flip_join_keys: false,
            filter_order: (0..t.filters.len()).collect(),
            flip_filters: vec![false; t.filters.len()],
            literals: t.filters.iter().map(|f| f.literal.clone()).collect(),
            out_alias: "result",
            extra: None,
            lowercase: false,
        }
    }

    fn name_of(&self, table: &str) -> String {
        match &self.aliases[table] {
            Some(a) => a.clone(),
            None => table.to_string(),
        }
    }

    fn col(&self, c: &ColRef) -> String {
        format!("{}.{}", self.name_of(&c.table), c.column)
    }

    fn table_ref(&self, table: &str) -> String {
        match &self.aliases[table] {
            Some(a) => format!("{table} {a}"),
            None => table.to_string(),
        }
    }

    fn kw(&self, k: &str) -> String {
        if self.lowercase {
            k.to_lowercase()
        } else {
            k.to_string()
        }
    }

    fn from_clause(&self, t: &TaskSpec) -> String {
        let mut order: Vec<&str> = t.tables.iter().map(String::as_str).collect();
        if self.swap_first_join && order.len() > 1 {
            order.swap(0, 1);
        }
        let mut out = format!("{} {}", self.kw("FROM"), self.table_ref(order[0]));
        for (i, table) in order.iter().enumerate().skip(1) {
            // The edge joining tables[0] and tables[1] stays first either way.
            let e = &t.joins[i - 1];
            let (l, r) = (ColRef::new(&e.left, &e.column), ColRef::new(&e.right, &e.column));
            let (a, b) = if self.flip_join_keys { (r, l) } else { (l, r) };
            out.push_str(&format!(
                " {} {} {} {} = {}",
                self.kw("JOIN"),
                self.table_ref(table),
                self.kw("ON"),
                self.col(&a),
                self.col(&b)
            ));
        }
        out
    }

    fn where_clause(&self, t: &TaskSpec) -> String {
        if t.filters.is_empty() {
            return String::new();
        }
        let parts: Vec<String> = self
            .filter_order
            .iter()
            .map(|&i| {
                let f = &t.filters[i];
                let lit = self.literals[i].to_sql_literal();
                if self.flip_filters[i] {
                    format!("{lit} {} {}", flip_op(&f.op), self.col(&f.col))
                } else {
                    format!("{} {} {lit}", self.col(&f.col), f.op)
                }
            })
            .collect();
        format!(" {} {}", self.kw("WHERE"), parts.join(&format!(" {} ", self.kw("AND"))))
    }

    fn full(&self, t: &TaskSpec) -> String {
        let groups: Vec<String> = t.group_by.iter().map(|g| self.col(g)).collect();
        let agg = match &t.aggregate.col {
            Some(c) => format!("{}({})", t.aggregate.func.to_uppercase(), self.col(c)),
            None => "COUNT(*)".to_string(),
        };
        let mut items = groups.clone();
        items.push(format!("{agg} {} {}", self.kw("AS"), self.out_alias));
        if let Some(x) = &self.extra {
            items.push(x.replace("{}", &self.name_of(&t.tables[0])));
        }
        format!(
            "{} {} {}{} {} {}",
            self.kw("SELECT"),
            items.join(", "),
            self.from_clause(t),
            self.where_clause(t),
            self.kw("GROUP BY"),
            groups.join(", ")
        )
    }

    fn partial(&self, t: &TaskSpec) -> String {
        let mut items: Vec<String> = t.group_by.iter().map(|g| self.col(g)).collect();
        if let Some(c) = &t.aggregate.col {
            items.push(self.col(c));
        }
        format!("SELECT {} {}{} LIMIT 100", items.join(", "), self.from_clause(t), self.where_clause(t))
    }
}

fn flip_op(op: &str) -> &'static str {
    match op {
        "<" => ">",
        "<=" => ">=",
        ">" => "<",
        ">=" => "<=",
        _ => "=",
    }
}

struct TaskDef {
    description: &'static str,
    tables: &'static [&'static str],
    filters: Vec<(&'static str, &'static str, &'static str, Value, Vec<Value>)>,
    group_by: &'static [(&'static str, &'static str)],
    agg: (&'static str, Option<(&'static str, &'static str)>),
    /// A numeric column of the first table, for extra projections.
    extra_col: &'static str,
}

fn t(s: &str) -> Value {
    text(s)
}

fn ts(xs: &[&str]) -> Vec<Value> {
    xs.iter().map(|s| text(*s)).collect()
}

fn is(xs: &[i64]) -> Vec<Value> {
    xs.iter().map(|&i| Value::Int(i)).collect()
}

fn task_defs() -> Vec<TaskDef> {
    let d = |description, tables, filters, group_by, agg, extra_col| TaskDef {
        description,
        tables,
        filters,
        group_by,
        agg,
        extra_col,
    };
    vec![
        d(
            "June revenue by store region",
            &["sales", "stores"],
            vec![("sales", "sale_month", "=", Value::Int(6), is(&[3, 9, 12]))],
            &[("stores", "region")],
            ("sum", Some(("sales", "amount"))),
            "quantity",
        ),
        d(
            "revenue by city for California stores",
            &["sales", "stores"],
            vec![("stores", "state", "=", t("California"), ts(&["Texas", "Oregon", "Ohio"]))],
            &[("stores", "city")],
            ("sum", Some(("sales", "amount"))),
            "quantity",
        ),
        d(
            "average online basket size by category",
            &["sales", "products"],
            vec![("sales", "channel", "=", t("online"), ts(&["in_store", "phone"]))],
            &[("products", "category")],
            ("avg", Some(("sales", "quantity"))),
            "amount",
        ),
        d(
            "second-half electronics sales count by brand",
            &["sales", "products"],
            vec![
                ("products", "category", "=", t("Electronics"), ts(&["Toys", "Home"])),
                ("sales", "sale_month", ">=", Value::Int(7), is(&[4, 10])),
            ],
            &[("products", "brand")],
            ("count", None),
            "amount",
        ),
        d(
            "revenue from Texas customers by segment",
            &["sales", "customers"],
            vec![("customers", "state", "=", t("Texas"), ts(&["California", "Florida", "Ohio"]))],
            &[("customers", "segment")],
            ("sum", Some(("sales", "amount"))),
            "quantity",
        ),
        d(
            "average shipped order total by segment",
            &["orders", "customers"],
            vec![("orders", "status", "=", t("shipped"), ts(&["delivered", "pending", "returned"]))],
            &[("customers", "segment")],
            ("avg", Some(("orders", "order_total"))),
            "order_month",
        ),
        d(
            "order count by priority for New York customers",
            &["orders", "customers"],
            vec![("customers", "state", "=", t("New York"), ts(&["Georgia", "Arizona"]))],
            &[("orders", "priority")],
            ("count", None),
            "order_total",
        ),
        d(
            "chat satisfaction by segment",
            &["interactions", "customers"],
            vec![("interactions", "contact_type", "=", t("chat"), ts(&["email", "call"]))],
            &[("customers", "segment")],
            ("avg", Some(("interactions", "satisfaction"))),
            "duration_s",
        ),
        d(
            "contact time by channel for Florida customers",
            &["interactions", "customers"],
            vec![("customers", "state", "=", t("Florida"), ts(&["Texas", "Illinois"]))],
            &[("interactions", "contact_type")],
            ("sum", Some(("interactions", "duration_s"))),
            "satisfaction",
        ),
        d(
            "premium product revenue by region and category",
            &["sales", "stores", "products"],
            vec![("products", "list_price", ">", Value::Int(50), is(&[100, 250]))],
            &[("stores", "region"), ("products", "category")],
            ("sum", Some(("sales", "amount"))),
            "quantity",
        ),
        d(
            "average sale by segment, California stores and customers",
            &["sales", "stores", "customers"],
            vec![
                ("stores", "state", "=", t("California"), ts(&["Washington", "Oregon"])),
                ("customers", "state", "=", t("California"), ts(&["Washington", "Oregon"])),
            ],
            &[("customers", "segment")],
            ("avg", Some(("sales", "amount"))),
            "quantity",
        ),
        d(
            "sales to recent customers by category",
            &["sales", "customers", "products"],
            vec![("customers", "signup_year", ">=", Value::Int(2020), is(&[2018, 2022]))],
            &[("products", "category")],
            ("count", None),
            "amount",
        ),
        d(
            "largest first-quarter order by state",
            &["orders", "customers"],
            vec![("orders", "order_month", "<=", Value::Int(3), is(&[6, 9]))],
            &[("customers", "state")],
            ("max", Some(("orders", "order_total"))),
            "order_month",
        ),
        d(
            "smallest sale by channel in the West",
            &["sales", "stores"],
            vec![("stores", "region", "=", t("West"), ts(&["South", "Midwest"]))],
            &[("sales", "channel")],
            ("min", Some(("sales", "amount"))),
            "quantity",
        ),
        d(
            "units by brand in Illinois stores",
            &["sales", "stores", "products"],
            vec![("stores", "state", "=", t("Illinois"), ts(&["Ohio", "Georgia"]))],
            &[("products", "brand")],
            ("sum", Some(("sales", "quantity"))),
            "amount",
        ),
        d(
            "unhappy contact duration by state",
            &["interactions", "customers"],
            vec![("interactions", "satisfaction", "<=", Value::Int(2), is(&[1, 3]))],
            &[("customers", "state")],
            ("avg", Some(("interactions", "duration_s"))),
            "satisfaction",
        ),
        d(
            "enterprise orders by status",
            &["orders", "customers"],
            vec![("customers", "segment", "=", t("Enterprise"), ts(&["Consumer", "Small Business"]))],
            &[("orders", "status")],
            ("count", None),
            "order_total",
        ),
        d(
            "delivered order value by signup year, Washington",
            &["orders", "customers"],
            vec![
                ("customers", "state", "=", t("Washington"), ts(&["Arizona"])),
                ("orders", "status", "=", t("delivered"), ts(&["shipped"])),
            ],
            &[("customers", "signup_year")],
            ("sum", Some(("orders", "order_total"))),
            "order_month",
        ),
        d(
            "average in-store multi-unit sale by state",
            &["sales", "stores"],
            vec![
                ("sales", "channel", "=", t("in_store"), ts(&["online"])),
                ("sales", "quantity", ">=", Value::Int(3), is(&[2, 5])),
            ],
            &[("stores", "state")],
            ("avg", Some(("sales", "amount"))),
            "amount",
        ),
        d(
            "consumer revenue by category",
            &["sales", "customers", "products"],
            vec![("customers", "segment", "=", t("Consumer"), ts(&["Enterprise"]))],
            &[("products", "category")],
            ("sum", Some(("sales", "amount"))),
            "quantity",
        ),
    ]
}

/// Join key between two dataset tables.
fn join_column(a: &str, b: &str) -> Option<&'static str> {
    let key = |x: &str| match x {
        "stores" => Some("store_id"),
        "products" => Some("product_id"),
        "customers" => Some("customer_id"),
        _ => None,
    };
    key(b).or_else(|| key(a))
}

fn script_for(t: &TaskSpec) -> Vec<Step> {
    let mut s = vec![Step::Catalog];
    s.extend(t.tables.iter().map(|table| Step::Peek { table: table.clone() }));
    s.extend((0..t.joins.len()).map(|edge| Step::JoinLookup { edge }));
    s.extend((0..t.filters.len()).map(|filter| Step::FilterValues { filter }));
    if t.aggregate.col.is_some() {
        s.push(Step::AggregateStats);
    }
    s.push(Step::Partial);
    s.push(Step::Full);
    s
}

fn build_task(task_id: String, def: &TaskDef) -> TaskSpec {
    let tables: Vec<String> = def.tables.iter().map(|s| s.to_string()).collect();
    let joins = tables[1..]
        .iter()
        .map(|right| {
            // Attach to the fact table, which is always first.
            let left = tables[0].clone();
            let column = join_column(&left, right).expect("dataset tables join on a key").to_string();
            JoinEdge { left, right: right.clone(), column }
        })
        .collect();
    let filters = def
        .filters
        .iter()
        .map(|(tb, c, op, lit, pool)| FilterSpec {
            col: ColRef::new(tb, c),
            op: op.to_string(),
            literal: lit.clone(),
            pool: pool.clone(),
        })
        .collect();
    let aggregate = AggSpec { func: def.agg.0.to_string(), col: def.agg.1.map(|(tb, c)| ColRef::new(tb, c)) };
    let extras = vec!["COUNT(*) AS n_rows".to_string(), format!("MAX({{}}.{}) AS peak", def.extra_col)];
    let group_by: Vec<ColRef> = def.group_by.iter().map(|(tb, c)| ColRef::new(tb, c)).collect();
    let manifest = TaskManifest {
        task_id: task_id.clone(),
        tables: tables.clone(),
        aggregate: AggregateShape {
            func: aggregate.func.clone(),
            column: aggregate.col.as_ref().map(|c| c.column.clone()),
            group_by: group_by.iter().map(|g| g.column.clone()).collect(),
        },
        description: def.description.to_string(),
    };
    let mut spec = TaskSpec {
        task_id,
        description: def.description.to_string(),
        tables,
        joins,
        filters,
        group_by,
        aggregate,
        extras,
        template: String::new(),
        variants: Vec::new(),
        script: Vec::new(),
        manifest,
    };
    spec.template = Render::template(&spec).full(&spec);
    spec.script = script_for(&spec);
    spec
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mutation {
    Syntactic,
    Literal,
    Projection,
}

fn variant<R: Rng>(t: &TaskSpec, m: Mutation, rng: &mut R) -> String {
    let mut r = Render::template(t);
    for (i, table) in t.tables.iter().enumerate() {
        let alias = match rng.gen_range(0..4) {
            0 => Some(base_alias(table).to_string()),
            1 => None,
            2 => Some(format!("{}{}", &table[..1], i + 1)),
            _ => Some(format!("t{i}")),
        };
        r.aliases.insert(table.clone(), alias);
    }
    r.swap_first_join = rng.gen_bool(0.5);
    r.flip_join_keys = rng.gen_bool(0.5);
    r.filter_order.shuffle(rng);
    r.flip_filters = t.filters.iter().map(|_| rng.gen_bool(0.3)).collect();
    r.out_alias = ["result", "total", "value", "metric"][rng.gen_range(0..4)];
    r.lowercase = rng.gen_bool(0.2);
    match m {
        Mutation::Syntactic => {}
        Mutation::Literal => {
            let i = rng.gen_range(0..t.filters.len());
            let pool = &t.filters[i].pool;
            r.literals[i] = pool[rng.gen_range(0..pool.len())].clone();
        }
        Mutation::Projection => {
            r.extra = Some(t.extras[rng.gen_range(0..t.extras.len())].clone());
        }
    }
    r.full(t)
}

/// `n` tasks with `variants` variants each. Tasks beyond the twenty
/// templates reuse them in order with fresh variants.
pub fn gen_tasks(n: usize, variants: usize, seed: u64) -> Result<Vec<TaskSpec>> {
    let defs = task_defs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a5c_0de5);
    let db = schema_database()?;
    let snap = db.snapshot(BranchId::MAINLINE)?;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut spec = build_task(format!("t{:02}", k + 1), &defs[k % defs.len()]);
        let lit = LITERAL_VARIANTS * variants / VARIANTS;
        let proj = PROJECTION_VARIANTS * variants / VARIANTS;
        let mut kinds: Vec<Mutation> = (0..variants)
            .map(|i| match i {
                i if i < lit => Mutation::Literal,
                i if i < lit + proj => Mutation::Projection,
                _ => Mutation::Syntactic,
            })
            .collect();
        kinds.shuffle(&mut rng);
        spec.variants = kinds.into_iter().map(|m| variant(&spec, m, &mut rng)).collect();
        let share = core_equal_share(&spec, &snap)?;
        if share < CORE_EQUAL_FLOOR {
            return Err(Error::Eval(format!(
                "task {}: only {:.0}% of variants share the template core",
                spec.task_id,
                share * 100.0
            )));
        }
        out.push(spec);
    }
    Ok(out)
}

/// An empty database holding the six schemas, for planning only.
pub fn schema_database() -> Result<Database> {
    let db = Database::new();
    for s in schemas() {
        db.create_table(s)?;
    }
    Ok(db)
}

/// The plan below its top projection, aggregation, sort and limit nodes.
pub fn core_plan(plan: &LogicalPlan) -> &LogicalPlan {
    match plan {
        LogicalPlan::Project { input, .. }
        | LogicalPlan::Aggregate { input, .. }
        | LogicalPlan::Sort { input, .. }
        | LogicalPlan::Limit { input, .. }
        | LogicalPlan::Distinct { input } => core_plan(input),
        other => other,
    }
}

/// Share of variants that plan and whose core fingerprint equals the
/// template's. A variant that fails to plan is an error.
pub fn core_equal_share(t: &TaskSpec, snap: &Snapshot) -> Result<f64> {
    let template = plan_sql(&t.template, snap)?;
    let want = fingerprint(core_plan(&template));
    let mut equal = 0usize;
    for v in &t.variants {
        let p = plan_sql(v, snap).map_err(|e| Error::Eval(format!("task {} variant {v:?}: {e}", t.task_id)))?;
        equal += usize::from(fingerprint(core_plan(&p)) == want);
    }
    Ok(if t.variants.is_empty() { 1.0 } else { equal as f64 / t.variants.len() as f64 })
}

pub fn write_tasks(dir: &Path, tasks: &[TaskSpec]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("tasks.json"), serde_json::to_string_pretty(tasks)?)?;
    let mut nd = String::new();
    for t in tasks {
        nd.push_str(&parallel_probe(t).to_json());
        nd.push('\n');
    }
    fs::write(dir.join("parallel_50.ndjson"), nd)?;
    Ok(())
}

pub fn read_tasks(path: &Path) -> Result<Vec<TaskSpec>> {
    serde_json::from_slice(&fs::read(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// probe workloads

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadMode {
    Parallel50,
    SequentialScripted,
    SequentialWithHints,
}

impl WorkloadMode {
    pub fn name(self) -> &'static str {
        match self {
            WorkloadMode::Parallel50 => "parallel_50",
            WorkloadMode::SequentialScripted => "sequential_scripted",
            WorkloadMode::SequentialWithHints => "sequential_with_hints",
        }
    }

    /// Agent id suffix.
    fn agent_suffix(self) -> &'static str {
        match self {
            WorkloadMode::Parallel50 => "parallel",
            WorkloadMode::SequentialScripted => "scripted",
            WorkloadMode::SequentialWithHints => "hints",
        }
    }

    /// Features the kernel runs with for this mode.
    pub fn features(self) -> Features {
        match self {
            WorkloadMode::SequentialScripted => Features { memory: false, feedback: false, sharing: true },
            _ => Features::default(),
        }
    }
}

impl std::str::FromStr for WorkloadMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "parallel_50" | "parallel" => Ok(WorkloadMode::Parallel50),
            "sequential_scripted" | "scripted" => Ok(WorkloadMode::SequentialScripted),
            "sequential_with_hints" | "hints" => Ok(WorkloadMode::SequentialWithHints),
            _ => Err(format!("unknown workload mode {s:?} (parallel_50, sequential_scripted, sequential_with_hints)")),
        }
    }
}

pub fn agent_id(t: &TaskSpec, mode: WorkloadMode) -> String {
    format!("{}/{}", t.task_id, mode.agent_suffix())
}

/// All variants as one batch.
pub fn parallel_probe(t: &TaskSpec) -> Probe {
    let queries = t.variants.iter().enumerate().map(|(i, sql)| ProbeQuery::new(format!("q{:02}", i + 1), sql)).collect();
    Probe::sql_batch(
        format!("{}-parallel", t.task_id),
        agent_id(t, WorkloadMode::Parallel50),
        PRINCIPAL,
        0,
        queries,
        Brief::new(Phase::FullSolution),
    )
}

fn filter_values_sql(f: &FilterSpec, ty: DataType) -> String {
    let (tb, c) = (&f.col.table, &f.col.column);
    if ty == DataType::Text {
        format!("SELECT DISTINCT {c} FROM {tb}")
    } else {
        format!("SELECT MIN({c}), MAX({c}) FROM {tb}")
    }
}

fn aggregate_stats_sql(c: &ColRef) -> String {
    format!("SELECT MIN({0}), MAX({0}), AVG({0}) FROM {1}", c.column, c.table)
}

fn column_type(snap: &Snapshot, c: &ColRef) -> DataType {
    snap.schema(&c.table)
        .and_then(|s| s.columns.iter().find(|x| x.name == c.column).map(|x| x.ty))
        .unwrap_or(DataType::Text)
}

/// The SQL a scripted step issues.
pub fn step_sql(t: &TaskSpec, step: &Step, snap: &Snapshot) -> String {
    match step {
        Step::Catalog => "SELECT name, n_rows FROM catalog_tables".into(),
        Step::Peek { table } => format!("SELECT * FROM {table} LIMIT 5"),
        Step::JoinLookup { edge } => {
            format!("SELECT column_name, type FROM catalog_columns WHERE table_name = '{}'", t.joins[*edge].right)
        }
        Step::FilterValues { filter } => {
            let f = &t.filters[*filter];
            filter_values_sql(f, column_type(snap, &f.col))
        }
        Step::AggregateStats => aggregate_stats_sql(t.aggregate.col.as_ref().expect("scripted only with a column")),
        Step::Partial => Render::template(t).partial(t),
        Step::Full => t.template.clone(),
    }
}

fn has_column_fact(kernel: &Kernel, snap: &Snapshot, c: &ColRef) -> bool {
    let q = MemoryQuery::by_scope(ScopeRef::column(&c.table, &c.column), PRINCIPAL);
    kernel
        .memory()
        .lookup(&q, snap)
        .iter()
        .any(|f| !f.stale && matches!(f.kind, FactKind::ColumnStats | FactKind::ValueFormat))
}

fn edge_from_feedback(seen: &[RelatedTablePayload], e: &JoinEdge) -> bool {
    let hit = |from: &str, to: &str| {
        seen.iter().any(|p| {
            p.tables
                .iter()
                .any(|r| r.table == to && r.column == e.column && r.via_column == format!("{from}.{}", e.column))
        })
    };
    hit(&e.left, &e.right) || hit(&e.right, &e.left)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    #[serde(flatten)]
    pub step: Step,
    pub skipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sql: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRun {
    pub task_id: String,
    pub mode: WorkloadMode,
    pub probes: usize,
    pub queries: usize,
    pub steps: Vec<StepRecord>,
}

impl AgentRun {
    pub fn skipped(&self) -> usize {
        self.steps.iter().filter(|s| s.skipped).count()
    }
}

/// Run the scripted agent for one task. In hints mode a step is skipped
/// when its answer is already known: column steps when memory holds a
/// current column fact, join lookups when a related_table feedback item
/// already named the edge.
pub fn run_agent(kernel: &Kernel, t: &TaskSpec, mode: WorkloadMode) -> Result<AgentRun> {
    if mode == WorkloadMode::Parallel50 {
        let p = parallel_probe(t);
        let r = kernel.handle(&p);
        let step = StepRecord { step: Step::Full, skipped: false, sql: None, error: r.error.map(|e| e.code) };
        return Ok(AgentRun { task_id: t.task_id.clone(), mode, probes: 1, queries: p.queries.len(), steps: vec![step] });
    }
    let hints = mode == WorkloadMode::SequentialWithHints;
    let agent = agent_id(t, mode);
    let mut related: Vec<RelatedTablePayload> = Vec::new();
    let mut run = AgentRun { task_id: t.task_id.clone(), mode, probes: 0, queries: 0, steps: Vec::new() };
    for step in &t.script {
        let snap = kernel.database().snapshot(BranchId::MAINLINE)?;
        let skip = hints
            && match step {
                Step::JoinLookup { edge } => edge_from_feedback(&related, &t.joins[*edge]),
                Step::FilterValues { filter } => has_column_fact(kernel, &snap, &t.filters[*filter].col),
                Step::AggregateStats => t.aggregate.col.as_ref().is_some_and(|c| has_column_fact(kernel, &snap, c)),
                _ => false,
            };
        if skip {
            run.steps.push(StepRecord { step: step.clone(), skipped: true, sql: None, error: None });
            continue;
        }
        let sql = step_sql(t, step, &snap);
        let turn = run.probes as u64;
        let probe = Probe::sql_batch(
            format!("{agent}/{turn}"),
            &agent,
            PRINCIPAL,
            turn,
            vec![ProbeQuery::new("q1", &sql)],
            Brief::new(step.phase()),
        );
        let resp: ProbeResponse = kernel.handle(&probe);
        run.probes += 1;
        run.queries += 1;
        for f in resp.feedback.iter().filter(|f| f.kind == FeedbackKind::RelatedTable) {
            if let Ok(p) = serde_json::from_value(f.payload.clone()) {
                related.push(p);
            }
        }
        run.steps.push(StepRecord { step: step.clone(), skipped: false, sql: Some(sql), error: resp.error.map(|e| e.code) });
    }
    Ok(run)
}

/// Store what an expert would tell the agent up front: the values of each
/// filter column and the range of the aggregated column.
pub fn seed_hints(kernel: &Kernel, t: &TaskSpec) -> Result<usize> {
    let snap = kernel.database().snapshot(BranchId::MAINLINE)?;
    let mut cols: Vec<(ColRef, DataType)> =
        t.filters.iter().map(|f| (f.col.clone(), column_type(&snap, &f.col))).collect();
    if let Some(c) = &t.aggregate.col {
        cols.push((c.clone(), DataType::Float64));
    }
    let mut n = 0;
    for (c, ty) in cols {
        let (kind, sql) = match ty {
            DataType::Text => (
                FactKind::ValueFormat,
                filter_values_sql(&FilterSpec { col: c.clone(), op: "=".into(), literal: Value::Null, pool: vec![] }, ty),
            ),
            _ => (FactKind::ColumnStats, aggregate_stats_sql(&c)),
        };
        let rs = Executor::new(&snap).execute(&plan_sql(&sql, &snap)?)?;
        let content = serde_json::json!({ "columns": rs.columns, "rows": rs.rows });
        let note = match kind {
            FactKind::ValueFormat => format!("{}.{} holds full names such as those listed", c.table, c.column),
            _ => format!("range and mean of {}.{}", c.table, c.column),
        };
        let key = format!("hint/{}/{}.{}", t.task_id, c.table, c.column);
        let mut fact = MemoryFact::new(key, kind, vec![ScopeRef::column(&c.table, &c.column)], content, PRINCIPAL).with_note(note);
        fact.created_by = "expert".into();
        fact.sql = Some(sql);
        kernel.memory().put(fact, &snap)?;
        n += 1;
    }
    Ok(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskComparison {
    pub task_id: String,
    pub baseline_queries: usize,
    pub hints_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringReport {
    pub tasks: Vec<TaskComparison>,
    pub baseline_total: usize,
    pub hints_total: usize,
    /// `1 - hints_total / baseline_total`.
    pub reduction: f64,
}

/// Run every task with the scripted baseline (memory and feedback off)
/// and with hints (both on, hints seeded), each on its own kernel built
/// by `make_kernel`.
pub fn steering_suite(tasks: &[TaskSpec], make_kernel: impl Fn(WorkloadMode) -> Result<Kernel>) -> Result<SteeringReport> {
    let baseline = make_kernel(WorkloadMode::SequentialScripted)?;
    let hinted = make_kernel(WorkloadMode::SequentialWithHints)?;
    let mut rows = Vec::new();
    for t in tasks {
        let b = run_agent(&baseline, t, WorkloadMode::SequentialScripted)?;
        seed_hints(&hinted, t)?;
        let h = run_agent(&hinted, t, WorkloadMode::SequentialWithHints)?;
        rows.push(TaskComparison { task_id: t.task_id.clone(), baseline_queries: b.queries, hints_queries: h.queries });
    }
    let baseline_total: usize = rows.iter().map(|r| r.baseline_queries).sum();
    let hints_total: usize = rows.iter().map(|r| r.hints_queries).sum();
    let reduction = if baseline_total == 0 { 0.0 } else { 1.0 - hints_total as f64 / baseline_total as f64 };
    Ok(SteeringReport { tasks: rows, baseline_total, hints_total, reduction })
}

/// A kernel over `db` set up for `mode`.
pub fn workload_kernel(db: Arc<Database>, config: &crate::Config, tasks: &[TaskSpec], mode: WorkloadMode) -> Kernel {
    Kernel::with_parts(db, config, crate::memory::MemoryStore::new())
        .with_features(mode.features())
        .with_tasks(tasks.iter().map(|t| t.manifest.clone()))
}

// ---------------------------------------------------------------------------
// trace replay

/// Re-send every recorded probe to `kernel`, preserving the original
/// batching. The kernel should write its own trace to compare against.
pub fn replay_trace(kernel: &Kernel, records: &[TraceRecord]) -> Result<usize> {
    let mut sorted: Vec<&TraceRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.seq);
    let mut i = 0;
    let mut sent = 0;
    while i < sorted.len() {
        let batch = sorted[i].batch;
        let mut probes = Vec::new();
        while i < sorted.len() && sorted[i].batch == batch {
            let r = sorted[i];
            if r.probe.is_null() {
                return Err(Error::Config(format!("trace record {} carries no probe document", r.seq)));
            }
            let doc = serde_json::to_vec(&r.probe)?;
            probes.push(parse_probe(&doc).map_err(|e| Error::Config(format!("trace record {}: {e}", r.seq)))?);
            i += 1;
        }
        sent += probes.len();
        kernel.handle_batch(&probes);
    }
    Ok(sent)
}

type Summary = (Option<String>, Vec<OutcomeSummary>);

/// Differences between two traces' outcome summaries, matched by
/// (agent, probe id).
pub fn compare_outcomes(expected: &[TraceRecord], actual: &[TraceRecord]) -> Vec<String> {
    let index = |rs: &[TraceRecord]| -> BTreeMap<(String, String), Summary> {
        rs.iter().map(|r| ((r.agent_id.clone(), r.probe_id.clone()), r.outcome_summary())).collect()
    };
    let (a, b) = (index(expected), index(actual));
    let mut out = Vec::new();
    for (k, v) in &a {
        match b.get(k) {
            None => out.push(format!("{}/{}: missing from replay", k.0, k.1)),
            Some(w) if w != v => out.push(format!("{}/{}: expected {v:?}, got {w:?}", k.0, k.1)),
            _ => {}
        }
    }
    for k in b.keys().filter(|k| !a.contains_key(*k)) {
        out.push(format!("{}/{}: not in original trace", k.0, k.1));
    }
    out
}
