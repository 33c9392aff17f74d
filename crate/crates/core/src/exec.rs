//! Plan evaluation.
//!
//! Every node materializes its output. Scans optionally draw a Bernoulli
//! sample; a batch carries the inclusion probability of its rows so that
//! aggregates can scale. When a [`SharedResults`] cache is attached, each
//! node's output is published once per canonical text and reused by every
//! other plan containing the same sub-plan.

use std::cell::Cell;
use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{AggEstimate, Bound, Scaling};
use crate::branch::BranchId;
use crate::db::Snapshot;
use crate::error::{Error, Result};
use crate::planner::{fnv1a64, AggExpr, AggFunc, CmpOp, Expr, Field, LogicalPlan};
use crate::similarity::{jaccard, trigrams};
use crate::value::{DataType, Row, Value};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: DataType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSet {
    pub columns: Vec<ColumnMeta>,
    pub rows: Vec<Row>,
    pub exact: bool,
    pub source_version: BTreeMap<String, u64>,
}

impl ResultSet {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn multiset(&self) -> HashMap<&Row, usize> {
        let mut m = HashMap::new();
        for r in &self.rows {
            *m.entry(r).or_insert(0) += 1;
        }
        m
    }

    /// Equal rows as multisets, ignoring order.
    pub fn same_rows(&self, other: &ResultSet) -> bool {
        self.rows.len() == other.rows.len() && self.multiset() == other.multiset()
    }
}

/// Bernoulli sampling parameters applied at every scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling {
    pub fraction: f64,
    pub seed: u64,
}

impl Sampling {
    fn is_full(&self) -> bool {
        self.fraction >= 1.0
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Batch {
    pub fields: Vec<Field>,
    pub rows: Vec<Row>,
    /// Probability that any one output row was drawn (product over scans).
    pub inclusion: f64,
    pub estimates: Arc<Vec<AggEstimate>>,
}

type CellKey = (String, u64, u64);

/// Write-once results per (sub-plan canonical text, fraction, seed).
#[derive(Default)]
pub struct SharedResults {
    cells: Mutex<HashMap<CellKey, Arc<OnceLock<Option<Arc<Batch>>>>>>,
}

impl std::fmt::Debug for SharedResults {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SharedResults").field("cells", &self.len()).finish()
    }
}

impl SharedResults {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.cells.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn cell(&self, key: CellKey) -> Arc<OnceLock<Option<Arc<Batch>>>> {
        self.cells.lock().unwrap_or_else(|e| e.into_inner()).entry(key).or_default().clone()
    }
}

type ViewKey = (BranchId, String);

/// Exact sub-plan results kept across batches, valid while the versions of
/// the tables they read are unchanged.
#[derive(Default)]
pub struct MaterializedViews {
    wanted: Mutex<HashSet<ViewKey>>,
    views: Mutex<HashMap<ViewKey, (BTreeMap<String, u64>, Arc<Batch>)>>,
}

impl std::fmt::Debug for MaterializedViews {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MaterializedViews").field("views", &self.len()).finish()
    }
}

impl MaterializedViews {
    pub fn new() -> Self {
        Self::default()
    }

    /// Ask for `canonical_text` to be kept the next time it is computed.
    pub fn request(&self, branch: BranchId, canonical_text: &str) {
        self.wanted.lock().unwrap_or_else(|e| e.into_inner()).insert((branch, canonical_text.to_string()));
    }

    pub fn is_requested(&self, branch: BranchId, canonical_text: &str) -> bool {
        self.wanted.lock().unwrap_or_else(|e| e.into_inner()).contains(&(branch, canonical_text.to_string()))
    }

    /// Stored views, valid or not.
    pub fn len(&self) -> usize {
        self.views.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, key: &ViewKey, versions: &BTreeMap<String, u64>) -> Option<Arc<Batch>> {
        let views = self.views.lock().unwrap_or_else(|e| e.into_inner());
        views.get(key).filter(|(v, _)| v == versions).map(|(_, b)| b.clone())
    }

    fn put(&self, key: ViewKey, versions: BTreeMap<String, u64>, batch: Arc<Batch>) {
        self.views.lock().unwrap_or_else(|e| e.into_inner()).insert(key, (versions, batch));
    }
}

pub struct Executor<'a> {
    snap: &'a Snapshot,
    sampling: Cell<Option<Sampling>>,
    shared: Option<&'a SharedResults>,
    views: Option<&'a MaterializedViews>,
    executed: Cell<u64>,
    hits: Cell<u64>,
}

impl<'a> Executor<'a> {
    pub fn new(snap: &'a Snapshot) -> Self {
        Executor { snap, sampling: Cell::new(None), shared: None, views: None, executed: Cell::new(0), hits: Cell::new(0) }
    }

    pub fn with_sampling(self, sampling: Sampling) -> Self {
        self.sampling.set(Some(sampling));
        self
    }

    pub fn sampling(&self) -> Option<Sampling> {
        self.sampling.get()
    }

    pub(crate) fn set_sampling(&self, sampling: Option<Sampling>) {
        self.sampling.set(sampling);
    }

    pub fn with_shared(mut self, shared: &'a SharedResults) -> Self {
        self.shared = Some(shared);
        self
    }

    pub fn with_views(mut self, views: &'a MaterializedViews) -> Self {
        self.views = Some(views);
        self
    }

    /// Operators evaluated by this executor.
    pub fn executed_operators(&self) -> u64 {
        self.executed.get()
    }

    /// Operators whose output came from the shared cache.
    pub fn cache_hit_operators(&self) -> u64 {
        self.hits.get()
    }

    pub fn execute(&self, plan: &LogicalPlan) -> Result<ResultSet> {
        Ok(self.execute_with_estimates(plan)?.0)
    }

    pub(crate) fn execute_with_estimates(&self, plan: &LogicalPlan) -> Result<(ResultSet, Arc<Vec<AggEstimate>>)> {
        let batch = self.run(plan)?;
        let columns = plan.fields()?.into_iter().map(|f| ColumnMeta { name: f.label, ty: f.ty }).collect();
        let exact = self.sampling.get().is_none_or(|s| s.is_full());
        let rs = ResultSet { columns, rows: batch.rows.clone(), exact, source_version: source_versions(self.snap, plan) };
        Ok((rs, batch.estimates.clone()))
    }

    pub(crate) fn run(&self, plan: &LogicalPlan) -> Result<Arc<Batch>> {
        let exact = self.sampling.get().is_none_or(|s| s.is_full());
        match self.views {
            Some(views) if exact && plan.node_count() > 1 => {
                let key = (self.snap.branch, plan.canonical_text());
                let versions = source_versions(self.snap, plan);
                if let Some(b) = views.get(&key, &versions) {
                    self.hits.set(self.hits.get() + plan.node_count() as u64);
                    return Ok(b);
                }
                let b = self.run_shared(plan)?;
                if views.is_requested(key.0, &key.1) {
                    views.put(key, versions, b.clone());
                }
                Ok(b)
            }
            _ => self.run_shared(plan),
        }
    }

    fn run_shared(&self, plan: &LogicalPlan) -> Result<Arc<Batch>> {
        let Some(shared) = self.shared else {
            return self.compute(plan);
        };
        let key = match self.sampling.get() {
            Some(s) if !s.is_full() => (plan.canonical_text(), s.fraction.to_bits(), s.seed),
            _ => (plan.canonical_text(), 1f64.to_bits(), 0),
        };
        let cell = shared.cell(key);
        let mut first = false;
        let mut err = None;
        let got = cell.get_or_init(|| {
            first = true;
            match self.compute(plan) {
                Ok(b) => Some(b),
                Err(e) => {
                    err = Some(e);
                    None
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        match got {
            Some(b) => {
                if !first {
                    self.hits.set(self.hits.get() + plan.node_count() as u64);
                }
                Ok(b.clone())
            }
            // Someone else failed on it; reproduce the error locally.
            None => self.compute(plan),
        }
    }

    fn compute(&self, plan: &LogicalPlan) -> Result<Arc<Batch>> {
        self.executed.set(self.executed.get() + 1);
        let batch = match plan {
            LogicalPlan::Scan { table, fields } => self.scan(table, fields)?,
            LogicalPlan::Filter { predicate, input } => {
                let inp = self.run(input)?;
                let pred = compile(predicate, &inp.fields)?;
                let mut rows = Vec::new();
                for r in &inp.rows {
                    if pred.truthy(r)? {
                        rows.push(r.clone());
                    }
                }
                Batch { fields: inp.fields.clone(), rows, inclusion: inp.inclusion, estimates: inp.estimates.clone() }
            }
            LogicalPlan::Project { exprs, .. } => {
                let inp = self.run(plan.children()[0])?;
                let bound = exprs.iter().map(|e| compile(e, &inp.fields)).collect::<Result<Vec<_>>>()?;
                let rows = inp
                    .rows
                    .iter()
                    .map(|r| bound.iter().map(|b| b.eval(r)).collect::<Result<Row>>())
                    .collect::<Result<Vec<_>>>()?;
                Batch { fields: plan.fields()?, rows, inclusion: inp.inclusion, estimates: inp.estimates.clone() }
            }
            LogicalPlan::HashJoin { on, left, right } => {
                let l = self.run(left)?;
                let r = self.run(right)?;
                let keys = JoinKeys::compile(on, &l.fields, &r.fields)?;
                let rows = hash_join(&keys, &l.rows, &r.rows)?;
                let mut fields = l.fields.clone();
                fields.extend(r.fields.iter().cloned());
                Batch { fields, rows, inclusion: l.inclusion * r.inclusion, estimates: Arc::new(Vec::new()) }
            }
            LogicalPlan::Aggregate { group_by, aggs, input } => {
                let inp = self.run(input)?;
                let (rows, estimates) = self.aggregate(group_by, aggs, &inp)?;
                Batch { fields: plan.fields()?, rows, inclusion: 1.0, estimates: Arc::new(estimates) }
            }
            LogicalPlan::Sort { keys, input } => {
                let inp = self.run(input)?;
                let bound = keys.iter().map(|k| Ok((compile(&k.expr, &inp.fields)?, k.asc))).collect::<Result<Vec<_>>>()?;
                let mut keyed = inp
                    .rows
                    .iter()
                    .map(|r| Ok((bound.iter().map(|(b, _)| b.eval(r)).collect::<Result<Vec<_>>>()?, r)))
                    .collect::<Result<Vec<_>>>()?;
                keyed.sort_by(|(a, _), (b, _)| {
                    for (i, (_, asc)) in bound.iter().enumerate() {
                        let o = a[i].total_cmp(&b[i]);
                        if o != Ordering::Equal {
                            return if *asc { o } else { o.reverse() };
                        }
                    }
                    Ordering::Equal
                });
                let rows = keyed.into_iter().map(|(_, r)| r.clone()).collect();
                Batch { fields: inp.fields.clone(), rows, inclusion: inp.inclusion, estimates: inp.estimates.clone() }
            }
            LogicalPlan::Limit { n, input } => {
                let inp = self.run(input)?;
                let rows = inp.rows.iter().take(*n as usize).cloned().collect();
                Batch { fields: inp.fields.clone(), rows, inclusion: inp.inclusion, estimates: inp.estimates.clone() }
            }
            LogicalPlan::Distinct { input } => {
                let inp = self.run(input)?;
                let mut seen = HashSet::new();
                let rows = inp.rows.iter().filter(|r| seen.insert(*r)).cloned().collect();
                Batch { fields: inp.fields.clone(), rows, inclusion: inp.inclusion, estimates: inp.estimates.clone() }
            }
        };
        Ok(Arc::new(batch))
    }

    fn scan(&self, table: &str, fields: &[Field]) -> Result<Batch> {
        let iter = self.snap.scan(table)?;
        let (rows, inclusion) = match self.sampling.get() {
            Some(s) if !s.is_full() => {
                let mut rng = sample_rng(s.seed, table);
                (iter.filter(|_| rng.gen::<f64>() < s.fraction).cloned().collect(), s.fraction)
            }
            _ => (iter.cloned().collect(), 1.0),
        };
        Ok(Batch { fields: fields.to_vec(), rows, inclusion, estimates: Arc::new(Vec::new()) })
    }

    fn aggregate(&self, group_by: &[Expr], aggs: &[AggExpr], inp: &Batch) -> Result<(Vec<Row>, Vec<AggEstimate>)> {
        let keys = group_by.iter().map(|g| compile(g, &inp.fields)).collect::<Result<Vec<_>>>()?;
        let args = aggs
            .iter()
            .map(|a| a.arg.as_ref().map(|e| compile(e, &inp.fields)).transpose())
            .collect::<Result<Vec<_>>>()?;
        let arg_types = aggs
            .iter()
            .map(|a| a.arg.as_ref().map(|e| e.data_type(&inp.fields)).transpose())
            .collect::<Result<Vec<_>>>()?;
        let sampled = self.sampling.get().is_some_and(|s| !s.is_full());
        if sampled {
            if let Some(a) = aggs.iter().find(|a| a.distinct) {
                return Err(Error::Unsupported(format!("{} under sampling", a.canonical())));
            }
        }

        let mut index: HashMap<Vec<Value>, usize> = HashMap::new();
        let mut groups: Vec<(Vec<Value>, Vec<Acc>)> = Vec::new();
        for r in &inp.rows {
            let k = keys.iter().map(|b| b.eval(r)).collect::<Result<Vec<_>>>()?;
            let gi = match index.get(&k) {
                Some(&i) => i,
                None => {
                    index.insert(k.clone(), groups.len());
                    groups.push((k, aggs.iter().map(|a| Acc::new(a.distinct)).collect()));
                    groups.len() - 1
                }
            };
            for (ai, arg) in args.iter().enumerate() {
                let v = arg.as_ref().map(|b| b.eval(r)).transpose()?;
                groups[gi].1[ai].add(v);
            }
        }
        if groups.is_empty() && group_by.is_empty() {
            groups.push((Vec::new(), aggs.iter().map(|a| Acc::new(a.distinct)).collect()));
        }

        let fraction = self.sampling.get().map(|s| s.fraction.min(1.0));
        let mut rows = Vec::with_capacity(groups.len());
        let mut estimates = Vec::new();
        for (k, accs) in groups {
            let mut row = k.clone();
            for ((a, acc), ty) in aggs.iter().zip(accs).zip(&arg_types) {
                let (v, est) = acc.finish(a, *ty, inp.inclusion)?;
                if let Some(fraction) = fraction {
                    let mut est = est;
                    est.group = k.clone();
                    est.aggregate = a.canonical();
                    est.sample_fraction = fraction;
                    estimates.push(est);
                }
                row.push(v);
            }
            rows.push(row);
        }
        Ok((rows, estimates))
    }
}

pub(crate) fn sample_rng(seed: u64, table: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(table.as_bytes()))
}

pub(crate) fn source_versions(snap: &Snapshot, plan: &LogicalPlan) -> BTreeMap<String, u64> {
    plan.tables().into_iter().filter_map(|t| snap.version_of(t).map(|v| (t.to_string(), v))).collect()
}

/// Per-(group, aggregate) accumulator.
struct Acc {
    rows: u64,
    n: u64,
    sum_int: i128,
    sum: f64,
    sum_sq: f64,
    min: Option<Value>,
    max: Option<Value>,
    seen: Option<HashSet<Value>>,
}

impl Acc {
    fn new(distinct: bool) -> Self {
        Acc { rows: 0, n: 0, sum_int: 0, sum: 0.0, sum_sq: 0.0, min: None, max: None, seen: distinct.then(HashSet::new) }
    }

    fn add(&mut self, v: Option<Value>) {
        self.rows += 1;
        let Some(v) = v else { return };
        if v.is_null() {
            return;
        }
        if let Some(seen) = &mut self.seen {
            if !seen.insert(v.clone()) {
                return;
            }
        }
        self.n += 1;
        if let Value::Int(i) = v {
            self.sum_int += i as i128;
        }
        if let Some(x) = v.as_f64() {
            self.sum += x;
            self.sum_sq += x * x;
        }
        if self.min.as_ref().is_none_or(|m| v.total_cmp(m).is_lt()) {
            self.min = Some(v.clone());
        }
        if self.max.as_ref().is_none_or(|m| v.total_cmp(m).is_gt()) {
            self.max = Some(v);
        }
    }

    /// Output value and its estimate record; `pi` is the row inclusion
    /// probability (1 when nothing was sampled).
    fn finish(self, a: &AggExpr, ty: Option<DataType>, pi: f64) -> Result<(Value, AggEstimate)> {
        let exact = pi >= 1.0;
        let mut est = AggEstimate {
            group: Vec::new(),
            aggregate: String::new(),
            point: Value::Null,
            std_error: Some(0.0),
            n_sampled: self.rows,
            sample_fraction: 1.0,
            inclusion: pi,
            scaling: if exact { Scaling::Exact } else { Scaling::HorvitzThompson },
            bound: None,
        };
        let ht_var = |sum_sq: f64| (1.0 - pi) / (pi * pi) * sum_sq;
        let value = match a.func {
            AggFunc::Count => {
                let c = if a.arg.is_none() { self.rows } else { self.n };
                if exact {
                    Value::Int(c as i64)
                } else {
                    est.std_error = Some(ht_var(c as f64).sqrt());
                    Value::Int(crate::approx::scale_count(c, pi))
                }
            }
            AggFunc::Sum => {
                if self.n == 0 {
                    est.std_error = None;
                    Value::Null
                } else if exact {
                    if ty == Some(DataType::Int64) {
                        Value::Int(
                            i64::try_from(self.sum_int).map_err(|_| Error::Eval(format!("{} overflows int64", a.canonical())))?,
                        )
                    } else {
                        Value::Float(self.sum)
                    }
                } else {
                    est.std_error = Some(ht_var(self.sum_sq).sqrt());
                    if ty == Some(DataType::Int64) {
                        Value::Int((self.sum_int as f64 / pi).round() as i64)
                    } else {
                        Value::Float(self.sum / pi)
                    }
                }
            }
            AggFunc::Avg => {
                if self.n == 0 {
                    est.std_error = None;
                    Value::Null
                } else {
                    let total = if ty == Some(DataType::Int64) { self.sum_int as f64 } else { self.sum };
                    let mean = total / self.n as f64;
                    if !exact {
                        est.scaling = Scaling::Ratio;
                        let ss = (self.sum_sq - self.n as f64 * mean * mean).max(0.0);
                        est.std_error = Some(((1.0 - pi) * ss).sqrt() / self.n as f64);
                    }
                    Value::Float(mean)
                }
            }
            AggFunc::Min | AggFunc::Max => {
                let v = if a.func == AggFunc::Min { self.min } else { self.max };
                if !exact {
                    est.scaling = Scaling::SampleExtreme;
                    est.std_error = None;
                    // A sample minimum can only overstate the true minimum.
                    est.bound = Some(if a.func == AggFunc::Min { Bound::Upper } else { Bound::Lower });
                }
                v.unwrap_or(Value::Null)
            }
        };
        est.point = value.clone();
        Ok((value, est))
    }
}

struct JoinKeys {
    left: Vec<BoundExpr>,
    right: Vec<BoundExpr>,
    widen: Vec<bool>,
}

impl JoinKeys {
    fn compile(on: &[(Expr, Expr)], lf: &[Field], rf: &[Field]) -> Result<Self> {
        let mut k = JoinKeys { left: Vec::new(), right: Vec::new(), widen: Vec::new() };
        for (l, r) in on {
            let (lt, rt) = (l.data_type(lf)?, r.data_type(rf)?);
            k.left.push(compile(l, lf)?);
            k.right.push(compile(r, rf)?);
            k.widen.push(lt != rt && lt.is_numeric() && rt.is_numeric());
        }
        Ok(k)
    }

    fn key(&self, side: &[BoundExpr], row: &Row) -> Result<Option<Vec<Value>>> {
        let mut out = Vec::with_capacity(side.len());
        for (b, widen) in side.iter().zip(&self.widen) {
            let v = b.eval(row)?;
            if v.is_null() {
                return Ok(None);
            }
            out.push(match (v, widen) {
                (Value::Int(i), true) => Value::Float(i as f64),
                (v, _) => v,
            });
        }
        Ok(Some(out))
    }

    fn left_key(&self, row: &Row) -> Result<Option<Vec<Value>>> {
        self.key(&self.left, row)
    }

    fn right_key(&self, row: &Row) -> Result<Option<Vec<Value>>> {
        self.key(&self.right, row)
    }
}

type JoinTable<'r> = HashMap<Vec<Value>, Vec<&'r Row>>;

fn build_side<'r>(keys: &JoinKeys, right: &'r [Row]) -> Result<JoinTable<'r>> {
    let mut table: JoinTable<'r> = HashMap::new();
    for r in right {
        if let Some(k) = keys.right_key(r)? {
            table.entry(k).or_default().push(r);
        }
    }
    Ok(table)
}

fn probe_one(keys: &JoinKeys, table: &JoinTable<'_>, l: &Row, out: &mut Vec<Row>) -> Result<()> {
    if let Some(k) = keys.left_key(l)? {
        if let Some(ms) = table.get(&k) {
            for m in ms {
                let mut row = l.clone();
                row.extend(m.iter().cloned());
                out.push(row);
            }
        }
    }
    Ok(())
}

/// Output follows left order, then right order within a key.
fn hash_join(keys: &JoinKeys, left: &[Row], right: &[Row]) -> Result<Vec<Row>> {
    let table = build_side(keys, right)?;
    let mut out = Vec::new();
    for l in left {
        probe_one(keys, &table, l, &mut out)?;
    }
    Ok(out)
}

/// Streaming probe for incremental pipelines: the build side is fully
/// materialized, left rows arrive one at a time.
pub(crate) struct JoinProbe {
    keys: JoinKeys,
    right: Vec<Row>,
    index: HashMap<Vec<Value>, Vec<usize>>,
}

impl JoinProbe {
    pub fn new(on: &[(Expr, Expr)], lf: &[Field], rf: &[Field], right: Vec<Row>) -> Result<Self> {
        let keys = JoinKeys::compile(on, lf, rf)?;
        let mut index: HashMap<Vec<Value>, Vec<usize>> = HashMap::new();
        for (i, r) in right.iter().enumerate() {
            if let Some(k) = keys.right_key(r)? {
                index.entry(k).or_default().push(i);
            }
        }
        Ok(JoinProbe { keys, right, index })
    }

    pub fn probe(&self, l: &Row, out: &mut Vec<Row>) -> Result<()> {
        if let Some(k) = self.keys.left_key(l)? {
            if let Some(ms) = self.index.get(&k) {
                for &m in ms {
                    let mut row = l.clone();
                    row.extend(self.right[m].iter().cloned());
                    out.push(row);
                }
            }
        }
        Ok(())
    }
}

/// An expression resolved against an input layout.
#[derive(Debug, Clone)]
pub(crate) enum BoundExpr {
    Col(usize),
    Lit(Value),
    Cmp(CmpOp, Box<BoundExpr>, Box<BoundExpr>),
    And(Vec<BoundExpr>),
    Or(Vec<BoundExpr>),
    Not(Box<BoundExpr>),
    Like { expr: Box<BoundExpr>, pattern: Vec<char>, negated: bool },
    In { expr: Box<BoundExpr>, list: Vec<Value>, negated: bool },
    IsNull { expr: Box<BoundExpr>, negated: bool },
    Semantic { expr: Box<BoundExpr>, phrase: HashSet<String>, phrase_text: String, threshold: f64 },
}

pub(crate) fn compile(e: &Expr, fields: &[Field]) -> Result<BoundExpr> {
    let b = |x: &Expr| compile(x, fields).map(Box::new);
    Ok(match e {
        Expr::Column(c) => BoundExpr::Col(
            fields.iter().position(|f| &f.name == c).ok_or_else(|| Error::UnknownColumn(c.clone()))?,
        ),
        Expr::Literal(v) => BoundExpr::Lit(v.clone()),
        Expr::Cmp { op, left, right } => BoundExpr::Cmp(*op, b(left)?, b(right)?),
        Expr::And(xs) => BoundExpr::And(xs.iter().map(|x| compile(x, fields)).collect::<Result<_>>()?),
        Expr::Or(xs) => BoundExpr::Or(xs.iter().map(|x| compile(x, fields)).collect::<Result<_>>()?),
        Expr::Not(x) => BoundExpr::Not(b(x)?),
        Expr::Like { expr, pattern, negated } => {
            BoundExpr::Like { expr: b(expr)?, pattern: pattern.chars().collect(), negated: *negated }
        }
        Expr::In { expr, list, negated } => BoundExpr::In { expr: b(expr)?, list: list.clone(), negated: *negated },
        Expr::IsNull { expr, negated } => BoundExpr::IsNull { expr: b(expr)?, negated: *negated },
        Expr::SemanticLike { expr, phrase, threshold } => BoundExpr::Semantic {
            expr: b(expr)?,
            phrase: trigrams(phrase),
            phrase_text: phrase.to_lowercase(),
            threshold: *threshold,
        },
    })
}

fn not3(v: Value) -> Value {
    match v {
        Value::Bool(b) => Value::Bool(!b),
        other => other,
    }
}

impl BoundExpr {
    pub fn eval(&self, row: &Row) -> Result<Value> {
        Ok(match self {
            BoundExpr::Col(i) => row[*i].clone(),
            BoundExpr::Lit(v) => v.clone(),
            BoundExpr::Cmp(op, l, r) => {
                let (a, b) = (l.eval(row)?, r.eval(row)?);
                match a.sql_cmp(&b)? {
                    None => Value::Null,
                    Some(o) => Value::Bool(match op {
                        CmpOp::Eq => o == Ordering::Equal,
                        CmpOp::NotEq => o != Ordering::Equal,
                        CmpOp::Lt => o == Ordering::Less,
                        CmpOp::LtEq => o != Ordering::Greater,
                        CmpOp::Gt => o == Ordering::Greater,
                        CmpOp::GtEq => o != Ordering::Less,
                    }),
                }
            }
            BoundExpr::And(xs) => {
                let mut unknown = false;
                for x in xs {
                    match x.eval(row)? {
                        Value::Bool(false) => return Ok(Value::Bool(false)),
                        Value::Bool(true) => {}
                        _ => unknown = true,
                    }
                }
                if unknown { Value::Null } else { Value::Bool(true) }
            }
            BoundExpr::Or(xs) => {
                let mut unknown = false;
                for x in xs {
                    match x.eval(row)? {
                        Value::Bool(true) => return Ok(Value::Bool(true)),
                        Value::Bool(false) => {}
                        _ => unknown = true,
                    }
                }
                if unknown { Value::Null } else { Value::Bool(false) }
            }
            BoundExpr::Not(x) => not3(x.eval(row)?),
            BoundExpr::Like { expr, pattern, negated } => match expr.eval(row)? {
                Value::Text(s) => {
                    let m = like_match(&s.chars().collect::<Vec<_>>(), pattern);
                    Value::Bool(m != *negated)
                }
                Value::Null => Value::Null,
                other => return Err(Error::Type(format!("LIKE on {}", other.type_name()))),
            },
            BoundExpr::In { expr, list, negated } => {
                let v = expr.eval(row)?;
                if v.is_null() {
                    return Ok(Value::Null);
                }
                let mut saw_null = false;
                let mut hit = false;
                for x in list {
                    match v.sql_cmp(x)? {
                        Some(Ordering::Equal) => {
                            hit = true;
                            break;
                        }
                        None => saw_null = true,
                        _ => {}
                    }
                }
                let r = if hit {
                    Value::Bool(true)
                } else if saw_null {
                    Value::Null
                } else {
                    Value::Bool(false)
                };
                if *negated { not3(r) } else { r }
            }
            BoundExpr::IsNull { expr, negated } => Value::Bool(expr.eval(row)?.is_null() != *negated),
            BoundExpr::Semantic { expr, phrase, phrase_text, threshold } => match expr.eval(row)? {
                Value::Text(s) => {
                    let t = trigrams(&s);
                    let score = if t.is_empty() && phrase.is_empty() {
                        if !s.is_empty() && s.to_lowercase() == *phrase_text { 1.0 } else { 0.0 }
                    } else {
                        jaccard(&t, phrase)
                    };
                    Value::Bool(score >= *threshold)
                }
                Value::Null => Value::Null,
                other => return Err(Error::Type(format!("SEMANTIC_LIKE on {}", other.type_name()))),
            },
        })
    }

    /// WHERE semantics: only `true` passes.
    pub fn truthy(&self, row: &Row) -> Result<bool> {
        Ok(matches!(self.eval(row)?, Value::Bool(true)))
    }
}

/// SQL LIKE with `%` (any run) and `_` (one character); case-sensitive.
pub fn like_match(s: &[char], p: &[char]) -> bool {
    let (mut i, mut j) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while i < s.len() {
        if j < p.len() && (p[j] == '_' || p[j] == s[i]) && p[j] != '%' {
            i += 1;
            j += 1;
        } else if j < p.len() && p[j] == '%' {
            star = Some((j, i));
            j += 1;
        } else if let Some((sj, si)) = star {
            j = sj + 1;
            i = si + 1;
            star = Some((sj, si + 1));
        } else {
            return false;
        }
    }
    while j < p.len() && p[j] == '%' {
        j += 1;
    }
    j == p.len()
}
