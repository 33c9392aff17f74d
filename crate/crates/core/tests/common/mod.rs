//! Fixtures and reference models shared by the integration tests and the
//! acceptance harness.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

pub mod fuzz;
pub mod memmodel;
pub mod whynot;

use probekernel::branch::WriteOp;
use probekernel::catalog::{ColumnDef, Schema};
use probekernel::planner::{plan_sql, LogicalPlan};
use probekernel::{BranchId, DataType, Database, Executor, ResultSet, Row, Value};

pub const STATES: [&str; 6] = ["California", "Oregon", "Washington", "New York", "Massachusetts", "Texas"];

/// stores(store_id, state, region) and sales(sale_id, store_id, state, amount)
/// with fully spelled state names.
pub fn sales_db(n_sales: usize) -> Arc<Database> {
    let db = Database::new();
    db.create_table(
        Schema::new(
            "stores",
            vec![
                ColumnDef::new("store_id", DataType::Int64),
                ColumnDef::new("state", DataType::Text),
                ColumnDef::new("region", DataType::Text),
            ],
        )
        .with_primary_key("store_id"),
    )
    .unwrap();
    db.create_table(
        Schema::new(
            "sales",
            vec![
                ColumnDef::new("sale_id", DataType::Int64),
                ColumnDef::new("store_id", DataType::Int64),
                ColumnDef::new("state", DataType::Text),
                ColumnDef::new("amount", DataType::Float64),
            ],
        )
        .with_primary_key("sale_id"),
    )
    .unwrap();
    let stores: Vec<Row> = (0..12)
        .map(|i| {
            let state = STATES[i % STATES.len()];
            let region = if i % STATES.len() < 3 { "west" } else { "east" };
            vec![Value::Int(i as i64), state.into(), region.into()]
        })
        .collect();
    db.insert_rows("stores", stores).unwrap();
    let sales: Vec<Row> = (0..n_sales)
        .map(|i| {
            let store = (i * 7) % 12;
            vec![
                Value::Int(i as i64),
                Value::Int(store as i64),
                STATES[store % STATES.len()].into(),
                Value::Float(((i * 37) % 1000) as f64 / 10.0),
            ]
        })
        .collect();
    if !sales.is_empty() {
        db.insert_rows("sales", sales).unwrap();
    }
    Arc::new(db)
}

pub fn plan(db: &Database, sql: &str) -> LogicalPlan {
    let snap = db.snapshot(BranchId::MAINLINE).unwrap();
    plan_sql(sql, &snap).unwrap_or_else(|e| panic!("{sql}: {e}"))
}

pub fn run(db: &Database, sql: &str) -> ResultSet {
    let snap = db.snapshot(BranchId::MAINLINE).unwrap();
    let p = plan_sql(sql, &snap).unwrap_or_else(|e| panic!("{sql}: {e}"));
    Executor::new(&snap).execute(&p).unwrap_or_else(|e| panic!("{sql}: {e}"))
}

pub fn sorted(mut rows: Vec<Row>) -> Vec<Row> {
    rows.sort_by(|a, b| {
        a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    rows
}

// ---------------------------------------------------------------------------
// Branch reference model: every fork deep-copies its parent's rows and the
// full write log.

pub const BRANCH_TABLE: &str = "t";

pub fn branch_table_schema() -> Schema {
    Schema::new("t", vec![ColumnDef::new("k", DataType::Int64), ColumnDef::new("v", DataType::Int64)]).with_primary_key("k")
}

#[derive(Debug, Clone)]
pub enum BranchStep {
    Fork(usize),
    /// (key, Some(value)) upserts, (key, None) deletes.
    Write(usize, Vec<(i64, Option<i64>)>),
    Rollback(usize),
    Merge(usize, usize),
}

#[derive(Debug, Clone)]
struct RefBranch {
    rows: BTreeMap<i64, i64>,
    log: Vec<(u64, i64)>,
    parent: Option<usize>,
    fork_seq: u64,
    active: bool,
}

/// What one step returned: an error code, or the sorted conflict keys of a
/// merge (empty for everything else that succeeded).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepResult {
    Err(&'static str),
    Ok(Vec<i64>),
}

#[derive(Debug, Clone)]
pub struct RefDb {
    branches: Vec<RefBranch>,
    seq: u64,
}

impl RefDb {
    /// Mirrors `load_branch_db`: table creation is commit 1, the initial
    /// insert commit 2.
    pub fn new(initial: &[(i64, i64)]) -> Self {
        let rows: BTreeMap<i64, i64> = initial.iter().copied().collect();
        let log = rows.keys().map(|&k| (2, k)).collect();
        RefDb { branches: vec![RefBranch { rows, log, parent: None, fork_seq: 0, active: true }], seq: 2 }
    }

    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn rows(&self, b: usize) -> Option<&BTreeMap<i64, i64>> {
        let br = &self.branches[b];
        br.active.then_some(&br.rows)
    }

    fn lineage(&self, b: usize) -> Vec<usize> {
        let mut out = vec![b];
        let mut cur = b;
        while let Some(p) = self.branches[cur].parent {
            out.push(p);
            cur = p;
        }
        out
    }

    fn changed(&self, b: usize, since: u64) -> BTreeSet<i64> {
        self.branches[b].log.iter().filter(|(s, _)| *s > since).map(|(_, k)| *k).collect()
    }

    pub fn apply(&mut self, step: &BranchStep) -> StepResult {
        match step {
            BranchStep::Fork(p) => {
                if !self.branches[*p].active {
                    return StepResult::Err("inactive_branch");
                }
                let mut child = self.branches[*p].clone();
                child.parent = Some(*p);
                child.fork_seq = self.seq;
                self.branches.push(child);
                StepResult::Ok(Vec::new())
            }
            BranchStep::Write(b, ops) => {
                if !self.branches[*b].active {
                    return StepResult::Err("inactive_branch");
                }
                self.seq += 1;
                let seq = self.seq;
                let br = &mut self.branches[*b];
                for (k, v) in ops {
                    match v {
                        Some(v) => br.rows.insert(*k, *v),
                        None => br.rows.remove(k),
                    };
                    br.log.push((seq, *k));
                }
                StepResult::Ok(Vec::new())
            }
            BranchStep::Rollback(b) => {
                if *b == 0 {
                    return StepResult::Err("rollback_mainline");
                }
                if !self.branches[*b].active {
                    return StepResult::Err("inactive_branch");
                }
                self.branches[*b].active = false;
                StepResult::Ok(Vec::new())
            }
            BranchStep::Merge(s, t) => {
                if !self.branches[*s].active || !self.branches[*t].active {
                    return StepResult::Err("inactive_branch");
                }
                let ls = self.lineage(*s);
                let lt = self.lineage(*t);
                let lca = *ls.iter().find(|x| lt.contains(x)).expect("every branch descends from mainline");
                let side = |l: &[usize]| {
                    let pos = l.iter().position(|x| *x == lca).unwrap();
                    if pos == 0 {
                        u64::MAX
                    } else {
                        self.branches[l[pos - 1]].fork_seq
                    }
                };
                let since = side(&ls).min(side(&lt));
                if since == u64::MAX {
                    return StepResult::Err("evaluation_error");
                }
                let src = self.changed(*s, since);
                let dst = self.changed(*t, since);
                let conflicts: Vec<i64> = src.intersection(&dst).copied().collect();
                if !conflicts.is_empty() {
                    return StepResult::Ok(conflicts);
                }
                self.seq += 1;
                let seq = self.seq;
                let values: Vec<(i64, Option<i64>)> =
                    src.iter().map(|k| (*k, self.branches[*s].rows.get(k).copied())).collect();
                let target = &mut self.branches[*t];
                for (k, v) in values {
                    match v {
                        Some(v) => target.rows.insert(k, v),
                        None => target.rows.remove(&k),
                    };
                    target.log.push((seq, k));
                }
                self.branches[*s].active = false;
                StepResult::Ok(Vec::new())
            }
        }
    }
}

pub fn load_branch_db(initial: &[(i64, i64)]) -> Database {
    let db = Database::new();
    db.create_table(branch_table_schema()).unwrap();
    let rows: Vec<Row> = initial.iter().map(|&(k, v)| vec![Value::Int(k), Value::Int(v)]).collect();
    db.insert_rows(BRANCH_TABLE, rows).unwrap();
    db
}

pub fn apply_real(db: &Database, step: &BranchStep) -> StepResult {
    let r = match step {
        BranchStep::Fork(p) => db.fork(BranchId(*p as u64)).map(|_| Vec::new()),
        BranchStep::Write(b, ops) => {
            let ops = ops
                .iter()
                .map(|(k, v)| match v {
                    Some(v) => WriteOp::Upsert(vec![Value::Int(*k), Value::Int(*v)]),
                    None => WriteOp::Delete(Value::Int(*k)),
                })
                .collect();
            db.branch_write(BranchId(*b as u64), BRANCH_TABLE, ops).map(|_| Vec::new())
        }
        BranchStep::Rollback(b) => db.rollback(BranchId(*b as u64)).map(|_| Vec::new()),
        BranchStep::Merge(s, t) => db.merge(BranchId(*s as u64), BranchId(*t as u64)).map(|m| {
            let mut keys: Vec<i64> = m
                .conflicts
                .iter()
                .map(|c| match c.key {
                    Some(Value::Int(k)) => k,
                    ref other => panic!("unexpected conflict key {other:?}"),
                })
                .collect();
            keys.sort();
            keys
        }),
    };
    match r {
        Ok(v) => StepResult::Ok(v),
        Err(e) => StepResult::Err(e.code()),
    }
}

/// Rows of the branch table as a map, or `None` when the branch is not readable.
pub fn read_real(db: &Database, b: usize) -> Option<BTreeMap<i64, i64>> {
    let snap = db.table_snapshot(BranchId(b as u64), BRANCH_TABLE).ok()?;
    Some(
        snap.rows()
            .map(|r| match (&r[0], &r[1]) {
                (Value::Int(k), Value::Int(v)) => (*k, *v),
                other => panic!("unexpected row {other:?}"),
            })
            .collect(),
    )
}

/// Random schedule. Branch indices are raw draws; [`check_schedule`]
/// reduces them modulo the number of branches existing at that step.
pub fn random_schedule(rng: &mut impl rand::Rng, steps: usize, key_space: i64) -> Vec<BranchStep> {
    (0..steps)
        .map(|_| {
            let mut b = || rng.gen_range(0..64usize);
            let (x, y) = (b(), b());
            match rng.gen_range(0..10) {
                0..=2 => BranchStep::Fork(x),
                3..=6 => {
                    let len = rng.gen_range(1..=6);
                    let ops = (0..len)
                        .map(|_| {
                            let k = rng.gen_range(0..key_space);
                            let v = if rng.gen_bool(0.2) { None } else { Some(rng.gen_range(-1000..1000)) };
                            (k, v)
                        })
                        .collect();
                    BranchStep::Write(x, ops)
                }
                7 => BranchStep::Rollback(x),
                _ => BranchStep::Merge(x, y),
            }
        })
        .collect()
}

fn resolve(step: &BranchStep, n: usize) -> BranchStep {
    match step {
        BranchStep::Fork(p) => BranchStep::Fork(p % n),
        BranchStep::Write(b, ops) => BranchStep::Write(b % n, ops.clone()),
        BranchStep::Rollback(b) => BranchStep::Rollback(b % n),
        BranchStep::Merge(s, t) => BranchStep::Merge(s % n, t % n),
    }
}

/// Run a schedule against both implementations. Returns a description of
/// the first divergence.
pub fn check_schedule(initial: &[(i64, i64)], steps: &[BranchStep]) -> Result<(), String> {
    let db = load_branch_db(initial);
    let mut model = RefDb::new(initial);
    for (i, step) in steps.iter().enumerate() {
        let step = &resolve(step, model.len());
        let want = model.apply(step);
        let got = apply_real(&db, step);
        if want != got {
            return Err(format!("step {i} {step:?}: model {want:?}, engine {got:?}"));
        }
        let touched: Vec<usize> = match step {
            BranchStep::Fork(_) => vec![model.len() - 1],
            BranchStep::Write(b, _) | BranchStep::Rollback(b) => vec![*b],
            BranchStep::Merge(s, t) => vec![*s, *t],
        };
        for b in touched {
            if model.rows(b).cloned() != read_real(&db, b) {
                return Err(format!("step {i} {step:?}: branch {b} reads differ"));
            }
        }
    }
    for b in 0..model.len() {
        if model.rows(b).cloned() != read_real(&db, b) {
            return Err(format!("final read of branch {b} differs"));
        }
    }
    Ok(())
}

/// u(id int64 pk, grp int64, amount float64) with amounts uniform on [0, 100)
/// from a fixed seed and grp = id % 10.
pub fn uniform_db(n: usize) -> Arc<Database> {
    use rand::{Rng, SeedableRng};
    let db = Database::new();
    db.create_table(
        Schema::new(
            "u",
            vec![
                ColumnDef::new("id", DataType::Int64),
                ColumnDef::new("grp", DataType::Int64),
                ColumnDef::new("amount", DataType::Float64),
            ],
        )
        .with_primary_key("id"),
    )
    .unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let rows: Vec<Row> = (0..n)
        .map(|i| vec![Value::Int(i as i64), Value::Int(i as i64 % 10), Value::Float(rng.gen::<f64>() * 100.0)])
        .collect();
    db.insert_rows("u", rows).unwrap();
    Arc::new(db)
}

/// Exact sum of `u.amount`, summed in row order.
pub fn uniform_sum(db: &Database) -> f64 {
    let snap = db.snapshot(BranchId::MAINLINE).unwrap();
    snap.scan("u").unwrap().map(|r| r[2].as_f64().unwrap()).sum()
}
