//! Reference model for memory-fact staleness: a fact is current only on the
//! branch it was put on and only while every table it was stamped with
//! still has the stamped version.

use std::collections::HashMap;

use probekernel::memory::{FactKind, MemoryFact, MemoryQuery, MemoryStore, ScopeRef};
use probekernel::{BranchId, Database, Value};
use rand::Rng;
use serde_json::json;

pub const TABLES: [&str; 2] = ["sales", "stores"];
pub const KEYS: usize = 4;

#[derive(Debug, Clone)]
pub enum MemOp {
    Put { key: usize, table: usize },
    Write { table: usize },
    Fork,
    Read { branch: usize },
}

pub fn random_mem_ops(rng: &mut impl Rng, n: usize) -> Vec<MemOp> {
    (0..n)
        .map(|_| match rng.gen_range(0..9) {
            0..=2 => MemOp::Put { key: rng.gen_range(0..KEYS), table: rng.gen_range(0..2) },
            3 | 4 => MemOp::Write { table: rng.gen_range(0..2) },
            5 => MemOp::Fork,
            _ => MemOp::Read { branch: rng.gen_range(0..8) },
        })
        .collect()
}

/// Insert one row into `table` on mainline.
pub fn bump(db: &Database, table: &str) {
    let main = BranchId::MAINLINE;
    let row = match table {
        "stores" => vec![Value::Int(db.snapshot(main).unwrap().row_count("stores").unwrap() as i64 + 100), "Ohio".into(), "east".into()],
        _ => {
            let n = db.snapshot(main).unwrap().row_count("sales").unwrap() as i64 + 100_000;
            vec![Value::Int(n), Value::Int(0), "Ohio".into(), Value::Float(1.0)]
        }
    };
    db.insert_rows(table, vec![row]).unwrap();
}

/// Run `ops` and compare every lookup with the model after each step.
pub fn check_memory_schedule(ops: &[MemOp]) -> Result<(), String> {
    let main = BranchId::MAINLINE;
    let db = super::sales_db(3);
    let mem = MemoryStore::new();
    let mut branches = vec![main];
    // key -> (table, stamped version, branch put on)
    let mut model: HashMap<usize, (usize, u64, BranchId)> = HashMap::new();
    let mut current = main;
    for (i, op) in ops.iter().enumerate() {
        match *op {
            MemOp::Put { key, table } => {
                let snap = db.snapshot(current).unwrap();
                let f = MemoryFact::new(format!("k{key}"), FactKind::ColumnStats, vec![ScopeRef::table(TABLES[table])], json!({}), "u");
                mem.put(f, &snap).map_err(|e| e.to_string())?;
                model.insert(key, (table, snap.version_of(TABLES[table]).unwrap(), current));
            }
            MemOp::Write { table } => bump(&db, TABLES[table]),
            MemOp::Fork => branches.push(db.fork(main).unwrap()),
            MemOp::Read { branch } => current = branches[branch % branches.len()],
        }
        let snap = db.snapshot(current).unwrap();
        for key in 0..KEYS {
            let got = mem.lookup(&MemoryQuery::by_key(format!("k{key}"), "u"), &snap);
            match model.get(&key) {
                None if got.is_empty() => {}
                None => return Err(format!("step {i} {op:?}: k{key} appeared from nowhere")),
                Some(&(t, v, b)) => {
                    let want = b != current || snap.version_of(TABLES[t]) != Some(v);
                    if got.first().map(|f| f.stale) != Some(want) {
                        return Err(format!("step {i} {op:?}: k{key} stale should be {want}, got {got:?}"));
                    }
                }
            }
            let live = mem.history(&format!("k{key}")).iter().filter(|f| !f.stale).count();
            if live > 1 {
                return Err(format!("step {i}: k{key} has {live} live versions"));
            }
        }
        for t in TABLES {
            for f in mem.lookup(&MemoryQuery::by_scope(ScopeRef::table(t), "u"), &snap) {
                let behind = f.data_versions.iter().any(|(tab, v)| snap.version_of(tab) != Some(*v));
                if f.stale || f.branch != current || behind {
                    return Err(format!("step {i} {op:?}: scope lookup returned {f:?}"));
                }
            }
        }
    }
    Ok(())
}
