mod common;

use std::collections::BTreeMap;

use common::memmodel::*;
use common::*;
use probekernel::catalog::{ColumnDef, Schema};
use probekernel::memory::{FactKind, MemoryFact, MemoryQuery, MemoryStore, ScopeRef};
use probekernel::planner::fingerprint;
use probekernel::{BranchId, DataType, Database, Value};
use proptest::prelude::*;
use serde_json::json;

const MAIN: BranchId = BranchId::MAINLINE;

fn stats_fact(key: &str, principal: &str) -> MemoryFact {
    MemoryFact::new(key, FactKind::ColumnStats, vec![ScopeRef::column("sales", "state")], json!({"n_distinct": 6}), principal)
}

#[test]
fn column_stats_round_trip_by_scope() {
    let db = sales_db(20);
    let mem = MemoryStore::new();
    let snap = db.snapshot(MAIN).unwrap();
    let key = mem.put(stats_fact("sales.state.stats", "u"), &snap).unwrap();
    let got = mem.lookup(&MemoryQuery::by_scope(ScopeRef::column("sales", "state"), "u"), &snap);
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].fact_key, key);
    assert_eq!(got[0].data_versions.get("sales"), Some(&1));
    assert!(!got[0].stale);
    assert_eq!(mem.lookup(&MemoryQuery::by_scope(ScopeRef::table("sales"), "u"), &snap).len(), 1);
    assert!(mem.lookup(&MemoryQuery::by_scope(ScopeRef::column("sales", "amount"), "u"), &snap).is_empty());
    assert!(mem.lookup(&MemoryQuery::by_scope(ScopeRef::table("stores"), "u"), &snap).is_empty());
}

#[test]
fn reput_supersedes() {
    let db = sales_db(5);
    let mem = MemoryStore::new();
    let snap = db.snapshot(MAIN).unwrap();
    mem.put(stats_fact("k", "u"), &snap).unwrap();
    let mut newer = stats_fact("k", "u");
    newer.content = json!({"n_distinct": 7});
    mem.put(newer, &snap).unwrap();
    let cur = mem.lookup(&MemoryQuery::by_key("k", "u"), &snap);
    assert_eq!(cur[0].content["n_distinct"], 7);
    let hist = mem.history("k");
    assert_eq!(hist.len(), 2);
    assert!(hist[0].stale && !hist[1].stale);
    assert_eq!(mem.len(), 1);
}

#[test]
fn unknown_scope_and_bad_probe_keys_are_rejected() {
    let db = sales_db(5);
    let mem = MemoryStore::new();
    let snap = db.snapshot(MAIN).unwrap();
    let bad = MemoryFact::new("x", FactKind::JoinHint, vec![ScopeRef::table("nope")], json!({}), "u");
    assert_eq!(mem.put(bad, &snap).unwrap_err().code(), "unknown_table");
    let bad = MemoryFact::new("not-hex", FactKind::ProbeResult, vec![ScopeRef::table("sales")], json!({}), "u");
    assert!(mem.put(bad, &snap).is_err());
    let fp = fingerprint(&plan(&db, "SELECT COUNT(*) FROM sales")).hex();
    let ok = MemoryFact::new(fp.clone(), FactKind::ProbeResult, vec![ScopeRef::table("sales")], json!({"rows": [[5]]}), "u");
    assert_eq!(mem.put(ok, &snap).unwrap(), fp);
}

#[test]
fn writes_make_facts_stale_lazily() {
    let db = sales_db(5);
    let mem = MemoryStore::new();
    mem.put(stats_fact("k", "u"), &db.snapshot(MAIN).unwrap()).unwrap();
    bump(&db, "stores");
    assert!(!mem.get("k", &db.snapshot(MAIN).unwrap()).unwrap().stale);
    bump(&db, "sales");
    let snap = db.snapshot(MAIN).unwrap();
    assert!(mem.get("k", &snap).unwrap().stale);
    assert!(mem.lookup(&MemoryQuery::by_scope(ScopeRef::table("sales"), "u"), &snap).is_empty());
    assert!(mem.lookup(&MemoryQuery::by_key("k", "u"), &snap)[0].stale);
}

#[test]
fn schema_summaries_go_stale_when_tables_are_added() {
    let db = sales_db(5);
    let mem = MemoryStore::new();
    let f = MemoryFact::new("schema", FactKind::SchemaSummary, vec![ScopeRef::table("sales")], json!({}), "u")
        .with_note("sales lives in one table");
    mem.put(f, &db.snapshot(MAIN).unwrap()).unwrap();
    assert!(!mem.get("schema", &db.snapshot(MAIN).unwrap()).unwrap().stale);
    db.create_table(Schema::new("sales_2024", vec![ColumnDef::new("x", DataType::Int64)])).unwrap();
    assert!(mem.get("schema", &db.snapshot(MAIN).unwrap()).unwrap().stale);
}

#[test]
fn facts_are_stale_on_other_branches() {
    let db = sales_db(5);
    let mem = MemoryStore::new();
    mem.put(stats_fact("k", "u"), &db.snapshot(MAIN).unwrap()).unwrap();
    let b = db.fork(MAIN).unwrap();
    assert!(mem.get("k", &db.snapshot(b).unwrap()).unwrap().stale);
    assert!(!mem.get("k", &db.snapshot(MAIN).unwrap()).unwrap().stale);
}

#[test]
fn similarity_lookup_ranks_the_matching_note_first() {
    let db = Database::new();
    for t in ["employee_availability", "shifts", "payroll"] {
        db.create_table(Schema::new(t, vec![ColumnDef::new("id", DataType::Int64)])).unwrap();
    }
    let snap = db.snapshot(MAIN).unwrap();
    let mem = MemoryStore::new();
    let fact = |k: &str, t: &str, note: &str| {
        MemoryFact::new(k, FactKind::SchemaSummary, vec![ScopeRef::table(t)], json!({}), "u").with_note(note)
    };
    mem.put(fact("a", "employee_availability", "employee availability table"), &snap).unwrap();
    mem.put(fact("b", "shifts", "shift schedule per store"), &snap).unwrap();
    mem.put(fact("c", "payroll", "monthly payroll amounts"), &snap).unwrap();
    let got = mem.lookup(&MemoryQuery::by_similarity("where is employee availability stored", 3, "someone"), &snap);
    assert_eq!(got[0].fact_key, "a");
    assert!(got.len() <= 3);
    let one = mem.lookup(&MemoryQuery::by_similarity("where is employee availability stored", 1, "u"), &snap);
    assert_eq!(one.len(), 1);
}

#[test]
fn visibility_follows_kind_and_principal() {
    let db = sales_db(5);
    let snap = db.snapshot(MAIN).unwrap();
    let fp = fingerprint(&plan(&db, "SELECT COUNT(*) FROM sales")).hex();
    for kind in FactKind::ALL {
        let mem = MemoryStore::new();
        let key = if kind == FactKind::ProbeResult { fp.clone() } else { "k".to_string() };
        mem.put(MemoryFact::new(key.clone(), kind, vec![ScopeRef::table("sales")], json!({}), "alice"), &snap).unwrap();
        for (who, same) in [("alice", true), ("bob", false)] {
            let seen = !mem.lookup(&MemoryQuery::by_key(&key, who), &snap).is_empty();
            let want = same || matches!(kind, FactKind::SchemaSummary | FactKind::ColumnStats);
            assert_eq!(seen, want, "{kind:?} for {who}");
            let by_scope = !mem.lookup(&MemoryQuery::by_scope(ScopeRef::table("sales"), who), &snap).is_empty();
            assert_eq!(by_scope, want);
        }
    }
}

#[test]
fn revalidate_refreshes_from_reexecution() {
    let db = sales_db(30);
    let mem = MemoryStore::new();
    let sql = "SELECT COUNT(*) FROM sales";
    let fp = fingerprint(&plan(&db, sql)).hex();
    let rows = run(&db, sql).rows;
    let mut f = MemoryFact::new(fp.clone(), FactKind::ProbeResult, vec![ScopeRef::table("sales")], json!({ "rows": rows }), "u");
    f.sql = Some(sql.into());
    mem.put(f, &db.snapshot(MAIN).unwrap()).unwrap();
    let fresh = mem.revalidate(&fp, &db.snapshot(MAIN).unwrap(), None).unwrap();
    assert!(!fresh.stale);
    bump(&db, "sales");
    let snap = db.snapshot(MAIN).unwrap();
    assert!(mem.revalidate(&fp, &snap, None).unwrap().stale);
    let refresh = |old: &MemoryFact| -> probekernel::Result<MemoryFact> {
        let rows = run(&db, old.sql.as_deref().unwrap()).rows;
        let mut f = old.clone();
        f.content = json!({ "rows": rows });
        f.data_versions = BTreeMap::new();
        Ok(f)
    };
    let r = mem.revalidate(&fp, &snap, Some(&refresh)).unwrap();
    assert!(!r.stale);
    assert_eq!(r.rows().unwrap(), run(&db, sql).rows);
    assert_eq!(r.rows().unwrap(), vec![vec![Value::Int(31)]]);
    assert_eq!(mem.revalidate("missing", &snap, None).unwrap_err().code(), "unknown_fact");
}

#[test]
fn log_replay_reproduces_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("memory.ndjson");
    let db = sales_db(5);
    let snap = db.snapshot(MAIN).unwrap();
    {
        let mem = MemoryStore::open(&path).unwrap();
        mem.put(stats_fact("a", "u"), &snap).unwrap();
        mem.put(stats_fact("b", "v").with_note("second"), &snap).unwrap();
        mem.put(stats_fact("a", "u").with_note("newer"), &snap).unwrap();
    }
    let back = MemoryStore::open(&path).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back.history("a").len(), 2);
    assert!(back.history("a")[0].stale);
    assert_eq!(back.get("a", &snap).unwrap().note, "newer");
    let lines = std::fs::read_to_string(&path).unwrap();
    assert_eq!(lines.lines().count(), 3);
    // New facts continue the sequence.
    back.put(stats_fact("c", "u"), &snap).unwrap();
    let seqs: Vec<u64> = back.all().iter().map(|f| f.seq).collect();
    assert_eq!(seqs, vec![0, 1, 2, 3]);
}

fn arb_op() -> impl Strategy<Value = MemOp> {
    prop_oneof![
        3 => (0usize..KEYS, 0usize..2).prop_map(|(key, table)| MemOp::Put { key, table }),
        2 => (0usize..2).prop_map(|table| MemOp::Write { table }),
        1 => Just(MemOp::Fork),
        3 => (0usize..8).prop_map(|branch| MemOp::Read { branch }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn staleness_matches_version_model(ops in proptest::collection::vec(arb_op(), 1..40)) {
        if let Err(e) = check_memory_schedule(&ops) {
            prop_assert!(false, "{}", e);
        }
    }
}
