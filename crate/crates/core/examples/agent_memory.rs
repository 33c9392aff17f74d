//! Facts agents leave for each other: column statistics are shared across
//! principals, go stale when the table changes, and are found by topic.
//!
//!     cargo run --example agent_memory

use probekernel::memory::{FactKind, MemoryFact, MemoryQuery, MemoryStore, ScopeRef};
use probekernel::workload::{gen_dataset, Scale};
use probekernel::{BranchId, Value};
use serde_json::json;

fn main() -> probekernel::Result<()> {
    let db = gen_dataset(3, Scale::Small).database()?;
    let mem = MemoryStore::new();
    let snap = db.snapshot(BranchId::MAINLINE)?;

    let states = MemoryFact::new(
        "customers.state.values",
        FactKind::ColumnStats,
        vec![ScopeRef::column("customers", "state")],
        json!({"distinct": 10, "examples": ["California", "Texas", "New York"]}),
        "alice",
    )
    .with_note("state names are spelled out in full, e.g. California not CA");
    mem.put(states, &snap)?;
    let private = MemoryFact::new(
        "alice.orders.join",
        FactKind::JoinHint,
        vec![ScopeRef::table("orders")],
        json!({"join": "orders.customer_id = customers.customer_id"}),
        "alice",
    );
    mem.put(private, &snap)?;

    let found = mem.lookup(&MemoryQuery::by_similarity("how are states written", 3, "bob"), &snap);
    for f in &found {
        println!("bob finds {} ({:?}): {}", f.fact_key, f.kind, f.note);
    }
    println!("bob sees alice's note: {}", mem.get("alice.orders.join", &snap).is_some_and(|f| f.visible_to("bob")));

    db.insert_rows("customers", vec![vec![Value::Int(1_000_000), "New".into(), "Ohio".into(), "Consumer".into(), Value::Int(2024)]])?;
    let snap = db.snapshot(BranchId::MAINLINE)?;
    let f = mem.get("customers.state.values", &snap).expect("fact exists");
    println!("after an insert into customers the fact is stale: {}", f.stale);
    Ok(())
}
