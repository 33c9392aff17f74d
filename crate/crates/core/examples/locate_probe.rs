//! Corpus-wide search: find where a phrase lives (table names, columns,
//! cell values) before writing any SQL.
//!
//!     cargo run --example locate_probe -- "calif"

use probekernel::workload::{gen_dataset, Scale};
use probekernel::Kernel;
use serde_json::json;

fn main() -> probekernel::Result<()> {
    let phrase = std::env::args().nth(1).unwrap_or_else(|| "customer satisfaction".into());
    let kernel = Kernel::new(gen_dataset(42, Scale::Small).database()?);
    let doc = json!({
        "probe_id": "l1", "agent_id": "a", "principal": "analyst", "turn": 0, "kind": "locate",
        "brief": {"phase": "metadata_exploration", "goal": phrase},
        "scope": ["table_names", "column_names", "cells"], "top_k": 8
    });
    let resp = kernel.handle_wire(doc.to_string().as_bytes());
    if let Some(e) = resp.error {
        eprintln!("{}: {}", e.code, e.message);
        return Ok(());
    }
    for m in resp.locate.unwrap_or_default() {
        let col = m.column.map(|c| format!(".{c}")).unwrap_or_default();
        println!("{:.3}  {:?}  {}{col}  {:?}", m.score, m.kind, m.table, m.text);
    }
    Ok(())
}
