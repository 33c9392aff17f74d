//! One probe carrying several speculative queries: overlapping sub-plans are
//! computed once, a k-of-n group runs only its cheapest member, and the
//! metadata phase gets sampled answers.
//!
//!     cargo run --example speculative_batch

use probekernel::workload::{gen_dataset, Scale};
use probekernel::Kernel;

const PROBE: &str = r#"{
  "probe_id": "p1", "agent_id": "explorer", "principal": "analyst", "turn": 0, "kind": "sql_batch",
  "queries": [
    {"qid": "west", "sql": "SELECT st.state, SUM(s.amount) FROM sales s JOIN stores st ON s.store_id = st.store_id WHERE st.region = 'West' GROUP BY st.state"},
    {"qid": "west2", "sql": "SELECT t.state, SUM(x.amount) FROM stores t JOIN sales x ON x.store_id = t.store_id WHERE t.region = 'West' GROUP BY t.state"},
    {"qid": "count_a", "sql": "SELECT COUNT(*) FROM sales"},
    {"qid": "count_b", "sql": "SELECT COUNT(*) FROM sales s JOIN stores st ON s.store_id = st.store_id"},
    {"qid": "avg", "sql": "SELECT AVG(amount) FROM sales", "accuracy": 0.1}
  ],
  "brief": {"phase": "column_statistics", "goal": "which western states sell the most",
            "k_of_n": [{"k": 1, "qids": ["count_a", "count_b"]}]}
}"#;

fn main() -> probekernel::Result<()> {
    let db = gen_dataset(42, Scale::Small).database()?;
    let kernel = Kernel::new(db);
    let resp = kernel.handle_wire(PROBE.as_bytes());
    if let Some(e) = &resp.error {
        eprintln!("{}: {}", e.code, e.message);
        return Ok(());
    }
    for o in &resp.outcomes {
        let rows = o.rows().map(|r| r.len()).unwrap_or(0);
        println!("{:8} {:?} via {} ({rows} rows){}", o.qid, o.status, o.action, o.reason.as_deref().map(|r| format!(": {r}")).unwrap_or_default());
        if let Some(est) = &o.estimate {
            for a in &est.aggregates {
                println!("         {} ~ {} (se {:?}, fraction {})", a.aggregate, a.point, a.std_error, a.sample_fraction);
            }
        }
    }
    let s = resp.stats;
    println!(
        "operators: {} total, {} executed, {} answered from shared results",
        s.total_operator_count, s.executed_operator_count, s.cache_hit_operator_count
    );
    Ok(())
}
