//! Side-channel feedback: an empty result gets a why-not diagnosis with the
//! values the agent probably meant, an expensive query gets a cost warning,
//! and a query on orders points at the customers table.
//!
//!     cargo run --example steering_feedback

use probekernel::workload::{gen_dataset, Scale};
use probekernel::{Config, Kernel};

const PROBE: &str = r#"{
  "probe_id": "p1", "agent_id": "a", "principal": "analyst", "turn": 0, "kind": "sql_batch",
  "queries": [
    {"qid": "ca", "sql": "SELECT COUNT(*) FROM customers WHERE state = 'CA' AND segment = 'Enterprise'"},
    {"qid": "big", "sql": "SELECT c.state, SUM(o.order_total) FROM orders o JOIN customers c ON o.customer_id = c.customer_id GROUP BY c.state"}
  ],
  "brief": {"phase": "partial_solution", "goal": "enterprise customers in California"}
}"#;

fn main() -> probekernel::Result<()> {
    // Warn above 10k row-touches instead of the default million.
    let mut config = Config::default();
    config.engine.cost_warning_threshold = 10_000.0;
    let kernel = Kernel::from_config(gen_dataset(42, Scale::Small).database()?, &config)?;
    let resp = kernel.handle_wire(PROBE.as_bytes());
    for f in &resp.feedback {
        println!("[{}] {}: {}", f.kind.name(), f.target_qid.as_deref().unwrap_or("-"), f.message);
        println!("    {}", f.payload);
    }
    Ok(())
}
