//! Start the newline-delimited JSON server in process and talk to it the
//! way a remote agent would: one document per line, one response per line.
//!
//!     cargo run --example tcp_client

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::Arc;

use probekernel::server::spawn_tcp;
use probekernel::workload::{gen_dataset, Scale};
use probekernel::{Kernel, ProbeResponse};
use serde_json::json;

fn main() -> probekernel::Result<()> {
    let kernel = Arc::new(Kernel::new(gen_dataset(42, Scale::Small).database()?));
    let (addr, _server) = spawn_tcp(kernel, "127.0.0.1:0")?;
    let stream = TcpStream::connect(addr)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;

    let probe = json!({
        "probe_id": "t1", "agent_id": "remote", "principal": "analyst", "turn": 0, "kind": "sql_batch",
        "queries": [{"qid": "q1", "sql": "SELECT region, COUNT(*) FROM stores GROUP BY region ORDER BY region"}],
        "brief": {"phase": "metadata_exploration"}
    });
    for line in [probe.to_string(), "{\"probe_id\": 5}".to_string()] {
        writeln!(writer, "{line}")?;
        let mut resp = String::new();
        reader.read_line(&mut resp)?;
        let r: ProbeResponse = serde_json::from_str(&resp)?;
        match (&r.error, r.outcome("q1").and_then(|o| o.rows())) {
            (Some(e), _) => println!("error {}: {}", e.code, e.message),
            (None, Some(rows)) => {
                for row in rows {
                    println!("{}", row.iter().map(ToString::to_string).collect::<Vec<_>>().join("\t"));
                }
            }
            (None, None) => println!("{resp}"),
        }
    }
    Ok(())
}
