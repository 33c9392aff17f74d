mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::Arc;

use common::*;
use probekernel::protocol::OutcomeStatus;
use probekernel::server::{spawn_tcp, HttpServer};
use probekernel::{Error, Kernel, ProbeResponse, Value};
use serde_json::json;

fn kernel(n: usize) -> Arc<Kernel> {
    Arc::new(Kernel::new(sales_db(n)))
}

struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    fn connect(addr: SocketAddr) -> Client {
        let writer = TcpStream::connect(addr).unwrap();
        Client { reader: BufReader::new(writer.try_clone().unwrap()), writer }
    }

    fn send_raw(&mut self, line: &str) -> ProbeResponse {
        self.writer.write_all(line.as_bytes()).unwrap();
        self.writer.write_all(b"\n").unwrap();
        let mut buf = String::new();
        self.reader.read_line(&mut buf).unwrap();
        assert!(buf.ends_with('\n'));
        serde_json::from_str(&buf).unwrap_or_else(|e| panic!("{e}: {buf}"))
    }

    fn send(&mut self, doc: serde_json::Value) -> ProbeResponse {
        self.send_raw(&doc.to_string())
    }
}

fn count_probe(id: &str, branch: u64) -> serde_json::Value {
    json!({"probe_id": id, "agent_id": id, "principal": "u", "turn": 0, "kind": "sql_batch", "branch": branch,
        "queries": [{"qid": "n", "sql": "SELECT COUNT(*) FROM sales"}],
        "brief": {"phase": "full_solution"}})
}

fn count_of(r: &ProbeResponse) -> i64 {
    let o = r.outcome("n").unwrap_or_else(|| panic!("{r:?}"));
    match o.rows().unwrap()[0][0] {
        Value::Int(n) => n,
        ref v => panic!("{v:?}"),
    }
}

#[test]
fn tcp_round_trip_and_bad_lines_keep_the_connection() {
    let (addr, _h) = spawn_tcp(kernel(50), "127.0.0.1:0").unwrap();
    let mut c = Client::connect(addr);
    let r = c.send(count_probe("p1", 0));
    assert_eq!(r.probe_id, "p1");
    assert!(r.error.is_none());
    assert_eq!(r.outcomes[0].status, OutcomeStatus::Result);
    assert_eq!(count_of(&r), 50);

    let bad = c.send_raw("{not json");
    assert_eq!(bad.error.unwrap().code, "malformed_document");
    let missing = c.send(json!({"probe_id": "p2", "kind": "sql_batch"}));
    let code = missing.error.unwrap().code;
    assert!(Error::all_codes().contains(&code.as_str()), "{code}");

    // Blank lines are skipped, the connection still answers.
    c.writer.write_all(b"\n  \n").unwrap();
    assert_eq!(count_of(&c.send(count_probe("p3", 0))), 50);
}

#[test]
fn concurrent_clients_see_only_their_own_branch() {
    let k = kernel(200);
    let (addr, _h) = spawn_tcp(k.clone(), "127.0.0.1:0").unwrap();
    let handles: Vec<_> = (0..8u64)
        .map(|i| {
            std::thread::spawn(move || {
                let mut c = Client::connect(addr);
                let fork = c.send(json!({"probe_id": format!("f{i}"), "agent_id": format!("a{i}"), "principal": "u",
                    "turn": 0, "kind": "branch_op", "op": "fork", "branch": 0, "brief": {"phase": "partial_solution"}}));
                let b = fork.branch_op.unwrap_or_else(|| panic!("{:?}", fork.error)).branch.0;
                let rows: Vec<_> = (0..=i).map(|j| json!([100_000 + i * 100 + j, 1, "Texas", 1.0])).collect();
                let w = c.send(json!({"probe_id": format!("w{i}"), "agent_id": format!("a{i}"), "principal": "u",
                    "turn": 1, "kind": "branch_op", "op": "write", "branch": b, "table": "sales", "rows": rows,
                    "brief": {"phase": "partial_solution"}}));
                assert!(w.error.is_none(), "{:?}", w.error);
                for t in 0..5 {
                    let r = c.send(count_probe(&format!("c{i}-{t}"), b));
                    assert_eq!(count_of(&r), 200 + i as i64 + 1);
                }
                b
            })
        })
        .collect();
    let mut branches: Vec<u64> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    branches.sort_unstable();
    branches.dedup();
    assert_eq!(branches.len(), 8);
    let main = probekernel::BranchId::MAINLINE;
    assert_eq!(k.database().snapshot(main).unwrap().row_count("sales").unwrap(), 200);
}

fn http(addr: SocketAddr, method: &str, path: &str, body: &str) -> (u16, String) {
    let mut s = TcpStream::connect(addr).unwrap();
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: localhost\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    let status = out.split_whitespace().nth(1).unwrap().parse().unwrap();
    let body = out.split_once("\r\n\r\n").map(|x| x.1.to_string()).unwrap_or_default();
    (status, body)
}

#[test]
fn http_probe_endpoint() {
    let server = HttpServer::start(kernel(30), "127.0.0.1:0", 2).unwrap();
    let (status, body) = http(server.addr, "POST", "/probe", &count_probe("h", 0).to_string());
    assert_eq!(status, 200);
    let r: ProbeResponse = serde_json::from_str(&body).unwrap();
    assert_eq!(r.probe_id, "h");
    assert_eq!(count_of(&r), 30);

    let (status, body) = http(server.addr, "POST", "/probe", "[1,2");
    assert_eq!(status, 200);
    let r: ProbeResponse = serde_json::from_str(&body).unwrap();
    assert_eq!(r.error.unwrap().code, "malformed_document");

    assert_eq!(http(server.addr, "POST", "/other", "{}").0, 404);
    assert_eq!(http(server.addr, "GET", "/probe", "").0, 405);
    server.stop();
}

#[test]
fn tcp_and_http_answer_identically() {
    let k = kernel(40);
    let (addr, _h) = spawn_tcp(k.clone(), "127.0.0.1:0").unwrap();
    let server = HttpServer::start(k, "127.0.0.1:0", 1).unwrap();
    let doc = json!({"probe_id": "s", "agent_id": "z", "principal": "u", "turn": 0, "kind": "sql_batch",
        "queries": [{"qid": "n", "sql": "SELECT state, SUM(amount) FROM sales GROUP BY state ORDER BY state"}],
        "brief": {"phase": "full_solution"}});
    let via_tcp = Client::connect(addr).send(doc.clone());
    let mut second = doc.clone();
    second["probe_id"] = json!("s2");
    second["agent_id"] = json!("y");
    second["principal"] = json!("w");
    let (_, body) = http(server.addr, "POST", "/probe", &second.to_string());
    let via_http: ProbeResponse = serde_json::from_str(&body).unwrap();
    assert_eq!(via_tcp.outcomes[0].rows(), via_http.outcomes[0].rows());
    assert_eq!(via_tcp.outcomes[0].rows().unwrap()[0][0], Value::from("California"));
    server.stop();
}
