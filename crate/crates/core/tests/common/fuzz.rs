//! Structure-aware mutation of probe documents.

use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Value as Json};

pub fn seed_documents() -> Vec<Json> {
    vec![
        json!({"probe_id":"p","agent_id":"a","principal":"u","turn":1,"kind":"sql_batch",
            "queries":[
                {"qid":"q1","sql":"SELECT COUNT(*) FROM sales","accuracy":0.2,"priority":1},
                {"qid":"q2","sql":"SELECT state, SUM(amount) FROM sales GROUP BY state","accuracy":"exact"},
                {"qid":"q3","sql":"SELECT * FROM sales WHERE state = 'CA' LIMIT 5"}],
            "brief":{"phase":"column_statistics","goal":"sales trend by state",
                "k_of_n":[{"k":1,"qids":["q1","q2"]}],
                "termination":[{"qid":"q3","criterion":"rowcount >= 2"}],
                "pairwise_priorities":[["q2","q1"]]}}),
        json!({"probe_id":"l","agent_id":"a","principal":"u","turn":2,"kind":"locate",
            "brief":{"phase":"metadata_exploration","goal":"california"},"scope":["table_names","cells"],"top_k":3}),
        json!({"probe_id":"f","agent_id":"a","principal":"u","turn":3,"kind":"branch_op","op":"fork","branch":0,
            "brief":{"phase":"partial_solution"}}),
        json!({"probe_id":"w","agent_id":"a","principal":"u","turn":4,"kind":"branch_op","op":"write","branch":1,
            "table":"sales","rows":[[100000,1,"Texas",2.5]],"delete":[3],"brief":{"phase":"partial_solution"}}),
        json!({"probe_id":"m","agent_id":"a","principal":"u","turn":5,"kind":"branch_op","op":"merge","branch":1,"target":0,
            "brief":{"phase":"full_solution"}}),
        json!({"probe_id":"j","agent_id":"b","principal":"v","turn":0,"kind":"sql_batch","branch":0,
            "queries":[{"qid":"a","sql":"SELECT st.region, AVG(s.amount) FROM sales s JOIN stores st ON s.store_id = st.store_id WHERE s.amount > 10 GROUP BY st.region ORDER BY st.region"},
                       {"qid":"b","sql":"SELECT DISTINCT state FROM stores","accuracy":0.05}],
            "brief":{"phase":"partial_solution","termination":[{"qid":"b","criterion":"jaccard_to(00000000000000aa) >= 0.9"}]}}),
    ]
}

const SQL: &[&str] = &[
    "SELECT COUNT(*) FROM sales",
    "SELECT * FROM sales WHERE state = 'CA'",
    "SELECT MIN(amount), MAX(amount) FROM sales WHERE amount BETWEEN 1 AND 2",
    "SELECT amount / 0 FROM sales",
    "SELECT * FROM nope",
    "SELECT nope FROM sales",
    "SELECT state FROM sales s JOIN stores st ON s.store_id = st.store_id",
    "SELECT SEMANTIC_LIKE(state, 'calif', 0.3) FROM sales",
    "SELECT * FROM sales WHERE SEMANTIC_LIKE(state, 'calif', 2.5)",
    "SELECT COUNT(DISTINCT state) FROM sales",
    "SELECT * FROM sales LIMIT 99999999999999999999",
    "SELECT 1e400 FROM sales",
    "SELECT ((((((((( FROM",
    "SELECT * FROM catalog_columns",
    "SELECT state, COUNT(*) FROM sales GROUP BY state ORDER BY COUNT(*) DESC LIMIT 3",
    "SELECT * FROM sales WHERE state IN ('Texas', 3, NULL)",
    "SELECT * FROM sales WHERE NOT (amount > 'x')",
    "SELECT amount FROM sales WHERE state LIKE '%a_%' OR amount IS NOT NULL",
    "",
    "\u{0}\u{ffff}",
];

const STRINGS: &[&str] = &[
    "", "x", "exact", "sql_batch", "locate", "branch_op", "fork", "merge", "write", "rollback",
    "metadata_exploration", "full_solution", "q1", "q2", "rowcount >= 10", "stddev(amount) < 0",
    "mean(amount) <", "jaccard_to(q1) >= 0.9", "min(state) = 'Texas'", "cells", "table_names", "sales",
    "\u{1F600}", "\\\"", "'; DROP TABLE sales; --",
];

fn random_scalar(rng: &mut impl Rng) -> Json {
    match rng.gen_range(0..12) {
        0 => Json::Null,
        1 => Json::Bool(rng.gen()),
        2 => json!(rng.gen_range(-3i64..10)),
        3 => json!(i64::MAX),
        4 => json!(u64::MAX),
        5 => json!(-1.5e308),
        6 => json!(rng.gen::<f64>() * 2.0 - 0.5),
        7 => json!(*STRINGS.choose(rng).unwrap()),
        8 => json!(*SQL.choose(rng).unwrap()),
        9 => json!([]),
        10 => json!({}),
        _ => {
            let len = rng.gen_range(0..12);
            json!((0..len).map(|_| rng.gen_range(' '..='~')).collect::<String>())
        }
    }
}

fn random_value(rng: &mut impl Rng, depth: usize) -> Json {
    if depth == 0 || rng.gen_bool(0.6) {
        return random_scalar(rng);
    }
    if rng.gen_bool(0.5) {
        Json::Array((0..rng.gen_range(0..4)).map(|_| random_value(rng, depth - 1)).collect())
    } else {
        let mut m = serde_json::Map::new();
        for _ in 0..rng.gen_range(0..4) {
            m.insert(STRINGS.choose(rng).unwrap().to_string(), random_value(rng, depth - 1));
        }
        Json::Object(m)
    }
}

/// Pick a random node by walking down from the root.
fn pick<'a>(v: &'a mut Json, rng: &mut impl Rng) -> &'a mut Json {
    let descend = match v {
        Json::Object(m) => !m.is_empty() && rng.gen_bool(0.7),
        Json::Array(a) => !a.is_empty() && rng.gen_bool(0.7),
        _ => false,
    };
    if !descend {
        return v;
    }
    match v {
        Json::Object(m) => {
            let k = m.keys().nth(rng.gen_range(0..m.len())).unwrap().clone();
            pick(m.get_mut(&k).unwrap(), rng)
        }
        Json::Array(a) => {
            let i = rng.gen_range(0..a.len());
            pick(&mut a[i], rng)
        }
        _ => unreachable!(),
    }
}

fn mutate_tree(doc: &mut Json, rng: &mut impl Rng) {
    match rng.gen_range(0..9) {
        // Delete a key or element.
        0 => {
            let node = pick(doc, rng);
            match node {
                Json::Object(m) if !m.is_empty() => {
                    let k = m.keys().nth(rng.gen_range(0..m.len())).unwrap().clone();
                    m.remove(&k);
                }
                Json::Array(a) if !a.is_empty() => {
                    a.remove(rng.gen_range(0..a.len()));
                }
                _ => {}
            }
        }
        // Add a key, possibly unknown.
        1 => {
            if let Json::Object(m) = pick(doc, rng) {
                let key = if rng.gen_bool(0.5) { "extra".to_string() } else { STRINGS.choose(rng).unwrap().to_string() };
                m.insert(key, random_value(rng, 2));
            }
        }
        // Replace a node.
        2 | 3 => *pick(doc, rng) = random_value(rng, 2),
        // Duplicate an array element (duplicate qids, repeated groups).
        4 => {
            if let Json::Array(a) = pick(doc, rng) {
                if let Some(x) = a.choose(rng).cloned() {
                    a.push(x);
                }
            }
        }
        // Swap in other queries.
        5 => {
            if let Some(Json::Array(qs)) = doc.get_mut("queries") {
                for q in qs.iter_mut() {
                    if let (Some(m), true) = (q.as_object_mut(), rng.gen_bool(0.5)) {
                        m.insert("sql".into(), json!(*SQL.choose(rng).unwrap()));
                    }
                }
            }
        }
        // Point brief references at qids that may not exist.
        6 => {
            if let Some(b) = doc.get_mut("brief").and_then(Json::as_object_mut) {
                let q = json!(*["q1", "q2", "q9", "a", ""].choose(rng).unwrap());
                match rng.gen_range(0..3) {
                    0 => {
                        b.insert("k_of_n".into(), json!([{"k": rng.gen_range(-1i64..4), "qids": [q.clone(), "q1"]}]));
                    }
                    1 => {
                        b.insert("termination".into(), json!([{"qid": q, "criterion": *STRINGS.choose(rng).unwrap()}]));
                    }
                    _ => {
                        b.insert("pairwise_priorities".into(), json!([[q, "q2"]]));
                    }
                }
            }
        }
        // Swap the probe kind or branch fields.
        7 => {
            let key = *["kind", "op", "branch", "target", "table", "top_k", "scope"].choose(rng).unwrap();
            if let Json::Object(m) = doc {
                m.insert(key.into(), random_scalar(rng));
            }
        }
        // Deep nesting.
        _ => {
            let mut v = Json::Null;
            for _ in 0..rng.gen_range(1..300) {
                v = json!([v]);
            }
            *pick(doc, rng) = v;
        }
    }
}

fn mutate_bytes(bytes: &mut Vec<u8>, rng: &mut impl Rng) {
    if bytes.is_empty() {
        bytes.push(rng.gen());
        return;
    }
    match rng.gen_range(0..4) {
        0 => bytes.truncate(rng.gen_range(0..bytes.len())),
        1 => {
            let i = rng.gen_range(0..bytes.len());
            bytes[i] ^= 1 << rng.gen_range(0..8);
        }
        2 => {
            let i = rng.gen_range(0..=bytes.len());
            bytes.insert(i, *[b'{', b'}', b'"', b',', b'\\', 0xff, 0xc3, b'\n'].choose(rng).unwrap());
        }
        _ => {
            let i = rng.gen_range(0..bytes.len());
            bytes.remove(i);
        }
    }
}

/// One mutated document; probe ids are made unique by `n` half the time.
pub fn fuzz_document(rng: &mut impl Rng, seeds: &[Json], n: u64) -> Vec<u8> {
    let mut doc = seeds.choose(rng).unwrap().clone();
    if let (Some(m), true) = (doc.as_object_mut(), rng.gen_bool(0.5)) {
        m.insert("probe_id".into(), json!(format!("fz{n}")));
    }
    for _ in 0..rng.gen_range(1..=3) {
        mutate_tree(&mut doc, rng);
    }
    let mut bytes = serde_json::to_vec(&doc).unwrap();
    if rng.gen_bool(0.2) {
        for _ in 0..rng.gen_range(1..=3) {
            mutate_bytes(&mut bytes, rng);
        }
    }
    bytes
}

/// Serve one document; fail on a panic, an unknown error code, or a response
/// that does not parse back as a response.
pub fn check_document(kernel: &probekernel::Kernel, wire: &[u8]) -> Result<Option<String>, String> {
    let resp = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| kernel.handle_wire(wire)))
        .map_err(|_| format!("panic on {}", String::from_utf8_lossy(wire)))?;
    let text = resp.to_json();
    serde_json::from_str::<probekernel::ProbeResponse>(&text).map_err(|e| format!("response does not parse ({e}): {text}"))?;
    match resp.error {
        Some(err) if !probekernel::Error::all_codes().contains(&err.code.as_str()) => {
            Err(format!("unknown code {} for {}", err.code, String::from_utf8_lossy(wire)))
        }
        Some(err) => Ok(Some(err.code)),
        None => Ok(None),
    }
}
