//! Acceptance harness: one PASS/FAIL line per primary criterion.
//!
//!     cargo test --release --test acceptance
//!
//! Exits non-zero if any criterion fails.

mod common;

use std::collections::HashSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::fuzz::{check_document, fuzz_document, seed_documents};
use common::memmodel::{check_memory_schedule, random_mem_ops};
use common::whynot::{check_why_not, places_db, why_not_fixtures};
use common::*;
use probekernel::approx::execute_sampled;
use probekernel::branch::{WriteOp, CHUNK_CAPACITY};
use probekernel::config::Features;
use probekernel::trace::TraceWriter;
use probekernel::workload::{gen_dataset, gen_tasks, parallel_probe, workload_kernel, Scale, WorkloadMode};
use probekernel::{BranchId, Config, Database, Executor, Kernel, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn bin(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_probekernel"))
        .args(args)
        .env_remove("PROBEKERNEL_CONFIG")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("probekernel {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    String::from_utf8(out.stdout).map_err(|e| e.to_string())
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn json(s: &str) -> Result<serde_json::Value, String> {
    serde_json::from_str(s).map_err(|e| format!("{e}: {s}"))
}

fn redundancy_band(dir: &Path) -> Outcome {
    let start = Instant::now();
    let data = dir.join("workload");
    let trace = dir.join("parallel.ndjson");
    bin(&["gen-workload", "--tasks", "20", "--variants", "50", "--seed", "42", "--out", p(&data)])?;
    bin(&["replay", "--data", p(&data), "--mode", "parallel_50", "--trace", p(&trace)])?;
    let r = json(&bin(&["report", "--mode", "redundancy", "--trace", p(&trace), "--json"])?)?;
    let b = &r["from_size_2"];
    let (distinct, total) = (b["distinct_count"].as_f64().unwrap_or(0.0), b["total_count"].as_f64().unwrap_or(0.0));
    let fraction = distinct / total;
    let elapsed = start.elapsed();
    let msg = format!("{} tasks, size >= 2: {distinct}/{total} distinct = {fraction:.4}, {elapsed:.1?}", r["groups"]);
    if r["groups"] == 20 && total > 0.0 && fraction <= 0.20 && elapsed < Duration::from_secs(60) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn sharing_realization() -> Outcome {
    let start = Instant::now();
    let db = gen_dataset(42, Scale::Small).database().map_err(|e| e.to_string())?;
    let tasks = gen_tasks(20, 50, 42).map_err(|e| e.to_string())?;
    let (writer, buf) = TraceWriter::buffer();
    let on = workload_kernel(db.clone(), &Config::default(), &tasks, WorkloadMode::Parallel50).with_trace(writer);
    let off = Kernel::new(db.clone()).with_features(Features { memory: false, feedback: false, sharing: false });
    let snap = db.snapshot(BranchId::MAINLINE).map_err(|e| e.to_string())?;
    let (mut worst, mut compared) = (f64::INFINITY, 0);
    for t in &tasks {
        let probe = parallel_probe(t);
        let shared = on.handle(&probe);
        let plain = off.handle(&probe);
        let s = shared.stats;
        if s.total_operator_count == 0 {
            return Err(format!("{}: no operators counted", t.task_id));
        }
        for (a, b) in shared.outcomes.iter().zip(&plain.outcomes) {
            let (Some(x), Some(y)) = (a.result.as_ref(), b.result.as_ref()) else { continue };
            if !x.exact || !y.exact {
                continue;
            }
            let sql = &probe.query(&a.qid).expect("qid from probe").sql;
            let direct = Executor::new(&snap)
                .execute(&probekernel::planner::plan_sql(sql, &snap).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            if !x.same_rows(y) || !x.same_rows(&direct) {
                return Err(format!("{} {}: shared rows differ from the unshared run", t.task_id, a.qid));
            }
            compared += 1;
        }
        // Distinct sub-plans over all sizes: each must run at least once.
        let rec = buf.records().map_err(|e| e.to_string())?;
        let r = rec.last().expect("one record per probe");
        let subs: Vec<&str> = r.queries.iter().flat_map(|q| q.subplans.iter().map(|s| s.fingerprint.as_str())).collect();
        let distinct = subs.iter().collect::<HashSet<_>>().len() as f64 / subs.len() as f64;
        let ratio = s.cache_hit_operator_count as f64 / s.total_operator_count as f64;
        if ratio < 1.0 - distinct - 1e-12 {
            return Err(format!("{}: hit ratio {ratio:.4} < 1 - {distinct:.4}", t.task_id));
        }
        worst = worst.min(ratio - (1.0 - distinct));
    }
    let elapsed = start.elapsed();
    let msg = format!("{compared} exact results match, min margin over 1 - distinct {worst:.4}, {elapsed:.1?}");
    if compared > 0 && elapsed < Duration::from_secs(120) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn branch_isolation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xb4a);
    for i in 0..10_000 {
        let n = if i % 10 == 0 { rng.gen_range(0..=1000) } else { rng.gen_range(0..=60) };
        let init: Vec<(i64, i64)> = (0..n).map(|k| (k, rng.gen_range(-1000..1000))).collect();
        let len = rng.gen_range(1..40);
        let steps = random_schedule(&mut rng, len, (n + 8).max(8));
        check_schedule(&init, &steps).map_err(|e| format!("schedule {i} (n={n}): {e}"))?;
    }
    Ok("10000 schedules, 0 divergences".into())
}

fn big_table(n: i64) -> Database {
    load_branch_db(&(0..n).map(|k| (k, k)).collect::<Vec<_>>())
}

fn median(mut xs: Vec<Duration>) -> Duration {
    xs.sort();
    xs[xs.len() / 2]
}

fn fork_efficiency() -> Outcome {
    let db = big_table(100_000);
    let main = BranchId::MAINLINE;
    let before = db.space_stats();
    let forks: Vec<BranchId> = (0..1000).map(|_| db.fork(main).unwrap()).collect();
    let after = db.space_stats();
    if after.segments_allocated != before.segments_allocated {
        return Err(format!("1000 forks allocated {} segments", after.segments_allocated - before.segments_allocated));
    }
    // A run of at most ten consecutive keys spans at most two chunks.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0;
    for &b in &forks[..500] {
        let s0 = db.space_stats().segments_allocated;
        let start = rng.gen_range(0..100_000 - 10);
        let ops = (start..start + rng.gen_range(1..=10)).map(|k| WriteOp::Upsert(vec![Value::Int(k), Value::Int(-1)])).collect();
        db.branch_write(b, BRANCH_TABLE, ops).unwrap();
        worst = worst.max(db.space_stats().segments_allocated - s0);
    }
    if worst > 2 {
        return Err(format!("a 10-row write allocated {worst} segments"));
    }
    // Scattered keys copy one chunk per distinct chunk touched.
    let mut scattered = 0;
    for &b in &forks[500..] {
        let s0 = db.space_stats().segments_allocated;
        let keys: std::collections::BTreeSet<i64> = (0..10).map(|_| rng.gen_range(0..100_000)).collect();
        let chunks = keys.iter().map(|k| k / CHUNK_CAPACITY as i64).collect::<HashSet<_>>().len() as u64;
        let ops = keys.iter().map(|&k| WriteOp::Upsert(vec![Value::Int(k), Value::Int(-1)])).collect();
        db.branch_write(b, BRANCH_TABLE, ops).unwrap();
        let got = db.space_stats().segments_allocated - s0;
        if got > chunks {
            return Err(format!("scattered write over {chunks} chunks allocated {got} segments"));
        }
        scattered = scattered.max(got);
    }
    let mut empty = Vec::new();
    let mut full = Vec::new();
    for _ in 0..20 {
        let e = db.fork(main).unwrap();
        let t = Instant::now();
        db.rollback(e).unwrap();
        empty.push(t.elapsed());
        let f = db.fork(main).unwrap();
        let ops = (0..100_000).map(|k| WriteOp::Upsert(vec![Value::Int(k), Value::Int(k + 1)])).collect();
        db.branch_write(f, BRANCH_TABLE, ops).unwrap();
        let t = Instant::now();
        db.rollback(f).unwrap();
        full.push(t.elapsed());
        db.reclaim();
    }
    let (e, f) = (median(empty), median(full));
    // Sub-microsecond medians are clock noise; compare against 1 µs at least.
    let floor = e.max(Duration::from_micros(1));
    let msg = format!("0 segments for 1000 forks, <= {worst} per 10-row run ({scattered} scattered), rollback median {f:?} vs empty {e:?}");
    if f <= floor * 10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn estimator_quality() -> Outcome {
    let db = uniform_db(100_000);
    let snap = db.snapshot(BranchId::MAINLINE).unwrap();
    let exact = run(&db, "SELECT COUNT(*), SUM(amount) FROM u");
    let (count, sum) = (exact.rows[0][0].as_f64().unwrap(), exact.rows[0][1].as_f64().unwrap());
    let plan = plan(&db, "SELECT COUNT(*), SUM(amount) FROM u");
    let mut good = 0;
    for seed in 0..100 {
        let est = execute_sampled(&snap, &plan, 0.1, seed).unwrap();
        let c = est.aggregates[0].point.as_f64().unwrap();
        let s = est.aggregates[1].point.as_f64().unwrap();
        if (c - count).abs() / count <= 0.05 && (s - sum).abs() / sum <= 0.05 {
            good += 1;
        }
    }
    let full = execute_sampled(&snap, &plan, 1.0, 0).unwrap();
    let bit_exact = match (&full.result.rows[0][..], &exact.rows[0][..]) {
        ([Value::Int(a), Value::Float(x)], [Value::Int(b), Value::Float(y)]) => a == b && x.to_bits() == y.to_bits(),
        _ => false,
    };
    let msg = format!("{good}/100 seeds within 5%, fraction 1.0 bit-exact: {bit_exact}");
    if good >= 95 && bit_exact {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn memory_staleness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x57a1e);
    for i in 0..10_000 {
        let n = rng.gen_range(1..40);
        let ops = random_mem_ops(&mut rng, n);
        check_memory_schedule(&ops).map_err(|e| format!("case {i}: {e}"))?;
    }
    Ok("10000 schedules, no behind-version fact served as current".into())
}

fn why_not_soundness() -> Outcome {
    let db = places_db();
    let fixtures = why_not_fixtures(100, 2024);
    let (mut named, mut suggested) = (0, 0);
    for (i, fx) in fixtures.iter().enumerate() {
        let (n, s) = check_why_not(&db, fx, i as u64);
        named += n as usize;
        suggested += s as usize;
    }
    let msg = format!("culprit named {named}/100, intended value in top 5 {suggested}/100");
    if named == 100 && suggested >= 90 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn steering_reduction(dir: &Path) -> Outcome {
    let data = dir.join("workload");
    if !data.join("tasks.json").exists() {
        bin(&["gen-workload", "--tasks", "20", "--variants", "50", "--seed", "42", "--out", p(&data)])?;
    }
    let mut totals = Vec::new();
    for mode in ["sequential_scripted", "sequential_with_hints"] {
        let trace = dir.join(format!("{mode}.ndjson"));
        let s = json(&bin(&["replay", "--data", p(&data), "--mode", mode, "--trace", p(&trace)])?)?;
        totals.push(s["queries"].as_u64().ok_or("replay summary lacks queries")?);
    }
    let reduction = 1.0 - totals[1] as f64 / totals[0] as f64;
    let msg = format!("{} queries without hints, {} with: {:.1}% fewer", totals[0], totals[1], reduction * 100.0);
    if reduction >= 0.15 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn protocol_robustness() -> Outcome {
    let kernel = Kernel::new(sales_db(200));
    let seeds = seed_documents();
    let mut rng = ChaCha8Rng::seed_from_u64(0xf022);
    let mut codes = std::collections::BTreeMap::new();
    for i in 0..100_000 {
        let doc = fuzz_document(&mut rng, &seeds, i);
        let code = check_document(&kernel, &doc)?.unwrap_or_else(|| "ok".into());
        *codes.entry(code).or_insert(0) += 1;
    }
    let ok = codes.remove("ok").unwrap_or(0);
    Ok(format!("100000 documents, 0 crashes, {ok} answered, {} errors over {} codes", 100_000 - ok, codes.len()))
}

fn main() {
    // Panics inside the fuzzed handler are caught and reported; keep them quiet.
    std::panic::set_hook(Box::new(|_| {}));
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("redundancy band", Box::new(|| redundancy_band(dir.path()))),
        ("sharing realization", Box::new(sharing_realization)),
        ("branch isolation oracle", Box::new(branch_isolation)),
        ("fork/rollback efficiency", Box::new(fork_efficiency)),
        ("estimator quality", Box::new(estimator_quality)),
        ("memory staleness soundness", Box::new(memory_staleness)),
        ("why_not soundness", Box::new(why_not_soundness)),
        ("steering reduction", Box::new(|| steering_reduction(dir.path()))),
        ("protocol robustness", Box::new(protocol_robustness)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let t = Instant::now();
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match r {
            Ok(m) => println!("PASS {name}: {m} [{:.1?}]", t.elapsed()),
            Err(m) => {
                failed += 1;
                println!("FAIL {name}: {m} [{:.1?}]", t.elapsed());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
