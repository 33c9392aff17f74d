mod common;

use std::collections::HashMap;

use common::*;
use probekernel::catalog::{ColumnDef, Schema};
use probekernel::planner::{
    canonicalize, enumerate_subplans, estimate_cost, fingerprint, fnv1a64, locate, parse_sql, subexpression_stats,
    LocateKind, LogicalPlan, NodeKind,
};
use probekernel::protocol::LocateScope;
use probekernel::similarity::TrigramScorer;
use probekernel::{BranchId, DataType, Database, Executor, Value};
use proptest::prelude::*;

fn kinds(p: &LogicalPlan) -> Vec<NodeKind> {
    // Post-order lists leaves first: the data-flow order.
    enumerate_subplans(p).into_iter().map(|s| s.node.kind()).collect()
}

fn corpus() -> Vec<String> {
    let mut out: Vec<String> = [
        "SELECT COUNT(*) FROM sales",
        "SELECT * FROM sales",
        "SELECT state FROM sales",
        "SELECT DISTINCT state FROM sales",
        "SELECT state, COUNT(*) FROM sales GROUP BY state",
        "SELECT state, SUM(amount) FROM sales GROUP BY state ORDER BY state",
        "SELECT state, AVG(amount) FROM sales WHERE amount > 10 GROUP BY state",
        "SELECT * FROM sales WHERE state = 'California'",
        "SELECT * FROM sales WHERE state = 'California' AND amount > 50",
        "SELECT * FROM sales WHERE amount > 50 AND state = 'California'",
        "SELECT * FROM sales WHERE state = 'Texas' OR state = 'Oregon'",
        "SELECT * FROM sales WHERE state IN ('Texas', 'Oregon')",
        "SELECT * FROM sales WHERE state LIKE 'New%'",
        "SELECT * FROM sales WHERE state NOT LIKE 'New%'",
        "SELECT * FROM sales WHERE SEMANTIC_LIKE(state, 'calif', 0.2)",
        "SELECT sale_id FROM sales ORDER BY amount DESC LIMIT 5",
        "SELECT sale_id FROM sales LIMIT 5",
        "SELECT s.sale_id, st.region FROM sales s JOIN stores st ON s.store_id = st.store_id",
        "SELECT x.sale_id, y.region FROM sales x JOIN stores y ON x.store_id = y.store_id",
        "SELECT st.region, SUM(s.amount) FROM sales s JOIN stores st ON s.store_id = st.store_id GROUP BY st.region",
        "SELECT st.region, COUNT(*) FROM stores st JOIN sales s ON st.store_id = s.store_id WHERE s.amount > 20 GROUP BY st.region",
        "SELECT MIN(amount), MAX(amount) FROM sales",
        "SELECT COUNT(DISTINCT state) FROM sales",
        "SELECT * FROM sales WHERE amount IS NULL",
        "SELECT * FROM sales WHERE NOT (amount < 5)",
        "SELECT name FROM catalog_tables",
        "SELECT column_name FROM catalog_columns WHERE table_name = 'sales'",
        "SELECT region FROM stores WHERE state = 'Oregon'",
        "SELECT region, COUNT(*) FROM stores GROUP BY region",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for s in STATES {
        out.push(format!("SELECT COUNT(*) FROM sales WHERE state = '{s}'"));
        out.push(format!("SELECT store_id FROM stores WHERE state = '{s}' ORDER BY store_id"));
    }
    for n in [0, 1, 10, 25, 99] {
        out.push(format!("SELECT sale_id FROM sales WHERE amount >= {n}"));
        out.push(format!("SELECT sale_id FROM sales WHERE amount >= {n}.5 LIMIT 3"));
    }
    out
}

#[test]
fn node_shapes() {
    let db = sales_db(20);
    assert_eq!(kinds(&plan(&db, "SELECT COUNT(*) FROM sales")), vec![NodeKind::Scan, NodeKind::Aggregate]);
    assert_eq!(
        kinds(&plan(&db, "SELECT state FROM sales LIMIT 5")),
        vec![NodeKind::Scan, NodeKind::Project, NodeKind::Other]
    );
    let cat = plan(&db, "SELECT name FROM catalog_tables");
    let mut scanned = Vec::new();
    cat.walk(&mut |n| {
        if let LogicalPlan::Scan { table, .. } = n {
            scanned.push(table.clone());
        }
    });
    assert_eq!(scanned, vec!["catalog_tables".to_string()]);
}

#[test]
fn canonical_forms_coincide() {
    let db = sales_db(20);
    let same = |a: &str, b: &str| {
        let (pa, pb) = (plan(&db, a), plan(&db, b));
        assert_eq!(pa.canonical_text(), pb.canonical_text(), "{a} vs {b}");
        assert_eq!(fingerprint(&pa), fingerprint(&pb));
    };
    same("SELECT * FROM sales WHERE state = 'Texas' AND amount = 1", "SELECT * FROM sales WHERE amount = 1 AND state = 'Texas'");
    same("SELECT * FROM sales WHERE amount = 1 OR amount = 2", "SELECT * FROM sales WHERE amount = 2 OR amount = 1");
    same(
        "SELECT s.sale_id FROM sales s JOIN stores t ON s.store_id = t.store_id",
        "SELECT s.sale_id FROM stores t JOIN sales s ON t.store_id = s.store_id",
    );
    same("SELECT s.amount FROM sales s WHERE s.amount > 3", "SELECT x.amount FROM sales x WHERE x.amount > 3");
    same("SELECT amount FROM sales WHERE amount > 007", "SELECT amount FROM sales WHERE amount > 7");
    same("select AMOUNT from SALES", "SELECT amount FROM sales");
    let differ = |a: &str, b: &str| assert_ne!(fingerprint(&plan(&db, a)), fingerprint(&plan(&db, b)), "{a} vs {b}");
    differ("SELECT * FROM sales WHERE amount > 1", "SELECT * FROM sales WHERE amount > 2");
    differ("SELECT state FROM sales", "SELECT DISTINCT state FROM sales");
}

#[test]
fn empty_filter_differs_from_no_filter() {
    let db = sales_db(5);
    let scan = plan(&db, "SELECT * FROM sales");
    let filtered = match &scan {
        LogicalPlan::Project { exprs, labels, input } => LogicalPlan::Project {
            exprs: exprs.clone(),
            labels: labels.clone(),
            input: Box::new(LogicalPlan::Filter {
                predicate: probekernel::planner::Expr::Literal(Value::Bool(true)),
                input: input.clone(),
            }),
        },
        other => LogicalPlan::Filter {
            predicate: probekernel::planner::Expr::Literal(Value::Bool(true)),
            input: Box::new(other.clone()),
        },
    };
    assert_ne!(fingerprint(&scan), fingerprint(&canonicalize(&filtered)));
}

#[test]
fn canonicalization_is_idempotent_and_preserves_results() {
    let db = sales_db(400);
    let snap = db.snapshot(BranchId::MAINLINE).unwrap();
    for sql in corpus() {
        let raw = parse_sql(&sql, &snap).unwrap();
        let once = canonicalize(&raw);
        assert_eq!(canonicalize(&once), once, "{sql}");
        let a = Executor::new(&snap).execute(&raw).unwrap();
        let b = Executor::new(&snap).execute(&once).unwrap();
        if sql.contains("LIMIT") && !sql.contains("ORDER BY") {
            assert_eq!(a.rows.len(), b.rows.len(), "{sql}");
        } else {
            assert!(a.same_rows(&b), "{sql}");
        }
    }
}

#[test]
fn fingerprints_are_sound_over_the_corpus() {
    let db = sales_db(10);
    let mut by_fp: HashMap<u64, String> = HashMap::new();
    let mut texts = 0;
    for sql in corpus() {
        let p = plan(&db, &sql);
        for s in enumerate_subplans(&p) {
            let text = s.node.canonical_text();
            let fp = fingerprint(s.node);
            assert_eq!(fp.value, fnv1a64(text.as_bytes()));
            assert_eq!(fp.canonical_text, text);
            match by_fp.get(&fp.value) {
                Some(t) => assert_eq!(t, &text, "collision"),
                None => {
                    texts += 1;
                    by_fp.insert(fp.value, text);
                }
            }
        }
    }
    assert!(texts > 50);
    // One-byte edits of every distinct text hash apart.
    for text in by_fp.values() {
        let mut b = text.clone().into_bytes();
        let last = b.len() - 1;
        b[last] ^= 1;
        assert_ne!(fnv1a64(&b), fnv1a64(text.as_bytes()));
    }
}

#[test]
fn subplan_enumeration() {
    let db = sales_db(10);
    let chain = plan(&db, "SELECT state FROM sales LIMIT 5");
    let mut sizes: Vec<usize> = enumerate_subplans(&chain).iter().map(|s| s.size).collect();
    sizes.sort();
    assert_eq!(sizes, vec![1, 2, 3]);

    let scan = |t: &str| {
        let p = plan(&db, &format!("SELECT * FROM {t}"));
        p.children()[0].clone()
    };
    let join = LogicalPlan::HashJoin {
        on: vec![(
            probekernel::planner::Expr::col("sales.store_id"),
            probekernel::planner::Expr::col("stores.store_id"),
        )],
        left: Box::new(scan("sales")),
        right: Box::new(scan("stores")),
    };
    let mut sizes: Vec<usize> = enumerate_subplans(&join).iter().map(|s| s.size).collect();
    sizes.sort();
    assert_eq!(sizes, vec![1, 1, 3]);

    let four = plan(&db, "SELECT state FROM sales WHERE amount > 1 LIMIT 2");
    assert_eq!(four.node_count(), 4);
    let copies = vec![four; 50];
    let stats = subexpression_stats(&copies);
    assert_eq!(stats.total().total_count, 200);
    assert_eq!(stats.total().distinct_count, 4);
    for b in stats.by_size.values().chain(stats.by_kind.values()) {
        assert!((b.distinct_fraction() - 0.02).abs() < 1e-12);
    }
}

#[test]
fn literal_variants_share_only_the_scan() {
    let db = sales_db(10);
    let a = plan(&db, "SELECT * FROM sales WHERE amount > 1");
    let b = plan(&db, "SELECT * FROM sales WHERE amount > 2");
    let stats = subexpression_stats(&[a, b]);
    assert_eq!(stats.by_kind[&NodeKind::Scan].distinct_count, 1);
    assert_eq!(stats.by_kind[&NodeKind::Filter].distinct_count, 2);
}

#[test]
fn cost_examples() {
    let db = Database::new();
    let schema = |n: &str| {
        Schema::new(n, vec![ColumnDef::new("k", DataType::Int64), ColumnDef::new("v", DataType::Int64)])
    };
    db.create_table(schema("big")).unwrap();
    db.insert_rows("big", (0..1000).map(|i| vec![Value::Int(i), Value::Int(i % 7)]).collect()).unwrap();
    db.create_table(schema("l")).unwrap();
    db.create_table(schema("r")).unwrap();
    db.insert_rows("l", (0..100).map(|i| vec![Value::Int(i), Value::Int(0)]).collect()).unwrap();
    db.insert_rows("r", (0..100).map(|i| vec![Value::Int(i), Value::Int(1)]).collect()).unwrap();
    let snap = db.snapshot(BranchId::MAINLINE).unwrap();
    let est = |sql: &str| estimate_cost(&plan(&db, sql), &snap);

    let scan = est("SELECT k FROM big");
    let ts = scan.nodes.iter().find(|n| n.kind == NodeKind::Scan).unwrap();
    assert_eq!(ts.rows, 1000.0);

    let filt = est("SELECT k FROM big WHERE v = 3");
    let fi = filt.nodes.iter().find(|n| n.kind == NodeKind::Filter).unwrap();
    assert_eq!(fi.rows, 100.0);

    let j = est("SELECT l.k FROM l JOIN r ON l.k = r.k");
    let hj = j.nodes.iter().find(|n| n.kind == NodeKind::HashJoin).unwrap();
    assert_eq!(hj.rows, 100.0);

    let range = est("SELECT k FROM big WHERE v > 3 AND v < 6");
    assert!((range.rows - 1000.0 * 0.3 * 0.3).abs() < 1e-9);
    let or = est("SELECT k FROM big WHERE v = 1 OR v = 2 OR v = 3");
    assert!((or.rows - 300.0).abs() < 1e-9);
}

#[test]
fn locate_ranks_the_closer_table_first() {
    let db = Database::new();
    db.create_table(Schema::new("electronic_goods", vec![ColumnDef::new("sku", DataType::Text)])).unwrap();
    db.create_table(Schema::new("employees", vec![ColumnDef::new("name", DataType::Text)])).unwrap();
    db.insert_rows("electronic_goods", vec![vec![Value::from("tv")], vec![Value::from("electronics")]]).unwrap();
    let snap = db.snapshot(BranchId::MAINLINE).unwrap();
    let tables = locate("electronics", &snap, &[LocateScope::TableNames], None, &TrigramScorer).unwrap();
    assert_eq!(tables[0].table, "electronic_goods");
    assert!(tables.iter().all(|m| m.kind == LocateKind::Table && m.score > 0.0));
    if let Some(e) = tables.iter().find(|m| m.table == "employees") {
        assert!(e.score < tables[0].score);
    }
    let cells = locate("electronics", &snap, &[LocateScope::Cells], Some(1), &TrigramScorer).unwrap();
    assert_eq!(cells.len(), 1);
    assert_eq!(cells[0].score, 1.0);
    assert_eq!(cells[0].kind, LocateKind::Cell);
    assert!(locate("qqqq", &snap, &LocateScope::ALL, None, &TrigramScorer).unwrap().is_empty());
    assert_eq!(locate("  ", &snap, &LocateScope::ALL, None, &TrigramScorer).unwrap_err().code(), "invalid_locate");
}

fn arb_where() -> impl Strategy<Value = Vec<String>> {
    let conj = prop_oneof![
        (0i64..100).prop_map(|n| format!("amount > {n}")),
        (0i64..100).prop_map(|n| format!("amount <= {n}")),
        (0usize..6).prop_map(|i| format!("state = '{}'", STATES[i])),
        (0i64..12).prop_map(|n| format!("store_id <> {n}")),
        Just("state LIKE '%o%'".to_string()),
        Just("amount IS NOT NULL".to_string()),
    ];
    proptest::collection::vec(conj, 1..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn stats_conserve_node_counts(picks in proptest::collection::vec(0usize..40, 1..30)) {
        let db = sales_db(5);
        let c = corpus();
        let plans: Vec<LogicalPlan> = picks.iter().map(|&i| plan(&db, &c[i % c.len()])).collect();
        let stats = subexpression_stats(&plans);
        let nodes: usize = plans.iter().map(|p| p.node_count()).sum();
        prop_assert_eq!(stats.total().total_count as usize, nodes);
        let by_kind: u64 = stats.by_kind.values().map(|b| b.total_count).sum();
        prop_assert_eq!(by_kind as usize, nodes);
        for b in stats.by_size.values() {
            prop_assert!(b.distinct_count >= 1 && b.distinct_count <= b.total_count);
        }
    }

    #[test]
    fn adding_a_conjunct_never_raises_estimates(conjs in arb_where(), extra in arb_where()) {
        let db = sales_db(300);
        let snap = db.snapshot(BranchId::MAINLINE).unwrap();
        let base = format!("SELECT sale_id FROM sales WHERE {}", conjs.join(" AND "));
        let more = format!("{base} AND {}", extra[0]);
        let a = estimate_cost(&plan(&db, &base), &snap);
        let b = estimate_cost(&plan(&db, &more), &snap);
        prop_assert!(b.rows <= a.rows + 1e-9);
        let fa = a.nodes.iter().find(|n| n.kind == NodeKind::Filter).unwrap().rows;
        let fb = b.nodes.iter().find(|n| n.kind == NodeKind::Filter).unwrap().rows;
        prop_assert!(fb <= fa + 1e-9);
    }

    #[test]
    fn conjunct_order_never_changes_the_fingerprint(conjs in arb_where(), rot in 0usize..5) {
        let db = sales_db(5);
        let mut r = conjs.clone();
        let k = rot % r.len();
        r.rotate_left(k);
        let a = plan(&db, &format!("SELECT sale_id FROM sales WHERE {}", conjs.join(" AND ")));
        let b = plan(&db, &format!("SELECT sale_id FROM sales WHERE {}", r.join(" AND ")));
        prop_assert_eq!(fingerprint(&a), fingerprint(&b));
    }
}
