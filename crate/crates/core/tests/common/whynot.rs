//! Empty-result fixtures with a known culprit conjunct.

use std::sync::Arc;

use probekernel::catalog::{ColumnDef, Schema};
use probekernel::feedback::{diagnose_empty_result, FeedbackKind, WhyNotPayload};
use probekernel::{BranchId, DataType, Database, Executor, Row, Value};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const US_STATES: [(&str, &str); 50] = [
    ("AL", "Alabama"), ("AK", "Alaska"), ("AZ", "Arizona"), ("AR", "Arkansas"), ("CA", "California"),
    ("CO", "Colorado"), ("CT", "Connecticut"), ("DE", "Delaware"), ("FL", "Florida"), ("GA", "Georgia"),
    ("HI", "Hawaii"), ("ID", "Idaho"), ("IL", "Illinois"), ("IN", "Indiana"), ("IA", "Iowa"),
    ("KS", "Kansas"), ("KY", "Kentucky"), ("LA", "Louisiana"), ("ME", "Maine"), ("MD", "Maryland"),
    ("MA", "Massachusetts"), ("MI", "Michigan"), ("MN", "Minnesota"), ("MS", "Mississippi"), ("MO", "Missouri"),
    ("MT", "Montana"), ("NE", "Nebraska"), ("NV", "Nevada"), ("NH", "New Hampshire"), ("NJ", "New Jersey"),
    ("NM", "New Mexico"), ("NY", "New York"), ("NC", "North Carolina"), ("ND", "North Dakota"), ("OH", "Ohio"),
    ("OK", "Oklahoma"), ("OR", "Oregon"), ("PA", "Pennsylvania"), ("RI", "Rhode Island"), ("SC", "South Carolina"),
    ("SD", "South Dakota"), ("TN", "Tennessee"), ("TX", "Texas"), ("UT", "Utah"), ("VT", "Vermont"),
    ("VA", "Virginia"), ("WA", "Washington"), ("WV", "West Virginia"), ("WI", "Wisconsin"), ("WY", "Wyoming"),
];

pub const CITIES: [&str; 8] = ["Springfield", "Riverside", "Franklin", "Greenville", "Bristol", "Clinton", "Fairview", "Salem"];

pub const PLACES_ROWS: usize = 2000;

/// places(id, state, city, qty, price): every state and city spelled out,
/// qty in 0..1000.
pub fn places_db() -> Arc<Database> {
    let db = Database::new();
    db.create_table(
        Schema::new(
            "places",
            vec![
                ColumnDef::new("id", DataType::Int64),
                ColumnDef::new("state", DataType::Text),
                ColumnDef::new("city", DataType::Text),
                ColumnDef::new("qty", DataType::Int64),
                ColumnDef::new("price", DataType::Float64),
            ],
        )
        .with_primary_key("id"),
    )
    .unwrap();
    let rows: Vec<Row> = (0..PLACES_ROWS)
        .map(|i| {
            vec![
                Value::Int(i as i64),
                US_STATES[i % 50].1.into(),
                CITIES[(i / 50) % CITIES.len()].into(),
                Value::Int(((i * 13) % 1000) as i64),
                Value::Float(1.0 + ((i * 7) % 500) as f64 / 5.0),
            ]
        })
        .collect();
    db.insert_rows("places", rows).unwrap();
    Arc::new(db)
}

#[derive(Debug, Clone)]
pub struct WhyNotFixture {
    pub sql: String,
    /// Unqualified column of the culprit conjunct.
    pub column: &'static str,
    pub literal: Value,
    /// The value the agent meant.
    pub expected: Value,
    /// Row core of the query with the culprit removed.
    pub rest_sql: String,
}

fn quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn typo(rng: &mut ChaCha8Rng, s: &str) -> String {
    let mut c: Vec<char> = s.chars().collect();
    match rng.gen_range(0..4) {
        0 => {
            let i = rng.gen_range(1..c.len());
            c.remove(i);
        }
        1 => {
            let i = rng.gen_range(1..c.len() - 1);
            c.swap(i, i + 1);
        }
        2 => return s.to_lowercase(),
        _ => {
            let i = rng.gen_range(1..c.len());
            let d = c[i - 1];
            c.insert(i, d);
        }
    }
    c.into_iter().collect()
}

/// `n` fixtures; the first is the state = 'CA' case.
pub fn why_not_fixtures(n: usize, seed: u64) -> Vec<WhyNotFixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<&str> = US_STATES.iter().map(|s| s.1).collect();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let (column, literal, expected, culprit) = if k == 0 {
            ("state", Value::from("CA"), Value::from("California"), "state = 'CA'".to_string())
        } else {
            match rng.gen_range(0..4) {
                0 => {
                    let (abbr, full) = *US_STATES.choose(&mut rng).unwrap();
                    ("state", Value::from(abbr), Value::from(full), format!("state = {}", quote(abbr)))
                }
                1 => {
                    let full = *names.choose(&mut rng).unwrap();
                    let mut bad = typo(&mut rng, full);
                    while names.iter().any(|x| *x == bad) {
                        bad.push('x');
                    }
                    ("state", Value::from(bad.as_str()), Value::from(full), format!("state = {}", quote(&bad)))
                }
                2 => {
                    let city = *CITIES.choose(&mut rng).unwrap();
                    let mut bad = typo(&mut rng, city);
                    while CITIES.contains(&bad.as_str()) {
                        bad.push('x');
                    }
                    ("city", Value::from(bad.as_str()), Value::from(city), format!("city = {}", quote(&bad)))
                }
                _ => {
                    let over = rng.gen_range(1..50);
                    ("qty", Value::Int(999 + over), Value::Int(999), format!("qty = {}", 999 + over))
                }
            }
        };
        let mut innocent: Vec<String> = vec!["price > 2.5".into(), "id >= 10".into(), "qty < 950".into()];
        if column != "state" && rng.gen_bool(0.5) {
            innocent.push(format!("state = {}", quote(names.choose(&mut rng).unwrap())));
        }
        if column == "qty" {
            innocent.retain(|c| !c.starts_with("qty"));
        }
        innocent.shuffle(&mut rng);
        innocent.truncate(rng.gen_range(1..=innocent.len()));
        let rest_sql = format!("SELECT * FROM places WHERE {}", innocent.join(" AND "));
        let pos = rng.gen_range(0..=innocent.len());
        innocent.insert(pos, culprit);
        let head = if rng.gen_bool(0.5) { "*" } else { "COUNT(*)" };
        let sql = format!("SELECT {head} FROM places WHERE {}", innocent.join(" AND "));
        out.push(WhyNotFixture { sql, column, literal, expected, rest_sql });
    }
    out
}

/// (names the culprit, suggests the intended value in the top five).
pub fn check_why_not(db: &Database, fx: &WhyNotFixture, seed: u64) -> (bool, bool) {
    let snap = db.snapshot(BranchId::MAINLINE).unwrap();
    let p = super::plan(db, &fx.sql);
    let rows = Executor::new(&snap).execute(&p).unwrap().rows;
    assert!(probekernel::feedback::result_looks_empty(&p, &rows), "fixture not empty: {}", fx.sql);
    let Some(f) = diagnose_empty_result(&p, &snap, seed, Some("q")).unwrap() else { return (false, false) };
    assert_eq!(f.kind, FeedbackKind::WhyNot);
    let w: WhyNotPayload = serde_json::from_value(f.payload).unwrap();
    let named = w.column.as_deref().is_some_and(|c| c.rsplit('.').next() == Some(fx.column))
        && w.literal.as_ref() == Some(&fx.literal);
    (named, named && w.suggestions.contains(&fx.expected))
}
