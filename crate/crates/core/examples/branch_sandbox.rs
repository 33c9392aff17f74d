//! Copy-on-write branches: fork a 100k-row table, try changes in isolation,
//! merge one branch back, watch a conflicting one get refused, roll back.
//!
//!     cargo run --example branch_sandbox

use probekernel::branch::WriteOp;
use probekernel::workload::{gen_dataset, Scale};
use probekernel::{BranchId, Value};

fn count(db: &probekernel::Database, b: BranchId) -> probekernel::Result<usize> {
    db.snapshot(b)?.row_count("sales")
}

fn main() -> probekernel::Result<()> {
    let db = gen_dataset(1, Scale::Medium).database()?;
    let main = BranchId::MAINLINE;
    let before = db.space_stats();
    let a = db.fork(main)?;
    let b = db.fork(main)?;
    let after = db.space_stats();
    println!(
        "forked {a} and {b}: {} new segments, {} new chunk maps",
        after.segments_allocated - before.segments_allocated,
        after.chunk_maps - before.chunk_maps
    );

    let row = |id: i64, amount: f64| {
        WriteOp::Upsert(vec![
            Value::Int(id),
            Value::Int(1),
            Value::Int(1),
            Value::Int(1),
            Value::Int(1),
            Value::Float(amount),
            Value::Int(1),
            "online".into(),
        ])
    };
    let r = db.branch_write(a, "sales", vec![row(0, 1.0), WriteOp::Delete(Value::Int(1))])?;
    println!("{a}: wrote 2 keys, copied {} chunk(s)", r.chunks_copied);
    db.branch_write(b, "sales", vec![row(0, 2.0)])?;
    println!("rows: main {}, {a} {}, {b} {}", count(&db, main)?, count(&db, a)?, count(&db, b)?);

    let m = db.merge(a, main)?;
    println!("merge {a} -> main: merged {}, {} change(s) applied", m.merged, m.applied);
    let m = db.merge(b, main)?;
    println!("merge {b} -> main: merged {}, conflicts {:?}", m.merged, m.conflicts);
    db.rollback(b)?;
    println!("rolled back {b}; main now has {} rows", count(&db, main)?);
    Ok(())
}
