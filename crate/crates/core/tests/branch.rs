mod common;

use common::*;
use probekernel::branch::{BranchStatus, WriteOp, CHUNK_CAPACITY};
use probekernel::{BranchId, Database, Value};
use proptest::prelude::*;
use rand::SeedableRng;

const MAIN: BranchId = BranchId::MAINLINE;

fn table(n: i64) -> Database {
    let rows: Vec<(i64, i64)> = (0..n).map(|k| (k, k * 10)).collect();
    load_branch_db(&rows)
}

fn upsert(k: i64, v: i64) -> WriteOp {
    WriteOp::Upsert(vec![Value::Int(k), Value::Int(v)])
}

fn value_at(db: &Database, b: BranchId, k: i64) -> Option<i64> {
    read_real(db, b.0 as usize).unwrap().get(&k).copied()
}

#[test]
fn fork_allocates_no_segments() {
    let db = table(5000);
    let before = db.space_stats();
    let b = db.fork(MAIN).unwrap();
    let after = db.space_stats();
    assert_eq!(after.segments_allocated, before.segments_allocated);
    assert_eq!(after.live_segments, before.live_segments);
    assert_eq!(read_real(&db, b.0 as usize), read_real(&db, 0));
}

#[test]
fn fork_of_fork_reads_fall_through() {
    let db = table(100);
    let a = db.fork(MAIN).unwrap();
    db.branch_write(a, BRANCH_TABLE, vec![upsert(1, -1)]).unwrap();
    let b = db.fork(a).unwrap();
    let info = db.branch_info(b).unwrap();
    assert_eq!(info.parent, Some(a));
    assert_eq!(db.branch_info(a).unwrap().parent, Some(MAIN));
    assert_eq!(value_at(&db, b, 1), Some(-1));
    assert_eq!(value_at(&db, b, 2), Some(20));
    assert_eq!(value_at(&db, MAIN, 1), Some(10));
}

#[test]
fn thousand_forks_cost_only_chunk_maps() {
    let db = table(3000);
    let before = db.space_stats();
    for _ in 0..1000 {
        db.fork(MAIN).unwrap();
    }
    let after = db.space_stats();
    assert_eq!(after.segments_allocated, before.segments_allocated);
    assert_eq!(after.live_segments, before.live_segments);
    assert_eq!(after.chunk_maps, before.chunk_maps + 1000);
}

#[test]
fn one_row_write_copies_one_chunk() {
    let db = table(3000);
    let a = db.fork(MAIN).unwrap();
    let r = db.branch_write(a, BRANCH_TABLE, vec![upsert(5, 0)]).unwrap();
    assert_eq!(r.chunks_copied, 1);
    assert_eq!(r.segments_created, 0);
}

#[test]
fn write_spanning_two_chunks_copies_two() {
    let db = table(3000);
    let a = db.fork(MAIN).unwrap();
    let edge = CHUNK_CAPACITY as i64;
    let ops = (edge - 5..edge + 5).map(|k| upsert(k, 1)).collect();
    let r = db.branch_write(a, BRANCH_TABLE, ops).unwrap();
    assert_eq!(r.chunks_copied, 2);
}

#[test]
fn sibling_sees_parent_value() {
    let db = table(10);
    let a = db.fork(MAIN).unwrap();
    let b = db.fork(MAIN).unwrap();
    db.branch_write(a, BRANCH_TABLE, vec![upsert(3, 999)]).unwrap();
    assert_eq!(value_at(&db, a, 3), Some(999));
    assert_eq!(value_at(&db, b, 3), Some(30));
    assert_eq!(value_at(&db, MAIN, 3), Some(30));
}

#[test]
fn rollback_restores_parent_and_deactivates() {
    let db = table(2000);
    let pre = read_real(&db, 0).unwrap();
    let a = db.fork(MAIN).unwrap();
    let ops = (0..5000).map(|k| upsert(k, -k)).collect();
    db.branch_write(a, BRANCH_TABLE, ops).unwrap();
    db.rollback(a).unwrap();
    assert_eq!(read_real(&db, 0).unwrap(), pre);
    let err = db.table_snapshot(a, BRANCH_TABLE).unwrap_err();
    assert_eq!(err.code(), "inactive_branch");
    assert_eq!(db.branch_info(a).unwrap().status, BranchStatus::RolledBack);
    assert!(db.reclaim() > 0);
}

#[test]
fn rollback_of_unwritten_fork_only_flips_status() {
    let db = table(100);
    let before = db.space_stats();
    let a = db.fork(MAIN).unwrap();
    db.rollback(a).unwrap();
    let after = db.space_stats();
    assert_eq!(after.segments_allocated, before.segments_allocated);
    assert_eq!(after.live_segments, before.live_segments);
    assert_eq!(db.rollback(MAIN).unwrap_err().code(), "rollback_mainline");
    assert_eq!(db.rollback(a).unwrap_err().code(), "inactive_branch");
}

#[test]
fn disjoint_merge_applies_both_effects() {
    let db = table(10);
    let a = db.fork(MAIN).unwrap();
    let b = db.fork(MAIN).unwrap();
    db.branch_write(a, BRANCH_TABLE, vec![upsert(1, 100)]).unwrap();
    db.branch_write(b, BRANCH_TABLE, vec![upsert(2, 200)]).unwrap();
    assert!(db.merge(a, b).unwrap().merged);
    assert_eq!(value_at(&db, b, 1), Some(100));
    assert_eq!(value_at(&db, b, 2), Some(200));
    assert_eq!(db.branch_info(a).unwrap().status, BranchStatus::Merged);
}

#[test]
fn same_key_conflicts_and_target_is_unchanged() {
    let db = table(10);
    let a = db.fork(MAIN).unwrap();
    let b = db.fork(MAIN).unwrap();
    db.branch_write(a, BRANCH_TABLE, vec![upsert(4, 1), upsert(5, 1)]).unwrap();
    db.branch_write(b, BRANCH_TABLE, vec![upsert(4, 2)]).unwrap();
    let before = read_real(&db, b.0 as usize);
    let r = db.merge(a, b).unwrap();
    assert!(!r.merged);
    assert_eq!(r.conflicts.len(), 1);
    assert_eq!(r.conflicts[0].table, BRANCH_TABLE);
    assert_eq!(r.conflicts[0].key, Some(Value::Int(4)));
    assert_eq!(read_real(&db, b.0 as usize), before);
    assert_eq!(db.branch_info(a).unwrap().status, BranchStatus::Active);
}

#[test]
fn first_committer_wins() {
    let db = table(10);
    let a = db.fork(MAIN).unwrap();
    let b = db.fork(MAIN).unwrap();
    db.branch_write(a, BRANCH_TABLE, vec![upsert(7, 1)]).unwrap();
    db.branch_write(b, BRANCH_TABLE, vec![upsert(7, 2), upsert(8, 2)]).unwrap();
    assert!(db.merge(a, MAIN).unwrap().merged);
    let r = db.merge(b, MAIN).unwrap();
    assert!(!r.merged);
    assert_eq!(r.conflicts.iter().map(|c| c.key.clone()).collect::<Vec<_>>(), vec![Some(Value::Int(7))]);
    assert_eq!(value_at(&db, MAIN, 7), Some(1));
    assert_eq!(value_at(&db, MAIN, 8), Some(80));
}

#[test]
fn write_set_lists_exactly_the_written_keys() {
    let db = table(10);
    let a = db.fork(MAIN).unwrap();
    assert!(db.write_set(a).unwrap().is_empty());
    db.branch_write(a, BRANCH_TABLE, vec![upsert(3, 0), WriteOp::Delete(Value::Int(1))]).unwrap();
    let keys: Vec<Value> = db.write_set(a).unwrap().into_iter().map(|(_, k)| k).collect();
    assert_eq!(keys, vec![Value::Int(1), Value::Int(3)]);
}

#[test]
fn space_bound_holds_under_writes() {
    let db = table(4000);
    let base = db.space_stats().live_segments;
    let mut touched = 0;
    for i in 0..50i64 {
        let b = db.fork(MAIN).unwrap();
        let r = db.branch_write(b, BRANCH_TABLE, vec![upsert(i * 60, 0), upsert(i * 60 + 1, 0)]).unwrap();
        touched += r.chunks_copied + r.segments_created;
        if i % 3 == 0 {
            db.rollback(b).unwrap();
        }
    }
    db.reclaim();
    assert!(db.space_stats().live_segments <= base + touched);
}

#[test]
fn hand_written_schedules_match_model() {
    let init: Vec<(i64, i64)> = (0..20).map(|k| (k, k)).collect();
    use BranchStep::*;
    let schedules = vec![
        vec![Fork(0), Write(1, vec![(1, Some(5))]), Fork(1), Write(2, vec![(1, Some(6))]), Merge(2, 1), Merge(1, 0)],
        vec![Fork(0), Fork(0), Write(1, vec![(3, None)]), Write(2, vec![(3, Some(1))]), Merge(1, 0), Merge(2, 0)],
        vec![Fork(0), Write(0, vec![(2, Some(9))]), Write(1, vec![(2, Some(8))]), Merge(1, 0)],
        vec![Fork(0), Fork(1), Rollback(1), Write(2, vec![(4, None)]), Merge(2, 0)],
        vec![Fork(0), Merge(1, 1), Merge(0, 1), Rollback(0)],
    ];
    for s in schedules {
        check_schedule(&init, &s).unwrap();
    }
}

#[test]
fn rewritten_keys_and_grandchildren_match_model() {
    let init: Vec<(i64, i64)> = (0..20).map(|k| (k, k)).collect();
    use BranchStep::*;
    // Mainline rewrites key 1 after the fork; the fork's ancestor still saw
    // the earlier write.
    let s = vec![
        Fork(0),
        Write(1, vec![(1, Some(100))]),
        Fork(1),
        Write(1, vec![(1, Some(7))]),
        Fork(2),
        Rollback(2),
        Write(3, vec![(1, Some(3))]),
        Merge(3, 0),
    ];
    check_schedule(&init, &s).unwrap();
    let s = vec![Fork(0), Fork(1), Write(1, vec![(5, Some(1))]), Rollback(1), Fork(2), Write(3, vec![(5, Some(2))]), Merge(3, 0)];
    check_schedule(&init, &s).unwrap();
    let s = vec![Fork(0), Write(1, vec![(2, Some(0))]), Write(1, vec![(2, Some(1))]), Merge(1, 0)];
    check_schedule(&init, &s).unwrap();
}

#[test]
fn parent_rewrite_after_fork_keeps_inherited_change() {
    let init: Vec<(i64, i64)> = (0..20).map(|k| (k, k)).collect();
    use BranchStep::*;
    let s = vec![
        Fork(0),
        Write(1, vec![(1, Some(5))]),
        Fork(1),
        Write(1, vec![(1, Some(6))]),
        Write(0, vec![(1, Some(7))]),
        Merge(2, 0),
    ];
    check_schedule(&init, &s).unwrap();
}

#[test]
fn rolled_back_ancestors_keep_history_for_descendants() {
    let init: Vec<(i64, i64)> = (0..20).map(|k| (k, k)).collect();
    use BranchStep::*;
    let s = vec![
        Fork(0),
        Write(1, vec![(5, Some(1))]),
        Fork(1),
        Fork(2),
        Rollback(2),
        Rollback(1),
        Write(0, vec![(5, Some(2))]),
        Merge(3, 0),
    ];
    check_schedule(&init, &s).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn random_schedules_match_deep_copy_model(seed in any::<u64>(), n in 0i64..60, steps in 1usize..40) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let init: Vec<(i64, i64)> = (0..n).map(|k| (k, k * 3)).collect();
        let sched = random_schedule(&mut rng, steps, 80);
        if let Err(e) = check_schedule(&init, &sched) {
            prop_assert!(false, "{}", e);
        }
    }
}
