//! Generate the synthetic dataset and 20 tasks, run every mode in-process,
//! and print redundancy, sharing and steering numbers.
//!
//!     cargo run --release --example workload_suite

use std::time::Instant;

use probekernel::report::{redundancy, render, ReportMode};
use probekernel::trace::TraceWriter;
use probekernel::workload::{gen_dataset, gen_tasks, run_agent, steering_suite, workload_kernel, Scale, WorkloadMode};
use probekernel::Config;

fn main() -> probekernel::Result<()> {
    let start = Instant::now();
    let data = gen_dataset(42, Scale::Small);
    let db = data.database()?;
    let tasks = gen_tasks(20, 50, 42)?;
    let config = Config::default();

    let (writer, buf) = TraceWriter::buffer();
    let kernel = workload_kernel(db.clone(), &config, &tasks, WorkloadMode::Parallel50).with_trace(writer);
    for t in &tasks {
        run_agent(&kernel, t, WorkloadMode::Parallel50)?;
    }
    let records = buf.records()?;
    let rep = redundancy(&records);
    println!("redundancy: distinct fraction (size >= 2) = {:.4}", rep.from_size_2.distinct_fraction());
    let (hits, total): (u64, u64) =
        records.iter().fold((0, 0), |(h, t), r| (h + r.stats.cache_hit_operator_count, t + r.stats.total_operator_count));
    println!("sharing: cache hits {hits} of {total} operators ({:.4})", hits as f64 / total as f64);
    print!("{}", render(ReportMode::Redundancy, &records, None)?.csv);

    let steer = steering_suite(&tasks, |mode| Ok(workload_kernel(db.clone(), &config, &tasks, mode)))?;
    println!(
        "steering: {} queries without hints, {} with, reduction {:.1}%",
        steer.baseline_total,
        steer.hints_total,
        steer.reduction * 100.0
    );
    println!("elapsed {:.2?}", start.elapsed());
    Ok(())
}
