//! Sampled aggregates with standard errors, and a scan that stops as soon
//! as a termination criterion holds.
//!
//!     cargo run --example approximate_answers

use probekernel::approx::{execute_incremental, execute_sampled};
use probekernel::planner::plan_sql;
use probekernel::protocol::TerminationCriterion;
use probekernel::workload::{gen_dataset, Scale};
use probekernel::{BranchId, Executor};

fn main() -> probekernel::Result<()> {
    let db = gen_dataset(7, Scale::Medium).database()?;
    let snap = db.snapshot(BranchId::MAINLINE)?;
    let sql = "SELECT channel, COUNT(*), SUM(amount), AVG(amount), MAX(amount) FROM sales GROUP BY channel";
    let plan = plan_sql(sql, &snap)?;

    let exact = Executor::new(&snap).execute(&plan)?;
    let est = execute_sampled(&snap, &plan, 0.05, 1)?;
    println!("{sql}\nexact:");
    for r in &exact.rows {
        println!("  {}", r.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "));
    }
    println!("5% sample:");
    for a in &est.aggregates {
        let se = a.std_error.map(|s| format!(" ± {:.1}", 2.0 * s)).unwrap_or_default();
        let bound = a.bound.map(|b| format!(" ({b:?} bound)")).unwrap_or_default();
        println!("  {:?} {} = {}{se}{bound}", a.group, a.aggregate, a.point);
    }

    let rows = plan_sql("SELECT sale_id, amount FROM sales WHERE channel = 'online'", &snap)?;
    let crit: TerminationCriterion = "rowcount >= 500".parse()?;
    let out = execute_incremental(&snap, &rows, Some(&crit), 256, &())?;
    println!(
        "\nstop at '{crit}': {} rows after checkpoint {}, terminated early: {}",
        out.result.rows.len(),
        out.partial.checkpoint,
        out.terminated_early
    );
    Ok(())
}
