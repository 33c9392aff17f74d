use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use probekernel::config::CONFIG_ENV;
use probekernel::report::{render, ReportMode};
use probekernel::server::{spawn_tcp, HttpServer};
use probekernel::trace::{read_trace, TraceWriter};
use probekernel::workload::{
    compare_outcomes, gen_dataset, gen_tasks, load_dataset_dir, read_tasks, replay_trace, run_agent, seed_hints,
    workload_kernel, write_tasks, Scale, TableManifest, WorkloadMode,
};
use probekernel::{Config, Database, Kernel};

#[derive(Parser)]
#[command(name = "probekernel", version, about = "Agent-first data engine")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serve probes over TCP (newline-delimited JSON) and HTTP (POST /probe).
    Serve {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, env = CONFIG_ENV)]
        config: Option<PathBuf>,
        /// Overrides server.tcp.
        #[arg(long)]
        tcp: Option<String>,
        /// Overrides server.http.
        #[arg(long)]
        http: Option<String>,
    },
    /// Check a CSV file and print its inferred schema; with --data, copy it
    /// into that directory as <table>.csv.
    Load {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        table: String,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Summarize a trace file.
    Report {
        #[arg(long)]
        mode: ReportMode,
        #[arg(long)]
        trace: PathBuf,
        /// Second trace for activity_counts deltas.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Print JSON instead of CSV.
        #[arg(long)]
        json: bool,
    },
    /// Write the synthetic dataset, task specs and parallel probes.
    GenWorkload {
        #[arg(long, default_value_t = 20)]
        tasks: usize,
        #[arg(long, default_value_t = 50)]
        variants: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "small")]
        scale: Scale,
        #[arg(long, default_value = "workload")]
        out: PathBuf,
    },
    /// Drive the built-in agents over a generated workload, in process.
    Replay {
        /// Directory written by gen-workload.
        #[arg(long)]
        data: PathBuf,
        /// parallel_50, sequential_scripted or sequential_with_hints.
        #[arg(long)]
        mode: WorkloadMode,
        /// Trace output (overwritten).
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, env = CONFIG_ENV)]
        config: Option<PathBuf>,
    },
    /// Re-send the probes of a trace to a fresh kernel and compare outcomes.
    ReplayTrace {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Trace of the replay (overwritten); defaults to a temporary buffer.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run the kernel as for this mode, matching how the trace was made.
        #[arg(long)]
        mode: Option<WorkloadMode>,
        #[arg(long, env = CONFIG_ENV)]
        config: Option<PathBuf>,
    },
}

/// Write to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn open_db(dir: &Path) -> probekernel::Result<Arc<Database>> {
    let db = Database::new();
    let names = load_dataset_dir(dir, &db)?;
    tracing::info!(dir = %dir.display(), tables = names.len(), "loaded data");
    Ok(Arc::new(db))
}

fn fresh_trace(path: &Path) -> probekernel::Result<TraceWriter> {
    Ok(TraceWriter::new(Box::new(std::io::BufWriter::new(fs::File::create(path)?))))
}

fn serve(data: Option<PathBuf>, config: Option<PathBuf>, tcp: Option<String>, http: Option<String>) -> probekernel::Result<()> {
    let mut cfg = Config::resolve(config.as_deref())?;
    if tcp.is_some() {
        cfg.server.tcp = tcp;
    }
    if http.is_some() {
        cfg.server.http = http;
    }
    let dir = data.or_else(|| cfg.server.data.clone());
    let db = match &dir {
        Some(d) => open_db(d)?,
        None => Arc::new(Database::new()),
    };
    let tasks = match &dir {
        Some(d) if d.join("tasks.json").exists() => read_tasks(&d.join("tasks.json"))?,
        _ => Vec::new(),
    };
    let kernel = Arc::new(Kernel::from_config(db, &cfg)?.with_tasks(tasks.into_iter().map(|t| t.manifest)));
    let mut handles = Vec::new();
    if let Some(addr) = &cfg.server.tcp {
        let (bound, h) = spawn_tcp(kernel.clone(), addr.as_str())?;
        eprintln!("tcp listening on {bound}");
        handles.push(h);
    }
    let http = match &cfg.server.http {
        Some(addr) => {
            let s = HttpServer::start(kernel.clone(), addr.as_str(), 4)?;
            eprintln!("http listening on {}", s.addr);
            Some(s)
        }
        None => None,
    };
    if handles.is_empty() && http.is_none() {
        return Err(probekernel::Error::Config("no listener configured (server.tcp or server.http)".into()));
    }
    if let Some(s) = http {
        s.join();
    }
    for h in handles {
        let _ = h.join();
    }
    Ok(())
}

fn load(csv: &Path, table: &str, data: Option<PathBuf>) -> probekernel::Result<()> {
    let (schema, rows) = probekernel::db::read_csv(fs::File::open(csv)?, table)?;
    let entry = TableManifest {
        name: schema.table_name.clone(),
        file: format!("{}.csv", schema.table_name),
        rows: rows.len(),
        primary_key: None,
        columns: schema.columns.clone(),
    };
    if let Some(dir) = data {
        fs::create_dir_all(&dir)?;
        fs::copy(csv, dir.join(&entry.file))?;
        let manifest = dir.join("dataset.json");
        if manifest.exists() {
            let mut m: probekernel::workload::DatasetManifest = serde_json::from_slice(&fs::read(&manifest)?)?;
            m.tables.retain(|t| t.name != entry.name);
            m.tables.push(entry.clone());
            fs::write(&manifest, serde_json::to_string_pretty(&m)?)?;
        }
    }
    emit(&format!("{}\n", serde_json::to_string_pretty(&entry)?));
    Ok(())
}

fn report(mode: ReportMode, trace: &Path, baseline: Option<&Path>, json: bool) -> probekernel::Result<()> {
    let records = read_trace(trace)?;
    let base = baseline.map(read_trace).transpose()?;
    let out = render(mode, &records, base.as_deref())?;
    if json {
        emit(&format!("{}\n", serde_json::to_string_pretty(&out.json)?));
    } else {
        emit(&out.csv);
    }
    Ok(())
}

fn gen_workload(tasks: usize, variants: usize, seed: u64, scale: Scale, out: &Path) -> probekernel::Result<()> {
    let data = gen_dataset(seed, scale);
    data.write_dir(out)?;
    let specs = gen_tasks(tasks, variants, seed)?;
    write_tasks(out, &specs)?;
    eprintln!("wrote {} tables and {} tasks to {}", data.tables.len(), specs.len(), out.display());
    Ok(())
}

fn replay(data: &Path, mode: WorkloadMode, trace: &Path, config: Option<&Path>) -> probekernel::Result<()> {
    let cfg = Config::resolve(config)?;
    let db = open_db(data)?;
    let tasks = read_tasks(&data.join("tasks.json"))?;
    let kernel = workload_kernel(db, &cfg, &tasks, mode).with_trace(fresh_trace(trace)?);
    let mut runs = Vec::new();
    for t in &tasks {
        if mode == WorkloadMode::SequentialWithHints {
            seed_hints(&kernel, t)?;
        }
        runs.push(run_agent(&kernel, t, mode)?);
    }
    let queries: usize = runs.iter().map(|r| r.queries).sum();
    let summary = serde_json::json!({
        "mode": mode.name(),
        "tasks": runs.len(),
        "queries": queries,
        "mean_queries_per_task": queries as f64 / runs.len().max(1) as f64,
        "runs": runs,
    });
    emit(&format!("{}\n", serde_json::to_string_pretty(&summary)?));
    Ok(())
}

fn replay_trace_cmd(
    data: &Path,
    trace: &Path,
    out: Option<&Path>,
    mode: Option<WorkloadMode>,
    config: Option<&Path>,
) -> probekernel::Result<bool> {
    let cfg = Config::resolve(config)?;
    let original = read_trace(trace)?;
    let db = open_db(data)?;
    let tasks = match data.join("tasks.json") {
        p if p.exists() => read_tasks(&p)?,
        _ => Vec::new(),
    };
    let mode = mode.unwrap_or(WorkloadMode::SequentialWithHints);
    let kernel = workload_kernel(db, &cfg, &tasks, mode);
    let (kernel, replayed) = match out {
        Some(p) => (kernel.with_trace(fresh_trace(p)?), None),
        None => {
            let (w, buf) = TraceWriter::buffer();
            (kernel.with_trace(w), Some(buf))
        }
    };
    let sent = replay_trace(&kernel, &original)?;
    let again = match (replayed, out) {
        (Some(buf), _) => buf.records()?,
        (None, Some(p)) => read_trace(p)?,
        (None, None) => unreachable!("one trace sink is always set"),
    };
    let diffs = compare_outcomes(&original, &again);
    for d in &diffs {
        emit(&format!("{d}\n"));
    }
    emit(&format!("replayed {sent} probes, {} differences\n", diffs.len()));
    Ok(diffs.is_empty())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Serve { data, config, tcp, http } => serve(data, config, tcp, http).map(|_| true),
        Cmd::Load { csv, table, data } => load(&csv, &table, data).map(|_| true),
        Cmd::Report { mode, trace, baseline, json } => report(mode, &trace, baseline.as_deref(), json).map(|_| true),
        Cmd::GenWorkload { tasks, variants, seed, scale, out } => {
            gen_workload(tasks, variants, seed, scale, &out).map(|_| true)
        }
        Cmd::Replay { data, mode, trace, config } => replay(&data, mode, &trace, config.as_deref()).map(|_| true),
        Cmd::ReplayTrace { data, trace, out, mode, config } => {
            replay_trace_cmd(&data, &trace, out.as_deref(), mode, config.as_deref())
        }
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
