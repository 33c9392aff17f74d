//! Offline reports over traces: sub-plan redundancy, phase mix over
//! normalized trajectory time, and per-activity query counts.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::{Bucket, NodeKind, SubplanStats};
use crate::protocol::Phase;
use crate::trace::TraceRecord;

/// Trajectory time bins for the phase report.
pub const PHASE_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportMode {
    Redundancy,
    Phases,
    ActivityCounts,
}

impl std::str::FromStr for ReportMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "redundancy" => Ok(ReportMode::Redundancy),
            "phases" => Ok(ReportMode::Phases),
            "activity_counts" => Ok(ReportMode::ActivityCounts),
            _ => Err(format!("unknown report mode {s:?} (redundancy, phases, activity_counts)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub size: usize,
    pub total_count: u64,
    pub distinct_count: u64,
    pub distinct_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindRow {
    pub kind: NodeKind,
    pub total_count: u64,
    pub distinct_count: u64,
    pub distinct_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedundancyReport {
    pub by_size: Vec<SizeRow>,
    pub by_kind: Vec<KindRow>,
    /// Pooled over sub-plans with at least two nodes.
    pub from_size_2: Bucket,
    pub groups: usize,
}

/// Distinctness is counted within each task (or agent, when no task is
/// recorded) and summed across groups.
pub fn redundancy(records: &[TraceRecord]) -> RedundancyReport {
    let mut groups: BTreeMap<&str, Vec<&TraceRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.error.is_none()) {
        groups.entry(r.group()).or_default().push(r);
    }
    let mut stats = SubplanStats::default();
    for recs in groups.values() {
        let subplans = recs.iter().flat_map(|r| r.queries.iter()).flat_map(|q| q.subplans.iter());
        stats.merge(&SubplanStats::from_records(subplans));
    }
    RedundancyReport {
        by_size: stats
            .by_size
            .iter()
            .map(|(&size, b)| SizeRow {
                size,
                total_count: b.total_count,
                distinct_count: b.distinct_count,
                distinct_fraction: b.distinct_fraction(),
            })
            .collect(),
        by_kind: stats
            .by_kind
            .iter()
            .map(|(&kind, b)| KindRow {
                kind,
                total_count: b.total_count,
                distinct_count: b.distinct_count,
                distinct_fraction: b.distinct_fraction(),
            })
            .collect(),
        from_size_2: stats.from_size(2),
        groups: groups.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    /// `matrix[activity][bin]`, each row scaled so its largest entry is 1.
    pub matrix: Vec<[f64; PHASE_BINS]>,
    /// Raw probe counts, same layout.
    pub counts: Vec<[u64; PHASE_BINS]>,
    pub trajectories: usize,
}

impl PhaseReport {
    /// Share of an activity's raw count that falls in bins `range`.
    pub fn mass(&self, activity: Phase, range: std::ops::Range<usize>) -> f64 {
        let row = &self.counts[activity.index()];
        let total: u64 = row.iter().sum();
        if total == 0 {
            return 0.0;
        }
        row[range].iter().sum::<u64>() as f64 / total as f64
    }
}

/// Each agent's labelled probes, in completion order, are spread over
/// [0, 1) and binned; each activity row is then normalized independently.
pub fn phases(records: &[TraceRecord]) -> PhaseReport {
    let mut trajectories: BTreeMap<&str, Vec<&TraceRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.label.is_some() && r.error.is_none()) {
        trajectories.entry(&r.agent_id).or_default().push(r);
    }
    let mut counts = vec![[0u64; PHASE_BINS]; Phase::ALL.len()];
    for t in trajectories.values_mut() {
        t.sort_by_key(|r| r.seq);
        let n = t.len();
        for (i, r) in t.iter().enumerate() {
            let bin = (i * PHASE_BINS / n).min(PHASE_BINS - 1);
            counts[r.label.expect("filtered").index()][bin] += 1;
        }
    }
    let matrix = counts
        .iter()
        .map(|row| {
            let max = row.iter().copied().max().unwrap_or(0);
            let mut out = [0.0; PHASE_BINS];
            if max > 0 {
                for (o, &x) in out.iter_mut().zip(row) {
                    *o = x as f64 / max as f64;
                }
            }
            out
        })
        .collect();
    PhaseReport { matrix, counts, trajectories: trajectories.len() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityRow {
    /// An activity name, or `all` for every query.
    pub activity: String,
    pub total: u64,
    /// Mean per trace (agent).
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_mean: Option<f64>,
    /// `100 * (mean - baseline_mean) / baseline_mean`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityReport {
    pub traces: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_traces: Option<usize>,
    pub rows: Vec<ActivityRow>,
}

impl ActivityReport {
    pub fn row(&self, activity: &str) -> Option<&ActivityRow> {
        self.rows.iter().find(|r| r.activity == activity)
    }
}

/// Queries issued per activity label, and the number of traces. Every
/// submitted query counts, whatever the engine did with it.
pub fn activity_totals(records: &[TraceRecord]) -> (BTreeMap<Phase, u64>, usize) {
    let mut m: BTreeMap<Phase, u64> = Phase::ALL.iter().map(|&p| (p, 0)).collect();
    let mut agents: HashSet<&str> = HashSet::new();
    for r in records.iter().filter(|r| r.kind == "sql_batch") {
        agents.insert(&r.agent_id);
        for q in &r.queries {
            if let Some(l) = q.label.or(r.label) {
                *m.entry(l).or_default() += 1;
            }
        }
    }
    (m, agents.len())
}

pub fn activity_counts(records: &[TraceRecord], baseline: Option<&[TraceRecord]>) -> ActivityReport {
    let (now, traces) = activity_totals(records);
    let base = baseline.map(activity_totals);
    let mean = |x: u64, n: usize| if n == 0 { 0.0 } else { x as f64 / n as f64 };
    let row = |name: &str, total: u64, base_total: Option<u64>| {
        let m = mean(total, traces);
        let bm = base.as_ref().zip(base_total).map(|((_, n), b)| mean(b, *n));
        ActivityRow {
            activity: name.to_string(),
            total,
            mean: m,
            baseline_mean: bm,
            delta_pct: bm.filter(|&b| b > 0.0).map(|b| 100.0 * (m - b) / b),
        }
    };
    let mut rows: Vec<ActivityRow> =
        Phase::ALL.iter().map(|p| row(p.name(), now[p], base.as_ref().map(|(b, _)| b[p]))).collect();
    rows.push(row("all", now.values().sum(), base.as_ref().map(|(b, _)| b.values().sum())));
    ActivityReport { traces, baseline_traces: base.as_ref().map(|(_, n)| *n), rows }
}

/// A rendered report: CSV for spreadsheets, JSON for programs.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub csv: String,
    pub json: serde_json::Value,
}

fn csv_string(header: &[&str], rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn render(mode: ReportMode, records: &[TraceRecord], baseline: Option<&[TraceRecord]>) -> Result<Rendered> {
    if records.is_empty() || baseline.is_some_and(<[_]>::is_empty) {
        return Err(Error::Eval("empty trace".into()));
    }
    match mode {
        ReportMode::Redundancy => {
            let r = redundancy(records);
            let mut rows: Vec<Vec<String>> = r
                .by_size
                .iter()
                .map(|s| {
                    vec![
                        "size".into(),
                        s.size.to_string(),
                        s.total_count.to_string(),
                        s.distinct_count.to_string(),
                        format!("{:.6}", s.distinct_fraction),
                    ]
                })
                .collect();
            rows.extend(r.by_kind.iter().map(|k| {
                vec![
                    "kind".into(),
                    k.kind.code().into(),
                    k.total_count.to_string(),
                    k.distinct_count.to_string(),
                    format!("{:.6}", k.distinct_fraction),
                ]
            }));
            let b = r.from_size_2;
            rows.push(vec![
                "size".into(),
                ">=2".into(),
                b.total_count.to_string(),
                b.distinct_count.to_string(),
                format!("{:.6}", b.distinct_fraction()),
            ]);
            let csv = csv_string(&["bucket", "key", "total_count", "distinct_count", "distinct_fraction"], rows)?;
            Ok(Rendered { csv, json: serde_json::to_value(&r)? })
        }
        ReportMode::Phases => {
            let r = phases(records);
            let rows = Phase::ALL
                .iter()
                .zip(&r.matrix)
                .map(|(p, row)| {
                    let mut v = vec![p.name().to_string()];
                    v.extend(row.iter().map(|x| format!("{x:.6}")));
                    v
                })
                .collect();
            let bins: Vec<String> = (0..PHASE_BINS).map(|b| format!("bin{b}")).collect();
            let mut header = vec!["activity"];
            header.extend(bins.iter().map(String::as_str));
            let csv = csv_string(&header, rows)?;
            Ok(Rendered { csv, json: serde_json::to_value(&r)? })
        }
        ReportMode::ActivityCounts => {
            let r = activity_counts(records, baseline);
            let opt = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_default();
            let rows = r
                .rows
                .iter()
                .map(|a| {
                    vec![a.activity.clone(), a.total.to_string(), format!("{:.4}", a.mean), opt(a.baseline_mean), opt(a.delta_pct)]
                })
                .collect();
            let csv = csv_string(&["activity", "total", "mean_per_trace", "baseline_mean", "delta_pct"], rows)?;
            Ok(Rendered { csv, json: serde_json::to_value(&r)? })
        }
    }
}

/// Per-group breakdown used by tests and the replay summary.
pub fn queries_per_group(records: &[TraceRecord]) -> HashMap<String, u64> {
    let mut m = HashMap::new();
    for r in records.iter().filter(|r| r.kind == "sql_batch") {
        *m.entry(r.group().to_string()).or_default() += r.queries.len() as u64;
    }
    m
}
