//! Canonicalization, fingerprints and sub-plan redundancy statistics.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::value::Value;

use super::plan::{Expr, LogicalPlan, NodeKind, SortKey};

/// Stable 64-bit identity of a canonical plan.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    pub value: u64,
    pub canonical_text: String,
}

impl Fingerprint {
    pub fn hex(&self) -> String {
        format!("{:016x}", self.value)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Fingerprint of an already-canonical plan.
pub fn fingerprint(plan: &LogicalPlan) -> Fingerprint {
    let canonical_text = plan.canonical_text();
    Fingerprint { value: fnv1a64(canonical_text.as_bytes()), canonical_text }
}

pub fn canonicalize(plan: &LogicalPlan) -> LogicalPlan {
    match plan {
        LogicalPlan::Scan { .. } => plan.clone(),
        LogicalPlan::Filter { predicate, input } => LogicalPlan::Filter {
            predicate: canonical_expr(predicate),
            input: Box::new(canonicalize(input)),
        },
        LogicalPlan::Project { exprs, labels, input } => LogicalPlan::Project {
            exprs: exprs.iter().map(canonical_expr).collect(),
            labels: labels.clone(),
            input: Box::new(canonicalize(input)),
        },
        LogicalPlan::HashJoin { on, left, right } => {
            let mut l = canonicalize(left);
            let mut r = canonicalize(right);
            let mut keys: Vec<(Expr, Expr)> =
                on.iter().map(|(a, b)| (canonical_expr(a), canonical_expr(b))).collect();
            if l.canonical_text() > r.canonical_text() {
                std::mem::swap(&mut l, &mut r);
                keys = keys.into_iter().map(|(a, b)| (b, a)).collect();
            }
            keys.sort_by_cached_key(|(a, b)| format!("{}={}", a.canonical(), b.canonical()));
            keys.dedup();
            LogicalPlan::HashJoin { on: keys, left: Box::new(l), right: Box::new(r) }
        }
        LogicalPlan::Aggregate { group_by, aggs, input } => LogicalPlan::Aggregate {
            group_by: group_by.iter().map(canonical_expr).collect(),
            aggs: aggs
                .iter()
                .map(|a| super::plan::AggExpr { func: a.func, arg: a.arg.as_ref().map(canonical_expr), distinct: a.distinct })
                .collect(),
            input: Box::new(canonicalize(input)),
        },
        LogicalPlan::Sort { keys, input } => LogicalPlan::Sort {
            keys: keys.iter().map(|k| SortKey { expr: canonical_expr(&k.expr), asc: k.asc }).collect(),
            input: Box::new(canonicalize(input)),
        },
        LogicalPlan::Limit { n, input } => LogicalPlan::Limit { n: *n, input: Box::new(canonicalize(input)) },
        LogicalPlan::Distinct { input } => LogicalPlan::Distinct { input: Box::new(canonicalize(input)) },
    }
}

/// Normalize an expression: flatten and sort AND/OR operands, put literals on
/// the right of comparisons (and otherwise order operands), sort IN lists.
pub fn canonical_expr(e: &Expr) -> Expr {
    match e {
        Expr::Column(_) | Expr::Literal(_) => e.clone(),
        Expr::Cmp { op, left, right } => {
            let l = canonical_expr(left);
            let r = canonical_expr(right);
            let l_lit = matches!(l, Expr::Literal(_));
            let r_lit = matches!(r, Expr::Literal(_));
            let swap = (l_lit && !r_lit) || (l_lit == r_lit && l.canonical() > r.canonical());
            if swap {
                Expr::cmp(op.flipped(), r, l)
            } else {
                Expr::cmp(*op, l, r)
            }
        }
        Expr::And(_) | Expr::Or(_) => {
            let is_and = matches!(e, Expr::And(_));
            let mut flat = Vec::new();
            flatten(e, is_and, &mut flat);
            let mut parts: Vec<(String, Expr)> = flat
                .into_iter()
                .map(|x| {
                    let c = canonical_expr(x);
                    (c.canonical(), c)
                })
                .collect();
            parts.sort_by(|a, b| a.0.cmp(&b.0));
            parts.dedup_by(|a, b| a.0 == b.0);
            let mut xs: Vec<Expr> = parts.into_iter().map(|(_, x)| x).collect();
            if xs.len() == 1 {
                xs.pop().unwrap()
            } else if is_and {
                Expr::And(xs)
            } else {
                Expr::Or(xs)
            }
        }
        Expr::Not(x) => Expr::Not(Box::new(canonical_expr(x))),
        Expr::Like { expr, pattern, negated } => {
            Expr::Like { expr: Box::new(canonical_expr(expr)), pattern: pattern.clone(), negated: *negated }
        }
        Expr::In { expr, list, negated } => {
            let mut list: Vec<Value> = list.clone();
            list.sort_by(|a, b| a.total_cmp(b));
            list.dedup();
            Expr::In { expr: Box::new(canonical_expr(expr)), list, negated: *negated }
        }
        Expr::IsNull { expr, negated } => Expr::IsNull { expr: Box::new(canonical_expr(expr)), negated: *negated },
        Expr::SemanticLike { expr, phrase, threshold } => Expr::SemanticLike {
            expr: Box::new(canonical_expr(expr)),
            phrase: phrase.clone(),
            threshold: *threshold,
        },
    }
}

fn flatten<'a>(e: &'a Expr, is_and: bool, out: &mut Vec<&'a Expr>) {
    match e {
        Expr::And(xs) if is_and => xs.iter().for_each(|x| flatten(x, is_and, out)),
        Expr::Or(xs) if !is_and => xs.iter().for_each(|x| flatten(x, is_and, out)),
        other => out.push(other),
    }
}

#[derive(Debug, Clone)]
pub struct Subplan<'a> {
    pub node: &'a LogicalPlan,
    pub size: usize,
}

/// One entry per node: the subtree rooted there and its node count.
pub fn enumerate_subplans(plan: &LogicalPlan) -> Vec<Subplan<'_>> {
    let mut out = Vec::new();
    fn go<'a>(p: &'a LogicalPlan, out: &mut Vec<Subplan<'a>>) -> usize {
        let size = 1 + p.children().into_iter().map(|c| go(c, out)).sum::<usize>();
        out.push(Subplan { node: p, size });
        size
    }
    go(plan, &mut out);
    out
}

/// Compact record of one sub-plan occurrence, as stored in traces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubplanRecord {
    pub fingerprint: String,
    pub size: usize,
    pub kind: NodeKind,
}

pub fn subplan_records(plan: &LogicalPlan) -> Vec<SubplanRecord> {
    enumerate_subplans(plan)
        .into_iter()
        .map(|s| SubplanRecord { fingerprint: fingerprint(s.node).hex(), size: s.size, kind: s.node.kind() })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub total_count: u64,
    pub distinct_count: u64,
}

impl Bucket {
    pub fn distinct_fraction(&self) -> f64 {
        if self.total_count == 0 {
            0.0
        } else {
            self.distinct_count as f64 / self.total_count as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubplanStats {
    pub by_size: BTreeMap<usize, Bucket>,
    pub by_kind: BTreeMap<NodeKind, Bucket>,
}

impl SubplanStats {
    pub fn total(&self) -> Bucket {
        self.by_size.values().fold(Bucket::default(), |acc, b| Bucket {
            total_count: acc.total_count + b.total_count,
            distinct_count: acc.distinct_count + b.distinct_count,
        })
    }

    /// Pooled bucket over sizes at or above `min_size`.
    pub fn from_size(&self, min_size: usize) -> Bucket {
        self.by_size.range(min_size..).fold(Bucket::default(), |acc, (_, b)| Bucket {
            total_count: acc.total_count + b.total_count,
            distinct_count: acc.distinct_count + b.distinct_count,
        })
    }

    /// Add another group's statistics (distinct counts are per group).
    pub fn merge(&mut self, other: &SubplanStats) {
        for (k, b) in &other.by_size {
            let e = self.by_size.entry(*k).or_default();
            e.total_count += b.total_count;
            e.distinct_count += b.distinct_count;
        }
        for (k, b) in &other.by_kind {
            let e = self.by_kind.entry(*k).or_default();
            e.total_count += b.total_count;
            e.distinct_count += b.distinct_count;
        }
    }

    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a SubplanRecord>) -> SubplanStats {
        let mut stats = SubplanStats::default();
        let mut seen_size: HashSet<(usize, &str)> = HashSet::new();
        let mut seen_kind: HashSet<(NodeKind, &str)> = HashSet::new();
        for r in records {
            let b = stats.by_size.entry(r.size).or_default();
            b.total_count += 1;
            if seen_size.insert((r.size, r.fingerprint.as_str())) {
                b.distinct_count += 1;
            }
            let b = stats.by_kind.entry(r.kind).or_default();
            b.total_count += 1;
            if seen_kind.insert((r.kind, r.fingerprint.as_str())) {
                b.distinct_count += 1;
            }
        }
        stats
    }
}

/// Totals and distincts of sub-plans over a group of canonical plans,
/// bucketed by size and by root kind. Distinctness is fingerprint equality.
pub fn subexpression_stats(plans: &[LogicalPlan]) -> SubplanStats {
    let records: Vec<SubplanRecord> = plans.iter().flat_map(subplan_records).collect();
    SubplanStats::from_records(&records)
}
