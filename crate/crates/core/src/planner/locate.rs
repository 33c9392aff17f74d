//! Corpus-wide similarity search over table names, column names and cells.

use serde::{Deserialize, Serialize};

use crate::db::Snapshot;
use crate::error::Result;
use crate::protocol::{LocateScope, ProtocolError};
use crate::similarity::{bottom_k, SimilarityScorer};
use crate::value::{DataType, Value};

/// Distinct values per text column considered for cell matches.
pub const CELL_SAMPLE_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocateKind {
    Table,
    Column,
    Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocateMatch {
    pub kind: LocateKind,
    pub table: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_key: Option<Value>,
    /// The matched text.
    pub text: String,
    pub score: f64,
}

/// Rank every candidate with a positive score; ties break on (table, column).
pub fn locate(
    phrase: &str,
    snap: &Snapshot,
    scope: &[LocateScope],
    top_k: Option<usize>,
    scorer: &dyn SimilarityScorer,
) -> Result<Vec<LocateMatch>> {
    if phrase.trim().is_empty() {
        return Err(ProtocolError::InvalidLocate("empty phrase".into()).into());
    }
    let mut out = Vec::new();
    let mut push = |kind, table: &str, column: Option<&str>, row_key: Option<Value>, text: String| {
        let score = scorer.score(phrase, &text);
        if score > 0.0 {
            out.push(LocateMatch { kind, table: table.to_string(), column: column.map(str::to_string), row_key, text, score });
        }
    };
    for (name, t) in &snap.tables {
        if scope.contains(&LocateScope::TableNames) {
            push(LocateKind::Table, name, None, None, name.clone());
        }
        if scope.contains(&LocateScope::ColumnNames) {
            for c in &t.schema.columns {
                push(LocateKind::Column, name, Some(&c.name), None, c.name.clone());
            }
        }
        if scope.contains(&LocateScope::Cells) {
            for (i, c) in t.schema.columns.iter().enumerate() {
                if c.ty != DataType::Text {
                    continue;
                }
                let values = t.keyed_rows().map(|(k, r)| (&r[i], k));
                for (v, key) in bottom_k(values, CELL_SAMPLE_CAP) {
                    if let Value::Text(s) = v {
                        push(LocateKind::Cell, name, Some(&c.name), Some(key.clone()), s);
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.table.cmp(&b.table))
            .then_with(|| a.column.cmp(&b.column))
            .then_with(|| a.kind.cmp(&b.kind))
            .then_with(|| a.text.cmp(&b.text))
    });
    if let Some(k) = top_k {
        out.truncate(k);
    }
    Ok(out)
}
