//! Table schemas and per-column statistics.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::value::{DataType, Value};

/// Name of the virtual table listing user tables.
pub const CATALOG_TABLES: &str = "catalog_tables";
/// Name of the virtual table listing user columns with statistics.
pub const CATALOG_COLUMNS: &str = "catalog_columns";

pub fn is_catalog_table(name: &str) -> bool {
    name == CATALOG_TABLES || name == CATALOG_COLUMNS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: DataType,
}

impl ColumnDef {
    pub fn new(name: impl Into<String>, ty: DataType) -> Self {
        ColumnDef { name: name.into(), ty }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub table_name: String,
    pub columns: Vec<ColumnDef>,
    pub primary_key: Option<String>,
    /// Data version of the table on the branch it was read from.
    #[serde(default)]
    pub version: u64,
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase() || c == '_')
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

impl Schema {
    pub fn new(table_name: impl Into<String>, columns: Vec<ColumnDef>) -> Self {
        Schema { table_name: table_name.into(), columns, primary_key: None, version: 0 }
    }

    pub fn with_primary_key(mut self, column: impl Into<String>) -> Self {
        self.primary_key = Some(column.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !is_identifier(&self.table_name) {
            return Err(Error::InvalidSchema(format!(
                "table name {:?} is not a lowercase identifier",
                self.table_name
            )));
        }
        if is_catalog_table(&self.table_name) {
            return Err(Error::InvalidSchema(format!("{} is reserved", self.table_name)));
        }
        if self.columns.is_empty() {
            return Err(Error::InvalidSchema("table has no columns".into()));
        }
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !is_identifier(&c.name) {
                return Err(Error::InvalidSchema(format!(
                    "column name {:?} is not a lowercase identifier",
                    c.name
                )));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate column {}", c.name)));
            }
        }
        if let Some(pk) = &self.primary_key {
            if !seen.contains(pk.as_str()) {
                return Err(Error::InvalidSchema(format!("primary key {pk} is not a column")));
            }
        }
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn primary_key_index(&self) -> Option<usize> {
        self.primary_key.as_deref().and_then(|pk| self.column_index(pk))
    }
}

/// Statistics over one column at one table version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub column: String,
    pub ty: DataType,
    pub n_distinct: u64,
    pub n_null: u64,
    pub min: Option<Value>,
    pub max: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableStats {
    pub table: String,
    pub version: u64,
    pub n_rows: u64,
    pub columns: Vec<ColumnStats>,
}

impl TableStats {
    pub fn column(&self, name: &str) -> Option<&ColumnStats> {
        self.columns.iter().find(|c| c.column == name)
    }

    pub fn compute<'a>(schema: &Schema, version: u64, rows: impl Iterator<Item = &'a [Value]>) -> Self {
        let n = schema.columns.len();
        let mut distinct: Vec<HashSet<&Value>> = vec![HashSet::new(); n];
        let mut nulls = vec![0u64; n];
        let mut mins: Vec<Option<&Value>> = vec![None; n];
        let mut maxs: Vec<Option<&Value>> = vec![None; n];
        let mut n_rows = 0;
        for row in rows {
            n_rows += 1;
            for (i, v) in row.iter().enumerate() {
                if v.is_null() {
                    nulls[i] += 1;
                    continue;
                }
                distinct[i].insert(v);
                if mins[i].is_none_or(|m| v.total_cmp(m).is_lt()) {
                    mins[i] = Some(v);
                }
                if maxs[i].is_none_or(|m| v.total_cmp(m).is_gt()) {
                    maxs[i] = Some(v);
                }
            }
        }
        let columns = schema
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| ColumnStats {
                column: c.name.clone(),
                ty: c.ty,
                n_distinct: distinct[i].len() as u64,
                n_null: nulls[i],
                min: mins[i].cloned(),
                max: maxs[i].cloned(),
            })
            .collect();
        TableStats { table: schema.table_name.clone(), version, n_rows, columns }
    }
}

/// Columns of the `catalog_tables` virtual table.
pub fn catalog_tables_schema() -> Schema {
    Schema::new(
        CATALOG_TABLES,
        vec![
            ColumnDef::new("name", DataType::Text),
            ColumnDef::new("n_rows", DataType::Int64),
            ColumnDef::new("version", DataType::Int64),
        ],
    )
}

/// Columns of the `catalog_columns` virtual table.
pub fn catalog_columns_schema() -> Schema {
    Schema::new(
        CATALOG_COLUMNS,
        vec![
            ColumnDef::new("table_name", DataType::Text),
            ColumnDef::new("column_name", DataType::Text),
            ColumnDef::new("type", DataType::Text),
            ColumnDef::new("n_distinct", DataType::Int64),
            ColumnDef::new("n_null", DataType::Int64),
            ColumnDef::new("min_text", DataType::Text),
            ColumnDef::new("max_text", DataType::Text),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicate_columns() {
        let s = Schema::new(
            "t",
            vec![ColumnDef::new("a", DataType::Int64), ColumnDef::new("a", DataType::Text)],
        );
        assert!(s.validate().is_err());
    }

    #[test]
    fn rejects_reserved_and_uppercase_names() {
        assert!(Schema::new("catalog_tables", vec![ColumnDef::new("a", DataType::Int64)])
            .validate()
            .is_err());
        assert!(Schema::new("Sales", vec![ColumnDef::new("a", DataType::Int64)])
            .validate()
            .is_err());
    }

    #[test]
    fn stats_count_nulls_and_distincts() {
        let s = Schema::new("t", vec![ColumnDef::new("a", DataType::Text)]);
        let rows: Vec<Vec<Value>> =
            vec![vec!["x".into()], vec!["y".into()], vec!["x".into()], vec![Value::Null]];
        let st = TableStats::compute(&s, 1, rows.iter().map(|r| r.as_slice()));
        let c = st.column("a").unwrap();
        assert_eq!((c.n_distinct, c.n_null, st.n_rows), (2, 1, 4));
        assert_eq!(c.min, Some("x".into()));
        assert_eq!(c.max, Some("y".into()));
    }
}
