use thiserror::Error;

use crate::protocol::ProtocolError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("table exists: {0}")]
    TableExists(String),
    #[error("unknown table: {0}")]
    UnknownTable(String),
    #[error("unknown column: {0}")]
    UnknownColumn(String),
    #[error("ambiguous column: {0}")]
    AmbiguousColumn(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("arity mismatch: expected {expected} values, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("primary key violation on {table}: duplicate key {key}")]
    PrimaryKey { table: String, key: String },
    #[error("syntax error at position {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("unknown branch: {0}")]
    UnknownBranch(u64),
    #[error("branch {0} is not active")]
    InactiveBranch(u64),
    #[error("cannot roll back the mainline")]
    RollbackMainline,
    #[error("unknown fact: {0}")]
    UnknownFact(String),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("not enough rows yet: {0}")]
    InsufficientRows(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("config error: {0}")]
    Config(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code, used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            Error::TableExists(_) => "table_exists",
            Error::UnknownTable(_) => "unknown_table",
            Error::UnknownColumn(_) => "unknown_column",
            Error::AmbiguousColumn(_) => "ambiguous_column",
            Error::InvalidSchema(_) => "invalid_schema",
            Error::Type(_) => "type_error",
            Error::Arity { .. } => "arity_mismatch",
            Error::PrimaryKey { .. } => "primary_key_violation",
            Error::Syntax { .. } => "syntax_error",
            Error::Unsupported(_) => "unsupported",
            Error::UnknownBranch(_) => "unknown_branch",
            Error::InactiveBranch(_) => "inactive_branch",
            Error::RollbackMainline => "rollback_mainline",
            Error::UnknownFact(_) => "unknown_fact",
            Error::Eval(_) => "evaluation_error",
            Error::InsufficientRows(_) => "insufficient_rows",
            Error::Protocol(p) => p.code(),
            Error::Config(_) => "config_error",
            Error::Csv(_) => "csv_error",
            Error::Json(_) => "malformed_document",
            Error::Io(_) => "io_error",
        }
    }

    /// Every code [`Error::code`] can return, protocol codes included.
    pub fn all_codes() -> Vec<&'static str> {
        let mut v = vec![
            "table_exists",
            "unknown_table",
            "unknown_column",
            "ambiguous_column",
            "invalid_schema",
            "type_error",
            "arity_mismatch",
            "primary_key_violation",
            "syntax_error",
            "unsupported",
            "unknown_branch",
            "inactive_branch",
            "rollback_mainline",
            "unknown_fact",
            "evaluation_error",
            "insufficient_rows",
            "config_error",
            "csv_error",
            "io_error",
        ];
        v.extend(ProtocolError::CODES);
        v
    }
}
