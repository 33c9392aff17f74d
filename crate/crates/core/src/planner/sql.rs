//! Lexer and recursive-descent parser for the probe SQL dialect.
//!
//! ```text
//! select   := SELECT [DISTINCT] item {, item} FROM table_ref {join}
//!             [WHERE expr] [GROUP BY expr {, expr}]
//!             [ORDER BY expr [ASC|DESC] {, ...}] [LIMIT int]
//! join     := [INNER] JOIN table_ref ON expr
//! item     := * | ident.* | expr [[AS] ident]
//! expr     := or ; or := and {OR and} ; and := not {AND not}
//! not      := NOT not | predicate
//! predicate:= operand [cmp operand | [NOT] LIKE str | [NOT] IN (lit, ...)
//!             | IS [NOT] NULL]
//! operand  := literal | column | agg | SEMANTIC_LIKE(expr, str, num) | (expr)
//! ```
//!
//! Identifiers are case-insensitive and folded to lowercase.

use crate::error::{Error, Result};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: usize,
}

fn syntax(pos: usize, message: impl Into<String>) -> Error {
    Error::Syntax { pos, message: message.into() }
}

fn lex(src: &str) -> Result<Vec<Token>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token { tok: Tok::Ident(src[start..i].to_ascii_lowercase()), pos: start });
            continue;
        }
        if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let mut is_float = false;
            if i < bytes.len() && bytes[i] == b'.' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit() {
                is_float = true;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    is_float = true;
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let tok = if is_float {
                Tok::Float(text.parse().map_err(|_| syntax(start, "bad number"))?)
            } else {
                Tok::Int(text.parse().map_err(|_| syntax(start, "integer out of range"))?)
            };
            out.push(Token { tok, pos: start });
            continue;
        }
        if c == '\'' {
            let mut s = String::new();
            i += 1;
            loop {
                let Some(ch) = src[i..].chars().next() else {
                    return Err(syntax(start, "unterminated string"));
                };
                if ch == '\'' {
                    if src[i + 1..].starts_with('\'') {
                        s.push('\'');
                        i += 2;
                        continue;
                    }
                    i += 1;
                    break;
                }
                s.push(ch);
                i += ch.len_utf8();
            }
            out.push(Token { tok: Tok::Str(s), pos: start });
            continue;
        }
        let two = src.get(i..i + 2).unwrap_or("");
        let sym = match two {
            "<=" => Some("<="),
            ">=" => Some(">="),
            "<>" => Some("<>"),
            "!=" => Some("<>"),
            _ => None,
        };
        if let Some(s) = sym {
            out.push(Token { tok: Tok::Sym(s), pos: start });
            i += 2;
            continue;
        }
        let sym = match c {
            ',' => ",",
            '(' => "(",
            ')' => ")",
            '.' => ".",
            '*' => "*",
            '=' => "=",
            '<' => "<",
            '>' => ">",
            '-' => "-",
            ';' => ";",
            _ => return Err(syntax(start, format!("unexpected character {c:?}"))),
        };
        out.push(Token { tok: Tok::Sym(sym), pos: start });
        i += 1;
    }
    out.push(Token { tok: Tok::Eof, pos: src.len() });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CmpOp {
    Eq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::NotEq => "<>",
            CmpOp::Lt => "<",
            CmpOp::LtEq => "<=",
            CmpOp::Gt => ">",
            CmpOp::GtEq => ">=",
        }
    }

    /// The operator with operands swapped: `a < b` is `b > a`.
    pub fn flipped(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::LtEq => CmpOp::GtEq,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::GtEq => CmpOp::LtEq,
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggFunc {
    Count,
    Sum,
    Avg,
    Min,
    Max,
}

impl AggFunc {
    pub fn name(self) -> &'static str {
        match self {
            AggFunc::Count => "count",
            AggFunc::Sum => "sum",
            AggFunc::Avg => "avg",
            AggFunc::Min => "min",
            AggFunc::Max => "max",
        }
    }

    fn parse(s: &str) -> Option<AggFunc> {
        Some(match s {
            "count" => AggFunc::Count,
            "sum" => AggFunc::Sum,
            "avg" => AggFunc::Avg,
            "min" => AggFunc::Min,
            "max" => AggFunc::Max,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AstExpr {
    Column { qualifier: Option<String>, name: String },
    Literal(Value),
    Cmp { op: CmpOp, left: Box<AstExpr>, right: Box<AstExpr> },
    And(Box<AstExpr>, Box<AstExpr>),
    Or(Box<AstExpr>, Box<AstExpr>),
    Not(Box<AstExpr>),
    Like { expr: Box<AstExpr>, pattern: String, negated: bool },
    InList { expr: Box<AstExpr>, list: Vec<Value>, negated: bool },
    IsNull { expr: Box<AstExpr>, negated: bool },
    SemanticLike { expr: Box<AstExpr>, phrase: String, threshold: f64 },
    /// `arg == None` means `*`.
    Agg { func: AggFunc, arg: Option<Box<AstExpr>>, distinct: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectItem {
    Wildcard,
    QualifiedWildcard(String),
    Expr { expr: AstExpr, alias: Option<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRef {
    pub name: String,
    pub alias: Option<String>,
    pub pos: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinClause {
    pub table: TableRef,
    pub on: AstExpr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectStmt {
    pub distinct: bool,
    pub items: Vec<SelectItem>,
    pub from: TableRef,
    pub joins: Vec<JoinClause>,
    pub selection: Option<AstExpr>,
    pub group_by: Vec<AstExpr>,
    pub order_by: Vec<(AstExpr, bool)>,
    pub limit: Option<u64>,
}

const RESERVED: &[&str] = &[
    "select", "distinct", "from", "where", "group", "by", "order", "limit", "join", "inner", "on",
    "and", "or", "not", "like", "in", "is", "null", "as", "asc", "desc", "true", "false",
];

struct Parser {
    toks: Vec<Token>,
    i: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].tok
    }

    fn pos(&self) -> usize {
        self.toks[self.i].pos
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.i].tok.clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(syntax(self.pos(), format!("expected {}", kw.to_uppercase())))
        }
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(syntax(self.pos(), format!("expected '{s}'")))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek().clone() {
            Tok::Ident(s) if !RESERVED.contains(&s.as_str()) => {
                self.bump();
                Ok(s)
            }
            _ => Err(syntax(self.pos(), "expected identifier")),
        }
    }

    fn select(&mut self) -> Result<SelectStmt> {
        self.expect_kw("select")?;
        let distinct = self.eat_kw("distinct");
        let mut items = vec![self.select_item()?];
        while self.eat_sym(",") {
            items.push(self.select_item()?);
        }
        self.expect_kw("from")?;
        let from = self.table_ref()?;
        let mut joins = Vec::new();
        loop {
            let inner = self.eat_kw("inner");
            if !self.eat_kw("join") {
                if inner {
                    return Err(syntax(self.pos(), "expected JOIN"));
                }
                break;
            }
            let table = self.table_ref()?;
            self.expect_kw("on")?;
            let on = self.expr()?;
            joins.push(JoinClause { table, on });
        }
        let selection = if self.eat_kw("where") { Some(self.expr()?) } else { None };
        let mut group_by = Vec::new();
        if self.eat_kw("group") {
            self.expect_kw("by")?;
            group_by.push(self.expr()?);
            while self.eat_sym(",") {
                group_by.push(self.expr()?);
            }
        }
        let mut order_by = Vec::new();
        if self.eat_kw("order") {
            self.expect_kw("by")?;
            loop {
                let e = self.expr()?;
                let asc = if self.eat_kw("desc") {
                    false
                } else {
                    self.eat_kw("asc");
                    true
                };
                order_by.push((e, asc));
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        let limit = if self.eat_kw("limit") {
            match self.bump() {
                Tok::Int(n) if n >= 0 => Some(n as u64),
                _ => return Err(syntax(self.toks[self.i.saturating_sub(1)].pos, "expected LIMIT count")),
            }
        } else {
            None
        };
        self.eat_sym(";");
        if *self.peek() != Tok::Eof {
            return Err(syntax(self.pos(), "unexpected trailing input"));
        }
        Ok(SelectStmt { distinct, items, from, joins, selection, group_by, order_by, limit })
    }

    fn select_item(&mut self) -> Result<SelectItem> {
        if self.eat_sym("*") {
            return Ok(SelectItem::Wildcard);
        }
        if let (Tok::Ident(q), Some(Tok::Sym(".")), Some(Tok::Sym("*"))) = (
            self.peek().clone(),
            self.toks.get(self.i + 1).map(|t| t.tok.clone()),
            self.toks.get(self.i + 2).map(|t| t.tok.clone()),
        ) {
            self.i += 3;
            return Ok(SelectItem::QualifiedWildcard(q));
        }
        let expr = self.expr()?;
        let alias = if self.eat_kw("as") {
            Some(self.ident()?)
        } else if matches!(self.peek(), Tok::Ident(s) if !RESERVED.contains(&s.as_str())) {
            Some(self.ident()?)
        } else {
            None
        };
        Ok(SelectItem::Expr { expr, alias })
    }

    fn table_ref(&mut self) -> Result<TableRef> {
        let pos = self.pos();
        let name = self.ident()?;
        let alias = if self.eat_kw("as") {
            Some(self.ident()?)
        } else if matches!(self.peek(), Tok::Ident(s) if !RESERVED.contains(&s.as_str())) {
            Some(self.ident()?)
        } else {
            None
        };
        Ok(TableRef { name, alias, pos })
    }

    fn expr(&mut self) -> Result<AstExpr> {
        let mut left = self.and()?;
        while self.eat_kw("or") {
            let right = self.and()?;
            left = AstExpr::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn and(&mut self) -> Result<AstExpr> {
        let mut left = self.not()?;
        while self.eat_kw("and") {
            let right = self.not()?;
            left = AstExpr::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn not(&mut self) -> Result<AstExpr> {
        if self.eat_kw("not") {
            return Ok(AstExpr::Not(Box::new(self.not()?)));
        }
        self.predicate()
    }

    fn predicate(&mut self) -> Result<AstExpr> {
        let left = self.operand()?;
        let op = match self.peek() {
            Tok::Sym("=") => Some(CmpOp::Eq),
            Tok::Sym("<>") => Some(CmpOp::NotEq),
            Tok::Sym("<") => Some(CmpOp::Lt),
            Tok::Sym("<=") => Some(CmpOp::LtEq),
            Tok::Sym(">") => Some(CmpOp::Gt),
            Tok::Sym(">=") => Some(CmpOp::GtEq),
            _ => None,
        };
        if let Some(op) = op {
            self.bump();
            let right = self.operand()?;
            return Ok(AstExpr::Cmp { op, left: Box::new(left), right: Box::new(right) });
        }
        if self.eat_kw("is") {
            let negated = self.eat_kw("not");
            self.expect_kw("null")?;
            return Ok(AstExpr::IsNull { expr: Box::new(left), negated });
        }
        let negated = if self.is_kw("not")
            && matches!(self.toks.get(self.i + 1).map(|t| &t.tok), Some(Tok::Ident(s)) if s == "like" || s == "in")
        {
            self.bump();
            true
        } else {
            false
        };
        if self.eat_kw("like") {
            let pos = self.pos();
            let Tok::Str(pattern) = self.bump() else {
                return Err(syntax(pos, "expected string pattern after LIKE"));
            };
            return Ok(AstExpr::Like { expr: Box::new(left), pattern, negated });
        }
        if self.eat_kw("in") {
            self.expect_sym("(")?;
            let mut list = vec![self.literal()?];
            while self.eat_sym(",") {
                list.push(self.literal()?);
            }
            self.expect_sym(")")?;
            return Ok(AstExpr::InList { expr: Box::new(left), list, negated });
        }
        if negated {
            return Err(syntax(self.pos(), "expected LIKE or IN after NOT"));
        }
        Ok(left)
    }

    fn literal(&mut self) -> Result<Value> {
        let pos = self.pos();
        let neg = self.eat_sym("-");
        let v = match self.bump() {
            Tok::Int(i) => Value::Int(if neg { -i } else { i }),
            Tok::Float(f) => Value::Float(if neg { -f } else { f }),
            Tok::Str(s) if !neg => Value::Text(s),
            Tok::Ident(s) if !neg && s == "true" => Value::Bool(true),
            Tok::Ident(s) if !neg && s == "false" => Value::Bool(false),
            Tok::Ident(s) if !neg && s == "null" => Value::Null,
            _ => return Err(syntax(pos, "expected literal")),
        };
        Ok(v)
    }

    fn operand(&mut self) -> Result<AstExpr> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Int(_) | Tok::Float(_) | Tok::Str(_) | Tok::Sym("-") => Ok(AstExpr::Literal(self.literal()?)),
            Tok::Ident(s) if s == "true" || s == "false" || s == "null" => {
                Ok(AstExpr::Literal(self.literal()?))
            }
            Tok::Ident(s) => {
                let next_is_paren =
                    matches!(self.toks.get(self.i + 1).map(|t| &t.tok), Some(Tok::Sym("(")));
                if next_is_paren {
                    if let Some(func) = AggFunc::parse(&s) {
                        self.i += 2;
                        if self.eat_sym("*") {
                            if func != AggFunc::Count {
                                return Err(syntax(pos, "only COUNT accepts *"));
                            }
                            self.expect_sym(")")?;
                            return Ok(AstExpr::Agg { func, arg: None, distinct: false });
                        }
                        let distinct = self.eat_kw("distinct");
                        let arg = self.expr()?;
                        self.expect_sym(")")?;
                        return Ok(AstExpr::Agg { func, arg: Some(Box::new(arg)), distinct });
                    }
                    if s == "semantic_like" {
                        self.i += 2;
                        let expr = self.expr()?;
                        self.expect_sym(",")?;
                        let ppos = self.pos();
                        let Tok::Str(phrase) = self.bump() else {
                            return Err(syntax(ppos, "expected phrase string"));
                        };
                        self.expect_sym(",")?;
                        let tpos = self.pos();
                        let threshold = match self.bump() {
                            Tok::Int(i) => i as f64,
                            Tok::Float(f) => f,
                            _ => return Err(syntax(tpos, "expected numeric threshold")),
                        };
                        self.expect_sym(")")?;
                        return Ok(AstExpr::SemanticLike { expr: Box::new(expr), phrase, threshold });
                    }
                    return Err(syntax(pos, format!("unknown function {s}")));
                }
                let first = self.ident()?;
                if self.eat_sym(".") {
                    let name = self.ident()?;
                    Ok(AstExpr::Column { qualifier: Some(first), name })
                } else {
                    Ok(AstExpr::Column { qualifier: None, name: first })
                }
            }
            _ => Err(syntax(pos, "expected expression")),
        }
    }
}

pub fn parse_select(src: &str) -> Result<SelectStmt> {
    let toks = lex(src)?;
    let mut p = Parser { toks, i: 0 };
    p.select()
}
