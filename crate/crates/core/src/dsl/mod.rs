//! Rule language: lexer, parser, printer and type checker.

pub mod ast;
pub mod lexer;
pub mod parser;
pub mod render;
pub mod ruleset;
pub mod typeck;

use std::fmt;

pub use ast::{Binding, Expr, ExprKind, Literal, Rule, Span, TensorFn, TypeExpr};
pub use parser::{parse_rule, parse_type};
pub use render::{render_expr, render_rule};
pub use typeck::{free_variables, type_check, TypeErrorKind, TypeErrorReport, TypedRule};

/// 1-based line and column of a byte offset.
pub fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(src.len());
    let before = &src[..offset];
    let line = before.matches('\n').count() + 1;
    let col = match before.rfind('\n') {
        Some(nl) => before[nl + 1..].chars().count() + 1,
        None => before.chars().count() + 1,
    };
    (line, col)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub token: String,
    pub message: String,
    pub span: Span,
}

impl ParseError {
    pub fn at(src: &str, span: Span, msg: &str, token: &str) -> ParseError {
        let (line, col) = line_col(src, span.start);
        ParseError {
            line,
            col,
            token: token.to_string(),
            message: msg.to_string(),
            span,
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}: {} (at '{}')",
            self.line, self.col, self.message, self.token
        )
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BindingError {
    pub line: usize,
    pub col: usize,
    pub message: String,
    pub span: Span,
}

impl BindingError {
    pub fn new(src: &str, span: Span, message: String) -> BindingError {
        let (line, col) = line_col(src, span.start);
        BindingError {
            line,
            col,
            message,
            span,
        }
    }
}

impl fmt::Display for BindingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

impl std::error::Error for BindingError {}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DslError {
    #[error("parse error {0}")]
    Parse(#[from] ParseError),
    #[error("binding error {0}")]
    Binding(#[from] BindingError),
    #[error("type error: {0}")]
    Type(#[from] TypeErrorReport),
}

impl DslError {
    pub fn span(&self) -> Span {
        match self {
            DslError::Parse(e) => e.span,
            DslError::Binding(e) => e.span,
            DslError::Type(r) => r.errors.first().map(|e| e.span).unwrap_or_default(),
        }
    }
}

/// Parse and type-check in one step.
pub fn compile_rule(text: &str) -> Result<TypedRule, DslError> {
    let rule = parse_rule(text)?;
    Ok(type_check(&rule)?)
}
