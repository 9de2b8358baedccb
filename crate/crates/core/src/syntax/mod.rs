//! Surface syntax of the interpreted language: a dynamically typed subset of
//! Haskell 98 without layout, where every declaration ends in `;`.

mod ast;
mod lexer;
mod parser;
mod render;

use std::fmt;
use std::sync::Arc;

pub use ast::{Expr, Import, ParsedModule, Pattern, Rule};
pub use lexer::{tokenize, Token, TokenKind};
pub use parser::{fixity, parse_expr, parse_module, Assoc};
pub use render::{render_term, render_term_unlimited};

/// Byte range inside one source text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Span { start, end }
    }

    pub fn to(self, other: Span) -> Span {
        Span::new(self.start.min(other.start), self.end.max(other.end))
    }
}

/// A span qualified by the module whose source it indexes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SourceSpan {
    pub module: Arc<str>,
    pub start: usize,
    pub end: usize,
}

impl SourceSpan {
    pub fn new(module: Arc<str>, span: Span) -> Self {
        SourceSpan {
            module,
            start: span.start,
            end: span.end,
        }
    }
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}..{}", self.module, self.start, self.end)
    }
}

/// Lexical or grammatical error, reported at the first offending token.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{message} at {}..{}", span.start, span.end)]
pub struct SyntaxError {
    pub span: Span,
    pub message: String,
}

impl SyntaxError {
    pub fn new(span: Span, message: impl Into<String>) -> Self {
        SyntaxError {
            span,
            message: message.into(),
        }
    }
}

/// Converts a byte offset into a 1-based (line, column) pair.
pub fn line_col(source: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(source.len());
    let before = &source[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(offset, |i| offset - i - 1) + 1;
    (line, col)
}
