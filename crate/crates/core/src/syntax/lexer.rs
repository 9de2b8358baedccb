use super::{Span, SyntaxError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    /// Starts with a lowercase letter or `_`.
    Identifier,
    /// Starts with an uppercase letter.
    ConstructorName,
    IntegerLiteral,
    StringLiteral,
    Operator,
    Punctuation,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    /// Source slice for everything except string literals, where this holds
    /// the unescaped contents.
    pub text: String,
    pub span: Span,
}

impl Token {
    pub fn is(&self, kind: TokenKind, text: &str) -> bool {
        self.kind == kind && self.text == text
    }

    pub fn is_punct(&self, text: &str) -> bool {
        self.is(TokenKind::Punctuation, text)
    }

    pub fn is_op(&self, text: &str) -> bool {
        self.is(TokenKind::Operator, text)
    }
}

const SYMBOL_CHARS: &str = "!#$%&*+./<=>?@\\^|-~:";

fn is_symbol(c: char) -> bool {
    SYMBOL_CHARS.contains(c)
}

fn is_ident_continue(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '\''
}

/// Split source text into tokens. Whitespace and `--` line comments are
/// skipped.
pub fn tokenize(source: &str) -> Result<Vec<Token>, SyntaxError> {
    let mut tokens = Vec::new();
    let mut chars = source.char_indices().peekable();

    while let Some(&(start, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }

        if c.is_ascii_digit() {
            let mut end = start;
            while let Some(&(i, d)) = chars.peek() {
                if !d.is_ascii_digit() {
                    break;
                }
                end = i + d.len_utf8();
                chars.next();
            }
            if let Some(&(i, d)) = chars.peek() {
                if is_ident_continue(d) && !d.is_ascii_digit() {
                    return Err(SyntaxError::new(
                        Span::new(i, i + d.len_utf8()),
                        format!("unexpected character {d:?} after number"),
                    ));
                }
            }
            tokens.push(Token {
                kind: TokenKind::IntegerLiteral,
                text: source[start..end].to_string(),
                span: Span::new(start, end),
            });
            continue;
        }

        if c.is_alphabetic() || c == '_' {
            let mut end = start;
            while let Some(&(i, d)) = chars.peek() {
                if !is_ident_continue(d) {
                    break;
                }
                end = i + d.len_utf8();
                chars.next();
            }
            let kind = if c.is_uppercase() {
                TokenKind::ConstructorName
            } else {
                TokenKind::Identifier
            };
            tokens.push(Token {
                kind,
                text: source[start..end].to_string(),
                span: Span::new(start, end),
            });
            continue;
        }

        if c == '"' {
            chars.next();
            let mut text = String::new();
            let mut closed = None;
            while let Some((i, d)) = chars.next() {
                match d {
                    '"' => {
                        closed = Some(i + 1);
                        break;
                    }
                    '\\' => match chars.next() {
                        Some((_, '\\')) => text.push('\\'),
                        Some((_, '"')) => text.push('"'),
                        Some((_, 'n')) => text.push('\n'),
                        Some((j, other)) => {
                            return Err(SyntaxError::new(
                                Span::new(i, j + other.len_utf8()),
                                format!("unknown escape sequence \\{other}"),
                            ))
                        }
                        None => break,
                    },
                    '\n' => break,
                    other => text.push(other),
                }
            }
            let Some(end) = closed else {
                return Err(SyntaxError::new(
                    Span::new(start, source.len()),
                    "unterminated string literal",
                ));
            };
            tokens.push(Token {
                kind: TokenKind::StringLiteral,
                text,
                span: Span::new(start, end),
            });
            continue;
        }

        if "()[],;`".contains(c) {
            chars.next();
            tokens.push(Token {
                kind: TokenKind::Punctuation,
                text: c.to_string(),
                span: Span::new(start, start + 1),
            });
            continue;
        }

        if is_symbol(c) {
            let mut end = start;
            while let Some(&(i, d)) = chars.peek() {
                if !is_symbol(d) {
                    break;
                }
                end = i + d.len_utf8();
                chars.next();
            }
            let text = &source[start..end];
            if text.len() >= 2 && text.bytes().all(|b| b == b'-') {
                // line comment
                while let Some(&(_, d)) = chars.peek() {
                    if d == '\n' {
                        break;
                    }
                    chars.next();
                }
                continue;
            }
            tokens.push(Token {
                kind: TokenKind::Operator,
                text: text.to_string(),
                span: Span::new(start, end),
            });
            continue;
        }

        return Err(SyntaxError::new(
            Span::new(start, start + c.len_utf8()),
            format!("illegal character {c:?}"),
        ));
    }

    Ok(tokens)
}
