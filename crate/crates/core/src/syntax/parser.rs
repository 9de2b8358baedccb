use super::ast::{Expr, Import, ParsedModule, Pattern, Rule};
use super::lexer::{tokenize, Token, TokenKind};
use super::{Span, SyntaxError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Assoc {
    Left,
    Right,
    None,
}

/// Fixed operator table. Unknown operators get the Haskell default
/// (left-associative, precedence 9).
pub fn fixity(op: &str) -> (u8, Assoc) {
    match op {
        "$" => (0, Assoc::Right),
        "||" => (2, Assoc::Right),
        "&&" => (3, Assoc::Right),
        "==" | "/=" | "<" | "<=" | ">" | ">=" => (4, Assoc::None),
        ":" | "++" | "=:=" => (5, Assoc::Right),
        "+" | "-" => (6, Assoc::Left),
        "*" | "div" | "mod" => (7, Assoc::Left),
        "." => (9, Assoc::Right),
        _ => (9, Assoc::Left),
    }
}

const RESERVED: &[&str] = &[
    "module", "where", "import", "let", "in", "case", "of", "do", "if", "then", "else", "data",
    "type", "class", "instance", "newtype", "deriving", "infix", "infixl", "infixr",
];

const RESERVED_OPS: &[&str] = &["=", "::", "|", "\\", "..", "->", "<-", "@", "~", "=>"];

fn unsupported_keyword(word: &str) -> Option<&'static str> {
    Some(match word {
        "let" | "in" => "`let` expressions are not supported",
        "case" | "of" => "`case` expressions are not supported",
        "do" => "do-notation is not supported",
        "if" | "then" | "else" => "`if` expressions are not supported; use pattern matching on True/False",
        "data" | "type" | "newtype" | "class" | "instance" | "deriving" => {
            "type and class declarations are not supported"
        }
        "infix" | "infixl" | "infixr" => "custom fixity declarations are not supported",
        _ => return None,
    })
}

/// Parse a whole module. When the source has no `module X where` header the
/// module is named `expected_name` and exports everything.
pub fn parse_module(source: &str, expected_name: &str) -> Result<ParsedModule, SyntaxError> {
    let tokens = tokenize(source)?;
    let mut p = Parser::new(&tokens, source.len());
    p.module(source, expected_name)
}

/// Parse a standalone expression (no trailing semicolon).
pub fn parse_expr(source: &str) -> Result<Expr, SyntaxError> {
    let tokens = tokenize(source)?;
    let mut p = Parser::new(&tokens, source.len());
    let e = p.expr()?;
    if let Some(t) = p.peek() {
        return Err(SyntaxError::new(t.span, format!("unexpected `{}`", t.text)));
    }
    Ok(e)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    eof: usize,
}

impl<'a> Parser<'a> {
    fn new(tokens: &'a [Token], eof: usize) -> Self {
        Parser { tokens, pos: 0, eof }
    }

    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, n: usize) -> Option<&'a Token> {
        self.tokens.get(self.pos + n)
    }

    fn bump(&mut self) -> Option<&'a Token> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eof_span(&self) -> Span {
        Span::new(self.eof, self.eof)
    }

    fn current_span(&self) -> Span {
        self.peek().map_or(self.eof_span(), |t| t.span)
    }

    fn error_here(&self, expected: &str) -> SyntaxError {
        match self.peek() {
            Some(t) => SyntaxError::new(t.span, format!("expected {expected}, found `{}`", t.text)),
            None => SyntaxError::new(self.eof_span(), format!("expected {expected}, found end of input")),
        }
    }

    fn expect_punct(&mut self, text: &str) -> Result<&'a Token, SyntaxError> {
        match self.peek() {
            Some(t) if t.is_punct(text) => {
                self.pos += 1;
                Ok(t)
            }
            _ => Err(self.error_here(&format!("`{text}`"))),
        }
    }

    fn at_keyword(&self, word: &str) -> bool {
        self.peek().is_some_and(|t| t.is(TokenKind::Identifier, word))
    }

    fn module(&mut self, source: &str, expected_name: &str) -> Result<ParsedModule, SyntaxError> {
        let mut name = expected_name.to_string();
        let mut exports = None;
        if self.at_keyword("module") {
            self.bump();
            let t = self.bump().ok_or_else(|| self.error_here("module name"))?;
            if t.kind != TokenKind::ConstructorName {
                return Err(SyntaxError::new(t.span, "module name must start with an uppercase letter"));
            }
            if t.text != expected_name {
                return Err(SyntaxError::new(
                    t.span,
                    format!("module `{}` must be stored as `{}`", t.text, expected_name),
                ));
            }
            name = t.text.clone();
            if self.peek().is_some_and(|t| t.is_punct("(")) {
                exports = Some(self.export_list()?);
            }
            if !self.at_keyword("where") {
                return Err(self.error_here("`where`"));
            }
            self.bump();
        }

        let mut imports = Vec::new();
        while self.at_keyword("import") {
            let kw = self.bump().unwrap();
            let t = self.bump().ok_or_else(|| self.error_here("module name"))?;
            if t.kind != TokenKind::ConstructorName {
                return Err(SyntaxError::new(t.span, "expected module name after `import`"));
            }
            let semi = self.expect_punct(";")?;
            imports.push(Import {
                module: t.text.clone(),
                span: kw.span.to(semi.span),
            });
        }

        let mut rules = Vec::new();
        while self.peek().is_some() {
            if self.at_keyword("import") {
                return Err(SyntaxError::new(
                    self.current_span(),
                    "imports must precede all declarations",
                ));
            }
            rules.push(self.declaration()?);
        }

        Ok(ParsedModule {
            name,
            exports,
            imports,
            rules,
            source: source.to_string(),
        })
    }

    fn export_list(&mut self) -> Result<Vec<String>, SyntaxError> {
        self.expect_punct("(")?;
        let mut names = Vec::new();
        if self.peek().is_some_and(|t| t.is_punct(")")) {
            self.bump();
            return Ok(names);
        }
        loop {
            match self.peek() {
                Some(t) if t.kind == TokenKind::Identifier || t.kind == TokenKind::ConstructorName => {
                    self.bump();
                    names.push(t.text.clone());
                }
                Some(t) if t.is_punct("(") => {
                    self.bump();
                    let op = self.bump().filter(|t| t.kind == TokenKind::Operator);
                    let Some(op) = op else {
                        return Err(SyntaxError::new(self.current_span(), "expected operator in export list"));
                    };
                    self.expect_punct(")")?;
                    names.push(op.text.clone());
                }
                _ => return Err(self.error_here("exported name")),
            }
            match self.bump() {
                Some(t) if t.is_punct(",") => continue,
                Some(t) if t.is_punct(")") => break,
                Some(t) => return Err(SyntaxError::new(t.span, "expected `,` or `)` in export list")),
                None => return Err(SyntaxError::new(self.eof_span(), "unterminated export list")),
            }
        }
        Ok(names)
    }

    fn declaration(&mut self) -> Result<Rule, SyntaxError> {
        let start = self.current_span();
        let first = self.peek().unwrap();

        if first.kind == TokenKind::Identifier {
            if let Some(msg) = unsupported_keyword(&first.text) {
                return Err(SyntaxError::new(first.span, msg));
            }
            if RESERVED.contains(&first.text.as_str()) {
                return Err(SyntaxError::new(first.span, format!("unexpected keyword `{}`", first.text)));
            }
        }

        let (function, params) = if first.is_punct("(")
            && self.peek_at(1).is_some_and(|t| t.kind == TokenKind::Operator)
            && self.peek_at(2).is_some_and(|t| t.is_punct(")"))
        {
            // (op) p1 p2 = ...
            self.bump();
            let op = self.bump().unwrap();
            self.bump();
            self.check_definable_operator(op)?;
            let mut params = Vec::new();
            while !self.at_equals() {
                params.push(self.apat()?);
            }
            (op.text.clone(), params)
        } else {
            let lhs = self.apat_with_name()?;
            match self.peek() {
                Some(t) if t.kind == TokenKind::Operator && !RESERVED_OPS.contains(&t.text.as_str()) => {
                    self.bump();
                    self.check_definable_operator(t)?;
                    let rhs = self.apat()?;
                    (t.text.clone(), vec![lhs.pattern, rhs])
                }
                _ => {
                    let Some(name) = lhs.name else {
                        return Err(SyntaxError::new(start, "a declaration must start with a function name"));
                    };
                    let mut params = Vec::new();
                    while !self.at_equals() {
                        if self.peek().is_some_and(|t| t.is_op("::")) {
                            return Err(SyntaxError::new(
                                self.current_span(),
                                "type signatures are not supported",
                            ));
                        }
                        if self.peek().is_some_and(|t| t.is_op("|")) {
                            return Err(SyntaxError::new(self.current_span(), "guards are not supported"));
                        }
                        params.push(self.apat()?);
                    }
                    (name, params)
                }
            }
        };

        if !self.at_equals() {
            return Err(self.error_here("`=`"));
        }
        self.bump();
        let body = self.expr()?;
        let semi = match self.peek() {
            Some(t) if t.is_punct(";") => {
                self.bump();
                t.span
            }
            _ => return Err(self.error_here("`;` to terminate the declaration")),
        };

        let mut seen: Vec<&str> = Vec::new();
        for p in &params {
            for v in p.variables() {
                if seen.contains(&v) {
                    return Err(SyntaxError::new(
                        start,
                        format!("variable `{v}` occurs more than once in the patterns of `{function}`"),
                    ));
                }
                seen.push(v);
            }
        }

        Ok(Rule {
            function,
            params,
            body,
            span: start.to(semi),
        })
    }

    fn check_definable_operator(&self, t: &Token) -> Result<(), SyntaxError> {
        if t.text.starts_with(':') {
            return Err(SyntaxError::new(t.span, format!("cannot define constructor operator `{}`", t.text)));
        }
        if RESERVED_OPS.contains(&t.text.as_str()) {
            return Err(SyntaxError::new(t.span, format!("unexpected `{}`", t.text)));
        }
        Ok(())
    }

    fn at_equals(&self) -> bool {
        match self.peek() {
            Some(t) => t.is_op("="),
            None => true,
        }
    }

    /// Like `apat`, but also reports the plain identifier when the pattern
    /// is one, since a declaration head is syntactically a variable pattern.
    fn apat_with_name(&mut self) -> Result<LhsHead, SyntaxError> {
        if let Some(t) = self.peek() {
            if t.kind == TokenKind::Identifier && t.text != "_" {
                self.bump();
                return Ok(LhsHead {
                    name: Some(t.text.clone()),
                    pattern: Pattern::Var(t.text.clone()),
                });
            }
        }
        Ok(LhsHead {
            name: None,
            pattern: self.apat()?,
        })
    }

    fn apat(&mut self) -> Result<Pattern, SyntaxError> {
        let Some(t) = self.peek() else {
            return Err(self.error_here("pattern"));
        };
        match t.kind {
            TokenKind::Identifier => {
                if RESERVED.contains(&t.text.as_str()) {
                    return Err(SyntaxError::new(t.span, format!("unexpected keyword `{}`", t.text)));
                }
                self.bump();
                if t.text == "_" {
                    Ok(Pattern::Wildcard)
                } else {
                    Ok(Pattern::Var(t.text.clone()))
                }
            }
            TokenKind::ConstructorName => {
                self.bump();
                Ok(Pattern::Constructor(t.text.clone(), Vec::new()))
            }
            TokenKind::IntegerLiteral => {
                self.bump();
                Ok(Pattern::Int(parse_int(t)?))
            }
            TokenKind::StringLiteral => {
                self.bump();
                Ok(Pattern::Str(t.text.clone()))
            }
            TokenKind::Punctuation if t.text == "(" => {
                self.bump();
                if let Some(n) = self.negative_literal()? {
                    return Ok(Pattern::Int(n));
                }
                let p = self.pattern()?;
                self.expect_punct(")")?;
                Ok(p)
            }
            TokenKind::Punctuation if t.text == "[" => {
                self.bump();
                let mut items = Vec::new();
                if !self.peek().is_some_and(|t| t.is_punct("]")) {
                    loop {
                        items.push(self.pattern()?);
                        match self.bump() {
                            Some(t) if t.is_punct(",") => continue,
                            Some(t) if t.is_punct("]") => break,
                            Some(t) => return Err(SyntaxError::new(t.span, "expected `,` or `]` in list pattern")),
                            None => return Err(SyntaxError::new(self.eof_span(), "unterminated list pattern")),
                        }
                    }
                } else {
                    self.bump();
                }
                Ok(items
                    .into_iter()
                    .rev()
                    .fold(Pattern::nil(), |tail, head| Pattern::cons(head, tail)))
            }
            _ => Err(self.error_here("pattern")),
        }
    }

    /// `pat := con apat* | apat`, optionally followed by `: pat`.
    fn pattern(&mut self) -> Result<Pattern, SyntaxError> {
        let head = match self.peek() {
            Some(t) if t.kind == TokenKind::ConstructorName => {
                self.bump();
                let mut args = Vec::new();
                while self.peek().is_some_and(starts_apat) {
                    args.push(self.apat()?);
                }
                Pattern::Constructor(t.text.clone(), args)
            }
            _ => self.apat()?,
        };
        if self.peek().is_some_and(|t| t.is_op(":")) {
            self.bump();
            let tail = self.pattern()?;
            return Ok(Pattern::cons(head, tail));
        }
        Ok(head)
    }

    /// After an opening parenthesis: `- INT )`.
    fn negative_literal(&mut self) -> Result<Option<i64>, SyntaxError> {
        let is_neg = self.peek().is_some_and(|t| t.is_op("-"))
            && self.peek_at(1).is_some_and(|t| t.kind == TokenKind::IntegerLiteral)
            && self.peek_at(2).is_some_and(|t| t.is_punct(")"));
        if !is_neg {
            return Ok(None);
        }
        self.bump();
        let lit = self.bump().unwrap();
        self.bump();
        let text = format!("-{}", lit.text);
        text.parse::<i64>()
            .map(Some)
            .map_err(|_| SyntaxError::new(lit.span, "integer literal out of range"))
    }

    pub fn expr(&mut self) -> Result<Expr, SyntaxError> {
        self.infix_expr(0)
    }

    fn peek_operator(&self) -> Option<(String, Span, usize)> {
        let t = self.peek()?;
        if t.kind == TokenKind::Operator {
            if RESERVED_OPS.contains(&t.text.as_str()) {
                return None;
            }
            return Some((t.text.clone(), t.span, 1));
        }
        if t.is_punct("`") {
            let name = self.peek_at(1)?;
            let close = self.peek_at(2)?;
            if name.kind == TokenKind::Identifier && close.is_punct("`") {
                return Some((name.text.clone(), t.span.to(close.span), 3));
            }
        }
        None
    }

    fn infix_expr(&mut self, min_prec: u8) -> Result<Expr, SyntaxError> {
        let mut lhs = self.application()?;
        let mut last_nonassoc: Option<u8> = None;
        while let Some((op, span, width)) = self.peek_operator() {
            let (prec, assoc) = fixity(&op);
            if prec < min_prec {
                break;
            }
            if assoc == Assoc::None && last_nonassoc == Some(prec) {
                return Err(SyntaxError::new(
                    span,
                    format!("non-associative operator `{op}` cannot be chained"),
                ));
            }
            self.pos += width;
            let next_min = match assoc {
                Assoc::Left | Assoc::None => prec + 1,
                Assoc::Right => prec,
            };
            let rhs = self.infix_expr(next_min)?;
            last_nonassoc = (assoc == Assoc::None).then_some(prec);
            lhs = Expr::Infix {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn application(&mut self) -> Result<Expr, SyntaxError> {
        let mut f = self.aexp()?;
        while self.peek().is_some_and(starts_aexp) {
            let arg = self.aexp()?;
            f = Expr::Apply(Box::new(f), Box::new(arg));
        }
        Ok(f)
    }

    fn aexp(&mut self) -> Result<Expr, SyntaxError> {
        let Some(t) = self.peek() else {
            return Err(self.error_here("expression"));
        };
        match t.kind {
            TokenKind::Identifier => {
                if let Some(msg) = unsupported_keyword(&t.text) {
                    return Err(SyntaxError::new(t.span, msg));
                }
                if RESERVED.contains(&t.text.as_str()) {
                    return Err(SyntaxError::new(t.span, format!("unexpected keyword `{}`", t.text)));
                }
                if t.text == "_" {
                    return Err(SyntaxError::new(t.span, "`_` cannot be used in an expression"));
                }
                self.bump();
                Ok(Expr::Var(t.text.clone(), t.span))
            }
            TokenKind::ConstructorName => {
                self.bump();
                Ok(Expr::Con(t.text.clone(), t.span))
            }
            TokenKind::IntegerLiteral => {
                self.bump();
                Ok(Expr::Int(parse_int(t)?))
            }
            TokenKind::StringLiteral => {
                self.bump();
                Ok(Expr::Str(t.text.clone()))
            }
            TokenKind::Punctuation if t.text == "(" => self.paren_expr(),
            TokenKind::Punctuation if t.text == "[" => self.list_expr(),
            TokenKind::Operator if t.text == "\\" => {
                Err(SyntaxError::new(t.span, "lambda expressions are not supported"))
            }
            _ => Err(self.error_here("expression")),
        }
    }

    fn paren_expr(&mut self) -> Result<Expr, SyntaxError> {
        let open = self.bump().unwrap();
        if let Some(n) = self.negative_literal()? {
            return Ok(Expr::Int(n));
        }
        if let Some(t) = self.peek() {
            if t.kind == TokenKind::Operator && !RESERVED_OPS.contains(&t.text.as_str()) {
                if self.peek_at(1).is_some_and(|c| c.is_punct(")")) {
                    self.bump();
                    self.bump();
                    return Ok(if t.text.starts_with(':') {
                        Expr::Con(t.text.clone(), t.span)
                    } else {
                        Expr::Var(t.text.clone(), t.span)
                    });
                }
                return Err(SyntaxError::new(t.span, "operator sections are not supported"));
            }
            if t.is_punct(")") {
                return Err(SyntaxError::new(open.span.to(t.span), "the unit value `()` is not supported"));
            }
        }
        let inner = self.expr()?;
        match self.peek() {
            Some(t) if t.is_punct(")") => {
                self.bump();
                Ok(Expr::Paren(Box::new(inner)))
            }
            Some(t) if t.is_punct(",") => Err(SyntaxError::new(t.span, "tuples are not supported")),
            Some(t) if t.kind == TokenKind::Operator || t.is_punct("`") => {
                Err(SyntaxError::new(t.span, "operator sections are not supported"))
            }
            _ => Err(self.error_here("`)`")),
        }
    }

    fn list_expr(&mut self) -> Result<Expr, SyntaxError> {
        let open = self.bump().unwrap();
        if let Some(t) = self.peek() {
            if t.is_punct("]") {
                self.bump();
                return Ok(Expr::Con("[]".into(), open.span.to(t.span)));
            }
        }
        let mut items = Vec::new();
        loop {
            items.push(self.expr()?);
            match self.peek() {
                Some(t) if t.is_punct(",") => {
                    self.bump();
                }
                Some(t) if t.is_punct("]") => {
                    self.bump();
                    break;
                }
                Some(t) if t.is_op("|") => {
                    return Err(SyntaxError::new(t.span, "list comprehensions are not supported"))
                }
                Some(t) if t.is_op("..") => {
                    return Err(SyntaxError::new(t.span, "arithmetic sequences are not supported"))
                }
                _ => return Err(self.error_here("`,` or `]`")),
            }
        }
        Ok(Expr::List(items))
    }
}

struct LhsHead {
    name: Option<String>,
    pattern: Pattern,
}

fn starts_apat(t: &Token) -> bool {
    matches!(
        t.kind,
        TokenKind::Identifier | TokenKind::ConstructorName | TokenKind::IntegerLiteral | TokenKind::StringLiteral
    ) || t.is_punct("(")
        || t.is_punct("[")
}

fn starts_aexp(t: &Token) -> bool {
    starts_apat(t)
}

fn parse_int(t: &Token) -> Result<i64, SyntaxError> {
    t.text
        .parse()
        .map_err(|_| SyntaxError::new(t.span, "integer literal out of range"))
}
