use super::Span;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedModule {
    pub name: String,
    /// `None` exports every top-level name.
    pub exports: Option<Vec<String>>,
    pub imports: Vec<Import>,
    pub rules: Vec<Rule>,
    pub source: String,
}

impl ParsedModule {
    /// Top-level names in order of first definition.
    pub fn defined_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        for rule in &self.rules {
            if !names.contains(&rule.function.as_str()) {
                names.push(&rule.function);
            }
        }
        names
    }

    pub fn exports_name(&self, name: &str) -> bool {
        match &self.exports {
            Some(list) => list.iter().any(|e| e == name),
            None => self.rules.iter().any(|r| r.function == name),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Import {
    pub module: String,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rule {
    pub function: String,
    pub params: Vec<Pattern>,
    pub body: Expr,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Pattern {
    Var(String),
    Wildcard,
    Int(i64),
    Str(String),
    Constructor(String, Vec<Pattern>),
}

impl Pattern {
    pub fn nil() -> Pattern {
        Pattern::Constructor("[]".into(), Vec::new())
    }

    pub fn cons(head: Pattern, tail: Pattern) -> Pattern {
        Pattern::Constructor(":".into(), vec![head, tail])
    }

    pub fn variables(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_variables(&mut out);
        out
    }

    fn collect_variables<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Pattern::Var(v) => out.push(v),
            Pattern::Constructor(_, subs) => subs.iter().for_each(|p| p.collect_variables(out)),
            _ => {}
        }
    }
}

/// Sugared expression as written in source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Var(String, Span),
    Con(String, Span),
    Int(i64),
    Str(String),
    Apply(Box<Expr>, Box<Expr>),
    /// Binary operator application, already grouped by the fixity table.
    Infix {
        op: String,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    List(Vec<Expr>),
    Paren(Box<Expr>),
}
