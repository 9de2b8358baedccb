//! Runtime terms. The interpreter state is a single tree of these; nothing is
//! shared, so duplicating a variable duplicates its subterm.

use std::fmt;
use std::sync::Arc;

use crate::syntax::{render_term_unlimited, Expr};

/// A reference to a top-level function or builtin.
///
/// `module` records which module's definition the name was resolved
/// against. Names parsed outside any module scope, and builtins, have none.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Name {
    pub ident: Arc<str>,
    pub module: Option<Arc<str>>,
}

impl Name {
    pub fn unresolved(ident: &str) -> Self {
        Name {
            ident: ident.into(),
            module: None,
        }
    }

    pub fn qualified(module: &str, ident: &str) -> Self {
        Name {
            ident: ident.into(),
            module: Some(module.into()),
        }
    }
}

impl fmt::Debug for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.module {
            Some(m) => write!(f, "{m}.{}", self.ident),
            None => write!(f, "{}", self.ident),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Apply(Box<Term>, Box<Term>),
    Name(Name),
    Constructor(Arc<str>),
    Int(i64),
    Str(Arc<str>),
}

/// Direction taken at an application node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Function,
    Argument,
}

impl Term {
    pub fn apply(f: Term, x: Term) -> Term {
        Term::Apply(Box::new(f), Box::new(x))
    }

    pub fn apply_all(f: Term, args: impl IntoIterator<Item = Term>) -> Term {
        args.into_iter().fold(f, Term::apply)
    }

    pub fn con(name: &str) -> Term {
        Term::Constructor(name.into())
    }

    pub fn var(ident: &str) -> Term {
        Term::Name(Name::unresolved(ident))
    }

    pub fn nil() -> Term {
        Term::con("[]")
    }

    pub fn cons(head: Term, tail: Term) -> Term {
        Term::apply_all(Term::con(":"), [head, tail])
    }

    /// Builds `x1 : x2 : ... : []`.
    pub fn list(items: impl IntoIterator<Item = Term, IntoIter: DoubleEndedIterator>) -> Term {
        items
            .into_iter()
            .rev()
            .fold(Term::nil(), |tail, head| Term::cons(head, tail))
    }

    /// Head of the application spine and the number of arguments applied to it.
    pub fn spine(&self) -> (&Term, usize) {
        let mut cur = self;
        let mut n = 0;
        while let Term::Apply(f, _) = cur {
            cur = f;
            n += 1;
        }
        (cur, n)
    }

    /// Arguments of the spine, left to right.
    pub fn spine_args(&self) -> Vec<&Term> {
        let mut args = Vec::new();
        let mut cur = self;
        while let Term::Apply(f, x) = cur {
            args.push(&**x);
            cur = f;
        }
        args.reverse();
        args
    }

    /// Splits an application spine into its head and arguments, by value.
    pub fn into_spine(self) -> (Term, Vec<Term>) {
        let mut args = Vec::new();
        let mut cur = self;
        while let Term::Apply(f, x) = cur {
            args.push(*x);
            cur = *f;
        }
        args.reverse();
        (cur, args)
    }

    /// If this is a saturated application of constructor `name` with `arity`
    /// arguments, returns the arguments.
    pub fn as_constructor(&self, name: &str, arity: usize) -> Option<Vec<&Term>> {
        match self.spine() {
            (Term::Constructor(c), n) if &**c == name && n == arity => Some(self.spine_args()),
            _ => None,
        }
    }

    pub fn at_path(&self, path: &[Branch]) -> Option<&Term> {
        let mut cur = self;
        for b in path {
            match (cur, b) {
                (Term::Apply(f, _), Branch::Function) => cur = f,
                (Term::Apply(_, x), Branch::Argument) => cur = x,
                _ => return None,
            }
        }
        Some(cur)
    }

    /// Drops module qualification from every name.
    pub fn unqualified(&self) -> Term {
        match self {
            Term::Apply(f, x) => Term::apply(f.unqualified(), x.unqualified()),
            Term::Name(n) => Term::var(&n.ident),
            other => other.clone(),
        }
    }
}

impl fmt::Debug for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_term_unlimited(self))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_term_unlimited(self))
    }
}

/// Number of nodes in the tree: every application, name and literal counts one.
pub fn term_node_count(term: &Term) -> usize {
    let mut count = 0;
    let mut stack = vec![term];
    while let Some(t) = stack.pop() {
        count += 1;
        if let Term::Apply(f, x) = t {
            stack.push(f);
            stack.push(x);
        }
    }
    count
}

/// Removes list-literal and infix sugar. Names stay unresolved.
pub fn desugar(expr: &Expr) -> Term {
    match expr {
        Expr::Var(v, _) => Term::var(v),
        Expr::Con(c, _) => Term::con(c),
        Expr::Int(n) => Term::Int(*n),
        Expr::Str(s) => Term::Str(s.as_str().into()),
        Expr::Apply(f, x) => Term::apply(desugar(f), desugar(x)),
        Expr::Infix { op, lhs, rhs } => {
            let head = if op.starts_with(':') {
                Term::con(op)
            } else {
                Term::var(op)
            };
            Term::apply_all(head, [desugar(lhs), desugar(rhs)])
        }
        Expr::List(items) => Term::list(items.iter().map(desugar).collect::<Vec<_>>()),
        Expr::Paren(inner) => desugar(inner),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse_expr;

    fn d(src: &str) -> Term {
        desugar(&parse_expr(src).unwrap())
    }

    #[test]
    fn list_literal_becomes_cons_chain() {
        assert_eq!(
            d("[ Wait 100 ]"),
            Term::cons(Term::apply(Term::con("Wait"), Term::Int(100)), Term::nil())
        );
    }

    #[test]
    fn cons_is_right_associative() {
        assert_eq!(
            d("1 : 2 : []"),
            Term::cons(Term::Int(1), Term::cons(Term::Int(2), Term::nil()))
        );
    }

    #[test]
    fn append_becomes_prefix_application() {
        let note = Term::apply_all(Term::var("note"), [Term::var("hn"), Term::var("g")]);
        assert_eq!(
            d("note hn g ++ main"),
            Term::apply_all(Term::var("++"), [note, Term::var("main")])
        );
    }

    #[test]
    fn node_counts() {
        assert_eq!(term_node_count(&Term::Int(5)), 1);
        assert_eq!(term_node_count(&d("1 : []")), 5);
    }

    #[test]
    fn spine_helpers() {
        let t = d("f 1 2 3");
        let (head, n) = t.spine();
        assert_eq!(head, &Term::var("f"));
        assert_eq!(n, 3);
        assert_eq!(t.spine_args(), vec![&Term::Int(1), &Term::Int(2), &Term::Int(3)]);
        assert_eq!(t.at_path(&[Branch::Argument]), Some(&Term::Int(3)));
    }
}
