use super::parser::{fixity, Assoc};
use crate::term::Term;

/// Pretty-prints a term as source text. Subterms nested deeper than
/// `max_depth` render as `...`; `None` means unlimited, and then the output
/// parses back to the same term.
pub fn render_term(term: &Term, max_depth: Option<usize>) -> String {
    let mut out = String::new();
    write_term(&mut out, term, max_depth);
    out
}

pub fn render_term_unlimited(term: &Term) -> String {
    render_term(term, None)
}

fn is_operator_ident(s: &str) -> bool {
    !s.is_empty() && !s.starts_with(|c: char| c.is_alphanumeric() || c == '_' || c == '[')
}

fn deeper(depth: Option<usize>) -> Option<usize> {
    depth.map(|d| d.saturating_sub(1))
}

/// Infix operator name if `t` is a binary application of an operator.
fn infix_parts(t: &Term) -> Option<(&str, &Term, &Term)> {
    let Term::Apply(f, rhs) = t else { return None };
    let Term::Apply(op, lhs) = &**f else { return None };
    let name = match &**op {
        Term::Name(n) if is_operator_ident(&n.ident) => &*n.ident,
        Term::Constructor(c) if is_operator_ident(c) => &**c,
        _ => return None,
    };
    Some((name, lhs, rhs))
}

fn write_term(out: &mut String, t: &Term, depth: Option<usize>) {
    if depth == Some(0) {
        out.push_str("...");
        return;
    }
    if let Some((op, lhs, rhs)) = infix_parts(t) {
        let (_, assoc) = fixity(op);
        write_operand(out, lhs, op, assoc == Assoc::Left, deeper(depth));
        out.push(' ');
        out.push_str(op);
        out.push(' ');
        write_operand(out, rhs, op, assoc == Assoc::Right, deeper(depth));
        return;
    }
    match t {
        Term::Apply(..) => {
            let (head, args) = (t.spine().0, t.spine_args());
            let operator_head = match head {
                Term::Name(n) => is_operator_ident(&n.ident),
                Term::Constructor(c) => is_operator_ident(c),
                _ => false,
            };
            // an over-applied operator shows its binary part in parentheses
            let mut head_text = String::new();
            let rest = if operator_head && args.len() > 2 {
                let binary = Term::apply_all(head.clone(), [args[0].clone(), args[1].clone()]);
                head_text.push('(');
                write_term(&mut head_text, &binary, deeper(depth));
                head_text.push(')');
                &args[2..]
            } else {
                write_atom(&mut head_text, head, depth);
                &args[..]
            };
            out.push_str(&head_text);
            for a in rest {
                out.push(' ');
                write_atom(out, a, deeper(depth));
            }
        }
        _ => write_atom(out, t, depth),
    }
}

/// Operands of an infix operator: nested infix applications get parentheses
/// unless they continue a chain of the same operator in its associative
/// direction.
fn write_operand(out: &mut String, t: &Term, parent_op: &str, chain_side: bool, depth: Option<usize>) {
    if depth == Some(0) {
        out.push_str("...");
        return;
    }
    match infix_parts(t) {
        Some((op, ..)) if op == parent_op && chain_side => write_term(out, t, depth),
        Some(_) => {
            out.push('(');
            write_term(out, t, depth);
            out.push(')');
        }
        None => write_term(out, t, depth),
    }
}

fn write_atom(out: &mut String, t: &Term, depth: Option<usize>) {
    if depth == Some(0) {
        out.push_str("...");
        return;
    }
    match t {
        Term::Apply(..) => {
            out.push('(');
            write_term(out, t, depth);
            out.push(')');
        }
        Term::Name(n) => {
            if is_operator_ident(&n.ident) {
                out.push('(');
                out.push_str(&n.ident);
                out.push(')');
            } else {
                out.push_str(&n.ident);
            }
        }
        Term::Constructor(c) => {
            if is_operator_ident(c) {
                out.push('(');
                out.push_str(c);
                out.push(')');
            } else {
                out.push_str(c);
            }
        }
        Term::Int(n) if *n < 0 => {
            out.push_str(&format!("({n})"));
        }
        Term::Int(n) => out.push_str(&n.to_string()),
        Term::Str(s) => {
            out.push('"');
            for ch in s.chars() {
                match ch {
                    '"' => out.push_str("\\\""),
                    '\\' => out.push_str("\\\\"),
                    '\n' => out.push_str("\\n"),
                    c => out.push(c),
                }
            }
            out.push('"');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse_expr;
    use crate::term::desugar;

    fn d(src: &str) -> Term {
        desugar(&parse_expr(src).unwrap())
    }

    fn squash(s: &str) -> String {
        s.chars().filter(|c| !c.is_whitespace()).collect()
    }

    #[test]
    fn interpreter_state_display() {
        let t = Term::cons(
            Term::apply(Term::con("Wait"), Term::Int(200)),
            Term::cons(
                Term::apply(
                    Term::con("Event"),
                    Term::apply_all(Term::con("Off"), [Term::var("g"), Term::var("normalVelocity")]),
                ),
                Term::apply_all(
                    Term::var("++"),
                    [
                        Term::apply_all(Term::var("note"), [Term::var("hn"), Term::var("g")]),
                        Term::var("main"),
                    ],
                ),
            ),
        );
        let text = render_term(&t, None);
        assert_eq!(text, "Wait 200 : Event (Off g normalVelocity) : (note hn g ++ main)");
        // the fully parenthesised form reads back to the same tree
        assert_eq!(d("Wait 200 : (Event (Off g normalVelocity) : (note hn g ++ main))"), t);
        assert_eq!(d(&text), t);
    }

    #[test]
    fn integer() {
        assert_eq!(render_term(&Term::Int(5), None), "5");
    }

    #[test]
    fn unshared_sum_inside_list() {
        let t = Term::cons(
            Term::Int(5),
            Term::cons(Term::apply_all(Term::var("+"), [Term::Int(2), Term::Int(3)]), Term::nil()),
        );
        assert_eq!(squash(&render_term(&t, None)), "5:(2+3):[]");
    }

    #[test]
    fn prefix_operators_and_partial_application() {
        assert_eq!(render_term(&d("zipWith (+) x (tail x)"), None), "zipWith (+) x (tail x)");
        assert_eq!(render_term(&d("(+) 2"), None), "(+) 2");
        assert_eq!(render_term(&d("(:)"), None), "(:)");
    }

    #[test]
    fn negative_and_string_literals() {
        let t = Term::apply_all(Term::var("f"), [Term::Int(-3), Term::Str("a\"b\n".into())]);
        let text = render_term(&t, None);
        assert_eq!(text, r#"f (-3) "a\"b\n""#);
        assert_eq!(d(&text), t);
    }

    #[test]
    fn depth_limit() {
        let t = d("1 : 2 : 3 : []");
        assert_eq!(render_term(&t, Some(2)), "1 : ... : ...");
        assert_eq!(render_term(&t, Some(0)), "...");
    }

    #[test]
    fn left_nested_append_keeps_parentheses() {
        let t = d("(a ++ b) ++ c");
        assert_eq!(render_term(&t, None), "(a ++ b) ++ c");
        assert_eq!(d("a - (b - c)"), d(&render_term(&d("a - (b - c)"), None)));
        assert_eq!(render_term(&d("a - b - c"), None), "a - b - c");
    }

    #[test]
    fn over_applied_operator() {
        let t = Term::apply_all(Term::var("++"), [Term::var("f"), Term::var("g"), Term::Int(1)]);
        let text = render_term(&t, None);
        assert_eq!(text, "(f ++ g) 1");
        assert_eq!(d(&text), t);
    }
}
