//! Lazy in-place reduction of a sharing-free term tree.
//!
//! Reduction is leftmost-outermost to weak head normal form. Pattern
//! matching forces arguments in place, so work done while trying a rule that
//! ultimately fails to match is kept in the tree.

use std::mem;

use crate::program::{CompiledPattern, CompiledRule, Function, Program, Template};
use crate::syntax::{render_term, SourceSpan};
use crate::term::{term_node_count, Branch, Name, Term};

/// Depth of rendered subterms in error messages.
const ERROR_RENDER_DEPTH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Budget {
    pub max_steps: u64,
    pub max_nodes: usize,
    /// Nesting limit for arguments forced while matching; guards the native stack.
    pub max_depth: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_steps: 1_000_000,
            max_nodes: 10_000_000,
            max_depth: 10_000,
        }
    }
}

/// One application of a named rule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReductionStep {
    pub rule_span: SourceSpan,
    pub redex_path: Vec<Branch>,
    pub generation: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("step budget of {limit} reductions exceeded")]
    StepBudgetExceeded { limit: u64 },
    #[error("term grew beyond {limit} nodes")]
    TermSizeExceeded { limit: usize },
    #[error("evaluation nested deeper than {limit} levels")]
    RecursionTooDeep { limit: usize },
    #[error("undefined name `{name}`")]
    UndefinedName { name: String },
    #[error("no rule of `{function}` matches arguments {}", arguments.join(", "))]
    NoMatchingRule { function: String, arguments: Vec<String> },
    #[error("`{op}` cannot be applied to {}", arguments.join(", "))]
    TypeMismatch { op: String, arguments: Vec<String> },
    #[error("`{op}`: {message}")]
    Arithmetic { op: String, message: String },
}

/// Arity of a builtin operation, `None` if `name` is not one.
pub fn builtin_arity(name: &str) -> Option<usize> {
    match name {
        "negate" => Some(1),
        "+" | "-" | "*" | "div" | "mod" | "==" | "/=" | "<" | "<=" | ">" | ">=" => Some(2),
        _ => None,
    }
}

fn rendered(t: &Term) -> String {
    render_term(t, Some(ERROR_RENDER_DEPTH))
}

fn bool_term(b: bool) -> Term {
    Term::con(if b { "True" } else { "False" })
}

fn floor_div(a: i64, b: i64) -> Option<i64> {
    let q = a.checked_div(b)?;
    if a % b != 0 && ((a < 0) != (b < 0)) {
        Some(q - 1)
    } else {
        Some(q)
    }
}

fn apply_builtin(op: &str, args: &[&Term]) -> Result<Term, EvalError> {
    let mismatch = || EvalError::TypeMismatch {
        op: op.to_string(),
        arguments: args.iter().map(|a| rendered(a)).collect(),
    };
    let arith = |message: &str| EvalError::Arithmetic {
        op: op.to_string(),
        message: message.to_string(),
    };
    if op == "negate" {
        return match args[0] {
            Term::Int(n) => n.checked_neg().map(Term::Int).ok_or_else(|| arith("overflow")),
            _ => Err(mismatch()),
        };
    }
    match (args[0], args[1]) {
        (Term::Int(a), Term::Int(b)) => {
            let (a, b) = (*a, *b);
            let result = match op {
                "+" => a.checked_add(b).ok_or_else(|| arith("overflow"))?,
                "-" => a.checked_sub(b).ok_or_else(|| arith("overflow"))?,
                "*" => a.checked_mul(b).ok_or_else(|| arith("overflow"))?,
                "div" | "mod" if b == 0 => return Err(arith("division by zero")),
                "div" => floor_div(a, b).ok_or_else(|| arith("overflow"))?,
                "mod" => a - b * floor_div(a, b).ok_or_else(|| arith("overflow"))?,
                _ => return compare(op, a.cmp(&b)).ok_or_else(mismatch),
            };
            Ok(Term::Int(result))
        }
        (Term::Str(a), Term::Str(b)) => compare(op, a.cmp(b)).ok_or_else(mismatch),
        _ => Err(mismatch()),
    }
}

fn compare(op: &str, ord: std::cmp::Ordering) -> Option<Term> {
    use std::cmp::Ordering::*;
    let b = match op {
        "==" => ord == Equal,
        "/=" => ord != Equal,
        "<" => ord == Less,
        "<=" => ord != Greater,
        ">" => ord == Greater,
        ">=" => ord != Less,
        _ => return None,
    };
    Some(bool_term(b))
}

/// Mutable references to the arguments of an application spine, left to right.
fn spine_args_mut(t: &mut Term) -> Vec<&mut Term> {
    let mut args = Vec::new();
    let mut cur = t;
    while let Term::Apply(f, x) = cur {
        args.push(&mut **x);
        cur = &mut **f;
    }
    args.reverse();
    args
}

fn spine_head_mut(t: &mut Term, skip: usize) -> &mut Term {
    let mut cur = t;
    for _ in 0..skip {
        match cur {
            Term::Apply(f, _) => cur = &mut **f,
            _ => unreachable!("spine shorter than counted"),
        }
    }
    cur
}

enum Head {
    Value,
    Rules(std::sync::Arc<Function>),
    Builtin(Name, usize),
}

/// Reduction context for one extraction: counts steps and nodes against a
/// budget and records every rule application.
pub struct Evaluator<'p> {
    program: &'p Program,
    budget: Budget,
    steps_used: u64,
    nodes: usize,
    depth: usize,
    path: Vec<Branch>,
    steps: Vec<ReductionStep>,
}

impl<'p> Evaluator<'p> {
    /// `nodes` is the current size of the tree the evaluator will mutate.
    pub fn new(program: &'p Program, budget: Budget, nodes: usize) -> Self {
        Evaluator {
            program,
            budget,
            steps_used: 0,
            nodes,
            depth: 0,
            path: Vec::new(),
            steps: Vec::new(),
        }
    }

    pub fn steps(&self) -> &[ReductionStep] {
        &self.steps
    }

    pub fn into_steps(self) -> Vec<ReductionStep> {
        self.steps
    }

    pub fn steps_used(&self) -> u64 {
        self.steps_used
    }

    /// Tracked node count of the whole tree.
    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// Runs `f` with `branches` appended to the current redex path.
    fn at<R>(&mut self, branches: impl IntoIterator<Item = Branch>, f: impl FnOnce(&mut Self) -> R) -> R {
        let before = self.path.len();
        self.path.extend(branches);
        let r = f(self);
        self.path.truncate(before);
        r
    }

    fn classify(&self, head: &Term) -> Result<Head, EvalError> {
        match head {
            Term::Name(n) => {
                if let Some(m) = &n.module {
                    return match self.program.lookup(m, &n.ident) {
                        Some(f) => Ok(Head::Rules(f.clone())),
                        None => Err(EvalError::UndefinedName {
                            name: format!("{m}.{}", n.ident),
                        }),
                    };
                }
                match builtin_arity(&n.ident) {
                    Some(a) => Ok(Head::Builtin(n.clone(), a)),
                    None => Err(EvalError::UndefinedName {
                        name: n.ident.to_string(),
                    }),
                }
            }
            _ => Ok(Head::Value),
        }
    }

    /// Reduces `t` in place until its head is a constructor, literal or an
    /// under-applied function.
    pub fn whnf(&mut self, t: &mut Term) -> Result<(), EvalError> {
        if self.depth >= self.budget.max_depth {
            return Err(EvalError::RecursionTooDeep {
                limit: self.budget.max_depth,
            });
        }
        self.depth += 1;
        let r = self.whnf_loop(t);
        self.depth -= 1;
        r
    }

    fn whnf_loop(&mut self, t: &mut Term) -> Result<(), EvalError> {
        loop {
            let (head, nargs) = t.spine();
            let (arity, head) = match self.classify(head)? {
                Head::Value => return Ok(()),
                Head::Rules(f) => (f.arity, Head::Rules(f)),
                Head::Builtin(n, a) => (a, Head::Builtin(n, a)),
            };
            if nargs < arity {
                return Ok(());
            }
            let extra = nargs - arity;
            let redex = spine_head_mut(t, extra);
            self.at(std::iter::repeat_n(Branch::Function, extra), |ev| match head {
                Head::Rules(f) => ev.rewrite(redex, &f),
                Head::Builtin(n, _) => ev.builtin(redex, &n.ident, arity),
                Head::Value => unreachable!(),
            })?;
        }
    }

    /// Like [`Evaluator::force`] for a subterm found at `path` from the root,
    /// so recorded redex paths stay relative to the root.
    pub fn force_at(&mut self, path: &[Branch], t: &mut Term) -> Result<(), EvalError> {
        self.at(path.iter().copied(), |ev| ev.force(t))
    }

    /// Reduces `t` to full normal form under constructors.
    pub fn force(&mut self, t: &mut Term) -> Result<(), EvalError> {
        let before = self.path.len();
        let r = self.force_spine(t);
        self.path.truncate(before);
        r
    }

    fn force_spine(&mut self, t: &mut Term) -> Result<(), EvalError> {
        let mut cur = t;
        loop {
            self.whnf(cur)?;
            if !matches!(cur.spine().0, Term::Constructor(_)) {
                return Ok(());
            }
            let mut args = spine_args_mut(cur);
            let n = args.len();
            let Some(last) = args.pop() else { return Ok(()) };
            for (j, a) in args.into_iter().enumerate() {
                let branches = std::iter::repeat_n(Branch::Function, n - 1 - j).chain([Branch::Argument]);
                self.at(branches, |ev| ev.force(a))?;
            }
            self.path.push(Branch::Argument);
            cur = last;
        }
    }

    fn builtin(&mut self, redex: &mut Term, op: &str, arity: usize) -> Result<(), EvalError> {
        {
            let args = spine_args_mut(redex);
            for (j, a) in args.into_iter().enumerate() {
                let branches = std::iter::repeat_n(Branch::Function, arity - 1 - j).chain([Branch::Argument]);
                self.at(branches, |ev| ev.whnf(a))?;
            }
        }
        let result = apply_builtin(op, &redex.spine_args())?;
        let removed = term_node_count(redex);
        self.nodes = self.nodes + 1 - removed;
        *redex = result;
        Ok(())
    }

    /// Tries `pattern` against `t`, forcing `t` as far as the pattern needs.
    pub fn matches(&mut self, pattern: &CompiledPattern, t: &mut Term) -> Result<bool, EvalError> {
        match pattern {
            CompiledPattern::Bind(_) | CompiledPattern::Wildcard => Ok(true),
            CompiledPattern::Int(n) => {
                self.whnf(t)?;
                Ok(matches!(t, Term::Int(m) if m == n))
            }
            CompiledPattern::Str(s) => {
                self.whnf(t)?;
                Ok(matches!(t, Term::Str(m) if m == s))
            }
            CompiledPattern::Constructor(c, subs) => {
                self.whnf(t)?;
                match t.spine() {
                    (Term::Constructor(h), n) if h == c && n == subs.len() => {}
                    _ => return Ok(false),
                }
                let args = spine_args_mut(t);
                let n = subs.len();
                for (j, (p, a)) in subs.iter().zip(args).enumerate() {
                    let branches = std::iter::repeat_n(Branch::Function, n - 1 - j).chain([Branch::Argument]);
                    if !self.at(branches, |ev| ev.matches(p, a))? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
        }
    }

    fn select_rule(&mut self, redex: &mut Term, f: &Function) -> Result<Option<usize>, EvalError> {
        let n = f.arity;
        'rules: for (i, rule) in f.rules.iter().enumerate() {
            let args = spine_args_mut(redex);
            for (j, (p, a)) in rule.params.iter().zip(args).enumerate() {
                let branches = std::iter::repeat_n(Branch::Function, n - 1 - j).chain([Branch::Argument]);
                if !self.at(branches, |ev| ev.matches(p, a))? {
                    continue 'rules;
                }
            }
            return Ok(Some(i));
        }
        Ok(None)
    }

    fn rewrite(&mut self, redex: &mut Term, f: &Function) -> Result<(), EvalError> {
        let Some(index) = self.select_rule(redex, f)? else {
            return Err(EvalError::NoMatchingRule {
                function: format!("{:?}", f.name),
                arguments: redex.spine_args().into_iter().map(rendered).collect(),
            });
        };
        if self.steps_used >= self.budget.max_steps {
            return Err(EvalError::StepBudgetExceeded {
                limit: self.budget.max_steps,
            });
        }
        let rule = &f.rules[index];
        self.steps_used += 1;
        self.steps.push(ReductionStep {
            rule_span: rule.span.clone(),
            redex_path: self.path.clone(),
            generation: self.program.generation(),
        });

        let (_, args) = mem::replace(redex, Term::Int(0)).into_spine();
        let mut slots: Vec<Option<Term>> = vec![None; rule.slot_names.len()];
        let mut discarded = 0usize;
        for (p, a) in rule.params.iter().zip(args) {
            bind(p, a, &mut slots, &mut discarded);
        }
        let mut added = rule.body_fixed_nodes;
        let mut removed = 1 + f.arity + discarded;
        for (slot, &uses) in slots.iter().zip(&rule.slot_uses) {
            if uses != 1 {
                let size = slot.as_ref().map_or(0, term_node_count);
                added += uses as usize * size;
                removed += size;
            }
        }
        self.nodes = self.nodes + added - removed;
        if self.nodes > self.budget.max_nodes {
            // leave the tree consistent before reporting
            *redex = instantiate(rule, &mut slots);
            return Err(EvalError::TermSizeExceeded {
                limit: self.budget.max_nodes,
            });
        }
        *redex = instantiate(rule, &mut slots);
        Ok(())
    }
}

/// Moves matched subterms into their slots, counting the nodes of the
/// argument that are not bound to any variable.
fn bind(p: &CompiledPattern, t: Term, slots: &mut [Option<Term>], discarded: &mut usize) {
    match p {
        CompiledPattern::Bind(i) => slots[*i] = Some(t),
        CompiledPattern::Wildcard => *discarded += term_node_count(&t),
        CompiledPattern::Int(_) | CompiledPattern::Str(_) => *discarded += 1,
        CompiledPattern::Constructor(_, subs) => {
            *discarded += 1 + subs.len();
            let (_, args) = t.into_spine();
            for (sp, a) in subs.iter().zip(args) {
                bind(sp, a, slots, discarded);
            }
        }
    }
}

fn instantiate(rule: &CompiledRule, slots: &mut [Option<Term>]) -> Term {
    let mut remaining = rule.slot_uses.clone();
    build(&rule.body, slots, &mut remaining)
}

fn build(t: &Template, slots: &mut [Option<Term>], remaining: &mut [u32]) -> Term {
    match t {
        Template::Apply(f, x) => {
            let f = build(f, slots, remaining);
            Term::apply(f, build(x, slots, remaining))
        }
        Template::Slot(i) => {
            remaining[*i] -= 1;
            if remaining[*i] == 0 {
                slots[*i].take().expect("slot bound")
            } else {
                slots[*i].clone().expect("slot bound")
            }
        }
        Template::Name(n) => Term::Name(n.clone()),
        Template::Constructor(c) => Term::Constructor(c.clone()),
        Template::Int(n) => Term::Int(*n),
        Template::Str(s) => Term::Str(s.clone()),
    }
}

/// Reduces `term` to weak head normal form, returning the rule applications.
pub fn whnf(program: &Program, term: &mut Term, budget: Budget) -> Result<Vec<ReductionStep>, EvalError> {
    let mut ev = Evaluator::new(program, budget, term_node_count(term));
    ev.whnf(term)?;
    Ok(ev.into_steps())
}

/// Reduces `term` to full normal form, returning the rule applications.
pub fn force(program: &Program, term: &mut Term, budget: Budget) -> Result<Vec<ReductionStep>, EvalError> {
    let mut ev = Evaluator::new(program, budget, term_node_count(term));
    ev.force(term)?;
    Ok(ev.into_steps())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse_module;

    fn program(src: &str) -> Program {
        Program::with_prelude(vec![parse_module(src, "Main").unwrap()]).unwrap()
    }

    fn term(p: &Program, src: &str) -> Term {
        p.parse_term("Main", src).unwrap()
    }

    fn squash(s: &str) -> String {
        s.chars().filter(|c| !c.is_whitespace()).collect()
    }

    #[test]
    fn builtin_arithmetic() {
        let p = program("x = 1 ;");
        for (src, expect) in [
            ("(+) 2 3", Term::Int(5)),
            ("100 - 50", Term::Int(50)),
            ("negate (-7)", Term::Int(7)),
            ("100 < 50", Term::con("False")),
            ("(-7) `div` 2", Term::Int(-4)),
            ("(-7) `mod` 2", Term::Int(1)),
            ("\"a\" < \"b\"", Term::con("True")),
            ("2 * 200", Term::Int(400)),
        ] {
            let mut t = term(&p, src);
            whnf(&p, &mut t, Budget::default()).unwrap();
            assert_eq!(t, expect, "{src}");
        }
    }

    #[test]
    fn builtin_errors() {
        let p = program("x = 1 ;");
        let mut t = term(&p, "1 + \"a\"");
        assert!(matches!(whnf(&p, &mut t, Budget::default()), Err(EvalError::TypeMismatch { .. })));
        let mut t = term(&p, "1 `div` 0");
        assert!(matches!(whnf(&p, &mut t, Budget::default()), Err(EvalError::Arithmetic { .. })));
    }

    #[test]
    fn duplicated_argument_is_not_shared() {
        let p = program("f x = x : x : [] ;");
        let mut t = term(&p, "f (2 + 3)");
        whnf(&p, &mut t, Budget::default()).unwrap();
        assert_eq!(squash(&t.to_string()), "(2+3):(2+3):[]");
        let mut ev = Evaluator::new(&p, Budget::default(), term_node_count(&t));
        let Term::Apply(f, _) = &mut t else { panic!() };
        let Term::Apply(_, head) = &mut **f else { panic!() };
        ev.force(head).unwrap();
        assert_eq!(squash(&t.to_string()), "5:(2+3):[]");
        assert_eq!(ev.nodes(), term_node_count(&t));
    }

    #[test]
    fn force_event() {
        let p = program("x = 1 ;");
        let mut t = term(&p, "Event (On ((+) 59 1) 64)");
        force(&p, &mut t, Budget::default()).unwrap();
        assert_eq!(t.to_string(), "Event (On 60 64)");
    }

    #[test]
    fn first_rule_wins_in_merge() {
        let p = Program::with_prelude(vec![parse_module("import Midi ; x = 1 ;", "Main").unwrap()]).unwrap();
        let mut t = term(&p, "(Wait 3 : []) =:= (Event (On 1 2) : [])");
        let steps = whnf(&p, &mut t, Budget::default()).unwrap();
        assert_eq!(steps.len(), 1);
        let midi = p.module("Midi").unwrap();
        let second = midi.rules.iter().filter(|r| r.function == "=:=").nth(1).unwrap();
        assert_eq!(steps[0].rule_span.start, second.span.start);
        assert_eq!(t.to_string(), "Event (On 1 2) : ((Wait 3 : []) =:= [])");
    }

    #[test]
    fn variables_bind_without_forcing() {
        let p = program("k x = 1 ; loop = loop ;");
        let mut t = term(&p, "k loop");
        let steps = whnf(&p, &mut t, Budget::default()).unwrap();
        assert_eq!(t, Term::Int(1));
        assert_eq!(steps.len(), 1);
    }

    #[test]
    fn step_budget() {
        let p = program("loop = loop ;");
        let mut t = term(&p, "loop");
        let budget = Budget {
            max_steps: 50,
            ..Budget::default()
        };
        assert_eq!(
            whnf(&p, &mut t, budget),
            Err(EvalError::StepBudgetExceeded { limit: 50 })
        );
    }

    #[test]
    fn size_budget() {
        let p = program("grow x = grow (x : x) ;");
        let mut t = term(&p, "grow 1");
        let budget = Budget {
            max_nodes: 10_000,
            ..Budget::default()
        };
        assert_eq!(
            whnf(&p, &mut t, budget),
            Err(EvalError::TermSizeExceeded { limit: 10_000 })
        );
        assert!(term_node_count(&t) > 10_000);
    }

    #[test]
    fn no_matching_rule() {
        let p = program("f [] = 1 ;");
        let mut t = term(&p, "f (1 : [])");
        assert!(matches!(
            whnf(&p, &mut t, Budget::default()),
            Err(EvalError::NoMatchingRule { .. })
        ));
    }

    #[test]
    fn partial_application_is_whnf() {
        let p = program("f a b = a ;");
        let mut t = term(&p, "f 1");
        assert!(whnf(&p, &mut t, Budget::default()).unwrap().is_empty());
        let mut t = term(&p, "(+) 1");
        whnf(&p, &mut t, Budget::default()).unwrap();
        assert_eq!(t.to_string(), "(+) 1");
    }

    #[test]
    fn over_application_reduces_inner_redex() {
        let p = program("k x = f ; f a = a + 1 ;");
        let mut t = term(&p, "k 0 41");
        let steps = whnf(&p, &mut t, Budget::default()).unwrap();
        assert_eq!(t, Term::Int(42));
        assert_eq!(steps[0].redex_path, vec![Branch::Function]);
        assert!(steps[1].redex_path.is_empty());
    }

    #[test]
    fn cycle_expands_to_append() {
        let p = program("m = [Wait 1] ;");
        let mut t = term(&p, "cycle m");
        whnf(&p, &mut t, Budget::default()).unwrap();
        assert_eq!(t.to_string(), "Wait 1 : ([] ++ cycle m)");
    }

    #[test]
    fn node_tracking_matches_recount() {
        let p = program("f x y _ = x : x : y : [] ; g (a : _) = a ;");
        let mut t = term(&p, "f (g [1 + 2, 3]) (g [4]) (g [5, 6, 7])");
        let mut ev = Evaluator::new(&p, Budget::default(), term_node_count(&t));
        ev.force(&mut t).unwrap();
        assert_eq!(ev.nodes(), term_node_count(&t));
        assert_eq!(t.to_string(), "3 : 3 : 4 : []");
    }

    #[test]
    fn swapped_away_name_is_undefined() {
        let p = program("main = old ; old = 1 ;");
        let mut t = term(&p, "old");
        let q = p
            .swap_module(parse_module("main = 2 ;", "Main").unwrap())
            .unwrap();
        assert!(matches!(
            whnf(&q, &mut t, Budget::default()),
            Err(EvalError::UndefinedName { .. })
        ));
    }
}
