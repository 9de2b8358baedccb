//! The loaded program: parsed modules compiled into an index of rewrite
//! rules. Programs are immutable; swapping a module yields a new value with
//! the next generation number.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use crate::eval::builtin_arity;
use crate::syntax::{parse_expr, render_term_unlimited, Expr, ParsedModule, Pattern, SourceSpan, Span, SyntaxError};
use crate::term::{Name, Term};

/// Module imported into every other module without an explicit `import`.
pub const IMPLICIT_IMPORT: &str = "List";

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum LoadError {
    #[error("syntax error in module {module}: {error}")]
    Syntax { module: String, error: SyntaxError },
    #[error("module {module} imports unknown module {import}")]
    UnresolvedImport { module: String, import: String, span: Span },
    #[error("import cycle: {}", cycle.join(" -> "))]
    ImportCycle { cycle: Vec<String> },
    #[error("undefined name `{name}` in module {module}")]
    UndefinedName { module: String, name: String, span: Span },
    #[error("`{name}` in module {module} is ambiguous: exported by {}", candidates.join(", "))]
    AmbiguousName { module: String, name: String, candidates: Vec<String>, span: Span },
    #[error("module {module} defines `{name}`, which is already provided by {provider}")]
    NameClash { module: String, name: String, provider: String, span: Span },
    #[error("rules for `{function}` in module {module} have different numbers of arguments")]
    ArityMismatch { module: String, function: String, span: Span },
    #[error("module {module} exports `{name}`, which it does not define")]
    UnknownExport { module: String, name: String },
    #[error("module {0} is loaded twice")]
    DuplicateModule(String),
    #[error("module {0} is not loaded")]
    NoSuchModule(String),
}

impl LoadError {
    /// Module and byte range the error points at, when it has one.
    pub fn location(&self) -> Option<(&str, Span)> {
        match self {
            LoadError::Syntax { module, error } => Some((module, error.span)),
            LoadError::UnresolvedImport { module, span, .. }
            | LoadError::UndefinedName { module, span, .. }
            | LoadError::AmbiguousName { module, span, .. }
            | LoadError::NameClash { module, span, .. }
            | LoadError::ArityMismatch { module, span, .. } => Some((module, *span)),
            _ => None,
        }
    }

    pub fn message(&self) -> String {
        match self {
            LoadError::Syntax { error, .. } => error.message.clone(),
            other => other.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CompiledPattern {
    Bind(usize),
    Wildcard,
    Int(i64),
    Str(Arc<str>),
    Constructor(Arc<str>, Vec<CompiledPattern>),
}

/// Rule right-hand side with pattern variables replaced by slot numbers and
/// free names resolved against the defining module's scope.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Template {
    Apply(Box<Template>, Box<Template>),
    Slot(usize),
    Name(Name),
    Constructor(Arc<str>),
    Int(i64),
    Str(Arc<str>),
}

impl Template {
    /// Node count excluding slots.
    pub fn fixed_nodes(&self) -> usize {
        match self {
            Template::Apply(f, x) => 1 + f.fixed_nodes() + x.fixed_nodes(),
            Template::Slot(_) => 0,
            _ => 1,
        }
    }

    fn count_slots(&self, uses: &mut [u32]) {
        match self {
            Template::Apply(f, x) => {
                f.count_slots(uses);
                x.count_slots(uses);
            }
            Template::Slot(i) => uses[*i] += 1,
            _ => {}
        }
    }

    pub fn to_term(&self, slot_names: &[String]) -> Term {
        match self {
            Template::Apply(f, x) => Term::apply(f.to_term(slot_names), x.to_term(slot_names)),
            Template::Slot(i) => Term::var(&slot_names[*i]),
            Template::Name(n) => Term::Name(n.clone()),
            Template::Constructor(c) => Term::Constructor(c.clone()),
            Template::Int(n) => Term::Int(*n),
            Template::Str(s) => Term::Str(s.clone()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CompiledRule {
    pub params: Vec<CompiledPattern>,
    pub body: Template,
    pub span: SourceSpan,
    /// Pattern variable names by slot.
    pub slot_names: Vec<String>,
    /// Occurrences of each slot in the body.
    pub slot_uses: Vec<u32>,
    pub body_fixed_nodes: usize,
}

#[derive(Clone, Debug)]
pub struct Function {
    pub name: Name,
    pub arity: usize,
    pub rules: Vec<CompiledRule>,
}

type QualKey = (Arc<str>, Arc<str>);

#[derive(Clone, Debug)]
pub struct Program {
    modules: BTreeMap<String, Arc<ParsedModule>>,
    functions: HashMap<QualKey, Arc<Function>>,
    generation: u64,
}

impl Program {
    /// Compiles a set of modules. All errors found are reported.
    pub fn load(modules: Vec<ParsedModule>) -> Result<Program, Vec<LoadError>> {
        let mut map = BTreeMap::new();
        for m in modules {
            let name = m.name.clone();
            if map.insert(name.clone(), Arc::new(m)).is_some() {
                return Err(vec![LoadError::DuplicateModule(name)]);
            }
        }
        Self::compile(map, 0)
    }

    /// Loads the bundled prelude followed by `user` modules.
    pub fn with_prelude(user: Vec<ParsedModule>) -> Result<Program, Vec<LoadError>> {
        let mut all = crate::prelude::parsed_prelude();
        all.extend(user);
        Self::load(all)
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn modules(&self) -> impl Iterator<Item = &ParsedModule> {
        self.modules.values().map(|m| &**m)
    }

    pub fn module(&self, name: &str) -> Option<&ParsedModule> {
        self.modules.get(name).map(|m| &**m)
    }

    pub fn lookup(&self, module: &Arc<str>, ident: &Arc<str>) -> Option<&Arc<Function>> {
        self.functions.get(&(module.clone(), ident.clone()))
    }

    pub fn functions(&self) -> impl Iterator<Item = &Function> {
        self.functions.values().map(|f| &**f)
    }

    /// Replaces (or adds) one module. On error the receiver is untouched and
    /// remains the program in force.
    pub fn swap_module(&self, module: ParsedModule) -> Result<Program, Vec<LoadError>> {
        let mut map = self.modules.clone();
        map.insert(module.name.clone(), Arc::new(module));
        Self::compile(map, self.generation + 1)
    }

    /// Deterministic text listing of every compiled rule, used to compare
    /// programs independently of generation numbers.
    pub fn fingerprint(&self) -> String {
        let mut keys: Vec<_> = self.functions.keys().collect();
        keys.sort();
        let mut out = String::new();
        for key in keys {
            let f = &self.functions[key];
            for r in &f.rules {
                let params: Vec<String> = r.params.iter().map(|p| pattern_text(p, &r.slot_names)).collect();
                let _ = writeln!(
                    out,
                    "{}.{} {} = {} @{}",
                    key.0,
                    key.1,
                    params.join(" "),
                    render_term_unlimited(&r.body.to_term(&r.slot_names)),
                    r.span
                );
            }
        }
        out
    }

    /// The start term `module.function`.
    pub fn entry_term(&self, module: &str, function: &str) -> Result<Term, LoadError> {
        let m = self
            .modules
            .get(module)
            .ok_or_else(|| LoadError::NoSuchModule(module.to_string()))?;
        if !m.rules.iter().any(|r| r.function == function) {
            return Err(LoadError::UndefinedName {
                module: module.to_string(),
                name: function.to_string(),
                span: Span::default(),
            });
        }
        Ok(Term::Name(Name::qualified(module, function)))
    }

    /// Parses an expression and resolves its names in `module`'s scope.
    pub fn parse_term(&self, module: &str, source: &str) -> Result<Term, LoadError> {
        let m = self
            .modules
            .get(module)
            .ok_or_else(|| LoadError::NoSuchModule(module.to_string()))?;
        let expr = parse_expr(source).map_err(|error| LoadError::Syntax {
            module: module.to_string(),
            error,
        })?;
        let scope = Scope::new(&self.modules, m);
        let mut errors = Vec::new();
        let t = scope.template(&expr, &[], &mut errors);
        match errors.into_iter().next() {
            Some(e) => Err(e),
            None => Ok(t.to_term(&[])),
        }
    }

    fn compile(modules: BTreeMap<String, Arc<ParsedModule>>, generation: u64) -> Result<Program, Vec<LoadError>> {
        let mut errors = Vec::new();

        for m in modules.values() {
            for imp in &m.imports {
                if !modules.contains_key(&imp.module) {
                    errors.push(LoadError::UnresolvedImport {
                        module: m.name.clone(),
                        import: imp.module.clone(),
                        span: imp.span,
                    });
                }
            }
            if let Some(exports) = &m.exports {
                for e in exports {
                    let is_constructor = e.starts_with(char::is_uppercase);
                    if !is_constructor && !m.rules.iter().any(|r| &r.function == e) {
                        errors.push(LoadError::UnknownExport {
                            module: m.name.clone(),
                            name: e.clone(),
                        });
                    }
                }
            }
        }
        if !errors.is_empty() {
            return Err(errors);
        }
        if let Some(cycle) = find_import_cycle(&modules) {
            return Err(vec![LoadError::ImportCycle { cycle }]);
        }

        let mut functions: HashMap<QualKey, Arc<Function>> = HashMap::new();
        for m in modules.values() {
            let scope = Scope::new(&modules, m);
            let module_name: Arc<str> = m.name.as_str().into();

            for name in m.defined_names() {
                if let Some(provider) = scope.external_provider(name) {
                    let span = m.rules.iter().find(|r| r.function == name).map(|r| r.span).unwrap_or_default();
                    errors.push(LoadError::NameClash {
                        module: m.name.clone(),
                        name: name.to_string(),
                        provider,
                        span,
                    });
                }
            }

            let mut grouped: BTreeMap<&str, Vec<CompiledRule>> = BTreeMap::new();
            for rule in &m.rules {
                let mut slot_names = Vec::new();
                let params: Vec<_> = rule
                    .params
                    .iter()
                    .map(|p| compile_pattern(p, &mut slot_names))
                    .collect();
                let body = scope.template(&rule.body, &slot_names, &mut errors);
                let mut slot_uses = vec![0; slot_names.len()];
                body.count_slots(&mut slot_uses);
                let compiled = CompiledRule {
                    params,
                    body_fixed_nodes: body.fixed_nodes(),
                    body,
                    span: SourceSpan::new(module_name.clone(), rule.span),
                    slot_names,
                    slot_uses,
                };
                let entry = grouped.entry(rule.function.as_str()).or_default();
                if let Some(first) = entry.first() {
                    if first.params.len() != compiled.params.len() {
                        errors.push(LoadError::ArityMismatch {
                            module: m.name.clone(),
                            function: rule.function.clone(),
                            span: rule.span,
                        });
                    }
                }
                entry.push(compiled);
            }

            for (ident, rules) in grouped {
                let ident: Arc<str> = ident.into();
                let f = Function {
                    name: Name {
                        ident: ident.clone(),
                        module: Some(module_name.clone()),
                    },
                    arity: rules[0].params.len(),
                    rules,
                };
                functions.insert((module_name.clone(), ident), Arc::new(f));
            }
        }

        if !errors.is_empty() {
            return Err(errors);
        }
        Ok(Program {
            modules,
            functions,
            generation,
        })
    }
}

fn pattern_text(p: &CompiledPattern, slots: &[String]) -> String {
    match p {
        CompiledPattern::Bind(i) => slots[*i].clone(),
        CompiledPattern::Wildcard => "_".into(),
        CompiledPattern::Int(n) => format!("({n})"),
        CompiledPattern::Str(s) => format!("{s:?}"),
        CompiledPattern::Constructor(c, subs) if subs.is_empty() => c.to_string(),
        CompiledPattern::Constructor(c, subs) => {
            let inner: Vec<_> = subs.iter().map(|s| pattern_text(s, slots)).collect();
            format!("({c} {})", inner.join(" "))
        }
    }
}

fn compile_pattern(p: &Pattern, slots: &mut Vec<String>) -> CompiledPattern {
    match p {
        Pattern::Var(v) => {
            slots.push(v.clone());
            CompiledPattern::Bind(slots.len() - 1)
        }
        Pattern::Wildcard => CompiledPattern::Wildcard,
        Pattern::Int(n) => CompiledPattern::Int(*n),
        Pattern::Str(s) => CompiledPattern::Str(s.as_str().into()),
        Pattern::Constructor(c, subs) => CompiledPattern::Constructor(
            c.as_str().into(),
            subs.iter().map(|s| compile_pattern(s, slots)).collect(),
        ),
    }
}

/// Modules imported by `m`, including the implicit one.
fn imports_of<'a>(modules: &'a BTreeMap<String, Arc<ParsedModule>>, m: &'a ParsedModule) -> Vec<&'a str> {
    let mut out: Vec<&str> = m.imports.iter().map(|i| i.module.as_str()).collect();
    if m.name != IMPLICIT_IMPORT && modules.contains_key(IMPLICIT_IMPORT) && !out.contains(&IMPLICIT_IMPORT) {
        out.push(IMPLICIT_IMPORT);
    }
    out
}

fn find_import_cycle(modules: &BTreeMap<String, Arc<ParsedModule>>) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Active,
        Done,
    }
    fn visit<'a>(
        name: &'a str,
        modules: &'a BTreeMap<String, Arc<ParsedModule>>,
        marks: &mut HashMap<&'a str, Mark>,
        stack: &mut Vec<&'a str>,
    ) -> Option<Vec<String>> {
        match marks.get(name) {
            Some(Mark::Done) => return None,
            Some(Mark::Active) => {
                let start = stack.iter().position(|s| *s == name).unwrap_or(0);
                let mut cycle: Vec<String> = stack[start..].iter().map(|s| s.to_string()).collect();
                cycle.push(name.to_string());
                return Some(cycle);
            }
            None => {}
        }
        let m = modules.get(name)?;
        marks.insert(name, Mark::Active);
        stack.push(name);
        for imp in imports_of(modules, m) {
            if let Some(c) = visit(imp, modules, marks, stack) {
                return Some(c);
            }
        }
        stack.pop();
        marks.insert(name, Mark::Done);
        None
    }

    let mut marks = HashMap::new();
    for name in modules.keys() {
        let mut stack = Vec::new();
        if let Some(c) = visit(name, modules, &mut marks, &mut stack) {
            return Some(c);
        }
    }
    None
}

struct Scope<'a> {
    module: &'a ParsedModule,
    own: HashSet<&'a str>,
    imports: Vec<&'a ParsedModule>,
}

impl<'a> Scope<'a> {
    fn new(modules: &'a BTreeMap<String, Arc<ParsedModule>>, module: &'a ParsedModule) -> Self {
        let imports = imports_of(modules, module)
            .into_iter()
            .filter_map(|n| modules.get(n).map(|m| &**m))
            .collect();
        Scope {
            module,
            own: module.rules.iter().map(|r| r.function.as_str()).collect(),
            imports,
        }
    }

    /// Who else provides `name` in this scope: an imported module or a builtin.
    fn external_provider(&self, name: &str) -> Option<String> {
        if let Some(m) = self.imports.iter().find(|m| m.exports_name(name)) {
            return Some(format!("module {}", m.name));
        }
        builtin_arity(name).map(|_| "the builtins".to_string())
    }

    fn resolve(&self, ident: &str, span: Span, errors: &mut Vec<LoadError>) -> Name {
        if self.own.contains(ident) {
            return Name::qualified(&self.module.name, ident);
        }
        let providers: Vec<&ParsedModule> = self
            .imports
            .iter()
            .copied()
            .filter(|m| m.exports_name(ident))
            .collect();
        match providers.as_slice() {
            [one] => return Name::qualified(&one.name, ident),
            [] => {}
            many => {
                errors.push(LoadError::AmbiguousName {
                    module: self.module.name.clone(),
                    name: ident.to_string(),
                    candidates: many.iter().map(|m| m.name.clone()).collect(),
                    span,
                });
                return Name::unresolved(ident);
            }
        }
        if builtin_arity(ident).is_none() {
            errors.push(LoadError::UndefinedName {
                module: self.module.name.clone(),
                name: ident.to_string(),
                span,
            });
        }
        Name::unresolved(ident)
    }

    fn template(&self, e: &Expr, slots: &[String], errors: &mut Vec<LoadError>) -> Template {
        match e {
            Expr::Var(v, span) => match slots.iter().position(|s| s == v) {
                Some(i) => Template::Slot(i),
                None => Template::Name(self.resolve(v, *span, errors)),
            },
            Expr::Con(c, _) => Template::Constructor(c.as_str().into()),
            Expr::Int(n) => Template::Int(*n),
            Expr::Str(s) => Template::Str(s.as_str().into()),
            Expr::Apply(f, x) => Template::Apply(
                Box::new(self.template(f, slots, errors)),
                Box::new(self.template(x, slots, errors)),
            ),
            Expr::Infix { op, lhs, rhs } => {
                let head = if op.starts_with(':') {
                    Template::Constructor(op.as_str().into())
                } else {
                    match slots.iter().position(|s| s == op) {
                        Some(i) => Template::Slot(i),
                        None => Template::Name(self.resolve(op, Span::default(), errors)),
                    }
                };
                let l = self.template(lhs, slots, errors);
                let r = self.template(rhs, slots, errors);
                Template::Apply(Box::new(Template::Apply(Box::new(head), Box::new(l))), Box::new(r))
            }
            Expr::List(items) => items.iter().rev().fold(Template::Constructor("[]".into()), |tail, item| {
                let head = self.template(item, slots, errors);
                Template::Apply(
                    Box::new(Template::Apply(Box::new(Template::Constructor(":".into())), Box::new(head))),
                    Box::new(tail),
                )
            }),
            Expr::Paren(inner) => self.template(inner, slots, errors),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse_module;

    fn m(name: &str, src: &str) -> ParsedModule {
        parse_module(src, name).unwrap()
    }

    #[test]
    fn qualified_resolution_prefers_own_definitions() {
        let p = Program::with_prelude(vec![m("Main", "main = note 1 c ; note a b = [a, b] ; c = 1 ;")]).unwrap();
        let f = p.lookup(&"Main".into(), &"main".into()).unwrap();
        let t = f.rules[0].body.to_term(&[]);
        let args = t.spine_args();
        assert_eq!(t.spine().0, &Term::Name(Name::qualified("Main", "note")));
        assert_eq!(args[1], &Term::Name(Name::qualified("Main", "c")));
    }

    #[test]
    fn implicit_list_import() {
        let p = Program::with_prelude(vec![m("Main", "main = [] ++ [] ;")]).unwrap();
        let f = p.lookup(&"Main".into(), &"main".into()).unwrap();
        let t = f.rules[0].body.to_term(&[]);
        assert_eq!(t.spine().0, &Term::Name(Name::qualified("List", "++")));
    }

    #[test]
    fn clash_with_imported_export() {
        let errs = Program::with_prelude(vec![m("Main", "import Midi ; c = 1 ;")]).unwrap_err();
        assert!(matches!(&errs[0], LoadError::NameClash { name, .. } if name == "c"));
        let errs = Program::with_prelude(vec![m("Main", "cycle x = x ;")]).unwrap_err();
        assert!(matches!(&errs[0], LoadError::NameClash { name, .. } if name == "cycle"));
    }

    #[test]
    fn undefined_name_at_load() {
        let errs = Program::with_prelude(vec![m("Main", "main = nothere ;")]).unwrap_err();
        assert!(matches!(&errs[0], LoadError::UndefinedName { name, .. } if name == "nothere"));
    }

    #[test]
    fn import_cycle_detected() {
        let errs = Program::load(vec![m("A", "import B ; a = 1 ;"), m("B", "import A ; b = 1 ;")]).unwrap_err();
        assert!(matches!(&errs[0], LoadError::ImportCycle { .. }));
    }

    #[test]
    fn unresolved_import() {
        let errs = Program::with_prelude(vec![m("Main", "import Nope ; x = 1 ;")]).unwrap_err();
        assert!(matches!(&errs[0], LoadError::UnresolvedImport { import, .. } if import == "Nope"));
    }

    #[test]
    fn export_list_hides_helpers() {
        let errs = Program::with_prelude(vec![m("Main", "import Midi ; x = mergeWait ;")]).unwrap_err();
        assert!(matches!(&errs[0], LoadError::UndefinedName { name, .. } if name == "mergeWait"));
    }

    #[test]
    fn arity_mismatch() {
        let errs = Program::with_prelude(vec![m("Main", "f x = x ; f = 1 ;")]).unwrap_err();
        assert!(matches!(&errs[0], LoadError::ArityMismatch { .. }));
    }

    #[test]
    fn swap_bumps_generation_and_failed_swap_keeps_program() {
        let p = Program::with_prelude(vec![m("Main", "main = [] ;")]).unwrap();
        let fp = p.fingerprint();
        let q = p.swap_module(m("Main", "main = [Wait 1] ;")).unwrap();
        assert_eq!(q.generation(), p.generation() + 1);
        assert_ne!(q.fingerprint(), fp);
        assert!(p.swap_module(m("Main", "import Ghost ; main = [] ;")).is_err());
        assert_eq!(p.fingerprint(), fp);
        assert_eq!(p.generation(), 0);
    }

    #[test]
    fn swap_introducing_cycle_is_rejected() {
        let p = Program::with_prelude(vec![m("A", "a = 1 ;"), m("B", "import A ; b = a ;")]).unwrap();
        let errs = p.swap_module(m("A", "import B ; a = 1 ;")).unwrap_err();
        assert!(matches!(&errs[0], LoadError::ImportCycle { .. }));
    }

    #[test]
    fn parse_term_in_scope() {
        let p = Program::with_prelude(vec![m("Main", "f x = x ;")]).unwrap();
        let t = p.parse_term("Main", "f (2 + 3)").unwrap();
        assert_eq!(t.spine().0, &Term::Name(Name::qualified("Main", "f")));
        assert!(p.parse_term("Main", "g 1").is_err());
    }
}
