//! Two-pass scope resolution over the syntax tree.
//!
//! The first pass records every binding per scope; the second re-walks the
//! tree in the same order and resolves each name occurrence with Python's
//! lookup rules (local, enclosing functions, module; class bodies are not
//! visible from nested scopes). Innermost binding wins on shadowing.

use std::collections::{HashMap, HashSet};

use super::parser::{Arg, Expr, ImportAlias, Name, Param, Stmt, SyntaxTree};
use super::{AnalysisOptions, IdentifierKind, IdentifierOccurrence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScopeKind {
    Module,
    Function,
    Class,
    Comprehension,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Binding {
    Import,
    Class,
    Function,
    Param,
    Other,
}

#[derive(Debug)]
struct Scope {
    kind: ScopeKind,
    parent: Option<usize>,
    bindings: HashMap<String, Binding>,
    globals: HashSet<String>,
    nonlocals: HashSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pass {
    Collect,
    Resolve,
}

/// Role of a name at the place it occurs.
#[derive(Debug, Clone, Copy)]
enum Role {
    Load,
    Bind(Binding),
    /// Member name after a dot.
    Member,
    /// Keyword-argument name in a call.
    Keyword,
    /// Non-binding component of an import path, classified like the
    /// statement's bound name.
    ImportPath,
}

struct Walker<'o> {
    pass: Pass,
    scopes: Vec<Scope>,
    /// Scope ids in creation order, replayed during the resolve pass.
    created: Vec<usize>,
    cursor: usize,
    current: usize,
    out: Vec<IdentifierOccurrence>,
    options: &'o AnalysisOptions,
    /// Set while handling a named-expression target.
    walrus: bool,
}

pub(super) fn classify(tree: &SyntaxTree, options: &AnalysisOptions) -> Vec<IdentifierOccurrence> {
    let module = Scope {
        kind: ScopeKind::Module,
        parent: None,
        bindings: HashMap::new(),
        globals: HashSet::new(),
        nonlocals: HashSet::new(),
    };
    let mut w = Walker { pass: Pass::Collect, scopes: vec![module], created: Vec::new(), cursor: 0, current: 0, out: Vec::new(), options, walrus: false };
    w.stmts(&tree.body);
    w.pass = Pass::Resolve;
    w.current = 0;
    w.stmts(&tree.body);
    let mut out = w.out;
    out.sort_by_key(|o| o.span.start);
    debug_assert!(out.windows(2).all(|p| p[0].span.end <= p[1].span.start));
    out
}

impl Walker<'_> {
    fn enter(&mut self, kind: ScopeKind) -> usize {
        let saved = self.current;
        self.current = match self.pass {
            Pass::Collect => {
                let id = self.scopes.len();
                self.scopes.push(Scope {
                    kind,
                    parent: Some(saved),
                    bindings: HashMap::new(),
                    globals: HashSet::new(),
                    nonlocals: HashSet::new(),
                });
                self.created.push(id);
                id
            }
            Pass::Resolve => {
                let id = self.created[self.cursor];
                self.cursor += 1;
                id
            }
        };
        saved
    }

    fn leave(&mut self, saved: usize) {
        self.current = saved;
    }

    /// Scope a binding or lookup starts from: named-expression targets
    /// escape comprehension scopes.
    fn target_scope(&self) -> usize {
        let mut scope = self.current;
        if self.walrus {
            while self.scopes[scope].kind == ScopeKind::Comprehension {
                scope = self.scopes[scope].parent.unwrap_or(0);
            }
        }
        scope
    }

    fn bind(&mut self, name: &str, binding: Binding) {
        let mut scope = self.target_scope();
        if self.scopes[scope].globals.contains(name) {
            scope = 0;
        } else if self.scopes[scope].nonlocals.contains(name) {
            return;
        }
        self.scopes[scope].bindings.entry(name.to_string()).or_insert(binding);
    }

    fn name(&mut self, name: &Name, role: Role) {
        match self.pass {
            Pass::Collect => {
                if let Role::Bind(b) = role {
                    self.bind(&name.id, b);
                }
            }
            Pass::Resolve => {
                let kind = match role {
                    Role::Member => IdentifierKind::Attribute,
                    Role::Keyword => IdentifierKind::Other,
                    Role::ImportPath if self.scopes[self.current].kind == ScopeKind::Module => IdentifierKind::Library,
                    Role::ImportPath => IdentifierKind::Other,
                    Role::Load | Role::Bind(_) => resolve(&self.scopes, self.target_scope(), &name.id),
                };
                if !self.options.self_is_identifier && kind == IdentifierKind::Parameter && (name.id == "self" || name.id == "cls") {
                    return;
                }
                self.out.push(IdentifierOccurrence { name: name.id.clone(), span: name.span, kind, is_global: kind.is_global() });
            }
        }
    }

    // ---- statements ----

    fn stmts(&mut self, body: &[Stmt]) {
        for s in body {
            self.stmt(s);
        }
    }

    fn params_outer(&mut self, params: &[Param]) {
        for p in params {
            if let Some(a) = &p.annotation {
                self.expr(a);
            }
            if let Some(d) = &p.default {
                self.expr(d);
            }
        }
    }

    fn stmt(&mut self, s: &Stmt) {
        match s {
            Stmt::Expr(e) => self.expr(e),
            Stmt::Assign { targets, value } => {
                self.expr(value);
                for t in targets {
                    self.target(t);
                }
            }
            Stmt::AugAssign { target, value } => {
                self.expr(value);
                self.target(target);
            }
            Stmt::AnnAssign { target, annotation, value } => {
                self.expr(annotation);
                if let Some(v) = value {
                    self.expr(v);
                }
                self.target(target);
            }
            Stmt::FunctionDef(f) => {
                for d in &f.decorators {
                    self.expr(d);
                }
                self.params_outer(&f.params);
                if let Some(r) = &f.returns {
                    self.expr(r);
                }
                self.name(&f.name, Role::Bind(Binding::Function));
                let saved = self.enter(ScopeKind::Function);
                for p in f.type_params.iter().chain(&f.params) {
                    self.name(&p.name, Role::Bind(Binding::Param));
                }
                self.type_param_bounds(&f.type_params);
                self.stmts(&f.body);
                self.leave(saved);
            }
            Stmt::ClassDef(c) => {
                for d in &c.decorators {
                    self.expr(d);
                }
                self.args(&c.bases);
                self.name(&c.name, Role::Bind(Binding::Class));
                let saved = self.enter(ScopeKind::Class);
                for p in &c.type_params {
                    self.name(&p.name, Role::Bind(Binding::Other));
                }
                self.type_param_bounds(&c.type_params);
                self.stmts(&c.body);
                self.leave(saved);
            }
            Stmt::Return(v) => {
                if let Some(v) = v {
                    self.expr(v);
                }
            }
            Stmt::Delete(targets) => {
                for t in targets {
                    self.target(t);
                }
            }
            Stmt::Pass | Stmt::Break | Stmt::Continue | Stmt::Error(_) => {}
            Stmt::Raise(es) | Stmt::Assert(es) => {
                for e in es {
                    self.expr(e);
                }
            }
            Stmt::Global(names) => {
                if self.pass == Pass::Collect {
                    for n in names {
                        self.scopes[self.current].globals.insert(n.id.clone());
                    }
                }
                for n in names {
                    self.name(n, Role::Load);
                }
            }
            Stmt::Nonlocal(names) => {
                if self.pass == Pass::Collect {
                    for n in names {
                        self.scopes[self.current].nonlocals.insert(n.id.clone());
                    }
                }
                for n in names {
                    self.name(n, Role::Load);
                }
            }
            Stmt::Import(aliases) => {
                for a in aliases {
                    self.import_alias(a);
                }
            }
            Stmt::ImportFrom { module, names } => {
                for (i, n) in module.iter().enumerate() {
                    self.name(n, if i == 0 { Role::ImportPath } else { Role::Member });
                }
                for a in names {
                    self.import_alias(a);
                }
            }
            Stmt::If { test, body, orelse } | Stmt::While { test, body, orelse } => {
                self.expr(test);
                self.stmts(body);
                self.stmts(orelse);
            }
            Stmt::For { target, iter, body, orelse } => {
                self.expr(iter);
                self.target(target);
                self.stmts(body);
                self.stmts(orelse);
            }
            Stmt::With { items, body } => {
                for item in items {
                    self.expr(&item.context);
                    if let Some(t) = &item.target {
                        self.target(t);
                    }
                }
                self.stmts(body);
            }
            Stmt::Try { body, handlers, orelse, finalbody } => {
                self.stmts(body);
                for h in handlers {
                    if let Some(t) = &h.typ {
                        self.expr(t);
                    }
                    if let Some(n) = &h.name {
                        self.name(n, Role::Bind(Binding::Other));
                    }
                    self.stmts(&h.body);
                }
                self.stmts(orelse);
                self.stmts(finalbody);
            }
            Stmt::Match { subject, cases } => {
                self.expr(subject);
                for c in cases {
                    self.pattern(&c.pattern);
                    if let Some(g) = &c.guard {
                        self.expr(g);
                    }
                    self.stmts(&c.body);
                }
            }
            Stmt::TypeAlias { name, type_params, value } => {
                self.name(name, Role::Bind(Binding::Other));
                let saved = self.enter(ScopeKind::Function);
                for p in type_params {
                    self.name(&p.name, Role::Bind(Binding::Param));
                }
                self.type_param_bounds(type_params);
                self.expr(value);
                self.leave(saved);
            }
        }
    }

    fn type_param_bounds(&mut self, params: &[Param]) {
        for p in params {
            if let Some(a) = &p.annotation {
                self.expr(a);
            }
            if let Some(d) = &p.default {
                self.expr(d);
            }
        }
    }

    fn import_alias(&mut self, a: &ImportAlias) {
        match &a.alias {
            Some(alias) => {
                for (i, n) in a.path.iter().enumerate() {
                    self.name(n, if i == 0 { Role::ImportPath } else { Role::Member });
                }
                self.name(alias, Role::Bind(Binding::Import));
            }
            None => {
                // `import a.b` binds `a`
                for (i, n) in a.path.iter().enumerate() {
                    self.name(n, if i == 0 { Role::Bind(Binding::Import) } else { Role::Member });
                }
            }
        }
    }

    fn args(&mut self, args: &[Arg]) {
        for a in args {
            match a {
                Arg::Positional(e) | Arg::Unpack(e) => self.expr(e),
                Arg::Keyword { name, value } => {
                    self.name(name, Role::Keyword);
                    self.expr(value);
                }
            }
        }
    }

    /// An expression in store/delete position.
    fn target(&mut self, t: &Expr) {
        match t {
            Expr::Name(n) => self.name(n, Role::Bind(Binding::Other)),
            Expr::Sequence(items) => {
                for i in items {
                    self.target(i);
                }
            }
            Expr::Starred(inner) => self.target(inner),
            other => self.expr(other),
        }
    }

    fn pattern(&mut self, p: &Expr) {
        match p {
            Expr::Capture(n) => self.name(n, Role::Bind(Binding::Other)),
            Expr::Sequence(items) | Expr::Operation(items) => {
                for i in items {
                    self.pattern(i);
                }
            }
            Expr::Dict(items) => {
                for (k, v) in items {
                    if let Some(k) = k {
                        self.pattern(k);
                    }
                    self.pattern(v);
                }
            }
            Expr::Call { func, args } => {
                self.expr(func);
                for a in args {
                    match a {
                        Arg::Positional(e) | Arg::Unpack(e) => self.pattern(e),
                        Arg::Keyword { name, value } => {
                            self.name(name, Role::Member);
                            self.pattern(value);
                        }
                    }
                }
            }
            other => self.expr(other),
        }
    }

    // ---- expressions ----

    fn expr(&mut self, e: &Expr) {
        match e {
            Expr::Name(n) => self.name(n, Role::Load),
            Expr::Literal => {}
            Expr::FString(parts) | Expr::Sequence(parts) | Expr::Operation(parts) => {
                for p in parts {
                    self.expr(p);
                }
            }
            Expr::Attribute { value, attr } => {
                self.expr(value);
                self.name(attr, Role::Member);
            }
            Expr::Call { func, args } => {
                self.expr(func);
                self.args(args);
            }
            Expr::Subscript { value, index } => {
                self.expr(value);
                for i in index {
                    self.expr(i);
                }
            }
            Expr::Starred(inner) => self.expr(inner),
            Expr::Dict(items) => {
                for (k, v) in items {
                    if let Some(k) = k {
                        self.expr(k);
                    }
                    self.expr(v);
                }
            }
            Expr::Comprehension { elements, generators } => {
                // the first iterable is evaluated in the enclosing scope
                if let Some(first) = generators.first() {
                    self.expr(&first.iter);
                }
                let saved = self.enter(ScopeKind::Comprehension);
                for (i, g) in generators.iter().enumerate() {
                    if i > 0 {
                        self.expr(&g.iter);
                    }
                    self.target(&g.target);
                    for cond in &g.ifs {
                        self.expr(cond);
                    }
                }
                for el in elements {
                    self.expr(el);
                }
                self.leave(saved);
            }
            Expr::Lambda { params, body } => {
                self.params_outer(params);
                let saved = self.enter(ScopeKind::Function);
                for p in params {
                    self.name(&p.name, Role::Bind(Binding::Param));
                }
                self.expr(body);
                self.leave(saved);
            }
            Expr::NamedExpr { target, value } => {
                self.expr(value);
                self.walrus = true;
                self.name(target, Role::Bind(Binding::Other));
                self.walrus = false;
            }
            Expr::Capture(n) => self.name(n, Role::Bind(Binding::Other)),
        }
    }
}

/// Innermost visible binding wins; class bodies are only visible to code
/// directly inside them.
fn resolve(scopes: &[Scope], start: usize, name: &str) -> IdentifierKind {
    let mut scope = Some(start);
    while let Some(id) = scope {
        let s = &scopes[id];
        if id == start || s.kind != ScopeKind::Class {
            if s.globals.contains(name) {
                return module_kind(&scopes[0], name);
            }
            if s.bindings.contains_key(name) && !s.nonlocals.contains(name) {
                return match (s.kind, s.bindings.get(name)) {
                    (ScopeKind::Module, _) => module_kind(s, name),
                    (ScopeKind::Class, _) => IdentifierKind::Attribute,
                    (_, Some(Binding::Param)) => IdentifierKind::Parameter,
                    _ => IdentifierKind::LocalVariable,
                };
            }
        }
        scope = s.parent;
    }
    IdentifierKind::Other
}

fn module_kind(module: &Scope, name: &str) -> IdentifierKind {
    match module.bindings.get(name) {
        Some(Binding::Import) => IdentifierKind::Library,
        Some(Binding::Class) => IdentifierKind::Class,
        Some(Binding::Function) => IdentifierKind::Function,
        _ => IdentifierKind::GlobalVariable,
    }
}
