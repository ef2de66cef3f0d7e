//! Error-tolerant recursive-descent parser for Python 3 source.
//!
//! The tree keeps only what identifier-scope analysis needs: statements,
//! binding structure, and every name with its byte span. Operators and
//! literals collapse into `Expr::Operation` / `Expr::Literal`.
//!
//! A syntax error inside a statement is recorded, the statement becomes
//! `Stmt::Error`, and parsing resumes at the next logical line.

use super::lexer::{is_keyword, tokenize, tokenize_fragment, TokKind, Token};
use super::Span;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Name {
    pub id: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Name(Name),
    Literal,
    FString(Vec<Expr>),
    Attribute { value: Box<Expr>, attr: Name },
    Call { func: Box<Expr>, args: Vec<Arg> },
    Subscript { value: Box<Expr>, index: Vec<Expr> },
    Starred(Box<Expr>),
    /// Tuple, list or set display.
    Sequence(Vec<Expr>),
    Dict(Vec<(Option<Expr>, Expr)>),
    Comprehension { elements: Vec<Expr>, generators: Vec<Generator> },
    Lambda { params: Vec<Param>, body: Box<Expr> },
    NamedExpr { target: Name, value: Box<Expr> },
    /// Unary/binary/boolean/comparison/conditional/await/yield/slice.
    Operation(Vec<Expr>),
    /// A capture target inside a `case` pattern.
    Capture(Name),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub target: Expr,
    pub iter: Expr,
    pub ifs: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Arg {
    Positional(Expr),
    Keyword { name: Name, value: Expr },
    /// `*args` or `**kwargs` in a call.
    Unpack(Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: Name,
    pub annotation: Option<Expr>,
    pub default: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportAlias {
    /// Dotted path (`os.path` → [os, path]); a single name for `from` imports.
    pub path: Vec<Name>,
    pub alias: Option<Name>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionDef {
    pub decorators: Vec<Expr>,
    pub name: Name,
    pub type_params: Vec<Param>,
    pub params: Vec<Param>,
    pub returns: Option<Expr>,
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassDef {
    pub decorators: Vec<Expr>,
    pub name: Name,
    pub type_params: Vec<Param>,
    pub bases: Vec<Arg>,
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Handler {
    pub typ: Option<Expr>,
    pub name: Option<Name>,
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WithItem {
    pub context: Expr,
    pub target: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchCase {
    pub pattern: Expr,
    pub guard: Option<Expr>,
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Expr(Expr),
    Assign { targets: Vec<Expr>, value: Expr },
    AugAssign { target: Expr, value: Expr },
    AnnAssign { target: Expr, annotation: Expr, value: Option<Expr> },
    FunctionDef(Box<FunctionDef>),
    ClassDef(Box<ClassDef>),
    Return(Option<Expr>),
    Delete(Vec<Expr>),
    Pass,
    Break,
    Continue,
    Raise(Vec<Expr>),
    Global(Vec<Name>),
    Nonlocal(Vec<Name>),
    Assert(Vec<Expr>),
    Import(Vec<ImportAlias>),
    ImportFrom { module: Vec<Name>, names: Vec<ImportAlias> },
    If { test: Expr, body: Vec<Stmt>, orelse: Vec<Stmt> },
    While { test: Expr, body: Vec<Stmt>, orelse: Vec<Stmt> },
    For { target: Expr, iter: Expr, body: Vec<Stmt>, orelse: Vec<Stmt> },
    With { items: Vec<WithItem>, body: Vec<Stmt> },
    Try { body: Vec<Stmt>, handlers: Vec<Handler>, orelse: Vec<Stmt>, finalbody: Vec<Stmt> },
    Match { subject: Expr, cases: Vec<MatchCase> },
    TypeAlias { name: Name, type_params: Vec<Param>, value: Expr },
    Error(Span),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxError {
    pub span: Span,
    pub message: String,
}

/// Parsed module. `errors` is empty iff the whole source parsed cleanly.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntaxTree {
    pub body: Vec<Stmt>,
    pub errors: Vec<SyntaxError>,
}

impl SyntaxTree {
    pub fn has_errors(&self) -> bool {
        !self.errors.is_empty()
    }
}

/// Parses a module. Never panics; malformed regions become `Stmt::Error`.
pub fn parse(source: &str) -> SyntaxTree {
    let mut p = Parser::new(source, tokenize(source));
    let body = p.module();
    SyntaxTree { body, errors: p.errors }
}

type PResult<T> = Result<T, SyntaxError>;

const AUG_OPS: &[&str] = &["+=", "-=", "*=", "/=", "//=", "%=", "**=", ">>=", "<<=", "&=", "|=", "^=", "@="];
const COMPARE_OPS: &[&str] = &["==", "!=", "<", "<=", ">", ">="];

struct Parser<'a> {
    src: &'a str,
    toks: Vec<Token>,
    pos: usize,
    errors: Vec<SyntaxError>,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, toks: Vec<Token>) -> Self {
        Self { src, toks, pos: 0, errors: Vec::new() }
    }

    // ---- token helpers ----

    fn tok(&self) -> &Token {
        &self.toks[self.pos.min(self.toks.len() - 1)]
    }

    fn nth(&self, k: usize) -> &Token {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)]
    }

    fn text(&self, t: &Token) -> &'a str {
        &self.src[t.span.start..t.span.end]
    }

    fn bump(&mut self) -> Token {
        let t = self.tok().clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn at_op(&self, op: &str) -> bool {
        matches!(self.tok().kind, TokKind::Op(o) if o == op)
    }

    fn nth_is_op(&self, k: usize, op: &str) -> bool {
        matches!(self.nth(k).kind, TokKind::Op(o) if o == op)
    }

    fn at_kw(&self, kw: &str) -> bool {
        self.tok().kind == TokKind::Name && self.text(self.tok()) == kw
    }

    fn nth_is_kw(&self, k: usize, kw: &str) -> bool {
        let t = self.nth(k);
        t.kind == TokKind::Name && self.text(t) == kw
    }

    fn at_name(&self) -> bool {
        self.tok().kind == TokKind::Name && !is_keyword(self.text(self.tok()))
    }

    fn at(&self, kind: &TokKind) -> bool {
        &self.tok().kind == kind
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if self.at_op(op) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn error<T>(&self, message: impl Into<String>) -> PResult<T> {
        let t = self.tok();
        let message = match &t.kind {
            TokKind::Error(m) => format!("{}: {m}", message.into()),
            _ => message.into(),
        };
        Err(SyntaxError { span: t.span, message })
    }

    fn expect_op(&mut self, op: &str) -> PResult<()> {
        if self.eat_op(op) {
            Ok(())
        } else {
            self.error(format!("expected `{op}`"))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            self.error(format!("expected `{kw}`"))
        }
    }

    fn expect_newline(&mut self) -> PResult<()> {
        if self.at(&TokKind::Newline) {
            self.bump();
            Ok(())
        } else if self.at(&TokKind::EndMarker) {
            Ok(())
        } else {
            self.error("expected end of line")
        }
    }

    fn name(&mut self) -> PResult<Name> {
        if self.at_name() {
            let t = self.bump();
            Ok(Name { id: self.text(&t).to_string(), span: t.span })
        } else {
            self.error("expected identifier")
        }
    }

    // ---- statements ----

    fn module(&mut self) -> Vec<Stmt> {
        let mut body = Vec::new();
        while !self.at(&TokKind::EndMarker) {
            if self.at(&TokKind::Dedent) || self.at(&TokKind::Indent) || self.at(&TokKind::Newline) {
                let t = self.bump();
                if t.kind == TokKind::Indent {
                    self.errors.push(SyntaxError { span: t.span, message: "unexpected indent".into() });
                }
                continue;
            }
            self.statement_into(&mut body);
        }
        body
    }

    fn statement_into(&mut self, out: &mut Vec<Stmt>) {
        let start = self.pos;
        match self.statement() {
            Ok(stmts) => out.extend(stmts),
            Err(e) => {
                let span = Span::new(self.toks[start].span.start, e.span.end.max(self.toks[start].span.start));
                self.errors.push(e);
                self.recover(start);
                out.push(Stmt::Error(span));
            }
        }
    }

    /// Skips to the start of the next logical line, also skipping an
    /// indented block that directly follows.
    fn recover(&mut self, start: usize) {
        loop {
            match self.tok().kind {
                TokKind::EndMarker => return,
                TokKind::Dedent => break,
                TokKind::Newline => {
                    self.bump();
                    break;
                }
                _ => {
                    self.bump();
                }
            }
        }
        if self.at(&TokKind::Indent) {
            let mut depth = 0usize;
            loop {
                match self.tok().kind {
                    TokKind::EndMarker => return,
                    TokKind::Indent => depth += 1,
                    TokKind::Dedent => {
                        depth -= 1;
                        if depth == 0 {
                            self.bump();
                            break;
                        }
                    }
                    _ => {}
                }
                self.bump();
            }
        }
        if self.pos == start && !self.at(&TokKind::EndMarker) && !self.at(&TokKind::Dedent) {
            self.bump();
        }
    }

    fn statement(&mut self) -> PResult<Vec<Stmt>> {
        if self.at_op("@") {
            return Ok(vec![self.decorated()?]);
        }
        if self.tok().kind == TokKind::Name {
            match self.text(self.tok()) {
                "def" => return Ok(vec![self.function_def(Vec::new())?]),
                "class" => return Ok(vec![self.class_def(Vec::new())?]),
                "if" => return Ok(vec![self.if_stmt()?]),
                "while" => return Ok(vec![self.while_stmt()?]),
                "for" => return Ok(vec![self.for_stmt()?]),
                "try" => return Ok(vec![self.try_stmt()?]),
                "with" => return Ok(vec![self.with_stmt()?]),
                "async" if self.nth_is_kw(1, "def") || self.nth_is_kw(1, "for") || self.nth_is_kw(1, "with") => {
                    self.bump();
                    return self.statement();
                }
                "match" => {
                    let save = self.pos;
                    let errors = self.errors.len();
                    match self.match_stmt() {
                        Ok(s) => return Ok(vec![s]),
                        Err(_) => {
                            self.pos = save;
                            self.errors.truncate(errors);
                        }
                    }
                }
                "type" if self.nth(1).kind == TokKind::Name && (self.nth_is_op(2, "=") || self.nth_is_op(2, "[")) => {
                    self.bump();
                    let name = self.name()?;
                    let type_params = self.type_params()?;
                    self.expect_op("=")?;
                    let value = self.expression()?;
                    self.expect_newline()?;
                    return Ok(vec![Stmt::TypeAlias { name, type_params, value }]);
                }
                _ => {}
            }
        }
        self.simple_stmts()
    }

    fn simple_stmts(&mut self) -> PResult<Vec<Stmt>> {
        let mut out = vec![self.simple_stmt()?];
        while self.eat_op(";") {
            if self.at(&TokKind::Newline) || self.at(&TokKind::EndMarker) {
                break;
            }
            out.push(self.simple_stmt()?);
        }
        self.expect_newline()?;
        Ok(out)
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect_op(":")?;
        if self.at(&TokKind::Newline) {
            self.bump();
            if !self.at(&TokKind::Indent) {
                return self.error("expected an indented block");
            }
            self.bump();
            let mut body = Vec::new();
            loop {
                match self.tok().kind {
                    TokKind::Dedent => {
                        self.bump();
                        break;
                    }
                    TokKind::EndMarker => break,
                    TokKind::Newline => {
                        self.bump();
                    }
                    TokKind::Indent => {
                        let t = self.bump();
                        self.errors.push(SyntaxError { span: t.span, message: "unexpected indent".into() });
                    }
                    _ => self.statement_into(&mut body),
                }
            }
            Ok(body)
        } else {
            self.simple_stmts()
        }
    }

    fn simple_stmt(&mut self) -> PResult<Stmt> {
        if self.tok().kind == TokKind::Name {
            match self.text(self.tok()) {
                "pass" => {
                    self.bump();
                    return Ok(Stmt::Pass);
                }
                "break" => {
                    self.bump();
                    return Ok(Stmt::Break);
                }
                "continue" => {
                    self.bump();
                    return Ok(Stmt::Continue);
                }
                "return" => {
                    self.bump();
                    let value = if self.at_expr_start() { Some(self.star_expressions()?) } else { None };
                    return Ok(Stmt::Return(value));
                }
                "raise" => {
                    self.bump();
                    let mut exprs = Vec::new();
                    if self.at_expr_start() {
                        exprs.push(self.expression()?);
                        if self.eat_kw("from") {
                            exprs.push(self.expression()?);
                        }
                    }
                    return Ok(Stmt::Raise(exprs));
                }
                "global" | "nonlocal" => {
                    let global = self.text(self.tok()) == "global";
                    self.bump();
                    let mut names = vec![self.name()?];
                    while self.eat_op(",") {
                        names.push(self.name()?);
                    }
                    return Ok(if global { Stmt::Global(names) } else { Stmt::Nonlocal(names) });
                }
                "del" => {
                    self.bump();
                    let mut targets = vec![self.bitor()?];
                    while self.eat_op(",") {
                        if !self.at_expr_start() {
                            break;
                        }
                        targets.push(self.bitor()?);
                    }
                    return Ok(Stmt::Delete(targets));
                }
                "assert" => {
                    self.bump();
                    let mut exprs = vec![self.expression()?];
                    if self.eat_op(",") {
                        exprs.push(self.expression()?);
                    }
                    return Ok(Stmt::Assert(exprs));
                }
                "import" => {
                    self.bump();
                    let mut names = vec![self.dotted_as_name()?];
                    while self.eat_op(",") {
                        names.push(self.dotted_as_name()?);
                    }
                    return Ok(Stmt::Import(names));
                }
                "from" => return self.import_from(),
                _ => {}
            }
        }
        self.expr_or_assign()
    }

    fn dotted_name(&mut self) -> PResult<Vec<Name>> {
        let mut path = vec![self.name()?];
        while self.eat_op(".") {
            path.push(self.name()?);
        }
        Ok(path)
    }

    fn dotted_as_name(&mut self) -> PResult<ImportAlias> {
        let path = self.dotted_name()?;
        let alias = if self.eat_kw("as") { Some(self.name()?) } else { None };
        Ok(ImportAlias { path, alias })
    }

    fn import_from(&mut self) -> PResult<Stmt> {
        self.expect_kw("from")?;
        let mut dots = 0;
        while self.at_op(".") || self.at_op("...") {
            dots += 1;
            self.bump();
        }
        let module = if self.at_name() { self.dotted_name()? } else { Vec::new() };
        if module.is_empty() && dots == 0 {
            return self.error("expected module name");
        }
        self.expect_kw("import")?;
        let mut names = Vec::new();
        if self.eat_op("*") {
            return Ok(Stmt::ImportFrom { module, names });
        }
        let paren = self.eat_op("(");
        loop {
            let name = self.name()?;
            let alias = if self.eat_kw("as") { Some(self.name()?) } else { None };
            names.push(ImportAlias { path: vec![name], alias });
            if !self.eat_op(",") {
                break;
            }
            if paren && self.at_op(")") {
                break;
            }
        }
        if paren {
            self.expect_op(")")?;
        }
        Ok(Stmt::ImportFrom { module, names })
    }

    fn expr_or_assign(&mut self) -> PResult<Stmt> {
        let first = if self.at_kw("yield") { self.yield_expr()? } else { self.star_expressions()? };
        if self.eat_op(":") {
            let annotation = self.expression()?;
            let value = if self.eat_op("=") { Some(self.assign_rhs()?) } else { None };
            return Ok(Stmt::AnnAssign { target: first, annotation, value });
        }
        if let TokKind::Op(op) = self.tok().kind {
            if AUG_OPS.contains(&op) {
                self.bump();
                let value = self.assign_rhs()?;
                return Ok(Stmt::AugAssign { target: first, value });
            }
        }
        if self.at_op("=") {
            let mut targets = vec![first];
            let mut value;
            loop {
                self.expect_op("=")?;
                value = self.assign_rhs()?;
                if !self.at_op("=") {
                    break;
                }
                targets.push(value);
            }
            return Ok(Stmt::Assign { targets, value });
        }
        Ok(Stmt::Expr(first))
    }

    fn assign_rhs(&mut self) -> PResult<Expr> {
        if self.at_kw("yield") {
            self.yield_expr()
        } else {
            self.star_expressions()
        }
    }

    fn decorated(&mut self) -> PResult<Stmt> {
        let mut decorators = Vec::new();
        while self.eat_op("@") {
            decorators.push(self.named_expression()?);
            self.expect_newline()?;
        }
        self.eat_kw("async");
        if self.at_kw("def") {
            self.function_def(decorators)
        } else if self.at_kw("class") {
            self.class_def(decorators)
        } else {
            self.error("expected `def` or `class` after decorator")
        }
    }

    fn type_params(&mut self) -> PResult<Vec<Param>> {
        let mut params = Vec::new();
        if !self.eat_op("[") {
            return Ok(params);
        }
        while !self.at_op("]") {
            if !self.eat_op("**") {
                self.eat_op("*");
            }
            let name = self.name()?;
            let annotation = if self.eat_op(":") { Some(self.expression()?) } else { None };
            let default = if self.eat_op("=") { Some(self.expression()?) } else { None };
            params.push(Param { name, annotation, default });
            if !self.eat_op(",") {
                break;
            }
        }
        self.expect_op("]")?;
        Ok(params)
    }

    fn function_def(&mut self, decorators: Vec<Expr>) -> PResult<Stmt> {
        self.expect_kw("def")?;
        let name = self.name()?;
        let type_params = self.type_params()?;
        self.expect_op("(")?;
        let params = self.parameters(")", true)?;
        self.expect_op(")")?;
        let returns = if self.eat_op("->") { Some(self.expression()?) } else { None };
        let body = self.block()?;
        Ok(Stmt::FunctionDef(Box::new(FunctionDef { decorators, name, type_params, params, returns, body })))
    }

    /// Parameter list up to (not including) `close`.
    fn parameters(&mut self, close: &str, annotated: bool) -> PResult<Vec<Param>> {
        let mut params = Vec::new();
        while !self.at_op(close) {
            if self.eat_op("/") {
            } else {
                let star = self.eat_op("*") || self.eat_op("**");
                if star && (self.at_op(",") || self.at_op(close)) {
                    // bare `*`
                } else {
                    let name = self.name()?;
                    let annotation = if annotated && self.eat_op(":") {
                        Some(if self.at_op("*") { self.star_expression()? } else { self.expression()? })
                    } else {
                        None
                    };
                    let default = if self.eat_op("=") { Some(self.expression()?) } else { None };
                    params.push(Param { name, annotation, default });
                }
            }
            if !self.eat_op(",") {
                break;
            }
        }
        Ok(params)
    }

    fn class_def(&mut self, decorators: Vec<Expr>) -> PResult<Stmt> {
        self.expect_kw("class")?;
        let name = self.name()?;
        let type_params = self.type_params()?;
        let bases = if self.eat_op("(") {
            let args = self.call_args()?;
            self.expect_op(")")?;
            args
        } else {
            Vec::new()
        };
        let body = self.block()?;
        Ok(Stmt::ClassDef(Box::new(ClassDef { decorators, name, type_params, bases, body })))
    }

    fn if_stmt(&mut self) -> PResult<Stmt> {
        self.bump(); // `if` or `elif`
        let test = self.named_expression()?;
        let body = self.block()?;
        let orelse = if self.at_kw("elif") {
            vec![self.if_stmt()?]
        } else if self.eat_kw("else") {
            self.block()?
        } else {
            Vec::new()
        };
        Ok(Stmt::If { test, body, orelse })
    }

    fn while_stmt(&mut self) -> PResult<Stmt> {
        self.expect_kw("while")?;
        let test = self.named_expression()?;
        let body = self.block()?;
        let orelse = if self.eat_kw("else") { self.block()? } else { Vec::new() };
        Ok(Stmt::While { test, body, orelse })
    }

    fn for_stmt(&mut self) -> PResult<Stmt> {
        self.expect_kw("for")?;
        let target = self.target_list()?;
        self.expect_kw("in")?;
        let iter = self.star_expressions()?;
        let body = self.block()?;
        let orelse = if self.eat_kw("else") { self.block()? } else { Vec::new() };
        Ok(Stmt::For { target, iter, body, orelse })
    }

    fn try_stmt(&mut self) -> PResult<Stmt> {
        self.expect_kw("try")?;
        let body = self.block()?;
        let mut handlers = Vec::new();
        while self.eat_kw("except") {
            self.eat_op("*");
            let mut typ = None;
            let mut name = None;
            if !self.at_op(":") {
                typ = Some(self.expression_list()?);
                if self.eat_kw("as") {
                    name = Some(self.name()?);
                }
            }
            let body = self.block()?;
            handlers.push(Handler { typ, name, body });
        }
        let orelse = if self.eat_kw("else") { self.block()? } else { Vec::new() };
        let finalbody = if self.eat_kw("finally") { self.block()? } else { Vec::new() };
        if handlers.is_empty() && finalbody.is_empty() {
            return self.error("expected `except` or `finally`");
        }
        Ok(Stmt::Try { body, handlers, orelse, finalbody })
    }

    fn with_stmt(&mut self) -> PResult<Stmt> {
        self.expect_kw("with")?;
        // Parenthesized item lists are ambiguous with a parenthesized
        // expression; try the item form first.
        if self.at_op("(") {
            let save = self.pos;
            let errors = self.errors.len();
            self.bump();
            if let Ok(items) = self.with_items(true) {
                if self.eat_op(")") && self.at_op(":") {
                    let body = self.block()?;
                    return Ok(Stmt::With { items, body });
                }
            }
            self.pos = save;
            self.errors.truncate(errors);
        }
        let items = self.with_items(false)?;
        let body = self.block()?;
        Ok(Stmt::With { items, body })
    }

    fn with_items(&mut self, parenthesized: bool) -> PResult<Vec<WithItem>> {
        let mut items = Vec::new();
        loop {
            let context = self.expression()?;
            let target = if self.eat_kw("as") { Some(self.target()?) } else { None };
            items.push(WithItem { context, target });
            if !self.eat_op(",") {
                break;
            }
            if parenthesized && self.at_op(")") {
                break;
            }
        }
        Ok(items)
    }

    fn match_stmt(&mut self) -> PResult<Stmt> {
        self.expect_kw("match")?;
        let subject = self.star_expressions()?;
        self.expect_op(":")?;
        if !self.at(&TokKind::Newline) {
            return self.error("expected newline after match subject");
        }
        self.bump();
        if !self.at(&TokKind::Indent) {
            return self.error("expected indented case block");
        }
        self.bump();
        let mut cases = Vec::new();
        while self.at_kw("case") {
            self.bump();
            let pattern = self.patterns()?;
            let guard = if self.eat_kw("if") { Some(self.named_expression()?) } else { None };
            let body = self.block()?;
            cases.push(MatchCase { pattern, guard, body });
        }
        if cases.is_empty() {
            return self.error("expected `case`");
        }
        if self.at(&TokKind::Dedent) {
            self.bump();
        } else if !self.at(&TokKind::EndMarker) {
            return self.error("expected end of match block");
        }
        Ok(Stmt::Match { subject, cases })
    }

    // ---- patterns ----

    fn patterns(&mut self) -> PResult<Expr> {
        let first = self.pattern()?;
        if !self.at_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.at_op(":") || self.at_kw("if") {
                break;
            }
            items.push(self.pattern()?);
        }
        Ok(Expr::Sequence(items))
    }

    fn pattern(&mut self) -> PResult<Expr> {
        let mut alts = vec![self.closed_pattern()?];
        while self.eat_op("|") {
            alts.push(self.closed_pattern()?);
        }
        let mut pat = if alts.len() == 1 { alts.pop().unwrap() } else { Expr::Operation(alts) };
        if self.eat_kw("as") {
            let name = self.name()?;
            pat = Expr::Operation(vec![pat, Expr::Capture(name)]);
        }
        Ok(pat)
    }

    fn closed_pattern(&mut self) -> PResult<Expr> {
        if self.eat_op("*") {
            let name = self.name()?;
            return Ok(if name.id == "_" { Expr::Name(name) } else { Expr::Capture(name) });
        }
        if self.at_op("(") || self.at_op("[") {
            let close = if self.at_op("(") { ")" } else { "]" };
            self.bump();
            let mut items = Vec::new();
            while !self.at_op(close) {
                items.push(self.pattern()?);
                if !self.eat_op(",") {
                    break;
                }
            }
            self.expect_op(close)?;
            return Ok(Expr::Sequence(items));
        }
        if self.eat_op("{") {
            let mut items = Vec::new();
            while !self.at_op("}") {
                if self.eat_op("**") {
                    items.push((None, Expr::Capture(self.name()?)));
                } else {
                    let key = self.closed_pattern()?;
                    self.expect_op(":")?;
                    let value = self.pattern()?;
                    items.push((Some(key), value));
                }
                if !self.eat_op(",") {
                    break;
                }
            }
            self.expect_op("}")?;
            return Ok(Expr::Dict(items));
        }
        if self.at_name() {
            let first = self.name()?;
            if !self.at_op(".") && !self.at_op("(") {
                return Ok(if first.id == "_" { Expr::Name(first) } else { Expr::Capture(first) });
            }
            let mut value = Expr::Name(first);
            while self.eat_op(".") {
                let attr = self.name()?;
                value = Expr::Attribute { value: Box::new(value), attr };
            }
            if self.eat_op("(") {
                let mut args = Vec::new();
                while !self.at_op(")") {
                    if self.at_name() && self.nth_is_op(1, "=") {
                        let name = self.name()?;
                        self.bump();
                        args.push(Arg::Keyword { name, value: self.pattern()? });
                    } else {
                        args.push(Arg::Positional(self.pattern()?));
                    }
                    if !self.eat_op(",") {
                        break;
                    }
                }
                self.expect_op(")")?;
                return Ok(Expr::Call { func: Box::new(value), args });
            }
            return Ok(value);
        }
        // literal patterns, including signed and complex numbers
        let start = self.pos;
        self.eat_op("-");
        match self.tok().kind {
            TokKind::Number | TokKind::Str { .. } => {
                let lit = self.atom()?;
                if self.eat_op("+") || self.eat_op("-") {
                    self.atom()?;
                }
                Ok(lit)
            }
            TokKind::Name if matches!(self.text(self.tok()), "None" | "True" | "False") => {
                self.bump();
                Ok(Expr::Literal)
            }
            _ => {
                self.pos = start;
                self.error("invalid pattern")
            }
        }
    }

    // ---- expressions ----

    fn at_expr_start(&self) -> bool {
        let t = self.tok();
        match &t.kind {
            TokKind::Name => {
                let s = self.text(t);
                !is_keyword(s) || matches!(s, "not" | "lambda" | "await" | "True" | "False" | "None" | "yield")
            }
            TokKind::Number | TokKind::Str { .. } => true,
            TokKind::Op(op) => matches!(*op, "(" | "[" | "{" | "-" | "+" | "~" | "..." | "*"),
            _ => false,
        }
    }

    fn star_expressions(&mut self) -> PResult<Expr> {
        let first = self.star_expression()?;
        if !self.at_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if !self.at_expr_start() {
                break;
            }
            items.push(self.star_expression()?);
        }
        Ok(Expr::Sequence(items))
    }

    fn star_expression(&mut self) -> PResult<Expr> {
        if self.eat_op("*") {
            return Ok(Expr::Starred(Box::new(self.bitor()?)));
        }
        self.named_expression()
    }

    fn expression_list(&mut self) -> PResult<Expr> {
        let first = self.expression()?;
        if !self.at_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if !self.at_expr_start() {
                break;
            }
            items.push(self.expression()?);
        }
        Ok(Expr::Sequence(items))
    }

    fn named_expression(&mut self) -> PResult<Expr> {
        if self.at_name() && self.nth_is_op(1, ":=") {
            let target = self.name()?;
            self.bump();
            let value = self.expression()?;
            return Ok(Expr::NamedExpr { target, value: Box::new(value) });
        }
        self.expression()
    }

    fn expression(&mut self) -> PResult<Expr> {
        if self.at_kw("lambda") {
            return self.lambda();
        }
        let body = self.disjunction()?;
        if self.eat_kw("if") {
            let test = self.disjunction()?;
            self.expect_kw("else")?;
            let orelse = self.expression()?;
            return Ok(Expr::Operation(vec![body, test, orelse]));
        }
        Ok(body)
    }

    fn lambda(&mut self) -> PResult<Expr> {
        self.expect_kw("lambda")?;
        let params = self.parameters(":", false)?;
        self.expect_op(":")?;
        let body = self.expression()?;
        Ok(Expr::Lambda { params, body: Box::new(body) })
    }

    fn yield_expr(&mut self) -> PResult<Expr> {
        self.expect_kw("yield")?;
        if self.eat_kw("from") {
            return Ok(Expr::Operation(vec![self.expression()?]));
        }
        if self.at_expr_start() {
            return Ok(Expr::Operation(vec![self.star_expressions()?]));
        }
        Ok(Expr::Operation(Vec::new()))
    }

    fn disjunction(&mut self) -> PResult<Expr> {
        let first = self.conjunction()?;
        if !self.at_kw("or") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_kw("or") {
            items.push(self.conjunction()?);
        }
        Ok(Expr::Operation(items))
    }

    fn conjunction(&mut self) -> PResult<Expr> {
        let first = self.inversion()?;
        if !self.at_kw("and") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_kw("and") {
            items.push(self.inversion()?);
        }
        Ok(Expr::Operation(items))
    }

    fn inversion(&mut self) -> PResult<Expr> {
        if self.eat_kw("not") {
            return Ok(Expr::Operation(vec![self.inversion()?]));
        }
        self.comparison()
    }

    fn at_compare_op(&self) -> bool {
        match self.tok().kind {
            TokKind::Op(op) => COMPARE_OPS.contains(&op),
            TokKind::Name => {
                let s = self.text(self.tok());
                s == "in" || s == "is" || (s == "not" && self.nth_is_kw(1, "in"))
            }
            _ => false,
        }
    }

    fn comparison(&mut self) -> PResult<Expr> {
        let first = self.bitor()?;
        if !self.at_compare_op() {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.at_compare_op() {
            if self.eat_kw("not") || self.eat_kw("is") {
                self.eat_kw("in");
                self.eat_kw("not");
            } else {
                self.bump();
            }
            items.push(self.bitor()?);
        }
        Ok(Expr::Operation(items))
    }

    fn binary(&mut self, ops: &[&str], next: fn(&mut Self) -> PResult<Expr>) -> PResult<Expr> {
        let first = next(self)?;
        let at = |p: &Self| matches!(p.tok().kind, TokKind::Op(o) if ops.contains(&o));
        if !at(self) {
            return Ok(first);
        }
        let mut items = vec![first];
        while at(self) {
            self.bump();
            items.push(next(self)?);
        }
        Ok(Expr::Operation(items))
    }

    fn bitor(&mut self) -> PResult<Expr> {
        self.binary(&["|"], Self::bitxor)
    }

    fn bitxor(&mut self) -> PResult<Expr> {
        self.binary(&["^"], Self::bitand)
    }

    fn bitand(&mut self) -> PResult<Expr> {
        self.binary(&["&"], Self::shift)
    }

    fn shift(&mut self) -> PResult<Expr> {
        self.binary(&["<<", ">>"], Self::sum)
    }

    fn sum(&mut self) -> PResult<Expr> {
        self.binary(&["+", "-"], Self::term)
    }

    fn term(&mut self) -> PResult<Expr> {
        self.binary(&["*", "/", "//", "%", "@"], Self::factor)
    }

    fn factor(&mut self) -> PResult<Expr> {
        if self.eat_op("+") || self.eat_op("-") || self.eat_op("~") {
            return Ok(Expr::Operation(vec![self.factor()?]));
        }
        self.power()
    }

    fn power(&mut self) -> PResult<Expr> {
        let base = if self.eat_kw("await") {
            Expr::Operation(vec![self.primary()?])
        } else {
            self.primary()?
        };
        if self.eat_op("**") {
            let exp = self.factor()?;
            return Ok(Expr::Operation(vec![base, exp]));
        }
        Ok(base)
    }

    fn primary(&mut self) -> PResult<Expr> {
        let mut e = self.atom()?;
        loop {
            if self.eat_op(".") {
                let attr = self.name()?;
                e = Expr::Attribute { value: Box::new(e), attr };
            } else if self.eat_op("(") {
                let args = self.call_args()?;
                self.expect_op(")")?;
                e = Expr::Call { func: Box::new(e), args };
            } else if self.eat_op("[") {
                let index = self.slices()?;
                self.expect_op("]")?;
                e = Expr::Subscript { value: Box::new(e), index };
            } else {
                return Ok(e);
            }
        }
    }

    fn slices(&mut self) -> PResult<Vec<Expr>> {
        let mut out = Vec::new();
        loop {
            out.push(self.slice()?);
            if !self.eat_op(",") || self.at_op("]") {
                break;
            }
        }
        Ok(out)
    }

    fn slice(&mut self) -> PResult<Expr> {
        if self.at_op("*") {
            return self.star_expression();
        }
        let mut parts = Vec::new();
        if !self.at_op(":") {
            let e = self.named_expression()?;
            if !self.at_op(":") {
                return Ok(e);
            }
            parts.push(e);
        }
        for _ in 0..2 {
            if !self.eat_op(":") {
                break;
            }
            if !self.at_op(":") && !self.at_op("]") && !self.at_op(",") {
                parts.push(self.expression()?);
            }
        }
        Ok(Expr::Operation(parts))
    }

    fn call_args(&mut self) -> PResult<Vec<Arg>> {
        let mut args = Vec::new();
        while !self.at_op(")") {
            if self.eat_op("*") || self.eat_op("**") {
                args.push(Arg::Unpack(self.expression()?));
            } else if self.at_name() && self.nth_is_op(1, "=") {
                let name = self.name()?;
                self.bump();
                args.push(Arg::Keyword { name, value: self.expression()? });
            } else {
                let e = self.named_expression()?;
                if self.at_kw("for") || (self.at_kw("async") && self.nth_is_kw(1, "for")) {
                    let generators = self.generators()?;
                    args.push(Arg::Positional(Expr::Comprehension { elements: vec![e], generators }));
                } else {
                    args.push(Arg::Positional(e));
                }
            }
            if !self.eat_op(",") {
                break;
            }
        }
        Ok(args)
    }

    /// Assignment target list for `for` loops and comprehensions (stops
    /// before `in`).
    fn target_list(&mut self) -> PResult<Expr> {
        let first = self.target()?;
        if !self.at_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.at_kw("in") || self.at_op("=") {
                break;
            }
            items.push(self.target()?);
        }
        Ok(Expr::Sequence(items))
    }

    fn target(&mut self) -> PResult<Expr> {
        if self.eat_op("*") {
            return Ok(Expr::Starred(Box::new(self.target()?)));
        }
        self.bitor()
    }

    fn generators(&mut self) -> PResult<Vec<Generator>> {
        let mut gens = Vec::new();
        loop {
            self.eat_kw("async");
            if !self.eat_kw("for") {
                break;
            }
            let target = self.target_list()?;
            self.expect_kw("in")?;
            let iter = self.disjunction()?;
            let mut ifs = Vec::new();
            while self.eat_kw("if") {
                ifs.push(self.disjunction()?);
            }
            gens.push(Generator { target, iter, ifs });
        }
        if gens.is_empty() {
            return self.error("expected `for`");
        }
        Ok(gens)
    }

    fn at_comprehension(&self) -> bool {
        self.at_kw("for") || (self.at_kw("async") && self.nth_is_kw(1, "for"))
    }

    fn atom(&mut self) -> PResult<Expr> {
        let t = self.tok().clone();
        match &t.kind {
            TokKind::Name => {
                let s = self.text(&t);
                if matches!(s, "True" | "False" | "None") {
                    self.bump();
                    Ok(Expr::Literal)
                } else if is_keyword(s) {
                    self.error(format!("unexpected keyword `{s}`"))
                } else {
                    self.bump();
                    Ok(Expr::Name(Name { id: s.to_string(), span: t.span }))
                }
            }
            TokKind::Number => {
                self.bump();
                Ok(Expr::Literal)
            }
            TokKind::Str { .. } => self.strings(),
            TokKind::Op("...") => {
                self.bump();
                Ok(Expr::Literal)
            }
            TokKind::Op("(") => {
                self.bump();
                if self.eat_op(")") {
                    return Ok(Expr::Sequence(Vec::new()));
                }
                if self.at_kw("yield") {
                    let e = self.yield_expr()?;
                    self.expect_op(")")?;
                    return Ok(e);
                }
                let first = self.star_expression()?;
                if self.at_comprehension() {
                    let generators = self.generators()?;
                    self.expect_op(")")?;
                    return Ok(Expr::Comprehension { elements: vec![first], generators });
                }
                if self.eat_op(")") {
                    return Ok(first);
                }
                let mut items = vec![first];
                while self.eat_op(",") {
                    if self.at_op(")") {
                        break;
                    }
                    items.push(self.star_expression()?);
                }
                self.expect_op(")")?;
                Ok(Expr::Sequence(items))
            }
            TokKind::Op("[") => {
                self.bump();
                let mut items = Vec::new();
                if !self.at_op("]") {
                    let first = self.star_expression()?;
                    if self.at_comprehension() {
                        let generators = self.generators()?;
                        self.expect_op("]")?;
                        return Ok(Expr::Comprehension { elements: vec![first], generators });
                    }
                    items.push(first);
                    while self.eat_op(",") {
                        if self.at_op("]") {
                            break;
                        }
                        items.push(self.star_expression()?);
                    }
                }
                self.expect_op("]")?;
                Ok(Expr::Sequence(items))
            }
            TokKind::Op("{") => self.brace_display(),
            TokKind::EndMarker | TokKind::Newline => self.error("unexpected end of input"),
            _ => self.error("expected expression"),
        }
    }

    fn brace_display(&mut self) -> PResult<Expr> {
        self.expect_op("{")?;
        if self.eat_op("}") {
            return Ok(Expr::Dict(Vec::new()));
        }
        // first item decides dict vs set
        let first_key;
        let first_value;
        if self.eat_op("**") {
            first_key = None;
            first_value = self.bitor()?;
        } else {
            let e = self.star_expression()?;
            if self.eat_op(":") {
                first_key = Some(e);
                first_value = self.expression()?;
            } else {
                // set display / set comprehension
                if self.at_comprehension() {
                    let generators = self.generators()?;
                    self.expect_op("}")?;
                    return Ok(Expr::Comprehension { elements: vec![e], generators });
                }
                let mut items = vec![e];
                while self.eat_op(",") {
                    if self.at_op("}") {
                        break;
                    }
                    items.push(self.star_expression()?);
                }
                self.expect_op("}")?;
                return Ok(Expr::Sequence(items));
            }
        }
        if let Some(key) = first_key.clone().filter(|_| self.at_comprehension()) {
            let generators = self.generators()?;
            self.expect_op("}")?;
            let elements = vec![key, first_value];
            return Ok(Expr::Comprehension { elements, generators });
        }
        let mut items = vec![(first_key, first_value)];
        while self.eat_op(",") {
            if self.at_op("}") {
                break;
            }
            if self.eat_op("**") {
                items.push((None, self.bitor()?));
            } else {
                let k = self.expression()?;
                self.expect_op(":")?;
                let v = self.expression()?;
                items.push((Some(k), v));
            }
        }
        self.expect_op("}")?;
        Ok(Expr::Dict(items))
    }

    /// Adjacent string literals; f-string fields are parsed as expressions.
    fn strings(&mut self) -> PResult<Expr> {
        let mut parts = Vec::new();
        while let TokKind::Str { interpolations } = &self.tok().kind {
            let fields = interpolations.clone();
            self.bump();
            for field in fields {
                let toks = tokenize_fragment(&self.src[field.start..field.end], field.start);
                let mut sub = Parser::new(self.src, toks);
                let e = if sub.at_kw("yield") { sub.yield_expr()? } else { sub.star_expressions()? };
                if !sub.at(&TokKind::EndMarker) {
                    return sub.error("unexpected token in f-string field");
                }
                parts.push(e);
            }
        }
        Ok(if parts.is_empty() { Expr::Literal } else { Expr::FString(parts) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_assignment() {
        let tree = parse("x = 1");
        assert!(!tree.has_errors());
        assert_eq!(tree.body.len(), 1);
        assert!(matches!(tree.body[0], Stmt::Assign { .. }));
    }

    #[test]
    fn empty_source_is_clean() {
        let tree = parse("");
        assert!(tree.body.is_empty());
        assert!(!tree.has_errors());
    }

    #[test]
    fn unclosed_def_is_error() {
        let tree = parse("def f(");
        assert!(tree.has_errors());
        assert!(tree.body.iter().any(|s| matches!(s, Stmt::Error(_))));
    }

    #[test]
    fn recovers_after_bad_line() {
        let tree = parse("x = = 1\ny = 2\n");
        assert!(tree.has_errors());
        assert!(matches!(tree.body.last(), Some(Stmt::Assign { .. })));
    }

    #[test]
    fn parses_realistic_module() {
        let src = r#"
"""Doc."""
from __future__ import annotations
import os, sys as system
from .pkg import (a, b as c,)

@decorator(arg=1)
class CNN(Base, metaclass=Meta):
    x: int = 3
    def __init__(self, input_shape, *args, key=None, **kw) -> None:
        super().__init__()
        self.shape = input_shape[1:, ::2]
        total = sum(i * j for i, j in zip(args, kw.values()) if i)
        data = {k: v for k, v in kw.items()}
        s = {*args}
        f = lambda q, r=2: q + r
        if (n := len(args)) > 1 and not total:
            pass
        elif key is not None:
            raise ValueError(f"bad {key!r:>{n}}") from None
        else:
            return

async def main():
    async with open("x") as fh, other() as (p, q):
        async for line in fh:
            await line
    try:
        yield from gen()
    except (KeyError, ValueError) as exc:
        del exc
    finally:
        print(*[1, 2], **{})

match command.split():
    case [action, *rest] if action:
        pass
    case Point(x=0, y=yy) | {"k": kk, **others}:
        pass
    case _:
        pass
for i, (a, b) in enumerate(pairs): x += a if b else -a
while True: break
else: y = 1
global_var = [x for x in range(3)][0] @ matrix ** -1
"#;
        let tree = parse(src);
        assert!(!tree.has_errors(), "{:?}", tree.errors);
        assert_eq!(tree.body.len(), 10);
    }

    #[test]
    fn match_as_identifier_still_parses() {
        let tree = parse("match = re.match(p, s)\nmatch.group(0)\n");
        assert!(!tree.has_errors(), "{:?}", tree.errors);
    }

    #[test]
    fn parenthesized_with_items_and_parenthesized_expression() {
        assert!(!parse("with (open(a) as f, open(b) as g):\n    pass\n").has_errors());
        assert!(!parse("with (yield):\n    pass\n").has_errors());
        assert!(!parse("with (a, b):\n    pass\n").has_errors());
    }

    #[test]
    fn never_panics_on_garbage() {
        for src in ["(((", ")))", "def", "class :", "if x\n  y", "\tx\n  y\n", "@", "lambda", "f'{'", "x = [1,\n", "from import x", "else:", "  \n\n  x"] {
            let _ = parse(src);
        }
    }
}
