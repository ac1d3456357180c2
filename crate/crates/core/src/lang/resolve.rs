use std::collections::{BTreeSet, HashMap, HashSet};

use super::ast::*;
use super::parser::parse;
use super::LangError;

/// Builtin functions and their arity.
pub const BUILTINS: &[(&str, usize)] = &[("len", 1)];

/// Identifiers legally referenceable on one source line.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IdentifierSet {
    pub identifiers: BTreeSet<String>,
}

impl IdentifierSet {
    pub fn contains(&self, name: &str) -> bool {
        self.identifiers.contains(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.identifiers.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.identifiers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identifiers.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for IdentifierSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self {
            identifiers: iter.into_iter().map(Into::into).collect(),
        }
    }
}

/// Parse and scope-check. This is what "compiles" means for MiniLang.
pub fn compile(source: &str) -> Result<Program, LangError> {
    let p = parse(source)?;
    check(&p)?;
    Ok(p)
}

fn err(line: usize, message: String) -> LangError {
    LangError::Resolve { line, message }
}

pub fn check(p: &Program) -> Result<(), LangError> {
    let mut arity: HashMap<&str, usize> = BUILTINS.iter().copied().collect();
    for f in p.functions() {
        if arity.insert(&f.name, f.params.len()).is_some() {
            return Err(err(f.span.line, format!("duplicate function `{}`", f.name)));
        }
    }
    let mut globals: HashSet<&str> = HashSet::new();
    for item in &p.items {
        if let Item::Global(g) = item {
            let mut r = Resolver {
                arity: &arity,
                globals: &globals,
                scopes: Vec::new(),
                allow_calls: false,
            };
            r.expr(&g.init, g.span.line)?;
            if arity.contains_key(g.name.as_str()) {
                return Err(err(g.span.line, format!("`{}` is already a function", g.name)));
            }
            if !globals.insert(&g.name) {
                return Err(err(g.span.line, format!("duplicate global `{}`", g.name)));
            }
        }
    }
    for f in p.functions() {
        let mut params = HashSet::new();
        for prm in &f.params {
            if !params.insert(prm.as_str()) {
                return Err(err(f.span.line, format!("duplicate parameter `{prm}`")));
            }
            if arity.contains_key(prm.as_str()) {
                return Err(err(f.span.line, format!("parameter `{prm}` shadows a function")));
            }
        }
        let mut r = Resolver {
            arity: &arity,
            globals: &globals,
            scopes: vec![f.params.iter().map(String::as_str).collect()],
            allow_calls: true,
        };
        r.block(&f.body)?;
    }
    Ok(())
}

struct Resolver<'a> {
    arity: &'a HashMap<&'a str, usize>,
    globals: &'a HashSet<&'a str>,
    scopes: Vec<HashSet<&'a str>>,
    allow_calls: bool,
}

impl<'a> Resolver<'a> {
    fn is_local(&self, name: &str) -> bool {
        self.scopes.iter().any(|s| s.contains(name))
    }

    fn variable(&self, name: &str, line: usize) -> Result<(), LangError> {
        if self.is_local(name) || self.globals.contains(name) {
            Ok(())
        } else if self.arity.contains_key(name) {
            Err(err(line, format!("function `{name}` used as a value")))
        } else {
            Err(err(line, format!("undeclared identifier `{name}`")))
        }
    }

    fn block(&mut self, b: &'a Block) -> Result<(), LangError> {
        self.scopes.push(HashSet::new());
        for s in &b.stmts {
            self.stmt(s)?;
        }
        self.scopes.pop();
        Ok(())
    }

    fn stmt(&mut self, s: &'a Stmt) -> Result<(), LangError> {
        let line = s.span.line;
        match &s.kind {
            StmtKind::Let { name, init } => {
                self.expr(init, line)?;
                if self.is_local(name) {
                    return Err(err(line, format!("`{name}` is already declared")));
                }
                if self.arity.contains_key(name.as_str()) {
                    return Err(err(line, format!("`{name}` is already a function")));
                }
                self.scopes.last_mut().unwrap().insert(name);
            }
            StmtKind::Assign { name, value } => {
                self.variable(name, line)?;
                self.expr(value, line)?;
            }
            StmtKind::IndexAssign { name, index, value } => {
                self.variable(name, line)?;
                self.expr(index, line)?;
                self.expr(value, line)?;
            }
            StmtKind::If {
                cond,
                then_block,
                else_branch,
            } => {
                self.expr(cond, line)?;
                self.block(then_block)?;
                match else_branch {
                    Some(ElseBranch::Block(b)) => self.block(b)?,
                    Some(ElseBranch::If(s)) => self.stmt(s)?,
                    None => {}
                }
            }
            StmtKind::While { cond, body } => {
                self.expr(cond, line)?;
                self.block(body)?;
            }
            StmtKind::Return(e) | StmtKind::Expr(e) => self.expr(e, line)?,
        }
        Ok(())
    }

    fn expr(&mut self, e: &Expr, line: usize) -> Result<(), LangError> {
        match e {
            Expr::Int(_) | Expr::Bool(_) | Expr::Str(_) => Ok(()),
            Expr::Var(v) => self.variable(v, line),
            Expr::Array(items) => items.iter().try_for_each(|i| self.expr(i, line)),
            Expr::Repeat(a, b) | Expr::Index(a, b) | Expr::Binary(_, a, b) => {
                self.expr(a, line)?;
                self.expr(b, line)
            }
            Expr::Unary(_, a) => self.expr(a, line),
            Expr::Call(name, args) => {
                if !self.allow_calls {
                    return Err(err(line, "calls are not allowed in global initializers".into()));
                }
                if self.is_local(name) {
                    return Err(err(line, format!("`{name}` is a variable, not a function")));
                }
                match self.arity.get(name.as_str()) {
                    None => return Err(err(line, format!("undeclared function `{name}`"))),
                    Some(&n) if n != args.len() => {
                        return Err(err(
                            line,
                            format!("`{name}` takes {n} argument(s), {} given", args.len()),
                        ))
                    }
                    _ => {}
                }
                args.iter().try_for_each(|a| self.expr(a, line))
            }
        }
    }
}

/// Every identifier referenceable on `line`: globals and functions
/// regardless of position, builtins, the enclosing function's parameters and
/// locals declared at or before `line` in a block still open on that line.
pub fn scope_identifiers(p: &Program, line: usize) -> Result<IdentifierSet, LangError> {
    let f = p.function_at_line(line).ok_or(LangError::LineOutOfRange(line))?;
    let mut ids: BTreeSet<String> = BTreeSet::new();
    ids.extend(p.globals().map(|g| g.name.clone()));
    ids.extend(p.functions().map(|f| f.name.clone()));
    ids.extend(BUILTINS.iter().map(|(n, _)| n.to_string()));
    ids.extend(f.params.iter().cloned());
    collect_locals(&f.body, line, &mut ids);
    Ok(IdentifierSet { identifiers: ids })
}

fn collect_locals(b: &Block, line: usize, out: &mut BTreeSet<String>) {
    for s in &b.stmts {
        collect_stmt(s, b.end_line, line, out);
    }
}

fn collect_stmt(s: &Stmt, block_end: usize, line: usize, out: &mut BTreeSet<String>) {
    match &s.kind {
        StmtKind::Let { name, .. } => {
            if s.span.line <= line && line < block_end {
                out.insert(name.clone());
            }
        }
        StmtKind::If {
            then_block,
            else_branch,
            ..
        } => {
            collect_locals(then_block, line, out);
            match else_branch {
                Some(ElseBranch::Block(b)) => collect_locals(b, line, out),
                Some(ElseBranch::If(inner)) => collect_stmt(inner, block_end, line, out),
                None => {}
            }
        }
        StmtKind::While { body, .. } => collect_locals(body, line, out),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_errors() {
        assert!(compile("fn f() { return x; }").is_err());
        assert!(compile("fn f() { let x = 1; let x = 2; return x; }").is_err());
        assert!(compile("fn f(a) { return g(a); } fn g(a, b) { return a; }").is_err());
        assert!(compile("fn f() { return 0; } fn f() { return 1; }").is_err());
        assert!(compile("fn f() { if (true) { let y = 1; } return y; }").is_err());
        assert!(compile("let g = 1; fn f() { return g + len([1]); }").is_ok());
    }
}
