use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ast::*;
use super::interp::{run_tests, TestCase, DEFAULT_STEP_BUDGET};
use super::printer::print_program;
use super::resolve::{compile, scope_identifiers, BUILTINS};
use super::{source_line, LangError};

const MAX_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationKind {
    RelationalSwap,
    ArithmeticSwap,
    VariableSubstitution,
    OffByOne,
    ArgumentSwap,
}

impl MutationKind {
    pub const ALL: [MutationKind; 5] = [
        MutationKind::RelationalSwap,
        MutationKind::ArithmeticSwap,
        MutationKind::VariableSubstitution,
        MutationKind::OffByOne,
        MutationKind::ArgumentSwap,
    ];
}

/// A program with one seeded single-line bug and the suite that exposes it.
#[derive(Debug, Clone, PartialEq)]
pub struct BugInstance {
    /// The mutant.
    pub program: Program,
    pub source: String,
    pub original_source: String,
    pub buggy_line: usize,
    /// Pre-mutation text of the buggy line, trimmed. This is the ground truth fix.
    pub original_line: String,
    pub buggy_line_text: String,
    pub test_suite: Vec<TestCase>,
    /// Indices into `test_suite` that fail on the mutant.
    pub failing_tests: Vec<usize>,
    pub kind: MutationKind,
}

impl BugInstance {
    pub fn passing_tests(&self) -> Vec<usize> {
        (0..self.test_suite.len())
            .filter(|i| !self.failing_tests.contains(i))
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    kind: MutationKind,
    line: usize,
    /// Position of the statement in a pre-order walk of all statements.
    stmt_index: usize,
    edit: Edit,
}

#[derive(Debug, Clone)]
enum Edit {
    /// Replace the `node`-th expression node (pre-order within the statement).
    Expr { node: usize, replacement: Expr },
    /// Rename the assignment target.
    Target(String),
}

/// Applies one mutation chosen deterministically from `rng_seed`. Kinds are
/// drawn uniformly first so that variable substitution, which has by far the
/// most sites, does not dominate.
pub fn seed_bug(program: &Program, tests: &[TestCase], rng_seed: u64) -> Result<BugInstance, LangError> {
    let original_source = print_program(program);
    let original = compile(&original_source)?;
    if !run_tests(&original, tests, DEFAULT_STEP_BUDGET).iter().all(|o| o.passed()) {
        return Err(LangError::OriginalFails);
    }
    let mut pools: Vec<Vec<Candidate>> = MutationKind::ALL
        .iter()
        .map(|k| candidates(&original).into_iter().filter(|c| c.kind == *k).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for pool in pools.iter_mut() {
        pool.shuffle(&mut rng);
    }
    for _ in 0..MAX_ATTEMPTS {
        let live: Vec<usize> = (0..pools.len()).filter(|&i| !pools[i].is_empty()).collect();
        if live.is_empty() {
            break;
        }
        let k = live[rng.gen_range(0..live.len())];
        let cand = pools[k].pop().unwrap();
        let mutant = apply(&original, &cand);
        let source = print_program(&mutant);
        let Ok(mutant) = compile(&source) else { continue };
        let original_line = source_line(&original_source, cand.line).unwrap_or("").trim().to_string();
        let buggy_line_text = source_line(&source, cand.line).unwrap_or("").trim().to_string();
        if original_line == buggy_line_text {
            continue;
        }
        let outcomes = run_tests(&mutant, tests, DEFAULT_STEP_BUDGET);
        let failing: Vec<usize> = (0..outcomes.len()).filter(|&i| !outcomes[i].passed()).collect();
        if failing.is_empty() {
            continue;
        }
        return Ok(BugInstance {
            program: mutant,
            source,
            original_source,
            buggy_line: cand.line,
            original_line,
            buggy_line_text,
            test_suite: tests.to_vec(),
            failing_tests: failing,
            kind: cand.kind,
        });
    }
    Err(LangError::NoViableMutant)
}

fn all_stmts(p: &Program) -> Vec<&Stmt> {
    fn walk<'a>(b: &'a Block, out: &mut Vec<&'a Stmt>) {
        for s in &b.stmts {
            walk_stmt(s, out);
        }
    }
    fn walk_stmt<'a>(s: &'a Stmt, out: &mut Vec<&'a Stmt>) {
        out.push(s);
        match &s.kind {
            StmtKind::If {
                then_block,
                else_branch,
                ..
            } => {
                walk(then_block, out);
                match else_branch {
                    Some(ElseBranch::Block(b)) => walk(b, out),
                    Some(ElseBranch::If(i)) => walk_stmt(i, out),
                    None => {}
                }
            }
            StmtKind::While { body, .. } => walk(body, out),
            _ => {}
        }
    }
    let mut out = Vec::new();
    for f in p.functions() {
        walk(&f.body, &mut out);
    }
    out
}

/// Expressions owned by the statement's own line, in a fixed order.
fn line_exprs(s: &Stmt) -> Vec<&Expr> {
    match &s.kind {
        StmtKind::Let { init, .. } => vec![init],
        StmtKind::Assign { value, .. } => vec![value],
        StmtKind::IndexAssign { index, value, .. } => vec![index, value],
        StmtKind::If { cond, .. } | StmtKind::While { cond, .. } => vec![cond],
        StmtKind::Return(e) | StmtKind::Expr(e) => vec![e],
    }
}

fn line_exprs_mut(s: &mut Stmt) -> Vec<&mut Expr> {
    match &mut s.kind {
        StmtKind::Let { init, .. } => vec![init],
        StmtKind::Assign { value, .. } => vec![value],
        StmtKind::IndexAssign { index, value, .. } => vec![index, value],
        StmtKind::If { cond, .. } | StmtKind::While { cond, .. } => vec![cond],
        StmtKind::Return(e) | StmtKind::Expr(e) => vec![e],
    }
}

fn preorder<'a>(e: &'a Expr, out: &mut Vec<&'a Expr>) {
    out.push(e);
    match e {
        Expr::Array(items) => items.iter().for_each(|i| preorder(i, out)),
        Expr::Call(_, args) => args.iter().for_each(|i| preorder(i, out)),
        Expr::Repeat(a, b) | Expr::Index(a, b) | Expr::Binary(_, a, b) => {
            preorder(a, out);
            preorder(b, out);
        }
        Expr::Unary(_, a) => preorder(a, out),
        _ => {}
    }
}

fn relational_alternatives(op: BinOp) -> &'static [BinOp] {
    use BinOp::*;
    match op {
        Lt => &[Le, Gt],
        Le => &[Lt, Ge],
        Gt => &[Ge, Lt],
        Ge => &[Gt, Le],
        Eq => &[Ne],
        Ne => &[Eq],
        _ => &[],
    }
}

fn arithmetic_alternatives(op: BinOp) -> &'static [BinOp] {
    use BinOp::*;
    match op {
        Add => &[Sub],
        Sub => &[Add],
        Mul => &[Add, Div],
        Div => &[Mul],
        Rem => &[Div],
        _ => &[],
    }
}

fn candidates(p: &Program) -> Vec<Candidate> {
    let function_names: Vec<&str> = p
        .functions()
        .map(|f| f.name.as_str())
        .chain(BUILTINS.iter().map(|(n, _)| *n))
        .collect();
    let mut out = Vec::new();
    for (stmt_index, s) in all_stmts(p).into_iter().enumerate() {
        let line = s.span.line;
        let vars: Vec<String> = scope_identifiers(p, line)
            .map(|ids| {
                ids.iter()
                    .filter(|n| !function_names.contains(n))
                    .map(str::to_string)
                    .collect()
            })
            .unwrap_or_default();
        let mut nodes = Vec::new();
        for e in line_exprs(s) {
            preorder(e, &mut nodes);
        }
        let mut push = |kind, edit| {
            out.push(Candidate {
                kind,
                line,
                stmt_index,
                edit,
            })
        };
        for (node, e) in nodes.iter().enumerate() {
            match e {
                Expr::Binary(op, a, b) => {
                    for alt in relational_alternatives(*op) {
                        let replacement = Expr::Binary(*alt, a.clone(), b.clone());
                        push(MutationKind::RelationalSwap, Edit::Expr { node, replacement });
                    }
                    for alt in arithmetic_alternatives(*op) {
                        let replacement = Expr::Binary(*alt, a.clone(), b.clone());
                        push(MutationKind::ArithmeticSwap, Edit::Expr { node, replacement });
                    }
                }
                Expr::Var(name) => {
                    for v in vars.iter().filter(|v| *v != name) {
                        push(
                            MutationKind::VariableSubstitution,
                            Edit::Expr {
                                node,
                                replacement: Expr::Var(v.clone()),
                            },
                        );
                    }
                }
                Expr::Int(c) => {
                    for d in [1i64, -1] {
                        if let Some(nc) = c.checked_add(d).filter(|v| *v >= 0) {
                            push(
                                MutationKind::OffByOne,
                                Edit::Expr {
                                    node,
                                    replacement: Expr::Int(nc),
                                },
                            );
                        }
                    }
                }
                Expr::Call(f, args) if args.len() >= 2 => {
                    for i in 0..args.len() {
                        for j in i + 1..args.len() {
                            if args[i] != args[j] {
                                let mut swapped = args.clone();
                                swapped.swap(i, j);
                                push(
                                    MutationKind::ArgumentSwap,
                                    Edit::Expr {
                                        node,
                                        replacement: Expr::Call(f.clone(), swapped),
                                    },
                                );
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        if let StmtKind::Assign { name, .. } | StmtKind::IndexAssign { name, .. } = &s.kind {
            for v in vars.iter().filter(|v| *v != name) {
                push(MutationKind::VariableSubstitution, Edit::Target(v.clone()));
            }
        }
    }
    out
}

fn apply(p: &Program, c: &Candidate) -> Program {
    let mut p = p.clone();
    let mut counter = 0usize;
    for item in p.items.iter_mut() {
        if let Item::Function(f) = item {
            if apply_block(&mut f.body, c, &mut counter) {
                break;
            }
        }
    }
    p
}

fn apply_block(b: &mut Block, c: &Candidate, counter: &mut usize) -> bool {
    b.stmts.iter_mut().any(|s| apply_stmt(s, c, counter))
}

fn apply_stmt(s: &mut Stmt, c: &Candidate, counter: &mut usize) -> bool {
    if *counter == c.stmt_index {
        match &c.edit {
            Edit::Target(new) => match &mut s.kind {
                StmtKind::Assign { name, .. } | StmtKind::IndexAssign { name, .. } => *name = new.clone(),
                _ => unreachable!("target edit on non-assignment"),
            },
            Edit::Expr { node, replacement } => {
                let mut k = 0usize;
                for e in line_exprs_mut(s) {
                    if replace_node(e, *node, &mut k, replacement) {
                        break;
                    }
                }
            }
        }
        return true;
    }
    *counter += 1;
    match &mut s.kind {
        StmtKind::If {
            then_block,
            else_branch,
            ..
        } => {
            if apply_block(then_block, c, counter) {
                return true;
            }
            match else_branch {
                Some(ElseBranch::Block(b)) => apply_block(b, c, counter),
                Some(ElseBranch::If(i)) => apply_stmt(i, c, counter),
                None => false,
            }
        }
        StmtKind::While { body, .. } => apply_block(body, c, counter),
        _ => false,
    }
}

fn replace_node(e: &mut Expr, target: usize, k: &mut usize, replacement: &Expr) -> bool {
    if *k == target {
        *e = replacement.clone();
        return true;
    }
    *k += 1;
    match e {
        Expr::Array(items) | Expr::Call(_, items) => items.iter_mut().any(|i| replace_node(i, target, k, replacement)),
        Expr::Repeat(a, b) | Expr::Index(a, b) | Expr::Binary(_, a, b) => {
            replace_node(a, target, k, replacement) || replace_node(b, target, k, replacement)
        }
        Expr::Unary(_, a) => replace_node(a, target, k, replacement),
        _ => false,
    }
}
