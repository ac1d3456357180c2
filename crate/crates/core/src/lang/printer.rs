use super::ast::*;
use super::spacing::join_tokens;

const INDENT: &str = "    ";

pub fn print_program(p: &Program) -> String {
    let mut lines: Vec<String> = Vec::new();
    for (i, item) in p.items.iter().enumerate() {
        if i > 0 && (matches!(item, Item::Function(_)) || matches!(p.items[i - 1], Item::Function(_))) {
            lines.push(String::new());
        }
        match item {
            Item::Global(g) => {
                let mut t = vec!["let".to_string(), g.name.clone(), "=".into()];
                expr_tokens(&g.init, &mut t);
                t.push(";".into());
                lines.push(join_tokens(&t));
            }
            Item::Function(f) => {
                let mut t = vec!["fn".to_string(), f.name.clone(), "(".into()];
                for (k, p) in f.params.iter().enumerate() {
                    if k > 0 {
                        t.push(",".into());
                    }
                    t.push(p.clone());
                }
                t.push(")".into());
                t.push("{".into());
                lines.push(join_tokens(&t));
                block_lines(&f.body, 1, &mut lines);
                lines.push("}".into());
            }
        }
    }
    let mut s = lines.join("\n");
    s.push('\n');
    s
}

fn block_lines(b: &Block, depth: usize, out: &mut Vec<String>) {
    for s in &b.stmts {
        stmt_lines(s, depth, out);
    }
}

fn indent(depth: usize) -> String {
    INDENT.repeat(depth)
}

fn stmt_lines(s: &Stmt, depth: usize, out: &mut Vec<String>) {
    let pad = indent(depth);
    match &s.kind {
        StmtKind::If { .. } => if_lines(s, depth, Vec::new(), out),
        StmtKind::While { cond, body } => {
            let mut t = vec!["while".to_string(), "(".into()];
            expr_tokens(cond, &mut t);
            t.push(")".into());
            t.push("{".into());
            out.push(format!("{pad}{}", join_tokens(&t)));
            block_lines(body, depth + 1, out);
            out.push(format!("{pad}}}"));
        }
        _ => out.push(format!("{pad}{}", join_tokens(&simple_stmt_tokens(s)))),
    }
}

/// `lead` carries `} else` when this `if` continues a previous branch.
fn if_lines(s: &Stmt, depth: usize, lead: Vec<String>, out: &mut Vec<String>) {
    let pad = indent(depth);
    let StmtKind::If {
        cond,
        then_block,
        else_branch,
    } = &s.kind
    else {
        unreachable!("if_lines on non-if")
    };
    let mut t = lead;
    t.push("if".into());
    t.push("(".into());
    expr_tokens(cond, &mut t);
    t.push(")".into());
    t.push("{".into());
    out.push(format!("{pad}{}", join_tokens(&t)));
    block_lines(then_block, depth + 1, out);
    match else_branch {
        None => out.push(format!("{pad}}}")),
        Some(ElseBranch::Block(b)) => {
            out.push(format!("{pad}}} else {{"));
            block_lines(b, depth + 1, out);
            out.push(format!("{pad}}}"));
        }
        Some(ElseBranch::If(inner)) => if_lines(inner, depth, vec!["}".into(), "else".into()], out),
    }
}

/// Tokens of a non-compound statement (everything except `if`/`while`).
pub fn simple_stmt_tokens(s: &Stmt) -> Vec<String> {
    let mut t = Vec::new();
    match &s.kind {
        StmtKind::Let { name, init } => {
            t.extend(["let".to_string(), name.clone(), "=".into()]);
            expr_tokens(init, &mut t);
        }
        StmtKind::Assign { name, value } => {
            t.extend([name.clone(), "=".into()]);
            expr_tokens(value, &mut t);
        }
        StmtKind::IndexAssign { name, index, value } => {
            t.extend([name.clone(), "[".into()]);
            expr_tokens(index, &mut t);
            t.extend(["]".to_string(), "=".into()]);
            expr_tokens(value, &mut t);
        }
        StmtKind::Return(e) => {
            t.push("return".into());
            expr_tokens(e, &mut t);
        }
        StmtKind::Expr(e) => expr_tokens(e, &mut t),
        StmtKind::If { .. } | StmtKind::While { .. } => unreachable!("compound statement"),
    }
    t.push(";".into());
    t
}

pub fn print_expr(e: &Expr) -> String {
    let mut t = Vec::new();
    expr_tokens(e, &mut t);
    join_tokens(&t)
}

fn binary_prec(e: &Expr) -> Option<u8> {
    match e {
        Expr::Binary(op, _, _) => Some(op.precedence()),
        _ => None,
    }
}

pub fn expr_tokens(e: &Expr, out: &mut Vec<String>) {
    match e {
        Expr::Int(v) => {
            if *v < 0 {
                out.push("-".into());
            }
            out.push(v.unsigned_abs().to_string());
        }
        Expr::Bool(b) => out.push(b.to_string()),
        Expr::Str(s) => out.push(s.clone()),
        Expr::Var(v) => out.push(v.clone()),
        Expr::Array(items) => {
            out.push("[".into());
            for (i, it) in items.iter().enumerate() {
                if i > 0 {
                    out.push(",".into());
                }
                expr_tokens(it, out);
            }
            out.push("]".into());
        }
        Expr::Repeat(v, n) => {
            out.push("[".into());
            expr_tokens(v, out);
            out.push(";".into());
            expr_tokens(n, out);
            out.push("]".into());
        }
        Expr::Index(base, idx) => {
            let wrap = matches!(**base, Expr::Binary(..) | Expr::Unary(..));
            wrapped(base, wrap, out);
            out.push("[".into());
            expr_tokens(idx, out);
            out.push("]".into());
        }
        Expr::Call(name, args) => {
            out.push(name.clone());
            out.push("(".into());
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push(",".into());
                }
                expr_tokens(a, out);
            }
            out.push(")".into());
        }
        Expr::Unary(op, inner) => {
            out.push(if *op == UnOp::Neg { "-" } else { "!" }.into());
            let wrap = matches!(**inner, Expr::Binary(..)) || matches!(**inner, Expr::Int(v) if v < 0);
            wrapped(inner, wrap, out);
        }
        Expr::Binary(op, l, r) => {
            let p = op.precedence();
            wrapped(l, binary_prec(l).is_some_and(|lp| lp < p), out);
            out.push(op.symbol().into());
            wrapped(r, binary_prec(r).is_some_and(|rp| rp <= p), out);
        }
    }
}

fn wrapped(e: &Expr, paren: bool, out: &mut Vec<String>) {
    if paren {
        out.push("(".into());
    }
    expr_tokens(e, out);
    if paren {
        out.push(")".into());
    }
}
