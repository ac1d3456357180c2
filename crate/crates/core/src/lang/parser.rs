use super::ast::*;
use super::lexer::{lex, TokKind, Token};
use super::LangError;

pub fn parse(source: &str) -> Result<Program, LangError> {
    let tokens = lex(source)?;
    let eof_line = source.lines().count().max(1);
    let mut p = Parser {
        tokens,
        pos: 0,
        eof_line,
    };
    let mut items = Vec::new();
    while !p.at_end() {
        let t = p.peek().unwrap().clone();
        match t.text.as_str() {
            "fn" => items.push(Item::Function(p.function()?)),
            "let" => {
                let start = p.next().unwrap();
                let name = p.ident()?;
                p.expect("=")?;
                let init = p.expr()?;
                let end = p.expect(";")?;
                items.push(Item::Global(Global {
                    name,
                    init,
                    span: span_between(&start, &end),
                }));
            }
            _ => return Err(p.error_at(&t, "expected `fn` or `let` at top level")),
        }
    }
    Ok(Program { items })
}

/// Parses a single expression (used by mutation and tests).
pub fn parse_expr(source: &str) -> Result<Expr, LangError> {
    let tokens = lex(source)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        eof_line: 1,
    };
    let e = p.expr()?;
    if let Some(t) = p.peek() {
        let t = t.clone();
        return Err(p.error_at(&t, "trailing tokens after expression"));
    }
    Ok(e)
}

fn span_between(start: &Token, end: &Token) -> Span {
    let col_end = if end.line == start.line {
        end.col + end.text.chars().count()
    } else {
        start.col + start.text.chars().count()
    };
    Span {
        line: start.line,
        col_start: start.col,
        col_end,
    }
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    eof_line: usize,
}

impl Parser {
    fn at_end(&self) -> bool {
        self.pos >= self.tokens.len()
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_text(&self) -> Option<&str> {
        self.peek().map(|t| t.text.as_str())
    }

    fn peek_is(&self, s: &str) -> bool {
        self.peek().is_some_and(|t| t.text == s && t.kind != TokKind::Str)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, t: &Token, msg: &str) -> LangError {
        LangError::Syntax {
            line: t.line,
            col: t.col,
            message: format!("{msg}, found `{}`", t.text),
        }
    }

    fn eof_error(&self, msg: &str) -> LangError {
        LangError::Syntax {
            line: self.eof_line,
            col: 1,
            message: format!("{msg}, found end of input"),
        }
    }

    fn expect(&mut self, s: &str) -> Result<Token, LangError> {
        match self.peek() {
            Some(t) if t.text == s && t.kind != TokKind::Str => Ok(self.next().unwrap()),
            Some(t) => Err(self.error_at(&t.clone(), &format!("expected `{s}`"))),
            None => Err(self.eof_error(&format!("expected `{s}`"))),
        }
    }

    fn ident(&mut self) -> Result<String, LangError> {
        match self.peek() {
            Some(t) if t.kind == TokKind::Ident => Ok(self.next().unwrap().text),
            Some(t) => Err(self.error_at(&t.clone(), "expected identifier")),
            None => Err(self.eof_error("expected identifier")),
        }
    }

    fn function(&mut self) -> Result<Function, LangError> {
        let start = self.expect("fn")?;
        let name = self.ident()?;
        self.expect("(")?;
        let mut params = Vec::new();
        if !self.peek_is(")") {
            loop {
                params.push(self.ident()?);
                if self.peek_is(",") {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.expect(")")?;
        let open = self.expect("{")?;
        let body = self.block_body()?;
        Ok(Function {
            name,
            params,
            body,
            span: span_between(&start, &open),
        })
    }

    /// Statements up to and including the closing brace; the `{` is consumed.
    fn block_body(&mut self) -> Result<Block, LangError> {
        let mut stmts = Vec::new();
        loop {
            match self.peek() {
                None => return Err(self.eof_error("expected `}`")),
                Some(t) if t.text == "}" && t.kind == TokKind::Punct => {
                    let end = self.next().unwrap();
                    return Ok(Block {
                        stmts,
                        end_line: end.line,
                    });
                }
                Some(_) => stmts.push(self.stmt()?),
            }
        }
    }

    fn stmt(&mut self) -> Result<Stmt, LangError> {
        let start = self.peek().unwrap().clone();
        match start.text.as_str() {
            "let" if start.kind == TokKind::Keyword => {
                self.next();
                let name = self.ident()?;
                self.expect("=")?;
                let init = self.expr()?;
                let end = self.expect(";")?;
                Ok(Stmt {
                    kind: StmtKind::Let { name, init },
                    span: span_between(&start, &end),
                })
            }
            "return" if start.kind == TokKind::Keyword => {
                self.next();
                let e = self.expr()?;
                let end = self.expect(";")?;
                Ok(Stmt {
                    kind: StmtKind::Return(e),
                    span: span_between(&start, &end),
                })
            }
            "while" if start.kind == TokKind::Keyword => {
                self.next();
                self.expect("(")?;
                let cond = self.expr()?;
                self.expect(")")?;
                let open = self.expect("{")?;
                let body = self.block_body()?;
                Ok(Stmt {
                    kind: StmtKind::While { cond, body },
                    span: span_between(&start, &open),
                })
            }
            "if" if start.kind == TokKind::Keyword => self.if_stmt(),
            _ => {
                let target = self.expr()?;
                if self.peek_is("=") {
                    self.next();
                    let value = self.expr()?;
                    let end = self.expect(";")?;
                    let kind = match target {
                        Expr::Var(name) => StmtKind::Assign { name, value },
                        Expr::Index(base, index) => match *base {
                            Expr::Var(name) => StmtKind::IndexAssign {
                                name,
                                index: *index,
                                value,
                            },
                            _ => return Err(self.error_at(&start, "invalid assignment target")),
                        },
                        _ => return Err(self.error_at(&start, "invalid assignment target")),
                    };
                    return Ok(Stmt {
                        kind,
                        span: span_between(&start, &end),
                    });
                }
                let end = self.expect(";")?;
                Ok(Stmt {
                    kind: StmtKind::Expr(target),
                    span: span_between(&start, &end),
                })
            }
        }
    }

    fn if_stmt(&mut self) -> Result<Stmt, LangError> {
        let start = self.expect("if")?;
        self.expect("(")?;
        let cond = self.expr()?;
        self.expect(")")?;
        let open = self.expect("{")?;
        let then_block = self.block_body()?;
        let else_branch = if self.peek_is("else") {
            self.next();
            if self.peek_is("if") {
                Some(ElseBranch::If(Box::new(self.if_stmt()?)))
            } else {
                self.expect("{")?;
                Some(ElseBranch::Block(self.block_body()?))
            }
        } else {
            None
        };
        Ok(Stmt {
            kind: StmtKind::If {
                cond,
                then_block,
                else_branch,
            },
            span: span_between(&start, &open),
        })
    }

    fn expr(&mut self) -> Result<Expr, LangError> {
        self.binary(1)
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, LangError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(t) if t.kind == TokKind::Punct => match BinOp::from_symbol(&t.text) {
                    Some(op) if op.precedence() >= min_prec => op,
                    _ => break,
                },
                _ => break,
            };
            self.next();
            let rhs = self.binary(op.precedence() + 1)?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, LangError> {
        if self.peek_is("-") {
            self.next();
            return Ok(Expr::Unary(UnOp::Neg, Box::new(self.unary()?)));
        }
        if self.peek_is("!") {
            self.next();
            return Ok(Expr::Unary(UnOp::Not, Box::new(self.unary()?)));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr, LangError> {
        let mut e = self.primary()?;
        while self.peek_is("[") {
            self.next();
            let idx = self.expr()?;
            self.expect("]")?;
            e = Expr::Index(Box::new(e), Box::new(idx));
        }
        Ok(e)
    }

    fn primary(&mut self) -> Result<Expr, LangError> {
        let t = match self.next() {
            Some(t) => t,
            None => return Err(self.eof_error("expected expression")),
        };
        match t.kind {
            TokKind::Int => t
                .text
                .parse()
                .map(Expr::Int)
                .map_err(|_| self.error_at(&t, "integer literal out of range")),
            TokKind::Str => Ok(Expr::Str(t.text)),
            TokKind::Keyword if t.text == "true" => Ok(Expr::Bool(true)),
            TokKind::Keyword if t.text == "false" => Ok(Expr::Bool(false)),
            TokKind::Ident => {
                if self.peek_is("(") {
                    self.next();
                    let args = self.list(")")?;
                    Ok(Expr::Call(t.text, args))
                } else {
                    Ok(Expr::Var(t.text))
                }
            }
            TokKind::Punct if t.text == "(" => {
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            TokKind::Punct if t.text == "[" => {
                if self.peek_is("]") {
                    self.next();
                    return Ok(Expr::Array(Vec::new()));
                }
                let first = self.expr()?;
                if self.peek_is(";") {
                    self.next();
                    let count = self.expr()?;
                    self.expect("]")?;
                    return Ok(Expr::Repeat(Box::new(first), Box::new(count)));
                }
                let mut items = vec![first];
                while self.peek_is(",") {
                    self.next();
                    items.push(self.expr()?);
                }
                self.expect("]")?;
                Ok(Expr::Array(items))
            }
            _ => Err(self.error_at(&t, "expected expression")),
        }
    }

    fn list(&mut self, close: &str) -> Result<Vec<Expr>, LangError> {
        let mut out = Vec::new();
        if self.peek_is(close) {
            self.next();
            return Ok(out);
        }
        loop {
            out.push(self.expr()?);
            match self.peek_text() {
                Some(",") => {
                    self.next();
                }
                _ => break,
            }
        }
        self.expect(close)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let p = parse("fn main() { return 0; }").unwrap();
        assert_eq!(p.functions().count(), 1);
    }

    #[test]
    fn error_points_at_brace() {
        match parse("fn f( { }").unwrap_err() {
            LangError::Syntax { line, col, .. } => assert_eq!((line, col), (1, 7)),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse_expr("a - b - c * d").unwrap();
        let want = parse_expr("(a - b) - (c * d)").unwrap();
        assert_eq!(e, want);
        assert_ne!(e, parse_expr("a - (b - c * d)").unwrap());
        assert_eq!(parse_expr("!a && b").unwrap(), parse_expr("(!a) && b").unwrap());
    }

    #[test]
    fn statement_spans() {
        let src = "fn f(a) {\n    let x = a + 1;\n    if (x > 2) {\n        return x;\n    } else {\n        return 0;\n    }\n}\n";
        let p = parse(src).unwrap();
        let f = p.function("f").unwrap();
        assert_eq!(f.end_line(), 8);
        let s = &f.body.stmts[0];
        assert_eq!((s.span.line, s.span.col_start, s.span.col_end), (2, 5, 19));
        match &f.body.stmts[1].kind {
            StmtKind::If {
                then_block,
                else_branch: Some(ElseBranch::Block(b)),
                ..
            } => {
                assert_eq!(then_block.end_line, 5);
                assert_eq!(b.end_line, 7);
            }
            k => panic!("{k:?}"),
        }
    }
}
