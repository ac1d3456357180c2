use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ast::*;

pub const DEFAULT_STEP_BUDGET: u64 = 10_000;
const MAX_CALL_DEPTH: usize = 200;
const MAX_ARRAY_LEN: i64 = 100_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Int(i64),
    Bool(bool),
    Str(String),
    Array(Vec<Value>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Str(s) => write!(f, "{s:?}"),
            Value::Array(items) => {
                write!(f, "[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, "]")
            }
        }
    }
}

impl Value {
    pub fn from_json(v: &serde_json::Value) -> Option<Value> {
        Some(match v {
            serde_json::Value::Bool(b) => Value::Bool(*b),
            serde_json::Value::Number(n) => Value::Int(n.as_i64()?),
            serde_json::Value::String(s) => Value::Str(s.clone()),
            serde_json::Value::Array(a) => Value::Array(a.iter().map(Value::from_json).collect::<Option<_>>()?),
            _ => return None,
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Int(v) => serde_json::Value::from(*v),
            Value::Bool(b) => serde_json::Value::Bool(*b),
            Value::Str(s) => serde_json::Value::String(s.clone()),
            Value::Array(a) => serde_json::Value::Array(a.iter().map(Value::to_json).collect()),
        }
    }
}

/// One test: call `fn_name(args)` and compare against `expect`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    #[serde(rename = "fn")]
    pub fn_name: String,
    pub args: Vec<serde_json::Value>,
    pub expect: serde_json::Value,
}

impl TestCase {
    pub fn new(fn_name: &str, args: Vec<Value>, expect: Value) -> Self {
        Self {
            fn_name: fn_name.to_string(),
            args: args.iter().map(Value::to_json).collect(),
            expect: expect.to_json(),
        }
    }
}

pub fn parse_test_suite(text: &str) -> Result<Vec<TestCase>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

pub fn write_test_suite(tests: &[TestCase]) -> String {
    let mut s = String::new();
    for t in tests {
        s.push_str(&serde_json::to_string(t).expect("test case serializes"));
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TestOutcome {
    Pass,
    Fail { expected: String, actual: String },
    /// Runtime errors (division by zero, bad index, ...) are failures.
    RuntimeError { expected: String, message: String },
    Timeout,
}

impl TestOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, TestOutcome::Pass)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Halt {
    Timeout,
    Error(String),
}

fn rt<T>(msg: impl Into<String>) -> Result<T, Halt> {
    Err(Halt::Error(msg.into()))
}

enum Flow {
    Next,
    Return(Value),
}

/// Tree-walking interpreter. One instance per test run; nothing is shared.
pub struct Interpreter<'p> {
    program: &'p Program,
    functions: HashMap<&'p str, &'p Function>,
    globals: HashMap<String, Value>,
    steps: u64,
    budget: u64,
    depth: usize,
}

impl<'p> Interpreter<'p> {
    pub fn new(program: &'p Program, budget: u64) -> Result<Self, Halt> {
        let mut me = Self {
            program,
            functions: program.functions().map(|f| (f.name.as_str(), f)).collect(),
            globals: HashMap::new(),
            steps: 0,
            budget,
            depth: 0,
        };
        let mut frame = Vec::new();
        for g in program.globals() {
            let v = me.eval(&g.init, &mut frame)?;
            me.globals.insert(g.name.clone(), v);
        }
        Ok(me)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn tick(&mut self) -> Result<(), Halt> {
        self.steps += 1;
        if self.steps > self.budget {
            Err(Halt::Timeout)
        } else {
            Ok(())
        }
    }

    pub fn call(&mut self, name: &str, args: Vec<Value>) -> Result<Value, Halt> {
        self.tick()?;
        if name == "len" {
            return match args.as_slice() {
                [Value::Array(a)] => Ok(Value::Int(a.len() as i64)),
                [Value::Str(s)] => Ok(Value::Int(s.chars().count() as i64)),
                _ => rt("len expects one array or string"),
            };
        }
        let f = match self.functions.get(name) {
            Some(f) => *f,
            None => return rt(format!("unknown function `{name}`")),
        };
        if f.params.len() != args.len() {
            return rt(format!("`{name}` takes {} argument(s)", f.params.len()));
        }
        if self.depth >= MAX_CALL_DEPTH {
            return rt("call depth exceeded");
        }
        self.depth += 1;
        let mut frame: Vec<HashMap<String, Value>> = vec![f.params.iter().cloned().zip(args).collect()];
        let flow = self.block(&f.body, &mut frame);
        self.depth -= 1;
        match flow? {
            Flow::Return(v) => Ok(v),
            Flow::Next => rt(format!("`{name}` ended without return")),
        }
    }

    fn block(&mut self, b: &Block, frame: &mut Vec<HashMap<String, Value>>) -> Result<Flow, Halt> {
        frame.push(HashMap::new());
        let mut flow = Flow::Next;
        for s in &b.stmts {
            match self.stmt(s, frame) {
                Ok(Flow::Next) => {}
                Ok(ret) => {
                    flow = ret;
                    break;
                }
                Err(e) => {
                    frame.pop();
                    return Err(e);
                }
            }
        }
        frame.pop();
        Ok(flow)
    }

    fn lookup_mut<'a>(
        globals: &'a mut HashMap<String, Value>,
        frame: &'a mut [HashMap<String, Value>],
        name: &str,
    ) -> Result<&'a mut Value, Halt> {
        for scope in frame.iter_mut().rev() {
            if let Some(v) = scope.get_mut(name) {
                return Ok(v);
            }
        }
        match globals.get_mut(name) {
            Some(v) => Ok(v),
            None => rt(format!("undefined variable `{name}`")),
        }
    }

    fn stmt(&mut self, s: &Stmt, frame: &mut Vec<HashMap<String, Value>>) -> Result<Flow, Halt> {
        self.tick()?;
        match &s.kind {
            StmtKind::Let { name, init } => {
                let v = self.eval(init, frame)?;
                frame.last_mut().unwrap().insert(name.clone(), v);
            }
            StmtKind::Assign { name, value } => {
                let v = self.eval(value, frame)?;
                *Self::lookup_mut(&mut self.globals, frame, name)? = v;
            }
            StmtKind::IndexAssign { name, index, value } => {
                let i = self.eval_int(index, frame)?;
                let v = self.eval(value, frame)?;
                match Self::lookup_mut(&mut self.globals, frame, name)? {
                    Value::Array(a) => {
                        if i < 0 || i as usize >= a.len() {
                            return rt(format!("index {i} out of bounds for length {}", a.len()));
                        }
                        a[i as usize] = v;
                    }
                    _ => return rt(format!("`{name}` is not an array")),
                }
            }
            StmtKind::If {
                cond,
                then_block,
                else_branch,
            } => {
                if self.eval_bool(cond, frame)? {
                    return self.block(then_block, frame);
                }
                match else_branch {
                    Some(ElseBranch::Block(b)) => return self.block(b, frame),
                    Some(ElseBranch::If(inner)) => return self.stmt(inner, frame),
                    None => {}
                }
            }
            StmtKind::While { cond, body } => loop {
                self.tick()?;
                if !self.eval_bool(cond, frame)? {
                    break;
                }
                if let Flow::Return(v) = self.block(body, frame)? {
                    return Ok(Flow::Return(v));
                }
            },
            StmtKind::Return(e) => return Ok(Flow::Return(self.eval(e, frame)?)),
            StmtKind::Expr(e) => {
                self.eval(e, frame)?;
            }
        }
        Ok(Flow::Next)
    }

    fn eval_int(&mut self, e: &Expr, frame: &mut Vec<HashMap<String, Value>>) -> Result<i64, Halt> {
        match self.eval(e, frame)? {
            Value::Int(v) => Ok(v),
            v => rt(format!("expected integer, got {v}")),
        }
    }

    fn eval_bool(&mut self, e: &Expr, frame: &mut Vec<HashMap<String, Value>>) -> Result<bool, Halt> {
        match self.eval(e, frame)? {
            Value::Bool(v) => Ok(v),
            v => rt(format!("expected boolean, got {v}")),
        }
    }

    fn eval(&mut self, e: &Expr, frame: &mut Vec<HashMap<String, Value>>) -> Result<Value, Halt> {
        Ok(match e {
            Expr::Int(v) => Value::Int(*v),
            Expr::Bool(b) => Value::Bool(*b),
            Expr::Str(s) => Value::Str(unquote(s)),
            Expr::Var(name) => Self::lookup_mut(&mut self.globals, frame, name)?.clone(),
            Expr::Array(items) => Value::Array(
                items
                    .iter()
                    .map(|i| self.eval(i, frame))
                    .collect::<Result<_, _>>()?,
            ),
            Expr::Repeat(v, n) => {
                let v = self.eval(v, frame)?;
                let n = self.eval_int(n, frame)?;
                if !(0..=MAX_ARRAY_LEN).contains(&n) {
                    return rt(format!("invalid array length {n}"));
                }
                Value::Array(vec![v; n as usize])
            }
            Expr::Index(base, idx) => {
                let b = self.eval(base, frame)?;
                let i = self.eval_int(idx, frame)?;
                match b {
                    Value::Array(a) => {
                        if i < 0 || i as usize >= a.len() {
                            return rt(format!("index {i} out of bounds for length {}", a.len()));
                        }
                        a[i as usize].clone()
                    }
                    v => return rt(format!("cannot index {v}")),
                }
            }
            Expr::Call(name, args) => {
                let vals = args
                    .iter()
                    .map(|a| self.eval(a, frame))
                    .collect::<Result<Vec<_>, _>>()?;
                self.call(name, vals)?
            }
            Expr::Unary(UnOp::Neg, a) => match self.eval(a, frame)? {
                Value::Int(v) => Value::Int(v.checked_neg().ok_or_else(|| Halt::Error("overflow".into()))?),
                v => return rt(format!("cannot negate {v}")),
            },
            Expr::Unary(UnOp::Not, a) => Value::Bool(!self.eval_bool(a, frame)?),
            Expr::Binary(BinOp::And, a, b) => Value::Bool(self.eval_bool(a, frame)? && self.eval_bool(b, frame)?),
            Expr::Binary(BinOp::Or, a, b) => Value::Bool(self.eval_bool(a, frame)? || self.eval_bool(b, frame)?),
            Expr::Binary(op, a, b) => {
                let l = self.eval(a, frame)?;
                let r = self.eval(b, frame)?;
                binary(*op, l, r)?
            }
        })
    }

    pub fn program(&self) -> &Program {
        self.program
    }
}

fn binary(op: BinOp, l: Value, r: Value) -> Result<Value, Halt> {
    match op {
        BinOp::Eq => return Ok(Value::Bool(l == r)),
        BinOp::Ne => return Ok(Value::Bool(l != r)),
        _ => {}
    }
    let (Value::Int(a), Value::Int(b)) = (&l, &r) else {
        return rt(format!("operator `{}` needs integers, got {l} and {r}", op.symbol()));
    };
    let (a, b) = (*a, *b);
    let overflow = || Halt::Error("integer overflow".into());
    Ok(match op {
        BinOp::Lt => Value::Bool(a < b),
        BinOp::Le => Value::Bool(a <= b),
        BinOp::Gt => Value::Bool(a > b),
        BinOp::Ge => Value::Bool(a >= b),
        BinOp::Add => Value::Int(a.checked_add(b).ok_or_else(overflow)?),
        BinOp::Sub => Value::Int(a.checked_sub(b).ok_or_else(overflow)?),
        BinOp::Mul => Value::Int(a.checked_mul(b).ok_or_else(overflow)?),
        BinOp::Div | BinOp::Rem if b == 0 => return rt("division by zero"),
        BinOp::Div => Value::Int(a.checked_div(b).ok_or_else(overflow)?),
        BinOp::Rem => Value::Int(a.checked_rem(b).ok_or_else(overflow)?),
        _ => unreachable!("logical operators handled earlier"),
    })
}

fn unquote(lit: &str) -> String {
    let inner = lit.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(lit);
    let mut out = String::new();
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('t') => out.push('\t'),
                Some(o) => out.push(o),
                None => {}
            }
        } else {
            out.push(c);
        }
    }
    out
}

pub fn run_test(program: &Program, test: &TestCase, budget: u64) -> TestOutcome {
    let expected = test.expect.to_string();
    let args: Option<Vec<Value>> = test.args.iter().map(Value::from_json).collect();
    let Some(args) = args else {
        return TestOutcome::RuntimeError {
            expected,
            message: "unsupported argument value".into(),
        };
    };
    let result = Interpreter::new(program, budget).and_then(|mut it| it.call(&test.fn_name, args));
    match result {
        Ok(v) => {
            let want = Value::from_json(&test.expect);
            if want.as_ref() == Some(&v) {
                TestOutcome::Pass
            } else {
                TestOutcome::Fail {
                    expected,
                    actual: v.to_json().to_string(),
                }
            }
        }
        Err(Halt::Timeout) => TestOutcome::Timeout,
        Err(Halt::Error(message)) => TestOutcome::RuntimeError { expected, message },
    }
}

pub fn run_tests(program: &Program, tests: &[TestCase], budget: u64) -> Vec<TestOutcome> {
    tests.iter().map(|t| run_test(program, t, budget)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::compile;

    fn max_prog(ret: &str) -> Program {
        compile(&format!(
            "fn max(a, b) {{\n    if (a > b) {{\n        return a;\n    }}\n    return {ret};\n}}\n"
        ))
        .unwrap()
    }

    #[test]
    fn pass_fail_timeout() {
        let t = TestCase::new("max", vec![Value::Int(2), Value::Int(3)], Value::Int(3));
        assert_eq!(run_test(&max_prog("b"), &t, DEFAULT_STEP_BUDGET), TestOutcome::Pass);
        assert_eq!(
            run_test(&max_prog("a"), &t, DEFAULT_STEP_BUDGET),
            TestOutcome::Fail {
                expected: "3".into(),
                actual: "2".into()
            }
        );
        let p = compile("fn spin() { while (true) { } return 0; }").unwrap();
        let t = TestCase::new("spin", vec![], Value::Int(0));
        assert_eq!(run_test(&p, &t, DEFAULT_STEP_BUDGET), TestOutcome::Timeout);
    }

    #[test]
    fn runtime_errors_fail() {
        let p = compile("fn d(a) { return 10 / a; } fn ix(a) { return a[3]; }").unwrap();
        let t = TestCase::new("d", vec![Value::Int(0)], Value::Int(0));
        assert!(matches!(run_test(&p, &t, 100), TestOutcome::RuntimeError { .. }));
        let t = TestCase::new("ix", vec![Value::Array(vec![Value::Int(1)])], Value::Int(0));
        assert!(matches!(run_test(&p, &t, 100), TestOutcome::RuntimeError { .. }));
    }

    #[test]
    fn globals_arrays_and_recursion() {
        let src = "let base = 3;\nfn fact(n) {\n    if (n <= 1) {\n        return 1;\n    }\n    return n * fact(n - 1);\n}\nfn bump(xs) {\n    let i = 0;\n    while (i < len(xs)) {\n        xs[i] = xs[i] + base;\n        i = i + 1;\n    }\n    return xs;\n}\n";
        let p = compile(src).unwrap();
        let t1 = TestCase::new("fact", vec![Value::Int(5)], Value::Int(120));
        let t2 = TestCase::new(
            "bump",
            vec![Value::Array(vec![Value::Int(1), Value::Int(2)])],
            Value::Array(vec![Value::Int(4), Value::Int(5)]),
        );
        assert!(run_tests(&p, &[t1, t2], 10_000).iter().all(TestOutcome::passed));
    }

    #[test]
    fn suite_round_trips_as_json_lines() {
        let t = TestCase::new("f", vec![Value::Bool(true), Value::Str("x".into())], Value::Int(-4));
        let text = write_test_suite(std::slice::from_ref(&t));
        assert_eq!(text.trim(), r#"{"fn":"f","args":[true,"x"],"expect":-4}"#);
        assert_eq!(parse_test_suite(&text).unwrap(), vec![t]);
    }
}
