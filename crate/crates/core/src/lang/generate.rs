//! Template-based generator of small correct MiniLang programs with test
//! suites. Identifier names are sampled per role in several styles
//! (plain, camelCase, snake_case, and run-together "mashed" words) so that
//! held-out programs contain names never seen whole during training.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;

use super::ast::Program;
use super::interp::{run_test, TestCase, TestOutcome, Value, DEFAULT_STEP_BUDGET};
use super::lexer::is_keyword;
use super::printer::print_program;
use super::resolve::compile;

#[derive(Debug, Clone)]
pub struct GeneratedProgram {
    pub template: &'static str,
    /// Canonical (pretty-printed) source.
    pub source: String,
    pub program: Program,
    pub tests: Vec<TestCase>,
    pub entry: String,
}

#[derive(Debug, Clone, Copy)]
enum Arg {
    Int(i64, i64),
    Arr { min_len: usize, max_len: usize, lo: i64, hi: i64 },
    SortedArr { max_len: usize, hi: i64 },
    /// Half the time an element of the array argument at this index.
    ElementOf(usize, i64, i64),
    SameLenArr(usize, i64, i64),
}

struct Template {
    name: &'static str,
    source: &'static str,
    f_words: (&'static [&'static str], &'static [&'static str]),
    g_words: (&'static [&'static str], &'static [&'static str]),
    consts: &'static [(&'static str, &'static [i64])],
    args: &'static [Arg],
}

const NO_WORDS: (&[&str], &[&str]) = (&[], &[]);

fn role_words(role: &str) -> (&'static [&'static str], &'static [&'static str]) {
    match role {
        "acc" => (&["total", "sum", "acc", "result", "tally", "agg"], &["sum", "total", "val", "all", "acc"]),
        "i" => (&["i", "j", "k", "idx", "pos", "step"], &["idx", "pos", "at", "no"]),
        "n" => (&["n", "limit", "size", "num", "upto", "bound"], &["max", "end", "len", "cap", "n"]),
        "arr" => (
            &["arr", "nums", "values", "data", "items", "xs", "list", "seq"],
            &["in", "vals", "list", "data", "arr"],
        ),
        "x" => (&["x", "target", "key", "needle", "want", "val"], &["val", "key", "item"]),
        "lo" => (&["lo", "low", "left", "start", "floor"], &["idx", "bound", "pos"]),
        "hi" => (&["hi", "high", "right", "stop", "ceil"], &["idx", "bound", "pos"]),
        "mid" => (&["mid", "middle", "m", "half", "pivot"], &["idx", "pos", "point"]),
        "best" => (&["best", "max", "top", "peak", "most"], &["so", "val", "seen", "far"]),
        "least" => (&["least", "min", "small", "low", "bottom"], &["so", "val", "seen", "far"]),
        "cur" => (&["cur", "run", "max", "here"], &["ending", "sum", "here", "run"]),
        "t" => (&["t", "tmp", "temp", "swap", "prev", "next"], &["val", "old", "hold"]),
        "a" => (&["a", "p", "x", "left", "first", "u"], &["val", "one", "in"]),
        "b" => (&["b", "q", "y", "right", "second", "v"], &["val", "two", "in"]),
        "d" => (&["d", "div", "factor", "cand", "trial"], &["div", "num", "try"]),
        "out" => (&["out", "res", "rev", "copy", "dest"], &["arr", "list", "buf"]),
        "lim" => (&["limit", "cap", "threshold", "bound", "cutoff"], &["val", "max", "lim"]),
        "k" => (&["factor", "scale", "weight", "mult", "gain"], &["k", "val", "by"]),
        _ => (&["v"], &["val"]),
    }
}

const TEMPLATES: &[Template] = &[
    Template {
        name: "sum_range",
        source: "fn {f}({n}) {\n    let {acc} = 0;\n    let {i} = 0;\n    while ({i} < {n}) {\n        {acc} = {acc} + {i};\n        {i} = {i} + 1;\n    }\n    return {acc};\n}\n",
        f_words: (&["sum", "add", "range", "tri"], &["range", "upto", "below", "all", "nums"]),
        g_words: NO_WORDS,
        consts: &[],
        args: &[Arg::Int(0, 12)],
    },
    Template {
        name: "gcd",
        source: "fn {f}({a}, {b}) {\n    while ({b} != 0) {\n        let {t} = {b};\n        {b} = {a} % {b};\n        {a} = {t};\n    }\n    return {a};\n}\n",
        f_words: (&["gcd", "common", "euclid"], &["div", "gcd", "factor"]),
        g_words: NO_WORDS,
        consts: &[],
        args: &[Arg::Int(1, 60), Arg::Int(1, 60)],
    },
    Template {
        name: "binsearch",
        source: "fn {f}({arr}, {x}) {\n    let {lo} = 0;\n    let {hi} = len({arr}) - 1;\n    while ({lo} <= {hi}) {\n        let {mid} = ({lo} + {hi}) / 2;\n        if ({arr}[{mid}] == {x}) {\n            return {mid};\n        } else if ({arr}[{mid}] < {x}) {\n            {lo} = {mid} + 1;\n        } else {\n            {hi} = {mid} - 1;\n        }\n    }\n    return -1;\n}\n",
        f_words: (&["bin", "binary", "find", "search"], &["search", "find", "lookup", "pos"]),
        g_words: NO_WORDS,
        consts: &[],
        args: &[Arg::SortedArr { max_len: 9, hi: 40 }, Arg::ElementOf(0, 0, 40)],
    },
    Template {
        name: "array_max",
        source: "fn {f}({arr}) {\n    let {best} = {arr}[0];\n    let {i} = 1;\n    while ({i} < len({arr})) {\n        if ({arr}[{i}] > {best}) {\n            {best} = {arr}[{i}];\n        }\n        {i} = {i} + 1;\n    }\n    return {best};\n}\n",
        f_words: (&["max", "largest", "top", "peak"], &["of", "val", "elem", "item"]),
        g_words: NO_WORDS,
        consts: &[],
        args: &[Arg::Arr { min_len: 1, max_len: 8, lo: -20, hi: 20 }],
    },
    Template {
        name: "array_min",
        source: "fn {f}({arr}) {\n    let {least} = {arr}[0];\n    let {i} = 1;\n    while ({i} < len({arr})) {\n        if ({arr}[{i}] < {least}) {\n            {least} = {arr}[{i}];\n        }\n        {i} = {i} + 1;\n    }\n    return {least};\n}\n",
        f_words: (&["min", "smallest", "least", "lowest"], &["of", "val", "elem", "item"]),
        g_words: NO_WORDS,
        consts: &[],
        args: &[Arg::Arr { min_len: 1, max_len: 8, lo: -20, hi: 20 }],
    },
    Template {
        name: "count_eq",
        source: "fn {f}({arr}, {x}) {\n    let {acc} = 0;\n    let {i} = 0;\n    while ({i} < len({arr})) {\n        if ({arr}[{i}] == {x}) {\n            {acc} = {acc} + 1;\n        }\n        {i} = {i} + 1;\n    }\n    return {acc};\n}\n",
        f_words: (&["count", "occur", "freq", "tally"], &["of", "eq", "hits", "matches"]),
        g_words: NO_WORDS,
        consts: &[],
        args: &[Arg::Arr { min_len: 0, max_len: 8, lo: 0, hi: 4 }, Arg::Int(0, 4)],
    },
    Template {
        name: "kadane",
        source: "fn {f}({arr}) {\n    let {best} = {arr}[0];\n    let {cur} = 0;\n    let {i} = 0;\n    while ({i} < len({arr})) {\n        {cur} = {cur} + {arr}[{i}];\n        if ({cur} > {best}) {\n            {best} = {cur};\n        }\n        if ({cur} < 0) {\n            {cur} = 0;\n        }\n        {i} = {i} + 1;\n    }\n    return {best};\n}\n",
        f_words: (&["max", "best", "kadane", "largest"], &["subarray", "run", "span", "segment"]),
        g_words: NO_WORDS,
        consts: &[],
        args: &[Arg::Arr { min_len: 1, max_len: 8, lo: -9, hi: 9 }],
    },
    Template {
        name: "factorial",
        source: "fn {f}({n}) {\n    let {acc} = 1;\n    let {i} = 2;\n    while ({i} <= {n}) {\n        {acc} = {acc} * {i};\n        {i} = {i} + 1;\n    }\n    return {acc};\n}\n",
        f_words: (&["fact", "factorial", "prod", "product"], &["of", "upto", "all", "n"]),
        g_words: NO_WORDS,
        consts: &[],
        args: &[Arg::Int(0, 10)],
    },
    Template {
        name: "fibonacci",
        source: "fn {f}({n}) {\n    let {a} = 0;\n    let {b} = 1;\n    let {i} = 0;\n    while ({i} < {n}) {\n        let {t} = {a} + {b};\n        {a} = {b};\n        {b} = {t};\n        {i} = {i} + 1;\n    }\n    return {a};\n}\n",
        f_words: (&["fib", "fibo", "fibonacci", "seq"], &["at", "num", "nth", "term"]),
        g_words: NO_WORDS,
        consts: &[],
        args: &[Arg::Int(0, 15)],
    },
    Template {
        name: "is_prime",
        source: "fn {f}({n}) {\n    if ({n} < 2) {\n        return false;\n    }\n    let {d} = 2;\n    while ({d} * {d} <= {n}) {\n        if ({n} % {d} == 0) {\n            return false;\n        }\n        {d} = {d} + 1;\n    }\n    return true;\n}\n",
        f_words: (&["is", "check", "test", "prime"], &["prime", "primality", "check"]),
        g_words: NO_WORDS,
        consts: &[],
        args: &[Arg::Int(0, 40)],
    },
    Template {
        name: "max_helper",
        source: "fn {g}({a}, {b}) {\n    if ({a} > {b}) {\n        return {a};\n    }\n    return {b};\n}\n\nfn {f}({arr}) {\n    let {best} = {arr}[0];\n    let {i} = 1;\n    while ({i} < len({arr})) {\n        {best} = {g}({best}, {arr}[{i}]);\n        {i} = {i} + 1;\n    }\n    return {best};\n}\n",
        f_words: (&["max", "largest", "top", "reduce"], &["all", "of", "array", "list"]),
        g_words: (&["max", "bigger", "larger", "pick"], &["two", "of", "pair", "max"]),
        consts: &[],
        args: &[Arg::Arr { min_len: 1, max_len: 8, lo: -20, hi: 20 }],
    },
    Template {
        name: "clamp",
        source: "let {lo} = {K1};\nlet {hi} = {K2};\n\nfn {f}({x}) {\n    if ({x} < {lo}) {\n        return {lo};\n    }\n    if ({x} > {hi}) {\n        return {hi};\n    }\n    return {x};\n}\n",
        f_words: (&["clamp", "bound", "limit", "clip"], &["val", "range", "to", "in"]),
        g_words: NO_WORDS,
        consts: &[("K1", &[2, 3, 4, 5, 6, 7, 8, 9]), ("K2", &[12, 15, 18, 20, 24, 30])],
        args: &[Arg::Int(-5, 40)],
    },
    Template {
        name: "power",
        source: "fn {f}({b}, {n}) {\n    let {acc} = 1;\n    let {i} = 0;\n    while ({i} < {n}) {\n        {acc} = {acc} * {b};\n        {i} = {i} + 1;\n    }\n    return {acc};\n}\n",
        f_words: (&["pow", "power", "raise", "exp"], &["of", "to", "int", "by"]),
        g_words: NO_WORDS,
        consts: &[],
        args: &[Arg::Int(-3, 5), Arg::Int(0, 6)],
    },
    Template {
        name: "count_even",
        source: "fn {f}({arr}) {\n    let {acc} = 0;\n    let {i} = 0;\n    while ({i} < len({arr})) {\n        if ({arr}[{i}] % 2 == 0) {\n            {acc} = {acc} + 1;\n        }\n        {i} = {i} + 1;\n    }\n    return {acc};\n}\n",
        f_words: (&["count", "num", "tally", "even"], &["even", "evens", "pairs", "count"]),
        g_words: NO_WORDS,
        consts: &[],
        args: &[Arg::Arr { min_len: 0, max_len: 8, lo: 0, hi: 20 }],
    },
    Template {
        name: "dot",
        source: "fn {f}({a}, {b}) {\n    let {acc} = 0;\n    let {i} = 0;\n    while ({i} < len({a})) {\n        {acc} = {acc} + {a}[{i}] * {b}[{i}];\n        {i} = {i} + 1;\n    }\n    return {acc};\n}\n",
        f_words: (&["dot", "inner", "scalar", "mul"], &["product", "prod", "sum", "dot"]),
        g_words: NO_WORDS,
        consts: &[],
        args: &[Arg::Arr { min_len: 1, max_len: 6, lo: -5, hi: 9 }, Arg::SameLenArr(0, -5, 9)],
    },
    Template {
        name: "index_of",
        source: "fn {f}({arr}, {x}) {\n    let {i} = 0;\n    while ({i} < len({arr})) {\n        if ({arr}[{i}] == {x}) {\n            return {i};\n        }\n        {i} = {i} + 1;\n    }\n    return -1;\n}\n",
        f_words: (&["index", "find", "locate", "position"], &["of", "first", "idx", "pos"]),
        g_words: NO_WORDS,
        consts: &[],
        args: &[Arg::Arr { min_len: 0, max_len: 8, lo: 0, hi: 9 }, Arg::ElementOf(0, 0, 9)],
    },
    Template {
        name: "digit_sum",
        source: "fn {f}({n}) {\n    let {acc} = 0;\n    while ({n} > 0) {\n        {acc} = {acc} + {n} % {K1};\n        {n} = {n} / {K1};\n    }\n    return {acc};\n}\n",
        f_words: (&["digit", "digits", "sum", "cross"], &["sum", "total", "digits", "add"]),
        g_words: NO_WORDS,
        consts: &[("K1", &[10, 10, 10, 2, 8])],
        args: &[Arg::Int(0, 999)],
    },
    Template {
        name: "all_positive",
        source: "fn {f}({arr}) {\n    let {i} = 0;\n    while ({i} < len({arr})) {\n        if ({arr}[{i}] <= 0) {\n            return false;\n        }\n        {i} = {i} + 1;\n    }\n    return true;\n}\n",
        f_words: (&["all", "every", "check", "is"], &["positive", "pos", "valid", "natural"]),
        g_words: NO_WORDS,
        consts: &[],
        args: &[Arg::Arr { min_len: 0, max_len: 6, lo: -2, hi: 9 }],
    },
    Template {
        name: "sum_squares",
        source: "fn {g}({x}) {\n    return {x} * {x};\n}\n\nfn {f}({n}) {\n    let {acc} = 0;\n    let {i} = 1;\n    while ({i} <= {n}) {\n        {acc} = {acc} + {g}({i});\n        {i} = {i} + 1;\n    }\n    return {acc};\n}\n",
        f_words: (&["sum", "total", "add", "square"], &["squares", "sq", "sum", "all"]),
        g_words: (&["square", "sq", "sqr", "self"], &["of", "val", "mul", "it"]),
        consts: &[],
        args: &[Arg::Int(0, 10)],
    },
    Template {
        name: "count_below",
        source: "let {lim} = {K1};\n\nfn {f}({arr}) {\n    let {acc} = 0;\n    let {i} = 0;\n    while ({i} < len({arr})) {\n        if ({arr}[{i}] < {lim}) {\n            {acc} = {acc} + 1;\n        }\n        {i} = {i} + 1;\n    }\n    return {acc};\n}\n",
        f_words: (&["count", "num", "tally", "small"], &["below", "under", "small", "less"]),
        g_words: NO_WORDS,
        consts: &[("K1", &[3, 5, 7, 9, 11, 13, 15])],
        args: &[Arg::Arr { min_len: 0, max_len: 8, lo: 0, hi: 20 }],
    },
    Template {
        name: "reverse",
        source: "fn {f}({arr}) {\n    let {n} = len({arr});\n    let {out} = [0; {n}];\n    let {i} = 0;\n    while ({i} < {n}) {\n        {out}[{n} - 1 - {i}] = {arr}[{i}];\n        {i} = {i} + 1;\n    }\n    return {out};\n}\n",
        f_words: (&["reverse", "rev", "flip", "mirror"], &["array", "list", "copy", "all"]),
        g_words: NO_WORDS,
        consts: &[],
        args: &[Arg::Arr { min_len: 0, max_len: 7, lo: 0, hi: 9 }],
    },
    Template {
        name: "abs_diff",
        source: "fn {f}({a}, {b}) {\n    if ({a} > {b}) {\n        return {a} - {b};\n    }\n    return {b} - {a};\n}\n",
        f_words: (&["abs", "dist", "gap", "delta"], &["diff", "between", "apart", "dist"]),
        g_words: NO_WORDS,
        consts: &[],
        args: &[Arg::Int(-10, 10), Arg::Int(-10, 10)],
    },
    Template {
        name: "count_between",
        source: "fn {g}({x}, {lo}, {hi}) {\n    return {x} >= {lo} && {x} <= {hi};\n}\n\nfn {f}({arr}, {a}, {b}) {\n    let {acc} = 0;\n    let {i} = 0;\n    while ({i} < len({arr})) {\n        if ({g}({arr}[{i}], {a}, {b})) {\n            {acc} = {acc} + 1;\n        }\n        {i} = {i} + 1;\n    }\n    return {acc};\n}\n",
        f_words: (&["count", "num", "tally", "hits"], &["between", "within", "inside", "range"]),
        g_words: (&["in", "within", "inside", "between"], &["range", "bounds", "span"]),
        consts: &[],
        args: &[
            Arg::Arr { min_len: 0, max_len: 8, lo: 0, hi: 14 },
            Arg::Int(0, 5),
            Arg::Int(6, 12),
        ],
    },
    Template {
        name: "scaled_sum",
        source: "let {k} = {K1};\n\nfn {f}({arr}) {\n    let {acc} = 0;\n    let {i} = 0;\n    while ({i} < len({arr})) {\n        {acc} = {acc} + {arr}[{i}] * {k};\n        {i} = {i} + 1;\n    }\n    return {acc};\n}\n",
        f_words: (&["scaled", "weighted", "scale", "mul"], &["sum", "total", "all", "add"]),
        g_words: NO_WORDS,
        consts: &[("K1", &[2, 3, 4, 5, 7])],
        args: &[Arg::Arr { min_len: 0, max_len: 7, lo: -5, hi: 9 }],
    },
];

pub fn template_names() -> Vec<&'static str> {
    TEMPLATES.iter().map(|t| t.name).collect()
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
        None => String::new(),
    }
}

fn styled_name(
    rng: &mut impl Rng,
    words: (&[&str], &[&str]),
    plain_weight: f64,
) -> String {
    let w1 = *words.0.choose(rng).unwrap();
    let w2 = *words.1.choose(rng).unwrap_or(&"val");
    let r: f64 = rng.gen();
    let rest = (1.0 - plain_weight) / 3.0;
    if r < plain_weight || w1 == w2 {
        w1.to_string()
    } else if r < plain_weight + rest {
        format!("{w1}{}", capitalize(w2))
    } else if r < plain_weight + 2.0 * rest {
        format!("{w1}_{w2}")
    } else {
        format!("{w1}{w2}")
    }
}

struct Namer {
    used: HashSet<String>,
    assigned: BTreeMap<String, String>,
}

impl Namer {
    fn name(&mut self, rng: &mut impl Rng, key: &str, t: &Template) -> String {
        if let Some(n) = self.assigned.get(key) {
            return n.clone();
        }
        let (words, plain) = match key {
            "f" => (t.f_words, 0.1),
            "g" => (t.g_words, 0.1),
            "i" | "t" | "mid" => (role_words(key), 0.6),
            _ => (role_words(key), 0.4),
        };
        let mut name = String::new();
        for attempt in 0..30 {
            name = styled_name(rng, words, plain);
            if attempt >= 20 {
                name = format!("{name}{attempt}");
            }
            if !self.used.contains(&name) && !is_keyword(&name) && name != "len" {
                break;
            }
        }
        self.used.insert(name.clone());
        self.assigned.insert(key.to_string(), name.clone());
        name
    }
}

fn instantiate(t: &Template, rng: &mut impl Rng) -> (String, String) {
    let mut namer = Namer {
        used: HashSet::new(),
        assigned: BTreeMap::new(),
    };
    let consts: BTreeMap<&str, i64> = t
        .consts
        .iter()
        .map(|(k, vals)| (*k, *vals.choose(rng).unwrap()))
        .collect();
    let src = t.source;
    let mut out = String::new();
    let mut rest = src;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let key_len = after.find(|c: char| !c.is_ascii_alphanumeric()).unwrap_or(after.len());
        if key_len > 0 && after[key_len..].starts_with('}') {
            out.push_str(&rest[..open]);
            let key = &after[..key_len];
            match consts.get(key) {
                Some(v) => out.push_str(&v.to_string()),
                None => out.push_str(&namer.name(rng, key, t)),
            }
            rest = &after[key_len + 1..];
        } else {
            out.push_str(&rest[..=open]);
            rest = after;
        }
    }
    out.push_str(rest);
    let entry = namer.name(rng, "f", t);
    (out, entry)
}

fn gen_args(args: &[Arg], rng: &mut impl Rng) -> Vec<Value> {
    let mut out: Vec<Value> = Vec::new();
    for a in args {
        let v = match *a {
            Arg::Int(lo, hi) => Value::Int(rng.gen_range(lo..=hi)),
            Arg::Arr { min_len, max_len, lo, hi } => {
                let n = rng.gen_range(min_len..=max_len);
                Value::Array((0..n).map(|_| Value::Int(rng.gen_range(lo..=hi))).collect())
            }
            Arg::SortedArr { max_len, hi } => {
                let n = rng.gen_range(1..=max_len);
                let mut pool: Vec<i64> = (0..=hi).collect();
                pool.shuffle(rng);
                let mut v: Vec<i64> = pool.into_iter().take(n).collect();
                v.sort_unstable();
                Value::Array(v.into_iter().map(Value::Int).collect())
            }
            Arg::ElementOf(idx, lo, hi) => match &out[idx] {
                Value::Array(items) if !items.is_empty() && rng.gen_bool(0.5) => items.choose(rng).unwrap().clone(),
                _ => Value::Int(rng.gen_range(lo..=hi)),
            },
            Arg::SameLenArr(idx, lo, hi) => {
                let n = match &out[idx] {
                    Value::Array(items) => items.len(),
                    _ => 0,
                };
                Value::Array((0..n).map(|_| Value::Int(rng.gen_range(lo..=hi))).collect())
            }
        };
        out.push(v);
    }
    out
}

pub const TESTS_PER_PROGRAM: usize = 8;

fn build(t: &Template, rng: &mut impl Rng) -> GeneratedProgram {
    let (raw, entry) = instantiate(t, rng);
    let program = compile(&raw).unwrap_or_else(|e| panic!("template {} does not compile: {e}", t.name));
    let source = print_program(&program);
    let program = compile(&source).expect("printed program compiles");
    let mut tests = Vec::new();
    let mut seen = HashSet::new();
    let mut tries = 0;
    while tests.len() < TESTS_PER_PROGRAM && tries < 200 {
        tries += 1;
        let args = gen_args(t.args, rng);
        let key = format!("{args:?}");
        if !seen.insert(key) {
            continue;
        }
        // the reference implementation defines the expected value
        let probe = TestCase::new(&entry, args.clone(), Value::Int(i64::MIN));
        if let TestOutcome::Fail { actual, .. } = super::interp::run_test(&program, &probe, DEFAULT_STEP_BUDGET) {
            let expect: serde_json::Value = serde_json::from_str(&actual).expect("interpreter output is JSON");
            tests.push(TestCase {
                fn_name: entry.clone(),
                args: args.iter().map(Value::to_json).collect(),
                expect,
            });
        }
    }
    debug_assert!(tests.iter().all(|tc| run_test(&program, tc, DEFAULT_STEP_BUDGET).passed()));
    GeneratedProgram {
        template: t.name,
        source,
        program,
        tests,
        entry,
    }
}

/// One program from a uniformly chosen template.
pub fn generate_program(rng: &mut impl Rng) -> GeneratedProgram {
    let t = &TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
    build(t, rng)
}

/// One program from a named template.
pub fn generate_from(template: &str, rng: &mut impl Rng) -> Option<GeneratedProgram> {
    TEMPLATES.iter().find(|t| t.name == template).map(|t| build(t, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_template_compiles_and_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for name in template_names() {
            for _ in 0..5 {
                let g = generate_from(name, &mut rng).unwrap();
                assert!(g.tests.len() >= 4, "{name}: {} tests", g.tests.len());
                let out = crate::lang::run_tests(&g.program, &g.tests, DEFAULT_STEP_BUDGET);
                assert!(out.iter().all(|o| o.passed()), "{name}");
            }
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let a = generate_program(&mut ChaCha8Rng::seed_from_u64(4));
        let b = generate_program(&mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a.source, b.source);
        assert_eq!(a.tests, b.tests);
    }
}
