//! MiniLang: a small statically scoped imperative language used as the repair
//! target. One statement per line; a line is the unit a patch replaces.

pub mod adapter;
pub mod ast;
pub mod generate;
pub mod interp;
pub mod lexer;
pub mod mutate;
pub mod parser;
pub mod printer;
pub mod resolve;
pub mod spacing;

use thiserror::Error;

pub use ast::Program;
pub use interp::{run_tests, TestCase, TestOutcome, Value, DEFAULT_STEP_BUDGET};
pub use mutate::{seed_bug, BugInstance, MutationKind};
pub use parser::parse;
pub use printer::print_program;
pub use resolve::{compile, scope_identifiers, IdentifierSet};

pub const SOURCE_EXTENSION: &str = "ml0";
pub const DEFAULT_MAX_METHOD_TOKENS: usize = 1024;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LangError {
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("resolution error on line {line}: {message}")]
    Resolve { line: usize, message: String },
    #[error("line {0} is not inside any function")]
    LineOutOfRange(usize),
    #[error("no mutation produced a failing program")]
    NoViableMutant,
    #[error("original program fails its own tests")]
    OriginalFails,
}

/// Text of each function whose word-level token count is at most
/// `max_tokens`, in source order.
pub fn extract_methods(source: &str, max_tokens: usize) -> Result<Vec<String>, LangError> {
    let program = parse(source)?;
    let lines: Vec<&str> = source.lines().collect();
    let mut out = Vec::new();
    for f in program.functions() {
        let text = lines[f.start_line() - 1..f.end_line()].join("\n");
        let n = crate::tokenizer::word_tokenize(&text).tokens.len();
        if n <= max_tokens {
            out.push(text);
        }
    }
    Ok(out)
}

/// 1-based line of `source`, without its trailing newline.
pub fn source_line(source: &str, line: usize) -> Option<&str> {
    source.lines().nth(line.checked_sub(1)?)
}

/// Replaces one line, keeping its indentation.
pub fn replace_line(source: &str, line: usize, new_text: &str) -> Option<String> {
    let mut lines: Vec<String> = source.lines().map(str::to_string).collect();
    let slot = lines.get_mut(line.checked_sub(1)?)?;
    let indent: String = slot.chars().take_while(|c| c.is_whitespace()).collect();
    *slot = format!("{indent}{}", new_text.trim());
    let mut s = lines.join("\n");
    if source.ends_with('\n') {
        s.push('\n');
    }
    Some(s)
}
