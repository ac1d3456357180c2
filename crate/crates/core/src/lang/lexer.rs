use super::LangError;

pub const KEYWORDS: &[&str] = &["fn", "let", "if", "else", "while", "return", "true", "false"];

/// Multi-character operators first so that maximal munch works by prefix test.
const PUNCT: &[&str] = &[
    "==", "!=", "<=", ">=", "&&", "||", "+", "-", "*", "/", "%", "<", ">", "=", "!", "(", ")", "{", "}",
    "[", "]", ",", ";",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokKind {
    Ident,
    Keyword,
    Int,
    Str,
    Punct,
    /// Anything the strict lexer would reject; only produced in lenient mode.
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokKind,
    pub text: String,
    /// 1-based line and column of the first character.
    pub line: usize,
    pub col: usize,
}

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

pub fn is_operator(s: &str) -> bool {
    PUNCT.contains(&s)
}

/// Strict lexer: rejects unknown characters, unterminated strings and
/// integer literals that overflow `i64`.
pub fn lex(source: &str) -> Result<Vec<Token>, LangError> {
    lex_impl(source, false)
}

/// Total lexer used by the tokenizer: malformed input degrades to `Other`
/// tokens instead of failing.
pub fn lex_lenient(source: &str) -> Vec<Token> {
    lex_impl(source, true).unwrap_or_default()
}

fn lex_impl(source: &str, lenient: bool) -> Result<Vec<Token>, LangError> {
    let chars: Vec<char> = source.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let start_col = col;
        if c.is_ascii_alphabetic() || (lenient && c == '_') {
            let s = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let text: String = chars[s..i].iter().collect();
            col += i - s;
            let kind = if is_keyword(&text) {
                TokKind::Keyword
            } else {
                TokKind::Ident
            };
            out.push(Token {
                kind,
                text,
                line,
                col: start_col,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let s = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let text: String = chars[s..i].iter().collect();
            col += i - s;
            if !lenient && text.parse::<i64>().is_err() {
                return Err(LangError::Syntax {
                    line,
                    col: start_col,
                    message: format!("integer literal `{text}` out of range"),
                });
            }
            out.push(Token {
                kind: TokKind::Int,
                text,
                line,
                col: start_col,
            });
            continue;
        }
        if c == '"' {
            let s = i;
            i += 1;
            let mut closed = false;
            while i < chars.len() && chars[i] != '\n' {
                if chars[i] == '\\' && i + 1 < chars.len() && chars[i + 1] != '\n' {
                    i += 2;
                    continue;
                }
                if chars[i] == '"' {
                    i += 1;
                    closed = true;
                    break;
                }
                i += 1;
            }
            if !closed && !lenient {
                return Err(LangError::Syntax {
                    line,
                    col: start_col,
                    message: "unterminated string literal".into(),
                });
            }
            let text: String = chars[s..i].iter().collect();
            col += i - s;
            out.push(Token {
                kind: TokKind::Str,
                text,
                line,
                col: start_col,
            });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        if let Some(p) = PUNCT.iter().find(|p| rest.starts_with(**p)) {
            i += p.len();
            col += p.len();
            out.push(Token {
                kind: TokKind::Punct,
                text: (*p).to_string(),
                line,
                col: start_col,
            });
            continue;
        }
        if !lenient {
            return Err(LangError::Syntax {
                line,
                col,
                message: format!("unexpected character `{c}`"),
            });
        }
        i += 1;
        col += 1;
        out.push(Token {
            kind: TokKind::Other,
            text: c.to_string(),
            line,
            col: start_col,
        });
    }
    Ok(out)
}
