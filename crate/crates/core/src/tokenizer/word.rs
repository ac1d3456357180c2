use serde::{Deserialize, Serialize};

use crate::lang::lexer::{is_keyword, lex_lenient, TokKind};
use crate::lang::spacing::join_tokens;

pub const CAMEL: &str = "CaMeL";
pub const NUM: &str = "<NUM>";
pub const STR: &str = "<STR>";
pub const EOS: &str = "<EOS>";
pub const BOS: &str = "<BOS>";
pub const UNK: &str = "<UNK>";
pub const SEP: &str = "<SEP>";
pub const SPECIALS: [&str; 4] = [EOS, BOS, UNK, SEP];
pub const CONTINUATION: &str = "@@";

/// Token strings plus the original text of each abstracted literal, in order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
    pub donor_refs: Vec<String>,
}

impl TokenSeq {
    pub fn new(tokens: Vec<String>) -> Self {
        Self {
            tokens,
            donor_refs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn is_placeholder(tok: &str) -> bool {
    tok == NUM || tok == STR
}

/// A piece that can be part of an identifier run: `_`, the camel marker, or
/// an alphanumeric piece starting with a letter that is not a keyword.
pub fn is_identifier_piece(tok: &str) -> bool {
    tok == "_"
        || tok == CAMEL
        || (tok.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
            && tok.chars().all(|c| c.is_ascii_alphanumeric())
            && !is_keyword(tok))
}

/// Connectors glue the neighbouring pieces of one identifier together.
pub fn is_connector(tok: &str) -> bool {
    tok == "_" || tok == CAMEL
}

/// Splits an identifier into pieces: `_` is kept as its own token, and camel
/// boundaries get a marker token between the parts.
pub fn split_identifier(ident: &str) -> Vec<String> {
    let mut out = Vec::new();
    for (i, seg) in ident.split('_').enumerate() {
        if i > 0 {
            out.push("_".to_string());
        }
        if seg.is_empty() {
            continue;
        }
        for (j, part) in split_camel(seg).into_iter().enumerate() {
            if j > 0 {
                out.push(CAMEL.to_string());
            }
            out.push(part);
        }
    }
    out
}

fn split_camel(s: &str) -> Vec<String> {
    let chars: Vec<char> = s.chars().collect();
    let mut parts = Vec::new();
    let mut start = 0;
    for i in 1..chars.len() {
        let prev = chars[i - 1];
        let cur = chars[i];
        let lower_to_upper = (prev.is_ascii_lowercase() || prev.is_ascii_digit()) && cur.is_ascii_uppercase();
        let acronym_end = prev.is_ascii_uppercase()
            && cur.is_ascii_uppercase()
            && chars.get(i + 1).is_some_and(|c| c.is_ascii_lowercase());
        if lower_to_upper || acronym_end {
            parts.push(chars[start..i].iter().collect());
            start = i;
        }
    }
    parts.push(chars[start..].iter().collect());
    parts
}

/// Word-level tokenization of one source line (or several; comments dropped).
pub fn word_tokenize(line: &str) -> TokenSeq {
    let mut seq = TokenSeq::default();
    for t in lex_lenient(line) {
        match t.kind {
            TokKind::Ident => seq.tokens.extend(split_identifier(&t.text)),
            TokKind::Int if t.text == "0" || t.text == "1" => seq.tokens.push(t.text),
            TokKind::Int => {
                seq.tokens.push(NUM.to_string());
                seq.donor_refs.push(t.text);
            }
            TokKind::Str => {
                seq.tokens.push(STR.to_string());
                seq.donor_refs.push(t.text);
            }
            TokKind::Keyword | TokKind::Punct | TokKind::Other => seq.tokens.push(t.text),
        }
    }
    seq
}

fn is_identifier_text(s: &str) -> bool {
    s.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Rejoins identifier pieces into lexical tokens: connectors attach to their
/// neighbours and the camel marker itself disappears.
pub fn join_pieces<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut glue_next = false;
    for tok in tokens {
        let tok = tok.as_ref();
        let attach_left = is_connector(tok) && out.last().is_some_and(|p| is_identifier_text(p));
        if tok == CAMEL {
            glue_next = attach_left || glue_next;
            continue;
        }
        if tok == "_" {
            if attach_left || glue_next {
                out.last_mut().unwrap().push('_');
            } else {
                out.push("_".to_string());
            }
            glue_next = true;
            continue;
        }
        if glue_next && tok.chars().all(|c| c.is_ascii_alphanumeric()) && !out.is_empty() {
            out.last_mut().unwrap().push_str(tok);
        } else {
            out.push(tok.to_string());
        }
        glue_next = false;
    }
    out
}

/// Inverse of [`word_tokenize`] using the sequence's own donor refs.
pub fn detokenize_with_refs(seq: &TokenSeq) -> String {
    let mut refs = seq.donor_refs.iter();
    let filled: Vec<String> = join_pieces(&seq.tokens)
        .into_iter()
        .map(|t| {
            if is_placeholder(&t) {
                refs.next().cloned().unwrap_or(t)
            } else {
                t
            }
        })
        .collect();
    join_tokens(&filled)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        word_tokenize(s).tokens
    }

    #[test]
    fn underscore_and_camel() {
        assert_eq!(toks("max_ending_here"), ["max", "_", "ending", "_", "here"]);
        assert_eq!(toks("maxEndingHere"), ["max", CAMEL, "Ending", CAMEL, "Here"]);
        assert_eq!(toks("parseHTTPResponse"), ["parse", CAMEL, "HTTP", CAMEL, "Response"]);
        assert_eq!(toks("x2"), ["x2"]);
    }

    #[test]
    fn literals() {
        assert_eq!(toks("i = 0;"), ["i", "=", "0", ";"]);
        let s = word_tokenize("x = 42;");
        assert_eq!(s.tokens, ["x", "=", NUM, ";"]);
        assert_eq!(s.donor_refs, ["42"]);
        assert_eq!(detokenize_with_refs(&s), "x = 42;");
        let s = word_tokenize("let s = \"a b\"; // note");
        assert_eq!(s.tokens, ["let", "s", "=", STR, ";"]);
        assert_eq!(detokenize_with_refs(&s), "let s = \"a b\";");
    }

    #[test]
    fn join_rebuilds_identifiers() {
        let t = ["max", "_", "ending", "_", "here", "=", "0"];
        assert_eq!(join_tokens(&join_pieces(&t)), "max_ending_here = 0");
        let t = ["let", "sum", CAMEL, "Total", "=", "a", "__", "b"];
        assert_eq!(join_pieces(&t)[1], "sumTotal");
        assert_eq!(
            detokenize_with_refs(&word_tokenize("return my__x_1 + foo_;")),
            "return my__x_1 + foo_;"
        );
    }
}
