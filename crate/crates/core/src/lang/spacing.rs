//! Canonical token spacing. The pretty-printer and the detokenizer both go
//! through [`join_tokens`], so a line printed from an AST and a line rebuilt
//! from its tokens are byte-identical.

use super::lexer::is_keyword;

fn is_word(t: &str) -> bool {
    t.chars().next().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn is_placeholder(t: &str) -> bool {
    t.len() > 2 && t.starts_with('<') && t.ends_with('>')
}

fn is_name(t: &str) -> bool {
    (is_word(t) && !is_keyword(t) && !t.chars().next().unwrap().is_ascii_digit()) || is_placeholder(t)
}

/// Tokens after which a `-` is binary.
fn ends_operand(t: &str) -> bool {
    t == ")"
        || t == "]"
        || t == "true"
        || t == "false"
        || t.starts_with('"')
        || is_placeholder(t)
        || (is_word(t) && !is_keyword(t))
}

pub fn join_tokens<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, tok) in tokens.iter().enumerate() {
        let cur = tok.as_ref();
        if i > 0 && needs_space(tokens, i) {
            out.push(' ');
        }
        out.push_str(cur);
    }
    out
}

fn needs_space<S: AsRef<str>>(tokens: &[S], i: usize) -> bool {
    let cur = tokens[i].as_ref();
    let prev = tokens[i - 1].as_ref();
    if matches!(cur, "," | ";" | ")" | "]") {
        return false;
    }
    if matches!(prev, "(" | "[" | "!") {
        return false;
    }
    if prev == "-" {
        let unary = i < 2 || !ends_operand(tokens[i - 2].as_ref());
        if unary {
            return false;
        }
    }
    match cur {
        "(" => !is_name(prev),
        "[" => !(is_name(prev) || prev == "]" || prev == ")"),
        _ => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn j(s: &str) -> String {
        join_tokens(&s.split(' ').collect::<Vec<_>>())
    }

    #[test]
    fn canonical_forms() {
        assert_eq!(j("fn f ( a , b ) {"), "fn f(a, b) {");
        assert_eq!(j("if ( a < - b ) {"), "if (a < -b) {");
        assert_eq!(j("x = a - - 1 ;"), "x = a - -1;");
        assert_eq!(j("return - x ;"), "return -x;");
        assert_eq!(j("let a = [ 0 ; n ] ;"), "let a = [0; n];");
        assert_eq!(j("a [ i ] = f ( x ) [ 0 ] ;"), "a[i] = f(x)[0];");
        assert_eq!(j("} else if ( ! done ) {"), "} else if (!done) {");
        assert_eq!(j("return <NUM> - <NUM> ;"), "return <NUM> - <NUM>;");
        assert_eq!(j("x = ( a + b ) * c ;"), "x = (a + b) * c;");
    }
}
