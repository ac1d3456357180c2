use std::collections::HashMap;

use super::word::{TokenSeq, SPECIALS, UNK};
use super::TokenizerError;

/// Dense token <-> id table. Special tokens always occupy the first ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn with_specials() -> Self {
        let mut v = Vocab::default();
        for s in SPECIALS {
            v.add(s);
        }
        v
    }

    /// Adds `tok` if absent; returns its id either way.
    pub fn add(&mut self, tok: &str) -> usize {
        if let Some(&id) = self.index.get(tok) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(tok.to_string());
        self.index.insert(tok.to_string(), id);
        id
    }

    pub fn id(&self, tok: &str) -> Option<usize> {
        self.index.get(tok).copied()
    }

    pub fn id_or_unk(&self, tok: &str) -> usize {
        self.id(tok)
            .or_else(|| self.id(UNK))
            .expect("vocab has an unknown-token entry")
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn contains(&self, tok: &str) -> bool {
        self.index.contains_key(tok)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Word-level vocabulary: specials plus every token in the corpus,
    /// in first-seen order.
    pub fn word_level<'a>(corpus: impl IntoIterator<Item = &'a TokenSeq>) -> Self {
        let mut v = Vocab::with_specials();
        for seq in corpus {
            for t in &seq.tokens {
                v.add(t);
            }
        }
        v
    }

    /// `token<TAB>id` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            s.push_str(t);
            s.push('\t');
            s.push_str(&i.to_string());
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        let mut v = Vocab::default();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| TokenizerError::Format(format!("vocab line {}: missing tab", n + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|_| TokenizerError::Format(format!("vocab line {}: bad id", n + 1)))?;
            if id != v.len() {
                return Err(TokenizerError::Format(format!("vocab line {}: ids must be dense", n + 1)));
            }
            v.add(tok);
        }
        Ok(v)
    }
}
