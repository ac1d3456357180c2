use std::collections::{BTreeSet, HashMap};

use super::vocab::Vocab;
use super::word::{TokenSeq, CONTINUATION};
use super::TokenizerError;
use crate::lang::lexer::KEYWORDS;

const END_OF_WORD: &str = "</w>";
const BASE_ATOMICS: &[&str] = &[
    "==", "!=", "<=", ">=", "&&", "||", "+", "-", "*", "/", "%", "<", ">", "=", "!", "(", ")", "{", "}", "[",
    "]", ",", ";", "_", super::word::CAMEL, super::word::NUM, super::word::STR,
];

/// Words made only of ASCII alphanumerics are segmented; everything else
/// (operators, markers, placeholders) is an atomic symbol.
pub fn is_segmentable(tok: &str) -> bool {
    !tok.is_empty() && tok != super::word::CAMEL && tok.chars().all(|c| c.is_ascii_alphanumeric())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    vocab: Vocab,
    alphabet: BTreeSet<char>,
}

fn symbol_token(sym: &str) -> String {
    match sym.strip_suffix(END_OF_WORD) {
        Some(s) => s.to_string(),
        None => format!("{sym}{CONTINUATION}"),
    }
}

fn word_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == chars.len() {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

/// Learns merges greedily by pair frequency, ties broken by the
/// lexicographically smallest pair, until the vocabulary reaches
/// `target_vocab` or no pair occurs at least twice.
pub fn train_bpe(corpus: &[TokenSeq], target_vocab: usize) -> Result<BpeModel, TokenizerError> {
    if corpus.iter().all(|s| s.tokens.is_empty()) {
        return Err(TokenizerError::EmptyCorpus);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut atomics: BTreeSet<&str> = BASE_ATOMICS.iter().copied().collect();
    for seq in corpus {
        for t in &seq.tokens {
            if is_segmentable(t) {
                *counts.entry(t.as_str()).or_default() += 1;
            } else if !super::word::SPECIALS.contains(&t.as_str()) {
                atomics.insert(t.as_str());
            }
        }
    }
    let mut alphabet: BTreeSet<char> = counts.keys().flat_map(|w| w.chars()).collect();
    // every MiniLang identifier character is representable, seen or not
    alphabet.extend(('a'..='z').chain('A'..='Z').chain('0'..='9'));
    alphabet.extend(KEYWORDS.iter().flat_map(|k| k.chars()));
    let mut vocab = Vocab::with_specials();
    for a in &atomics {
        vocab.add(a);
    }
    for c in &alphabet {
        vocab.add(&format!("{c}{CONTINUATION}"));
        vocab.add(&c.to_string());
    }

    let mut words: Vec<(Vec<String>, usize)> = {
        let mut w: Vec<(&str, usize)> = counts.into_iter().collect();
        w.sort();
        w.into_iter().map(|(w, c)| (word_symbols(w), c)).collect()
    };
    let mut merges = Vec::new();
    while vocab.len() < target_vocab {
        let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
        for (syms, c) in &words {
            for p in syms.windows(2) {
                *pairs.entry((p[0].as_str(), p[1].as_str())).or_default() += c;
            }
        }
        let best = pairs
            .into_iter()
            .filter(|(_, c)| *c >= 2)
            .min_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let Some(((l, r), _)) = best else { break };
        let (l, r) = (l.to_string(), r.to_string());
        let merged = format!("{l}{r}");
        for (syms, _) in words.iter_mut() {
            merge_in_place(syms, &l, &r, &merged);
        }
        vocab.add(&symbol_token(&merged));
        merges.push((l, r));
    }
    Ok(BpeModel::from_parts(merges, vocab))
}

fn merge_in_place(syms: &mut Vec<String>, l: &str, r: &str, merged: &str) {
    let mut i = 0;
    while i + 1 < syms.len() {
        if syms[i] == l && syms[i + 1] == r {
            syms[i] = merged.to_string();
            syms.remove(i + 1);
        }
        i += 1;
    }
}

impl BpeModel {
    pub fn from_parts(merges: Vec<(String, String)>, vocab: Vocab) -> Self {
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        let alphabet = vocab
            .tokens()
            .iter()
            .filter_map(|t| {
                let mut cs = t.chars();
                match (cs.next(), cs.next()) {
                    (Some(c), None) if c.is_ascii_alphanumeric() => Some(c),
                    _ => None,
                }
            })
            .collect();
        Self {
            merges,
            ranks,
            vocab,
            alphabet,
        }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn alphabet(&self) -> &BTreeSet<char> {
        &self.alphabet
    }

    /// Segments one word into subword tokens (`@@` on all but the last).
    pub fn encode_word(&self, word: &str) -> Result<Vec<String>, TokenizerError> {
        if let Some(c) = word.chars().find(|c| !self.alphabet.contains(c)) {
            return Err(TokenizerError::Alphabet(c.to_string()));
        }
        let mut syms = word_symbols(word);
        loop {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, p)| self.ranks.get(&(p[0].clone(), p[1].clone())).map(|r| (*r, i)))
                .min();
            let Some((rank, _)) = best else { break };
            let (l, r) = &self.merges[rank];
            let merged = format!("{l}{r}");
            merge_in_place(&mut syms, l, r, &merged);
        }
        Ok(syms.iter().map(|s| symbol_token(s)).collect())
    }

    pub fn merges_text(&self) -> String {
        let mut s = String::new();
        for (l, r) in &self.merges {
            s.push_str(l);
            s.push(' ');
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    pub fn from_files_text(vocab_text: &str, merges_text: &str) -> Result<Self, TokenizerError> {
        let vocab = Vocab::from_text(vocab_text)?;
        let mut merges = Vec::new();
        for (n, line) in merges_text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (l, r) = line
                .split_once(' ')
                .ok_or_else(|| TokenizerError::Format(format!("merges line {}: expected two symbols", n + 1)))?;
            merges.push((l.to_string(), r.to_string()));
        }
        Ok(Self::from_parts(merges, vocab))
    }
}

pub fn bpe_encode(seq: &TokenSeq, model: &BpeModel) -> Result<TokenSeq, TokenizerError> {
    let mut out = TokenSeq {
        tokens: Vec::with_capacity(seq.tokens.len()),
        donor_refs: seq.donor_refs.clone(),
    };
    for t in &seq.tokens {
        if is_segmentable(t) {
            out.tokens.extend(model.encode_word(t)?);
        } else if model.vocab.contains(t) {
            out.tokens.push(t.clone());
        } else {
            return Err(TokenizerError::Alphabet(t.clone()));
        }
    }
    Ok(out)
}

/// Joins every `@@`-suffixed token with its successor.
pub fn bpe_decode(seq: &TokenSeq) -> Result<TokenSeq, TokenizerError> {
    let mut out = TokenSeq {
        tokens: Vec::with_capacity(seq.tokens.len()),
        donor_refs: seq.donor_refs.clone(),
    };
    let mut pending = String::new();
    for t in &seq.tokens {
        match t.strip_suffix(CONTINUATION) {
            Some(head) if !head.is_empty() => pending.push_str(head),
            _ => {
                pending.push_str(t);
                out.tokens.push(std::mem::take(&mut pending));
            }
        }
    }
    if !pending.is_empty() {
        return Err(TokenizerError::DanglingContinuation);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> TokenSeq {
        TokenSeq::new(s.split_whitespace().map(str::to_string).collect())
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        let m = train_bpe(&[seq("ab ab ab c")], 1000).unwrap();
        assert_eq!(m.merges()[0], ("a".to_string(), "b</w>".to_string()));
        // only one pair ever occurs twice
        assert_eq!(m.merges().len(), 1);
    }

    #[test]
    fn ties_break_lexicographically() {
        let m = train_bpe(&[seq("xy xy ab ab")], 1000).unwrap();
        assert_eq!(m.merges()[0].0, "a");
    }

    #[test]
    fn no_merges_is_identity_segmentation() {
        let base = train_bpe(&[seq("abc abc")], 0).unwrap();
        let n = base.vocab().len();
        let m = train_bpe(&[seq("abc abc")], n).unwrap();
        assert!(m.merges().is_empty());
        assert_eq!(m.encode_word("cab").unwrap(), ["c@@", "a@@", "b"]);
    }

    #[test]
    fn decode_contract() {
        assert_eq!(bpe_decode(&seq("char@@ no")).unwrap().tokens, ["charno"]);
        assert_eq!(bpe_decode(&seq("a")).unwrap().tokens, ["a"]);
        assert!(matches!(bpe_decode(&seq("x@@")), Err(TokenizerError::DanglingContinuation)));
    }

    #[test]
    fn alphabet_errors() {
        let m = train_bpe(&[seq("ab ab")], 100).unwrap();
        assert!(matches!(m.encode_word("aé"), Err(TokenizerError::Alphabet(_))));
        assert!(bpe_encode(&seq("$"), &m).is_err());
        assert!(bpe_encode(&seq("a == b"), &m).is_ok());
    }
}
