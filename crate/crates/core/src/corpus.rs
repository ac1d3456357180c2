//! Training data: PL-model method corpus, patch examples, splits and the
//! length-difference distribution used by length control.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::BugInstance;
use crate::tokenizer::{word_tokenize, Codec, TokenSeq, TokenizerError};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CorpusError {
    #[error("buggy line not found in context")]
    SpanNotFound,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error("malformed patch record: {0}")]
    Format(String),
}

/// Raw patch record as stored on disk: the method text, the buggy lines
/// within it (1-based, inclusive) and the fixed text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub context: String,
    pub buggy_start_line: usize,
    pub buggy_end_line: usize,
    pub fix: String,
}

impl PatchRecord {
    pub fn from_bug(bug: &BugInstance) -> Self {
        let f = bug
            .program
            .function_at_line(bug.buggy_line)
            .expect("buggy line lies in a function");
        let lines: Vec<&str> = bug.source.lines().collect();
        let context = lines[f.start_line() - 1..f.end_line()].join("\n");
        let rel = bug.buggy_line - f.start_line() + 1;
        Self {
            context,
            buggy_start_line: rel,
            buggy_end_line: rel,
            fix: bug.original_line.clone(),
        }
    }

    pub fn buggy_text(&self) -> String {
        self.context
            .lines()
            .skip(self.buggy_start_line.saturating_sub(1))
            .take(self.buggy_end_line + 1 - self.buggy_start_line)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub fn write_records(records: &[PatchRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn read_records(text: &str) -> Result<Vec<PatchRecord>, CorpusError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CorpusError::Format(e.to_string())))
        .collect()
}

/// One training or inference instance. `buggy_span` is 1-based inclusive
/// into `context`; position 0 of the model input is the begin marker, so
/// the decoder start token `y0` sits at index `b1 - 1` of that input.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchExample {
    pub context: TokenSeq,
    pub context_ids: Vec<usize>,
    pub buggy_span: (usize, usize),
    pub fix: TokenSeq,
    pub fix_ids: Vec<usize>,
}

impl PatchExample {
    pub fn c_n(&self) -> usize {
        self.context_ids.len()
    }

    pub fn f_n(&self) -> usize {
        self.fix_ids.len()
    }

    /// Buggy length `l_b` in model tokens.
    pub fn buggy_len(&self) -> usize {
        self.buggy_span.1 + 1 - self.buggy_span.0
    }

    pub fn y0_index(&self) -> usize {
        self.buggy_span.0 - 1
    }

    /// 0-based half-open range of the buggy tokens in `context_ids`.
    pub fn span_range(&self) -> std::ops::Range<usize> {
        self.buggy_span.0 - 1..self.buggy_span.1
    }

    pub fn buggy_ids(&self) -> &[usize] {
        &self.context_ids[self.span_range()]
    }
}

/// Locates `needle` as a contiguous token run of `hay` (first occurrence).
pub fn find_span(hay: &[String], needle: &[String]) -> Result<(usize, usize), CorpusError> {
    if needle.is_empty() || needle.len() > hay.len() {
        return Err(CorpusError::SpanNotFound);
    }
    (0..=hay.len() - needle.len())
        .find(|&i| hay[i..i + needle.len()] == *needle)
        .map(|i| (i + 1, i + needle.len()))
        .ok_or(CorpusError::SpanNotFound)
}

/// Encodes one record. The context is tokenized line by line so the buggy
/// span is known exactly even when the same text occurs twice.
pub fn build_example(record: &PatchRecord, codec: &Codec) -> Result<PatchExample, CorpusError> {
    let lines: Vec<&str> = record.context.lines().collect();
    let (s, e) = (record.buggy_start_line, record.buggy_end_line);
    if s == 0 || e < s || e > lines.len() {
        return Err(CorpusError::SpanNotFound);
    }
    let mut context = TokenSeq::default();
    let mut span = (0, 0);
    for (i, line) in lines.iter().enumerate() {
        let enc = codec.encode(&word_tokenize(line))?;
        if i + 1 == s {
            span.0 = context.tokens.len() + 1;
        }
        context.tokens.extend(enc.tokens);
        context.donor_refs.extend(enc.donor_refs);
        if i + 1 == e {
            span.1 = context.tokens.len();
        }
    }
    if span.1 < span.0 {
        return Err(CorpusError::SpanNotFound);
    }
    let fix = codec.encode(&word_tokenize(&record.fix))?;
    if fix.is_empty() {
        return Err(CorpusError::Format("empty fix".into()));
    }
    Ok(PatchExample {
        context_ids: codec.ids(&context),
        context,
        buggy_span: span,
        fix_ids: codec.ids(&fix),
        fix,
    })
}

/// Encodes all records, dropping those whose context or fix exceeds
/// `max_tokens` model tokens.
pub fn build_patch_dataset(
    records: &[PatchRecord],
    codec: &Codec,
    max_tokens: usize,
) -> Result<Vec<PatchExample>, CorpusError> {
    let mut out = Vec::new();
    for r in records {
        let ex = build_example(r, codec)?;
        if ex.c_n() <= max_tokens && ex.f_n() <= max_tokens {
            out.push(ex);
        }
    }
    Ok(out)
}

/// Empirical log-probability of `l_b - l_p` over a patch corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthModel {
    pub table: BTreeMap<i64, f64>,
    pub floor_logp: f64,
}

impl LengthModel {
    pub fn f_len(&self, d: i64) -> f64 {
        self.table.get(&d).copied().unwrap_or(self.floor_logp)
    }

    pub fn from_diffs(diffs: &[i64]) -> Result<Self, CorpusError> {
        if diffs.is_empty() {
            return Err(CorpusError::EmptyDataset);
        }
        let n = diffs.len() as f64;
        let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
        for d in diffs {
            *counts.entry(*d).or_default() += 1;
        }
        Ok(Self {
            table: counts.into_iter().map(|(d, c)| (d, (c as f64 / n).ln())).collect(),
            floor_logp: (0.5 / n).ln(),
        })
    }
}

pub fn length_diff_distribution(dataset: &[PatchExample]) -> Result<LengthModel, CorpusError> {
    let diffs: Vec<i64> = dataset
        .iter()
        .map(|e| e.buggy_len() as i64 - e.f_n() as i64)
        .collect();
    LengthModel::from_diffs(&diffs)
}

/// Seeded disjoint split; the validation part has `round(fraction * n)` items.
pub fn split<T: Clone>(dataset: &[T], validation_fraction: f64, rng_seed: u64) -> (Vec<T>, Vec<T>) {
    let n = dataset.len();
    let n_val = ((n as f64) * validation_fraction).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let mut is_val = vec![false; n];
    for &i in &idx[..n_val.min(n)] {
        is_val[i] = true;
    }
    let mut train = Vec::with_capacity(n - n_val);
    let mut val = Vec::with_capacity(n_val);
    for (i, item) in dataset.iter().enumerate() {
        if is_val[i] {
            val.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    (train, val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Vocab;

    fn word_codec(text: &str) -> Codec {
        Codec::Word(Vocab::word_level([&word_tokenize(text)]))
    }

    #[test]
    fn span_is_exact() {
        let ctx = "fn f(a) {\n    let x = a;\n    return x;\n}";
        let rec = PatchRecord {
            context: ctx.into(),
            buggy_start_line: 3,
            buggy_end_line: 3,
            fix: "return a;".into(),
        };
        let ex = build_example(&rec, &word_codec(ctx)).unwrap();
        assert_eq!(ex.buggy_span, (12, 14));
        assert_eq!(ex.context.tokens[ex.span_range()], ["return", "x", ";"]);
        assert_eq!(ex.context.tokens[ex.y0_index() - 1], ";");
        assert_eq!(ex.f_n(), 3);
    }

    #[test]
    fn span_errors() {
        let hay: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(find_span(&hay, &hay[1..]).unwrap(), (2, 3));
        assert_eq!(find_span(&hay, &["z".to_string()]), Err(CorpusError::SpanNotFound));
        let rec = PatchRecord {
            context: "fn f() {\n}".into(),
            buggy_start_line: 5,
            buggy_end_line: 5,
            fix: "x".into(),
        };
        assert_eq!(build_example(&rec, &word_codec("fn")), Err(CorpusError::SpanNotFound));
    }

    #[test]
    fn length_model_hand_count() {
        let lm = LengthModel::from_diffs(&[0, 0, 3, -2]).unwrap();
        assert!((lm.f_len(0) - 0.5f64.ln()).abs() < 1e-12);
        assert!((lm.f_len(3) - 0.25f64.ln()).abs() < 1e-12);
        assert!((lm.f_len(-2) - 0.25f64.ln()).abs() < 1e-12);
        assert_eq!(lm.f_len(40), (0.5f64 / 4.0).ln());
        assert!(LengthModel::from_diffs(&[]).is_err());
    }

    #[test]
    fn split_sizes() {
        let data: Vec<usize> = (0..100).collect();
        let (t, v) = split(&data, 0.1, 3);
        assert_eq!((t.len(), v.len()), (90, 10));
        assert_eq!(split(&data, 0.1, 3), (t, v));
    }
}
