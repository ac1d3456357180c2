//! Code-aware beam search over a step-wise scorer.
//!
//! Identifier masking works on word-level pieces: subword tokens ending in
//! `@@` are grouped back into words before the prefix lookup.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LengthModel;
use crate::infer::{AprScorer, DecodeState};
use crate::lang::lexer::{is_keyword, KEYWORDS};
use crate::lang::IdentifierSet;
use crate::plm::{ModelError, EOS_ID};
use crate::tokenizer::word::{is_identifier_piece, split_identifier, BOS, CONTINUATION, SEP, UNK};
use crate::tokenizer::Vocab;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("identifier prefix {0:?} is not in the prefix map")]
    PrefixUnknown(Vec<String>),
    #[error("every search path was masked before any hypothesis terminated")]
    NoCandidates,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = SearchError> = std::result::Result<T, E>;

/// Valid next identifier pieces for every proper prefix of every in-scope
/// identifier, plus the set of complete identifiers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PrefixMap {
    next: BTreeMap<Vec<String>, BTreeSet<String>>,
    complete: BTreeSet<Vec<String>>,
}

impl PrefixMap {
    pub fn valid_next(&self, prefix: &[String]) -> Option<&BTreeSet<String>> {
        self.next.get(prefix)
    }

    pub fn is_complete(&self, prefix: &[String]) -> bool {
        self.complete.contains(prefix)
    }

    pub fn is_known(&self, prefix: &[String]) -> bool {
        prefix.is_empty() || self.next.contains_key(prefix) || self.complete.contains(prefix)
    }

    pub fn complete_identifiers(&self) -> impl Iterator<Item = &Vec<String>> {
        self.complete.iter()
    }
}

pub fn build_prefix_map(ids: &IdentifierSet) -> PrefixMap {
    let mut pm = PrefixMap::default();
    pm.next.entry(Vec::new()).or_default();
    for ident in ids.iter() {
        let pieces = split_identifier(ident);
        for i in 0..pieces.len() {
            pm.next.entry(pieces[..i].to_vec()).or_default().insert(pieces[i].clone());
        }
        pm.complete.insert(pieces);
    }
    pm
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum TokenClass {
    /// `@@`-suffixed subword; the word continues.
    Continued(String),
    /// A token that ends a word.
    Word(String),
}

/// Identifier masking bound to one vocabulary.
#[derive(Debug, Clone)]
pub struct CodeMask {
    classes: Vec<TokenClass>,
    eos: usize,
    /// Markers that never belong in a patch.
    never: Vec<usize>,
}

/// Where a hypothesis stands with respect to identifier runs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunState {
    /// Completed identifier pieces of the current run.
    pub run: Vec<String>,
    /// Unfinished word assembled from `@@` subwords.
    pub partial: String,
}

impl CodeMask {
    pub fn new(vocab: &Vocab) -> Self {
        let classes = vocab
            .tokens()
            .iter()
            .map(|t| match t.strip_suffix(CONTINUATION) {
                Some(stem) if !stem.is_empty() => TokenClass::Continued(stem.to_string()),
                _ => TokenClass::Word(t.clone()),
            })
            .collect();
        Self {
            classes,
            eos: vocab.id(crate::tokenizer::EOS).unwrap_or(EOS_ID),
            never: [BOS, UNK, SEP].iter().filter_map(|t| vocab.id(t)).collect(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.classes.len()
    }

    /// Replays `tokens` into a run state.
    pub fn state_of(&self, tokens: &[usize]) -> RunState {
        let mut st = RunState::default();
        for &t in tokens {
            self.advance(&mut st, t);
        }
        st
    }

    pub fn advance(&self, st: &mut RunState, token: usize) {
        match &self.classes[token] {
            TokenClass::Continued(stem) => st.partial.push_str(stem),
            TokenClass::Word(w) => {
                let word = if st.partial.is_empty() { w.clone() } else { std::mem::take(&mut st.partial) + w };
                if is_identifier_piece(&word) {
                    st.run.push(word);
                } else {
                    st.run.clear();
                }
            }
        }
    }

    /// Sets every token that would break identifier validity to `-inf`.
    pub fn apply(&self, logprobs: &mut [f64], st: &RunState, pm: &PrefixMap) -> Result<()> {
        if !pm.is_known(&st.run) {
            return Err(SearchError::PrefixUnknown(st.run.clone()));
        }
        let empty = BTreeSet::new();
        let allowed = pm.valid_next(&st.run).unwrap_or(&empty);
        let free = st.run.is_empty() || pm.is_complete(&st.run);
        for (t, lp) in logprobs.iter_mut().enumerate() {
            let ok = !self.never.contains(&t) && match &self.classes[t] {
                TokenClass::Continued(stem) => {
                    if !stem.chars().all(|c| c.is_ascii_alphanumeric()) {
                        false
                    } else {
                        let sofar = format!("{}{stem}", st.partial);
                        allowed.iter().any(|p| p.starts_with(&sofar) && p.len() > sofar.len())
                            || (free && KEYWORDS.iter().any(|k| k.starts_with(&sofar) && k.len() > sofar.len()))
                    }
                }
                TokenClass::Word(w) => {
                    if st.partial.is_empty() {
                        if t == self.eos {
                            free
                        } else {
                            allowed.contains(w) || (free && !is_identifier_piece(w))
                        }
                    } else if !w.chars().all(|c| c.is_ascii_alphanumeric()) || w.is_empty() {
                        false
                    } else {
                        let word = format!("{}{w}", st.partial);
                        allowed.contains(&word) || (free && is_keyword(&word))
                    }
                }
            };
            if !ok {
                *lp = f64::NEG_INFINITY;
            }
        }
        Ok(())
    }
}

/// Word-level masking of one distribution given the identifier run emitted
/// so far.
pub fn mask_invalid(logprobs: &[f64], current_prefix: &[String], pm: &PrefixMap, vocab: &Vocab) -> Result<Vec<f64>> {
    let mut out = logprobs.to_vec();
    let st = RunState {
        run: current_prefix.to_vec(),
        partial: String::new(),
    };
    CodeMask::new(vocab).apply(&mut out, &st, pm)?;
    Ok(out)
}

/// Rescales the unmasked entries to a log-distribution.
pub fn renormalize(logprobs: &mut [f64]) {
    let max = logprobs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return;
    }
    let lse = max + logprobs.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logprobs.iter_mut().for_each(|v| *v -= lse);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    /// Discourage ending too-short patches, encourage ending too-long ones.
    Prose,
    /// `F_len(l_b - l_p)` whenever outside the tolerance.
    Literal,
}

pub const LENGTH_TOLERANCE: i64 = 5;

/// Adjustment added to the end-of-sequence log-probability.
pub fn length_penalty(l_b: usize, l_p: usize, lm: &LengthModel, mode: PenaltyMode, tolerance: i64) -> f64 {
    let d = l_b as i64 - l_p as i64;
    if d.abs() <= tolerance {
        return 0.0;
    }
    match mode {
        PenaltyMode::Literal => lm.f_len(d),
        PenaltyMode::Prose if d > 0 => lm.f_len(d),
        PenaltyMode::Prose => -lm.f_len(d),
    }
}

/// End-marker log-probability after the length adjustment. A reward can
/// make ending certain but never more than certain; without the cap, far
/// too long hypotheses would outrank everything else.
pub fn adjusted_eos(lp: f64, penalty: f64) -> f64 {
    (lp + penalty).min(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub beam_size: usize,
    pub n_candidates: usize,
    pub tolerance: i64,
    pub identifier_check: bool,
    pub length_control: bool,
    pub penalty_mode: PenaltyMode,
    pub renormalize: bool,
    /// Decoding stops `max_extra` tokens past the buggy length.
    pub max_extra: usize,
}

impl SearchConfig {
    pub fn desk() -> Self {
        Self {
            beam_size: 50,
            n_candidates: 200,
            tolerance: LENGTH_TOLERANCE,
            identifier_check: true,
            length_control: true,
            penalty_mode: PenaltyMode::Prose,
            renormalize: false,
            max_extra: 50,
        }
    }

    pub fn vanilla(beam_size: usize, n_candidates: usize) -> Self {
        Self {
            beam_size,
            n_candidates,
            identifier_check: false,
            length_control: false,
            ..Self::desk()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Emitted tokens, the final end marker excluded.
    pub tokens: Vec<usize>,
    /// One entry per emitted token, the end marker's included.
    pub logprobs: Vec<f64>,
    pub terminated: bool,
}

impl Hypothesis {
    pub fn score(&self) -> f64 {
        if self.logprobs.is_empty() {
            return 0.0;
        }
        self.logprobs.iter().sum::<f64>() / self.logprobs.len() as f64
    }

    pub fn l_p(&self) -> usize {
        self.tokens.len()
    }
}

/// Descending score; equal scores order by the smaller token sequence.
fn rank_order(a_score: f64, a_tokens: &[usize], b_score: f64, b_tokens: &[usize]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_tokens.cmp(b_tokens))
}

/// A model that scores one more token for many prefixes at once.
pub trait StepScorer {
    type State: Clone;
    fn vocab_size(&self) -> usize;
    /// Maximum number of tokens a hypothesis may hold.
    fn max_len(&self) -> usize {
        usize::MAX
    }
    fn init(&self) -> Result<(Self::State, Vec<f64>)>;
    /// Feeds `tokens[i]` to `states[i]`; returns one log-distribution per state.
    fn extend(&self, states: &mut [Self::State], tokens: &[usize]) -> Result<Vec<Vec<f64>>>;
}

impl StepScorer for AprScorer {
    type State = DecodeState;

    fn vocab_size(&self) -> usize {
        AprScorer::vocab_size(self)
    }

    fn max_len(&self) -> usize {
        self.max_fix_len()
    }

    fn init(&self) -> Result<(DecodeState, Vec<f64>)> {
        let (s, lp) = AprScorer::init(self)?;
        Ok((s, lp.into_iter().map(f64::from).collect()))
    }

    fn extend(&self, states: &mut [DecodeState], tokens: &[usize]) -> Result<Vec<Vec<f64>>> {
        let v = self.vocab_size();
        let flat = AprScorer::extend(self, states, tokens)?;
        Ok(flat.chunks(v).map(|r| r.iter().map(|&x| f64::from(x)).collect()).collect())
    }
}

/// Constraints that make beam search code-aware.
pub struct Guidance<'a> {
    pub mask: Option<(&'a CodeMask, &'a PrefixMap)>,
    pub length: Option<&'a LengthModel>,
}

struct Live<S> {
    hyp: Hypothesis,
    state: S,
    next: Vec<f64>,
    run: RunState,
}

/// Beam search; returns terminated hypotheses best first.
pub fn beam_search<M: StepScorer>(model: &M, l_b: usize, guide: &Guidance<'_>, cfg: &SearchConfig) -> Result<Vec<Hypothesis>> {
    let max_len = (l_b + cfg.max_extra).min(model.max_len());
    let (state, first) = model.init()?;
    let mut live = vec![Live {
        hyp: Hypothesis {
            tokens: Vec::new(),
            logprobs: Vec::new(),
            terminated: false,
        },
        state,
        next: first,
        run: RunState::default(),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    while !live.is_empty() && finished.len() < cfg.n_candidates {
        // (score, parent, token, logprob)
        let mut cands: Vec<(f64, usize, usize, f64)> = Vec::new();
        for (pi, l) in live.iter().enumerate() {
            let mut row = l.next.clone();
            if cfg.identifier_check {
                if let Some((mask, pm)) = guide.mask {
                    mask.apply(&mut row, &l.run, pm)?;
                }
            }
            if cfg.renormalize {
                renormalize(&mut row);
            }
            if cfg.length_control {
                if let Some(lm) = guide.length {
                    let pen = length_penalty(l_b, l.hyp.l_p(), lm, cfg.penalty_mode, cfg.tolerance);
                    row[EOS_ID] = adjusted_eos(row[EOS_ID], pen);
                }
            }
            let sum: f64 = l.hyp.logprobs.iter().sum();
            let n = (l.hyp.logprobs.len() + 1) as f64;
            let at_limit = l.hyp.l_p() >= max_len;
            for (t, &lp) in row.iter().enumerate() {
                if lp == f64::NEG_INFINITY || lp.is_nan() || (at_limit && t != EOS_ID) {
                    continue;
                }
                cands.push(((sum + lp) / n, pi, t, lp));
            }
        }
        if cands.is_empty() {
            break;
        }
        let seq = |c: &(f64, usize, usize, f64)| {
            let mut s = live[c.1].hyp.tokens.clone();
            s.push(c.2);
            s
        };
        cands.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| live[a.1].hyp.tokens.cmp(&live[b.1].hyp.tokens).then(a.2.cmp(&b.2)))
                .then_with(|| seq(a).cmp(&seq(b)))
        });
        let mut keep: Vec<(usize, usize, f64)> = Vec::new();
        for (rank, &(_, pi, t, lp)) in cands.iter().enumerate() {
            if keep.len() >= cfg.beam_size {
                break;
            }
            if t == EOS_ID {
                if rank < cfg.beam_size {
                    let mut h = live[pi].hyp.clone();
                    h.logprobs.push(lp);
                    h.terminated = true;
                    finished.push(h);
                }
            } else {
                keep.push((pi, t, lp));
            }
        }
        if keep.is_empty() {
            break;
        }
        let mut states: Vec<M::State> = keep.iter().map(|&(pi, _, _)| live[pi].state.clone()).collect();
        let toks: Vec<usize> = keep.iter().map(|&(_, t, _)| t).collect();
        let rows = model.extend(&mut states, &toks)?;
        let mut next_live = Vec::with_capacity(keep.len());
        for (((pi, t, lp), state), next) in keep.into_iter().zip(states).zip(rows) {
            let parent = &live[pi];
            let mut hyp = parent.hyp.clone();
            hyp.tokens.push(t);
            hyp.logprobs.push(lp);
            let mut run = parent.run.clone();
            if let Some((mask, _)) = guide.mask {
                mask.advance(&mut run, t);
            }
            next_live.push(Live { hyp, state, next, run });
        }
        live = next_live;
    }
    if finished.is_empty() {
        return Err(SearchError::NoCandidates);
    }
    finished.sort_by(|a, b| rank_order(a.score(), &a.tokens, b.score(), &b.tokens));
    finished.truncate(cfg.n_candidates);
    Ok(finished)
}

/// Round-robin by rank across models; the first occurrence of a token
/// sequence wins.
pub fn ensemble_merge(lists: &[Vec<Hypothesis>]) -> Vec<Hypothesis> {
    ensemble_order(lists).into_iter().map(|(m, r)| lists[m][r].clone()).collect()
}

/// [`ensemble_merge`] as `(model, rank)` pairs.
pub fn ensemble_order(lists: &[Vec<Hypothesis>]) -> Vec<(usize, usize)> {
    let mut seen: HashSet<&[usize]> = HashSet::new();
    let mut out = Vec::new();
    let longest = lists.iter().map(Vec::len).max().unwrap_or(0);
    for r in 0..longest {
        for (m, list) in lists.iter().enumerate() {
            if let Some(h) = list.get(r) {
                if seen.insert(&h.tokens) {
                    out.push((m, r));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub rank: usize,
    pub score: f64,
    pub tokens: Vec<String>,
}

/// Line-delimited `{rank, score, tokens}` records, rank starting at 1.
pub fn candidate_dump(hyps: &[Hypothesis], vocab: &Vocab) -> String {
    hyps.iter()
        .enumerate()
        .map(|(i, h)| {
            let rec = CandidateRecord {
                rank: i + 1,
                score: h.score(),
                tokens: h.tokens.iter().map(|&t| vocab.token(t).to_string()).collect(),
            };
            serde_json::to_string(&rec).expect("record serializes") + "\n"
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::word::CAMEL;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn vocab(words: &[&str]) -> Vocab {
        let mut v = Vocab::with_specials();
        for w in words {
            v.add(w);
        }
        v
    }

    #[test]
    fn prefix_map_examples() {
        let pm = build_prefix_map(&["max_ending_here"].into_iter().collect());
        assert_eq!(pm.valid_next(&s(&["max", "_", "ending", "_"])).unwrap(), &["here".to_string()].into());
        assert_eq!(pm.valid_next(&[]).unwrap(), &["max".to_string()].into());
        let pm = build_prefix_map(&["sum", "sumTotal"].into_iter().collect());
        assert!(pm.is_complete(&s(&["sum"])));
        assert_eq!(pm.valid_next(&s(&["sum"])).unwrap(), &[CAMEL.to_string()].into());
    }

    #[test]
    fn masking_examples() {
        let v = vocab(&["max", CAMEL, "Val", "return", ";", "x", "_"]);
        let pm = build_prefix_map(&["max", "x"].into_iter().collect());
        let lp = vec![-1.0; v.len()];
        let m = mask_invalid(&lp, &s(&["max"]), &pm, &v).unwrap();
        assert_eq!(m[v.id(CAMEL).unwrap()], f64::NEG_INFINITY);
        assert_eq!(m[v.id(";").unwrap()], -1.0);
        let m = mask_invalid(&lp, &[], &pm, &v).unwrap();
        assert_eq!(m[v.id("return").unwrap()], -1.0);
        assert_eq!(m[v.id("Val").unwrap()], f64::NEG_INFINITY);
        assert_eq!(m[v.id("x").unwrap()], -1.0);
        assert!(matches!(
            mask_invalid(&lp, &s(&["zz"]), &pm, &v),
            Err(SearchError::PrefixUnknown(_))
        ));
        let pm2 = build_prefix_map(&["max_val"].into_iter().collect());
        let m = mask_invalid(&lp, &s(&["max"]), &pm2, &v).unwrap();
        assert_eq!(m[EOS_ID], f64::NEG_INFINITY);
        assert_eq!(m[v.id(";").unwrap()], f64::NEG_INFINITY);
        assert_eq!(m[v.id("_").unwrap()], -1.0);
    }

    #[test]
    fn renormalized_mask_sums_to_one() {
        let v = vocab(&["a", "b", "+"]);
        let pm = build_prefix_map(&["a"].into_iter().collect());
        let lp = vec![(1.0f64 / v.len() as f64).ln(); v.len()];
        let mut m = mask_invalid(&lp, &[], &pm, &v).unwrap();
        renormalize(&mut m);
        let total: f64 = m.iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(m[v.id("b").unwrap()], f64::NEG_INFINITY);
    }

    #[test]
    fn subword_masking_groups_words() {
        let v = vocab(&["char@@", "no", "set", "ret@@", "urn", "zz"]);
        let pm = build_prefix_map(&["charno"].into_iter().collect());
        let mask = CodeMask::new(&v);
        let lp = vec![0.0; v.len()];
        let mut row = lp.clone();
        mask.apply(&mut row, &RunState::default(), &pm).unwrap();
        assert_eq!(row[v.id("char@@").unwrap()], 0.0);
        assert_eq!(row[v.id("ret@@").unwrap()], 0.0);
        assert_eq!(row[v.id("zz").unwrap()], f64::NEG_INFINITY);
        let st = mask.state_of(&[v.id("char@@").unwrap()]);
        let mut row = lp.clone();
        mask.apply(&mut row, &st, &pm).unwrap();
        assert_eq!(row[v.id("no").unwrap()], 0.0);
        assert_eq!(row[v.id("set").unwrap()], f64::NEG_INFINITY);
        assert_eq!(row[EOS_ID], f64::NEG_INFINITY);
        let st = mask.state_of(&[v.id("char@@").unwrap(), v.id("no").unwrap()]);
        assert_eq!(st.run, s(&["charno"]));
    }

    #[test]
    fn length_penalty_modes() {
        let lm = LengthModel::from_diffs(&[0, 0, 18, -11, 3]).unwrap();
        assert_eq!(length_penalty(10, 7, &lm, PenaltyMode::Prose, 5), 0.0);
        let short = length_penalty(20, 2, &lm, PenaltyMode::Prose, 5);
        assert!(short < 0.0 && short == lm.f_len(18));
        let long = length_penalty(4, 15, &lm, PenaltyMode::Prose, 5);
        assert!(long > 0.0 && long == -lm.f_len(-11));
        assert_eq!(length_penalty(4, 15, &lm, PenaltyMode::Literal, 5), lm.f_len(-11));
    }

    #[test]
    fn merge_examples() {
        let h = |t: &[usize]| Hypothesis {
            tokens: t.to_vec(),
            logprobs: vec![-1.0; t.len() + 1],
            terminated: true,
        };
        let a = vec![h(&[1]), h(&[2])];
        assert_eq!(ensemble_merge(std::slice::from_ref(&a)), a);
        let b = vec![h(&[3]), h(&[4])];
        let m = ensemble_merge(&[a.clone(), b.clone()]);
        let toks: Vec<_> = m.iter().map(|x| x.tokens[0]).collect();
        assert_eq!(toks, [1, 3, 2, 4]);
        let c = vec![h(&[5]), h(&[1])];
        let m = ensemble_merge(&[c, a]);
        let toks: Vec<_> = m.iter().map(|x| x.tokens[0]).collect();
        assert_eq!(toks, [5, 1, 2]);
    }
}
