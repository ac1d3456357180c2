//! From a located bug to ranked, validated candidate patches.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apr::AprModel;
use crate::corpus::{build_example, CorpusError, LengthModel, PatchRecord};
use crate::infer::AprScorer;
use crate::lang::lexer::{lex_lenient, TokKind};
use crate::lang::{compile, replace_line, run_tests, scope_identifiers, BugInstance, IdentifierSet, LangError, DEFAULT_STEP_BUDGET};
use crate::search::{beam_search, build_prefix_map, ensemble_order, CodeMask, Guidance, Hypothesis, SearchConfig, SearchError};
use crate::tokenizer::{bpe_decode, detokenize, Codec, DonorPool, TokenSeq, TokenizerError};

#[derive(Debug, Error)]
pub enum RepairError {
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Lang(#[from] LangError),
    #[error("only {have} patches carry a compile status, {need} needed")]
    InsufficientPatches { have: usize, need: usize },
    #[error("an ensemble needs at least one model")]
    EmptyEnsemble,
}

pub type Result<T, E = RepairError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationStatus {
    Untested,
    Uncompilable,
    Implausible,
    Plausible,
}

impl ValidationStatus {
    pub fn is_tested(self) -> bool {
        self != ValidationStatus::Untested
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePatch {
    pub line: String,
    /// 1-based, unique per bug.
    pub rank: usize,
    pub score: f64,
    /// Index of the ensemble member that produced the hypothesis.
    pub origin: usize,
    /// Model tokens in the hypothesis, end marker excluded.
    pub n_tokens: usize,
    /// `None` when the patch was never compiled.
    pub compiled: Option<bool>,
    pub status: ValidationStatus,
}

/// Model tokens of a finished hypothesis back to concrete source lines.
pub fn reconstruct(tokens: &[String], donors: &DonorPool, cap: usize) -> Result<Vec<String>> {
    let words = bpe_decode(&TokenSeq::new(tokens.to_vec()))?;
    Ok(detokenize(&words.tokens, donors, cap)?)
}

/// The acceptance rule for a patched program: every test that passed on the
/// bug still passes and at least one that failed now passes.
pub fn is_plausible(failing_before: &[usize], passed_now: &[bool]) -> bool {
    let fixed_one = failing_before.iter().any(|&i| passed_now[i]);
    let kept = (0..passed_now.len()).filter(|i| !failing_before.contains(i)).all(|i| passed_now[i]);
    fixed_one && kept
}

/// Compile filter only.
pub fn compiles(bug: &BugInstance, patch_line: &str) -> bool {
    replace_line(&bug.source, bug.buggy_line, patch_line).is_some_and(|s| compile(&s).is_ok())
}

pub fn validate(bug: &BugInstance, patch_line: &str, budget: u64) -> ValidationStatus {
    let Some(src) = replace_line(&bug.source, bug.buggy_line, patch_line) else {
        return ValidationStatus::Uncompilable;
    };
    let Ok(program) = compile(&src) else {
        return ValidationStatus::Uncompilable;
    };
    let passed: Vec<bool> = run_tests(&program, &bug.test_suite, budget).iter().map(|o| o.passed()).collect();
    if is_plausible(&bug.failing_tests, &passed) {
        ValidationStatus::Plausible
    } else {
        ValidationStatus::Implausible
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairConfig {
    pub search: SearchConfig,
    /// Hypotheses kept after merging the ensemble.
    pub generated_cap: usize,
    pub validation_cap: usize,
    pub donor_cap: usize,
    /// Stop validating at the first plausible patch.
    pub early_stop: bool,
    pub step_budget: u64,
}

impl RepairConfig {
    pub fn desk() -> Self {
        Self {
            search: SearchConfig::desk(),
            generated_cap: 200,
            validation_cap: 100,
            donor_cap: 4,
            early_stop: false,
            step_budget: DEFAULT_STEP_BUDGET,
        }
    }

    pub fn full_scale() -> Self {
        Self {
            search: SearchConfig {
                beam_size: 1_000,
                n_candidates: 10_000,
                ..SearchConfig::desk()
            },
            generated_cap: 10_000,
            validation_cap: 5_000,
            ..Self::desk()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairOutcome {
    pub candidates: Vec<CandidatePatch>,
    /// Model tokens in the buggy line.
    pub buggy_len: usize,
    pub scope: IdentifierSet,
}

/// Everything the search needs about one bug, tokenized.
pub struct PreparedBug {
    pub context_ids: Vec<usize>,
    pub span: (usize, usize),
    pub scope: IdentifierSet,
    pub donors: DonorPool,
}

pub fn prepare(bug: &BugInstance, codec: &Codec) -> Result<PreparedBug> {
    let ex = build_example(&PatchRecord::from_bug(bug), codec)?;
    Ok(PreparedBug {
        span: ex.buggy_span,
        context_ids: ex.context_ids,
        scope: scope_identifiers(&bug.program, bug.buggy_line)?,
        donors: DonorPool::harvest(&bug.source, bug.buggy_line),
    })
}

/// Beam search with every model, merged best-rank first.
pub fn generate(
    prep: &PreparedBug,
    ensemble: &[AprModel<f32>],
    codec: &Codec,
    lm: Option<&LengthModel>,
    cfg: &SearchConfig,
) -> Result<Vec<(usize, Hypothesis)>> {
    if ensemble.is_empty() {
        return Err(RepairError::EmptyEnsemble);
    }
    let mask = CodeMask::new(codec.vocab());
    let pm = build_prefix_map(&prep.scope);
    let guide = Guidance {
        mask: Some((&mask, &pm)),
        length: lm,
    };
    let l_b = prep.span.1 + 1 - prep.span.0;
    let lists = ensemble
        .iter()
        .map(|m| {
            let scorer = AprScorer::new(m, &prep.context_ids, prep.span).map_err(SearchError::from)?;
            match beam_search(&scorer, l_b, &guide, cfg) {
                Err(SearchError::NoCandidates) => Ok(Vec::new()),
                r => r.map_err(RepairError::from),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let merged: Vec<(usize, Hypothesis)> = ensemble_order(&lists)
        .into_iter()
        .map(|(m, r)| (m, lists[m][r].clone()))
        .collect();
    if merged.is_empty() {
        return Err(SearchError::NoCandidates.into());
    }
    Ok(merged)
}

/// Concrete, de-duplicated candidate lines in rank order, all untested.
pub fn candidates_from(hyps: &[(usize, Hypothesis)], codec: &Codec, donors: &DonorPool, donor_cap: usize) -> Vec<CandidatePatch> {
    let vocab = codec.vocab();
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (origin, h) in hyps {
        let toks: Vec<String> = h.tokens.iter().map(|&t| vocab.token(t).to_string()).collect();
        // Hypotheses whose placeholders have no donor, or that end inside a
        // word, cannot be turned into source.
        let Ok(lines) = reconstruct(&toks, donors, donor_cap) else {
            continue;
        };
        for line in lines {
            if seen.insert(line.clone()) {
                out.push(CandidatePatch {
                    rank: out.len() + 1,
                    line,
                    score: h.score(),
                    origin: *origin,
                    n_tokens: h.tokens.len(),
                    compiled: None,
                    status: ValidationStatus::Untested,
                });
            }
        }
    }
    out
}

/// Compiles every candidate and runs the tests on the top `validation_cap`.
pub fn validate_candidates(bug: &BugInstance, cands: &mut [CandidatePatch], cfg: &RepairConfig) {
    if cfg.early_stop {
        for c in cands.iter_mut().take(cfg.validation_cap) {
            c.status = validate(bug, &c.line, cfg.step_budget);
            c.compiled = Some(c.status != ValidationStatus::Uncompilable);
            if c.status == ValidationStatus::Plausible {
                break;
            }
        }
        return;
    }
    cands.par_iter_mut().enumerate().for_each(|(i, c)| {
        if i < cfg.validation_cap {
            c.status = validate(bug, &c.line, cfg.step_budget);
            c.compiled = Some(c.status != ValidationStatus::Uncompilable);
        } else {
            c.compiled = Some(compiles(bug, &c.line));
        }
    });
}

pub fn repair(
    bug: &BugInstance,
    ensemble: &[AprModel<f32>],
    codec: &Codec,
    lm: Option<&LengthModel>,
    cfg: &RepairConfig,
) -> Result<RepairOutcome> {
    let prep = prepare(bug, codec)?;
    let mut hyps = generate(&prep, ensemble, codec, lm, &cfg.search)?;
    hyps.truncate(cfg.generated_cap);
    let mut candidates = candidates_from(&hyps, codec, &prep.donors, cfg.donor_cap);
    validate_candidates(bug, &mut candidates, cfg);
    Ok(RepairOutcome {
        candidates,
        buggy_len: prep.span.1 + 1 - prep.span.0,
        scope: prep.scope,
    })
}

/// Share of the top `k` candidates that compile.
pub fn compilable_rate(patches: &[CandidatePatch], k: usize) -> Result<f64> {
    let mut top: Vec<&CandidatePatch> = patches.iter().filter(|p| p.compiled.is_some()).collect();
    if top.len() < k || k == 0 {
        return Err(RepairError::InsufficientPatches { have: top.len(), need: k.max(1) });
    }
    top.sort_by_key(|p| p.rank);
    Ok(top[..k].iter().filter(|p| p.compiled == Some(true)).count() as f64 / k as f64)
}

pub fn is_correct(patch_line: &str, truth: &str) -> bool {
    patch_line.trim() == truth.trim()
}

/// 1-based rank of the first candidate equal to the ground truth.
pub fn correct_rank(patches: &[CandidatePatch], truth: &str) -> Option<usize> {
    patches.iter().filter(|p| is_correct(&p.line, truth)).map(|p| p.rank).min()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankStats {
    pub mean_rank: Option<f64>,
    pub found: usize,
    pub missing: usize,
}

pub fn correct_rank_stats<'a>(bugs: impl IntoIterator<Item = (&'a [CandidatePatch], &'a str)>) -> RankStats {
    let mut ranks = Vec::new();
    let mut missing = 0;
    for (patches, truth) in bugs {
        match correct_rank(patches, truth) {
            Some(r) => ranks.push(r as f64),
            None => missing += 1,
        }
    }
    RankStats {
        mean_rank: (!ranks.is_empty()).then(|| ranks.iter().sum::<f64>() / ranks.len() as f64),
        found: ranks.len(),
        missing,
    }
}

/// Identifiers used by `line` and how many of them are in scope.
pub fn identifier_usage(line: &str, scope: &IdentifierSet) -> (usize, usize) {
    let ids: Vec<String> = lex_lenient(line).into_iter().filter(|t| t.kind == TokKind::Ident).map(|t| t.text).collect();
    (ids.iter().filter(|i| scope.contains(i)).count(), ids.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairRecord {
    pub bug_id: String,
    pub rank: usize,
    pub patch: String,
    pub compile: Option<bool>,
    pub plausible: bool,
    pub correct: bool,
}

pub fn repair_records(bug_id: &str, truth: &str, patches: &[CandidatePatch]) -> Vec<RepairRecord> {
    patches
        .iter()
        .map(|p| RepairRecord {
            bug_id: bug_id.to_string(),
            rank: p.rank,
            patch: p.line.clone(),
            compile: p.compiled,
            plausible: p.status == ValidationStatus::Plausible,
            correct: is_correct(&p.line, truth),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub config: String,
    /// Bugs whose ground-truth line was validated plausible.
    pub bugs_fixed: usize,
    /// Bugs with at least one plausible patch.
    pub plausible: usize,
    #[serde(rename = "compilable_rate@30")]
    pub compilable_rate_30: Option<f64>,
    #[serde(rename = "compilable_rate@100")]
    pub compilable_rate_100: Option<f64>,
    pub mean_correct_rank: Option<f64>,
}

/// Aggregates per-bug outcomes; compilable rates average over the bugs
/// that have enough candidates.
pub fn metrics(config: &str, outcomes: &[(&BugInstance, &RepairOutcome)]) -> MetricsRecord {
    let fixed = outcomes
        .iter()
        .filter(|(b, o)| {
            o.candidates
                .iter()
                .any(|p| p.status == ValidationStatus::Plausible && is_correct(&p.line, &b.original_line))
        })
        .count();
    let plausible = outcomes
        .iter()
        .filter(|(_, o)| o.candidates.iter().any(|p| p.status == ValidationStatus::Plausible))
        .count();
    let rate = |k: usize| {
        let rs: Vec<f64> = outcomes.iter().filter_map(|(_, o)| compilable_rate(&o.candidates, k).ok()).collect();
        (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64)
    };
    let ranks = correct_rank_stats(outcomes.iter().map(|(b, o)| (o.candidates.as_slice(), b.original_line.as_str())));
    MetricsRecord {
        config: config.to_string(),
        bugs_fixed: fixed,
        plausible,
        compilable_rate_30: rate(30),
        compilable_rate_100: rate(100),
        mean_correct_rank: ranks.mean_rank,
    }
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn reconstruct_examples() {
        let none = DonorPool::default();
        assert_eq!(reconstruct(&s(&["char@@", "no", "=", "0"]), &none, 4).unwrap(), ["charno = 0"]);
        let pool = DonorPool::from_lists(&[("7", 9), ("42", 1)], &[]);
        assert_eq!(
            reconstruct(&s(&["return", "<NUM>", ";"]), &pool, 2).unwrap(),
            ["return 42;", "return 7;"]
        );
        assert!(matches!(
            reconstruct(&s(&["return", "<NUM>"]), &none, 4),
            Err(RepairError::Tokenizer(TokenizerError::MissingDonor(_)))
        ));
    }

    #[test]
    fn plausibility_truth_table() {
        assert!(is_plausible(&[0], &[true, true]));
        assert!(!is_plausible(&[0], &[false, true]));
        assert!(!is_plausible(&[0], &[true, false]));
        assert!(is_plausible(&[0, 1], &[false, true, true]));
        assert!(!is_plausible(&[], &[true, true]));
    }

    #[test]
    fn rates_and_ranks() {
        let mk = |rank: usize, ok: bool, line: &str| CandidatePatch {
            line: line.into(),
            rank,
            score: 0.0,
            origin: 0,
            n_tokens: 1,
            compiled: Some(ok),
            status: ValidationStatus::Untested,
        };
        let ps: Vec<_> = (1..=30).map(|r| mk(r, true, "x")).collect();
        assert_eq!(compilable_rate(&ps, 30).unwrap(), 1.0);
        assert!(matches!(compilable_rate(&ps, 31), Err(RepairError::InsufficientPatches { .. })));
        let ps = vec![mk(1, false, "a"), mk(2, true, "b")];
        assert_eq!(compilable_rate(&ps, 2).unwrap(), 0.5);
        let one = vec![mk(1, true, "t")];
        let st = correct_rank_stats([(one.as_slice(), "t"), (one.as_slice(), "t"), (ps.as_slice(), "zz")]);
        assert_eq!(st.mean_rank, Some(1.0));
        assert_eq!((st.found, st.missing), (2, 1));
    }
}
