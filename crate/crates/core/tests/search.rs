mod support;

use std::collections::HashSet;

use curekit::corpus::LengthModel;
use curekit::lang::IdentifierSet;
use curekit::search::{
    beam_search, build_prefix_map, CodeMask, Guidance, Hypothesis, Result, SearchConfig, SearchError, StepScorer,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::search_oracle::{compare_with_exhaustive, random_ids, valid, vocab, Hashed};

#[test]
fn wide_beam_matches_exhaustive_search() {
    let compared = compare_with_exhaustive(100).unwrap();
    // a few identifier sets admit fewer than ten sequences
    assert!(compared > 950, "{compared}");
}

#[test]
fn narrow_beam_candidates_are_valid_and_ranked() {
    let v = vocab();
    let mask = CodeMask::new(&v);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..50u64 {
        let m = Hashed { seed, dead: vec![1, 2, 3], v: v.len() };
        let ids = random_ids(&mut rng);
        let pm = build_prefix_map(&ids);
        let cfg = SearchConfig {
            beam_size: 3,
            n_candidates: 6,
            max_extra: 5,
            length_control: false,
            ..SearchConfig::desk()
        };
        let guide = Guidance {
            mask: Some((&mask, &pm)),
            length: None,
        };
        let got = beam_search(&m, 2, &guide, &cfg).unwrap();
        assert!(got.len() <= 6);
        let mut seen = HashSet::new();
        for w in got.windows(2) {
            assert!(w[0].score() >= w[1].score());
        }
        for h in &got {
            assert!(h.terminated && h.tokens.len() <= 7);
            assert_eq!(h.logprobs.len(), h.tokens.len() + 1);
            assert!(valid(&h.tokens, &v, &ids), "seed {seed}: {:?}", h.tokens);
            assert!(seen.insert(h.tokens.clone()));
        }
    }
}

struct Dead;

impl StepScorer for Dead {
    type State = ();
    fn vocab_size(&self) -> usize {
        3
    }
    fn init(&self) -> Result<((), Vec<f64>)> {
        Ok(((), vec![f64::NEG_INFINITY; 3]))
    }
    fn extend(&self, _: &mut [()], t: &[usize]) -> Result<Vec<Vec<f64>>> {
        Ok(vec![vec![f64::NEG_INFINITY; 3]; t.len()])
    }
}

#[test]
fn fully_masked_search_reports_no_candidates() {
    let guide = Guidance { mask: None, length: None };
    let err = beam_search(&Dead, 3, &guide, &SearchConfig::desk()).unwrap_err();
    assert!(matches!(err, SearchError::NoCandidates));
}

proptest! {
    #[test]
    fn masked_search_never_emits_invalid_identifiers(seed in 0u64..10_000, pick in 1usize..63) {
        let v = vocab();
        let mask = CodeMask::new(&v);
        let pool = ["a", "b", "a_b", "b_a", "a_a", "b_b_a"];
        let ids: IdentifierSet = pool.iter().enumerate().filter(|(i, _)| pick >> i & 1 == 1).map(|(_, s)| *s).collect();
        let pm = build_prefix_map(&ids);
        let m = Hashed { seed, dead: vec![1, 2, 3], v: v.len() };
        let cfg = SearchConfig { beam_size: 4, n_candidates: 8, max_extra: 4, ..SearchConfig::desk() };
        let guide = Guidance { mask: Some((&mask, &pm)), length: None };
        let got: Vec<Hypothesis> = beam_search(&m, 2, &guide, &cfg).unwrap();
        for h in got {
            prop_assert!(valid(&h.tokens, &v, &ids));
        }
    }
}

#[test]
fn rewarded_end_marker_stays_a_log_probability() {
    let v = vocab();
    // every nonzero length difference is rare, so long hypotheses get a large reward
    let lm = LengthModel::from_diffs(&[0; 20]).unwrap();
    let guide = Guidance { mask: None, length: Some(&lm) };
    for seed in 0..20u64 {
        let m = Hashed { seed, dead: vec![1, 2, 3], v: v.len() };
        let cfg = SearchConfig { beam_size: 8, n_candidates: 30, tolerance: 1, max_extra: 6, ..SearchConfig::desk() };
        for h in beam_search(&m, 1, &guide, &cfg).unwrap() {
            assert!(h.logprobs.iter().all(|&lp| lp <= 0.0), "{:?}", h.logprobs);
        }
    }
}
