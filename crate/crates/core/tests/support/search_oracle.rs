use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use curekit::corpus::LengthModel;
use curekit::lang::IdentifierSet;
use curekit::plm::EOS_ID;
use curekit::search::{adjusted_eos, beam_search, build_prefix_map, length_penalty, CodeMask, Guidance, PenaltyMode, Result, SearchConfig, StepScorer};
use curekit::tokenizer::word::is_identifier_piece;
use curekit::tokenizer::Vocab;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WORDS: [&str; 4] = ["a", "b", "_", "+"];
pub const L: usize = 4;

pub fn vocab() -> Vocab {
    let mut v = Vocab::with_specials();
    for w in WORDS {
        v.add(w);
    }
    v
}

/// Log-probabilities drawn from a hash of the prefix; specials other than
/// the end marker are impossible.
pub struct Hashed {
    pub seed: u64,
    pub dead: Vec<usize>,
    pub v: usize,
}

impl Hashed {
    pub fn dist(&self, prefix: &[usize]) -> Vec<f64> {
        let mut h = DefaultHasher::new();
        (self.seed, prefix).hash(&mut h);
        let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
        let mut logits: Vec<f64> = (0..self.v).map(|_| rng.gen_range(-3.0..3.0)).collect();
        for &d in &self.dead {
            logits[d] = f64::NEG_INFINITY;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        logits.iter().map(|x| x - lse).collect()
    }
}

impl StepScorer for Hashed {
    type State = Vec<usize>;
    fn vocab_size(&self) -> usize {
        self.v
    }
    fn init(&self) -> Result<(Vec<usize>, Vec<f64>)> {
        Ok((Vec::new(), self.dist(&[])))
    }
    fn extend(&self, states: &mut [Vec<usize>], tokens: &[usize]) -> Result<Vec<Vec<f64>>> {
        Ok(states
            .iter_mut()
            .zip(tokens)
            .map(|(s, &t)| {
                s.push(t);
                self.dist(s)
            })
            .collect())
    }
}

/// Every maximal run of identifier pieces must spell a whole in-scope
/// identifier.
pub fn valid(tokens: &[usize], v: &Vocab, ids: &IdentifierSet) -> bool {
    let mut run = String::new();
    for &t in tokens.iter().chain(std::iter::once(&EOS_ID)) {
        let w = v.token(t);
        if t != EOS_ID && is_identifier_piece(w) {
            run.push_str(w);
        } else {
            if !run.is_empty() && !ids.contains(&run) {
                return false;
            }
            run.clear();
        }
    }
    true
}

pub fn exhaustive(m: &Hashed, v: &Vocab, ids: Option<&IdentifierSet>, lm: Option<&LengthModel>, l_b: usize) -> Vec<(f64, Vec<usize>)> {
    let live: Vec<usize> = (0..v.len()).filter(|t| *t != EOS_ID && !m.dead.contains(t)).collect();
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
    for len in 0..=L {
        let mut next = Vec::new();
        for seq in &frontier {
            if ids.is_none_or(|s| valid(seq, v, s)) {
                let mut sum = 0.0;
                for i in 0..seq.len() {
                    sum += m.dist(&seq[..i])[seq[i]];
                }
                let mut end = m.dist(seq)[EOS_ID];
                if let Some(lm) = lm {
                    end = adjusted_eos(end, length_penalty(l_b, seq.len(), lm, PenaltyMode::Prose, 1));
                }
                out.push(((sum + end) / (seq.len() + 1) as f64, seq.clone()));
            }
            if len < L {
                for &t in &live {
                    let mut s = seq.clone();
                    s.push(t);
                    next.push(s);
                }
            }
        }
        frontier = next;
    }
    out.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    out
}

pub fn random_ids(rng: &mut ChaCha8Rng) -> IdentifierSet {
    let pool = ["a", "b", "a_b", "b_a", "a_a", "b_b_a"];
    let mut chosen: Vec<&str> = pool.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
    if chosen.is_empty() {
        chosen.push("a");
    }
    chosen.into_iter().collect()
}


/// Runs a wide constrained beam over `scorers` random scorers and checks its
/// top ten against exhaustive enumeration; returns how many ranked
/// sequences were compared.
pub fn compare_with_exhaustive(scorers: u64) -> std::result::Result<usize, String> {
    let v = vocab();
    let mask = CodeMask::new(&v);
    let dead: Vec<usize> = (1..4).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut compared = 0;
    for seed in 0..scorers {
        let m = Hashed { seed, dead: dead.clone(), v: v.len() };
        let ids = random_ids(&mut rng);
        let pm = build_prefix_map(&ids);
        let lm = LengthModel::from_diffs(&[0, 1, 1, -1, 2, 3, -2]).unwrap();
        let l_b = 1;
        let checks = seed % 2 == 0;
        let cfg = SearchConfig {
            beam_size: 10_000,
            n_candidates: 10_000,
            tolerance: 1,
            identifier_check: checks,
            length_control: checks,
            penalty_mode: PenaltyMode::Prose,
            renormalize: false,
            max_extra: L - l_b,
        };
        let guide = Guidance {
            mask: Some((&mask, &pm)),
            length: Some(&lm),
        };
        let got = beam_search(&m, l_b, &guide, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        let want = exhaustive(&m, &v, checks.then_some(&ids), checks.then_some(&lm), l_b);
        if got.len() != want.len() {
            return Err(format!("seed {seed}: {} finished vs {} enumerated", got.len(), want.len()));
        }
        for (g, (score, toks)) in got.iter().zip(&want).take(10) {
            if &g.tokens != toks || (g.score() - score).abs() > 1e-9 {
                return Err(format!("seed {seed}: {:?} vs {:?}", g.tokens, toks));
            }
            compared += 1;
        }
    }
    Ok(compared)
}
