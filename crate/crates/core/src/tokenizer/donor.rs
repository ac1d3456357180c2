use crate::lang::lexer::{lex_lenient, TokKind};
use crate::lang::spacing::join_tokens;

use super::word::{join_pieces, NUM, STR};
use super::TokenizerError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Donor {
    pub text: String,
    /// Absolute line distance to the buggy line.
    pub distance: usize,
}

/// Literals harvested from the buggy file, nearest first.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DonorPool {
    pub numbers: Vec<Donor>,
    pub strings: Vec<Donor>,
}

impl DonorPool {
    pub fn harvest(source: &str, buggy_line: usize) -> Self {
        let mut pool = DonorPool::default();
        for t in lex_lenient(source) {
            let list = match t.kind {
                TokKind::Int => &mut pool.numbers,
                TokKind::Str => &mut pool.strings,
                _ => continue,
            };
            let distance = t.line.abs_diff(buggy_line);
            match list.iter_mut().find(|d| d.text == t.text) {
                Some(d) => d.distance = d.distance.min(distance),
                None => list.push(Donor { text: t.text, distance }),
            }
        }
        // stable: equal distances keep first-occurrence order
        pool.numbers.sort_by_key(|d| d.distance);
        pool.strings.sort_by_key(|d| d.distance);
        pool
    }

    pub fn from_lists(numbers: &[(&str, usize)], strings: &[(&str, usize)]) -> Self {
        let mk = |l: &[(&str, usize)]| {
            let mut v: Vec<Donor> = l
                .iter()
                .map(|(t, d)| Donor {
                    text: t.to_string(),
                    distance: *d,
                })
                .collect();
            v.sort_by_key(|d| d.distance);
            v
        };
        Self {
            numbers: mk(numbers),
            strings: mk(strings),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.numbers.is_empty() && self.strings.is_empty()
    }
}

/// Index tuples with `0 <= t[i] < sizes[i]`, ordered by rank sum then
/// lexicographically, at most `cap` of them.
fn rank_tuples(sizes: &[usize], cap: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let max_sum: usize = sizes.iter().map(|s| s - 1).sum();
    for total in 0..=max_sum {
        let mut cur = Vec::with_capacity(sizes.len());
        fill(sizes, total, &mut cur, &mut out, cap);
        if out.len() >= cap {
            break;
        }
    }
    out.truncate(cap);
    out
}

fn fill(sizes: &[usize], remaining: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>, cap: usize) {
    if out.len() >= cap {
        return;
    }
    let i = cur.len();
    if i == sizes.len() {
        if remaining == 0 {
            out.push(cur.clone());
        }
        return;
    }
    for v in 0..sizes[i].min(remaining + 1) {
        cur.push(v);
        fill(sizes, remaining - v, cur, out, cap);
        cur.pop();
    }
}

/// Rebuilds concrete source lines from word-level tokens, expanding each
/// placeholder over the donor pool (nearest donors first), at most `cap` lines.
pub fn detokenize(tokens: &[String], donors: &DonorPool, cap: usize) -> Result<Vec<String>, TokenizerError> {
    let joined = join_pieces(tokens);
    let slots: Vec<(usize, &Vec<Donor>)> = joined
        .iter()
        .enumerate()
        .filter_map(|(i, t)| match t.as_str() {
            NUM => Some((i, &donors.numbers)),
            STR => Some((i, &donors.strings)),
            _ => None,
        })
        .collect();
    if slots.is_empty() {
        return Ok(vec![join_tokens(&joined)]);
    }
    if let Some((i, _)) = slots.iter().find(|(_, pool)| pool.is_empty()) {
        return Err(TokenizerError::MissingDonor(joined[*i].clone()));
    }
    let sizes: Vec<usize> = slots.iter().map(|(_, p)| p.len()).collect();
    let mut lines = Vec::new();
    for tuple in rank_tuples(&sizes, cap) {
        let mut line = joined.clone();
        for ((pos, pool), &k) in slots.iter().zip(&tuple) {
            line[*pos] = pool[k].text.clone();
        }
        lines.push(join_tokens(&line));
    }
    Ok(lines)
}
