//! Composite layers built from tape primitives.

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// `x (n x in) * w (in x out) + b`.
pub fn linear<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

/// 1-D convolution over rows. `w` is `(kernel * in) x out`, laid out as
/// kernel-major blocks of input channels.
pub fn conv1d<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w: Var,
    b: Var,
    kernel: usize,
    pad_left: usize,
    pad_right: usize,
) -> Result<Var> {
    let cols = tape.unfold(x, kernel, pad_left, pad_right)?;
    linear(tape, cols, w, b)
}

/// Scaled dot-product attention. `causal = Some(offset)` lets query `i`
/// attend to keys `0..=offset + i`.
pub fn attention<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    causal: Option<usize>,
) -> Result<Var> {
    let d = tape.shape(q).last().copied().unwrap_or(1);
    let scores = tape.matmul_nt(q, k)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let probs = tape.softmax(scores, causal);
    tape.matmul(probs, v)
}

/// Splits the column axis of `q`, `k`, `v` into `heads` equal groups,
/// attends per group and concatenates the results.
pub fn multi_head_attention<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    causal: Option<usize>,
) -> Result<Var> {
    let dim = tape.shape(q).last().copied().unwrap_or(0);
    if heads == 0 || dim % heads != 0 {
        return Err(NnError::InvalidArgument {
            op: "multi_head_attention",
            message: format!("{dim} columns not divisible into {heads} heads"),
        });
    }
    if heads == 1 {
        return attention(tape, q, k, v, causal);
    }
    let hd = dim / heads;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * hd, (h + 1) * hd)?;
        let kh = tape.slice_cols(k, h * hd, (h + 1) * hd)?;
        let vh = tape.slice_cols(v, h * hd, (h + 1) * hd)?;
        outs.push(attention(tape, qh, kh, vh, causal)?);
    }
    tape.concat_cols(&outs)
}
