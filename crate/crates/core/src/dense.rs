//! Plain-array kernels for cached inference on frozen weights.

use curekit_nn::array::{gelu, layer_norm_row, matmul_into};
use curekit_nn::Array;

/// `x (rows x k) * w (k x n) + b`.
pub fn affine(x: &[f32], rows: usize, w: &Array<f32>, b: &Array<f32>) -> Vec<f32> {
    let (k, n) = (w.rows(), w.cols());
    let mut out = vec![0.0f32; rows * n];
    matmul_into(x, w.data(), &mut out, rows, k, n, false, false);
    for r in out.chunks_mut(n) {
        r.iter_mut().zip(b.data()).for_each(|(o, &bb)| *o += bb);
    }
    out
}

pub fn layer_norm(x: &[f32], g: &Array<f32>, b: &Array<f32>) -> Vec<f32> {
    let mut out = x.to_vec();
    for r in out.chunks_mut(g.len()) {
        layer_norm_row(r, g.data(), b.data());
    }
    out
}

pub fn gelu_in_place(x: &mut [f32]) {
    x.iter_mut().for_each(|v| *v = gelu(*v));
}

/// GLU over the column axis: first half gated by sigmoid of the second.
pub fn glu(x: &[f32], cols: usize) -> Vec<f32> {
    let h = cols / 2;
    x.chunks(cols)
        .flat_map(|r| (0..h).map(move |j| r[j] * curekit_nn::array::sigmoid(r[h + j])))
        .collect()
}

pub fn add_in_place(a: &mut [f32], b: &[f32]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

pub fn scale_in_place(a: &mut [f32], s: f32) {
    a.iter_mut().for_each(|x| *x *= s);
}

pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax-weighted sum of `values` rows for one query row.
pub fn attend(q: &[f32], keys: &[&[f32]], values: &[&[f32]], scale: f32) -> Vec<f32> {
    let mut scores: Vec<f32> = keys.iter().map(|k| dot(q, k) * scale).collect();
    curekit_nn::array::softmax_row(&mut scores);
    let mut out = vec![0.0f32; values.first().map_or(0, |v| v.len())];
    for (p, v) in scores.iter().zip(values) {
        out.iter_mut().zip(v.iter()).for_each(|(o, &x)| *o += p * x);
    }
    out
}

pub fn log_softmax_rows(x: &mut [f32], cols: usize) {
    for r in x.chunks_mut(cols) {
        curekit_nn::array::log_softmax_row(r);
    }
}
