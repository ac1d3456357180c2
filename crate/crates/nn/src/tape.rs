//! Reverse-mode differentiation over an explicitly recorded operation list.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order; `backward` walks it in reverse. There is no operator
//! fusion: every op stores what its own backward needs and nothing more.

use std::collections::HashMap;

use rand::Rng;

use crate::array::{
    gelu, gelu_grad, layer_norm_row, log_softmax_row, matmul_into, matmul_tn_acc, sigmoid,
    softmax_row, Array,
};
use crate::error::{mismatch, NnError, Result};
use crate::params::{Grads, ParamId, ParamStore};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<T>),
    Scale(Var, T),
    Gelu(Var),
    Glu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        stats: Vec<(T, T)>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Unfold {
        x: Var,
        kernel: usize,
        pad_left: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    PadRows {
        x: Var,
        before: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Array<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    grads: Vec<Option<Vec<T>>>,
    record_grads: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            grads: Vec::new(),
            record_grads: true,
        }
    }

    /// A tape whose parameters are bound as constants; `backward` finds nothing
    /// to differentiate.
    pub fn inference() -> Self {
        Self {
            record_grads: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input that is not a stored parameter.
    pub fn leaf(&mut self, value: Array<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: self.record_grads,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.get(id).clone());
        self.params.insert(id, v);
        v
    }

    /// Makes later `param(_, id)` calls return `v`, e.g. a perturbed copy fed
    /// in by a gradient check.
    pub fn bind_param(&mut self, id: ParamId, v: Var) {
        self.params.insert(id, v);
    }

    pub fn value(&self, v: Var) -> &Array<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let a = &self.nodes[v.0].value;
        (a.rows(), a.cols())
    }

    // ---- forward ops -------------------------------------------------------

    /// `a (m x k) * b (k x n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a (m x k) * b^T` with `b` stored `n x k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (br, bc) = self.dims(b);
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(
            self.nodes[a.0].value.data(),
            self.nodes[b.0].value.data(),
            &mut out,
            m,
            k,
            n,
            trans_b,
            false,
        );
        let value = Array::matrix(m, n, out)?;
        Ok(self.push(
            value,
            Op::MatMul {
                a,
                b,
                m,
                k,
                n,
                trans_b,
            },
            &[a, b],
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let value = Array::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Adds a length-`cols` vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, c) = self.dims(a);
        if self.nodes[row.0].value.len() != c {
            return Err(mismatch("add_row", self.shape(a), self.shape(row)));
        }
        let va = &self.nodes[a.0].value;
        let vr = self.nodes[row.0].value.data();
        let mut data = va.data().to_vec();
        for chunk in data.chunks_mut(c.max(1)) {
            chunk.iter_mut().zip(vr).for_each(|(x, &r)| *x += r);
        }
        let value = Array::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, Op::AddRow(a, row), &[a, row]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let value = Array::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mul_const(&mut self, a: Var, mask: Vec<T>) -> Result<Var> {
        let va = &self.nodes[a.0].value;
        if mask.len() != va.len() {
            return Err(mismatch("mul_const", va.shape(), &[mask.len()]));
        }
        let data = va.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let value = Array::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, Op::MulConst(a, mask), &[a]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::cast(s);
        let value = self.nodes[a.0].value.map(|x| x * s);
        self.push(value, Op::Scale(a, s), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(gelu);
        self.push(value, Op::Gelu(a), &[a])
    }

    /// Gated linear unit over the column axis: `[x1 | x2] -> x1 * sigmoid(x2)`.
    pub fn glu(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if c % 2 != 0 {
            return Err(NnError::InvalidArgument {
                op: "glu",
                message: format!("odd column count {c}"),
            });
        }
        let h = c / 2;
        let src = self.nodes[a.0].value.data();
        let mut out = Vec::with_capacity(r * h);
        for row in src.chunks(c) {
            for j in 0..h {
                out.push(row[j] * sigmoid(row[h + j]));
            }
        }
        let value = Array::matrix(r, h, out)?;
        Ok(self.push(value, Op::Glu(a), &[a]))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.nodes[gain.0].value.len() != c || self.nodes[bias.0].value.len() != c {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(gain)));
        }
        let mut data = self.nodes[x.0].value.data().to_vec();
        let g = self.nodes[gain.0].value.data();
        let b = self.nodes[bias.0].value.data();
        let mut stats = Vec::with_capacity(r);
        for row in data.chunks_mut(c.max(1)) {
            stats.push(layer_norm_row(row, g, b));
        }
        let value = Array::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, stats }, &[x, gain, bias]))
    }

    /// Row softmax. With `causal = Some(offset)`, row `i` only sees columns
    /// `j <= offset + i`.
    pub fn softmax(&mut self, a: Var, causal: Option<usize>) -> Var {
        let (_, c) = self.dims(a);
        let mut data = self.nodes[a.0].value.data().to_vec();
        for (i, row) in data.chunks_mut(c.max(1)).enumerate() {
            if let Some(off) = causal {
                for v in row.iter_mut().skip(off + i + 1) {
                    *v = T::neg_infinity();
                }
            }
            softmax_row(row);
        }
        let value = Array::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(value, Op::Softmax(a), &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (_, c) = self.dims(a);
        let mut data = self.nodes[a.0].value.data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            log_softmax_row(row);
        }
        let value = Array::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(value, Op::LogSoftmax(a), &[a])
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, dim) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(NnError::InvalidArgument {
                op: "embedding",
                message: format!("id {bad} outside table of {vocab} rows"),
            });
        }
        let t = self.nodes[table.0].value.data();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            out.extend_from_slice(&t[i * dim..(i + 1) * dim]);
        }
        let value = Array::matrix(ids.len(), dim, out)?;
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Sliding windows for 1-D convolution: row `t` of the output is the
    /// concatenation of input rows `t - pad_left .. t - pad_left + kernel`
    /// (zeros outside the input).
    pub fn unfold(&mut self, x: Var, kernel: usize, pad_left: usize, pad_right: usize) -> Result<Var> {
        let (len, c) = self.dims(x);
        let padded = len + pad_left + pad_right;
        if kernel == 0 || padded < kernel {
            return Err(NnError::InvalidArgument {
                op: "unfold",
                message: format!("kernel {kernel} over padded length {padded}"),
            });
        }
        let out_len = padded - kernel + 1;
        let src = self.nodes[x.0].value.data();
        let mut out = vec![T::zero(); out_len * kernel * c];
        for t in 0..out_len {
            for j in 0..kernel {
                let pos = t + j;
                if pos < pad_left || pos - pad_left >= len {
                    continue;
                }
                let s = pos - pad_left;
                let dst = t * kernel * c + j * c;
                out[dst..dst + c].copy_from_slice(&src[s * c..(s + 1) * c]);
            }
        }
        let value = Array::matrix(out_len, kernel * c, out)?;
        Ok(self.push(
            value,
            Op::Unfold {
                x,
                kernel,
                pad_left,
            },
            &[x],
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start > end || end > r {
            return Err(NnError::InvalidArgument {
                op: "slice_rows",
                message: format!("range {start}..{end} of {r} rows"),
            });
        }
        let data = self.nodes[x.0].value.data()[start * c..end * c].to_vec();
        let value = Array::matrix(end - start, c, data)?;
        Ok(self.push(value, Op::SliceRows { x, start }, &[x]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start > end || end > c {
            return Err(NnError::InvalidArgument {
                op: "slice_cols",
                message: format!("range {start}..{end} of {c} columns"),
            });
        }
        let src = self.nodes[x.0].value.data();
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for row in src.chunks(c.max(1)) {
            data.extend_from_slice(&row[start..end]);
        }
        let value = Array::matrix(r, w, data)?;
        Ok(self.push(value, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.dims(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, pc) = self.dims(p);
            if pc != c {
                return Err(mismatch("concat_rows", self.shape(parts[0]), self.shape(p)));
            }
            rows += r;
            data.extend_from_slice(self.nodes[p.0].value.data());
        }
        let value = Array::matrix(rows, c, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.dims(parts[0]).0;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pr != r {
                return Err(mismatch("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            total += pc;
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let v = &self.nodes[p.0].value;
                data.extend_from_slice(v.row(i));
            }
        }
        let value = Array::matrix(r, total, data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Surrounds `x` with zero rows.
    pub fn pad_rows(&mut self, x: Var, before: usize, after: usize) -> Var {
        let (r, c) = self.dims(x);
        let mut data = vec![T::zero(); (before + r + after) * c];
        data[before * c..(before + r) * c].copy_from_slice(self.nodes[x.0].value.data());
        let value = Array::matrix(before + r + after, c, data).expect("padded shape");
        self.push(value, Op::PadRows { x, before }, &[x])
    }

    /// Mean negative log-likelihood of `targets` under row-softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(logits);
        if targets.len() != r || r == 0 {
            return Err(mismatch("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(NnError::InvalidArgument {
                op: "cross_entropy",
                message: format!("target {bad} outside {c} classes"),
            });
        }
        let mut probs = self.nodes[logits.0].value.data().to_vec();
        let mut total = T::zero();
        for (row, &t) in probs.chunks_mut(c).zip(targets) {
            log_softmax_row(row);
            total -= row[t];
            row.iter_mut().for_each(|v| *v = v.exp());
        }
        let value = Array::scalar(total / T::cast(r as f64));
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.nodes[a.0].value.data().iter().copied().sum();
        self.push(Array::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let s: T = v.data().iter().copied().sum::<T>() / T::cast(v.len().max(1) as f64);
        self.push(Array::scalar(s), Op::Mean(a), &[a])
    }

    /// Inverted dropout; identity when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut impl Rng) -> Result<Var> {
        if p <= 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - p;
        let scale = T::cast(1.0 / keep);
        let mask = (0..self.nodes[a.0].value.len())
            .map(|_| if rng.gen::<f64>() < keep { scale } else { T::zero() })
            .collect();
        self.mul_const(a, mask)
    }

    // ---- backward -----------------------------------------------------------

    /// Accumulates d(loss)/d(node) for every node that depends on a
    /// differentiable leaf. `loss` must hold a single value.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NnError::InvalidArgument {
                op: "backward",
                message: format!("loss has shape {:?}", self.shape(loss)),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every bound parameter, aligned with the store.
    pub fn param_grads(&self, n_params: usize) -> Grads<T> {
        let mut out = Grads::new(n_params);
        for (&id, &v) in &self.params {
            if let Some(g) = self.grad(v) {
                out.set(id, g.to_vec());
            }
        }
        out
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                m,
                k,
                n,
                trans_b,
            } => {
                let va = nodes[a.0].value.data();
                let vb = nodes[b.0].value.data();
                // dA (m x k) = G (m x n) * op(B)^T
                acc(a, &mut |ga| {
                    if trans_b {
                        // B stored n x k: G * B
                        matmul_into(g, vb, ga, m, n, k, false, true);
                    } else {
                        // B stored k x n: G * B^T
                        matmul_into(g, vb, ga, m, n, k, true, true);
                    }
                });
                acc(b, &mut |gb| {
                    if trans_b {
                        // dB (n x k) = G^T * A
                        matmul_tn_acc(g, va, gb, m, n, k);
                    } else {
                        // dB (k x n) = A^T * G
                        matmul_tn_acc(va, g, gb, m, k, n);
                    }
                });
            }
            &Op::Add(a, b) => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, &d)| *x += d));
                acc(b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, &d)| *x += d));
            }
            &Op::AddRow(a, row) => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, &d)| *x += d));
                let c = nodes[row.0].value.len();
                acc(row, &mut |gr| {
                    for chunk in g.chunks(c.max(1)) {
                        gr.iter_mut().zip(chunk).for_each(|(x, &d)| *x += d);
                    }
                });
            }
            &Op::Mul(a, b) => {
                let va = nodes[a.0].value.data();
                let vb = nodes[b.0].value.data();
                acc(a, &mut |ga| {
                    for ((x, &d), &y) in ga.iter_mut().zip(g).zip(vb) {
                        *x += d * y;
                    }
                });
                acc(b, &mut |gb| {
                    for ((x, &d), &y) in gb.iter_mut().zip(g).zip(va) {
                        *x += d * y;
                    }
                });
            }
            Op::MulConst(a, mask) => {
                acc(*a, &mut |ga| {
                    for ((x, &d), &m) in ga.iter_mut().zip(g).zip(mask) {
                        *x += d * m;
                    }
                });
            }
            &Op::Scale(a, s) => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, &d)| *x += d * s));
            }
            &Op::Gelu(a) => {
                let va = nodes[a.0].value.data();
                acc(a, &mut |ga| {
                    for ((x, &d), &v) in ga.iter_mut().zip(g).zip(va) {
                        *x += d * gelu_grad(v);
                    }
                });
            }
            &Op::Glu(a) => {
                let va = nodes[a.0].value.data();
                let c = nodes[a.0].value.cols();
                let h = c / 2;
                acc(a, &mut |ga| {
                    for (r, (grow, drow)) in ga.chunks_mut(c).zip(g.chunks(h)).enumerate() {
                        let xrow = &va[r * c..(r + 1) * c];
                        for j in 0..h {
                            let s = sigmoid(xrow[h + j]);
                            grow[j] += drow[j] * s;
                            grow[h + j] += drow[j] * xrow[j] * s * (T::one() - s);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, stats } => {
                let vx = nodes[x.0].value.data();
                let c = nodes[x.0].value.cols();
                let vg = nodes[gain.0].value.data();
                let cn = T::cast(c as f64);
                acc(*x, &mut |gx| {
                    for (r, &(mean, rstd)) in stats.iter().enumerate() {
                        let xr = &vx[r * c..(r + 1) * c];
                        let dr = &g[r * c..(r + 1) * c];
                        let mut sum_dxhat = T::zero();
                        let mut sum_dxhat_xhat = T::zero();
                        for j in 0..c {
                            let xhat = (xr[j] - mean) * rstd;
                            let dxhat = dr[j] * vg[j];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                        }
                        for j in 0..c {
                            let xhat = (xr[j] - mean) * rstd;
                            let dxhat = dr[j] * vg[j];
                            gx[r * c + j] +=
                                rstd * (dxhat - sum_dxhat / cn - xhat * sum_dxhat_xhat / cn);
                        }
                    }
                });
                acc(*gain, &mut |gg| {
                    for (r, &(mean, rstd)) in stats.iter().enumerate() {
                        for j in 0..c {
                            gg[j] += g[r * c + j] * (vx[r * c + j] - mean) * rstd;
                        }
                    }
                });
                acc(*bias, &mut |gb| {
                    for chunk in g.chunks(c) {
                        gb.iter_mut().zip(chunk).for_each(|(x, &d)| *x += d);
                    }
                });
            }
            &Op::Softmax(a) => {
                let y = node.value.data();
                let c = node.value.cols();
                acc(a, &mut |ga| {
                    for ((grow, yrow), drow) in ga.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                        let dot: T = yrow.iter().zip(drow).map(|(&p, &d)| p * d).sum();
                        for j in 0..c {
                            grow[j] += yrow[j] * (drow[j] - dot);
                        }
                    }
                });
            }
            &Op::LogSoftmax(a) => {
                let y = node.value.data();
                let c = node.value.cols();
                acc(a, &mut |ga| {
                    for ((grow, yrow), drow) in ga.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                        let s: T = drow.iter().copied().sum();
                        for j in 0..c {
                            grow[j] += drow[j] - yrow[j].exp() * s;
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let dim = nodes[table.0].value.cols();
                acc(*table, &mut |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..dim {
                            gt[id * dim + j] += g[r * dim + j];
                        }
                    }
                });
            }
            &Op::Unfold {
                x,
                kernel,
                pad_left,
            } => {
                let (len, c) = (nodes[x.0].value.rows(), nodes[x.0].value.cols());
                let out_len = node.value.rows();
                acc(x, &mut |gx| {
                    for t in 0..out_len {
                        for j in 0..kernel {
                            let pos = t + j;
                            if pos < pad_left || pos - pad_left >= len {
                                continue;
                            }
                            let s = pos - pad_left;
                            let src = t * kernel * c + j * c;
                            for q in 0..c {
                                gx[s * c + q] += g[src + q];
                            }
                        }
                    }
                });
            }
            &Op::SliceRows { x, start } => {
                let c = nodes[x.0].value.cols();
                acc(x, &mut |gx| {
                    for (dst, &d) in gx[start * c..start * c + g.len()].iter_mut().zip(g) {
                        *dst += d;
                    }
                });
            }
            &Op::SliceCols { x, start } => {
                let c = nodes[x.0].value.cols();
                let w = node.value.cols();
                acc(x, &mut |gx| {
                    for (r, drow) in g.chunks(w.max(1)).enumerate() {
                        for j in 0..w {
                            gx[r * c + start + j] += drow[j];
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = nodes[p.0].value.len();
                    let src = &g[offset..offset + n];
                    acc(p, &mut |gp| gp.iter_mut().zip(src).for_each(|(x, &d)| *x += d));
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut col = 0;
                for &p in parts {
                    let pc = nodes[p.0].value.cols();
                    acc(p, &mut |gp| {
                        for (r, grow) in gp.chunks_mut(pc.max(1)).enumerate() {
                            for j in 0..pc {
                                grow[j] += g[r * total + col + j];
                            }
                        }
                    });
                    col += pc;
                }
            }
            &Op::PadRows { x, before } => {
                let c = nodes[x.0].value.cols();
                let n = nodes[x.0].value.len();
                acc(x, &mut |gx| {
                    for (dst, &d) in gx.iter_mut().zip(&g[before * c..before * c + n]) {
                        *dst += d;
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = nodes[logits.0].value.cols();
                let scale = g[0] / T::cast(targets.len() as f64);
                acc(*logits, &mut |gl| {
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { T::one() } else { T::zero() };
                            gl[r * c + j] += (probs[r * c + j] - onehot) * scale;
                        }
                    }
                });
            }
            &Op::Sum(a) => {
                acc(a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0]));
            }
            &Op::Mean(a) => {
                let n = T::cast(nodes[a.0].value.len().max(1) as f64);
                acc(a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0] / n));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetric_logits() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Array::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let y = t.softmax(x, None);
        assert_eq!(t.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn cross_entropy_gradient_is_p_minus_onehot() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Array::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let loss = t.cross_entropy(x, &[0]).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[-0.5, 0.5]);
        assert!((t.scalar(loss) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Array::matrix(2, 3, vec![1.0; 6]).unwrap());
        let y = t.softmax(x, Some(0));
        assert_eq!(t.value(y).row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(t.value(y).row(1), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut t = Tape::<f32>::new();
        let a = t.leaf(Array::zeros(vec![2, 3]));
        let b = t.leaf(Array::zeros(vec![2, 3]));
        let err = t.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn shared_param_binding() {
        let mut store = ParamStore::<f64>::new();
        let w = store.insert_filled("w", vec![1, 1], 3.0).unwrap();
        let mut t = Tape::new();
        let a = t.param(&store, w);
        let b = t.param(&store, w);
        assert_eq!(a, b);
        let y = t.mul(a, b).unwrap();
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.param_grads(1).get(w).unwrap(), &[6.0]);
    }

    #[test]
    fn inference_tape_records_no_grads() {
        let mut store = ParamStore::<f32>::new();
        let w = store.insert_filled("w", vec![1], 2.0).unwrap();
        let mut t = Tape::inference();
        let p = t.param(&store, w);
        let s = t.sum(p);
        t.backward(s).unwrap();
        assert!(t.param_grads(1).get(w).is_none());
    }
}
