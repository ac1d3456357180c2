use crate::error::{mismatch, NnError, Result};
use crate::scalar::Scalar;

/// Dense row-major array. Every operation in this crate views an array as a
/// matrix: the last dimension is the column count and all leading dimensions
/// fold into rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Array<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Array<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NnError::InvalidArgument {
                op: "array",
                message: format!("shape {:?} needs {} values, got {}", shape, expected, data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn rows(&self) -> usize {
        let c = self.cols();
        if c == 0 {
            0
        } else {
            self.data.len() / c
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(mismatch("reshape", &self.shape, &shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element-type conversion, used to move between training (`f32`) and
    /// verification (`f64`) precision.
    pub fn cast<U: Scalar>(&self) -> Array<U> {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::cast(v.as_f64())).collect(),
        }
    }
}

/// `out = a * op(b)` (+ `out` when `accumulate`), `a` is `m x k`.
/// With `trans_b`, `b` is stored `n x k`; otherwise `k x n`.
pub fn matmul_into<T: Scalar>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    trans_b: bool,
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { T::one() } else { T::zero() };
    if k == 0 {
        if !accumulate {
            out.iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the debug assertions above state the extents the strides walk.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out (k x n) += a^T * d` where `a` is `m x k` and `d` is `m x n`.
pub fn matmul_tn_acc<T: Scalar>(a: &[T], d: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    // SAFETY: a is m*k, d is m*n, out is k*n.
    unsafe {
        T::gemm(
            k,
            m,
            n,
            T::one(),
            a.as_ptr(),
            1,
            k as isize,
            d.as_ptr(),
            n as isize,
            1,
            T::one(),
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn softmax_row<T: Scalar>(row: &mut [T]) {
    let max = row
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    if max == T::neg_infinity() {
        return;
    }
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn log_softmax_row<T: Scalar>(row: &mut [T]) {
    let max = row
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalizes `x` in place and returns `(mean, rstd)`; `gain`/`bias` are applied.
pub fn layer_norm_row<T: Scalar>(x: &mut [T], gain: &[T], bias: &[T]) -> (T, T) {
    let n = T::cast(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let rstd = T::one() / (var + T::cast(LAYER_NORM_EPS)).sqrt();
    for ((v, &g), &b) in x.iter_mut().zip(gain).zip(bias) {
        *v = (*v - mean) * rstd * g + b;
    }
    (mean, rstd)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::cast(GELU_C);
    let inner = c * (x + T::cast(0.044715) * x * x * x);
    T::cast(0.5) * x * (T::one() + inner.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::cast(GELU_C);
    let x3 = x * x * x;
    let inner = c * (x + T::cast(0.044715) * x3);
    let t = inner.tanh();
    let dinner = c * (T::one() + T::cast(3.0 * 0.044715) * x * x);
    T::cast(0.5) * (T::one() + t) + T::cast(0.5) * x * (T::one() - t * t) * dinner
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_naive() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5).collect(); // 3x4
        let mut out = vec![0.0; 8];
        matmul_into(&a, &b, &mut out, 2, 3, 4, false, false);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum();
                assert_eq!(out[i * 4 + j], want);
            }
        }
        // b^T stored 4x3
        let bt: Vec<f64> = (0..4)
            .flat_map(|j| (0..3).map(move |p| (p * 4 + j) as f64 * 0.5))
            .collect();
        let mut out2 = vec![0.0; 8];
        matmul_into(&a, &bt, &mut out2, 2, 3, 4, true, false);
        assert_eq!(out, out2);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut row = vec![0.0f64, 0.0];
        softmax_row(&mut row);
        assert_eq!(row, vec![0.5, 0.5]);
    }

    #[test]
    fn bad_shape_rejected() {
        assert!(Array::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
