//! Seeded random generation and the dense kernels the model and probes share.

mod matrix;
mod rng;

pub use matrix::{Matrix, Tensor};
pub use rng::{RngStream, StreamId};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default epsilon for both LayerNorm and RMSNorm.
pub const NORM_EPS: f64 = 1e-5;

pub fn gaussian_matrix(
    rng: &mut RngStream,
    rows: usize,
    cols: usize,
    mean: f64,
    std: f64,
) -> Result<Matrix> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::invalid(format!("std must be finite and >= 0, got {std}")));
    }
    let mut data = vec![0.0; rows * cols];
    rng.fill_normal(&mut data, mean, std);
    Matrix::from_vec(rows, cols, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Gelu,
    Tanh,
    Silu,
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            // exact x·Φ(x), not the tanh approximation
            Activation::Gelu => x * normal_cdf(x),
            Activation::Tanh => x.tanh(),
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }

    pub fn is_odd(self) -> bool {
        matches!(self, Activation::Tanh)
    }
}

pub fn apply_activation(kind: Activation, x: &Matrix) -> Matrix {
    x.map(|v| kind.apply(v))
}

/// Row-wise softmax with max subtraction. With `causal`, row `i` covers
/// columns `0..=i` and everything right of the diagonal is exactly zero.
pub fn softmax_rows(x: &Matrix, causal: bool) -> Result<Matrix> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let width = if causal { (i + 1).min(x.cols()) } else { x.cols() };
        softmax_into(&x.row(i)[..width], &mut out.row_mut(i)[..width])
            .map_err(|_| Error::EmptySoftmaxRow { row: i })?;
    }
    Ok(out)
}

/// Softmax of `src` written into `dst`. Fails if no entry is finite.
pub(crate) fn softmax_into(src: &[f64], dst: &mut [f64]) -> std::result::Result<(), ()> {
    let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(());
    }
    let mut sum = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        let e = (s - max).exp();
        *d = e;
        sum += e;
    }
    let inv = 1.0 / sum;
    for d in dst.iter_mut() {
        *d *= inv;
    }
    Ok(())
}

pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Result<Vec<f64>> {
    if gamma.len() != x.len() || beta.len() != x.len() {
        return Err(Error::dims("layer_norm", x.len(), format!("gamma {}, beta {}", gamma.len(), beta.len())));
    }
    let mut out = vec![0.0; x.len()];
    layer_norm_into(x, |j| gamma[j], |j| beta[j], eps, &mut out);
    Ok(out)
}

pub fn rms_norm(x: &[f64], gamma: &[f64], eps: f64) -> Result<Vec<f64>> {
    if gamma.len() != x.len() {
        return Err(Error::dims("rms_norm", x.len(), gamma.len()));
    }
    let mut out = vec![0.0; x.len()];
    rms_norm_into(x, |j| gamma[j], eps, &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn layer_norm_into(
    x: &[f64],
    gamma: impl Fn(usize) -> f64,
    beta: impl Fn(usize) -> f64,
    eps: f64,
    out: &mut [f64],
) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let denom = (var + eps).sqrt();
    for (j, (o, &v)) in out.iter_mut().zip(x).enumerate() {
        // zero variance with eps = 0 leaves 0/0; the centered value is 0 anyway
        let centered = v - mean;
        let z = if denom > 0.0 { centered / denom } else { 0.0 };
        *o = gamma(j) * z + beta(j);
    }
}

#[inline]
pub(crate) fn rms_norm_into(x: &[f64], gamma: impl Fn(usize) -> f64, eps: f64, out: &mut [f64]) {
    let n = x.len() as f64;
    let ms = x.iter().map(|v| v * v).sum::<f64>() / n;
    let denom = (ms + eps).sqrt();
    for (j, (o, &v)) in out.iter_mut().zip(x).enumerate() {
        let z = if denom > 0.0 { v / denom } else { 0.0 };
        *o = gamma(j) * z;
    }
}

fn unit_rows(a: &Matrix) -> Result<Matrix> {
    let mut u = a.clone();
    for i in 0..u.rows() {
        let row = u.row_mut(i);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNormRow { row: i });
        }
        for x in row.iter_mut() {
            *x /= norm;
        }
    }
    Ok(u)
}

/// Cosine similarity of every unordered row pair, in order
/// (0,1), (0,2), …, (0,N−1), (1,2), ….
pub fn pairwise_cosine(a: &Matrix) -> Result<Vec<f64>> {
    let n = a.rows();
    if n < 2 {
        return Err(Error::invalid(format!("pairwise_cosine needs at least 2 rows, got {n}")));
    }
    let u = unit_rows(a)?;
    let gram = u.matmul_t(&u)?;
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(gram.get(i, j).clamp(-1.0, 1.0));
        }
    }
    Ok(out)
}

/// Mean off-diagonal cosine computed as `(‖Σu‖² − N) / (N(N−1))` on unit rows.
/// O(N·d); agrees with the mean of [`pairwise_cosine`] up to rounding.
pub fn mean_pairwise_cosine(a: &Matrix) -> Result<f64> {
    let n = a.rows();
    if n < 2 {
        return Err(Error::invalid(format!("mean_pairwise_cosine needs at least 2 rows, got {n}")));
    }
    let mut sum = vec![0.0; a.cols()];
    for (i, row) in a.row_iter().enumerate() {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNormRow { row: i });
        }
        for (s, x) in sum.iter_mut().zip(row) {
            *s += x / norm;
        }
    }
    let sq: f64 = sum.iter().map(|s| s * s).sum();
    let n = n as f64;
    Ok((sq - n) / (n * (n - 1.0)))
}

/// Mean and population standard deviation, accumulated with Neumaier sums.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = kahan_sum(xs.iter().copied()) / n;
    let var = kahan_sum(xs.iter().map(|x| (x - mean) * (x - mean))) / n;
    (mean, var.sqrt())
}

pub(crate) fn kahan_sum(iter: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for x in iter {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}
