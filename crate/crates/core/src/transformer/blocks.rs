//! Stand-alone sublayers: the simplified MLP₀ / Attn₀ blocks, positional
//! calibration and rotary embedding.

use crate::error::{Error, Result};
use crate::numerics::{apply_activation, Activation, Matrix};

use super::config::Calibration;

/// `φ(X·W_up)·W_down` with no normalization and no residual path.
pub fn mlp0_block(x: &Matrix, w_up: &Matrix, w_down: &Matrix, activation: Activation) -> Result<Matrix> {
    if w_up.cols() != w_down.rows() {
        return Err(Error::dims("mlp0_block hidden width", w_up.cols(), w_down.rows()));
    }
    let pre = x.matmul(w_up)?;
    apply_activation(activation, &pre).matmul(w_down)
}

/// Causal running mean: row `i` (1-based) is `(1/i)·Σ_{j≤i} x_j`.
pub fn attn0_block(x: &Matrix) -> Result<Matrix> {
    if x.rows() == 0 {
        return Err(Error::invalid("attn0_block needs at least one row"));
    }
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let mut acc = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        let inv = 1.0 / (i + 1) as f64;
        for ((a, &v), o) in acc.iter_mut().zip(x.row(i)).zip(out.row_mut(i)) {
            *a += v;
            *o = *a * inv;
        }
    }
    Ok(out)
}

/// Scale for 1-based position `i` under a calibration mode.
#[inline]
pub fn calibration_factor(mode: Calibration, position: usize, max_t: usize) -> f64 {
    match mode {
        Calibration::None => 1.0,
        Calibration::Amplify => (position as f64).sqrt(),
        Calibration::Attenuate => (position as f64 / max_t as f64).sqrt(),
    }
}

/// Multiply row `i` (1-based) of the aggregated attention output by `√i`
/// (amplify) or `√(i/max_t)` (attenuate).
pub fn calibrate_attention_output(o: &Matrix, mode: Calibration, max_t: usize) -> Result<Matrix> {
    calibrate_from(o, mode, max_t, 1)
}

/// As [`calibrate_attention_output`] with row 0 at 1-based `first_position`.
pub(crate) fn calibrate_from(o: &Matrix, mode: Calibration, max_t: usize, first_position: usize) -> Result<Matrix> {
    if mode == Calibration::Attenuate && max_t == 0 {
        return Err(Error::invalid("attenuation needs max_t > 0"));
    }
    let mut out = o.clone();
    if mode == Calibration::None {
        return Ok(out);
    }
    for r in 0..out.rows() {
        let s = calibration_factor(mode, first_position + r, max_t);
        for v in out.row_mut(r) {
            *v *= s;
        }
    }
    Ok(out)
}

/// Precomputed rotary angles for positions `0..len` and one head width.
#[derive(Debug, Clone)]
pub struct RopeTable {
    half: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl RopeTable {
    pub fn new(len: usize, d_head: usize, base: f64) -> Self {
        let half = d_head / 2;
        let inv_freq: Vec<f64> = (0..half)
            .map(|i| base.powf(-((2 * i) as f64) / d_head as f64))
            .collect();
        let mut cos = Vec::with_capacity(len * half);
        let mut sin = Vec::with_capacity(len * half);
        for p in 0..len {
            for f in &inv_freq {
                let (s, c) = (p as f64 * f).sin_cos();
                cos.push(c);
                sin.push(s);
            }
        }
        Self { half, cos, sin }
    }

    /// Rotate each adjacent pair `(2k, 2k+1)` of row `r` by the angle of
    /// position `first_position + r`.
    pub fn apply(&self, x: &mut Matrix, first_position: usize) {
        debug_assert_eq!(x.cols(), 2 * self.half);
        for r in 0..x.rows() {
            let p = first_position + r;
            let cos = &self.cos[p * self.half..(p + 1) * self.half];
            let sin = &self.sin[p * self.half..(p + 1) * self.half];
            let row = x.row_mut(r);
            for k in 0..self.half {
                let (a, b) = (row[2 * k], row[2 * k + 1]);
                row[2 * k] = a * cos[k] - b * sin[k];
                row[2 * k + 1] = a * sin[k] + b * cos[k];
            }
        }
    }
}
