//! Monte-Carlo runs on stacks of the simplified MLP₀ and Attn₀ blocks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{intra_curve_from, ContractionCurve, ProbeBatch, ProbeSequence, SimilarityStat};
use crate::error::{Error, Result};
use crate::numerics::{Activation, Matrix, RngStream, Tensor};
use crate::transformer::attn0_block;

/// Weights of one MLP₀ block `φ(X·W_up)·W_down`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp0Weights {
    pub w_up: Tensor,
    pub w_down: Tensor,
    pub activation: Activation,
}

impl Mlp0Weights {
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let act = self.activation;
        x.matmul_tensor(&self.w_up)?.map(|v| act.apply(v)).matmul_tensor(&self.w_down)
    }
}

/// Square MLP₀ weights with entries `N(0, 1/d)`, keeping activations at unit
/// scale through depth. Cosines do not depend on this scale for ReLU; for
/// tanh it keeps pre-activations out of the linear regime.
pub fn mlp0_weights(d: usize, activation: Activation, seed: u64, layer: u64) -> Mlp0Weights {
    let std = 1.0 / (d as f64).sqrt();
    let draw = |slot: u64| {
        let mut rng = RngStream::new(seed, 2 * layer + slot);
        let data = (0..d * d).map(|_| (std * rng.standard_normal()) as f32).collect();
        Tensor::from_vec(d, d, data).expect("sized above")
    };
    Mlp0Weights {
        w_up: draw(0),
        w_down: draw(1),
        activation,
    }
}

#[derive(Debug, Clone)]
pub enum SimpleBlock {
    Mlp0(Mlp0Weights),
    /// Causal prefix mean.
    Attn0,
}

#[derive(Debug, Clone, Default)]
pub struct SimpleStack {
    pub blocks: Vec<SimpleBlock>,
}

impl SimpleStack {
    pub fn attn0(depth: usize) -> Self {
        Self {
            blocks: vec![SimpleBlock::Attn0; depth],
        }
    }

    /// Input followed by the output of every block.
    pub fn states(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        let mut out = Vec::with_capacity(self.blocks.len() + 1);
        out.push(x.clone());
        for b in &self.blocks {
            let prev = out.last().expect("non-empty");
            let next = match b {
                SimpleBlock::Mlp0(w) => w.apply(prev)?,
                SimpleBlock::Attn0 => attn0_block(prev)?,
            };
            out.push(next);
        }
        Ok(out)
    }

    /// Intra-sequence similarity after every block of the stack.
    pub fn intra_curve(&self, batch: &ProbeBatch) -> Result<ContractionCurve> {
        intra_curve_from(batch, self.blocks.len() + 1, |seq| match seq {
            ProbeSequence::Vectors(v) => self.states(&v),
            ProbeSequence::Tokens(_) => Err(Error::invalid("simple stacks take vector batches")),
        })
    }
}

fn unit_normal(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
    let mut data = vec![0.0; rows * cols];
    rng.fill_normal(&mut data, 0.0, 1.0);
    Matrix::from_vec(rows, cols, data).expect("sized above")
}

fn row_cosines(a: &Matrix, b: &Matrix) -> Vec<f64> {
    a.row_iter()
        .zip(b.row_iter())
        .map(|(x, y)| {
            let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            (dot / (nx * ny)).clamp(-1.0, 1.0)
        })
        .collect()
}

/// Cosine between the images of `n_pairs` independent standard-Gaussian
/// input pairs after each of `depth` shared MLP₀ layers (`depth` entries).
pub fn mlp0_depth_curve(
    d: usize,
    n_pairs: usize,
    depth: usize,
    activation: Activation,
    seed: u64,
) -> Result<Vec<SimilarityStat>> {
    if d == 0 || n_pairs < 2 || depth == 0 {
        return Err(Error::invalid("mlp0_depth_curve needs d > 0, n_pairs >= 2, depth >= 1"));
    }
    let mut rng = RngStream::new(seed, 1 << 20);
    let mut x = unit_normal(n_pairs, d, &mut rng);
    let mut y = unit_normal(n_pairs, d, &mut rng);
    let mut out = Vec::with_capacity(depth);
    for l in 0..depth {
        let w = mlp0_weights(d, activation, seed, l as u64);
        x = w.apply(&x)?;
        y = w.apply(&y)?;
        out.push(SimilarityStat::from_sample(&row_cosines(&x, &y)));
    }
    Ok(out)
}

/// Shared first ReLU MLP₀ layer followed by either a second MLP₀ or Attn₀.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prop2Result {
    /// Last tokens of different sequences after the shared layer.
    pub first_layer: SimilarityStat,
    /// After a second MLP₀ on those tokens.
    pub mlp_mlp: SimilarityStat,
    /// After Attn₀ over all `t` positions (the last position's prefix mean).
    pub attn_mlp: SimilarityStat,
    pub t: usize,
    pub n_seqs: usize,
}

/// `n_seqs` sequences of `t` standard-Gaussian tokens in `d` dimensions.
pub fn prop2_experiment(d: usize, t: usize, n_seqs: usize, seed: u64) -> Result<Prop2Result> {
    if n_seqs < 2 || t == 0 || d == 0 {
        return Err(Error::invalid("prop2_experiment needs n_seqs >= 2, t >= 1, d >= 1"));
    }
    let first = mlp0_weights(d, Activation::Relu, seed, 0);
    let second = mlp0_weights(d, Activation::Relu, seed, 1);
    let rows = (0..n_seqs)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, (1 << 21) + i as u64);
            let h = first.apply(&unit_normal(t, d, &mut rng))?;
            let last = h.row(t - 1).to_vec();
            let mut mean = vec![0.0; d];
            for r in h.row_iter() {
                for (m, v) in mean.iter_mut().zip(r) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= t as f64);
            Ok((last, mean))
        })
        .collect::<Result<Vec<_>>>()?;
    let last = Matrix::from_rows(&rows.iter().map(|r| &r.0).collect::<Vec<_>>())?;
    let pooled = Matrix::from_rows(&rows.iter().map(|r| &r.1).collect::<Vec<_>>())?;
    let stat = |m: &Matrix| -> Result<SimilarityStat> {
        Ok(SimilarityStat::from_sample(&crate::numerics::pairwise_cosine(m)?))
    };
    Ok(Prop2Result {
        first_layer: stat(&last)?,
        mlp_mlp: stat(&second.apply(&last)?)?,
        attn_mlp: stat(&pooled)?,
        t,
        n_seqs,
    })
}

/// Intra-sequence similarity through `depth` Attn₀ blocks on standard-Gaussian
/// sequences (`depth + 1` entries, entry 0 being the raw input).
pub fn attn0_stack_intra_curve(t: usize, d: usize, n_seqs: usize, depth: usize, seed: u64) -> Result<ContractionCurve> {
    let batch = ProbeBatch::vectors_with_std(n_seqs, t, d, seed, 1.0)?;
    SimpleStack::attn0(depth).intra_curve(&batch)
}
