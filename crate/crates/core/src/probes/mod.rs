//! Random probe batches and the representation statistics measured on them.
//!
//! Sequences are regenerated on demand from `(seed, index)`, so a batch of
//! any size costs nothing to hold and any subset can be evaluated
//! independently. Evaluation is parallel over sequences; results are
//! collected in index order, so every statistic is independent of the worker
//! count.

mod simple;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{mean_pairwise_cosine, mean_std, pairwise_cosine, Matrix, RngStream};
use crate::stats::fisher_z_onesample;
use crate::transformer::{
    apply_norm, argmax, attention_sublayer, embed_input, forward_with, last_position_outputs, logits, ForwardOptions,
    ModelConfig, ModelInput, WeightSet,
};

pub use simple::{
    attn0_stack_intra_curve, mlp0_depth_curve, mlp0_weights, prop2_experiment, Mlp0Weights, Prop2Result,
    SimpleBlock, SimpleStack,
};

/// Probe sequences live on RNG streams far above the weight streams.
const PROBE_STREAM_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeMode {
    Tokens,
    Vectors,
}

/// `n` random sequences of length `t`. Token ids are uniform over
/// `[0, width)`; vector entries are `N(0, std²)` in `width` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeBatch {
    pub mode: ProbeMode,
    pub n: usize,
    pub t: usize,
    /// Vocabulary size (tokens) or vector dimension (vectors).
    pub width: usize,
    pub seed: u64,
    /// Index of the first sequence; lets disjoint slices share a seed.
    #[serde(default)]
    pub offset: usize,
    #[serde(default = "default_std")]
    pub std: f64,
}

fn default_std() -> f64 {
    0.02
}

/// One materialized probe sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbeSequence {
    Tokens(Vec<usize>),
    Vectors(Matrix),
}

impl ProbeSequence {
    pub fn as_input(&self) -> ModelInput<'_> {
        match self {
            ProbeSequence::Tokens(t) => ModelInput::Tokens(t),
            ProbeSequence::Vectors(v) => ModelInput::Vectors(v),
        }
    }
}

impl ProbeBatch {
    pub fn tokens(n: usize, t: usize, vocab: usize, seed: u64) -> Result<Self> {
        Self::checked(ProbeMode::Tokens, n, t, vocab, seed, 0.02)
    }

    /// Gaussian vectors with the embedding's init std.
    pub fn vectors(n: usize, t: usize, d: usize, seed: u64) -> Result<Self> {
        Self::checked(ProbeMode::Vectors, n, t, d, seed, 0.02)
    }

    pub fn vectors_with_std(n: usize, t: usize, d: usize, seed: u64, std: f64) -> Result<Self> {
        Self::checked(ProbeMode::Vectors, n, t, d, seed, std)
    }

    /// Batch matching a model's input mode.
    pub fn for_model(config: &ModelConfig, n: usize, t: usize, seed: u64) -> Result<Self> {
        match config.input_mode {
            crate::transformer::InputMode::Tokens => Self::tokens(n, t, config.vocab_size, seed),
            crate::transformer::InputMode::Vectors => {
                Self::vectors_with_std(n, t, config.d_model, seed, config.init_std)
            }
        }
    }

    fn checked(mode: ProbeMode, n: usize, t: usize, width: usize, seed: u64, std: f64) -> Result<Self> {
        if n == 0 || t == 0 || width == 0 {
            return Err(Error::invalid(format!("probe batch needs n, t, width > 0 (got {n}, {t}, {width})")));
        }
        if !(std > 0.0 && std.is_finite()) {
            return Err(Error::invalid(format!("probe std must be positive, got {std}")));
        }
        Ok(Self {
            mode,
            n,
            t,
            width,
            seed,
            offset: 0,
            std,
        })
    }

    /// Sequences `start..start + len` of this batch as a batch of their own.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.n {
            return Err(Error::invalid(format!("slice {start}+{len} outside batch of {}", self.n)));
        }
        Ok(Self {
            n: len,
            offset: self.offset + start,
            ..self.clone()
        })
    }

    pub fn sequence(&self, i: usize) -> ProbeSequence {
        let mut rng = RngStream::new(self.seed, PROBE_STREAM_BASE + (self.offset + i) as u64);
        match self.mode {
            ProbeMode::Tokens => ProbeSequence::Tokens((0..self.t).map(|_| rng.below(self.width)).collect()),
            ProbeMode::Vectors => {
                let mut data = vec![0.0; self.t * self.width];
                rng.fill_normal(&mut data, 0.0, self.std);
                ProbeSequence::Vectors(Matrix::from_vec(self.t, self.width, data).expect("sized above"))
            }
        }
    }

    /// Content hash identifying the exact sequences of this batch.
    pub fn batch_id(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(format!(
            "probe-batch/{:?}/{}/{}/{}/{}/{}/{:e}",
            self.mode, self.n, self.t, self.width, self.seed, self.offset, self.std
        ));
        u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
    }

    /// Whether this batch can be fed to a model with `config`.
    pub fn check_model(&self, config: &ModelConfig) -> Result<()> {
        match self.mode {
            ProbeMode::Tokens if self.width > config.vocab_size => Err(Error::invalid(format!(
                "probe vocabulary {} exceeds model vocabulary {}",
                self.width, config.vocab_size
            ))),
            ProbeMode::Vectors if self.width != config.d_model => {
                Err(Error::dims("probe vector width", config.d_model, self.width))
            }
            _ if self.t > config.max_seq => Err(Error::SequenceTooLong {
                len: self.t,
                max: config.max_seq,
            }),
            _ => Ok(()),
        }
    }
}

/// Next-token argmax counts over a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenHistogram {
    pub counts: BTreeMap<usize, u64>,
    pub n: u64,
    pub vocab: usize,
}

impl TokenHistogram {
    pub fn from_predictions(preds: &[usize], vocab: usize) -> Self {
        let mut counts = BTreeMap::new();
        for &p in preds {
            *counts.entry(p).or_insert(0) += 1;
        }
        Self {
            counts,
            n: preds.len() as u64,
            vocab,
        }
    }

    /// `(token, count)` by descending count, ties by ascending id.
    pub fn top_k(&self, k: usize) -> Vec<(usize, u64)> {
        let mut v: Vec<(usize, u64)> = self.counts.iter().map(|(&t, &c)| (t, c)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v.truncate(k);
        v
    }

    pub fn top1(&self) -> Option<(usize, u64)> {
        self.top_k(1).into_iter().next()
    }
}

/// Histogram of `n` direct uniform draws over `vocab` tokens.
pub fn uniform_baseline_histogram(n: usize, vocab: usize, seed: u64) -> Result<TokenHistogram> {
    if vocab == 0 {
        return Err(Error::invalid("vocabulary must be non-empty"));
    }
    let mut rng = RngStream::new(seed, PROBE_STREAM_BASE - 1);
    let draws: Vec<usize> = (0..n).map(|_| rng.below(vocab)).collect();
    Ok(TokenHistogram::from_predictions(&draws, vocab))
}

/// Expected largest cell of `n` uniform draws over `vocab` cells, using
/// `E[max] = Σ_{k≥1} P(max ≥ k)` with Poisson cells: `P(max < k) ≈ F(k−1)^V`.
pub fn expected_uniform_top1(n: usize, vocab: usize) -> f64 {
    let lambda = n as f64 / vocab as f64;
    let mut expected = 0.0;
    let mut pmf = (-lambda).exp();
    let mut cdf = pmf;
    for k in 1..=n {
        let below = (vocab as f64 * cdf.ln()).exp();
        let tail = 1.0 - below;
        expected += tail;
        if tail < 1e-15 && k as f64 > lambda {
            break;
        }
        pmf *= lambda / k as f64;
        cdf = (cdf + pmf).min(1.0);
    }
    expected
}

/// Outcome of the next-token probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenBiasResult {
    pub histogram: TokenHistogram,
    /// Token whose unembedding best aligns with the mean final-norm last-token
    /// representation.
    pub direction_token: usize,
}

/// Per-sequence results, in batch order, evaluated in parallel.
pub(crate) fn map_batch<R: Send>(batch: &ProbeBatch, f: impl Fn(ProbeSequence) -> Result<R> + Sync) -> Result<Vec<R>> {
    (0..batch.n).into_par_iter().map(|i| f(batch.sequence(i))).collect()
}

/// Sequences per batched last-layer evaluation.
const LAST_ROW_CHUNK: usize = 64;

/// Final-norm output at the last position of every sequence (N×d).
fn final_last_rows(config: &ModelConfig, weights: &WeightSet, batch: &ProbeBatch) -> Result<Matrix> {
    batch.check_model(config)?;
    let n_chunks = batch.n.div_ceil(LAST_ROW_CHUNK);
    let chunks = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let range = c * LAST_ROW_CHUNK..((c + 1) * LAST_ROW_CHUNK).min(batch.n);
            // without attention the last position sees only its own input
            let seqs: Vec<ProbeSequence> = range
                .map(|i| {
                    let seq = batch.sequence(i);
                    if config.ablation.has_attention() { seq } else { last_element(seq) }
                })
                .collect();
            let inputs: Vec<ModelInput> = seqs.iter().map(ProbeSequence::as_input).collect();
            last_position_outputs(config, weights, &inputs)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<&[f64]> = chunks.iter().flat_map(|m| m.row_iter()).collect();
    Matrix::from_rows(&rows)
}

fn last_element(seq: ProbeSequence) -> ProbeSequence {
    match seq {
        ProbeSequence::Tokens(t) => ProbeSequence::Tokens(vec![*t.last().expect("non-empty")]),
        ProbeSequence::Vectors(v) => {
            let t = v.rows();
            ProbeSequence::Vectors(v.slice_rows(t - 1, t))
        }
    }
}

const LOGIT_CHUNK: usize = 128;

/// Argmax of the last-position logits for every sequence (lowest id on ties).
pub fn next_token_predictions(config: &ModelConfig, weights: &WeightSet, batch: &ProbeBatch) -> Result<Vec<usize>> {
    Ok(token_bias_probe(config, weights, batch)?.1)
}

pub fn next_token_histogram(config: &ModelConfig, weights: &WeightSet, batch: &ProbeBatch) -> Result<TokenHistogram> {
    Ok(token_bias_probe(config, weights, batch)?.0.histogram)
}

/// Histogram plus contraction direction, from a single pass.
pub fn token_bias(config: &ModelConfig, weights: &WeightSet, batch: &ProbeBatch) -> Result<TokenBiasResult> {
    Ok(token_bias_probe(config, weights, batch)?.0)
}

fn token_bias_probe(
    config: &ModelConfig,
    weights: &WeightSet,
    batch: &ProbeBatch,
) -> Result<(TokenBiasResult, Vec<usize>)> {
    if batch.mode != ProbeMode::Tokens {
        return Err(Error::invalid("next-token probes need a token batch"));
    }
    let reps = final_last_rows(config, weights, batch)?;
    let chunks: Vec<(usize, usize)> = (0..reps.rows())
        .step_by(LOGIT_CHUNK)
        .map(|s| (s, (s + LOGIT_CHUNK).min(reps.rows())))
        .collect();
    let preds: Vec<Vec<usize>> = chunks
        .par_iter()
        .map(|&(s, e)| {
            let lg = logits(weights, &reps.slice_rows(s, e))?;
            Ok(lg.row_iter().map(argmax).collect())
        })
        .collect::<Result<_>>()?;
    let preds: Vec<usize> = preds.into_iter().flatten().collect();
    let (_, direction_token) = contraction_direction(&reps, weights)?;
    let histogram = TokenHistogram::from_predictions(&preds, config.vocab_size);
    Ok((TokenBiasResult { histogram, direction_token }, preds))
}

/// Mean of the representation rows and the token whose unembedding column
/// scores highest against it.
pub fn contraction_direction(reps: &Matrix, weights: &WeightSet) -> Result<(Vec<f64>, usize)> {
    if reps.rows() == 0 {
        return Err(Error::invalid("contraction_direction needs at least one row"));
    }
    let n = reps.rows() as f64;
    let mut dir = vec![0.0; reps.cols()];
    for row in reps.row_iter() {
        for (d, x) in dir.iter_mut().zip(row) {
            *d += x;
        }
    }
    dir.iter_mut().for_each(|d| *d /= n);
    let lg = logits(weights, &Matrix::from_vec(1, dir.len(), dir.clone())?)?;
    Ok((dir, argmax(lg.row(0))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerSelector {
    /// Residual stream after every block, layer 0 being the embedded input.
    EachLayer,
    /// Output of the final norm.
    FinalNorm,
}

/// Last-position representations: one N×d matrix per selected layer.
pub fn last_token_reps(
    config: &ModelConfig,
    weights: &WeightSet,
    batch: &ProbeBatch,
    selector: LayerSelector,
) -> Result<Vec<Matrix>> {
    batch.check_model(config)?;
    match selector {
        LayerSelector::FinalNorm => Ok(vec![final_last_rows(config, weights, batch)?]),
        LayerSelector::EachLayer => {
            let per_seq = map_batch(batch, |seq| {
                let seq = if config.ablation.has_attention() { seq } else { last_element(seq) };
                let opts = ForwardOptions {
                    hidden: true,
                    last_position_only: true,
                    ..ForwardOptions::default()
                };
                let tr = forward_with(config, weights, seq.as_input(), &opts)?;
                Ok(tr
                    .hidden
                    .iter()
                    .map(|h| h.row(h.rows() - 1).to_vec())
                    .collect::<Vec<_>>())
            })?;
            (0..=config.n_layers)
                .map(|l| {
                    let rows: Vec<&Vec<f64>> = per_seq.iter().map(|s| &s[l]).collect();
                    Matrix::from_rows(&rows)
                })
                .collect()
        }
    }
}

/// Mean/std of a similarity sample and its Fisher-z p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityStat {
    pub mean: f64,
    pub std: f64,
    pub p_value: Option<f64>,
    pub underflow: bool,
}

impl SimilarityStat {
    pub fn from_sample(sims: &[f64]) -> Self {
        let (mean, std) = mean_std(sims);
        // perfectly aligned pairs have no Fisher-z image
        let test = (sims.len() >= 2 && sims.iter().all(|s| s.abs() < 1.0))
            .then(|| fisher_z_onesample(sims).ok())
            .flatten();
        Self {
            mean,
            std,
            p_value: test.map(|t| t.p_value),
            underflow: test.is_some_and(|t| t.underflow),
        }
    }
}

/// Similarity statistics per layer (`n_layers + 1` entries).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionCurve {
    pub layers: Vec<SimilarityStat>,
    /// Statistics of the final-norm output, when measured.
    pub final_norm: Option<SimilarityStat>,
    pub n: usize,
    pub t: usize,
}

impl ContractionCurve {
    pub fn means(&self) -> Vec<f64> {
        self.layers.iter().map(|s| s.mean).collect()
    }
}

/// Pairwise cosine of last-token representations after every block, plus
/// the final-norm output.
pub fn contraction_curve(config: &ModelConfig, weights: &WeightSet, batch: &ProbeBatch) -> Result<ContractionCurve> {
    if batch.n < 2 {
        return Err(Error::invalid("contraction_curve needs at least 2 sequences"));
    }
    batch.check_model(config)?;
    let per_seq = map_batch(batch, |seq| {
        let seq = if config.ablation.has_attention() { seq } else { last_element(seq) };
        let opts = ForwardOptions {
            hidden: true,
            last_position_only: true,
            ..ForwardOptions::default()
        };
        let tr = forward_with(config, weights, seq.as_input(), &opts)?;
        let mut rows: Vec<Vec<f64>> = tr.hidden.iter().map(|h| h.row(h.rows() - 1).to_vec()).collect();
        let f = tr.final_hidden;
        rows.push(f.row(f.rows() - 1).to_vec());
        Ok(rows)
    })?;
    let stats = (0..config.n_layers + 2)
        .into_par_iter()
        .map(|l| {
            let rows: Vec<&Vec<f64>> = per_seq.iter().map(|s| &s[l]).collect();
            Ok(SimilarityStat::from_sample(&pairwise_cosine(&Matrix::from_rows(&rows)?)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut layers = stats;
    let final_norm = layers.pop();
    Ok(ContractionCurve {
        layers,
        final_norm,
        n: batch.n,
        t: batch.t,
    })
}

/// Off-diagonal mean pairwise cosine among the positions of each sequence,
/// averaged over sequences, per layer.
pub fn intra_sequence_curve(config: &ModelConfig, weights: &WeightSet, batch: &ProbeBatch) -> Result<ContractionCurve> {
    batch.check_model(config)?;
    let opts = ForwardOptions {
        hidden: true,
        ..ForwardOptions::default()
    };
    intra_curve_from(batch, config.n_layers + 1, |seq| {
        Ok(forward_with(config, weights, seq.as_input(), &opts)?.hidden)
    })
}

pub(crate) fn intra_curve_from(
    batch: &ProbeBatch,
    depth: usize,
    states: impl Fn(ProbeSequence) -> Result<Vec<Matrix>> + Sync,
) -> Result<ContractionCurve> {
    if batch.t < 2 {
        return Err(Error::invalid("intra-sequence similarity needs t >= 2"));
    }
    let per_seq = map_batch(batch, |seq| {
        states(seq)?.iter().map(mean_pairwise_cosine).collect::<Result<Vec<f64>>>()
    })?;
    let layers = (0..depth)
        .map(|l| {
            let vals: Vec<f64> = per_seq.iter().map(|s| s[l]).collect();
            SimilarityStat::from_sample(&vals)
        })
        .collect();
    Ok(ContractionCurve {
        layers,
        final_norm: None,
        n: batch.n,
        t: batch.t,
    })
}

/// Std, over sequences and features, of the first layer's aggregated attention
/// output (after calibration, before `W_O`) at each position.
pub fn positional_std_profile(config: &ModelConfig, weights: &WeightSet, batch: &ProbeBatch) -> Result<Vec<f64>> {
    if !config.ablation.has_attention() {
        return Err(Error::invalid("positional_std_profile needs an attention sublayer"));
    }
    batch.check_model(config)?;
    let opts = ForwardOptions {
        aggregated: true,
        stop_after: Some(1),
        ..ForwardOptions::default()
    };
    let sums = map_batch(batch, |seq| {
        let tr = forward_with(config, weights, seq.as_input(), &opts)?;
        let agg = &tr.aggregated[0];
        Ok(agg
            .row_iter()
            .map(|r| (r.iter().sum::<f64>(), r.iter().map(|x| x * x).sum::<f64>()))
            .collect::<Vec<_>>())
    })?;
    let count = (batch.n * config.d_model) as f64;
    Ok((0..batch.t)
        .map(|i| {
            let (s, s2) = sums.iter().fold((0.0, 0.0), |acc, v| (acc.0 + v[i].0, acc.1 + v[i].1));
            let mean = s / count;
            (s2 / count - mean * mean).max(0.0).sqrt()
        })
        .collect())
}

/// Std of the first layer's MLP pre-activation entries, with or without the
/// pre-MLP norm.
pub fn preactivation_std(
    config: &ModelConfig,
    weights: &WeightSet,
    batch: &ProbeBatch,
    with_norm: bool,
) -> Result<f64> {
    batch.check_model(config)?;
    let lw = &weights.layers[0];
    let sums = map_batch(batch, |seq| {
        let mut x = embed_input(config, weights, seq.as_input())?;
        if config.ablation.has_attention() {
            let h = apply_norm(&x, &lw.attn_norm, config.norm_kind, config.norm_eps);
            x = x.add(&attention_sublayer(&h, lw, config)?)?;
        }
        let h = if with_norm {
            apply_norm(&x, &lw.mlp_norm, config.norm_kind, config.norm_eps)
        } else {
            x
        };
        let w = lw.w_gate.as_ref().filter(|_| config.activation.is_gated()).unwrap_or(&lw.w_up);
        let pre = h.matmul_tensor(w)?;
        let d = pre.data();
        Ok((d.iter().sum::<f64>(), d.iter().map(|v| v * v).sum::<f64>(), d.len()))
    })?;
    let (s, s2, n) = sums.iter().fold((0.0, 0.0, 0usize), |a, v| (a.0 + v.0, a.1 + v.1, a.2 + v.2));
    let mean = s / n as f64;
    Ok((s2 / n as f64 - mean * mean).max(0.0).sqrt())
}
