//! Lineage test on identity dimensions.
//!
//! Each model's mean response to a shared probe batch picks out its top-m
//! "high-preference" output dimensions. On the dimensions both models share,
//! per-probe responses are compared with Kendall's τ; the τ sample is then
//! tested against τ values produced by the same pipeline on independent
//! Gaussian responses.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{mean_std, Matrix, RngStream, Tensor};
use crate::probes::{last_token_reps, LayerSelector, ProbeBatch};
use crate::stats::{kendall_tau, mann_whitney_u, welch_t_one_sided};
use crate::transformer::{logits, ModelConfig, WeightSet};

pub const DEFAULT_M: usize = 50;
pub const DEFAULT_ALPHA: f64 = 0.01;
/// Smallest null sample the resampling loop accepts.
pub const MIN_NULL_TAUS: usize = 30;
const MAX_NULL_DRAWS: usize = 10_000_000;
const NULL_STREAM_BASE: u64 = 1 << 48;
const PERTURB_STREAM_BASE: u64 = 1 << 44;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputKind {
    /// Final-norm output at the last position.
    #[default]
    FinalHidden,
    /// LM-head logits at the last position.
    Logits,
}

impl OutputKind {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "final-hidden" => Some(Self::FinalHidden),
            "logits" => Some(Self::Logits),
            _ => None,
        }
    }
}

/// Per-probe outputs of one model on one batch (N×d_out).
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    pub values: Matrix,
    pub batch_id: u64,
    pub model_id: String,
    pub output_kind: OutputKind,
}

impl ResponseMatrix {
    pub fn new(values: Matrix, batch_id: u64, model_id: impl Into<String>, output_kind: OutputKind) -> Result<Self> {
        if values.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("response matrix has non-finite entries"));
        }
        Ok(Self {
            values,
            batch_id,
            model_id: model_id.into(),
            output_kind,
        })
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn d_out(&self) -> usize {
        self.values.cols()
    }
}

/// A model to fingerprint, borrowed.
#[derive(Debug, Clone, Copy)]
pub struct ModelRef<'a> {
    pub config: &'a ModelConfig,
    pub weights: &'a WeightSet,
    pub id: &'a str,
}

/// Run a model over the batch and collect its responses.
pub fn response_matrix(model: ModelRef<'_>, batch: &ProbeBatch, kind: OutputKind) -> Result<ResponseMatrix> {
    let reps = last_token_reps(model.config, model.weights, batch, LayerSelector::FinalNorm)?
        .pop()
        .expect("one matrix");
    let values = match kind {
        OutputKind::FinalHidden => reps,
        OutputKind::Logits => logits(model.weights, &reps)?,
    };
    ResponseMatrix::new(values, batch.batch_id(), model.id, kind)
}

/// Column means `ḡ = (1/N) Σ g(x_i)`.
pub fn mean_output_vector(r: &ResponseMatrix) -> Vec<f64> {
    column_means(&r.values)
}

fn column_means(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for row in m.row_iter() {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let n = m.rows() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Indices of the `m` largest entries, by descending value with ties going to
/// the lower index.
pub fn top_m_dims(gbar: &[f64], m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > gbar.len() {
        return Err(Error::invalid(format!("m = {m} outside 1..={}", gbar.len())));
    }
    let mut idx: Vec<usize> = (0..gbar.len()).collect();
    idx.sort_by(|&a, &b| gbar[b].total_cmp(&gbar[a]).then(a.cmp(&b)));
    idx.truncate(m);
    Ok(idx)
}

/// Sorted intersection of two index sets.
pub fn identity_dims(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = a.iter().copied().filter(|x| b.contains(x)).collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn column(m: &Matrix, j: usize) -> Vec<f64> {
    m.row_iter().map(|r| r[j]).collect()
}

/// Kendall's τ between the two models' responses on each identity dimension.
pub fn correlation_distribution(a: &ResponseMatrix, b: &ResponseMatrix, dims: &[usize]) -> Result<Vec<f64>> {
    if a.batch_id != b.batch_id {
        return Err(Error::BatchMismatch {
            left: a.batch_id,
            right: b.batch_id,
        });
    }
    if a.values.shape() != b.values.shape() {
        return Err(Error::dims("response matrices", format!("{:?}", a.values.shape()), format!("{:?}", b.values.shape())));
    }
    if dims.is_empty() {
        return Err(Error::InsufficientOverlap);
    }
    if let Some(&j) = dims.iter().find(|&&j| j >= a.d_out()) {
        return Err(Error::invalid(format!("dimension {j} outside output width {}", a.d_out())));
    }
    dims.par_iter()
        .map(|&j| kendall_tau(&column(&a.values, j), &column(&b.values, j)))
        .collect()
}

/// τ values of the pipeline applied to independent Gaussian responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSample {
    pub taus: Vec<f64>,
    /// Gaussian matrix pairs drawn to collect them.
    pub draws: usize,
}

/// Null τ sample for `n` probes and `d_out` outputs, redrawing independent
/// matrix pairs until at least [`MIN_NULL_TAUS`] values have accumulated.
pub fn null_distribution(n: usize, d_out: usize, m: usize, seed: u64) -> Result<NullSample> {
    null_distribution_scaled(n, d_out, m, seed, 1.0)
}

/// As [`null_distribution`] with entries `N(0, scale²)`. Rank-based τ makes
/// the result independent of `scale`.
///
/// A column of N iid normals splits into its mean `N(0, 1/N)` and an
/// independent centered part. Only the means decide the top-m sets, so each
/// draw samples all `2·d_out` means first and materializes full columns for
/// the identity dimensions alone. The τ sample has exactly the distribution
/// of the full-matrix pipeline.
pub fn null_distribution_scaled(n: usize, d_out: usize, m: usize, seed: u64, scale: f64) -> Result<NullSample> {
    if n < 2 {
        return Err(Error::invalid("null distribution needs n >= 2"));
    }
    if m == 0 || m > d_out {
        return Err(Error::invalid(format!("m = {m} outside 1..={d_out}")));
    }
    let mut taus = Vec::new();
    let mut draws = 0;
    let mean_std = 1.0 / (n as f64).sqrt();
    while taus.len() < MIN_NULL_TAUS {
        if draws >= MAX_NULL_DRAWS {
            return Err(Error::invalid(format!(
                "null resampling found only {} τ values in {draws} draws (m={m}, d_out={d_out})",
                taus.len()
            )));
        }
        let mut rng = RngStream::new(seed, NULL_STREAM_BASE + draws as u64);
        draws += 1;
        let mut means_a = vec![0.0; d_out];
        let mut means_b = vec![0.0; d_out];
        rng.fill_normal(&mut means_a, 0.0, mean_std);
        rng.fill_normal(&mut means_b, 0.0, mean_std);
        let shared = identity_dims(&top_m_dims(&means_a, m)?, &top_m_dims(&means_b, m)?);
        for j in shared {
            let mut col = |mean: f64| {
                let mut z = vec![0.0; n];
                rng.fill_normal(&mut z, 0.0, 1.0);
                let zbar = z.iter().sum::<f64>() / n as f64;
                z.iter().map(|v| scale * (mean + v - zbar)).collect::<Vec<f64>>()
            };
            let x = col(means_a[j]);
            let y = col(means_b[j]);
            taus.push(kendall_tau(&x, &y)?);
        }
    }
    Ok(NullSample { taus, draws })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestChoice {
    /// Welch's one-sided t-test; Mann-Whitney stands in when `|S| = 1`.
    #[default]
    T,
    /// Mann-Whitney U.
    U,
    /// Both tests must reject: the verdict uses `max(p_t, p_u)`.
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageOutcome {
    /// `None` when either sample has fewer than two values.
    pub p_t: Option<f64>,
    pub p_u: f64,
    pub test: TestChoice,
    pub alpha: f64,
    pub verdict: bool,
    pub warnings: Vec<String>,
}

/// Test `H₁: taus > null_taus` and decide lineage at level `alpha`.
pub fn lineage_test(taus: &[f64], null_taus: &[f64], alpha: f64, test: TestChoice) -> Result<LineageOutcome> {
    if taus.is_empty() || null_taus.is_empty() {
        return Err(Error::invalid("lineage_test needs non-empty samples"));
    }
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    let p_u = mann_whitney_u(taus, null_taus)?.p_value;
    let p_t = (taus.len() >= 2 && null_taus.len() >= 2)
        .then(|| welch_t_one_sided(taus, null_taus).map(|r| r.p_value))
        .transpose()?;
    let mut warnings = Vec::new();
    if p_t.is_none() && test != TestChoice::U {
        warnings.push("t-test undefined for a single τ value; using Mann-Whitney".to_string());
    }
    let chosen = match test {
        TestChoice::T => p_t.unwrap_or(p_u),
        TestChoice::U => p_u,
        TestChoice::Both => p_t.map_or(p_u, |p| p.max(p_u)),
    };
    if alpha >= 1.0 {
        let w = format!("alpha = {alpha} >= 1 declares every pair same-lineage");
        log::warn!("{w}");
        warnings.push(w);
    }
    Ok(LineageOutcome {
        p_t,
        p_u,
        test,
        alpha,
        verdict: alpha >= 1.0 || chosen < alpha,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingerprintOptions {
    pub m: usize,
    pub alpha: f64,
    pub output_kind: OutputKind,
    pub test: TestChoice,
    /// Seed of the Gaussian null; defaults to the probe seed.
    pub null_seed: Option<u64>,
}

impl Default for FingerprintOptions {
    fn default() -> Self {
        Self {
            m: DEFAULT_M,
            alpha: DEFAULT_ALPHA,
            output_kind: OutputKind::FinalHidden,
            test: TestChoice::T,
            null_seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullSummary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintReport {
    pub model_a: String,
    pub model_b: String,
    pub m: usize,
    pub alpha: f64,
    pub output_kind: OutputKind,
    pub test: TestChoice,
    pub probe_seed: u64,
    pub batch_id: String,
    pub n_probes: usize,
    pub dims_a: Vec<usize>,
    pub dims_b: Vec<usize>,
    pub identity_dims: Vec<usize>,
    pub s_size: usize,
    pub taus: Vec<f64>,
    pub tau_mean: Option<f64>,
    pub tau_std: Option<f64>,
    pub null: NullSummary,
    pub null_taus: Vec<f64>,
    pub p_t: Option<f64>,
    pub p_u: Option<f64>,
    pub verdict: bool,
    pub insufficient_overlap: bool,
    pub warnings: Vec<String>,
}

/// Fingerprint two response matrices gathered on the same batch.
pub fn fingerprint_responses(
    a: &ResponseMatrix,
    b: &ResponseMatrix,
    probe_seed: u64,
    opts: &FingerprintOptions,
) -> Result<FingerprintReport> {
    if a.batch_id != b.batch_id {
        return Err(Error::BatchMismatch {
            left: a.batch_id,
            right: b.batch_id,
        });
    }
    let dims_a = top_m_dims(&mean_output_vector(a), opts.m)?;
    let dims_b = top_m_dims(&mean_output_vector(b), opts.m)?;
    let shared = identity_dims(&dims_a, &dims_b);
    let null = null_distribution(a.n(), a.d_out(), opts.m, opts.null_seed.unwrap_or(probe_seed))?;
    let (null_mean, null_std) = mean_std(&null.taus);
    let mut report = FingerprintReport {
        model_a: a.model_id.clone(),
        model_b: b.model_id.clone(),
        m: opts.m,
        alpha: opts.alpha,
        output_kind: opts.output_kind,
        test: opts.test,
        probe_seed,
        batch_id: format!("{:016x}", a.batch_id),
        n_probes: a.n(),
        dims_a,
        dims_b,
        s_size: shared.len(),
        identity_dims: shared,
        taus: Vec::new(),
        tau_mean: None,
        tau_std: None,
        null: NullSummary {
            n: null.taus.len(),
            mean: null_mean,
            std: null_std,
            draws: null.draws,
        },
        null_taus: null.taus,
        p_t: None,
        p_u: None,
        verdict: false,
        insufficient_overlap: false,
        warnings: Vec::new(),
    };
    if report.identity_dims.is_empty() {
        report.insufficient_overlap = true;
        report.warnings.push("no shared high-preference dimensions; treated as different lineage".into());
        return Ok(report);
    }
    report.taus = correlation_distribution(a, b, &report.identity_dims)?;
    let (tm, ts) = mean_std(&report.taus);
    report.tau_mean = Some(tm);
    report.tau_std = Some(ts);
    let outcome = lineage_test(&report.taus, &report.null_taus, opts.alpha, opts.test)?;
    report.p_t = outcome.p_t;
    report.p_u = Some(outcome.p_u);
    report.verdict = outcome.verdict;
    report.warnings.extend(outcome.warnings);
    Ok(report)
}

/// End-to-end lineage test of two models on a shared probe batch.
pub fn fingerprint(
    a: ModelRef<'_>,
    b: ModelRef<'_>,
    batch: &ProbeBatch,
    opts: &FingerprintOptions,
) -> Result<FingerprintReport> {
    let ra = response_matrix(a, batch, opts.output_kind)?;
    let rb = response_matrix(b, batch, opts.output_kind)?;
    fingerprint_responses(&ra, &rb, batch.seed, opts)
}

/// Copy of `weights` with Gaussian noise of std `relative · rms(tensor)` added
/// to every tensor except the embedding and LM head. Zero tensors (e.g. fresh
/// LayerNorm biases) stay zero.
pub fn perturb_weights(weights: &WeightSet, relative: f64, seed: u64) -> Result<WeightSet> {
    if !(relative >= 0.0 && relative.is_finite()) {
        return Err(Error::invalid(format!("noise scale must be non-negative, got {relative}")));
    }
    let mut out = weights.clone();
    let mut k = 0u64;
    out.for_each_body_tensor_mut(|_, t: &mut Tensor| {
        let std = relative * t.rms();
        let mut rng = RngStream::new(seed, PERTURB_STREAM_BASE + k);
        k += 1;
        for v in t.data_mut() {
            *v += (std * rng.standard_normal()) as f32;
        }
    });
    Ok(out)
}
