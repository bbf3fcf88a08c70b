//! Attention-sink metrics.
//!
//! Positions are 0-based here: the "first token" is column 0 of each map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::probes::{map_batch, ProbeBatch};
use crate::transformer::{forward_with, ForwardOptions, ModelConfig, WeightSet};

pub const DEFAULT_EPSILON: f64 = 0.25;

/// Order of averaging and thresholding over the sample set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SinkAveraging {
    /// Average α per head over sequences, then threshold once.
    #[default]
    AlphaFirst,
    /// Threshold per sequence and average the resulting rates.
    PerSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkSummary {
    /// `alpha[l][h]`: first-token importance averaged over the sample set.
    pub alpha: Vec<Vec<f64>>,
    pub epsilon: f64,
    pub sink_rate: f64,
    pub t: usize,
    pub n_sequences: usize,
    pub averaging: SinkAveraging,
}

/// Mean attention that the first position receives, over all rows of a causal
/// map.
pub fn first_token_importance(attn: &Matrix) -> Result<f64> {
    let (rows, cols) = attn.shape();
    if rows == 0 || rows != cols {
        return Err(Error::dims("attention map", "square, non-empty", format!("{rows}x{cols}")));
    }
    Ok(attn.row_iter().map(|r| r[0]).sum::<f64>() / rows as f64)
}

/// α for every head of one sequence: `maps[l][h]` is a T×T map.
pub fn head_importances(maps: &[Vec<Matrix>]) -> Result<Vec<Vec<f64>>> {
    maps.iter()
        .map(|layer| layer.iter().map(first_token_importance).collect())
        .collect()
}

fn rate(alpha: &[Vec<f64>], epsilon: f64) -> f64 {
    let total: usize = alpha.iter().map(Vec::len).sum();
    let sinks = alpha.iter().flatten().filter(|&&a| a > epsilon).count();
    sinks as f64 / total as f64
}

/// Sink summary from per-sequence α tables (`per_seq[s][l][h]`).
pub fn sink_rate_from_alphas(
    per_seq: &[Vec<Vec<f64>>],
    t: usize,
    epsilon: f64,
    averaging: SinkAveraging,
) -> Result<SinkSummary> {
    if !epsilon.is_finite() {
        return Err(Error::invalid(format!("epsilon must be finite, got {epsilon}")));
    }
    let first = per_seq.first().ok_or_else(|| Error::invalid("sink rate needs at least one sequence"))?;
    let shape: Vec<usize> = first.iter().map(Vec::len).collect();
    if shape.iter().sum::<usize>() == 0 {
        return Err(Error::invalid("sink rate needs at least one head"));
    }
    if per_seq.iter().any(|s| s.iter().map(Vec::len).ne(shape.iter().copied())) {
        return Err(Error::invalid("sequences disagree on the layer/head layout"));
    }
    let n = per_seq.len() as f64;
    let alpha: Vec<Vec<f64>> = shape
        .iter()
        .enumerate()
        .map(|(l, &heads)| (0..heads).map(|h| per_seq.iter().map(|s| s[l][h]).sum::<f64>() / n).collect())
        .collect();
    let sink_rate = match averaging {
        SinkAveraging::AlphaFirst => rate(&alpha, epsilon),
        SinkAveraging::PerSequence => per_seq.iter().map(|s| rate(s, epsilon)).sum::<f64>() / n,
    };
    Ok(SinkSummary {
        alpha,
        epsilon,
        sink_rate,
        t,
        n_sequences: per_seq.len(),
        averaging,
    })
}

/// Sink summary from full attention traces, `traces[s][l][h]`.
pub fn sink_rate(traces: &[Vec<Vec<Matrix>>], epsilon: f64, averaging: SinkAveraging) -> Result<SinkSummary> {
    let t = traces
        .first()
        .and_then(|s| s.first())
        .and_then(|l| l.first())
        .map_or(0, Matrix::rows);
    let per_seq = traces.iter().map(|s| head_importances(s)).collect::<Result<Vec<_>>>()?;
    sink_rate_from_alphas(&per_seq, t, epsilon, averaging)
}

/// Run the model over the batch and summarize first-token attention. Maps are
/// reduced to α inside each worker, so memory stays at one trace per thread.
pub fn model_sink_rate(
    config: &ModelConfig,
    weights: &WeightSet,
    batch: &ProbeBatch,
    epsilon: f64,
    averaging: SinkAveraging,
) -> Result<SinkSummary> {
    if !config.ablation.has_attention() {
        return Err(Error::invalid("sink rate needs an attention sublayer"));
    }
    batch.check_model(config)?;
    let opts = ForwardOptions {
        attention: true,
        ..ForwardOptions::default()
    };
    let per_seq = map_batch(batch, |seq| {
        let tr = forward_with(config, weights, seq.as_input(), &opts)?;
        head_importances(&tr.attention)
    })?;
    sink_rate_from_alphas(&per_seq, batch.t, epsilon, averaging)
}

impl SinkSummary {
    pub fn n_heads(&self) -> usize {
        self.alpha.iter().map(Vec::len).sum()
    }

    /// Re-threshold the stored α table. Only meaningful for
    /// [`SinkAveraging::AlphaFirst`].
    pub fn with_epsilon(&self, epsilon: f64) -> Result<SinkSummary> {
        if self.averaging != SinkAveraging::AlphaFirst {
            return Err(Error::invalid("per-sequence rates cannot be recomputed from averaged α"));
        }
        Ok(SinkSummary {
            epsilon,
            sink_rate: rate(&self.alpha, epsilon),
            ..self.clone()
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per head: `layer,head,alpha,sink`. The scalar rate goes on a
    /// leading `#` comment line together with ε and T.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = format!(
            "# sink_rate={} epsilon={} t={} n_sequences={} averaging={}\n",
            self.sink_rate,
            self.epsilon,
            self.t,
            self.n_sequences,
            serde_json::to_value(self.averaging)?.as_str().unwrap_or_default()
        );
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer", "head", "alpha", "sink"]).map_err(csv_err)?;
        for (l, heads) in self.alpha.iter().enumerate() {
            for (h, a) in heads.iter().enumerate() {
                let sink = u8::from(*a > self.epsilon);
                w.serialize((l, h, a, sink)).map_err(csv_err)?;
            }
        }
        let body = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        out.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
        Ok(out)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}
