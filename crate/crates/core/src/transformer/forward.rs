use crate::error::{Error, Result};
use crate::numerics::{layer_norm_into, rms_norm_into, softmax_into, Matrix};

use super::blocks::{calibrate_from, RopeTable};
use super::config::{ModelConfig, NormKind, PosEncoding};
use super::weights::{LayerWeights, NormParams, WeightSet};

/// Model input for one sequence.
#[derive(Debug, Clone, Copy)]
pub enum ModelInput<'a> {
    Tokens(&'a [usize]),
    /// T×d vectors fed straight into the residual stream.
    Vectors(&'a Matrix),
}

impl ModelInput<'_> {
    pub fn len(&self) -> usize {
        match self {
            ModelInput::Tokens(t) => t.len(),
            ModelInput::Vectors(v) => v.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogitsMode {
    #[default]
    None,
    Last,
    All,
}

/// What a forward pass records.
#[derive(Debug, Clone, Default)]
pub struct ForwardOptions {
    pub hidden: bool,
    pub attention: bool,
    pub preactivations: bool,
    /// Aggregated attention output after calibration, before `W_O`.
    pub aggregated: bool,
    /// Only honored for token inputs.
    pub logits: LogitsMode,
    /// Evaluate the final layer for the last position only. The last hidden
    /// state, `final_hidden` and logits are then 1×d / 1×V.
    pub last_position_only: bool,
    /// Stop after this many layers; no final norm or logits are produced.
    pub stop_after: Option<usize>,
}

impl ForwardOptions {
    pub fn everything() -> Self {
        Self {
            hidden: true,
            attention: true,
            preactivations: true,
            aggregated: true,
            logits: LogitsMode::All,
            last_position_only: false,
            stop_after: None,
        }
    }

    /// Final-norm output of the last position and nothing else.
    pub fn last_only() -> Self {
        Self {
            last_position_only: true,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    /// `n_layers + 1` residual-stream states when captured; entry 0 is the
    /// embedded input.
    pub hidden: Vec<Matrix>,
    /// `[layer][head]` causal attention maps.
    pub attention: Vec<Vec<Matrix>>,
    /// MLP pre-activations (`norm(x)·W_up`, or the gate input for SwiGLU).
    pub preactivations: Vec<Matrix>,
    pub aggregated: Vec<Matrix>,
    /// Output of the final norm. Empty when `stop_after` cut the pass short.
    pub final_hidden: Matrix,
    pub logits: Option<Matrix>,
}

/// Full forward pass recording hidden states, attention maps,
/// pre-activations and (token input) logits for every position.
pub fn forward(config: &ModelConfig, weights: &WeightSet, input: ModelInput<'_>) -> Result<ForwardTrace> {
    forward_with(config, weights, input, &ForwardOptions::everything())
}

pub fn embed_input(config: &ModelConfig, weights: &WeightSet, input: ModelInput<'_>) -> Result<Matrix> {
    let t = input.len();
    if t == 0 {
        return Err(Error::invalid("empty input sequence"));
    }
    if t > config.max_seq {
        return Err(Error::SequenceTooLong { len: t, max: config.max_seq });
    }
    match input {
        ModelInput::Tokens(ids) => {
            let vocab = weights.embed.rows();
            let mut x = Matrix::zeros(t, config.d_model);
            for (i, &id) in ids.iter().enumerate() {
                if id >= vocab {
                    return Err(Error::TokenOutOfRange { id, vocab });
                }
                for (o, &e) in x.row_mut(i).iter_mut().zip(weights.embed.row(id)) {
                    *o = f64::from(e);
                }
            }
            Ok(x)
        }
        ModelInput::Vectors(v) => {
            if v.cols() != config.d_model {
                return Err(Error::dims("forward vector input width", config.d_model, v.cols()));
            }
            Ok(v.clone())
        }
    }
}

pub fn forward_with(
    config: &ModelConfig,
    weights: &WeightSet,
    input: ModelInput<'_>,
    opts: &ForwardOptions,
) -> Result<ForwardTrace> {
    if weights.layers.len() != config.n_layers {
        return Err(Error::dims("weight layers", config.n_layers, weights.layers.len()));
    }
    let mut x = embed_input(config, weights, input)?;
    let t = x.rows();
    let rope = (config.pos_encoding == PosEncoding::Rope && config.ablation.has_attention())
        .then(|| RopeTable::new(t, config.d_head(), config.rope_base));

    let mut trace = ForwardTrace::default();
    if opts.hidden {
        trace.hidden.push(x.clone());
    }
    let n_run = opts.stop_after.map_or(config.n_layers, |k| k.min(config.n_layers));
    for (l, lw) in weights.layers.iter().take(n_run).enumerate() {
        let last_only = opts.last_position_only && opts.stop_after.is_none() && l + 1 == config.n_layers;
        let query_start = if last_only { t - 1 } else { 0 };
        if config.ablation.has_attention() {
            let h = apply_norm(&x, &lw.attn_norm, config.norm_kind, config.norm_eps);
            let att = attention_core(&h, lw, config, rope.as_ref(), query_start, opts.attention)?;
            if opts.attention {
                trace.attention.push(att.maps);
            }
            if opts.aggregated {
                trace.aggregated.push(att.aggregated);
            }
            if last_only {
                x = x.slice_rows(t - 1, t);
            }
            x.add_assign(&att.out);
        } else if last_only {
            x = x.slice_rows(t - 1, t);
        }
        if config.ablation.has_mlp() {
            let h = apply_norm(&x, &lw.mlp_norm, config.norm_kind, config.norm_eps);
            let (out, pre) = mlp_core(&h, lw, config, opts.preactivations)?;
            if let Some(pre) = pre {
                trace.preactivations.push(pre);
            }
            x.add_assign(&out);
        }
        if opts.hidden {
            trace.hidden.push(x.clone());
        }
    }
    if opts.stop_after.is_some() {
        trace.final_hidden = Matrix::zeros(0, config.d_model);
        return Ok(trace);
    }

    let final_hidden = apply_norm(&x, &weights.final_norm, config.norm_kind, config.norm_eps);
    if let ModelInput::Tokens(_) = input {
        trace.logits = match opts.logits {
            LogitsMode::None => None,
            LogitsMode::All => Some(logits(weights, &final_hidden)?),
            LogitsMode::Last => {
                let n = final_hidden.rows();
                Some(logits(weights, &final_hidden.slice_rows(n - 1, n))?)
            }
        };
    }
    trace.final_hidden = final_hidden;
    Ok(trace)
}

/// `h · W_U`, using `embedᵀ` directly when the head is tied.
pub fn logits(weights: &WeightSet, h: &Matrix) -> Result<Matrix> {
    match &weights.unembed {
        Some(u) => h.matmul_tensor(u),
        None => h.matmul_tensor_t(&weights.embed),
    }
}

/// Row-wise normalization with the layer's gain/bias.
pub fn apply_norm(x: &Matrix, p: &NormParams, kind: NormKind, eps: f64) -> Matrix {
    let gamma = p.gamma.data();
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let src = x.row(i);
        let dst = out.row_mut(i);
        match (kind, &p.beta) {
            (NormKind::Layernorm, Some(b)) => {
                let beta = b.data();
                layer_norm_into(src, |j| f64::from(gamma[j]), |j| f64::from(beta[j]), eps, dst)
            }
            (NormKind::Layernorm, None) => layer_norm_into(src, |j| f64::from(gamma[j]), |_| 0.0, eps, dst),
            (NormKind::Rmsnorm, _) => rms_norm_into(src, |j| f64::from(gamma[j]), eps, dst),
        }
    }
    out
}

pub(crate) struct AttentionOutput {
    pub out: Matrix,
    pub maps: Vec<Matrix>,
    pub aggregated: Matrix,
}

/// Multi-head causal attention over normalized input `h` (T×d). Queries are
/// taken from rows `query_start..T`; keys and values from all rows.
pub(crate) fn attention_core(
    h: &Matrix,
    lw: &LayerWeights,
    config: &ModelConfig,
    rope: Option<&RopeTable>,
    query_start: usize,
    keep_maps: bool,
) -> Result<AttentionOutput> {
    let t = h.rows();
    let hq = if query_start == 0 { None } else { Some(h.slice_rows(query_start, t)) };
    let q = hq.as_ref().unwrap_or(h).matmul_tensor(&lw.w_q)?;
    let k = h.matmul_tensor(&lw.w_k)?;
    let v = h.matmul_tensor(&lw.w_v)?;
    let (aggregated, maps) = mix_heads(&q, &k, &v, config, rope, query_start, keep_maps)?;
    let out = aggregated.matmul_tensor(&lw.w_o)?;
    Ok(AttentionOutput { out, maps, aggregated })
}

/// Per-head softmax mixing of projected queries (rows `query_start..T`) with
/// keys and values (all T rows), followed by calibration.
fn mix_heads(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    config: &ModelConfig,
    rope: Option<&RopeTable>,
    query_start: usize,
    keep_maps: bool,
) -> Result<(Matrix, Vec<Matrix>)> {
    let t = k.rows();
    let dh = config.d_head();
    let tq = q.rows();
    let scale = 1.0 / (dh as f64).sqrt();

    let mut agg = Matrix::zeros(tq, config.d_model);
    let mut maps = Vec::new();
    let mut buf = vec![0.0; t];
    for head in 0..config.n_heads {
        let (c0, c1) = (head * dh, (head + 1) * dh);
        let mut qh = q.slice_cols(c0, c1);
        let mut kh = k.slice_cols(c0, c1);
        let vh = v.slice_cols(c0, c1);
        if let Some(r) = rope {
            r.apply(&mut qh, query_start);
            r.apply(&mut kh, 0);
        }
        let scores = qh.matmul_t(&kh)?;
        let mut probs = Matrix::zeros(tq, t);
        for r in 0..tq {
            let width = query_start + r + 1;
            for (b, s) in buf[..width].iter_mut().zip(&scores.row(r)[..width]) {
                *b = s * scale;
            }
            softmax_into(&buf[..width], &mut probs.row_mut(r)[..width])
                .map_err(|_| Error::EmptySoftmaxRow { row: query_start + r })?;
        }
        agg.set_cols(c0, &probs.matmul(&vh)?);
        if keep_maps {
            maps.push(probs);
        }
    }
    let aggregated = calibrate_from(&agg, config.calibration, config.max_seq, query_start + 1)?;
    Ok((aggregated, maps))
}

/// Final-norm output at the last position of every input, one row each.
///
/// Same values as `forward_with(.., ForwardOptions::last_only())` per input,
/// but the last layer's single-row work (query, `W_O`, MLP, final norm) runs
/// as one matrix product across all inputs instead of one weight-bound
/// vector product per input.
pub fn last_position_outputs(config: &ModelConfig, weights: &WeightSet, inputs: &[ModelInput<'_>]) -> Result<Matrix> {
    if weights.layers.len() != config.n_layers {
        return Err(Error::dims("weight layers", config.n_layers, weights.layers.len()));
    }
    let Some((last_lw, body)) = weights.layers.split_last() else {
        let rows = inputs
            .iter()
            .map(|&inp| {
                let x = embed_input(config, weights, inp)?;
                Ok(x.slice_rows(x.rows() - 1, x.rows()))
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(apply_norm(&stack(&rows)?, &weights.final_norm, config.norm_kind, config.norm_eps));
    };

    struct Prefix {
        x_last: Matrix,
        h_last: Matrix,
        kv: Option<(Matrix, Matrix)>,
    }
    let has_attn = config.ablation.has_attention();
    // one table covers every input: rotations depend only on absolute position
    let max_t = inputs.iter().map(ModelInput::len).max().unwrap_or(0);
    let rope = (config.pos_encoding == PosEncoding::Rope && has_attn)
        .then(|| RopeTable::new(max_t, config.d_head(), config.rope_base));
    let prefixes = inputs
        .iter()
        .map(|&inp| {
            let mut x = embed_input(config, weights, inp)?;
            let t = x.rows();
            for lw in body {
                x = block(&x, lw, config, rope.as_ref())?;
            }
            let x_last = x.slice_rows(t - 1, t);
            if !has_attn {
                return Ok(Prefix { h_last: x_last.clone(), x_last, kv: None });
            }
            let h = apply_norm(&x, &last_lw.attn_norm, config.norm_kind, config.norm_eps);
            let kv = Some((h.matmul_tensor(&last_lw.w_k)?, h.matmul_tensor(&last_lw.w_v)?));
            Ok(Prefix { h_last: h.slice_rows(t - 1, t), x_last, kv })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut x = stack(&prefixes.iter().map(|p| p.x_last.clone()).collect::<Vec<_>>())?;
    if has_attn {
        let q = stack(&prefixes.iter().map(|p| p.h_last.clone()).collect::<Vec<_>>())?.matmul_tensor(&last_lw.w_q)?;
        let rows = prefixes
            .iter()
            .enumerate()
            .map(|(b, p)| {
                let (k, v) = p.kv.as_ref().expect("attention keys");
                let t = k.rows();
                let qb = q.slice_rows(b, b + 1);
                Ok(mix_heads(&qb, k, v, config, rope.as_ref(), t - 1, false)?.0)
            })
            .collect::<Result<Vec<_>>>()?;
        x.add_assign(&stack(&rows)?.matmul_tensor(&last_lw.w_o)?);
    }
    if config.ablation.has_mlp() {
        let h = apply_norm(&x, &last_lw.mlp_norm, config.norm_kind, config.norm_eps);
        x.add_assign(&mlp_core(&h, last_lw, config, false)?.0);
    }
    Ok(apply_norm(&x, &weights.final_norm, config.norm_kind, config.norm_eps))
}

/// One full pre-norm block over every position.
fn block(x: &Matrix, lw: &LayerWeights, config: &ModelConfig, rope: Option<&RopeTable>) -> Result<Matrix> {
    let mut x = x.clone();
    if config.ablation.has_attention() {
        let h = apply_norm(&x, &lw.attn_norm, config.norm_kind, config.norm_eps);
        x.add_assign(&attention_core(&h, lw, config, rope, 0, false)?.out);
    }
    if config.ablation.has_mlp() {
        let h = apply_norm(&x, &lw.mlp_norm, config.norm_kind, config.norm_eps);
        x.add_assign(&mlp_core(&h, lw, config, false)?.0);
    }
    Ok(x)
}

fn stack(rows: &[Matrix]) -> Result<Matrix> {
    let refs: Vec<&[f64]> = rows.iter().map(|m| m.row(0)).collect();
    Matrix::from_rows(&refs)
}

/// Attention sublayer on an already-normalized T×d input: per-head causal
/// softmax attention (with RoPE when configured), calibration, then `W_O`.
pub fn attention_sublayer(x: &Matrix, lw: &LayerWeights, config: &ModelConfig) -> Result<Matrix> {
    if x.cols() != config.d_model {
        return Err(Error::dims("attention_sublayer input width", config.d_model, x.cols()));
    }
    let rope = (config.pos_encoding == PosEncoding::Rope)
        .then(|| RopeTable::new(x.rows(), config.d_head(), config.rope_base));
    Ok(attention_core(x, lw, config, rope.as_ref(), 0, false)?.out)
}

/// MLP on a normalized input. Returns the output and, if asked, the
/// pre-activation that enters the nonlinearity.
pub(crate) fn mlp_core(
    h: &Matrix,
    lw: &LayerWeights,
    config: &ModelConfig,
    keep_pre: bool,
) -> Result<(Matrix, Option<Matrix>)> {
    let act = config.activation.pointwise();
    let up = h.matmul_tensor(&lw.w_up)?;
    let (hidden, pre) = match &lw.w_gate {
        Some(gate_w) if config.activation.is_gated() => {
            let gate = h.matmul_tensor(gate_w)?;
            let mut hidden = up;
            for (u, g) in hidden.data_mut().iter_mut().zip(gate.data()) {
                *u *= act.apply(*g);
            }
            (hidden, keep_pre.then_some(gate))
        }
        _ => {
            let hidden = up.map(|v| act.apply(v));
            (hidden, if keep_pre { Some(up) } else { None })
        }
    };
    Ok((hidden.matmul_tensor(&lw.w_down)?, pre))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gaussian_matrix, RngStream, Tensor};
    use crate::transformer::config::{Ablation, Calibration, InputMode, MlpActivation, Preset};
    use crate::transformer::weights::init_weights;

    fn small(ablation: Ablation) -> ModelConfig {
        ModelConfig {
            d_model: 32,
            n_heads: 4,
            d_mlp: 64,
            n_layers: 2,
            vocab_size: 50,
            max_seq: 16,
            ablation,
            ..Preset::Tiny.config()
        }
    }

    fn gaussian_input(t: usize, d: usize, seed: u64) -> Matrix {
        gaussian_matrix(&mut RngStream::new(seed, 0), t, d, 0.0, 0.02).unwrap()
    }

    #[test]
    fn zero_sublayers_are_identity() {
        let c = ModelConfig { n_layers: 1, ..small(Ablation::Full) };
        let mut w = init_weights(&c, 1).unwrap();
        w.zero_sublayers();
        let x = gaussian_input(5, 32, 2);
        let tr = forward(&c, &w, ModelInput::Vectors(&x)).unwrap();
        assert_eq!(tr.hidden.len(), 2);
        for h in &tr.hidden {
            assert_eq!(h, &x);
        }
        assert!(tr.logits.is_none());
    }

    #[test]
    fn attention_rows_are_causal_distributions() {
        let c = small(Ablation::Full);
        let w = init_weights(&c, 3).unwrap();
        let tr = forward(&c, &w, ModelInput::Tokens(&[1, 4, 9, 2, 7, 7])).unwrap();
        assert_eq!(tr.attention.len(), 2);
        for layer in &tr.attention {
            assert_eq!(layer.len(), 4);
            for m in layer {
                for i in 0..6 {
                    let row = m.row(i);
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    assert!(row[i + 1..].iter().all(|&v| v == 0.0));
                    assert!(row.iter().all(|&v| v >= 0.0));
                }
            }
        }
        assert_eq!(tr.logits.as_ref().unwrap().shape(), (6, 50));
    }

    #[test]
    fn single_token_attention_is_value_projection() {
        let c = small(Ablation::Full);
        let w = init_weights(&c, 4).unwrap();
        let x = gaussian_input(1, 32, 5);
        let out = attention_sublayer(&x, &w.layers[0], &c).unwrap();
        let expect = x
            .matmul_tensor(&w.layers[0].w_v)
            .unwrap()
            .matmul_tensor(&w.layers[0].w_o)
            .unwrap();
        for (a, b) in out.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_attention_gives_prefix_mean() {
        let mut c = small(Ablation::Full);
        c.pos_encoding = PosEncoding::None;
        let mut w = init_weights(&c, 4).unwrap();
        let lw = &mut w.layers[0];
        lw.w_q = Tensor::zeros(32, 32);
        let eye = Matrix::identity(32).to_tensor();
        lw.w_v = eye.clone();
        lw.w_o = eye;
        let x = gaussian_input(6, 32, 6);
        let out = attention_sublayer(&x, &w.layers[0], &c).unwrap();
        let expect = super::super::blocks::attn0_block(&x).unwrap();
        for (a, b) in out.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn near_uniform_attention_at_init() {
        // Pre-norm scores have std ≈ (0.02·√d)² ≈ 0.31 after the 1/√d_head
        // scale, so row i deviates from 1/i by about (e^s − 1)/i: nearly all
        // entries land within 0.02, and every entry of a long row does.
        let t = 128;
        let c = ModelConfig {
            d_model: 768,
            n_heads: 12,
            d_mlp: 768,
            n_layers: 1,
            max_seq: t,
            input_mode: InputMode::Vectors,
            pos_encoding: PosEncoding::None,
            ..Preset::Tiny.config()
        };
        let w = init_weights(&c, 8).unwrap();
        let x = gaussian_input(t, 768, 9);
        let tr = forward(&c, &w, ModelInput::Vectors(&x)).unwrap();
        let (mut dev, mut within, mut count) = (0.0, 0.0, 0.0);
        let mut worst_last: f64 = 0.0;
        for m in &tr.attention[0] {
            for i in 0..t {
                for j in 0..=i {
                    let e = (m.get(i, j) - 1.0 / (i + 1) as f64).abs();
                    if i + 1 == t {
                        worst_last = worst_last.max(e);
                    }
                    dev += e;
                    within += f64::from(u8::from(e < 0.02));
                    count += 1.0;
                }
            }
        }
        assert!(worst_last < 0.02, "{worst_last}");
        assert!(within / count > 0.97, "{}", within / count);
        assert!(dev / count < 0.005, "{}", dev / count);
    }

    #[test]
    fn ablations_ignore_unused_weights() {
        let x = gaussian_input(6, 32, 10);
        let c = small(Ablation::AttnOnly);
        let w = init_weights(&c, 11).unwrap();
        let mut w2 = w.clone();
        for lw in &mut w2.layers {
            lw.w_up.data_mut().iter_mut().for_each(|v| *v += 1.0);
            lw.w_down.data_mut().iter_mut().for_each(|v| *v -= 0.5);
            lw.mlp_norm.gamma.data_mut()[0] = 7.0;
        }
        let a = forward(&c, &w, ModelInput::Vectors(&x)).unwrap();
        let b = forward(&c, &w2, ModelInput::Vectors(&x)).unwrap();
        assert_eq!(a.final_hidden, b.final_hidden);

        let c = small(Ablation::MlpOnly);
        let w = init_weights(&c, 11).unwrap();
        let mut w2 = w.clone();
        for lw in &mut w2.layers {
            lw.w_q.data_mut().iter_mut().for_each(|v| *v += 1.0);
            lw.w_v.data_mut().iter_mut().for_each(|v| *v += 1.0);
            lw.w_o.data_mut().iter_mut().for_each(|v| *v += 1.0);
        }
        let a = forward(&c, &w, ModelInput::Vectors(&x)).unwrap();
        let b = forward(&c, &w2, ModelInput::Vectors(&x)).unwrap();
        assert_eq!(a.final_hidden, b.final_hidden);
        assert!(a.attention.is_empty());
    }

    #[test]
    fn last_position_path_matches_full() {
        for ablation in [Ablation::Full, Ablation::AttnOnly, Ablation::MlpOnly] {
            let mut c = small(ablation);
            c.calibration = Calibration::Attenuate;
            let w = init_weights(&c, 12).unwrap();
            let ids = [3, 1, 4, 1, 5, 9, 2, 6];
            let full = forward(&c, &w, ModelInput::Tokens(&ids)).unwrap();
            let opts = ForwardOptions {
                logits: LogitsMode::Last,
                ..ForwardOptions::last_only()
            };
            let last = forward_with(&c, &w, ModelInput::Tokens(&ids), &opts).unwrap();
            assert_eq!(last.final_hidden.rows(), 1);
            for (a, b) in last.final_hidden.row(0).iter().zip(full.final_hidden.row(7)) {
                assert!((a - b).abs() < 1e-12);
            }
            let lf = full.logits.unwrap();
            for (a, b) in last.logits.unwrap().row(0).iter().zip(lf.row(7)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn batched_last_positions_match_single_passes() {
        for (ablation, pos) in [
            (Ablation::Full, PosEncoding::Rope),
            (Ablation::Full, PosEncoding::None),
            (Ablation::AttnOnly, PosEncoding::Rope),
            (Ablation::MlpOnly, PosEncoding::None),
        ] {
            let mut c = small(ablation);
            c.pos_encoding = pos;
            c.calibration = Calibration::Amplify;
            let w = init_weights(&c, 21).unwrap();
            let seqs: Vec<Vec<usize>> = vec![vec![3, 1, 4, 1, 5], vec![9, 2], vec![6, 5, 3, 5, 8, 9, 7], vec![0]];
            let inputs: Vec<ModelInput> = seqs.iter().map(|s| ModelInput::Tokens(s)).collect();
            let batched = last_position_outputs(&c, &w, &inputs).unwrap();
            assert_eq!(batched.rows(), 4);
            for (b, inp) in inputs.iter().enumerate() {
                let single = forward_with(&c, &w, *inp, &ForwardOptions::last_only()).unwrap();
                for (x, y) in batched.row(b).iter().zip(single.final_hidden.row(0)) {
                    assert!((x - y).abs() < 1e-5, "{ablation:?} {pos:?} seq {b}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn tied_logits_equal_final_hidden_times_embed() {
        let c = small(Ablation::Full);
        let w = init_weights(&c, 13).unwrap();
        let tr = forward(&c, &w, ModelInput::Tokens(&[0, 1, 2])).unwrap();
        let expect = tr.final_hidden.matmul_tensor(&w.unembed()).unwrap();
        assert_eq!(tr.logits.unwrap(), expect);
    }

    #[test]
    fn swiglu_rmsnorm_runs() {
        let c = ModelConfig {
            activation: MlpActivation::Swiglu,
            norm_kind: NormKind::Rmsnorm,
            weight_tying: false,
            ..small(Ablation::Full)
        };
        let w = init_weights(&c, 14).unwrap();
        let tr = forward(&c, &w, ModelInput::Tokens(&[5, 6, 7])).unwrap();
        assert_eq!(tr.logits.unwrap().shape(), (3, 50));
        assert_eq!(tr.preactivations.len(), 2);
    }

    #[test]
    fn input_errors() {
        let c = small(Ablation::Full);
        let w = init_weights(&c, 15).unwrap();
        assert!(matches!(
            forward(&c, &w, ModelInput::Tokens(&[50])),
            Err(Error::TokenOutOfRange { id: 50, vocab: 50 })
        ));
        let long = vec![0; 17];
        assert!(matches!(
            forward(&c, &w, ModelInput::Tokens(&long)),
            Err(Error::SequenceTooLong { .. })
        ));
        let bad = Matrix::zeros(3, 31);
        assert!(matches!(forward(&c, &w, ModelInput::Vectors(&bad)), Err(Error::DimensionMismatch { .. })));
    }
}
