use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};

use super::config::{ModelConfig, NormKind};

/// Gain and (LayerNorm only) bias of a normalization layer, stored as 1×d.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gamma: Tensor,
    pub beta: Option<Tensor>,
}

impl NormParams {
    fn identity(kind: NormKind, d: usize) -> Self {
        Self {
            gamma: Tensor::filled(1, d, 1.0),
            beta: (kind == NormKind::Layernorm).then(|| Tensor::zeros(1, d)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: NormParams,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub mlp_norm: NormParams,
    pub w_up: Tensor,
    /// Present only for gated (SwiGLU) MLPs.
    pub w_gate: Option<Tensor>,
    pub w_down: Tensor,
}

/// All parameters of one model. `unembed` is `None` when the LM head is tied
/// to the embedding, in which case [`WeightSet::unembed`] materializes `embedᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub embed: Tensor,
    pub unembed: Option<Tensor>,
    pub layers: Vec<LayerWeights>,
    pub final_norm: NormParams,
}

// Stream ids. Embedding streams hang off the embedding seed so that a fixed
// embedding can be paired with any body seed.
const EMBED_STREAM: u64 = 0;
const UNEMBED_STREAM: u64 = 1;
const LAYER_STREAM_BASE: u64 = 1_000;
const SLOTS_PER_LAYER: u64 = 16;

#[derive(Clone, Copy)]
enum Slot {
    Q = 0,
    K = 1,
    V = 2,
    O = 3,
    Up = 4,
    Gate = 5,
    Down = 6,
}

fn sample(rng: &mut RngStream, rows: usize, cols: usize, std: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| (std * rng.standard_normal()) as f32).collect();
    Tensor::from_vec(rows, cols, data).expect("sized above")
}

/// GPT-2 style initialization; the embedding shares `seed`.
pub fn init_weights(config: &ModelConfig, seed: u64) -> Result<WeightSet> {
    init_weights_with_embed_seed(config, seed, seed)
}

/// Initialization with the embedding (and untied LM head) drawn from
/// `embed_seed`, independent of the body `seed`.
///
/// Embeddings and linear weights are N(0, σ²) with σ = `config.init_std`; the
/// residual projections `W_O` and `W_down` use σ/√(2L). Norm gains are 1 and
/// biases 0. There are no linear biases.
pub fn init_weights_with_embed_seed(
    config: &ModelConfig,
    seed: u64,
    embed_seed: u64,
) -> Result<WeightSet> {
    config.validate()?;
    let d = config.d_model;
    let std = config.init_std;
    let res_std = config.residual_std();

    let embed = sample(
        &mut RngStream::new(embed_seed, EMBED_STREAM),
        config.vocab_size,
        d,
        std,
    );
    let unembed = (!config.weight_tying).then(|| {
        sample(
            &mut RngStream::new(embed_seed, UNEMBED_STREAM),
            d,
            config.vocab_size,
            std,
        )
    });

    let layers = (0..config.n_layers)
        .map(|l| {
            let draw = |slot: Slot, rows, cols, s| {
                let stream = LAYER_STREAM_BASE + l as u64 * SLOTS_PER_LAYER + slot as u64;
                sample(&mut RngStream::new(seed, stream), rows, cols, s)
            };
            LayerWeights {
                attn_norm: NormParams::identity(config.norm_kind, d),
                w_q: draw(Slot::Q, d, d, std),
                w_k: draw(Slot::K, d, d, std),
                w_v: draw(Slot::V, d, d, std),
                w_o: draw(Slot::O, d, d, res_std),
                mlp_norm: NormParams::identity(config.norm_kind, d),
                w_up: draw(Slot::Up, d, config.d_mlp, std),
                w_gate: config
                    .activation
                    .is_gated()
                    .then(|| draw(Slot::Gate, d, config.d_mlp, std)),
                w_down: draw(Slot::Down, config.d_mlp, d, res_std),
            }
        })
        .collect();

    Ok(WeightSet {
        embed,
        unembed,
        layers,
        final_norm: NormParams::identity(config.norm_kind, d),
    })
}

/// Canonical tensor names and shapes for a config, in checkpoint order.
pub fn tensor_manifest(config: &ModelConfig) -> Vec<(String, (usize, usize))> {
    let d = config.d_model;
    let ln = config.norm_kind == NormKind::Layernorm;
    let mut out = vec![("embed".to_string(), (config.vocab_size, d))];
    if !config.weight_tying {
        out.push(("unembed".into(), (d, config.vocab_size)));
    }
    let norm = |out: &mut Vec<_>, prefix: String| {
        out.push((format!("{prefix}.gamma"), (1, d)));
        if ln {
            out.push((format!("{prefix}.beta"), (1, d)));
        }
    };
    for l in 0..config.n_layers {
        norm(&mut out, format!("layers.{l}.attn_norm"));
        for w in ["w_q", "w_k", "w_v", "w_o"] {
            out.push((format!("layers.{l}.attn.{w}"), (d, d)));
        }
        norm(&mut out, format!("layers.{l}.mlp_norm"));
        out.push((format!("layers.{l}.mlp.w_up"), (d, config.d_mlp)));
        if config.activation.is_gated() {
            out.push((format!("layers.{l}.mlp.w_gate"), (d, config.d_mlp)));
        }
        out.push((format!("layers.{l}.mlp.w_down"), (config.d_mlp, d)));
    }
    norm(&mut out, "final_norm".into());
    out
}

impl WeightSet {
    /// The LM head as d×V. Borrowed when untied, materialized `embedᵀ` when tied.
    pub fn unembed(&self) -> Cow<'_, Tensor> {
        match &self.unembed {
            Some(u) => Cow::Borrowed(u),
            None => Cow::Owned(self.embed.transpose()),
        }
    }

    /// Every tensor with its canonical name, in checkpoint order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![("embed".into(), &self.embed)];
        if let Some(u) = &self.unembed {
            out.push(("unembed".into(), u));
        }
        fn norm<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: String, n: &'a NormParams) {
            out.push((format!("{prefix}.gamma"), &n.gamma));
            if let Some(b) = &n.beta {
                out.push((format!("{prefix}.beta"), b));
            }
        }
        for (l, lw) in self.layers.iter().enumerate() {
            norm(&mut out, format!("layers.{l}.attn_norm"), &lw.attn_norm);
            out.push((format!("layers.{l}.attn.w_q"), &lw.w_q));
            out.push((format!("layers.{l}.attn.w_k"), &lw.w_k));
            out.push((format!("layers.{l}.attn.w_v"), &lw.w_v));
            out.push((format!("layers.{l}.attn.w_o"), &lw.w_o));
            norm(&mut out, format!("layers.{l}.mlp_norm"), &lw.mlp_norm);
            out.push((format!("layers.{l}.mlp.w_up"), &lw.w_up));
            if let Some(g) = &lw.w_gate {
                out.push((format!("layers.{l}.mlp.w_gate"), g));
            }
            out.push((format!("layers.{l}.mlp.w_down"), &lw.w_down));
        }
        norm(&mut out, "final_norm".into(), &self.final_norm);
        out
    }

    /// Mutable visit of every tensor except the embedding and LM head.
    pub fn for_each_body_tensor_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor)) {
        fn norm(f: &mut impl FnMut(&str, &mut Tensor), prefix: &str, n: &mut NormParams) {
            f(&format!("{prefix}.gamma"), &mut n.gamma);
            if let Some(b) = &mut n.beta {
                f(&format!("{prefix}.beta"), b);
            }
        }
        for (l, lw) in self.layers.iter_mut().enumerate() {
            norm(&mut f, &format!("layers.{l}.attn_norm"), &mut lw.attn_norm);
            f(&format!("layers.{l}.attn.w_q"), &mut lw.w_q);
            f(&format!("layers.{l}.attn.w_k"), &mut lw.w_k);
            f(&format!("layers.{l}.attn.w_v"), &mut lw.w_v);
            f(&format!("layers.{l}.attn.w_o"), &mut lw.w_o);
            norm(&mut f, &format!("layers.{l}.mlp_norm"), &mut lw.mlp_norm);
            f(&format!("layers.{l}.mlp.w_up"), &mut lw.w_up);
            if let Some(g) = &mut lw.w_gate {
                f(&format!("layers.{l}.mlp.w_gate"), g);
            }
            f(&format!("layers.{l}.mlp.w_down"), &mut lw.w_down);
        }
        norm(&mut f, "final_norm", &mut self.final_norm);
    }

    /// Rebuild from tensors given in manifest order, checking every shape.
    pub fn from_manifest_order(config: &ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let manifest = tensor_manifest(config);
        if manifest.len() != tensors.len() {
            return Err(Error::MalformedHeader(format!(
                "expected {} tensors for this config, found {}",
                manifest.len(),
                tensors.len()
            )));
        }
        for ((want_name, want_shape), (name, t)) in manifest.iter().zip(&tensors) {
            if want_name != name {
                return Err(Error::MalformedHeader(format!(
                    "expected tensor `{want_name}`, found `{name}`"
                )));
            }
            if *want_shape != t.shape() {
                return Err(Error::CheckpointShape {
                    name: name.clone(),
                    expected: *want_shape,
                    got: t.shape(),
                });
            }
        }
        let mut it = tensors.into_iter().map(|(_, t)| t);
        let mut next = || it.next().expect("count checked");
        let ln = config.norm_kind == NormKind::Layernorm;
        let norm = |next: &mut dyn FnMut() -> Tensor| NormParams {
            gamma: next(),
            beta: ln.then(&mut *next),
        };
        let embed = next();
        let unembed = (!config.weight_tying).then(&mut next);
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            let attn_norm = norm(&mut next);
            let (w_q, w_k, w_v, w_o) = (next(), next(), next(), next());
            let mlp_norm = norm(&mut next);
            let w_up = next();
            let w_gate = config.activation.is_gated().then(&mut next);
            let w_down = next();
            layers.push(LayerWeights {
                attn_norm,
                w_q,
                w_k,
                w_v,
                w_o,
                mlp_norm,
                w_up,
                w_gate,
                w_down,
            });
        }
        let final_norm = norm(&mut next);
        Ok(WeightSet {
            embed,
            unembed,
            layers,
            final_norm,
        })
    }

    /// Zero every attention and MLP projection, leaving only residual paths.
    pub fn zero_sublayers(&mut self) {
        for lw in &mut self.layers {
            for t in [&mut lw.w_q, &mut lw.w_k, &mut lw.w_v, &mut lw.w_o, &mut lw.w_up, &mut lw.w_down] {
                t.data_mut().fill(0.0);
            }
            if let Some(g) = &mut lw.w_gate {
                g.data_mut().fill(0.0);
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.data().len()).sum()
    }
}
