use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Activation, NORM_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Layernorm,
    Rmsnorm,
}

/// Activation used inside the MLP sublayer. `Swiglu` adds a gate projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlpActivation {
    Gelu,
    Relu,
    Tanh,
    Silu,
    Swiglu,
}

impl MlpActivation {
    /// Element-wise nonlinearity applied to the (gate) pre-activation.
    pub fn pointwise(self) -> Activation {
        match self {
            MlpActivation::Gelu => Activation::Gelu,
            MlpActivation::Relu => Activation::Relu,
            MlpActivation::Tanh => Activation::Tanh,
            MlpActivation::Silu | MlpActivation::Swiglu => Activation::Silu,
        }
    }

    pub fn is_gated(self) -> bool {
        matches!(self, MlpActivation::Swiglu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosEncoding {
    None,
    Rope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    AttnOnly,
    MlpOnly,
}

impl Ablation {
    pub fn has_attention(self) -> bool {
        !matches!(self, Ablation::MlpOnly)
    }

    pub fn has_mlp(self) -> bool {
        !matches!(self, Ablation::AttnOnly)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    None,
    Amplify,
    Attenuate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    Tokens,
    Vectors,
}

fn default_eps() -> f64 {
    NORM_EPS
}

fn default_rope_base() -> f64 {
    10_000.0
}

fn default_init_std() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_mlp: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub norm_kind: NormKind,
    pub activation: MlpActivation,
    pub pos_encoding: PosEncoding,
    pub weight_tying: bool,
    pub ablation: Ablation,
    pub calibration: Calibration,
    pub input_mode: InputMode,
    #[serde(default = "default_eps")]
    pub norm_eps: f64,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

/// Named architecture presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 12 layers, 12 heads, 768 wide, LayerNorm + GELU + RoPE, tied embeddings.
    NanoGpt2Rope,
    /// 12 layers, 12 heads, 768 wide, RMSNorm + SwiGLU + RoPE, untied.
    NanoLlama2,
    /// 24 layers, 32 heads, 2048 wide. Roughly 1.4 GB of weights in memory.
    Gpt2_1p2b,
    /// Two-layer 64-wide model for smoke runs.
    Tiny,
    /// One-layer, full-width model used for desk-scale fingerprinting.
    FingerprintDesk,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::NanoGpt2Rope,
        Preset::NanoLlama2,
        Preset::Gpt2_1p2b,
        Preset::Tiny,
        Preset::FingerprintDesk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::NanoGpt2Rope => "nano-gpt2-rope",
            Preset::NanoLlama2 => "nano-llama2",
            Preset::Gpt2_1p2b => "gpt2-1p2b",
            Preset::Tiny => "tiny",
            Preset::FingerprintDesk => "fingerprint-desk",
        }
    }

    pub fn from_name(name: &str) -> Option<Preset> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Whether the preset needs an explicit opt-in because of its memory use.
    pub fn is_memory_gated(self) -> bool {
        matches!(self, Preset::Gpt2_1p2b)
    }

    pub fn config(self) -> ModelConfig {
        match self {
            Preset::NanoGpt2Rope => ModelConfig::gpt2_style(768, 12, 12, 50_257, 1024),
            Preset::NanoLlama2 => ModelConfig {
                norm_kind: NormKind::Rmsnorm,
                activation: MlpActivation::Swiglu,
                weight_tying: false,
                vocab_size: 32_000,
                max_seq: 2048,
                ..ModelConfig::gpt2_style(768, 12, 12, 32_000, 2048)
            },
            Preset::Gpt2_1p2b => ModelConfig::gpt2_style(2048, 24, 32, 50_257, 1024),
            Preset::Tiny => ModelConfig::gpt2_style(64, 2, 4, 512, 256),
            Preset::FingerprintDesk => ModelConfig {
                input_mode: InputMode::Vectors,
                ..ModelConfig::gpt2_style(768, 1, 12, 2, 1024)
            },
        }
    }
}

impl ModelConfig {
    /// Pre-norm GPT-2 layout with LayerNorm, GELU, RoPE and tied embeddings.
    pub fn gpt2_style(
        d_model: usize,
        n_layers: usize,
        n_heads: usize,
        vocab_size: usize,
        max_seq: usize,
    ) -> Self {
        Self {
            d_model,
            n_layers,
            n_heads,
            d_mlp: 4 * d_model,
            vocab_size,
            max_seq,
            norm_kind: NormKind::Layernorm,
            activation: MlpActivation::Gelu,
            pos_encoding: PosEncoding::Rope,
            weight_tying: true,
            ablation: Ablation::Full,
            calibration: Calibration::None,
            input_mode: InputMode::Tokens,
            norm_eps: NORM_EPS,
            rope_base: 10_000.0,
            init_std: 0.02,
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model.checked_div(self.n_heads).unwrap_or(0)
    }

    /// Std of the residual output projections (`W_O`, `W_down`): `σ/√(2L)`.
    pub fn residual_std(&self) -> f64 {
        self.init_std / ((2 * self.n_layers) as f64).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 {
            return fail("d_model, n_heads and n_layers must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_mlp < self.d_model {
            return fail(format!("d_mlp {} < d_model {}", self.d_mlp, self.d_model));
        }
        if self.input_mode == InputMode::Tokens && self.vocab_size < 2 {
            return fail(format!("vocab_size {} < 2 in token mode", self.vocab_size));
        }
        if self.max_seq == 0 {
            return fail("max_seq must be positive".into());
        }
        if self.pos_encoding == PosEncoding::Rope && self.d_head() % 2 != 0 {
            return fail(format!("RoPE needs an even head dim, got {}", self.d_head()));
        }
        if !(self.norm_eps >= 0.0) || !(self.init_std >= 0.0) || !(self.rope_base > 0.0) {
            return fail("norm_eps, init_std must be >= 0 and rope_base > 0".into());
        }
        Ok(())
    }
}
