//! Effective-configuration resolution: built-in defaults, then the JSON
//! config file, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use seedprint_core::transformer::{
    Ablation, Calibration, MlpActivation, ModelConfig, Preset, WeightSet,
};

use crate::args::ModelArgs;
use crate::UsageError;

/// Every key a config file may carry. Commands read the keys they use.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub embed_seed: Option<u64>,
    pub probe_seed: Option<u64>,
    pub preset: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub model: Option<ModelConfig>,
    pub n: Option<usize>,
    pub seq_len: Option<usize>,
    pub ablation: Option<String>,
    pub activation: Option<String>,
    pub calibration: Option<String>,
    pub allow_large: Option<bool>,
    pub top_k: Option<usize>,
    pub baseline: Option<bool>,
    pub stack: Option<String>,
    pub kind: Option<String>,
    pub d: Option<usize>,
    pub depth: Option<usize>,
    pub epsilon: Option<f64>,
    pub averaging: Option<String>,
    pub m: Option<usize>,
    pub alpha: Option<f64>,
    pub output_kind: Option<String>,
    pub test: Option<String>,
    pub perturb: Option<f64>,
    pub theory: Option<serde_json::Value>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }
}

/// Flag value if given, else file value, else default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Parse an enum by its serialized name. Dashes and underscores are
/// interchangeable.
pub fn parse_named<T: DeserializeOwned>(what: &str, raw: &str, kebab: bool) -> Result<T, UsageError> {
    let name = if kebab { raw.replace('_', "-") } else { raw.replace('-', "_") };
    serde_json::from_value(serde_json::Value::String(name))
        .map_err(|_| UsageError(format!("unknown {what} `{raw}`")))
}

pub fn parse_preset(raw: &str) -> Result<Preset, UsageError> {
    Preset::from_name(&raw.replace('_', "-")).ok_or_else(|| {
        let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
        UsageError(format!("unknown preset `{raw}` (expected one of {})", names.join(", ")))
    })
}

/// Weights above this many bytes need `--allow-large`.
const LARGE_MODEL_BYTES: usize = 1 << 30;

/// Checkpoint bytes and the weights decoded from them.
pub type Loaded = (Vec<u8>, WeightSet);

/// Where the model comes from and its resolved architecture.
#[derive(Debug, Clone, Serialize)]
pub struct ModelSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub config: ModelConfig,
}

impl ModelSpec {
    /// Resolve architecture from flags and file. Checkpoints are read here so
    /// their configs are validated before any computation.
    pub fn resolve(
        flags: &ModelArgs,
        file: &FileConfig,
        default_preset: Preset,
    ) -> anyhow::Result<(Self, Option<Loaded>)> {
        let checkpoint = flags.checkpoint.clone().or_else(|| {
            // a preset flag overrides a checkpoint named in the file
            flags.preset.is_none().then(|| file.checkpoint.clone()).flatten()
        });
        let (preset, mut config, loaded) = if let Some(path) = &checkpoint {
            let bytes = fs::read(path)
                .map_err(|e| UsageError(format!("cannot read checkpoint {}: {e}", path.display())))?;
            let (config, weights) = seedprint_core::transformer::read_checkpoint(&bytes)?;
            (None, config, Some((bytes, weights)))
        } else if let (None, Some(model)) = (&flags.preset, &file.model) {
            (None, model.clone(), None)
        } else {
            let p = match flags.preset.as_deref().or(file.preset.as_deref()) {
                Some(raw) => parse_preset(raw)?,
                None => default_preset,
            };
            if p.is_memory_gated() && !(flags.allow_large || file.allow_large.unwrap_or(false)) {
                return Err(UsageError(format!(
                    "preset {} needs roughly {:.1} GB for weights alone; pass --allow-large to run it",
                    p.name(),
                    weight_bytes(&p.config()) as f64 / 1e9
                ))
                .into());
            }
            (Some(p.name().to_string()), p.config(), None)
        };
        if let Some(raw) = flags.ablation.as_deref().or(file.ablation.as_deref()) {
            config.ablation = parse_named::<Ablation>("ablation", raw, false)?;
        }
        if let Some(raw) = flags.activation.as_deref().or(file.activation.as_deref()) {
            config.activation = parse_named::<MlpActivation>("activation", raw, false)?;
        }
        if let Some(raw) = flags.calibration.as_deref().or(file.calibration.as_deref()) {
            config.calibration = parse_named::<Calibration>("calibration", raw, false)?;
        }
        config.validate().map_err(|e| UsageError(e.to_string()))?;
        if let Some((_, w)) = &loaded {
            let has_gate = w.layers.iter().all(|l| l.w_gate.is_some());
            if config.activation.is_gated() && !has_gate {
                return Err(UsageError("gated activation needs gate tensors the checkpoint does not have".into()).into());
            }
        }
        let big = weight_bytes(&config) > LARGE_MODEL_BYTES;
        if preset.is_none() && big && !(flags.allow_large || file.allow_large.unwrap_or(false)) {
            return Err(UsageError(format!(
                "model needs roughly {:.1} GB for weights alone; pass --allow-large to run it",
                weight_bytes(&config) as f64 / 1e9
            ))
            .into());
        }
        Ok((
            Self {
                preset,
                checkpoint,
                config,
            },
            loaded,
        ))
    }
}

fn weight_bytes(c: &ModelConfig) -> usize {
    let per_layer = 4 * c.d_model * c.d_model + 3 * c.d_model * c.d_mlp;
    let embed = c.vocab_size * c.d_model * if c.weight_tying { 1 } else { 2 };
    4 * (c.n_layers * per_layer + embed)
}

pub fn require_positive(name: &str, v: usize) -> Result<usize, UsageError> {
    if v == 0 {
        Err(UsageError(format!("--{name} must be positive")))
    } else {
        Ok(v)
    }
}

pub fn require_seq_len(t: usize, config: &ModelConfig) -> Result<usize, UsageError> {
    require_positive("seq-len", t)?;
    if t > config.max_seq {
        return Err(UsageError(format!("--seq-len {t} exceeds the model's max_seq {}", config.max_seq)));
    }
    Ok(t)
}
