//! Minimal decoder-only transformer at initialization.
//!
//! Pre-norm blocks `H = X + MHA(Norm(X))`, `X' = H + MLP(Norm(H))`, with
//! optional ablation of either sublayer, RoPE, positional calibration of the
//! aggregated attention output, and the simplified MLP₀ / Attn₀ blocks.

mod blocks;
pub mod checkpoint;
mod config;
mod forward;
mod weights;

pub use blocks::{attn0_block, calibrate_attention_output, calibration_factor, mlp0_block, RopeTable};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use config::{Ablation, Calibration, InputMode, MlpActivation, ModelConfig, NormKind, PosEncoding, Preset};
pub use forward::{
    apply_norm, attention_sublayer, embed_input, forward, forward_with, last_position_outputs, logits, ForwardOptions, ForwardTrace,
    LogitsMode, ModelInput,
};
pub use weights::{init_weights, init_weights_with_embed_seed, tensor_manifest, LayerWeights, NormParams, WeightSet};

/// Argmax with ties going to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}
