use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Initialization-time bias probes for decoder-only transformers and the
/// SeedPrint lineage test.
#[derive(Debug, Parser)]
#[command(name = "seedprint", version, propagate_version = true)]
pub struct Cli {
    /// Worker threads for sequence-parallel evaluation. Results do not depend
    /// on this value.
    #[arg(long, global = true, env = "SEEDPRINT_WORKERS")]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Next-token argmax histogram with Bonferroni-corrected top-token p-values (CSV).
    TokenBias(TokenBiasArgs),
    /// Per-layer representation similarity for transformer or simplified stacks (CSV).
    Contraction(ContractionArgs),
    /// Monte-Carlo checks of the closed-form contraction predictions (CSV).
    VerifyTheory(TheoryArgs),
    /// Lineage test between two checkpoints (JSON). Exit code 0 = same lineage, 1 = different.
    Fingerprint(FingerprintArgs),
    /// Per-head first-token importance, sink rate and positional std profile (JSON).
    Sink(SinkArgs),
    /// Create a seeded checkpoint, optionally a perturbed copy of another one.
    Init(InitArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON file with parameters; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long = "seq-len")]
    pub seq_len: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// nano-gpt2-rope, nano-llama2, gpt2-1p2b, tiny, fingerprint-desk.
    #[arg(long)]
    pub preset: Option<String>,
    /// Load architecture and weights from a checkpoint instead of initializing.
    #[arg(long, conflicts_with = "preset")]
    pub checkpoint: Option<PathBuf>,
    /// full, attn_only, mlp_only.
    #[arg(long)]
    pub ablation: Option<String>,
    /// gelu, relu, tanh, silu, swiglu.
    #[arg(long)]
    pub activation: Option<String>,
    /// none, amplify, attenuate.
    #[arg(long)]
    pub calibration: Option<String>,
    /// Required for presets whose weights need several GB of memory.
    #[arg(long)]
    pub allow_large: bool,
}

#[derive(Debug, Args)]
pub struct TokenBiasArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Model seed; repeat for one row group per seed.
    #[arg(long)]
    pub seed: Vec<u64>,
    /// Seed of the embedding matrix, shared by every model seed. Defaults to
    /// each model's own seed.
    #[arg(long)]
    pub embed_seed: Option<u64>,
    /// Seed of the probe batch, shared by every model. Defaults to the first seed.
    #[arg(long)]
    pub probe_seed: Option<u64>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Append a histogram of uniform draws as a reference.
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Debug, Args)]
pub struct ContractionArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// transformer, mlp0 or attn0.
    #[arg(long)]
    pub stack: Option<String>,
    /// inter (across sequences, last token) or intra (within a sequence).
    #[arg(long)]
    pub kind: Option<String>,
    /// Width of mlp0/attn0 stacks.
    #[arg(long)]
    pub d: Option<usize>,
    /// Depth of mlp0/attn0 stacks.
    #[arg(long)]
    pub depth: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FingerprintArgs {
    pub model_a: PathBuf,
    pub model_b: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Probe seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// final-hidden or logits.
    #[arg(long)]
    pub output_kind: Option<String>,
    /// t, u or both.
    #[arg(long)]
    pub test: Option<String>,
}

#[derive(Debug, Args)]
pub struct SinkArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub probe_seed: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// alpha-first or per-sequence.
    #[arg(long)]
    pub averaging: Option<String>,
    /// Also write the positional std profile as a one-row CSV.
    #[arg(long)]
    pub profile_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub embed_seed: Option<u64>,
    /// Add Gaussian noise of this relative scale to every non-embedding
    /// tensor of the model being written.
    #[arg(long)]
    pub perturb: Option<f64>,
}
