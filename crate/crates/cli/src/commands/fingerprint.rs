use std::fs;
use std::path::PathBuf;

use serde::Serialize;

use seedprint_core::fingerprint::{
    fingerprint, FingerprintOptions, ModelRef, OutputKind, TestChoice, DEFAULT_ALPHA, DEFAULT_M,
};
use seedprint_core::probes::ProbeBatch;
use seedprint_core::transformer::{read_checkpoint, InputMode, ModelConfig};

use crate::args::FingerprintArgs;
use crate::config::{parse_named, pick, require_positive, require_seq_len, FileConfig};
use crate::output::{write_json, Provenance};
use crate::UsageError;

#[derive(Debug, Serialize)]
struct Effective {
    model_a: PathBuf,
    model_b: PathBuf,
    probe_seed: u64,
    n: usize,
    seq_len: usize,
    options: FingerprintOptions,
    config_a: ModelConfig,
    config_b: ModelConfig,
}

pub fn run(args: FingerprintArgs) -> anyhow::Result<i32> {
    let mut prov = Provenance::start("fingerprint");
    let file = FileConfig::load(args.common.config.as_deref())?;
    let m = require_positive("m", pick(args.m, file.m, DEFAULT_M))?;
    let alpha = pick(args.alpha, file.alpha, DEFAULT_ALPHA);
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(UsageError(format!("--alpha must be positive, got {alpha}")).into());
    }
    let output_kind: OutputKind = match args.output_kind.as_deref().or(file.output_kind.as_deref()) {
        Some(raw) => parse_named("output kind", raw, true)?,
        None => OutputKind::FinalHidden,
    };
    let test: TestChoice = match args.test.as_deref().or(file.test.as_deref()) {
        Some(raw) => parse_named("test", &raw.to_lowercase(), true)?,
        None => TestChoice::default(),
    };

    let load = |path: &PathBuf| -> anyhow::Result<_> {
        let bytes = fs::read(path).map_err(|e| UsageError(format!("cannot read checkpoint {}: {e}", path.display())))?;
        let (config, weights) = read_checkpoint(&bytes)?;
        Ok((bytes, config, weights))
    };
    let (bytes_a, config_a, weights_a) = load(&args.model_a)?;
    let (bytes_b, config_b, weights_b) = load(&args.model_b)?;
    if config_a.d_model != config_b.d_model || config_a.input_mode != config_b.input_mode {
        return Err(UsageError("checkpoints disagree on width or input mode; they cannot share a probe batch".into()).into());
    }
    if config_a.input_mode == InputMode::Tokens && config_a.vocab_size != config_b.vocab_size {
        return Err(UsageError("token-input checkpoints must share a vocabulary".into()).into());
    }
    let seq_len = pick(args.common.seq_len, file.seq_len, 256);
    require_seq_len(seq_len, &config_a)?;
    require_seq_len(seq_len, &config_b)?;
    let n = require_positive("n", pick(args.common.n, file.n, 2000))?;
    let width = match config_a.input_mode {
        InputMode::Tokens => config_a.vocab_size,
        InputMode::Vectors => config_a.d_model,
    };
    if m > width.max(config_a.d_model) {
        return Err(UsageError(format!("--m {m} exceeds the output width")).into());
    }
    prov.hash_input(&bytes_a);
    prov.hash_input(&bytes_b);
    let cfg = Effective {
        model_a: args.model_a.clone(),
        model_b: args.model_b.clone(),
        probe_seed: pick(args.seed, file.seed, 0),
        n,
        seq_len,
        options: FingerprintOptions {
            m,
            alpha,
            output_kind,
            test,
            null_seed: None,
        },
        config_a,
        config_b,
    };

    let batch = ProbeBatch::for_model(&cfg.config_a, n, seq_len, cfg.probe_seed)?;
    let id_a = args.model_a.display().to_string();
    let id_b = args.model_b.display().to_string();
    let a = ModelRef {
        config: &cfg.config_a,
        weights: &weights_a,
        id: &id_a,
    };
    let b = ModelRef {
        config: &cfg.config_b,
        weights: &weights_b,
        id: &id_b,
    };
    let report = fingerprint(a, b, &batch, &cfg.options)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    eprintln!(
        "{} (|S|={}, p_t={}, p_u={})",
        if report.verdict { "same lineage" } else { "different lineage" },
        report.s_size,
        report.p_t.map_or("n/a".into(), |p| format!("{p:.3e}")),
        report.p_u.map_or("n/a".into(), |p| format!("{p:.3e}")),
    );
    let meta = prov.finish(&cfg, vec![cfg.probe_seed])?;
    write_json(args.common.out.as_deref(), &meta, &report)?;
    Ok(if report.verdict { 0 } else { 1 })
}
