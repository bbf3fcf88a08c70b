use std::fs;

use serde::Serialize;

use seedprint_core::probes::{positional_std_profile, ProbeBatch};
use seedprint_core::sink::{model_sink_rate, SinkAveraging, SinkSummary, DEFAULT_EPSILON};
use seedprint_core::transformer::{init_weights, Preset};

use crate::args::SinkArgs;
use crate::config::{parse_named, pick, require_positive, require_seq_len, FileConfig, ModelSpec};
use crate::output::{csv_text, write_json, Provenance};
use crate::UsageError;

#[derive(Debug, Serialize)]
struct Effective {
    model: ModelSpec,
    seed: u64,
    probe_seed: u64,
    n: usize,
    seq_len: usize,
    epsilon: f64,
    averaging: SinkAveraging,
}

#[derive(Debug, Serialize)]
struct SinkReport {
    summary: SinkSummary,
    /// Std of the first layer's aggregated attention output at positions 1..=T.
    positional_std: Vec<f64>,
}

pub fn run(args: SinkArgs) -> anyhow::Result<i32> {
    let mut prov = Provenance::start("sink");
    let file = FileConfig::load(args.common.config.as_deref())?;
    let (model, loaded) = ModelSpec::resolve(&args.model, &file, Preset::NanoGpt2Rope)?;
    if !model.config.ablation.has_attention() {
        return Err(UsageError("sink metrics need an attention sublayer".into()).into());
    }
    let epsilon = pick(args.epsilon, file.epsilon, DEFAULT_EPSILON);
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(UsageError(format!("--epsilon must lie in [0, 1], got {epsilon}")).into());
    }
    let averaging: SinkAveraging = match args.averaging.as_deref().or(file.averaging.as_deref()) {
        Some(raw) => parse_named("averaging", raw, true)?,
        None => SinkAveraging::default(),
    };
    let seed = pick(args.seed, file.seed, 0);
    let cfg = Effective {
        seed,
        probe_seed: pick(args.probe_seed, file.probe_seed, seed),
        n: require_positive("n", pick(args.common.n, file.n, 100))?,
        seq_len: require_seq_len(pick(args.common.seq_len, file.seq_len, 128), &model.config)?,
        epsilon,
        averaging,
        model,
    };
    let c = &cfg.model.config;
    let weights = match loaded {
        Some((bytes, w)) => {
            prov.hash_input(&bytes);
            w
        }
        None => init_weights(c, seed)?,
    };
    let batch = ProbeBatch::for_model(c, cfg.n, cfg.seq_len, cfg.probe_seed)?;
    let summary = model_sink_rate(c, &weights, &batch, epsilon, averaging)?;
    let positional_std = positional_std_profile(c, &weights, &batch)?;
    eprintln!("sink rate {:.4} at epsilon {epsilon}", summary.sink_rate);
    let report = SinkReport { summary, positional_std };
    let meta = prov.finish(&cfg, vec![seed])?;
    if let Some(path) = &args.profile_out {
        let header: Vec<String> = (1..=cfg.seq_len).map(|i| format!("pos_{i}")).collect();
        let values: Vec<String> = report.positional_std.iter().map(|v| v.to_string()).collect();
        let body = format!("{}\n{}\n", header.join(","), values.join(","));
        fs::write(path, csv_text(&meta, &body)?)
            .map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))?;
    }
    write_json(args.common.out.as_deref(), &meta, &report)?;
    Ok(0)
}
