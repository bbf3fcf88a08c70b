use serde::Serialize;

use seedprint_core::probes::{expected_uniform_top1, token_bias, uniform_baseline_histogram, ProbeBatch, TokenHistogram};
use seedprint_core::stats::top1_binomial_pvalue;
use seedprint_core::transformer::{init_weights_with_embed_seed, InputMode, Preset};

use crate::args::TokenBiasArgs;
use crate::config::{pick, require_positive, require_seq_len, FileConfig, ModelSpec};
use crate::output::{csv_body, write_csv, Provenance};
use crate::UsageError;

#[derive(Debug, Serialize)]
struct Effective {
    model: ModelSpec,
    seeds: Vec<u64>,
    embed_seed: Option<u64>,
    probe_seed: u64,
    n: usize,
    seq_len: usize,
    top_k: usize,
    baseline: bool,
}

#[derive(Debug, Serialize)]
struct Row {
    source: &'static str,
    seed: u64,
    seqlen: usize,
    n: u64,
    rank: usize,
    token_id: usize,
    count: u64,
    freq: f64,
    /// Bonferroni-corrected binomial upper tail of this count.
    p_value: f64,
    p_underflow: bool,
    distinct_tokens: usize,
    direction_token: Option<usize>,
    uniform_expected_top1: f64,
}

pub fn run(args: TokenBiasArgs) -> anyhow::Result<i32> {
    let mut prov = Provenance::start("token-bias");
    let file = FileConfig::load(args.common.config.as_deref())?;
    let (model, loaded) = ModelSpec::resolve(&args.model, &file, Preset::NanoGpt2Rope)?;
    if model.config.input_mode != InputMode::Tokens {
        return Err(UsageError("token-bias needs a token-input model".into()).into());
    }
    let seeds = if !args.seed.is_empty() {
        args.seed.clone()
    } else if let Some(s) = &file.seeds {
        s.clone()
    } else {
        vec![file.seed.unwrap_or(0)]
    };
    if loaded.is_some() && seeds.len() > 1 {
        return Err(UsageError("a checkpoint fixes the weights; pass at most one seed".into()).into());
    }
    let cfg = Effective {
        seeds: seeds.clone(),
        embed_seed: args.embed_seed.or(file.embed_seed),
        probe_seed: pick(args.probe_seed, file.probe_seed, seeds[0]),
        n: require_positive("n", pick(args.common.n, file.n, 500))?,
        seq_len: require_seq_len(pick(args.common.seq_len, file.seq_len, 256), &model.config)?,
        top_k: require_positive("top-k", pick(args.top_k, file.top_k, 10))?,
        baseline: args.baseline || file.baseline.unwrap_or(false),
        model,
    };
    if let Some((bytes, _)) = &loaded {
        prov.hash_input(bytes);
    }

    let c = &cfg.model.config;
    let batch = ProbeBatch::tokens(cfg.n, cfg.seq_len, c.vocab_size, cfg.probe_seed)?;
    let expected = expected_uniform_top1(cfg.n, c.vocab_size);
    let mut rows = Vec::new();
    for &seed in &seeds {
        let result = match &loaded {
            Some((_, w)) => token_bias(c, w, &batch)?,
            None => {
                let w = init_weights_with_embed_seed(c, seed, cfg.embed_seed.unwrap_or(seed))?;
                token_bias(c, &w, &batch)?
            }
        };
        log::info!("seed {seed}: top-1 {:?}", result.histogram.top1());
        push_rows(&mut rows, "model", seed, &cfg, &result.histogram, Some(result.direction_token), expected);
    }
    if cfg.baseline {
        let h = uniform_baseline_histogram(cfg.n, c.vocab_size, cfg.probe_seed)?;
        push_rows(&mut rows, "uniform", cfg.probe_seed, &cfg, &h, None, expected);
    }
    let meta = prov.finish(&cfg, seeds)?;
    write_csv(cfg_out(&args), &meta, &csv_body(rows)?)?;
    Ok(0)
}

fn cfg_out(args: &TokenBiasArgs) -> Option<&std::path::Path> {
    args.common.out.as_deref()
}

fn push_rows(
    rows: &mut Vec<Row>,
    source: &'static str,
    seed: u64,
    cfg: &Effective,
    h: &TokenHistogram,
    direction_token: Option<usize>,
    expected: f64,
) {
    for (rank, (token_id, count)) in h.top_k(cfg.top_k).into_iter().enumerate() {
        let test = top1_binomial_pvalue(count, h.n, h.vocab as u64);
        let (p_value, p_underflow) = test.map_or((f64::NAN, false), |t| (t.p_value, t.underflow));
        rows.push(Row {
            source,
            seed,
            seqlen: cfg.seq_len,
            n: h.n,
            rank: rank + 1,
            token_id,
            count,
            freq: count as f64 / h.n as f64,
            p_value,
            p_underflow,
            distinct_tokens: h.counts.len(),
            direction_token,
            uniform_expected_top1: expected,
        });
    }
}
