use serde::{Deserialize, Serialize};

use seedprint_core::numerics::Activation;
use seedprint_core::probes::{attn0_stack_intra_curve, mlp0_depth_curve, prop2_experiment};
use seedprint_core::theory::{
    attn_amplifier_similarity, intra_similarity_finite, mlp_mlp_similarity, odd_activation_similarity,
    relu_correlation_after,
};

use crate::args::TheoryArgs;
use crate::config::{pick, FileConfig};
use crate::output::{csv_body, write_csv, Provenance};
use crate::UsageError;

/// Monte-Carlo sizes; every field can be overridden under `"theory"` in the
/// config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Params {
    mlp_d: usize,
    mlp_pairs: usize,
    relu_depth: usize,
    tanh_depth: usize,
    amp_d: usize,
    amp_t: usize,
    amp_seqs: usize,
    intra_d: usize,
    intra_ts: Vec<usize>,
    /// Sequences per entry of `intra_ts`.
    intra_seqs: Vec<usize>,
    intra_l_min: usize,
    intra_l_max: usize,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            mlp_d: 2048,
            mlp_pairs: 2000,
            relu_depth: 4,
            tanh_depth: 6,
            amp_d: 1024,
            amp_t: 128,
            amp_seqs: 200,
            intra_d: 512,
            intra_ts: vec![16, 512],
            intra_seqs: vec![200, 12],
            intra_l_min: 3,
            intra_l_max: 12,
        }
    }
}

#[derive(Debug, Serialize)]
struct Effective {
    seed: u64,
    params: Params,
}

#[derive(Debug, Serialize)]
struct Row {
    check: &'static str,
    t: Option<usize>,
    layer: Option<usize>,
    measured: f64,
    oracle: f64,
    delta: f64,
    tolerance: f64,
    pass: bool,
}

fn check(check: &'static str, t: Option<usize>, layer: Option<usize>, measured: f64, oracle: f64, tol: f64) -> Row {
    let delta = measured - oracle;
    Row {
        check,
        t,
        layer,
        measured,
        oracle,
        delta,
        tolerance: tol,
        pass: delta.abs() <= tol,
    }
}

/// Ordering checks: `measured − oracle` must be positive.
fn above(check: &'static str, t: Option<usize>, layer: Option<usize>, measured: f64, oracle: f64) -> Row {
    Row {
        check,
        t,
        layer,
        measured,
        oracle,
        delta: measured - oracle,
        tolerance: 0.0,
        pass: measured > oracle,
    }
}

pub fn run(args: TheoryArgs) -> anyhow::Result<i32> {
    let prov = Provenance::start("verify-theory");
    let file = FileConfig::load(args.common.config.as_deref())?;
    let mut params: Params = match &file.theory {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| UsageError(format!("theory: {e}")))?,
        None => Params::default(),
    };
    if let Some(n) = args.common.n.or(file.n) {
        params.mlp_pairs = n;
    }
    if let Some(t) = args.common.seq_len.or(file.seq_len) {
        params.amp_t = t;
    }
    validate(&params)?;
    let cfg = Effective {
        seed: pick(args.seed, file.seed, 0),
        params,
    };
    let p = &cfg.params;
    let seed = cfg.seed;
    let mut rows = Vec::new();

    let relu = mlp0_depth_curve(p.mlp_d, p.mlp_pairs, p.relu_depth, Activation::Relu, seed)?;
    let oracle = relu_correlation_after(p.relu_depth);
    for (l, (s, o)) in relu.iter().zip(&oracle.rho_by_layer).enumerate() {
        let tol = if l == 0 { 0.02 } else { 0.03 };
        rows.push(check("relu_mlp0_cosine", None, Some(l + 1), s.mean, *o, tol));
        if l > 0 {
            rows.push(above("relu_mlp0_increasing", None, Some(l + 1), s.mean, relu[l - 1].mean));
        }
    }
    let tanh = mlp0_depth_curve(p.mlp_d, p.mlp_pairs, p.tanh_depth, Activation::Tanh, seed)?;
    for (l, s) in tanh.iter().enumerate() {
        rows.push(check("tanh_mlp0_cosine", None, Some(l + 1), s.mean, odd_activation_similarity(l + 1), 0.02));
    }

    let amp = prop2_experiment(p.amp_d, p.amp_t, p.amp_seqs, seed)?;
    let first = relu_correlation_after(1).rho_by_layer[0];
    rows.push(check("shared_first_layer", Some(p.amp_t), Some(1), amp.first_layer.mean, first, 0.03));
    rows.push(check("mlp_then_mlp", Some(p.amp_t), Some(2), amp.mlp_mlp.mean, mlp_mlp_similarity(), 0.03));
    let amp_oracle = attn_amplifier_similarity(p.amp_t)?;
    rows.push(check("mlp_then_attn", Some(p.amp_t), Some(2), amp.attn_mlp.mean, amp_oracle, 0.02));

    // formula index L is reached after L − 1 prefix-averaging passes
    let passes = p.intra_l_max - 1;
    let mut curves = Vec::new();
    for (&t, &n) in p.intra_ts.iter().zip(&p.intra_seqs) {
        let curve = attn0_stack_intra_curve(t, p.intra_d, n, passes, seed)?;
        for l in p.intra_l_min..=p.intra_l_max {
            let oracle = intra_similarity_finite(t, l)?;
            rows.push(check("attn0_intra_similarity", Some(t), Some(l), curve.layers[l - 1].mean, oracle, 0.03));
        }
        curves.push((t, curve));
    }
    for pair in curves.windows(2) {
        let ((t_short, short), (_, long)) = if pair[0].0 < pair[1].0 { (&pair[0], &pair[1]) } else { (&pair[1], &pair[0]) };
        for l in p.intra_l_min..=p.intra_l_max {
            rows.push(above("attn0_shorter_t_higher", Some(*t_short), Some(l), short.layers[l - 1].mean, long.layers[l - 1].mean));
        }
    }

    let passed = rows.iter().filter(|r| r.pass).count();
    eprintln!("verify-theory: {passed}/{} checks within tolerance", rows.len());
    let meta = prov.finish(&cfg, vec![seed])?;
    write_csv(args.common.out.as_deref(), &meta, &csv_body(rows)?)?;
    Ok(0)
}

fn validate(p: &Params) -> Result<(), UsageError> {
    let bad = |m: &str| Err(UsageError(format!("theory: {m}")));
    if p.mlp_d == 0 || p.amp_d == 0 || p.intra_d == 0 {
        return bad("widths must be positive");
    }
    if p.mlp_pairs < 2 || p.amp_seqs < 2 {
        return bad("need at least 2 pairs / sequences");
    }
    if p.relu_depth == 0 || p.tanh_depth == 0 || p.amp_t == 0 {
        return bad("depths and amp_t must be positive");
    }
    if p.intra_ts.len() != p.intra_seqs.len() || p.intra_ts.iter().any(|&t| t < 2) || p.intra_seqs.iter().any(|&n| n < 2) {
        return bad("intra_ts and intra_seqs must pair up, with t >= 2 and at least 2 sequences");
    }
    if p.intra_l_min < 2 || p.intra_l_max < p.intra_l_min {
        return bad("need 2 <= intra_l_min <= intra_l_max");
    }
    Ok(())
}
