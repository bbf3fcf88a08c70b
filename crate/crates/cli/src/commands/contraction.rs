use serde::Serialize;

use seedprint_core::numerics::Activation;
use seedprint_core::probes::{
    attn0_stack_intra_curve, contraction_curve, intra_sequence_curve, mlp0_depth_curve, ProbeBatch, SimilarityStat,
};
use seedprint_core::transformer::{init_weights, Preset};

use crate::args::ContractionArgs;
use crate::config::{parse_named, pick, require_positive, require_seq_len, FileConfig, ModelSpec};
use crate::output::{csv_body, write_csv, Provenance};
use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
enum Stack {
    Transformer,
    Mlp0,
    Attn0,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    Inter,
    Intra,
}

#[derive(Debug, Serialize)]
struct Effective {
    stack: Stack,
    kind: Kind,
    seed: u64,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    seq_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<ModelSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    activation: Option<String>,
}

#[derive(Debug, Serialize)]
struct Row {
    stack: Stack,
    kind: Kind,
    ablation: String,
    activation: String,
    /// Residual-stream index (0 = input) or `final_norm`.
    layer: String,
    mean: f64,
    std: f64,
    p_value: Option<f64>,
    p_underflow: bool,
    n: usize,
    t: usize,
}

fn row(cfg: &Effective, ablation: &str, activation: &str, layer: String, s: &SimilarityStat, t: usize) -> Row {
    Row {
        stack: cfg.stack,
        kind: cfg.kind,
        ablation: ablation.to_string(),
        activation: activation.to_string(),
        layer,
        mean: s.mean,
        std: s.std,
        p_value: s.p_value,
        p_underflow: s.underflow,
        n: cfg.n,
        t,
    }
}

fn name<T: Serialize>(v: T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

pub fn run(args: ContractionArgs) -> anyhow::Result<i32> {
    let mut prov = Provenance::start("contraction");
    let file = FileConfig::load(args.common.config.as_deref())?;
    let stack: Stack = match args.stack.as_deref().or(file.stack.as_deref()) {
        Some(raw) => parse_named("stack", raw, false)?,
        None => Stack::Transformer,
    };
    let kind_default = if stack == Stack::Attn0 { Kind::Intra } else { Kind::Inter };
    let kind: Kind = match args.kind.as_deref().or(file.kind.as_deref()) {
        Some(raw) => parse_named("kind", raw, false)?,
        None => kind_default,
    };
    if (stack == Stack::Mlp0 && kind == Kind::Intra) || (stack == Stack::Attn0 && kind == Kind::Inter) {
        return Err(UsageError(format!("{} stacks support only --kind {}", name(stack), name(kind_default))).into());
    }
    let seed = pick(args.seed, file.seed, 0);
    let n = require_positive("n", pick(args.common.n, file.n, 500))?;
    if n < 2 {
        return Err(UsageError("--n must be at least 2".into()).into());
    }

    let (cfg, rows) = match stack {
        Stack::Transformer => {
            let (model, loaded) = ModelSpec::resolve(&args.model, &file, Preset::NanoGpt2Rope)?;
            let t = require_seq_len(pick(args.common.seq_len, file.seq_len, 128), &model.config)?;
            if kind == Kind::Intra && t < 2 {
                return Err(UsageError("intra-sequence similarity needs --seq-len >= 2".into()).into());
            }
            if let Some((bytes, _)) = &loaded {
                prov.hash_input(bytes);
            }
            let cfg = Effective {
                stack,
                kind,
                seed,
                n,
                seq_len: Some(t),
                model: Some(model),
                d: None,
                depth: None,
                activation: None,
            };
            let c = &cfg.model.as_ref().expect("set above").config;
            let weights = match loaded {
                Some((_, w)) => w,
                None => init_weights(c, seed)?,
            };
            let batch = ProbeBatch::for_model(c, n, t, seed)?;
            let curve = match kind {
                Kind::Inter => contraction_curve(c, &weights, &batch)?,
                Kind::Intra => intra_sequence_curve(c, &weights, &batch)?,
            };
            let (abl, act) = (name(c.ablation), name(c.activation));
            let mut rows: Vec<Row> = curve
                .layers
                .iter()
                .enumerate()
                .map(|(l, s)| row(&cfg, &abl, &act, l.to_string(), s, t))
                .collect();
            if let Some(s) = &curve.final_norm {
                rows.push(row(&cfg, &abl, &act, "final_norm".into(), s, t));
            }
            (cfg, rows)
        }
        Stack::Mlp0 | Stack::Attn0 => {
            if args.model.preset.is_some() || args.model.checkpoint.is_some() || args.model.ablation.is_some() {
                return Err(UsageError("--preset/--checkpoint/--ablation apply to transformer stacks only".into()).into());
            }
            let d = require_positive("d", pick(args.d, file.d, 512))?;
            let depth = require_positive("depth", pick(args.depth, file.depth, 6))?;
            if stack == Stack::Mlp0 {
                let raw = args.model.activation.clone().or(file.activation.clone()).unwrap_or_else(|| "relu".into());
                let act: Activation = parse_named("activation", &raw, false)?;
                let cfg = Effective {
                    stack,
                    kind,
                    seed,
                    n,
                    seq_len: None,
                    model: None,
                    d: Some(d),
                    depth: Some(depth),
                    activation: Some(name(act)),
                };
                let curve = mlp0_depth_curve(d, n, depth, act, seed)?;
                let rows = curve
                    .iter()
                    .enumerate()
                    .map(|(l, s)| row(&cfg, "", &name(act), (l + 1).to_string(), s, 1))
                    .collect();
                (cfg, rows)
            } else {
                let t = require_positive("seq-len", pick(args.common.seq_len, file.seq_len, 16))?;
                if t < 2 {
                    return Err(UsageError("intra-sequence similarity needs --seq-len >= 2".into()).into());
                }
                let cfg = Effective {
                    stack,
                    kind,
                    seed,
                    n,
                    seq_len: Some(t),
                    model: None,
                    d: Some(d),
                    depth: Some(depth),
                    activation: None,
                };
                let curve = attn0_stack_intra_curve(t, d, n, depth, seed)?;
                let rows = curve
                    .layers
                    .iter()
                    .enumerate()
                    .map(|(l, s)| row(&cfg, "", "", l.to_string(), s, t))
                    .collect();
                (cfg, rows)
            }
        }
    };
    let meta = prov.finish(&cfg, vec![seed])?;
    write_csv(args.common.out.as_deref(), &meta, &csv_body(rows)?)?;
    Ok(0)
}
