use std::fs;

use serde::Serialize;
use sha2::{Digest, Sha256};

use seedprint_core::fingerprint::perturb_weights;
use seedprint_core::transformer::{init_weights_with_embed_seed, write_checkpoint, Preset};

use crate::args::InitArgs;
use crate::config::{pick, FileConfig, ModelSpec};
use crate::output::{write_json, Provenance};
use crate::UsageError;

#[derive(Debug, Serialize)]
struct Effective {
    model: ModelSpec,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    embed_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    perturb: Option<f64>,
}

#[derive(Debug, Serialize)]
struct InitReport {
    path: String,
    bytes: usize,
    sha256: String,
    parameters: usize,
}

pub fn run(args: InitArgs) -> anyhow::Result<i32> {
    let mut prov = Provenance::start("init");
    let file = FileConfig::load(args.config.as_deref())?;
    let (model, loaded) = ModelSpec::resolve(&args.model, &file, Preset::Tiny)?;
    let perturb = args.perturb.or(file.perturb);
    if let Some(p) = perturb {
        if !(p >= 0.0 && p.is_finite()) {
            return Err(UsageError(format!("--perturb must be a non-negative number, got {p}")).into());
        }
    }
    let embed_seed = args.embed_seed.or(file.embed_seed);
    if loaded.is_some() && embed_seed.is_some() {
        return Err(UsageError("--embed-seed has no effect on a loaded checkpoint".into()).into());
    }
    let cfg = Effective {
        seed: pick(args.seed, file.seed, 0),
        embed_seed,
        perturb,
        model,
    };
    let c = &cfg.model.config;
    let mut weights = match loaded {
        Some((bytes, w)) => {
            prov.hash_input(&bytes);
            w
        }
        None => init_weights_with_embed_seed(c, cfg.seed, cfg.embed_seed.unwrap_or(cfg.seed))?,
    };
    if let Some(scale) = perturb {
        weights = perturb_weights(&weights, scale, cfg.seed)?;
    }
    let bytes = write_checkpoint(c, &weights)?;
    fs::write(&args.out, &bytes).map_err(|e| anyhow::anyhow!("cannot write {}: {e}", args.out.display()))?;
    let digest = Sha256::digest(&bytes);
    let report = InitReport {
        path: args.out.display().to_string(),
        bytes: bytes.len(),
        sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        parameters: weights.parameter_count(),
    };
    let meta = prov.finish(&cfg, vec![cfg.seed])?;
    write_json(None, &meta, &report)?;
    Ok(0)
}
