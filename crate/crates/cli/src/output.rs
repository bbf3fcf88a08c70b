//! Result files with embedded provenance.
//!
//! CSV files start with `#` comment lines carrying the metadata; JSON files
//! are `{"meta": …, "result": …}`. Everything outside the metadata is a pure
//! function of the effective config and input files.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub started_unix_s: f64,
    pub wall_clock_s: f64,
    /// SHA-256 over the canonical effective config and the bytes of every
    /// input file.
    pub input_hash: String,
}

/// Collects provenance while a command runs.
pub struct Provenance {
    command: &'static str,
    started: SystemTime,
    clock: Instant,
    hasher: Sha256,
}

impl Provenance {
    pub fn start(command: &'static str) -> Self {
        Self {
            command,
            started: SystemTime::now(),
            clock: Instant::now(),
            hasher: Sha256::new(),
        }
    }

    pub fn hash_input(&mut self, bytes: &[u8]) {
        self.hasher.update((bytes.len() as u64).to_le_bytes());
        self.hasher.update(bytes);
    }

    pub fn finish(self, config: &impl Serialize, seeds: Vec<u64>) -> anyhow::Result<Meta> {
        let config = serde_json::to_value(config)?;
        let mut hasher = self.hasher;
        hasher.update(serde_json::to_vec(&config)?);
        let digest = hasher.finalize();
        Ok(Meta {
            tool: "seedprint",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config,
            seeds,
            started_unix_s: self.started.duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64()),
            wall_clock_s: self.clock.elapsed().as_secs_f64(),
            input_hash: digest.iter().map(|b| format!("{b:02x}")).collect(),
        })
    }
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

pub fn csv_text(meta: &Meta, body: &str) -> anyhow::Result<String> {
    let mut text = String::new();
    text.push_str(&format!("# {} {} {}\n", meta.tool, meta.version, meta.command));
    text.push_str(&format!("# config: {}\n", serde_json::to_string(&meta.config)?));
    text.push_str(&format!("# seeds: {}\n", serde_json::to_string(&meta.seeds)?));
    text.push_str(&format!("# started_unix_s: {:.3}\n", meta.started_unix_s));
    text.push_str(&format!("# wall_clock_s: {:.3}\n", meta.wall_clock_s));
    text.push_str(&format!("# input_hash: {}\n", meta.input_hash));
    text.push_str(body);
    Ok(text)
}

pub fn write_csv(out: Option<&Path>, meta: &Meta, body: &str) -> anyhow::Result<()> {
    emit(out, &csv_text(meta, body)?)
}

pub fn write_json(out: Option<&Path>, meta: &Meta, result: &impl Serialize) -> anyhow::Result<()> {
    #[derive(Serialize)]
    struct Doc<'a, R> {
        meta: &'a Meta,
        result: &'a R,
    }
    let mut text = serde_json::to_string_pretty(&Doc { meta, result })?;
    text.push('\n');
    emit(out, &text)
}

/// Serialize rows into a CSV body with a header row.
pub fn csv_body<R: Serialize>(rows: impl IntoIterator<Item = R>) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
