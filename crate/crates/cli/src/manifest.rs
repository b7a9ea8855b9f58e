use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::AppConfig;

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Reproducibility record written next to every stage's outputs. Contains
/// no timestamps, so identical runs produce identical manifests.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub stage: &'static str,
    pub seed: u64,
    pub config_sha256: String,
    pub config: AppConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn config_hash(cfg: &AppConfig) -> String {
    let canonical = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(canonical))
}

pub fn manifest_name(stage: &str) -> String {
    format!("manifest_{stage}.json")
}

/// Writes `manifest_<stage>.json` into `out_dir`, digesting `inputs` and the
/// `outputs` (paths relative to `out_dir`).
pub fn write_manifest(
    out_dir: &Path,
    stage: &'static str,
    cfg: &AppConfig,
    inputs: &[PathBuf],
    outputs: &[String],
) -> Result<()> {
    let mut input_digests = Vec::with_capacity(inputs.len());
    for p in inputs {
        input_digests.push(FileDigest {
            path: p.display().to_string(),
            sha256: sha256_file(p)?,
        });
    }
    let mut output_digests = Vec::with_capacity(outputs.len());
    for p in outputs {
        output_digests.push(FileDigest {
            sha256: sha256_file(&out_dir.join(p))?,
            path: p.clone(),
        });
    }
    let m = Manifest {
        tool: "qoe-lens",
        version: env!("CARGO_PKG_VERSION"),
        stage,
        seed: cfg.seed,
        config_sha256: config_hash(cfg),
        config: cfg.clone(),
        inputs: input_digests,
        outputs: output_digests,
    };
    let text = serde_json::to_string_pretty(&m)?;
    fs::write(out_dir.join(manifest_name(stage)), text + "\n")?;
    Ok(())
}
