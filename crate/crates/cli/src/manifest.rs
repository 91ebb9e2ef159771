//! Per-stage provenance: every stage directory holds a `manifest.json` with
//! the hashes of what the stage read and wrote.

use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

/// Stage names in pipeline order; the index doubles as the RNG stream id.
pub const STAGES: [&str; 8] = [
    "excite",
    "vdp",
    "lockin",
    "bla",
    "fit-linear",
    "train",
    "simulate",
    "validate",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Relative to the output directory when inside it.
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub tool_version: String,
    pub rng_seed: u64,
    pub stage_seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Contract(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Seed of a stage's private substream of the global seed.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let idx = STAGES.iter().position(|s| *s == stage).expect("known stage");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(idx as u64 + 1);
    rng.next_u64()
}

fn relative(out_dir: &Path, path: &Path) -> PathBuf {
    path.strip_prefix(out_dir).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf())
}

pub fn digest(out_dir: &Path, path: &Path) -> Result<FileDigest, CliError> {
    Ok(FileDigest {
        path: relative(out_dir, path),
        sha256: sha256_file(path)?,
    })
}

impl Manifest {
    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        let path = out_dir.join(&self.stage).join(MANIFEST);
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Load the manifest of `stage` and check that its outputs are unchanged.
    pub fn verified(out_dir: &Path, stage: &str, consumer: &str) -> Result<Manifest, CliError> {
        let path = out_dir.join(stage).join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|_| {
            CliError::Contract(format!(
                "stage `{consumer}` needs the outputs of `{stage}`, but {} is missing; run `{stage}` first",
                path.display()
            ))
        })?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Contract(format!("{}: {e}", path.display())))?;
        for f in &m.outputs {
            let p = out_dir.join(&f.path);
            let actual = sha256_file(&p).map_err(|_| {
                CliError::Contract(format!(
                    "stage `{consumer}`: output {} of `{stage}` is missing",
                    p.display()
                ))
            })?;
            if actual != f.sha256 {
                return Err(CliError::Contract(format!(
                    "stage `{consumer}`: output {} of `{stage}` changed since it was written (hash mismatch)",
                    p.display()
                )));
            }
        }
        Ok(m)
    }

    /// Outputs of this manifest whose file name starts with `prefix` and ends with `.csv`.
    pub fn csv_outputs(&self, out_dir: &Path, prefix: &str) -> Vec<PathBuf> {
        let mut v: Vec<PathBuf> = self
            .outputs
            .iter()
            .filter(|f| {
                f.path.extension().is_some_and(|e| e == "csv")
                    && f.path
                        .file_name()
                        .is_some_and(|n| n.to_string_lossy().starts_with(prefix))
            })
            .map(|f| out_dir.join(&f.path))
            .collect();
        v.sort();
        v
    }
}
