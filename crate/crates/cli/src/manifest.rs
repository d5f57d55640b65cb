use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::failure::{CliResult, Failure};
use crate::io::{read_bytes, write_bytes};

#[derive(Debug, Serialize)]
pub struct Timestamps {
    pub started: Option<u64>,
    pub finished: Option<u64>,
}

/// Provenance record written next to every artifact.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub seed: Option<u64>,
    pub tool_version: String,
    /// SHA-256 of each input file, keyed by the path given on the command line.
    pub inputs: Vec<(String, String)>,
    pub timestamps: Timestamps,
}

/// Reproducible builds pin time through `SOURCE_DATE_EPOCH`; without it the
/// manifest records no time so reruns stay byte-identical.
fn epoch() -> Option<u64> {
    std::env::var("SOURCE_DATE_EPOCH").ok()?.trim().parse().ok()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    /// `config` is canonicalized by `serde_json::Value`, whose objects keep
    /// keys sorted, before hashing.
    pub fn new(
        command: &str,
        config: &impl Serialize,
        seed: Option<u64>,
        inputs: &[&str],
    ) -> CliResult<Self> {
        let canonical: Value = serde_json::to_value(config)
            .map_err(|e| Failure::validation(format!("config: {e}")))?;
        let inputs = inputs
            .iter()
            .map(|p| Ok((p.to_string(), sha256_hex(&read_bytes(p)?))))
            .collect::<CliResult<Vec<_>>>()?;
        let mut hasher = Sha256::new();
        hasher.update(canonical.to_string().as_bytes());
        for (path, digest) in &inputs {
            hasher.update(path.as_bytes());
            hasher.update(digest.as_bytes());
        }
        Ok(Self {
            command: command.into(),
            config_digest: hex::encode(hasher.finalize()),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            inputs,
            timestamps: Timestamps {
                started: epoch(),
                finished: epoch(),
            },
        })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| Failure::validation(e.to_string()))?;
        text.push('\n');
        write_bytes(path, text.as_bytes())
    }
}

/// `fit.json` gets `fit.json.manifest.json` beside it.
pub fn manifest_path(out: &Path) -> std::path::PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    name.into()
}
