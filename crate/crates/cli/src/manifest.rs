use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Ingest,
    Group,
    Rank,
    Report,
    Eval,
    Pipeline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> anyhow::Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Provenance record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub config_path: Option<String>,
    pub config_sha256: Option<String>,
    pub window: Option<String>,
    pub level: Option<u8>,
    pub strict: bool,
    pub select: Vec<String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// 0 on success, 1 input error, 2 config error, 3 internal error.
    pub exit_code: i32,
    pub created_at: String,
}

impl RunManifest {
    pub fn new(command: Command) -> Self {
        Self {
            tool: "crashlens".into(),
            version: TOOL_VERSION.into(),
            command,
            config_path: None,
            config_sha256: None,
            window: None,
            level: None,
            strict: false,
            select: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            exit_code: 0,
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    pub fn add_inputs<'p>(&mut self, paths: impl IntoIterator<Item = &'p Path>) -> anyhow::Result<()> {
        for p in paths {
            self.inputs.push(FileDigest::of(p)?);
        }
        Ok(())
    }

    pub fn add_outputs<'p>(&mut self, paths: impl IntoIterator<Item = &'p Path>) -> anyhow::Result<()> {
        for p in paths {
            self.outputs.push(FileDigest::of(p)?);
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// `groups.json` gets `groups.manifest.json` beside it.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let stem = output
        .file_stem()
        .map_or_else(|| "output".into(), |s| s.to_string_lossy().into_owned());
    output.with_file_name(format!("{stem}.manifest.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_bytes() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_sits_beside_output() {
        assert_eq!(
            manifest_path_for(Path::new("out/groups.json")),
            PathBuf::from("out/groups.manifest.json")
        );
    }
}
