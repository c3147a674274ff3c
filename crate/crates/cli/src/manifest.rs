//! JSON-lines run manifest.
//!
//! ```text
//! {"type":"run","command":{...},"seed":0,"config":{...},"versions":{...}}
//! {"type":"input","file":"/abs/path","sha256":"..."}      zero or more
//! {"type":"result","file":"relative/path","sha256":"..."}  one per result file
//! {"type":"status","exit_code":0}
//! ```
//!
//! The `run` line is written before any result exists.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::Command;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
/// Version of the manifest and result-file layout.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub fusiondet: String,
    pub cli: String,
    pub format: u32,
}

impl Versions {
    pub fn current() -> Self {
        Versions {
            fusiondet: fusiondet::VERSION.to_string(),
            cli: env!("CARGO_PKG_VERSION").to_string(),
            format: FORMAT_VERSION,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Entry {
    Run {
        command: Command,
        seed: u64,
        config: RunConfig,
        versions: Versions,
    },
    Input {
        file: String,
        sha256: String,
    },
    Result {
        file: String,
        sha256: String,
    },
    Status {
        exit_code: i32,
    },
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| CliError::io(path, e))?))
}

/// Appends entries to a run's manifest and writes its result files.
pub struct Run {
    pub out: PathBuf,
    pub config: RunConfig,
    manifest: PathBuf,
}

impl Run {
    /// Creates `out` and writes the `run` line, replacing any earlier manifest there.
    pub fn start(out: &Path, command: &Command, config: &RunConfig) -> Result<Self> {
        std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        let manifest = out.join(MANIFEST_FILE);
        std::fs::write(&manifest, b"").map_err(|e| CliError::io(&manifest, e))?;
        let run = Run {
            out: out.to_path_buf(),
            config: config.clone(),
            manifest,
        };
        run.append(&Entry::Run {
            command: command.clone(),
            seed: config.seed,
            config: config.clone(),
            versions: Versions::current(),
        })?;
        Ok(run)
    }

    fn append(&self, entry: &Entry) -> Result<()> {
        let mut f = OpenOptions::new()
            .append(true)
            .open(&self.manifest)
            .map_err(|e| CliError::io(&self.manifest, e))?;
        let line = serde_json::to_string(entry)?;
        writeln!(f, "{line}").map_err(|e| CliError::io(&self.manifest, e))
    }

    /// Records an input file by its canonical path and hash.
    pub fn input(&self, path: &Path) -> Result<()> {
        let abs = std::fs::canonicalize(path).map_err(|e| CliError::io(path, e))?;
        self.append(&Entry::Input {
            file: abs.display().to_string(),
            sha256: hash_file(&abs)?,
        })
    }

    /// Writes a result file under the output directory and records its hash.
    pub fn result(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.out.join(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.append(&Entry::Result {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
        })?;
        Ok(path)
    }

    pub fn finish(&self, exit_code: i32) -> Result<()> {
        self.append(&Entry::Status { exit_code })
    }
}

/// A parsed manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub command: Command,
    pub config: RunConfig,
    pub versions: Versions,
    pub inputs: Vec<(String, String)>,
    pub results: Vec<(String, String)>,
    pub exit_code: Option<i32>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines.next().ok_or_else(|| CliError::Config("empty manifest".into()))?;
        let Entry::Run {
            command,
            config,
            versions,
            ..
        } = serde_json::from_str(first).map_err(|e| CliError::Config(format!("manifest run line: {e}")))?
        else {
            return Err(CliError::Config("manifest must start with a run line".into()));
        };
        let mut m = Manifest {
            command,
            config,
            versions,
            inputs: Vec::new(),
            results: Vec::new(),
            exit_code: None,
        };
        for line in lines {
            match serde_json::from_str(line).map_err(|e| CliError::Config(format!("manifest: {e}")))? {
                Entry::Input { file, sha256 } => m.inputs.push((file, sha256)),
                Entry::Result { file, sha256 } => m.results.push((file, sha256)),
                Entry::Status { exit_code } => m.exit_code = Some(exit_code),
                Entry::Run { .. } => return Err(CliError::Config("second run line in manifest".into())),
            }
        }
        Ok(m)
    }
}
