//! Subcommand drivers behind the `gjn` binary: config loading, the
//! validate → traffic → underload → simulate/integrate → verify pipeline,
//! output files and run manifests.

mod config;
mod stages;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{
    load_config, parse_config, ChainConfig, NlmpConfig, RunConfig, SimConfig, TrafficConfig, VerifyConfig,
    SCHEMA_VERSION,
};
pub use stages::run_command;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("network is overloaded (max ρ = {rho_max:.4}); simulation refused without --force")]
    Overloaded { rho_max: f64 },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl RunnerError {
    /// 2 for configuration problems, 1 for everything found by analysis.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn stage(stage: &'static str, e: impl ToString) -> Self {
        RunnerError::Stage {
            stage,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Chain,
    Traffic,
    ValidateDist,
    Simulate,
    Nlmp,
    VerifyPh,
    Pipeline,
}

#[derive(Debug, Clone, Default)]
pub struct Flags {
    pub force: bool,
    pub quiet: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub command: Command,
    /// SHA-256 of the effective config as written below.
    pub config_hash: String,
    pub seed: u64,
    pub versions: Versions,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub gjn: String,
    pub schema: u32,
}

pub fn config_hash(cfg: &RunConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn new(command: Command, cfg: &RunConfig) -> Self {
        Self {
            manifest_version: MANIFEST_VERSION,
            command,
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            versions: Versions {
                gjn: env!("CARGO_PKG_VERSION").into(),
                schema: SCHEMA_VERSION,
            },
            config: cfg.clone(),
        }
    }
}

/// Output directory helper; every artifact goes through it.
pub(crate) struct OutDir<'a> {
    root: &'a Path,
}

impl<'a> OutDir<'a> {
    pub fn create(root: &'a Path) -> Result<Self, RunnerError> {
        fs::create_dir_all(root).map_err(|source| RunnerError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(Self { root })
    }

    fn io(&self, name: &str) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
        let path = self.root.join(name);
        move |source| RunnerError::Io { path, source }
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), RunnerError> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        fs::write(self.root.join(name), text).map_err(self.io(name))
    }

    pub fn with_file(&self, name: &str, f: impl FnOnce(fs::File) -> Result<(), String>) -> Result<(), RunnerError> {
        let file = fs::File::create(self.root.join(name)).map_err(self.io(name))?;
        f(file).map_err(|e| RunnerError::Io {
            path: self.root.join(name),
            source: std::io::Error::other(e),
        })
    }
}

/// Loads `config`, applies the seed override and runs `command` into `out`.
pub fn execute(
    command: Command,
    config: &Path,
    seed: Option<u64>,
    out: &Path,
    flags: &Flags,
) -> Result<Vec<String>, RunnerError> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    run_command(command, &cfg, out, flags)
}
