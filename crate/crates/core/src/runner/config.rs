use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::RunnerError;
use crate::chain::{ChainDocument, VerdictOptions};
use crate::des::SimOptions;
use crate::network::NetworkSpec;
use crate::nlmp::{InitialState, NlmpOptions};
use crate::ph::PhOptions;
use crate::service::{RegularityOptions, ServiceDistribution, Tabulated};
use crate::traffic::DEFAULT_MAX_TERMS;

pub const SCHEMA_VERSION: u32 = 1;

/// One JSON document drives every subcommand. Sections a command does not
/// use are ignored by it; unknown keys are rejected everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainConfig>,
    #[serde(default)]
    pub traffic: TrafficConfig,
    /// Laws for `validate-dist`; the network's service laws when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distributions: Option<Vec<ServiceDistribution>>,
    #[serde(default)]
    pub regularity: RegularityOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nlmp: Option<NlmpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub chain: ChainDocument,
    #[serde(default)]
    pub options: VerdictOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    pub tol: f64,
    pub max_terms: usize,
    /// Required slack below 1 for every `ρ_i`.
    pub margin: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_terms: DEFAULT_MAX_TERMS,
            margin: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub replications: usize,
    /// Monitor the first servers of every type when no probes are listed.
    pub probes_per_type: usize,
    pub options: SimOptions,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            replications: 1,
            probes_per_type: 4,
            options: SimOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NlmpConfig {
    pub horizon: f64,
    /// Per-type starting states; all empty when absent.
    pub initial: Option<Vec<InitialState>>,
    pub options: NlmpOptions,
    /// Trailing window (time units) for flattening detection.
    pub flatten_window: f64,
    pub flatten_tol: f64,
    /// A second start to compare against for initial-state independence.
    pub compare_initial: Option<Vec<InitialState>>,
    pub independence_warmup: f64,
    pub independence_tol: f64,
    /// Compute single-node stationary profiles at the flattened rates.
    pub stationary: bool,
}

impl Default for NlmpConfig {
    fn default() -> Self {
        Self {
            horizon: 300.0,
            initial: None,
            options: NlmpOptions::default(),
            flatten_window: 50.0,
            flatten_tol: 1e-3,
            compare_initial: None,
            independence_warmup: 200.0,
            independence_tol: 0.02,
            stationary: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub experiment: String,
    pub options: PhOptions,
    /// Compare queue marginals with single-node stationary profiles.
    pub reference: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            experiment: "run".into(),
            options: PhOptions::default(),
            reference: true,
        }
    }
}

fn syntax(path: &Path, e: serde_json::Error) -> RunnerError {
    RunnerError::Config(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
}

/// Replaces `{"tabulated_csv": "file"}` entries by the inline table,
/// resolving paths against `base`.
fn inline_tables(list: Option<&mut Value>, base: &Path) -> Result<(), RunnerError> {
    let Some(Value::Array(items)) = list else {
        return Ok(());
    };
    for item in items {
        let Some(file) = item.get("tabulated_csv") else {
            continue;
        };
        if item.as_object().is_some_and(|o| o.len() != 1) {
            return Err(RunnerError::Config("a tabulated_csv entry takes no other keys".into()));
        }
        let file = file
            .as_str()
            .ok_or_else(|| RunnerError::Config("tabulated_csv must be a path".into()))?;
        let path = base.join(file);
        let f = fs::File::open(&path).map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))?;
        let table = Tabulated::from_csv(f).map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))?;
        *item = serde_json::to_value(ServiceDistribution::Tabulated(table)).expect("serializable");
    }
    Ok(())
}

/// Reads a config or a previous run's manifest (whose embedded config is
/// used as is).
pub fn load_config(path: &Path) -> Result<RunConfig, RunnerError> {
    let text = fs::read_to_string(path).map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_str(&text).map_err(|e| syntax(path, e))?;
    if value.get("manifest_version").is_some() {
        value = value
            .get_mut("config")
            .map(Value::take)
            .ok_or_else(|| RunnerError::Config("manifest has no config".into()))?;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    inline_tables(value.pointer_mut("/network/services"), base)?;
    inline_tables(value.pointer_mut("/distributions"), base)?;
    parse_config(value)
}

pub fn parse_config(value: Value) -> Result<RunConfig, RunnerError> {
    let version = value.get("schema_version").and_then(Value::as_u64);
    if version != Some(SCHEMA_VERSION as u64) {
        return Err(RunnerError::Config(format!(
            "schema_version must be {SCHEMA_VERSION}, found {}",
            version.map_or("none".into(), |v| v.to_string())
        )));
    }
    serde_json::from_value(value).map_err(|e| RunnerError::Config(e.to_string()))
}
