//! Run configuration: a JSON file overlaid by environment and flags.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use vidqg_core::corpus::FilterPolicy;
use vidqg_core::harness::{BackendProfile, PromptMode};
use vidqg_core::http::RetryPolicy;
use vidqg_core::metrics::DEFAULT_ICD_DOMAINS;

use crate::CliError;

pub const PROVIDER_ENV: &str = "VIDQG_PROVIDER_URL";
pub const DEFAULT_SEED: u64 = 1234;

/// Name of the built-in deterministic backend.
pub const MOCK_BACKEND: &str = "mock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    #[serde(flatten)]
    pub profile: BackendProfile,
    /// Base URL of the generation service; absent for the mock backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub filter: FilterPolicy,
    pub seed: u64,
    pub ratios: [f64; 3],
    pub backends: Vec<BackendConfig>,
    /// Backends to run, by name; empty runs every configured backend.
    pub selected_backends: Vec<String>,
    /// Embedding service URL or `"local"`.
    pub provider: String,
    pub modes: Vec<PromptMode>,
    pub icd_domains: BTreeSet<String>,
    pub pool_cap: Option<usize>,
    pub semantic_baseline: f64,
    pub out: PathBuf,
    pub params: Map<String, Value>,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    pub timeout_seconds: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            filter: FilterPolicy::default(),
            seed: DEFAULT_SEED,
            ratios: [0.8, 0.1, 0.1],
            backends: Vec::new(),
            selected_backends: Vec::new(),
            provider: "local".into(),
            modes: PromptMode::ALL.to_vec(),
            icd_domains: DEFAULT_ICD_DOMAINS.iter().map(|d| d.to_string()).collect(),
            pool_cap: None,
            semantic_baseline: 0.0,
            out: PathBuf::from("run"),
            params: Map::new(),
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            timeout_seconds: 120,
        }
    }
}

impl RunConfig {
    /// Reads a config file. A run manifest is accepted too, in which case
    /// the configuration recorded in it is replayed.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let mut value: Value =
            serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        if value.get("config_hash").is_some() {
            value = value.get("config").cloned().unwrap_or(Value::Null);
        }
        serde_json::from_value(value).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    /// Environment overrides: the provider URL and per-backend URLs.
    pub fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) {
        if let Some(url) = env(PROVIDER_ENV) {
            self.provider = url;
        }
        for b in &mut self.backends {
            if let Some(url) = env(&backend_env_var(&b.profile.name)) {
                b.url = Some(url);
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.modes.is_empty() {
            return Err(CliError::usage("at least one prompt mode is required"));
        }
        vidqg_core::corpus::check_ratios(self.ratios).map_err(|e| CliError::usage(e.to_string()))?;
        self.filter.validate().map_err(|e| CliError::usage(e.to_string()))?;
        for b in &self.backends {
            b.profile.validate().map_err(|e| CliError::usage(e.to_string()))?;
        }
        Ok(())
    }

    /// Backends to run. Names without a config entry resolve to the mock
    /// backend (`mock`) or to a stateless profile whose URL comes from the
    /// environment.
    pub fn resolve_backends(&self, env: impl Fn(&str) -> Option<String>) -> Result<Vec<BackendConfig>, CliError> {
        if self.selected_backends.is_empty() {
            if self.backends.is_empty() {
                return Err(CliError::usage("no backends configured; pass --backends"));
            }
            return Ok(self.backends.clone());
        }
        self.selected_backends
            .iter()
            .map(|name| {
                if let Some(b) = self.backends.iter().find(|b| &b.profile.name == name) {
                    return Ok(b.clone());
                }
                let url = env(&backend_env_var(name));
                if url.is_none() && name != MOCK_BACKEND {
                    return Err(CliError::usage(format!(
                        "backend {name:?} is not configured and {} is unset",
                        backend_env_var(name)
                    )));
                }
                Ok(BackendConfig { profile: BackendProfile::stateless(name.clone()), url })
            })
            .collect()
    }

    pub fn corpus_path(&self) -> Result<&Path, CliError> {
        self.corpus.as_deref().ok_or_else(|| CliError::usage("no corpus given (positional argument or config)"))
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_value().to_string().as_bytes()))
    }
}

pub fn backend_env_var(name: &str) -> String {
    let upper: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect();
    format!("VIDQG_BACKEND_{upper}_URL")
}

pub fn parse_ratios(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let ratios: [f64; 3] = parts.try_into().map_err(|_| "expected three comma-separated ratios".to_string())?;
    vidqg_core::corpus::check_ratios(ratios).map_err(|e| e.to_string())?;
    Ok(ratios)
}

pub fn parse_modes(s: &str) -> Result<Vec<PromptMode>, String> {
    PromptMode::parse_list(s).map_err(|e| e.to_string())
}
