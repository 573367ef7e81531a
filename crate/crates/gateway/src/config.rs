//! `key=value` configuration, located via `--config` or `VAXCARD_CONFIG`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const CONFIG_ENV: &str = "VAXCARD_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatewayConfig {
    pub listen_address: String,
    pub keystore_path: PathBuf,
    pub ledger_path: PathBuf,
    pub registry_path: PathBuf,
    pub truststore_path: PathBuf,
    pub active_phases: BTreeSet<String>,
}

impl GatewayConfig {
    /// All state files under `dir`, no active phases.
    pub fn in_dir(dir: &Path) -> Self {
        GatewayConfig {
            listen_address: "127.0.0.1:8080".into(),
            keystore_path: dir.join("keystore.txt"),
            ledger_path: dir.join("ledger.log"),
            registry_path: dir.join("registry.jsonl"),
            truststore_path: dir.join("truststore.txt"),
            active_phases: BTreeSet::new(),
        }
    }

    /// Relative paths resolve against `base` (the config file's directory).
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg = GatewayConfig::in_dir(base);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: &str| ConfigError::Parse {
                line: i + 1,
                reason: reason.to_owned(),
            };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key=value"))?;
            let value = value.trim();
            let path = || base.join(value);
            match key.trim() {
                "listen_address" => cfg.listen_address = value.to_owned(),
                "keystore_path" => cfg.keystore_path = path(),
                "ledger_path" => cfg.ledger_path = path(),
                "registry_path" => cfg.registry_path = path(),
                "truststore_path" => cfg.truststore_path = path(),
                "active_phases" => {
                    cfg.active_phases = value
                        .split(',')
                        .map(str::trim)
                        .filter(|p| !p.is_empty())
                        .map(str::to_owned)
                        .collect()
                }
                other => return Err(err(&format!("unknown key {other:?}"))),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Explicit path, then `VAXCARD_CONFIG`, then defaults in the working directory.
    pub fn discover(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        if let Some(path) = explicit {
            return Self::load(path);
        }
        match std::env::var_os(CONFIG_ENV) {
            Some(path) => Self::load(Path::new(&path)),
            None => Ok(Self::in_dir(Path::new("."))),
        }
    }

    pub fn to_file_string(&self) -> String {
        let phases: Vec<_> = self.active_phases.iter().map(String::as_str).collect();
        format!(
            "listen_address={}\nkeystore_path={}\nledger_path={}\nregistry_path={}\ntruststore_path={}\nactive_phases={}\n",
            self.listen_address,
            self.keystore_path.display(),
            self.ledger_path.display(),
            self.registry_path.display(),
            self.truststore_path.display(),
            phases.join(",")
        )
    }
}
