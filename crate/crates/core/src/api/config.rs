use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_CONFIG: &str = "RISKDAG_CONFIG";
pub const ENV_BIND: &str = "RISKDAG_BIND";
pub const ENV_DATA_DIR: &str = "RISKDAG_DATA_DIR";
pub const ENV_TOKEN_TTL: &str = "RISKDAG_TOKEN_TTL_SECS";
pub const ENV_NOTIFY_THRESHOLD: &str = "RISKDAG_NOTIFY_THRESHOLD";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config `{path}`: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("environment variable {var}: {message}")]
    Env { var: &'static str, message: String },
    #[error("notify threshold must be in (0, 1], got {0}")]
    Threshold(f64),
}

/// Service settings. File keys match the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    /// Models are kept in memory only when unset.
    pub data_dir: Option<PathBuf>,
    pub token_ttl_secs: u64,
    /// Default posterior-change threshold for notify targets without one.
    pub notify_threshold: f64,
    pub notify_attempts: u32,
    pub notify_backoff_ms: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: None,
            token_ttl_secs: 7 * 24 * 3600,
            notify_threshold: 0.1,
            notify_attempts: 3,
            notify_backoff_ms: 200,
        }
    }
}

impl ServerConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    /// Reads the file (if any), then applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_owned(),
                    source,
                })?;
                Self::from_toml(&text, p)?
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(var: &'static str, v: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e: T::Err| ConfigError::Env {
                var,
                message: e.to_string(),
            })
        }
        if let Some(v) = lookup(ENV_BIND) {
            self.bind = parse(ENV_BIND, &v)?;
        }
        if let Some(v) = lookup(ENV_DATA_DIR) {
            self.data_dir = Some(PathBuf::from(v));
        }
        if let Some(v) = lookup(ENV_TOKEN_TTL) {
            self.token_ttl_secs = parse(ENV_TOKEN_TTL, &v)?;
        }
        if let Some(v) = lookup(ENV_NOTIFY_THRESHOLD) {
            self.notify_threshold = parse(ENV_NOTIFY_THRESHOLD, &v)?;
        }
        Ok(())
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let t = self.notify_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(ConfigError::Threshold(t));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_env() {
        let mut cfg = ServerConfig::from_toml(
            "bind = \"0.0.0.0:9000\"\ntoken_ttl_secs = 60\n",
            Path::new("x.toml"),
        )
        .unwrap();
        assert_eq!(cfg.token_ttl_secs, 60);
        assert_eq!(cfg.notify_threshold, 0.1);
        cfg.apply_env(|k| (k == ENV_TOKEN_TTL).then(|| "5".to_owned())).unwrap();
        assert_eq!(cfg.token_ttl_secs, 5);
        assert_eq!(cfg.bind.port(), 9000);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ServerConfig::from_toml("colour = 1", Path::new("x")).is_err());
        let mut cfg = ServerConfig::default();
        assert!(cfg.apply_env(|_| Some("nope".into())).is_err());
        cfg.notify_threshold = 0.0;
        assert!(cfg.check().is_err());
    }
}
