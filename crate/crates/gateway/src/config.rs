use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use reconlab_core::transfer::DEFAULT_CHUNK_SIZE;
use thiserror::Error;

pub const ENV_BIND: &str = "RECONLAB_BIND";
pub const ENV_DATA_DIR: &str = "RECONLAB_DATA_DIR";
pub const ENV_TOKEN_SECRET: &str = "RECONLAB_TOKEN_SECRET";
pub const ENV_BLOB_TTL: &str = "RECONLAB_BLOB_TTL";
pub const ENV_CHUNK_SIZE: &str = "RECONLAB_CHUNK_SIZE";
pub const ENV_TOKEN_TTL: &str = "RECONLAB_TOKEN_TTL";
pub const ENV_DEV_FIXTURES: &str = "RECONLAB_DEV_FIXTURES";
pub const ENV_SLAVES: &str = "RECONLAB_SLAVES";

/// Password given to the development fixture accounts.
pub const DEV_PASSWORD: &str = "reconlab-dev";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{var}: {reason}")]
    Invalid { var: &'static str, reason: String },
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub bind: SocketAddr,
    /// Blob and key storage; `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub token_secret: Vec<u8>,
    pub token_ttl: Duration,
    pub blob_ttl: Duration,
    /// Chunk size used when a manifest does not specify one.
    pub chunk_size: u64,
    /// Largest chunk a manifest may declare; also bounds request bodies.
    pub max_chunk_size: u64,
    pub dev_fixtures: bool,
    pub slaves: usize,
    pub purge_interval: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: None,
            token_secret: random_secret(),
            token_ttl: Duration::from_secs(24 * 3600),
            blob_ttl: Duration::from_secs(72 * 3600),
            chunk_size: DEFAULT_CHUNK_SIZE,
            max_chunk_size: 64 * 1024 * 1024,
            dev_fixtures: false,
            slaves: 2,
            purge_interval: Duration::from_secs(60),
        }
    }
}

fn random_secret() -> Vec<u8> {
    rand::random::<[u8; 32]>().to_vec()
}

fn invalid(var: &'static str, reason: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        var,
        reason: reason.to_string(),
    }
}

impl GatewayConfig {
    /// Defaults overridden by any `RECONLAB_*` variables that are set.
    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        if let Some(v) = get(ENV_BIND) {
            c.bind = v.parse().map_err(|e| invalid(ENV_BIND, e))?;
        }
        if let Some(v) = get(ENV_DATA_DIR) {
            c.data_dir = Some(PathBuf::from(v));
        }
        if let Some(v) = get(ENV_TOKEN_SECRET) {
            if v.len() < 16 {
                return Err(invalid(ENV_TOKEN_SECRET, "must be at least 16 bytes"));
            }
            c.token_secret = v.into_bytes();
        }
        if let Some(v) = get(ENV_BLOB_TTL) {
            c.blob_ttl = humantime::parse_duration(&v).map_err(|e| invalid(ENV_BLOB_TTL, e))?;
        }
        if let Some(v) = get(ENV_TOKEN_TTL) {
            c.token_ttl = humantime::parse_duration(&v).map_err(|e| invalid(ENV_TOKEN_TTL, e))?;
        }
        if let Some(v) = get(ENV_CHUNK_SIZE) {
            let n: u64 = v.parse().map_err(|e| invalid(ENV_CHUNK_SIZE, e))?;
            if n == 0 || n > c.max_chunk_size {
                return Err(invalid(
                    ENV_CHUNK_SIZE,
                    format!("must be in 1..={}", c.max_chunk_size),
                ));
            }
            c.chunk_size = n;
        }
        if let Some(v) = get(ENV_DEV_FIXTURES) {
            c.dev_fixtures = matches!(v.as_str(), "1" | "true" | "yes" | "on");
        }
        if let Some(v) = get(ENV_SLAVES) {
            c.slaves = v.parse().map_err(|e| invalid(ENV_SLAVES, e))?;
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn env_overrides() {
        let vars: HashMap<&str, &str> = [
            (ENV_BIND, "0.0.0.0:9000"),
            (ENV_BLOB_TTL, "1h 30m"),
            (ENV_CHUNK_SIZE, "1048576"),
            (ENV_DEV_FIXTURES, "true"),
        ]
        .into();
        let c = GatewayConfig::from_lookup(|k| vars.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(c.bind.port(), 9000);
        assert_eq!(c.blob_ttl, Duration::from_secs(5400));
        assert_eq!(c.chunk_size, 1 << 20);
        assert!(c.dev_fixtures);
        assert_eq!(c.token_ttl, Duration::from_secs(86400));
    }

    #[test]
    fn defaults_and_rejections() {
        let c = GatewayConfig::from_lookup(|_| None).unwrap();
        assert_eq!(c.blob_ttl, Duration::from_secs(72 * 3600));
        assert_eq!(c.chunk_size, 4 * 1024 * 1024);
        assert!(GatewayConfig::from_lookup(|k| (k == ENV_CHUNK_SIZE).then(|| "0".into())).is_err());
        assert!(GatewayConfig::from_lookup(|k| (k == ENV_TOKEN_SECRET).then(|| "short".into())).is_err());
        assert!(GatewayConfig::from_lookup(|k| (k == ENV_BLOB_TTL).then(|| "soon".into())).is_err());
    }
}
