//! Master configuration, read from a small TOML file:
//!
//! ```toml
//! stream_server = "127.0.0.1:49049"
//! worker_listen = "0.0.0.0:49050"   # accept remote workers
//! max_retries = 1
//!
//! [[workers]]                       # in-process workers
//! name = "node1"
//! cores = 4
//!
//! [link]
//! latency_ms = 0.5
//! bandwidth_mb_s = 1000
//!
//! [policy]
//! data_weight = 1.0
//! stream_weight = 1.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::executor::LinkModel;
use super::scheduler::SchedulerPolicy;
use super::RuntimeError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSpec {
    pub name: String,
    pub cores: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuntimeConfig {
    pub workers: Vec<WorkerSpec>,
    pub stream_server: Option<String>,
    pub worker_listen: Option<String>,
    pub max_retries: u32,
    pub link: LinkModel,
    pub policy: SchedulerPolicy,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            workers: Vec::new(),
            stream_server: None,
            worker_listen: None,
            max_retries: 1,
            link: LinkModel::default(),
            policy: SchedulerPolicy::default(),
        }
    }
}

impl RuntimeConfig {
    /// `n` in-process workers with `cores` each.
    pub fn local(n: usize, cores: u32) -> Self {
        RuntimeConfig {
            workers: (0..n)
                .map(|i| WorkerSpec {
                    name: format!("local{i}"),
                    cores,
                })
                .collect(),
            ..Default::default()
        }
    }

    pub fn with_stream_server(mut self, addr: impl ToString) -> Self {
        self.stream_server = Some(addr.to_string());
        self
    }

    pub fn from_toml_str(s: &str) -> Result<Self, RuntimeError> {
        let cfg: RuntimeConfig = toml::from_str(s).map_err(|e| RuntimeError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RuntimeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RuntimeError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        if self.workers.is_empty() && self.worker_listen.is_none() {
            return Err(RuntimeError::Config(
                "no workers: configure [[workers]] or worker_listen".into(),
            ));
        }
        if let Some(w) = self.workers.iter().find(|w| w.cores == 0) {
            return Err(RuntimeError::Config(format!("worker {} has zero cores", w.name)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_example() {
        let cfg = RuntimeConfig::from_toml_str(
            r#"
            stream_server = "127.0.0.1:49049"
            [[workers]]
            name = "node1"
            cores = 4
            [link]
            latency_ms = 0.5
            "#,
        )
        .unwrap();
        assert_eq!(cfg.workers[0].cores, 4);
        assert_eq!(cfg.max_retries, 1);
        assert_eq!(cfg.link.latency_ms, 0.5);
        assert_eq!(cfg.link.bandwidth_mb_s, 0.0);
        assert_eq!(cfg.policy, SchedulerPolicy::default());
    }

    #[test]
    fn rejects_empty_deployments() {
        assert!(RuntimeConfig::from_toml_str("").is_err());
        assert!(RuntimeConfig::from_toml_str("[[workers]]\nname='a'\ncores=0").is_err());
        assert!(RuntimeConfig::from_toml_str("workers = 3").is_err());
    }
}
