//! Stream server and runtime setup shared by the benches.

use std::time::Duration;

use hybridflow_core::runtime::{LinkModel, Runtime, RuntimeConfig, RuntimeError};
use hybridflow_core::server::{ServerConfig, ServerError, StreamServer};

use crate::config::BenchConfig;
use crate::methods;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error(transparent)]
    Stream(#[from] hybridflow_core::stream::StreamError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Failed(String),
}

pub type BenchResult<T> = Result<T, BenchError>;

/// A stream server, in-process unless the config names an external one.
pub struct Harness {
    server: Option<StreamServer>,
    addr: String,
}

impl Harness {
    pub fn start(cfg: &BenchConfig) -> BenchResult<Harness> {
        if let Some(addr) = &cfg.stream_server {
            return Ok(Harness {
                server: None,
                addr: addr.clone(),
            });
        }
        let server = StreamServer::start(
            "127.0.0.1:0",
            ServerConfig {
                monitor_tick: Duration::from_millis(cfg.monitor_tick_ms.max(1)),
                ..Default::default()
            },
        )?;
        let addr = server.local_addr().to_string();
        Ok(Harness {
            server: Some(server),
            addr,
        })
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    /// A fresh runtime with every bench method registered.
    pub fn runtime(&self, workers: usize, cores: u32) -> BenchResult<Runtime> {
        self.runtime_with_link(workers, cores, LinkModel::default())
    }

    pub fn runtime_with_link(&self, workers: usize, cores: u32, link: LinkModel) -> BenchResult<Runtime> {
        let mut config = RuntimeConfig::local(workers, cores).with_stream_server(&self.addr);
        config.link = link;
        Ok(Runtime::start(config, methods::registry())?)
    }
}

impl Drop for Harness {
    fn drop(&mut self) {
        if let Some(s) = self.server.as_mut() {
            s.shutdown();
        }
    }
}
