//! Benchmark configuration. Each bench has a preset; a TOML file overrides
//! any subset of its keys:
//!
//! ```toml
//! config_id = "uc1-desk"
//! num_files = 50
//! generation_time_ms = 50
//! process_time_ms = 500
//! workers = 8
//! cores = 1
//! reps = 5
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {0}: {1}")]
    Io(String, std::io::Error),
    #[error("parsing config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    PureTask,
    Hybrid,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::PureTask => "PURE_TASK",
            Mode::Hybrid => "HYBRID",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bench {
    Uc1,
    Uc2,
    Uc3,
    Uc4,
    Scale,
    Lifecycle,
}

impl FromStr for Bench {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "uc1" => Bench::Uc1,
            "uc2" => Bench::Uc2,
            "uc3" => Bench::Uc3,
            "uc4" => Bench::Uc4,
            "scale" => Bench::Scale,
            "lifecycle" => Bench::Lifecycle,
            other => return Err(ConfigError::Invalid(format!("unknown bench `{other}`"))),
        })
    }
}

impl fmt::Display for Bench {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Bench::Uc1 => "uc1",
            Bench::Uc2 => "uc2",
            Bench::Uc3 => "uc3",
            Bench::Uc4 => "uc4",
            Bench::Scale => "scale",
            Bench::Lifecycle => "lifecycle",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub config_id: String,
    /// Address of an external stream server; an in-process one otherwise.
    pub stream_server: Option<String>,
    pub monitor_tick_ms: u64,
    pub workers: usize,
    pub cores: u32,
    /// Both modes run when unset.
    pub mode: Option<Mode>,
    pub reps: usize,

    // continuous generation
    pub num_sims: usize,
    pub num_files: usize,
    pub generation_time_ms: f64,
    pub process_time_ms: f64,
    pub merge_time_ms: f64,
    pub sim_cores: u32,
    /// Extra generation-time sweep as (num_files, slots, process_ms, [gen_ms]).
    pub generation_sweep_ms: Vec<f64>,
    pub generation_sweep_files: usize,
    pub generation_sweep_slots: usize,
    pub generation_sweep_process_ms: f64,
    pub process_sweep_ms: Vec<f64>,
    pub process_sweep_files: usize,
    pub process_sweep_slots: usize,
    pub process_sweep_generation_ms: f64,

    // iterative exchange
    pub computations: usize,
    pub iterations: Vec<usize>,
    pub init_time_ms: f64,
    pub iteration_time_ms: f64,
    pub exchange_time_ms: f64,

    // external stream and nesting
    pub filters: usize,
    pub payloads: usize,
    pub sensor_gap_ms: f64,
    pub batch_size: usize,
    /// Crash one filter mid-stream under at-least-once delivery.
    pub inject_crash: bool,

    // readers and writers
    pub writers: Vec<usize>,
    pub readers: Vec<usize>,
    pub elements: usize,
    pub payload_bytes: usize,
    /// Elements per poll; unlimited when unset.
    pub poll_cap: Option<usize>,

    // task lifecycle
    pub tasks: usize,
    pub object_counts: Vec<usize>,
    pub object_bytes: usize,
    pub object_sizes: Vec<usize>,
    pub link_latency_ms: f64,
    pub link_bandwidth_mb_s: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            config_id: "default".into(),
            stream_server: None,
            monitor_tick_ms: 5,
            workers: 1,
            cores: 4,
            mode: None,
            reps: 5,
            num_sims: 1,
            num_files: 50,
            generation_time_ms: 50.0,
            process_time_ms: 500.0,
            merge_time_ms: 0.0,
            sim_cores: 1,
            generation_sweep_ms: Vec::new(),
            generation_sweep_files: 5,
            generation_sweep_slots: 2,
            generation_sweep_process_ms: 750.0,
            process_sweep_ms: Vec::new(),
            process_sweep_files: 7,
            process_sweep_slots: 6,
            process_sweep_generation_ms: 50.0,
            computations: 2,
            iterations: vec![1, 4, 16, 64],
            init_time_ms: 20.0,
            iteration_time_ms: 20.0,
            exchange_time_ms: 10.0,
            filters: 4,
            payloads: 100,
            sensor_gap_ms: 1.0,
            batch_size: 10,
            inject_crash: false,
            writers: vec![1],
            readers: vec![1, 2, 4, 8],
            elements: 100,
            payload_bytes: 24,
            poll_cap: None,
            tasks: 100,
            object_counts: vec![1, 2, 4, 8, 16],
            object_bytes: 64 * 1024,
            object_sizes: vec![64 * 1024, 256 * 1024, 1024 * 1024, 4 * 1024 * 1024],
            link_latency_ms: 2.0,
            link_bandwidth_mb_s: 100.0,
        }
    }
}

impl BenchConfig {
    /// The desk-scale shape of each bench.
    pub fn preset(bench: Bench) -> Self {
        let base = BenchConfig {
            config_id: bench.to_string(),
            ..Default::default()
        };
        match bench {
            Bench::Uc1 => BenchConfig {
                workers: 8,
                cores: 1,
                generation_sweep_ms: vec![50.0, 100.0, 250.0, 500.0],
                process_sweep_ms: vec![250.0, 500.0, 1000.0, 2000.0],
                ..base
            },
            Bench::Uc2 => BenchConfig {
                workers: 1,
                cores: 2,
                ..base
            },
            Bench::Uc3 | Bench::Uc4 => BenchConfig {
                workers: 1,
                cores: 8,
                reps: 1,
                ..base
            },
            Bench::Scale => BenchConfig {
                workers: 1,
                cores: 16,
                process_time_ms: 20.0,
                generation_time_ms: 2.0,
                reps: 3,
                ..base
            },
            Bench::Lifecycle => BenchConfig {
                workers: 1,
                cores: 1,
                reps: 1,
                ..base
            },
        }
    }

    /// Applies the keys of a TOML document on top of `self`.
    pub fn overlay_toml(self, text: &str) -> Result<Self, ConfigError> {
        let overrides: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut table = toml::Table::try_from(&self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        table.extend(overrides);
        let cfg: BenchConfig = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(bench: Bench, path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.display().to_string(), e))?;
        Self::preset(bench).overlay_toml(&text)
    }

    pub fn modes(&self) -> Vec<Mode> {
        match self.mode {
            Some(m) => vec![m],
            None => vec![Mode::PureTask, Mode::Hybrid],
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let counts = [
            ("workers", self.workers),
            ("cores", self.cores as usize),
            ("reps", self.reps),
            ("num_sims", self.num_sims),
            ("num_files", self.num_files),
            ("computations", self.computations),
            ("filters", self.filters),
            ("payloads", self.payloads),
            ("batch_size", self.batch_size),
            ("elements", self.elements),
            ("payload_bytes", self.payload_bytes),
            ("tasks", self.tasks),
            ("object_bytes", self.object_bytes),
            ("sim_cores", self.sim_cores as usize),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(ConfigError::Invalid(format!("{name} must be positive")));
        }
        let lists = [
            ("iterations", &self.iterations),
            ("writers", &self.writers),
            ("readers", &self.readers),
            ("object_counts", &self.object_counts),
            ("object_sizes", &self.object_sizes),
        ];
        if let Some((name, _)) = lists.iter().find(|(_, v)| v.contains(&0)) {
            return Err(ConfigError::Invalid(format!("{name} entries must be positive")));
        }
        let times = [
            ("generation_time_ms", self.generation_time_ms),
            ("process_time_ms", self.process_time_ms),
            ("merge_time_ms", self.merge_time_ms),
            ("init_time_ms", self.init_time_ms),
            ("iteration_time_ms", self.iteration_time_ms),
            ("exchange_time_ms", self.exchange_time_ms),
            ("sensor_gap_ms", self.sensor_gap_ms),
            ("link_latency_ms", self.link_latency_ms),
            ("link_bandwidth_mb_s", self.link_bandwidth_mb_s),
        ];
        let sweeps = self.generation_sweep_ms.iter().chain(&self.process_sweep_ms);
        let bad = |t: f64| t.is_nan() || t < 0.0;
        if times.iter().any(|(_, t)| bad(*t)) || sweeps.clone().any(|t| bad(*t)) {
            return Err(ConfigError::Invalid("times must be non-negative".into()));
        }
        if self.poll_cap == Some(0) {
            return Err(ConfigError::Invalid("poll_cap must be positive".into()));
        }
        if self.cores < self.sim_cores {
            return Err(ConfigError::Invalid("sim_cores exceeds cores per worker".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_keeps_unspecified_preset_keys() {
        let cfg = BenchConfig::preset(Bench::Uc1)
            .overlay_toml("num_files = 10\nmode = \"HYBRID\"")
            .unwrap();
        assert_eq!(cfg.num_files, 10);
        assert_eq!(cfg.workers, 8);
        assert_eq!(cfg.modes(), vec![Mode::Hybrid]);
    }

    #[test]
    fn rejects_bad_values() {
        let p = || BenchConfig::preset(Bench::Uc1);
        assert!(p().overlay_toml("num_files = 0").is_err());
        assert!(p().overlay_toml("process_time_ms = -1.0").is_err());
        assert!(p().overlay_toml("readers = [1, 0]").is_err());
        assert!(p().overlay_toml("no_such_key = 1").is_err());
        assert!(p().overlay_toml("mode = \"SOMETIMES\"").is_err());
    }

    #[test]
    fn presets_are_valid() {
        for b in [Bench::Uc1, Bench::Uc2, Bench::Uc3, Bench::Uc4, Bench::Scale, Bench::Lifecycle] {
            BenchConfig::preset(b).validate().unwrap();
            assert_eq!(b.to_string().parse::<Bench>().unwrap(), b);
        }
    }
}
