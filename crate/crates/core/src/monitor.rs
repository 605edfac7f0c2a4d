//! Directory monitor backing file streams.
//!
//! Each registered directory is rescanned every tick; files not seen before
//! are appended (as absolute path text) to the broker topic named after the
//! stream id. Names starting with `.` are in-progress writes and are skipped;
//! producers write to a dot-prefixed temporary name and rename when done.
//! Subdirectories are not descended into.

use std::collections::{HashMap, HashSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Weak};
use std::thread::JoinHandle;
use std::time::{Duration, SystemTime};

use parking_lot::Mutex;
use thiserror::Error;

use crate::broker::Broker;

pub const DEFAULT_TICK: Duration = Duration::from_millis(200);

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("invalid monitored path `{}`: {reason}", path.display())]
    InvalidPath { path: PathBuf, reason: String },
    #[error("stream `{0}` has no monitored directory")]
    NotRegistered(String),
}

#[derive(Debug)]
pub struct MonitorState {
    pub base_dir: PathBuf,
    pub seen: HashSet<OsString>,
    pub tick: Duration,
}

impl MonitorState {
    /// Lists files not yet seen, ordered by (mtime, name), and marks them
    /// seen. I/O errors yield an empty scan; the next tick retries.
    fn scan(&mut self) -> Vec<PathBuf> {
        let Ok(entries) = std::fs::read_dir(&self.base_dir) else {
            return Vec::new();
        };
        let mut fresh: Vec<(SystemTime, OsString)> = Vec::new();
        for entry in entries.flatten() {
            let name = entry.file_name();
            if name.to_string_lossy().starts_with('.') || self.seen.contains(&name) {
                continue;
            }
            // follows symlinks; vanished files are skipped
            let Ok(meta) = std::fs::metadata(entry.path()) else { continue };
            if !meta.is_file() {
                continue;
            }
            let mtime = meta.modified().unwrap_or(SystemTime::UNIX_EPOCH);
            fresh.push((mtime, name));
        }
        fresh.sort();
        fresh
            .into_iter()
            .map(|(_, name)| {
                let path = self.base_dir.join(&name);
                self.seen.insert(name);
                path
            })
            .collect()
    }
}

pub fn validate_dir(base_dir: &Path) -> Result<(), MonitorError> {
    let invalid = |reason: &str| MonitorError::InvalidPath {
        path: base_dir.to_path_buf(),
        reason: reason.to_string(),
    };
    if !base_dir.is_absolute() {
        return Err(invalid("path is not absolute"));
    }
    if base_dir.to_str().is_none() {
        return Err(invalid("path is not valid UTF-8"));
    }
    match std::fs::read_dir(base_dir) {
        Ok(_) => Ok(()),
        Err(e) => Err(invalid(&e.to_string())),
    }
}

/// Registry of monitored directories plus the background ticker.
pub struct DirMonitor {
    broker: Arc<Broker>,
    dirs: Mutex<HashMap<String, Arc<Mutex<MonitorState>>>>,
    tick: Duration,
}

impl DirMonitor {
    pub fn new(broker: Arc<Broker>, tick: Duration) -> Self {
        DirMonitor {
            broker,
            dirs: Mutex::new(HashMap::new()),
            tick,
        }
    }

    pub fn tick(&self) -> Duration {
        self.tick
    }

    /// Starts watching `base_dir` for `stream_id`. The stream's topic must
    /// already exist in the broker. Files already present are picked up by
    /// the first scan.
    pub fn register_dir(&self, stream_id: &str, base_dir: &Path) -> Result<(), MonitorError> {
        validate_dir(base_dir)?;
        let state = MonitorState {
            base_dir: base_dir.to_path_buf(),
            seen: HashSet::new(),
            tick: self.tick,
        };
        self.dirs
            .lock()
            .entry(stream_id.to_string())
            .or_insert_with(|| Arc::new(Mutex::new(state)));
        Ok(())
    }

    pub fn unregister(&self, stream_id: &str) {
        self.dirs.lock().remove(stream_id);
    }

    pub fn base_dir(&self, stream_id: &str) -> Option<PathBuf> {
        self.dirs
            .lock()
            .get(stream_id)
            .map(|s| s.lock().base_dir.clone())
    }

    /// Scans once and appends new paths to the stream's topic. The scan and
    /// the append happen under the directory's lock, so concurrent scans
    /// cannot reorder or duplicate emissions.
    pub fn scan_once(&self, stream_id: &str) -> Result<Vec<PathBuf>, MonitorError> {
        let state = self
            .dirs
            .lock()
            .get(stream_id)
            .cloned()
            .ok_or_else(|| MonitorError::NotRegistered(stream_id.to_string()))?;
        let mut st = state.lock();
        let fresh = st.scan();
        if !fresh.is_empty() {
            let records = fresh
                .iter()
                .map(|p| (None, p.to_string_lossy().into_owned().into_bytes()))
                .collect();
            if let Err(e) = self.broker.append_batch(stream_id, records) {
                tracing::warn!("monitor append for {stream_id} failed: {e}");
            }
        }
        Ok(fresh)
    }

    pub fn scan_all(&self) {
        let ids: Vec<String> = self.dirs.lock().keys().cloned().collect();
        for id in ids {
            let _ = self.scan_once(&id);
        }
    }

    /// Spawns the ticker thread. It stops when the returned guard is dropped
    /// or the monitor itself is gone.
    pub fn spawn_ticker(self: &Arc<Self>) -> TickerGuard {
        let stop = Arc::new(AtomicBool::new(false));
        let weak: Weak<DirMonitor> = Arc::downgrade(self);
        let tick = self.tick;
        let flag = stop.clone();
        let handle = std::thread::Builder::new()
            .name("dir-monitor".into())
            .spawn(move || {
                while !flag.load(Ordering::Relaxed) {
                    std::thread::sleep(tick);
                    match weak.upgrade() {
                        Some(m) => m.scan_all(),
                        None => break,
                    }
                }
            })
            .expect("spawn monitor thread");
        TickerGuard {
            stop,
            handle: Some(handle),
        }
    }
}

pub struct TickerGuard {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl Drop for TickerGuard {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
