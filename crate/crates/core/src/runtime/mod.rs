//! Task runtime: annotated task submission, dependency analysis, stream-aware
//! scheduling over local slots and remote workers, and synchronization.
//!
//! All graph and resource state sits behind one lock. Submissions and
//! completions both re-run the scheduler while holding it; the resulting
//! dispatches (thread spawns, socket writes) and stream-server calls happen
//! after the lock is released.

pub mod config;
pub mod executor;
pub mod graph;
pub mod lifecycle;
pub mod scheduler;
pub mod task;
pub mod worker;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Weak};

use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::client::{Client, ClientError};
use crate::stream::{DistroStream, StreamError, StreamOptions};
use crate::types::StreamKind;

pub use config::{RuntimeConfig, WorkerSpec};
pub use executor::{ExecEnv, JobParam, JobSpec, LinkModel, MethodRegistry, TaskContext, TaskError, TaskStream};
pub use graph::{AnnotationError, DependencyGraph, Edge};
pub use lifecycle::{LifecycleReport, LifecycleRow, MethodStats};
pub use scheduler::{pick_next, Candidate, ResourceState, SchedulerPolicy};
pub use task::{DataId, Direction, ParamRef, ParamSpec, ParamType, TaskDescriptor, TaskId, TaskState, Timings};
pub use worker::{run_worker, Worker};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(#[from] AnnotationError),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("unknown data {0}")]
    UnknownData(DataId),
    #[error("task {task} failed: {message}")]
    ExecutionFailure { task: TaskId, message: String },
    #[error("no worker has {cores} cores")]
    NoWorkerFits { cores: u32 },
    #[error("stream parameters need a stream server")]
    NoStreamServer,
    #[error("stream: {0}")]
    Stream(#[from] StreamError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ClientError> for RuntimeError {
    fn from(e: ClientError) -> Self {
        RuntimeError::Stream(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Scheduled,
    Done,
    Retry,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEvent {
    pub task_id: TaskId,
    pub worker: usize,
    pub kind: TraceKind,
    /// Milliseconds since the runtime started.
    pub at_ms: f64,
}

#[derive(Debug, Clone)]
enum Version {
    Pending,
    Ready(Option<Arc<Vec<u8>>>),
    Failed(TaskId, String),
}

#[derive(Debug)]
struct DataEntry {
    kind: ParamType,
    path: Option<PathBuf>,
    versions: BTreeMap<u32, Version>,
}

#[derive(Debug)]
struct TaskRecord {
    desc: TaskDescriptor,
    accesses: Vec<graph::Access>,
    /// (stream id, producer id) grants taken at submission.
    producers: Vec<(String, String)>,
    worker: Option<usize>,
    dispatched: Option<Instant>,
    attempts: u32,
    avoid: Option<usize>,
    error: Option<String>,
}

impl TaskRecord {
    fn set_state(&mut self, next: TaskState) {
        debug_assert!(
            self.desc.state.can_become(next),
            "task {}: {} -> {}",
            self.desc.task_id,
            self.desc.state,
            next
        );
        self.desc.state = next;
    }
}

enum Backend {
    Local,
    Remote(Arc<worker::RemoteLink>),
    Gone,
}

struct WorkerSlot {
    res: ResourceState,
    backend: Backend,
}

struct Dispatch {
    task_id: TaskId,
    worker: usize,
    attempt: u32,
    spec: JobSpec,
    inputs: executor::Values,
    remote: Option<Arc<worker::RemoteLink>>,
}

#[derive(Default)]
struct Effects {
    dispatches: Vec<Dispatch>,
    closes: Vec<(String, String)>,
}

#[derive(Default)]
struct State {
    graph: DependencyGraph,
    tasks: BTreeMap<TaskId, TaskRecord>,
    data: HashMap<DataId, DataEntry>,
    workers: Vec<WorkerSlot>,
    ready: BTreeSet<TaskId>,
    retry: BTreeSet<TaskId>,
    trace: Vec<TraceEvent>,
    next_task: TaskId,
    next_data: DataId,
    /// Producer closes decided under the lock but not yet sent.
    closing: usize,
}

pub(crate) struct Inner {
    state: Mutex<State>,
    changed: Condvar,
    registry: MethodRegistry,
    config: RuntimeConfig,
    client: Option<Arc<Client>>,
    run_id: String,
    started: Instant,
    next_producer: AtomicU64,
    listener: Mutex<Option<worker::Listener>>,
}

/// Handle to a running runtime; cheap to clone.
#[derive(Clone)]
pub struct Runtime {
    inner: Arc<Inner>,
}

impl Runtime {
    pub fn start(config: RuntimeConfig, registry: MethodRegistry) -> Result<Runtime, RuntimeError> {
        config.validate()?;
        let client = match &config.stream_server {
            Some(addr) => Some(Arc::new(Client::connect(addr.as_str())?)),
            None => None,
        };
        let run_id = format!("run-{}", uuid::Uuid::new_v4().simple());
        let workers = config
            .workers
            .iter()
            .enumerate()
            .map(|(i, w)| WorkerSlot {
                res: ResourceState::new(i, &w.name, w.cores),
                backend: Backend::Local,
            })
            .collect();
        let inner = Arc::new(Inner {
            state: Mutex::new(State {
                workers,
                next_task: 1,
                next_data: 1,
                ..Default::default()
            }),
            changed: Condvar::new(),
            registry,
            config: config.clone(),
            client,
            run_id,
            started: Instant::now(),
            next_producer: AtomicU64::new(1),
            listener: Mutex::new(None),
        });
        if let Some(addr) = &config.worker_listen {
            let l = worker::Listener::start(addr, Arc::downgrade(&inner))?;
            *inner.listener.lock() = Some(l);
        }
        Ok(Runtime { inner })
    }

    /// Identifier of this run; also the consumer group of streams created
    /// through [`Runtime::create_stream`].
    pub fn run_id(&self) -> &str {
        &self.inner.run_id
    }

    pub fn stream_client(&self) -> Option<&Arc<Client>> {
        self.inner.client.as_ref()
    }

    /// Address remote workers connect to, when listening.
    pub fn worker_address(&self) -> Option<std::net::SocketAddr> {
        self.inner.listener.lock().as_ref().map(|l| l.addr())
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.inner.config
    }

    pub fn create_stream(&self, kind: StreamKind, mut opts: StreamOptions) -> Result<DistroStream, RuntimeError> {
        let client = self.inner.client.clone().ok_or(RuntimeError::NoStreamServer)?;
        opts.group.get_or_insert_with(|| self.inner.run_id.clone());
        Ok(DistroStream::create(client, kind, opts)?)
    }

    /// Registers a value owned by the main program.
    pub fn put_object(&self, bytes: Vec<u8>) -> DataId {
        let mut st = self.inner.state.lock();
        st.new_data(ParamType::Object, None, Some(bytes))
    }

    pub fn put_json<T: Serialize>(&self, value: &T) -> DataId {
        self.put_object(serde_json::to_vec(value).expect("serializable value"))
    }

    /// Allocates an object id with no value yet, to be written by a task.
    pub fn new_object(&self) -> DataId {
        let mut st = self.inner.state.lock();
        let id = st.next_data;
        st.next_data += 1;
        st.data.insert(
            id,
            DataEntry {
                kind: ParamType::Object,
                path: None,
                versions: BTreeMap::new(),
            },
        );
        id
    }

    /// Registers a file on the shared filesystem.
    pub fn register_file(&self, path: impl Into<PathBuf>) -> DataId {
        let mut st = self.inner.state.lock();
        st.new_data(ParamType::File, Some(path.into()), None)
    }

    pub fn submit(&self, method: &str, params: Vec<ParamSpec>) -> Result<TaskId, RuntimeError> {
        self.submit_with(method, params, 1)
    }

    pub fn submit_with(&self, method: &str, params: Vec<ParamSpec>, cores: u32) -> Result<TaskId, RuntimeError> {
        let t0 = Instant::now();
        if !self.inner.registry.contains(method) {
            return Err(RuntimeError::UnknownMethod(method.to_string()));
        }
        graph::validate(&params)?;
        let cores = cores.max(1);
        let has_streams = params.iter().any(|p| p.ptype == ParamType::Stream);
        if has_streams && self.inner.client.is_none() {
            return Err(RuntimeError::NoStreamServer);
        }
        // producers are registered before the task can run, so a stream
        // cannot close while one of its writers is still queued
        let mut producers: Vec<(String, String)> = Vec::new();
        for p in &params {
            if let (Direction::Out, ParamRef::Stream(h)) = (p.direction, &p.value) {
                let client = self.inner.client.as_ref().ok_or(RuntimeError::NoStreamServer)?;
                let pid = format!(
                    "{}-p{}",
                    self.inner.run_id,
                    self.inner.next_producer.fetch_add(1, Ordering::SeqCst)
                );
                if let Err(e) = client.add_producer(&h.id, &pid) {
                    for (s, p) in &producers {
                        let _ = client.close(s, p);
                    }
                    return Err(e.into());
                }
                producers.push((h.id.clone(), pid));
            }
        }
        // analysis time excludes waiting for the state lock, which depends
        // on unrelated completions rather than on this task
        let before_lock = t0.elapsed();
        let (id, effects) = {
            let mut st = self.inner.state.lock();
            let t_locked = Instant::now();
            let listening = self.inner.listener.lock().is_some();
            if !listening && st.workers.iter().all(|w| w.res.total_cores < cores) {
                drop(st);
                self.close_grants(&producers);
                return Err(RuntimeError::NoWorkerFits { cores });
            }
            match st.register_task(method, params, cores, producers.clone(), before_lock, t_locked) {
                Ok(id) => {
                    let mut fx = self.inner.schedule(&mut st);
                    if st.tasks.get(&id).is_some_and(|t| t.desc.state == TaskState::Failed) {
                        // failed at submission: its writers will never run
                        fx.closes.extend(producers);
                    }
                    st.closing += fx.closes.len();
                    (id, fx)
                }
                Err(e) => {
                    drop(st);
                    self.close_grants(&producers);
                    return Err(e);
                }
            }
        };
        self.inner.apply(effects);
        Ok(id)
    }

    fn close_grants(&self, grants: &[(String, String)]) {
        if let Some(c) = &self.inner.client {
            for (s, p) in grants {
                let _ = c.close(s, p);
            }
        }
    }

    /// Blocks until the current version of `d` is produced and returns it.
    pub fn wait_on(&self, d: DataId) -> Result<Vec<u8>, RuntimeError> {
        let mut st = self.inner.state.lock();
        loop {
            let v = st.graph.version(d);
            let entry = st.data.get(&d).ok_or(RuntimeError::UnknownData(d))?;
            match entry.versions.get(&v) {
                None => return Err(RuntimeError::UnknownData(d)),
                Some(Version::Pending) => self.inner.changed.wait(&mut st),
                Some(Version::Ready(Some(b))) => return Ok(b.as_ref().clone()),
                Some(Version::Ready(None)) => return Ok(Vec::new()),
                Some(Version::Failed(task, msg)) => {
                    return Err(RuntimeError::ExecutionFailure {
                        task: *task,
                        message: msg.clone(),
                    })
                }
            }
        }
    }

    pub fn wait_on_as<T: DeserializeOwned>(&self, d: DataId) -> Result<T, RuntimeError> {
        let bytes = self.wait_on(d)?;
        serde_json::from_slice(&bytes).map_err(|e| RuntimeError::ExecutionFailure {
            task: 0,
            message: format!("decoding data {d}: {e}"),
        })
    }

    /// Blocks until the last writer of file `d` finished; returns its path.
    pub fn wait_on_file(&self, d: DataId) -> Result<PathBuf, RuntimeError> {
        self.wait_on(d)?;
        let st = self.inner.state.lock();
        st.data
            .get(&d)
            .and_then(|e| e.path.clone())
            .ok_or(RuntimeError::UnknownData(d))
    }

    /// Returns once every submitted task is DONE or FAILED.
    pub fn barrier(&self) {
        let mut st = self.inner.state.lock();
        while !st.all_final() {
            self.inner.changed.wait(&mut st);
        }
    }

    /// Like [`Runtime::barrier`], giving up after `timeout`. Returns whether
    /// everything finished. Tasks blocked on a stream nobody closes never do.
    pub fn barrier_timeout(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut st = self.inner.state.lock();
        while !st.all_final() {
            if self.inner.changed.wait_until(&mut st, deadline).timed_out() {
                return st.all_final();
            }
        }
        true
    }

    /// Waits until `n` workers are connected.
    pub fn wait_for_workers(&self, n: usize, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut st = self.inner.state.lock();
        loop {
            let live = st.workers.iter().filter(|w| !matches!(w.backend, Backend::Gone)).count();
            if live >= n {
                return true;
            }
            if self.inner.changed.wait_until(&mut st, deadline).timed_out() {
                return false;
            }
        }
    }

    pub fn task(&self, id: TaskId) -> Option<TaskDescriptor> {
        self.inner.state.lock().tasks.get(&id).map(|t| t.desc.clone())
    }

    pub fn task_state(&self, id: TaskId) -> Option<TaskState> {
        self.inner.state.lock().tasks.get(&id).map(|t| t.desc.state)
    }

    pub fn task_error(&self, id: TaskId) -> Option<String> {
        self.inner.state.lock().tasks.get(&id).and_then(|t| t.error.clone())
    }

    /// The worker a task last ran on.
    pub fn task_worker(&self, id: TaskId) -> Option<usize> {
        self.inner.state.lock().tasks.get(&id).and_then(|t| t.worker)
    }

    pub fn graph(&self) -> DependencyGraph {
        self.inner.state.lock().graph.clone()
    }

    pub fn workers(&self) -> Vec<ResourceState> {
        self.inner.state.lock().workers.iter().map(|w| w.res.clone()).collect()
    }

    pub fn trace(&self) -> Vec<TraceEvent> {
        self.inner.state.lock().trace.clone()
    }

    pub fn lifecycle(&self) -> LifecycleReport {
        let st = self.inner.state.lock();
        let rows = st
            .tasks
            .values()
            .filter_map(|t| {
                let tm = t.desc.timings;
                Some(LifecycleRow {
                    task_id: t.desc.task_id,
                    method: t.desc.method.clone(),
                    analysis_ms: tm.analysis_ms?,
                    schedule_ms: tm.schedule_ms?,
                    execution_ms: tm.execution_ms?,
                })
            })
            .collect();
        LifecycleReport { rows }
    }

    /// Stops accepting remote workers and disconnects the connected ones.
    pub fn shutdown(&self) {
        self.inner.shutdown();
    }
}

impl State {
    fn new_data(&mut self, kind: ParamType, path: Option<PathBuf>, value: Option<Vec<u8>>) -> DataId {
        let id = self.next_data;
        self.next_data += 1;
        let mut versions = BTreeMap::new();
        if kind == ParamType::File || value.is_some() {
            versions.insert(0, Version::Ready(value.map(Arc::new)));
        }
        self.data.insert(id, DataEntry { kind, path, versions });
        id
    }

    fn all_final(&self) -> bool {
        self.tasks.values().all(|t| t.desc.state.is_final())
    }

    fn register_task(
        &mut self,
        method: &str,
        mut params: Vec<ParamSpec>,
        cores: u32,
        producers: Vec<(String, String)>,
        before_lock: Duration,
        t_locked: Instant,
    ) -> Result<TaskId, RuntimeError> {
        // literal values become fresh data owned by the main program
        for p in params.iter_mut() {
            if let ParamRef::Value(bytes) = &mut p.value {
                let bytes = std::mem::take(bytes);
                p.value = ParamRef::Data(self.new_data(ParamType::Object, None, Some(bytes)));
            }
        }
        for p in &params {
            let Some(d) = p.data_id() else { continue };
            let entry = self.data.get(&d).ok_or(RuntimeError::UnknownData(d))?;
            if entry.kind != p.ptype {
                return Err(AnnotationError::Mismatch(0, "data", "data of the annotated type").into());
            }
            if p.direction.reads() && !entry.versions.contains_key(&self.graph.version(d)) {
                return Err(RuntimeError::UnknownData(d));
            }
        }
        let id = self.next_task;
        let accesses = self.graph.add_task(id, &params)?;
        self.next_task += 1;
        for a in &accesses {
            if let Some(v) = a.write {
                if let Some(e) = self.data.get_mut(&a.data) {
                    e.versions.insert(v, Version::Pending);
                }
            }
        }
        let mut rec = TaskRecord {
            desc: TaskDescriptor {
                task_id: id,
                method: method.to_string(),
                params,
                cores_required: cores,
                state: TaskState::Registered,
                timings: Timings::default(),
            },
            accesses,
            producers,
            worker: None,
            dispatched: None,
            attempts: 0,
            avoid: None,
            error: None,
        };
        rec.desc.timings.analysis_ms = Some((before_lock + t_locked.elapsed()).as_secs_f64() * 1e3);
        let failed_pred = self
            .graph
            .predecessors(id)
            .find(|p| self.tasks.get(p).is_some_and(|t| t.desc.state == TaskState::Failed));
        let all_done = self
            .graph
            .predecessors(id)
            .all(|p| self.tasks.get(&p).is_some_and(|t| t.desc.state == TaskState::Done));
        self.tasks.insert(id, rec);
        if let Some(p) = failed_pred {
            // the caller closes the stream grants
            self.cascade_one(id, p);
        } else if all_done {
            self.tasks.get_mut(&id).expect("just inserted").set_state(TaskState::Ready);
            self.ready.insert(id);
        }
        Ok(id)
    }

    fn cascade_one(&mut self, id: TaskId, cause: TaskId) -> Vec<(String, String)> {
        let msg = format!("predecessor task {cause} failed");
        let Some(t) = self.tasks.get_mut(&id) else { return Vec::new() };
        if t.desc.state != TaskState::Registered {
            return Vec::new();
        }
        t.set_state(TaskState::Failed);
        t.error = Some(msg.clone());
        let writes: Vec<(DataId, u32)> = t.accesses.iter().filter_map(|a| a.write.map(|v| (a.data, v))).collect();
        let grants = t.producers.clone();
        for (d, v) in writes {
            if let Some(e) = self.data.get_mut(&d) {
                e.versions.insert(v, Version::Failed(cause, msg.clone()));
            }
        }
        grants
    }

    fn candidates(&self) -> Vec<Candidate> {
        self.ready
            .iter()
            .chain(self.retry.iter())
            .filter_map(|id| self.tasks.get(id))
            .map(|t| {
                let mut c = Candidate {
                    task_id: t.desc.task_id,
                    cores: t.desc.cores_required,
                    avoid: t.avoid,
                    ..Default::default()
                };
                for a in &t.accesses {
                    if a.read.is_some() {
                        c.in_data.push(a.data);
                    }
                }
                for p in &t.desc.params {
                    if let ParamRef::Stream(h) = &p.value {
                        match p.direction {
                            Direction::Out => c.stream_out.push(h.id.clone()),
                            _ => c.stream_in.push(h.id.clone()),
                        }
                    }
                }
                c
            })
            .collect()
    }
}

impl Inner {
    fn elapsed_ms(&self) -> f64 {
        self.started.elapsed().as_secs_f64() * 1e3
    }

    /// Places as many ready tasks as resources allow.
    fn schedule(&self, st: &mut State) -> Effects {
        let mut fx = Effects::default();
        loop {
            let pick_start = Instant::now();
            let cands = st.candidates();
            if cands.is_empty() {
                break;
            }
            let resources: Vec<ResourceState> = st.workers.iter().map(|w| w.res.clone()).collect();
            let Some((task_id, w)) = pick_next(&cands, &resources, &self.config.policy) else {
                break;
            };
            fx.dispatches.push(self.dispatch(st, task_id, w, pick_start));
        }
        fx
    }

    fn dispatch(&self, st: &mut State, task_id: TaskId, w: usize, pick_start: Instant) -> Dispatch {
        let is_retry = st.retry.remove(&task_id);
        st.ready.remove(&task_id);
        let at_ms = self.elapsed_ms();
        let State {
            tasks, workers, data, trace, ..
        } = st;
        let t = tasks.get_mut(&task_id).expect("candidate exists");
        let slot = &mut workers[w];
        slot.res.free_cores -= t.desc.cores_required;
        let mut params = Vec::with_capacity(t.desc.params.len());
        let mut inputs = Vec::with_capacity(t.desc.params.len());
        for (i, p) in t.desc.params.iter().enumerate() {
            let access = t.accesses.iter().find(|a| a.param == i);
            let mut jp = JobParam {
                ptype: p.ptype,
                direction: p.direction,
                stream: None,
                file: None,
                producer: None,
                transfer: false,
            };
            let mut value = None;
            match &p.value {
                ParamRef::Stream(h) => {
                    jp.stream = Some(h.clone());
                    if p.direction == Direction::Out {
                        slot.res.stream_producer_history.insert(h.id.clone());
                        jp.producer = t.producers.iter().find(|(s, _)| *s == h.id).map(|(_, p)| p.clone());
                    }
                }
                ParamRef::Data(d) => {
                    let entry = data.get(d);
                    jp.file = entry.and_then(|e| e.path.clone());
                    if let Some(v) = access.and_then(|a| a.read) {
                        if p.ptype == ParamType::Object {
                            if let Some(Version::Ready(Some(b))) = entry.and_then(|e| e.versions.get(&v)) {
                                value = Some(b.as_ref().clone());
                            }
                            jp.transfer = !slot.res.data_locations.contains(d);
                        }
                        slot.res.data_locations.insert(*d);
                    }
                }
                ParamRef::Value(_) => unreachable!("literals are registered at submission"),
            }
            params.push(jp);
            inputs.push(value);
        }
        if !is_retry {
            t.set_state(TaskState::Scheduled);
            t.set_state(TaskState::Running);
        }
        t.worker = Some(w);
        let now = Instant::now();
        t.dispatched = Some(now);
        t.desc.timings.schedule_ms = Some((now - pick_start).as_secs_f64() * 1e3);
        trace.push(TraceEvent {
            task_id,
            worker: w,
            kind: TraceKind::Scheduled,
            at_ms,
        });
        Dispatch {
            task_id,
            worker: w,
            attempt: t.attempts,
            spec: JobSpec {
                task_id,
                method: t.desc.method.clone(),
                params,
                link: self.config.link,
                stream_server: self.config.stream_server.clone(),
            },
            inputs,
            remote: match &slot.backend {
                Backend::Remote(l) => Some(l.clone()),
                _ => None,
            },
        }
    }

    fn apply(self: &Arc<Self>, fx: Effects) {
        if let Some(c) = &self.client {
            for (s, p) in &fx.closes {
                if let Err(e) = c.close(s, p) {
                    tracing::warn!("closing producer {p} of {s}: {e}");
                }
            }
        }
        if !fx.closes.is_empty() {
            let mut st = self.state.lock();
            st.closing -= fx.closes.len();
            self.changed.notify_all();
        }
        for d in fx.dispatches {
            match d.remote.clone() {
                Some(link) => {
                    if let Err(e) = link.send_exec(d.attempt, &d.spec, &d.inputs) {
                        self.complete(d.task_id, d.worker, d.attempt, Err(TaskError(format!("dispatch failed: {e}"))));
                    }
                }
                None => {
                    let inner = self.clone();
                    let spawned = std::thread::Builder::new()
                        .name(format!("task-{}", d.task_id))
                        .spawn(move || {
                            let env = ExecEnv {
                                stream_client: inner.client.clone(),
                                runtime: Some(Runtime { inner: inner.clone() }),
                            };
                            let res = executor::run_job(&inner.registry, &d.spec, &d.inputs, &env);
                            inner.complete(d.task_id, d.worker, d.attempt, res);
                        });
                    if let Err(e) = spawned {
                        self.complete(d.task_id, d.worker, d.attempt, Err(TaskError(format!("spawn failed: {e}"))));
                    }
                }
            }
        }
    }

    /// Records a finished attempt and re-runs the scheduler.
    fn complete(self: &Arc<Self>, task_id: TaskId, w: usize, attempt: u32, result: Result<executor::Values, TaskError>) {
        let fx = {
            let mut st = self.state.lock();
            let mut fx = Effects::default();
            let at_ms = self.elapsed_ms();
            let Some(t) = st.tasks.get(&task_id) else { return };
            if t.worker != Some(w) || t.attempts != attempt || t.desc.state != TaskState::Running {
                return;
            }
            let cores = t.desc.cores_required;
            let slot = &mut st.workers[w];
            if !matches!(slot.backend, Backend::Gone) {
                slot.res.free_cores = (slot.res.free_cores + cores).min(slot.res.total_cores);
            }
            match result {
                Ok(outputs) => {
                    let t = st.tasks.get_mut(&task_id).expect("checked");
                    t.desc.timings.execution_ms = t.dispatched.map(|d| d.elapsed().as_secs_f64() * 1e3);
                    t.set_state(TaskState::Done);
                    fx.closes.extend(t.producers.clone());
                    let writes: Vec<(usize, DataId, u32)> = t
                        .accesses
                        .iter()
                        .filter_map(|a| a.write.map(|v| (a.param, a.data, v)))
                        .collect();
                    let mut outputs = outputs;
                    for (param, d, v) in writes {
                        let value = outputs.get_mut(param).and_then(Option::take).map(Arc::new);
                        if let Some(e) = st.data.get_mut(&d) {
                            e.versions.insert(v, Version::Ready(value));
                        }
                        // only the newest version counts as located
                        if st.graph.version(d) == v {
                            for other in st.workers.iter_mut() {
                                other.res.data_locations.remove(&d);
                            }
                            st.workers[w].res.data_locations.insert(d);
                        }
                    }
                    st.trace.push(TraceEvent {
                        task_id,
                        worker: w,
                        kind: TraceKind::Done,
                        at_ms,
                    });
                    let succs: Vec<TaskId> = st.graph.successors(task_id).collect();
                    for s in succs {
                        let ready = st.tasks.get(&s).is_some_and(|t| t.desc.state == TaskState::Registered)
                            && st
                                .graph
                                .predecessors(s)
                                .all(|p| st.tasks.get(&p).is_some_and(|t| t.desc.state == TaskState::Done));
                        if ready {
                            st.tasks.get_mut(&s).expect("successor exists").set_state(TaskState::Ready);
                            st.ready.insert(s);
                        }
                    }
                }
                Err(e) => {
                    let max_retries = self.config.max_retries;
                    let t = st.tasks.get_mut(&task_id).expect("checked");
                    t.attempts += 1;
                    if t.attempts <= max_retries {
                        t.avoid = Some(w);
                        t.worker = None;
                        st.retry.insert(task_id);
                        st.trace.push(TraceEvent {
                            task_id,
                            worker: w,
                            kind: TraceKind::Retry,
                            at_ms,
                        });
                        tracing::warn!("task {task_id} failed on worker {w}, retrying: {e}");
                    } else {
                        t.desc.timings.execution_ms = t.dispatched.map(|d| d.elapsed().as_secs_f64() * 1e3);
                        t.set_state(TaskState::Failed);
                        t.error = Some(e.0.clone());
                        fx.closes.extend(t.producers.clone());
                        let writes: Vec<(DataId, u32)> =
                            t.accesses.iter().filter_map(|a| a.write.map(|v| (a.data, v))).collect();
                        for (d, v) in writes {
                            if let Some(entry) = st.data.get_mut(&d) {
                                entry.versions.insert(v, Version::Failed(task_id, e.0.clone()));
                            }
                        }
                        st.trace.push(TraceEvent {
                            task_id,
                            worker: w,
                            kind: TraceKind::Failed,
                            at_ms,
                        });
                        tracing::error!("task {task_id} failed: {e}");
                        for d in st.graph.descendants(task_id) {
                            st.ready.remove(&d);
                            let grants = st.cascade_one(d, task_id);
                            fx.closes.extend(grants);
                        }
                    }
                }
            }
            let more = self.schedule(&mut st);
            fx.dispatches = more.dispatches;
            st.closing += fx.closes.len();
            self.changed.notify_all();
            fx
        };
        self.apply(fx);
    }

    /// Registers a connected worker. The welcome is written before the
    /// worker can receive any job.
    fn add_remote_worker(
        self: &Arc<Self>,
        name: &str,
        cores: u32,
        link: Arc<worker::RemoteLink>,
    ) -> std::io::Result<usize> {
        let fx;
        let id = {
            let mut st = self.state.lock();
            let id = st.workers.len();
            link.welcome(id)?;
            st.workers.push(WorkerSlot {
                res: ResourceState::new(id, name, cores),
                backend: Backend::Remote(link),
            });
            fx = self.schedule(&mut st);
            self.changed.notify_all();
            id
        };
        self.apply(fx);
        Ok(id)
    }

    /// A remote worker disconnected: its running tasks fail over.
    fn worker_lost(self: &Arc<Self>, w: usize) {
        let running: Vec<(TaskId, u32)> = {
            let mut st = self.state.lock();
            let Some(slot) = st.workers.get_mut(w) else { return };
            slot.backend = Backend::Gone;
            slot.res.total_cores = 0;
            slot.res.free_cores = 0;
            slot.res.data_locations.clear();
            st.tasks
                .values()
                .filter(|t| t.worker == Some(w) && t.desc.state == TaskState::Running && !st.retry.contains(&t.desc.task_id))
                .map(|t| (t.desc.task_id, t.attempts))
                .collect()
        };
        tracing::warn!("worker {w} disconnected with {} running tasks", running.len());
        for (t, attempt) in running {
            self.complete(t, w, attempt, Err(TaskError::msg("worker lost")));
        }
    }

    fn shutdown(&self) {
        if let Some(l) = self.listener.lock().take() {
            l.stop();
        }
        let mut st = self.state.lock();
        // let completions finish telling the server their streams are done
        let deadline = Instant::now() + Duration::from_secs(5);
        while st.closing > 0 && !self.changed.wait_until(&mut st, deadline).timed_out() {}
        for w in &st.workers {
            if let Backend::Remote(l) = &w.backend {
                l.disconnect();
            }
        }
    }
}

impl Drop for Inner {
    fn drop(&mut self) {
        self.shutdown();
    }
}

type WeakInner = Weak<Inner>;
