//! Method registry, per-task execution context and the job runner shared by
//! local slots and remote worker processes.

use std::collections::HashMap;
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::task::{Direction, ParamType, TaskId};
use super::Runtime;
use crate::client::Client;
use crate::stream::{DistroStream, PollOutcome, StreamElement, StreamError, StreamHandle};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct TaskError(pub String);

impl TaskError {
    pub fn msg(m: impl Into<String>) -> Self {
        TaskError(m.into())
    }
}

impl From<StreamError> for TaskError {
    fn from(e: StreamError) -> Self {
        TaskError(e.to_string())
    }
}

impl From<std::io::Error> for TaskError {
    fn from(e: std::io::Error) -> Self {
        TaskError(e.to_string())
    }
}

impl From<crate::codec::CodecError> for TaskError {
    fn from(e: crate::codec::CodecError) -> Self {
        TaskError(e.to_string())
    }
}

impl From<serde_json::Error> for TaskError {
    fn from(e: serde_json::Error) -> Self {
        TaskError(e.to_string())
    }
}

impl From<super::RuntimeError> for TaskError {
    fn from(e: super::RuntimeError) -> Self {
        TaskError(e.to_string())
    }
}

pub type TaskFn = Arc<dyn Fn(&mut TaskContext) -> Result<(), TaskError> + Send + Sync>;

/// Named task bodies. The master and every worker process must hold the
/// same registrations.
#[derive(Clone, Default)]
pub struct MethodRegistry {
    methods: HashMap<String, TaskFn>,
}

impl MethodRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, name: &str, f: F) -> &mut Self
    where
        F: Fn(&mut TaskContext) -> Result<(), TaskError> + Send + Sync + 'static,
    {
        self.methods.insert(name.to_string(), Arc::new(f));
        self
    }

    pub fn get(&self, name: &str) -> Option<TaskFn> {
        self.methods.get(name).cloned()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.methods.contains_key(name)
    }

    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.methods.keys().cloned().collect();
        v.sort();
        v
    }
}

/// Emulated network between nodes: a fixed per-message latency plus a
/// bandwidth term. The default is free and instantaneous.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkModel {
    pub latency_ms: f64,
    /// Megabytes (10^6 bytes) per second; 0 means unlimited.
    pub bandwidth_mb_s: f64,
}

impl LinkModel {
    pub fn is_free(&self) -> bool {
        self.latency_ms <= 0.0 && self.bandwidth_mb_s <= 0.0
    }

    pub fn cost(&self, bytes: usize) -> Duration {
        let mut ms = self.latency_ms.max(0.0);
        if self.bandwidth_mb_s > 0.0 {
            ms += bytes as f64 / (self.bandwidth_mb_s * 1e3);
        }
        Duration::from_secs_f64(ms / 1e3)
    }

    pub fn pay(&self, bytes: usize) {
        if !self.is_free() {
            std::thread::sleep(self.cost(bytes));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobParam {
    pub ptype: ParamType,
    pub direction: Direction,
    pub stream: Option<StreamHandle>,
    pub file: Option<PathBuf>,
    /// Producer identity pre-registered for STREAM OUT parameters.
    pub producer: Option<String>,
    /// The input value is not on the executing node and must be shipped.
    pub transfer: bool,
}

/// Everything a node needs to run one task, apart from the input values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub task_id: TaskId,
    pub method: String,
    pub params: Vec<JobParam>,
    pub link: LinkModel,
    pub stream_server: Option<String>,
}

pub type Values = Vec<Option<Vec<u8>>>;

/// Node-local services available to a running task.
#[derive(Clone, Default)]
pub struct ExecEnv {
    pub stream_client: Option<Arc<Client>>,
    pub runtime: Option<Runtime>,
}

pub struct TaskContext<'a> {
    spec: &'a JobSpec,
    inputs: &'a [Option<Vec<u8>>],
    outputs: Values,
    env: &'a ExecEnv,
}

impl<'a> TaskContext<'a> {
    pub fn task_id(&self) -> TaskId {
        self.spec.task_id
    }

    pub fn param_count(&self) -> usize {
        self.spec.params.len()
    }

    fn param(&self, i: usize) -> Result<&JobParam, TaskError> {
        self.spec
            .params
            .get(i)
            .ok_or_else(|| TaskError(format!("task has no parameter {i}")))
    }

    /// The value of an IN or INOUT object parameter.
    pub fn input(&self, i: usize) -> Result<&[u8], TaskError> {
        self.param(i)?;
        self.inputs
            .get(i)
            .and_then(|v| v.as_deref())
            .ok_or_else(|| TaskError(format!("parameter {i} has no input value")))
    }

    pub fn input_as<T: DeserializeOwned>(&self, i: usize) -> Result<T, TaskError> {
        Ok(serde_json::from_slice(self.input(i)?)?)
    }

    pub fn set_output(&mut self, i: usize, value: Vec<u8>) -> Result<(), TaskError> {
        let p = self.param(i)?;
        if p.ptype != ParamType::Object || !p.direction.writes() {
            return Err(TaskError(format!("parameter {i} is not an OUT object")));
        }
        self.outputs[i] = Some(value);
        Ok(())
    }

    pub fn set_output_as<T: Serialize>(&mut self, i: usize, value: &T) -> Result<(), TaskError> {
        self.set_output(i, serde_json::to_vec(value)?)
    }

    pub fn file_path(&self, i: usize) -> Result<&Path, TaskError> {
        self.param(i)?
            .file
            .as_deref()
            .ok_or_else(|| TaskError(format!("parameter {i} is not a file")))
    }

    pub fn stream_handle(&self, i: usize) -> Result<&StreamHandle, TaskError> {
        self.param(i)?
            .stream
            .as_ref()
            .ok_or_else(|| TaskError(format!("parameter {i} is not a stream")))
    }

    /// Opens a STREAM parameter. OUT streams publish under the producer
    /// identity registered when the task was submitted.
    pub fn stream(&self, i: usize) -> Result<TaskStream, TaskError> {
        let p = self.param(i)?;
        let handle = p
            .stream
            .clone()
            .ok_or_else(|| TaskError(format!("parameter {i} is not a stream")))?;
        let client = self
            .env
            .stream_client
            .clone()
            .ok_or_else(|| TaskError::msg("no stream server configured"))?;
        self.spec.link.pay(0);
        let mut s = DistroStream::open(client, handle)?;
        if let Some(prod) = &p.producer {
            s = s.with_producer_id(prod.clone());
        }
        Ok(TaskStream {
            inner: s,
            link: self.spec.link,
        })
    }

    /// The runtime this task runs under, for nested submission. Only
    /// available on in-process workers.
    pub fn runtime(&self) -> Option<&Runtime> {
        self.env.runtime.as_ref()
    }

    pub fn stream_client(&self) -> Option<&Arc<Client>> {
        self.env.stream_client.as_ref()
    }
}

/// A stream opened from inside a task. Every request pays the node's link
/// cost, so stream traffic and parameter transfers are modelled alike.
pub struct TaskStream {
    inner: DistroStream,
    link: LinkModel,
}

fn bytes_of(elems: &[StreamElement]) -> usize {
    elems.iter().map(|e| e.payload.len()).sum()
}

impl TaskStream {
    pub fn inner(&self) -> &DistroStream {
        &self.inner
    }

    pub fn handle(&self) -> &StreamHandle {
        self.inner.handle()
    }

    pub fn publish(&self, payload: Vec<u8>) -> Result<(), StreamError> {
        self.link.pay(payload.len());
        self.inner.publish(payload)
    }

    pub fn publish_all(&self, payloads: Vec<Vec<u8>>) -> Result<(), StreamError> {
        self.link.pay(payloads.iter().map(Vec::len).sum());
        self.inner.publish_all(payloads)
    }

    pub fn publish_json<T: Serialize>(&self, value: &T) -> Result<(), StreamError> {
        self.publish(serde_json::to_vec(value).map_err(|e| StreamError::Backend(e.to_string()))?)
    }

    pub fn write_file(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, StreamError> {
        self.inner.write_file(name, bytes)
    }

    pub fn poll(&self) -> Result<Vec<StreamElement>, StreamError> {
        let out = self.inner.poll()?;
        self.link.pay(bytes_of(&out));
        Ok(out)
    }

    pub fn poll_timeout(&self, timeout: Duration) -> Result<Vec<StreamElement>, StreamError> {
        let out = self.inner.poll_timeout(timeout)?;
        self.link.pay(bytes_of(&out));
        Ok(out)
    }

    pub fn poll_outcome(&self, timeout: Option<Duration>) -> Result<PollOutcome, StreamError> {
        let out = self.inner.poll_outcome(timeout)?;
        self.link.pay(bytes_of(&out.elements));
        Ok(out)
    }

    pub fn close(&self) -> Result<(), StreamError> {
        self.inner.close()
    }

    pub fn is_closed(&self) -> Result<bool, StreamError> {
        self.inner.is_closed()
    }
}

/// Runs one job: ships missing inputs, runs the method, checks outputs and
/// ships them back. Panics in task code become task failures.
pub fn run_job(
    registry: &MethodRegistry,
    spec: &JobSpec,
    inputs: &[Option<Vec<u8>>],
    env: &ExecEnv,
) -> Result<Values, TaskError> {
    let f = registry
        .get(&spec.method)
        .ok_or_else(|| TaskError(format!("unknown method `{}`", spec.method)))?;
    for (p, v) in spec.params.iter().zip(inputs) {
        if p.transfer {
            spec.link.pay(v.as_ref().map_or(0, Vec::len));
        }
    }
    let mut ctx = TaskContext {
        spec,
        inputs,
        outputs: vec![None; spec.params.len()],
        env,
    };
    match std::panic::catch_unwind(AssertUnwindSafe(|| f(&mut ctx))) {
        Ok(Ok(())) => {}
        Ok(Err(e)) => return Err(e),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "task panicked".into());
            return Err(TaskError(format!("panic: {msg}")));
        }
    }
    let mut outputs = ctx.outputs;
    for (i, p) in spec.params.iter().enumerate() {
        if p.ptype != ParamType::Object {
            continue;
        }
        match p.direction {
            Direction::Out if outputs[i].is_none() => {
                return Err(TaskError(format!("OUT parameter {i} was not set")))
            }
            Direction::InOut if outputs[i].is_none() => outputs[i] = inputs.get(i).cloned().flatten(),
            _ => {}
        }
    }
    spec.link.pay(outputs.iter().flatten().map(Vec::len).sum());
    Ok(outputs)
}
