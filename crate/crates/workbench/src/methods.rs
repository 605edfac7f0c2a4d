//! Task bodies for every bench. Master and worker processes register the
//! same set through [`registry`].

use std::collections::HashSet;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use hybridflow_core::client::Client;
use hybridflow_core::runtime::{DataId, MethodRegistry, ParamSpec, TaskContext, TaskError};
use hybridflow_core::stream::{DistroStream, StreamHandle};
use serde::{Deserialize, Serialize};

use crate::work::{digest, make_payload, sleep_until, verify_payload, work};

/// How long a consumer waits in one poll before re-checking for closure.
const POLL_WAIT: Duration = Duration::from_millis(100);

pub(crate) fn value<T: Serialize>(v: &T) -> ParamSpec {
    ParamSpec::value(serde_json::to_vec(v).expect("serializable"))
}

fn checked_id(p: &[u8]) -> Result<u64, TaskError> {
    verify_payload(p).ok_or_else(|| TaskError::msg("payload checksum mismatch"))
}

fn now_us() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_micros() as u64)
}

// ---- continuous generation ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimArgs {
    pub first_id: u64,
    pub elements: usize,
    pub generation_ms: f64,
    pub payload_bytes: usize,
}

/// Params: `[args, FILE OUT × elements]`.
fn uc1_sim_files(ctx: &mut TaskContext) -> Result<(), TaskError> {
    let a: SimArgs = ctx.input_as(0)?;
    let start = Instant::now();
    for j in 0..a.elements {
        sleep_until(start, (j + 1) as f64 * a.generation_ms);
        std::fs::write(ctx.file_path(j + 1)?, make_payload(a.first_id + j as u64, a.payload_bytes))?;
    }
    Ok(())
}

/// Params: `[args, FILE STREAM OUT]`.
fn uc1_sim_stream(ctx: &mut TaskContext) -> Result<(), TaskError> {
    let a: SimArgs = ctx.input_as(0)?;
    let out = ctx.stream(1)?;
    let start = Instant::now();
    for j in 0..a.elements {
        sleep_until(start, (j + 1) as f64 * a.generation_ms);
        let id = a.first_id + j as u64;
        out.write_file(&format!("elem-{id:06}.bin"), &make_payload(id, a.payload_bytes))?;
    }
    Ok(())
}

/// Params: `[FILE IN, process_ms, OBJECT OUT]`. Outputs the verified element.
fn uc1_process(ctx: &mut TaskContext) -> Result<(), TaskError> {
    let bytes = std::fs::read(ctx.file_path(0)?)?;
    checked_id(&bytes)?;
    work(ctx.input_as(1)?);
    ctx.set_output(2, bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeSummary {
    pub ids: Vec<u64>,
    pub bytes: usize,
    pub checksum: u64,
}

/// Params: `[merge_ms, OBJECT OUT, OBJECT IN...]`. Concatenates the
/// processed elements in id order and checksums the result.
fn uc1_merge(ctx: &mut TaskContext) -> Result<(), TaskError> {
    work(ctx.input_as(0)?);
    let mut parts = Vec::new();
    for i in 2..ctx.param_count() {
        let p = ctx.input(i)?.to_vec();
        parts.push((checked_id(&p)?, p));
    }
    parts.sort();
    let merged: Vec<u8> = parts.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let summary = MergeSummary {
        ids: parts.iter().map(|(id, _)| *id).collect(),
        bytes: merged.len(),
        checksum: digest([merged.as_slice()]),
    };
    ctx.set_output_as(1, &summary)
}

// ---- iterative exchange ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompState {
    pub comp: usize,
    pub iteration: usize,
    pub value: f64,
    /// States of other computations taken into account so far.
    pub received: usize,
}

fn step(v: f64, comp: usize) -> f64 {
    (v * 0.9 + comp as f64 + 1.0).fract() + v.floor()
}

/// Params: `[(comp, init_ms), OBJECT OUT state]`.
fn uc2_init(ctx: &mut TaskContext) -> Result<(), TaskError> {
    let (comp, init_ms): (usize, f64) = ctx.input_as(0)?;
    work(init_ms);
    ctx.set_output_as(
        1,
        &CompState {
            comp,
            iteration: 0,
            value: comp as f64,
            received: 0,
        },
    )
}

/// Params: `[iteration_ms, OBJECT INOUT state]`.
fn uc2_iterate(ctx: &mut TaskContext) -> Result<(), TaskError> {
    let ms: f64 = ctx.input_as(0)?;
    let mut s: CompState = ctx.input_as(1)?;
    work(ms);
    s.iteration += 1;
    s.value = step(s.value, s.comp);
    ctx.set_output_as(1, &s)
}

/// Params: `[exchange_ms, OBJECT INOUT state...]`. Every computation
/// adopts the mean of all states.
fn uc2_exchange(ctx: &mut TaskContext) -> Result<(), TaskError> {
    let ms: f64 = ctx.input_as(0)?;
    let mut states: Vec<CompState> = (1..ctx.param_count()).map(|i| ctx.input_as(i)).collect::<Result<_, _>>()?;
    work(ms);
    let mean = states.iter().map(|s| s.value).sum::<f64>() / states.len() as f64;
    let others = states.len() - 1;
    for (k, s) in states.iter_mut().enumerate() {
        s.value = mean;
        s.received += others;
        ctx.set_output_as(k + 1, s)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HybridCompArgs {
    pub comp: usize,
    pub iterations: usize,
    pub init_ms: f64,
    pub iteration_ms: f64,
}

/// A handle on another task's stream with a consumer group of our own, so
/// every reader sees every element.
fn open_private(ctx: &TaskContext, i: usize) -> Result<DistroStream, TaskError> {
    let mut h: StreamHandle = ctx.stream_handle(i)?.clone();
    let client = ctx.stream_client().ok_or_else(|| TaskError::msg("no stream server"))?.clone();
    h.group = Some(format!("{}-t{}", h.group.as_deref().unwrap_or("g"), ctx.task_id()));
    Ok(DistroStream::open(client, h)?)
}

/// Params: `[args, OBJECT OUT state, STREAM OUT own, STREAM IN other...]`.
/// Publishes its state after every iteration and folds in whatever the
/// others have published so far, without waiting for them.
fn uc2_hybrid(ctx: &mut TaskContext) -> Result<(), TaskError> {
    let a: HybridCompArgs = ctx.input_as(0)?;
    let own = ctx.stream(2)?;
    let others: Vec<DistroStream> = (3..ctx.param_count()).map(|i| open_private(ctx, i)).collect::<Result<_, _>>()?;
    work(a.init_ms);
    let mut s = CompState {
        comp: a.comp,
        iteration: 0,
        value: a.comp as f64,
        received: 0,
    };
    for _ in 0..a.iterations {
        work(a.iteration_ms);
        s.iteration += 1;
        s.value = step(s.value, s.comp);
        own.publish_json(&s)?;
        for o in &others {
            for e in o.poll()? {
                let theirs: CompState = serde_json::from_slice(&e.payload)?;
                s.value = (s.value + theirs.value) / 2.0;
                s.received += 1;
            }
        }
    }
    ctx.set_output_as(1, &s)
}

// ---- external stream ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterArgs {
    /// Crash after the first batch, once per input stream.
    pub crash: bool,
    pub server: String,
}

fn crashed_streams() -> &'static Mutex<HashSet<String>> {
    static S: OnceLock<Mutex<HashSet<String>>> = OnceLock::new();
    S.get_or_init(Mutex::default)
}

/// Params: `[args, STREAM IN sensor, STREAM OUT filtered, OBJECT OUT count]`.
fn uc3_filter(ctx: &mut TaskContext) -> Result<(), TaskError> {
    let a: FilterArgs = ctx.input_as(0)?;
    let input = ctx.stream_handle(1)?.clone();
    let out = ctx.stream(2)?;
    if a.crash && crashed_streams().lock().expect("not poisoned").insert(input.id.clone()) {
        // a private connection so the crash looks like a dead node to the broker
        let client = Arc::new(Client::connect(a.server.as_str()).map_err(|e| TaskError(e.to_string()))?);
        let s = DistroStream::open(client.clone(), input)?;
        let got = s.poll_timeout(Duration::from_secs(5))?;
        for e in &got {
            checked_id(&e.payload)?;
            out.publish(e.payload.clone())?;
        }
        client.kill();
        return Err(TaskError(format!("injected crash after {} elements", got.len())));
    }
    let input = ctx.stream(1)?;
    let mut n = 0usize;
    loop {
        let o = input.poll_outcome(Some(POLL_WAIT))?;
        for e in o.elements {
            checked_id(&e.payload)?;
            out.publish(e.payload)?;
            n += 1;
        }
        if o.drained {
            break;
        }
    }
    ctx.set_output_as(3, &n)
}

/// Params: `[STREAM IN, OBJECT OUT ids]`. Collects the ids of every element
/// until the stream is closed and drained.
fn collect_ids(ctx: &mut TaskContext) -> Result<(), TaskError> {
    let input = ctx.stream(0)?;
    let mut ids = Vec::new();
    loop {
        let o = input.poll_outcome(Some(POLL_WAIT))?;
        for e in o.elements {
            ids.push(match serde_json::from_slice::<u64>(&e.payload) {
                Ok(id) => id,
                Err(_) => checked_id(&e.payload)?,
            });
        }
        if o.drained {
            break;
        }
    }
    ctx.set_output_as(1, &ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub total: usize,
    pub unique: usize,
    pub duplicates: usize,
}

impl Tally {
    pub fn of(ids: &[u64]) -> Self {
        let unique = ids.iter().collect::<HashSet<_>>().len();
        Tally {
            total: ids.len(),
            unique,
            duplicates: ids.len() - unique,
        }
    }
}

/// Params: `[OBJECT IN ids, OBJECT OUT tally]`.
fn uc3_reduce(ctx: &mut TaskContext) -> Result<(), TaskError> {
    let ids: Vec<u64> = ctx.input_as(0)?;
    ctx.set_output_as(1, &Tally::of(&ids))
}

// ---- nested tasks ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedArgs {
    pub first_id: u64,
    pub count: usize,
    pub payload_bytes: usize,
    pub gap_ms: f64,
}

/// Params: `[args, STREAM OUT]`. Publishes checksum-bearing payloads at a
/// steady rate.
fn feed(ctx: &mut TaskContext) -> Result<(), TaskError> {
    let a: FeedArgs = ctx.input_as(0)?;
    let out = ctx.stream(1)?;
    let start = Instant::now();
    for j in 0..a.count {
        sleep_until(start, j as f64 * a.gap_ms);
        out.publish(make_payload(a.first_id + j as u64, a.payload_bytes))?;
    }
    Ok(())
}

fn nested_runtime<'a>(ctx: &'a TaskContext) -> Result<&'a hybridflow_core::runtime::Runtime, TaskError> {
    ctx.runtime()
        .ok_or_else(|| TaskError::msg("nested submission needs an in-process worker"))
}

/// Params: `[batch_size, STREAM IN, STREAM OUT, OBJECT OUT spawned]`.
/// Accumulates input into batches and spawns one filter subtask per batch.
fn uc4_filter(ctx: &mut TaskContext) -> Result<(), TaskError> {
    let batch: usize = ctx.input_as(0)?;
    let input = ctx.stream(1)?;
    let out = ctx.stream(2)?;
    let rt = nested_runtime(ctx)?.clone();
    let mut pending: Vec<Vec<u8>> = Vec::new();
    let mut results: Vec<DataId> = Vec::new();
    let mut spawn = |items: Vec<Vec<u8>>| -> Result<(), TaskError> {
        let o = rt.new_object();
        rt.submit("uc4_filter_batch", vec![value(&items), ParamSpec::object_out(o)])?;
        results.push(o);
        Ok(())
    };
    loop {
        let o = input.poll_outcome(Some(POLL_WAIT))?;
        pending.extend(o.elements.into_iter().map(|e| e.payload));
        while pending.len() >= batch {
            let rest = pending.split_off(batch);
            spawn(std::mem::replace(&mut pending, rest))?;
        }
        if o.drained {
            break;
        }
    }
    if !pending.is_empty() {
        spawn(pending)?;
    }
    for d in &results {
        let ids: Vec<u64> = rt.wait_on_as(*d)?;
        for id in ids {
            out.publish_json(&id)?;
        }
    }
    ctx.set_output_as(3, &results.len())
}

/// Params: `[payloads, OBJECT OUT ids]`.
fn uc4_filter_batch(ctx: &mut TaskContext) -> Result<(), TaskError> {
    let items: Vec<Vec<u8>> = ctx.input_as(0)?;
    let ids: Vec<u64> = items.iter().map(|p| checked_id(p)).collect::<Result<_, _>>()?;
    ctx.set_output_as(1, &ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeSummary {
    pub count: usize,
    pub sum: u64,
    pub chunks: usize,
}

/// Params: `[chunk, OBJECT IN ids, OBJECT OUT summary]`. Sums the ids with
/// a nested chunked reduction.
fn uc4_compute(ctx: &mut TaskContext) -> Result<(), TaskError> {
    let chunk: usize = ctx.input_as(0)?;
    let ids: Vec<u64> = ctx.input_as(1)?;
    let rt = nested_runtime(ctx)?.clone();
    let mut parts = Vec::new();
    for c in ids.chunks(chunk.max(1)) {
        let o = rt.new_object();
        rt.submit("sum", vec![value(&c), ParamSpec::object_out(o)])?;
        parts.push(o);
    }
    let total = rt.new_object();
    let mut params = vec![ParamSpec::object_out(total)];
    params.extend(parts.iter().map(|&p| ParamSpec::object_in(p)));
    rt.submit("sum_parts", params)?;
    ctx.set_output_as(
        2,
        &ComputeSummary {
            count: ids.len(),
            sum: rt.wait_on_as(total)?,
            chunks: parts.len(),
        },
    )
}

/// Params: `[values, OBJECT OUT sum]`.
fn sum(ctx: &mut TaskContext) -> Result<(), TaskError> {
    let v: Vec<u64> = ctx.input_as(0)?;
    ctx.set_output_as(1, &v.iter().sum::<u64>())
}

/// Params: `[OBJECT OUT sum, OBJECT IN part...]`.
fn sum_parts(ctx: &mut TaskContext) -> Result<(), TaskError> {
    let mut total = 0u64;
    for i in 1..ctx.param_count() {
        total += ctx.input_as::<u64>(i)?;
    }
    ctx.set_output_as(0, &total)
}

// ---- readers and writers ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReaderArgs {
    pub process_ms: f64,
    pub poll_cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderOut {
    pub ids: Vec<u64>,
    /// Wall-clock time of the first non-empty poll, if any.
    pub first_receive_us: Option<u64>,
}

/// Params: `[args, STREAM IN, OBJECT OUT ReaderOut]`. Processes every
/// element it receives for `process_ms`.
fn scale_reader(ctx: &mut TaskContext) -> Result<(), TaskError> {
    let a: ReaderArgs = ctx.input_as(0)?;
    let h = ctx.stream_handle(1)?.clone();
    let client = ctx.stream_client().ok_or_else(|| TaskError::msg("no stream server"))?.clone();
    let input = DistroStream::open(client, h)?.with_max_elements(a.poll_cap);
    let mut out = ReaderOut {
        ids: Vec::new(),
        first_receive_us: None,
    };
    loop {
        let o = input.poll_outcome(Some(POLL_WAIT))?;
        if !o.elements.is_empty() && out.first_receive_us.is_none() {
            out.first_receive_us = Some(now_us());
        }
        for e in o.elements {
            out.ids.push(checked_id(&e.payload)?);
            work(a.process_ms);
        }
        if o.drained {
            break;
        }
    }
    ctx.set_output_as(2, &out)
}

// ---- task lifecycle ----

/// Params: `[OBJECT IN...]`. Touches every input.
fn lc_objects(ctx: &mut TaskContext) -> Result<(), TaskError> {
    let mut bytes = 0usize;
    for i in 0..ctx.param_count() {
        bytes += ctx.input(i)?.len();
    }
    std::hint::black_box(bytes);
    Ok(())
}

/// Params: `[count, STREAM IN]`. Reads `count` elements from the stream.
fn lc_stream(ctx: &mut TaskContext) -> Result<(), TaskError> {
    let want: usize = ctx.input_as(0)?;
    let input = ctx.stream(1)?;
    let mut got = 0usize;
    while got < want {
        let o = input.poll_outcome(Some(POLL_WAIT))?;
        got += o.elements.len();
        if o.drained && got < want {
            return Err(TaskError(format!("stream ended after {got} of {want} elements")));
        }
    }
    Ok(())
}

pub fn registry() -> MethodRegistry {
    let mut r = MethodRegistry::new();
    r.register("uc1_sim_files", uc1_sim_files)
        .register("uc1_sim_stream", uc1_sim_stream)
        .register("uc1_process", uc1_process)
        .register("uc1_merge", uc1_merge)
        .register("uc2_init", uc2_init)
        .register("uc2_iterate", uc2_iterate)
        .register("uc2_exchange", uc2_exchange)
        .register("uc2_hybrid", uc2_hybrid)
        .register("uc3_filter", uc3_filter)
        .register("collect_ids", collect_ids)
        .register("uc3_reduce", uc3_reduce)
        .register("feed", feed)
        .register("uc4_filter", uc4_filter)
        .register("uc4_filter_batch", uc4_filter_batch)
        .register("uc4_compute", uc4_compute)
        .register("sum", sum)
        .register("sum_parts", sum_parts)
        .register("scale_reader", scale_reader)
        .register("lc_objects", lc_objects)
        .register("lc_stream", lc_stream);
    r
}
