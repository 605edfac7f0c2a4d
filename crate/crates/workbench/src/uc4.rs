//! Nested tasks: a filter batches its stream input and spawns one subtask
//! per batch; a compute task reduces the extracted ids through its own
//! nested reduction.

use std::time::Instant;

use hybridflow_core::runtime::ParamSpec;
use hybridflow_core::stream::StreamOptions;
use hybridflow_core::types::StreamKind;

use crate::config::BenchConfig;
use crate::harness::{BenchResult, Harness};
use crate::methods::{value, ComputeSummary, FeedArgs};
use crate::report::Report;
use crate::work::elapsed_ms;

/// Ids reduced per nested chunk task.
const CHUNK: usize = 16;

#[derive(Debug, Clone)]
pub struct Uc4Run {
    pub payloads: usize,
    pub batch_size: usize,
    pub spawned: usize,
    pub summary: ComputeSummary,
    pub makespan_ms: f64,
}

impl Uc4Run {
    pub fn expected_subtasks(&self) -> usize {
        self.payloads.div_ceil(self.batch_size)
    }

    /// One subtask per batch and every payload id summed exactly once.
    pub fn conserved(&self) -> bool {
        let n = self.payloads as u64;
        self.spawned == self.expected_subtasks()
            && self.summary.count == self.payloads
            && self.summary.sum == n * n.saturating_sub(1) / 2
    }
}

pub fn run_once(h: &Harness, cfg: &BenchConfig, payloads: usize, batch_size: usize) -> BenchResult<Uc4Run> {
    let rt = h.runtime(cfg.workers, cfg.cores)?;
    let t0 = Instant::now();
    let raw = rt.create_stream(StreamKind::Object, StreamOptions::default())?;
    let filtered = rt.create_stream(StreamKind::Object, StreamOptions::default())?;
    let feed = FeedArgs {
        first_id: 0,
        count: payloads,
        payload_bytes: cfg.payload_bytes,
        gap_ms: cfg.sensor_gap_ms,
    };
    rt.submit("feed", vec![value(&feed), ParamSpec::stream_out(raw.handle())])?;
    let spawned = rt.new_object();
    rt.submit(
        "uc4_filter",
        vec![
            value(&batch_size),
            ParamSpec::stream_in(raw.handle()),
            ParamSpec::stream_out(filtered.handle()),
            ParamSpec::object_out(spawned),
        ],
    )?;
    let ids = rt.new_object();
    rt.submit("collect_ids", vec![ParamSpec::stream_in(filtered.handle()), ParamSpec::object_out(ids)])?;
    let summary = rt.new_object();
    rt.submit(
        "uc4_compute",
        vec![value(&CHUNK), ParamSpec::object_in(ids), ParamSpec::object_out(summary)],
    )?;
    let summary: ComputeSummary = rt.wait_on_as(summary)?;
    let spawned: usize = rt.wait_on_as(spawned)?;
    let makespan_ms = elapsed_ms(t0);
    rt.shutdown();
    Ok(Uc4Run {
        payloads,
        batch_size,
        spawned,
        summary,
        makespan_ms,
    })
}

pub fn bench(h: &Harness, cfg: &BenchConfig) -> BenchResult<Report> {
    let mut report = Report::new();
    for rep in 0..cfg.reps {
        let r = run_once(h, cfg, cfg.payloads, cfg.batch_size)?;
        let id = &cfg.config_id;
        report.push(id, "HYBRID", "makespan", r.makespan_ms, "ms");
        report.push(id, "HYBRID", "subtasks", r.spawned as f64, "tasks");
        report.push(id, "HYBRID", "reduced", r.summary.count as f64, "elements");
        report.check(
            format!("{id} rep {rep}: one subtask per batch, every element reduced"),
            r.conserved(),
            format!(
                "{} subtasks (expected {}), {:?}",
                r.spawned,
                r.expected_subtasks(),
                r.summary
            ),
        );
    }
    Ok(report)
}
