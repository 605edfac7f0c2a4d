//! Per-task analysis, scheduling and execution times when a task receives
//! its data as object parameters or through one stream parameter, over a
//! grid of object counts and sizes.

use std::collections::HashMap;
use std::fmt;

use hybridflow_core::runtime::{LifecycleRow, LinkModel, ParamSpec};
use hybridflow_core::stream::StreamOptions;
use hybridflow_core::types::StreamKind;

use crate::config::BenchConfig;
use crate::harness::{BenchError, BenchResult, Harness};
use crate::methods::value;
use crate::report::{mean, median, Report};
use crate::work::make_payload;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Object,
    Stream,
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamKind::Object => "OBJECT",
            ParamKind::Stream => "STREAM",
        })
    }
}

#[derive(Debug, Clone)]
pub struct LifecyclePoint {
    pub kind: ParamKind,
    pub count: usize,
    pub bytes: usize,
    pub rows: Vec<LifecycleRow>,
}

impl LifecyclePoint {
    fn col(&self, f: impl Fn(&LifecycleRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    pub fn median_analysis_ms(&self) -> f64 {
        median(&self.col(|r| r.analysis_ms))
    }

    pub fn mean_analysis_ms(&self) -> f64 {
        mean(&self.col(|r| r.analysis_ms))
    }

    pub fn mean_schedule_ms(&self) -> f64 {
        mean(&self.col(|r| r.schedule_ms))
    }

    pub fn mean_execution_ms(&self) -> f64 {
        mean(&self.col(|r| r.execution_ms))
    }

    /// Mean of analysis + scheduling + execution per task.
    pub fn mean_total_ms(&self) -> f64 {
        mean(&self.col(|r| r.analysis_ms + r.schedule_ms + r.execution_ms))
    }
}

pub fn link_of(cfg: &BenchConfig) -> LinkModel {
    LinkModel {
        latency_ms: cfg.link_latency_ms,
        bandwidth_mb_s: cfg.link_bandwidth_mb_s,
    }
}

/// `(count, bytes)` pairs: every count at the base size, then every size
/// with a single object.
pub fn grid(cfg: &BenchConfig) -> Vec<(usize, usize)> {
    let mut g: Vec<(usize, usize)> = cfg.object_counts.iter().map(|&c| (c, cfg.object_bytes)).collect();
    for &s in &cfg.object_sizes {
        if !g.contains(&(1, s)) {
            g.push((1, s));
        }
    }
    g
}

/// Runs `tasks` tasks for every grid point on one runtime, submitting the
/// points round-robin so slow drift over the run affects them all alike.
pub fn run_kind(h: &Harness, cfg: &BenchConfig, kind: ParamKind) -> BenchResult<Vec<LifecyclePoint>> {
    let rt = h.runtime_with_link(cfg.workers, cfg.cores, link_of(cfg))?;
    let points = grid(cfg);
    let mut next_id = 0u64;
    let mut payloads = |count: usize, bytes: usize| {
        (0..count)
            .map(|_| {
                next_id += 1;
                make_payload(next_id, bytes)
            })
            .collect::<Vec<_>>()
    };
    // build every parameter first so submission runs back to back and the
    // analysis timings are not skewed by payload preparation
    let mut batches: Vec<(usize, Vec<ParamSpec>)> = Vec::with_capacity(cfg.tasks * points.len());
    for _ in 0..cfg.tasks {
        for (g, &(count, bytes)) in points.iter().enumerate() {
            let params = match kind {
                ParamKind::Object => payloads(count, bytes)
                    .into_iter()
                    .map(|p| ParamSpec::object_in(rt.put_object(p)))
                    .collect(),
                ParamKind::Stream => {
                    let s = rt.create_stream(StreamKind::Object, StreamOptions::default())?;
                    s.publish_all(payloads(count, bytes))?;
                    s.close()?;
                    vec![value(&count), ParamSpec::stream_in(s.handle())]
                }
            };
            batches.push((g, params));
        }
    }
    let method = match kind {
        ParamKind::Object => "lc_objects",
        ParamKind::Stream => "lc_stream",
    };
    let mut point_of = HashMap::new();
    for (g, params) in batches {
        point_of.insert(rt.submit(method, params)?, g);
    }
    rt.barrier();
    let rows = rt.lifecycle().rows;
    rt.shutdown();
    let mut out: Vec<LifecyclePoint> = points
        .iter()
        .map(|&(count, bytes)| LifecyclePoint {
            kind,
            count,
            bytes,
            rows: Vec::new(),
        })
        .collect();
    for r in rows {
        if let Some(&g) = point_of.get(&r.task_id) {
            out[g].rows.push(r);
        }
    }
    if let Some(p) = out.iter().find(|p| p.rows.len() != cfg.tasks) {
        return Err(BenchError::Failed(format!(
            "{kind} x{} of {} bytes: {} of {} tasks completed",
            p.count,
            p.bytes,
            p.rows.len(),
            cfg.tasks
        )));
    }
    Ok(out)
}

pub fn run(h: &Harness, cfg: &BenchConfig) -> BenchResult<Vec<LifecyclePoint>> {
    let mut out = Vec::new();
    for _ in 0..cfg.reps {
        for kind in [ParamKind::Object, ParamKind::Stream] {
            out.extend(run_kind(h, cfg, kind)?);
        }
    }
    Ok(out)
}

/// Mean of a per-point metric over repetitions of the same configuration.
pub fn metric(points: &[LifecyclePoint], kind: ParamKind, count: usize, bytes: usize, f: impl Fn(&LifecyclePoint) -> f64) -> Option<f64> {
    let xs: Vec<f64> = points
        .iter()
        .filter(|p| p.kind == kind && p.count == count && p.bytes == bytes)
        .map(f)
        .collect();
    (!xs.is_empty()).then(|| mean(&xs))
}

/// Largest over smallest median analysis time of the STREAM variant across
/// object counts at the base size.
pub fn stream_analysis_spread(points: &[LifecyclePoint], cfg: &BenchConfig) -> f64 {
    let xs: Vec<f64> = cfg
        .object_counts
        .iter()
        .filter_map(|&c| metric(points, ParamKind::Stream, c, cfg.object_bytes, LifecyclePoint::median_analysis_ms))
        .collect();
    let max = xs.iter().copied().fold(f64::MIN, f64::max);
    let min = xs.iter().copied().fold(f64::MAX, f64::min);
    max / min
}

/// Grid points where the STREAM variant's mean total time beats OBJECT's.
pub fn stream_wins(points: &[LifecyclePoint], cfg: &BenchConfig) -> Vec<(usize, usize)> {
    grid(cfg)
        .into_iter()
        .filter(|&(c, b)| {
            let o = metric(points, ParamKind::Object, c, b, LifecyclePoint::mean_total_ms);
            let s = metric(points, ParamKind::Stream, c, b, LifecyclePoint::mean_total_ms);
            matches!((o, s), (Some(o), Some(s)) if s < o)
        })
        .collect()
}

/// OBJECT total time at count 1 across sizes, smallest size first.
pub fn object_totals_by_size(points: &[LifecyclePoint], cfg: &BenchConfig) -> Vec<f64> {
    let mut sizes = cfg.object_sizes.clone();
    sizes.sort_unstable();
    sizes
        .into_iter()
        .filter_map(|b| metric(points, ParamKind::Object, 1, b, LifecyclePoint::mean_total_ms))
        .collect()
}

pub fn bench(h: &Harness, cfg: &BenchConfig, csv_rows: Option<&mut Vec<(String, LifecycleRow)>>) -> BenchResult<Report> {
    let points = run(h, cfg)?;
    let mut report = Report::new();
    for p in &points {
        let id = format!("{}-n{}-b{}", cfg.config_id, p.count, p.bytes);
        let mode = p.kind.to_string();
        report.push(&id, &mode, "analysis_median", p.median_analysis_ms(), "ms");
        report.push(&id, &mode, "analysis_mean", p.mean_analysis_ms(), "ms");
        report.push(&id, &mode, "schedule_mean", p.mean_schedule_ms(), "ms");
        report.push(&id, &mode, "execution_mean", p.mean_execution_ms(), "ms");
        report.push(&id, &mode, "total_mean", p.mean_total_ms(), "ms");
        report.check(format!("{id} {mode}: all tasks completed"), p.rows.len() == cfg.tasks, "");
    }
    for (c, b) in grid(cfg) {
        let id = format!("{}-n{c}-b{b}", cfg.config_id);
        let o = metric(&points, ParamKind::Object, c, b, LifecyclePoint::mean_total_ms);
        let s = metric(&points, ParamKind::Stream, c, b, LifecyclePoint::mean_total_ms);
        if let (Some(o), Some(s)) = (o, s) {
            report.push(&id, "STREAM", "total_minus_object", s - o, "ms");
        }
    }
    report.push(&cfg.config_id, "STREAM", "analysis_spread", stream_analysis_spread(&points, cfg), "ratio");
    report.push(&cfg.config_id, "STREAM", "crossover_points", stream_wins(&points, cfg).len() as f64, "points");
    if let Some(rows) = csv_rows {
        for p in &points {
            rows.extend(p.rows.iter().map(|r| (format!("{}-n{}-b{}", p.kind, p.count, p.bytes), r.clone())));
        }
    }
    Ok(report)
}
