//! An external sensor feeds a one-to-many stream read by several filter
//! tasks; their output is merged into one stream, extracted and reduced.

use std::sync::Arc;
use std::time::Instant;

use hybridflow_core::client::Client;
use hybridflow_core::runtime::ParamSpec;
use hybridflow_core::stream::{DistroStream, StreamOptions};
use hybridflow_core::types::{ConsumerMode, StreamKind};

use crate::config::BenchConfig;
use crate::harness::{BenchError, BenchResult, Harness};
use crate::methods::{value, FilterArgs, Tally};
use crate::report::Report;
use crate::work::{elapsed_ms, make_payload, sleep_until};

#[derive(Debug, Clone)]
pub struct Uc3Run {
    pub payloads: usize,
    pub tally: Tally,
    pub makespan_ms: f64,
}

impl Uc3Run {
    /// Each payload reached the extract task exactly once.
    pub fn exactly_once(&self) -> bool {
        self.tally.total == self.payloads && self.tally.unique == self.payloads && self.tally.duplicates == 0
    }

    /// Nothing lost; duplicates allowed.
    pub fn at_least_once(&self) -> bool {
        self.tally.unique == self.payloads && self.tally.total >= self.payloads
    }
}

/// Runs the pipeline. With `crash`, the sensor stream is AT_LEAST_ONCE and
/// one filter dies after its first batch.
pub fn run_once(h: &Harness, cfg: &BenchConfig, crash: bool) -> BenchResult<Uc3Run> {
    let rt = h.runtime(cfg.workers, cfg.cores)?;
    let t0 = Instant::now();
    let mode = if crash {
        ConsumerMode::AtLeastOnce
    } else {
        ConsumerMode::ExactlyOnce
    };
    let sensor = rt.create_stream(
        StreamKind::Object,
        StreamOptions {
            consumer_mode: mode,
            ..Default::default()
        },
    )?;
    let filtered = rt.create_stream(StreamKind::Object, StreamOptions::default())?;
    for f in 0..cfg.filters {
        let args = FilterArgs {
            crash: crash && f == 0,
            server: h.addr().to_string(),
        };
        let count = rt.new_object();
        rt.submit(
            "uc3_filter",
            vec![
                value(&args),
                ParamSpec::stream_in(sensor.handle()),
                ParamSpec::stream_out(filtered.handle()),
                ParamSpec::object_out(count),
            ],
        )?;
    }
    let ids = rt.new_object();
    rt.submit("collect_ids", vec![ParamSpec::stream_in(filtered.handle()), ParamSpec::object_out(ids)])?;
    let tally = rt.new_object();
    rt.submit("uc3_reduce", vec![ParamSpec::object_in(ids), ParamSpec::object_out(tally)])?;

    // the sensor is outside the workflow: its own process-level client
    let client = Arc::new(Client::connect(h.addr()).map_err(|e| BenchError::Failed(e.to_string()))?);
    let feed = DistroStream::open(client.clone(), sensor.handle().clone())?;
    let start = Instant::now();
    for j in 0..cfg.payloads {
        sleep_until(start, j as f64 * cfg.sensor_gap_ms);
        feed.publish(make_payload(j as u64, cfg.payload_bytes))?;
    }
    feed.close()?;
    let tally: Tally = rt.wait_on_as(tally)?;
    let makespan_ms = elapsed_ms(t0);
    let _ = client.bye();
    rt.shutdown();
    Ok(Uc3Run {
        payloads: cfg.payloads,
        tally,
        makespan_ms,
    })
}

pub fn bench(h: &Harness, cfg: &BenchConfig) -> BenchResult<Report> {
    let mut report = Report::new();
    for rep in 0..cfg.reps {
        let r = run_once(h, cfg, false)?;
        let id = &cfg.config_id;
        report.push(id, "EXACTLY_ONCE", "makespan", r.makespan_ms, "ms");
        report.push(id, "EXACTLY_ONCE", "extracted", r.tally.total as f64, "elements");
        report.push(id, "EXACTLY_ONCE", "duplicates", r.tally.duplicates as f64, "elements");
        report.check(
            format!("{id} rep {rep}: exactly once end to end"),
            r.exactly_once(),
            format!("{:?} for {} payloads", r.tally, r.payloads),
        );
    }
    if cfg.inject_crash {
        let r = run_once(h, cfg, true)?;
        let id = format!("{}-crash", cfg.config_id);
        report.push(&id, "AT_LEAST_ONCE", "makespan", r.makespan_ms, "ms");
        report.push(&id, "AT_LEAST_ONCE", "extracted", r.tally.total as f64, "elements");
        report.push(&id, "AT_LEAST_ONCE", "duplicates", r.tally.duplicates as f64, "elements");
        report.check(
            format!("{id}: nothing lost after a filter crash"),
            r.at_least_once(),
            format!("{:?} for {} payloads", r.tally, r.payloads),
        );
    }
    Ok(report)
}
