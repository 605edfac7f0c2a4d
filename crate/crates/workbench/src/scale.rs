//! N writers and M readers sharing one stream. Reports completion time,
//! efficiency against the ideal split, and how elements spread over readers.

use std::collections::HashSet;
use std::time::Instant;

use hybridflow_core::runtime::ParamSpec;
use hybridflow_core::stream::StreamOptions;
use hybridflow_core::types::StreamKind;

use crate::config::BenchConfig;
use crate::gain::BalanceReport;
use crate::harness::{BenchResult, Harness};
use crate::methods::{value, FeedArgs, ReaderArgs, ReaderOut};
use crate::report::{mean, Report};
use crate::work::elapsed_ms;

#[derive(Debug, Clone)]
pub struct ScaleRun {
    pub writers: usize,
    pub readers: usize,
    pub elements: usize,
    pub process_ms: f64,
    pub time_ms: f64,
    /// Readers in submission order.
    pub outputs: Vec<ReaderOut>,
}

impl ScaleRun {
    pub fn balance(&self) -> BalanceReport {
        BalanceReport::from_counts(self.outputs.iter().map(|o| o.ids.len()).collect())
    }

    /// The reader that received the first element.
    pub fn first_reader(&self) -> Option<usize> {
        (0..self.outputs.len())
            .filter(|&i| self.outputs[i].first_receive_us.is_some())
            .min_by_key(|&i| self.outputs[i].first_receive_us)
    }

    pub fn first_reader_share(&self) -> f64 {
        self.first_reader().map_or(0.0, |i| self.balance().fractions[i])
    }

    pub fn ideal_ms(&self) -> f64 {
        self.elements as f64 * self.process_ms / self.readers as f64
    }

    pub fn efficiency(&self) -> f64 {
        self.ideal_ms() / self.time_ms
    }

    /// Every element processed by exactly one reader.
    pub fn conserved(&self) -> bool {
        let ids: Vec<u64> = self.outputs.iter().flat_map(|o| o.ids.iter().copied()).collect();
        let unique: HashSet<u64> = ids.iter().copied().collect();
        ids.len() == self.elements && unique.len() == self.elements && unique.iter().all(|&i| (i as usize) < self.elements)
    }
}

pub fn run_once(h: &Harness, cfg: &BenchConfig, writers: usize, readers: usize) -> BenchResult<ScaleRun> {
    let cores = cfg.cores.max((writers + readers) as u32);
    let rt = h.runtime(cfg.workers, cores)?;
    let t0 = Instant::now();
    let s = rt.create_stream(StreamKind::Object, StreamOptions::default())?;
    let per = cfg.elements / writers;
    for w in 0..writers {
        let count = if w + 1 == writers { cfg.elements - per * w } else { per };
        let args = FeedArgs {
            first_id: (per * w) as u64,
            count,
            payload_bytes: cfg.payload_bytes,
            gap_ms: cfg.generation_time_ms,
        };
        rt.submit("feed", vec![value(&args), ParamSpec::stream_out(s.handle())])?;
    }
    let args = ReaderArgs {
        process_ms: cfg.process_time_ms,
        poll_cap: cfg.poll_cap,
    };
    let outs: Vec<u64> = (0..readers)
        .map(|_| {
            let o = rt.new_object();
            rt.submit("scale_reader", vec![value(&args), ParamSpec::stream_in(s.handle()), ParamSpec::object_out(o)])
                .map(|_| o)
        })
        .collect::<Result<_, _>>()?;
    let outputs = outs
        .into_iter()
        .map(|o| rt.wait_on_as::<ReaderOut>(o))
        .collect::<Result<Vec<_>, _>>()?;
    let time_ms = elapsed_ms(t0);
    rt.shutdown();
    Ok(ScaleRun {
        writers,
        readers,
        elements: cfg.elements,
        process_ms: cfg.process_time_ms,
        time_ms,
        outputs,
    })
}

#[derive(Debug, Clone)]
pub struct ScalePoint {
    pub writers: usize,
    pub readers: usize,
    pub runs: Vec<ScaleRun>,
}

impl ScalePoint {
    pub fn mean_time_ms(&self) -> f64 {
        mean(&self.runs.iter().map(|r| r.time_ms).collect::<Vec<_>>())
    }

    pub fn mean_first_share(&self) -> f64 {
        mean(&self.runs.iter().map(ScaleRun::first_reader_share).collect::<Vec<_>>())
    }

    pub fn conserved(&self) -> bool {
        self.runs.iter().all(ScaleRun::conserved)
    }
}

pub fn run(h: &Harness, cfg: &BenchConfig) -> BenchResult<Vec<ScalePoint>> {
    let mut points = Vec::new();
    for &w in &cfg.writers {
        for &r in &cfg.readers {
            let runs = (0..cfg.reps).map(|_| run_once(h, cfg, w, r)).collect::<Result<_, _>>()?;
            points.push(ScalePoint {
                writers: w,
                readers: r,
                runs,
            });
        }
    }
    Ok(points)
}

/// Time with one reader over time with `readers`, for the given writer count.
pub fn speedup(points: &[ScalePoint], writers: usize, readers: usize) -> Option<f64> {
    let t = |r: usize| points.iter().find(|p| p.writers == writers && p.readers == r).map(ScalePoint::mean_time_ms);
    Some(t(1)? / t(readers)?)
}

pub fn bench(h: &Harness, cfg: &BenchConfig) -> BenchResult<Report> {
    let mut report = Report::new();
    let points = run(h, cfg)?;
    for p in &points {
        let id = format!("{}-w{}-r{}", cfg.config_id, p.writers, p.readers);
        for r in &p.runs {
            report.push(&id, "HYBRID", "time", r.time_ms, "ms");
            report.push(&id, "HYBRID", "efficiency", r.efficiency(), "fraction");
            report.push(&id, "HYBRID", "first_reader_share", r.first_reader_share(), "fraction");
            for (i, (c, f)) in r.balance().counts.iter().zip(r.balance().fractions).enumerate() {
                report.push(&id, "HYBRID", &format!("reader{i}_elements"), *c as f64, "elements");
                report.push(&id, "HYBRID", &format!("reader{i}_share"), f, "fraction");
            }
        }
        report.push(&id, "HYBRID", "time_mean", p.mean_time_ms(), "ms");
        if let Some(s) = speedup(&points, p.writers, p.readers) {
            report.push(&id, "HYBRID", "speedup", s, "x");
        }
        report.check(format!("{id}: every element read exactly once"), p.conserved(), "");
    }
    Ok(report)
}
