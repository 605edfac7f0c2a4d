//! Continuous generation: a simulation emits files that are each processed
//! and finally merged. The pure variant processes the files after the
//! simulation ends; the hybrid one streams them and processes each as soon
//! as it appears.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use hybridflow_core::runtime::{ParamSpec, Runtime};
use hybridflow_core::stream::{DistroStream, StreamOptions};
use hybridflow_core::types::StreamKind;

use crate::config::{BenchConfig, Mode};
use crate::gain::GainReport;
use crate::harness::{BenchError, BenchResult, Harness};
use crate::methods::{value, MergeSummary, SimArgs};
use crate::oracle::{self, Prediction, Uc1Shape};
use crate::report::{mean, Report};
use crate::work::elapsed_ms;

#[derive(Debug, Clone)]
pub struct Uc1Run {
    pub makespan_ms: f64,
    pub merged: Vec<MergeSummary>,
}

impl Uc1Run {
    /// Every element of every simulation reached its merge exactly once.
    pub fn conserved(&self, shape: &Uc1Shape) -> bool {
        self.merged.len() == shape.num_sims
            && self.merged.iter().enumerate().all(|(i, m)| {
                let first = (i * shape.num_files) as u64;
                m.ids.iter().copied().eq(first..first + shape.num_files as u64)
            })
    }
}

pub fn shape_of(cfg: &BenchConfig) -> Uc1Shape {
    Uc1Shape {
        num_sims: cfg.num_sims,
        num_files: cfg.num_files,
        generation_ms: cfg.generation_time_ms,
        process_ms: cfg.process_time_ms,
        merge_ms: cfg.merge_time_ms,
        sim_cores: cfg.sim_cores,
        workers: vec![cfg.cores; cfg.workers],
    }
}

fn uniform_cores(shape: &Uc1Shape) -> BenchResult<u32> {
    match shape.workers.as_slice() {
        [first, rest @ ..] if rest.iter().all(|c| c == first) => Ok(*first),
        _ => Err(BenchError::Failed("workers must all have the same core count".into())),
    }
}

fn sim_args(shape: &Uc1Shape, sim: usize, payload_bytes: usize) -> SimArgs {
    SimArgs {
        first_id: (sim * shape.num_files) as u64,
        elements: shape.num_files,
        generation_ms: shape.generation_ms,
        payload_bytes,
    }
}

fn submit_process(rt: &Runtime, shape: &Uc1Shape, file: PathBuf) -> BenchResult<u64> {
    let f = rt.register_file(file);
    let out = rt.new_object();
    rt.submit(
        "uc1_process",
        vec![ParamSpec::file_in(f), value(&shape.process_ms), ParamSpec::object_out(out)],
    )?;
    Ok(out)
}

fn submit_merge(rt: &Runtime, shape: &Uc1Shape, parts: &[u64]) -> BenchResult<u64> {
    let out = rt.new_object();
    let mut params = vec![value(&shape.merge_ms), ParamSpec::object_out(out)];
    params.extend(parts.iter().map(|&p| ParamSpec::object_in(p)));
    rt.submit("uc1_merge", params)?;
    Ok(out)
}

fn run_pure(rt: &Runtime, shape: &Uc1Shape, payload_bytes: usize, dir: &std::path::Path) -> BenchResult<Vec<u64>> {
    let mut merges = Vec::new();
    for sim in 0..shape.num_sims {
        let args = sim_args(shape, sim, payload_bytes);
        let files: Vec<PathBuf> = (0..shape.num_files)
            .map(|j| dir.join(format!("elem-{:06}.bin", args.first_id + j as u64)))
            .collect();
        let ids: Vec<u64> = files.iter().map(|p| rt.register_file(p.clone())).collect();
        let mut params = vec![value(&args)];
        params.extend(ids.iter().map(|&d| ParamSpec::file_out(d)));
        rt.submit_with("uc1_sim_files", params, shape.sim_cores)?;
        let mut parts = Vec::new();
        for &d in &ids {
            let out = rt.new_object();
            rt.submit(
                "uc1_process",
                vec![ParamSpec::file_in(d), value(&shape.process_ms), ParamSpec::object_out(out)],
            )?;
            parts.push(out);
        }
        merges.push(submit_merge(rt, shape, &parts)?);
    }
    Ok(merges)
}

fn run_hybrid(rt: &Runtime, shape: &Uc1Shape, payload_bytes: usize, dir: &std::path::Path) -> BenchResult<Vec<u64>> {
    let mut streams: Vec<(DistroStream, Vec<u64>, bool)> = Vec::new();
    for sim in 0..shape.num_sims {
        let base = dir.join(format!("sim{sim}"));
        std::fs::create_dir_all(&base)?;
        let s = rt.create_stream(
            StreamKind::File,
            StreamOptions {
                base_dir: Some(base),
                ..Default::default()
            },
        )?;
        rt.submit_with(
            "uc1_sim_stream",
            vec![value(&sim_args(shape, sim, payload_bytes)), ParamSpec::stream_out(s.handle())],
            shape.sim_cores,
        )?;
        streams.push((s, Vec::new(), false));
    }
    let wait = Duration::from_millis((50 / shape.num_sims as u64).max(1));
    while streams.iter().any(|(_, _, drained)| !drained) {
        for (s, parts, drained) in streams.iter_mut().filter(|(_, _, d)| !d) {
            let o = s.poll_outcome(Some(wait))?;
            for e in o.elements {
                parts.push(submit_process(rt, shape, e.path())?);
            }
            *drained = o.drained;
        }
    }
    streams.iter().map(|(_, parts, _)| submit_merge(rt, shape, parts)).collect()
}

/// One timed run on a fresh runtime.
pub fn run_once(h: &Harness, shape: &Uc1Shape, payload_bytes: usize, mode: Mode) -> BenchResult<Uc1Run> {
    let rt = h.runtime(shape.workers.len(), uniform_cores(shape)?)?;
    let dir = tempfile::tempdir()?;
    let t0 = Instant::now();
    let merges = match mode {
        Mode::PureTask => run_pure(&rt, shape, payload_bytes, dir.path())?,
        Mode::Hybrid => run_hybrid(&rt, shape, payload_bytes, dir.path())?,
    };
    let merged = merges
        .into_iter()
        .map(|m| rt.wait_on_as::<MergeSummary>(m))
        .collect::<Result<Vec<_>, _>>()?;
    let makespan_ms = elapsed_ms(t0);
    rt.shutdown();
    Ok(Uc1Run { makespan_ms, merged })
}

/// Repeated paired runs of both variants.
#[derive(Debug, Clone)]
pub struct Uc1Outcome {
    pub shape: Uc1Shape,
    pub pure_ms: Vec<f64>,
    pub hybrid_ms: Vec<f64>,
    pub prediction: Prediction,
    pub lower_bound_ms: f64,
    pub conserved: bool,
}

impl Uc1Outcome {
    pub fn gain(&self) -> GainReport {
        GainReport::new(mean(&self.pure_ms), mean(&self.hybrid_ms)).expect("positive makespan")
    }

    pub fn hybrid_wins_every_rep(&self) -> bool {
        self.pure_ms.iter().zip(&self.hybrid_ms).all(|(p, h)| h < p)
    }

    pub fn respects_lower_bound(&self) -> bool {
        self.hybrid_ms.iter().all(|&h| h >= self.lower_bound_ms)
    }
}

pub fn run(h: &Harness, shape: &Uc1Shape, payload_bytes: usize, reps: usize) -> BenchResult<Uc1Outcome> {
    let mut out = Uc1Outcome {
        shape: shape.clone(),
        pure_ms: Vec::new(),
        hybrid_ms: Vec::new(),
        prediction: oracle::uc1(shape),
        lower_bound_ms: oracle::uc1_hybrid_lower_bound(shape),
        conserved: true,
    };
    for _ in 0..reps {
        for mode in [Mode::PureTask, Mode::Hybrid] {
            let r = run_once(h, shape, payload_bytes, mode)?;
            out.conserved &= r.conserved(shape);
            match mode {
                Mode::PureTask => out.pure_ms.push(r.makespan_ms),
                Mode::Hybrid => out.hybrid_ms.push(r.makespan_ms),
            }
        }
    }
    Ok(out)
}

fn record(report: &mut Report, id: &str, o: &Uc1Outcome) {
    for (mode, xs) in [(Mode::PureTask, &o.pure_ms), (Mode::Hybrid, &o.hybrid_ms)] {
        for x in xs.iter() {
            report.push(id, mode, "makespan", *x, "ms");
        }
        report.push(id, mode, "makespan_mean", mean(xs), "ms");
    }
    report.push(id, Mode::PureTask, "predicted_makespan", o.prediction.pure_ms, "ms");
    report.push(id, Mode::Hybrid, "predicted_makespan", o.prediction.hybrid_ms, "ms");
    report.push(id, Mode::Hybrid, "gain", o.gain().gain, "fraction");
    report.push(id, Mode::Hybrid, "predicted_gain", o.prediction.gain(), "fraction");
    report.check(format!("{id}: elements conserved"), o.conserved, "every element merged exactly once");
    report.check(
        format!("{id}: hybrid above critical path"),
        o.respects_lower_bound(),
        format!("lower bound {:.1} ms", o.lower_bound_ms),
    );
}

/// Generation-time and process-time sweeps used for the trend checks.
pub fn sweeps(cfg: &BenchConfig) -> Vec<(String, Uc1Shape)> {
    let mut out = Vec::new();
    for &g in &cfg.generation_sweep_ms {
        out.push((
            format!("{}-gen{g}", cfg.config_id),
            Uc1Shape {
                num_sims: 1,
                num_files: cfg.generation_sweep_files,
                generation_ms: g,
                process_ms: cfg.generation_sweep_process_ms,
                merge_ms: 0.0,
                sim_cores: 1,
                workers: vec![1; cfg.generation_sweep_slots],
            },
        ));
    }
    for &p in &cfg.process_sweep_ms {
        out.push((
            format!("{}-proc{p}", cfg.config_id),
            Uc1Shape {
                num_sims: 1,
                num_files: cfg.process_sweep_files,
                generation_ms: cfg.process_sweep_generation_ms,
                process_ms: p,
                merge_ms: 0.0,
                sim_cores: 1,
                workers: vec![1; cfg.process_sweep_slots],
            },
        ));
    }
    out
}

pub fn bench(h: &Harness, cfg: &BenchConfig) -> BenchResult<Report> {
    let mut report = Report::new();
    let shape = shape_of(cfg);
    if cfg.mode.is_some() {
        for mode in cfg.modes() {
            for _ in 0..cfg.reps {
                let r = run_once(h, &shape, cfg.payload_bytes, mode)?;
                report.push(&cfg.config_id, mode, "makespan", r.makespan_ms, "ms");
                report.check(format!("{}: elements conserved", cfg.config_id), r.conserved(&shape), "");
            }
        }
        return Ok(report);
    }
    let main = run(h, &shape, cfg.payload_bytes, cfg.reps)?;
    record(&mut report, &cfg.config_id, &main);
    for (id, s) in sweeps(cfg) {
        let o = run(h, &s, cfg.payload_bytes, cfg.reps)?;
        record(&mut report, &id, &o);
    }
    Ok(report)
}
