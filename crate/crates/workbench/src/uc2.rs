//! Iterative computations that exchange state. The pure variant joins all
//! computations in an exchange task after every iteration; the hybrid one
//! runs each computation as a single task publishing its state to a stream
//! and reading the others' without waiting.

use std::time::Instant;

use hybridflow_core::runtime::{ParamSpec, Runtime};
use hybridflow_core::stream::StreamOptions;
use hybridflow_core::types::StreamKind;

use crate::config::{BenchConfig, Mode};
use crate::gain::GainReport;
use crate::harness::{BenchResult, Harness};
use crate::methods::{value, CompState, HybridCompArgs};
use crate::oracle::{self, Prediction, Uc2Shape};
use crate::report::{mean, Report};
use crate::work::elapsed_ms;

pub fn shape_of(cfg: &BenchConfig, iterations: usize) -> Uc2Shape {
    Uc2Shape {
        computations: cfg.computations,
        iterations,
        init_ms: cfg.init_time_ms,
        iteration_ms: cfg.iteration_time_ms,
        exchange_ms: cfg.exchange_time_ms,
        workers: vec![cfg.cores; cfg.workers],
    }
}

fn run_pure(rt: &Runtime, s: &Uc2Shape) -> BenchResult<Vec<u64>> {
    let states: Vec<u64> = (0..s.computations).map(|_| rt.new_object()).collect();
    for (c, &d) in states.iter().enumerate() {
        rt.submit("uc2_init", vec![value(&(c, s.init_ms)), ParamSpec::object_out(d)])?;
    }
    for _ in 0..s.iterations {
        for &d in &states {
            rt.submit("uc2_iterate", vec![value(&s.iteration_ms), ParamSpec::object_inout(d)])?;
        }
        let mut params = vec![value(&s.exchange_ms)];
        params.extend(states.iter().map(|&d| ParamSpec::object_inout(d)));
        rt.submit("uc2_exchange", params)?;
    }
    Ok(states)
}

fn run_hybrid(rt: &Runtime, s: &Uc2Shape) -> BenchResult<Vec<u64>> {
    let streams = (0..s.computations)
        .map(|_| rt.create_stream(StreamKind::Object, StreamOptions::default()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut states = Vec::new();
    for c in 0..s.computations {
        let out = rt.new_object();
        let args = HybridCompArgs {
            comp: c,
            iterations: s.iterations,
            init_ms: s.init_ms,
            iteration_ms: s.iteration_ms,
        };
        let mut params = vec![value(&args), ParamSpec::object_out(out), ParamSpec::stream_out(streams[c].handle())];
        params.extend(
            streams
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != c)
                .map(|(_, st)| ParamSpec::stream_in(st.handle())),
        );
        rt.submit("uc2_hybrid", params)?;
        states.push(out);
    }
    Ok(states)
}

#[derive(Debug, Clone)]
pub struct Uc2Run {
    pub makespan_ms: f64,
    pub states: Vec<CompState>,
}

impl Uc2Run {
    /// Every computation completed every iteration.
    pub fn complete(&self, s: &Uc2Shape) -> bool {
        self.states.len() == s.computations && self.states.iter().all(|st| st.iteration == s.iterations)
    }
}

pub fn run_once(h: &Harness, s: &Uc2Shape, mode: Mode) -> BenchResult<Uc2Run> {
    let rt = h.runtime(s.workers.len(), s.workers[0])?;
    let t0 = Instant::now();
    let outs = match mode {
        Mode::PureTask => run_pure(&rt, s)?,
        Mode::Hybrid => run_hybrid(&rt, s)?,
    };
    let states = outs
        .into_iter()
        .map(|d| rt.wait_on_as::<CompState>(d))
        .collect::<Result<Vec<_>, _>>()?;
    let makespan_ms = elapsed_ms(t0);
    rt.shutdown();
    Ok(Uc2Run { makespan_ms, states })
}

#[derive(Debug, Clone)]
pub struct Uc2Point {
    pub iterations: usize,
    pub pure_ms: Vec<f64>,
    pub hybrid_ms: Vec<f64>,
    pub prediction: Prediction,
    pub complete: bool,
}

impl Uc2Point {
    pub fn gain(&self) -> GainReport {
        GainReport::new(mean(&self.pure_ms), mean(&self.hybrid_ms)).expect("positive makespan")
    }
}

/// Both variants over every configured iteration count.
pub fn run(h: &Harness, cfg: &BenchConfig) -> BenchResult<Vec<Uc2Point>> {
    let mut points = Vec::new();
    for &it in &cfg.iterations {
        let s = shape_of(cfg, it);
        let mut p = Uc2Point {
            iterations: it,
            pure_ms: Vec::new(),
            hybrid_ms: Vec::new(),
            prediction: oracle::uc2(&s),
            complete: true,
        };
        for _ in 0..cfg.reps {
            for mode in [Mode::PureTask, Mode::Hybrid] {
                let r = run_once(h, &s, mode)?;
                p.complete &= r.complete(&s);
                match mode {
                    Mode::PureTask => p.pure_ms.push(r.makespan_ms),
                    Mode::Hybrid => p.hybrid_ms.push(r.makespan_ms),
                }
            }
        }
        points.push(p);
    }
    Ok(points)
}

/// Plateau shape: the late change in gain is smaller than the early one.
pub fn plateaus(points: &[Uc2Point]) -> Option<bool> {
    let g = |it: usize| points.iter().find(|p| p.iterations == it).map(|p| p.gain().gain);
    Some((g(64)? - g(16)?).abs() < (g(4)? - g(1)?).abs())
}

pub fn bench(h: &Harness, cfg: &BenchConfig) -> BenchResult<Report> {
    let mut report = Report::new();
    for p in run(h, cfg)? {
        let id = format!("{}-it{}", cfg.config_id, p.iterations);
        for (mode, xs) in [(Mode::PureTask, &p.pure_ms), (Mode::Hybrid, &p.hybrid_ms)] {
            for x in xs.iter() {
                report.push(&id, mode, "makespan", *x, "ms");
            }
            report.push(&id, mode, "makespan_mean", mean(xs), "ms");
        }
        report.push(&id, Mode::Hybrid, "gain", p.gain().gain, "fraction");
        report.push(&id, Mode::Hybrid, "predicted_gain", p.prediction.gain(), "fraction");
        report.check(format!("{id}: all iterations completed"), p.complete, "");
    }
    Ok(report)
}
