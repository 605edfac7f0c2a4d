//! Discrete-event list-scheduling simulator used as the reference for the
//! measured benchmarks.
//!
//! Tasks have a release time, a duration, a core demand and dependencies.
//! Whenever time advances to a release or a completion, ready tasks are
//! started in id order on the first worker with enough free cores, the same
//! FIFO first-fit rule the runtime applies when locality does not decide.

use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq)]
pub struct SimTask {
    pub cores: u32,
    pub duration_ms: f64,
    pub release_ms: f64,
    /// Indices of tasks that must finish first.
    pub deps: Vec<usize>,
}

impl SimTask {
    pub fn new(cores: u32, duration_ms: f64) -> Self {
        SimTask {
            cores,
            duration_ms,
            release_ms: 0.0,
            deps: Vec::new(),
        }
    }

    pub fn after(mut self, deps: impl IntoIterator<Item = usize>) -> Self {
        self.deps.extend(deps);
        self
    }

    pub fn released_at(mut self, t: f64) -> Self {
        self.release_ms = t;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub worker: Vec<usize>,
}

impl Schedule {
    pub fn makespan(&self) -> f64 {
        self.end.iter().copied().fold(0.0, f64::max)
    }
}

/// Simulates `tasks` on workers with the given core counts. Panics if a task
/// can never fit or dependencies form a cycle.
pub fn simulate(tasks: &[SimTask], workers: &[u32]) -> Schedule {
    let n = tasks.len();
    let max_cores = workers.iter().copied().max().unwrap_or(0);
    assert!(tasks.iter().all(|t| t.cores <= max_cores), "a task needs more cores than any worker has");
    let mut start = vec![f64::NAN; n];
    let mut end = vec![f64::NAN; n];
    let mut worker = vec![usize::MAX; n];
    let mut free = workers.to_vec();
    let mut running: Vec<usize> = Vec::new();
    let mut pending: BTreeSet<usize> = (0..n).collect();
    let mut now = 0.0f64;
    while !pending.is_empty() || !running.is_empty() {
        // retire everything finishing now
        running.retain(|&i| {
            if end[i] <= now {
                free[worker[i]] += tasks[i].cores;
                false
            } else {
                true
            }
        });
        let ready: Vec<usize> = pending
            .iter()
            .copied()
            .filter(|&i| {
                tasks[i].release_ms <= now && tasks[i].deps.iter().all(|&d| !end[d].is_nan() && end[d] <= now)
            })
            .collect();
        let mut started_zero = false;
        for i in ready {
            if let Some(w) = (0..free.len()).find(|&w| free[w] >= tasks[i].cores) {
                free[w] -= tasks[i].cores;
                start[i] = now;
                end[i] = now + tasks[i].duration_ms;
                worker[i] = w;
                pending.remove(&i);
                running.push(i);
                started_zero |= tasks[i].duration_ms == 0.0;
            }
        }
        if started_zero {
            continue;
        }
        if pending.is_empty() && running.is_empty() {
            break;
        }
        let next_end = running.iter().map(|&i| end[i]).fold(f64::INFINITY, f64::min);
        let next_release = pending
            .iter()
            .map(|&i| tasks[i].release_ms)
            .filter(|&r| r > now)
            .fold(f64::INFINITY, f64::min);
        let next = next_end.min(next_release);
        assert!(next.is_finite(), "dependency cycle or unsatisfiable task");
        now = next;
    }
    Schedule { start, end, worker }
}

/// Shape of the continuous-generation use case.
#[derive(Debug, Clone, PartialEq)]
pub struct Uc1Shape {
    pub num_sims: usize,
    pub num_files: usize,
    pub generation_ms: f64,
    pub process_ms: f64,
    pub merge_ms: f64,
    pub sim_cores: u32,
    pub workers: Vec<u32>,
}

/// Predicted makespans of both variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub pure_ms: f64,
    pub hybrid_ms: f64,
}

impl Prediction {
    pub fn gain(&self) -> f64 {
        (self.pure_ms - self.hybrid_ms) / self.pure_ms
    }
}

fn uc1_graph(s: &Uc1Shape, hybrid: bool) -> Vec<SimTask> {
    let sim_ms = s.num_files as f64 * s.generation_ms;
    let mut tasks: Vec<SimTask> = (0..s.num_sims).map(|_| SimTask::new(s.sim_cores, sim_ms)).collect();
    let mut procs = vec![Vec::new(); s.num_sims];
    for (i, ids) in procs.iter_mut().enumerate() {
        for j in 0..s.num_files {
            let t = SimTask::new(1, s.process_ms);
            let t = if hybrid {
                // element j appears once the simulation has run j + 1 steps
                t.released_at((j + 1) as f64 * s.generation_ms)
            } else {
                t.after([i])
            };
            ids.push(tasks.len());
            tasks.push(t);
        }
    }
    for (i, ids) in procs.into_iter().enumerate() {
        let deps = if hybrid { [ids, vec![i]].concat() } else { ids };
        tasks.push(SimTask::new(1, s.merge_ms).after(deps));
    }
    tasks
}

pub fn uc1(s: &Uc1Shape) -> Prediction {
    Prediction {
        pure_ms: simulate(&uc1_graph(s, false), &s.workers).makespan(),
        hybrid_ms: simulate(&uc1_graph(s, true), &s.workers).makespan(),
    }
}

/// Shape of the iterative-exchange use case.
#[derive(Debug, Clone, PartialEq)]
pub struct Uc2Shape {
    pub computations: usize,
    pub iterations: usize,
    pub init_ms: f64,
    pub iteration_ms: f64,
    /// Duration of the synchronizing exchange task of the pure variant.
    pub exchange_ms: f64,
    pub workers: Vec<u32>,
}

pub fn uc2(s: &Uc2Shape) -> Prediction {
    let c = s.computations;
    let mut pure: Vec<SimTask> = (0..c).map(|_| SimTask::new(1, s.init_ms)).collect();
    let mut state: Vec<usize> = (0..c).collect();
    for _ in 0..s.iterations {
        let computes: Vec<usize> = state
            .iter()
            .map(|&d| {
                pure.push(SimTask::new(1, s.iteration_ms).after([d]));
                pure.len() - 1
            })
            .collect();
        pure.push(SimTask::new(1, s.exchange_ms).after(computes));
        state = vec![pure.len() - 1; c];
    }
    let hybrid: Vec<SimTask> = (0..c)
        .map(|_| SimTask::new(1, s.init_ms + s.iterations as f64 * s.iteration_ms))
        .collect();
    Prediction {
        pure_ms: simulate(&pure, &s.workers).makespan(),
        hybrid_ms: simulate(&hybrid, &s.workers).makespan(),
    }
}

/// Longest dependency chain ignoring resources: no schedule beats it.
pub fn critical_path(tasks: &[SimTask]) -> f64 {
    let mut finish = vec![f64::NAN; tasks.len()];
    fn visit(i: usize, tasks: &[SimTask], finish: &mut [f64]) -> f64 {
        if finish[i].is_nan() {
            let ready = tasks[i]
                .deps
                .iter()
                .map(|&d| visit(d, tasks, finish))
                .fold(tasks[i].release_ms, f64::max);
            finish[i] = ready + tasks[i].duration_ms;
        }
        finish[i]
    }
    (0..tasks.len()).map(|i| visit(i, tasks, &mut finish)).fold(0.0, f64::max)
}

pub fn uc1_hybrid_lower_bound(s: &Uc1Shape) -> f64 {
    critical_path(&uc1_graph(s, true))
}
