//! Placement policy. `pick_next` is a pure function of the ready tasks and
//! the resource view, so it can be tested and traced in isolation.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::task::{DataId, TaskId};

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceState {
    pub worker_id: usize,
    pub name: String,
    pub total_cores: u32,
    pub free_cores: u32,
    /// Data ids whose current version lives on this worker.
    pub data_locations: HashSet<DataId>,
    /// Streams whose producer tasks ran (or run) here.
    pub stream_producer_history: HashSet<String>,
}

impl ResourceState {
    pub fn new(worker_id: usize, name: impl Into<String>, cores: u32) -> Self {
        ResourceState {
            worker_id,
            name: name.into(),
            total_cores: cores,
            free_cores: cores,
            data_locations: HashSet::new(),
            stream_producer_history: HashSet::new(),
        }
    }
}

/// Weights of the two locality terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerPolicy {
    pub data_weight: f64,
    pub stream_weight: f64,
}

impl Default for SchedulerPolicy {
    fn default() -> Self {
        SchedulerPolicy {
            data_weight: 1.0,
            stream_weight: 1.0,
        }
    }
}

/// The scheduler's view of one ready task.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Candidate {
    pub task_id: TaskId,
    pub cores: u32,
    pub in_data: Vec<DataId>,
    pub stream_in: Vec<String>,
    pub stream_out: Vec<String>,
    /// Worker to avoid (a retry after a failure there), unless it is the
    /// only one large enough.
    pub avoid: Option<usize>,
}

pub fn locality(c: &Candidate, r: &ResourceState, policy: &SchedulerPolicy) -> f64 {
    let data = c.in_data.iter().filter(|d| r.data_locations.contains(d)).count() as f64;
    let streams = c
        .stream_in
        .iter()
        .filter(|s| r.stream_producer_history.contains(*s))
        .count() as f64;
    policy.data_weight * data + policy.stream_weight * streams
}

/// True when another ready task produces a stream `c` consumes. Such a
/// consumer waits even if the producer does not fit yet, so producers are
/// never starved by their own consumers.
pub fn dominated(c: &Candidate, ready: &[Candidate]) -> bool {
    !c.stream_in.is_empty()
        && ready.iter().any(|p| {
            p.task_id != c.task_id && p.stream_out.iter().any(|s| c.stream_in.contains(s))
        })
}

/// Chooses the next `(task, worker)` placement, or `None` when nothing fits.
/// Order: stream producers before their consumers, then the highest
/// locality score, then the lowest task id, then the lowest worker id.
pub fn pick_next(
    ready: &[Candidate],
    resources: &[ResourceState],
    policy: &SchedulerPolicy,
) -> Option<(TaskId, usize)> {
    let mut best: Option<(f64, TaskId, usize)> = None;
    for c in ready {
        if dominated(c, ready) {
            continue;
        }
        let others_fit = c.avoid.is_some_and(|a| {
            resources
                .iter()
                .any(|r| r.worker_id != a && r.total_cores >= c.cores)
        });
        for r in resources {
            if r.free_cores < c.cores || (others_fit && c.avoid == Some(r.worker_id)) {
                continue;
            }
            let score = locality(c, r, policy);
            let better = match best {
                None => true,
                Some((s, t, w)) => {
                    score > s || (score == s && (c.task_id, r.worker_id) < (t, w))
                }
            };
            if better {
                best = Some((score, c.task_id, r.worker_id));
            }
        }
    }
    best.map(|(_, t, w)| (t, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(id: TaskId) -> Candidate {
        Candidate {
            task_id: id,
            cores: 1,
            ..Default::default()
        }
    }

    #[test]
    fn producer_wins_the_last_slot() {
        let consumer = Candidate {
            stream_in: vec!["s".into()],
            ..cand(1)
        };
        let producer = Candidate {
            stream_out: vec!["s".into()],
            ..cand(2)
        };
        let res = vec![ResourceState::new(0, "w", 1)];
        let p = SchedulerPolicy::default();
        assert_eq!(pick_next(&[consumer, producer], &res, &p), Some((2, 0)));
    }

    #[test]
    fn consumer_prefers_the_producer_history_worker() {
        let consumer = Candidate {
            stream_in: vec!["s".into()],
            ..cand(1)
        };
        let a = {
            let mut r = ResourceState::new(0, "a", 1);
            r.stream_producer_history.insert("s".into());
            r
        };
        let b = ResourceState::new(1, "b", 1);
        let p = SchedulerPolicy::default();
        assert_eq!(pick_next(std::slice::from_ref(&consumer), &[b.clone(), a.clone()], &p), Some((1, 0)));
        assert_eq!(pick_next(&[consumer], &[a, b], &p), Some((1, 0)));
    }

    #[test]
    fn empty_or_unfitting_gives_none() {
        let p = SchedulerPolicy::default();
        let res = vec![ResourceState::new(0, "w", 2)];
        assert_eq!(pick_next(&[], &res, &p), None);
        let big = Candidate { cores: 4, ..cand(1) };
        assert_eq!(pick_next(&[big], &res, &p), None);
    }

    #[test]
    fn fifo_tie_break_and_avoid() {
        let p = SchedulerPolicy::default();
        let res = vec![ResourceState::new(0, "a", 1), ResourceState::new(1, "b", 1)];
        assert_eq!(pick_next(&[cand(5), cand(3)], &res, &p), Some((3, 0)));
        let retry = Candidate {
            avoid: Some(0),
            ..cand(3)
        };
        assert_eq!(pick_next(std::slice::from_ref(&retry), &res, &p), Some((3, 1)));
        // the avoided worker is used when nothing else could ever fit
        assert_eq!(pick_next(&[retry], &res[..1], &p), Some((3, 0)));
    }

    #[test]
    fn data_locality_beats_fifo() {
        let p = SchedulerPolicy::default();
        let mut b = ResourceState::new(1, "b", 1);
        b.data_locations.insert(9);
        let res = vec![ResourceState::new(0, "a", 1), b];
        let reader = Candidate {
            in_data: vec![9],
            ..cand(4)
        };
        assert_eq!(pick_next(&[cand(1), reader], &res, &p), Some((4, 1)));
    }
}
