//! Dependency analysis. Data parameters are versioned: a reader depends on
//! the last writer of the version it reads (read-after-write); later writers
//! create new versions instead of waiting for readers. Stream parameters
//! never create edges and are only recorded as stream links.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use super::task::{DataId, Direction, ParamRef, ParamSpec, ParamType, TaskId, TaskState};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnnotationError {
    #[error("parameter {0}: STREAM parameters cannot be INOUT")]
    StreamInOut(usize),
    #[error("parameter {0}: {1} parameter does not reference {2}")]
    Mismatch(usize, &'static str, &'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub from: TaskId,
    pub to: TaskId,
    pub data: DataId,
}

/// How one data parameter of a task is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub param: usize,
    pub data: DataId,
    pub read: Option<u32>,
    pub write: Option<u32>,
}

#[derive(Debug, Default, Clone)]
pub struct DependencyGraph {
    nodes: BTreeSet<TaskId>,
    edges: BTreeSet<Edge>,
    stream_writers: Vec<(TaskId, String)>,
    stream_readers: Vec<(TaskId, String)>,
    last_writer: HashMap<DataId, TaskId>,
    versions: HashMap<DataId, u32>,
    preds: HashMap<TaskId, BTreeSet<TaskId>>,
    succs: HashMap<TaskId, BTreeSet<TaskId>>,
}

/// Checks annotations without touching any graph.
pub fn validate(params: &[ParamSpec]) -> Result<(), AnnotationError> {
    for (i, p) in params.iter().enumerate() {
        match (p.ptype, &p.value) {
            (ParamType::Stream, _) if p.direction == Direction::InOut => {
                return Err(AnnotationError::StreamInOut(i))
            }
            (ParamType::Stream, ParamRef::Stream(_)) => {}
            (ParamType::Stream, _) => return Err(AnnotationError::Mismatch(i, "STREAM", "a stream")),
            (_, ParamRef::Stream(_)) => return Err(AnnotationError::Mismatch(i, "data", "a data id")),
            (ParamType::File, ParamRef::Value(_)) => return Err(AnnotationError::Mismatch(i, "FILE", "a data id")),
            (ParamType::Object, ParamRef::Value(_)) if p.direction != Direction::In => {
                return Err(AnnotationError::Mismatch(i, "literal", "an IN value"))
            }
            _ => {}
        }
    }
    Ok(())
}

impl DependencyGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a task. Literal values must already have been turned into data
    /// ids. Reads are resolved before the task's own writes, so a task
    /// never depends on itself.
    pub fn add_task(&mut self, id: TaskId, params: &[ParamSpec]) -> Result<Vec<Access>, AnnotationError> {
        validate(params)?;
        if params.iter().any(|p| matches!(p.value, ParamRef::Value(_))) {
            return Err(AnnotationError::Mismatch(0, "literal", "a registered data id"));
        }
        self.nodes.insert(id);
        self.preds.entry(id).or_default();
        self.succs.entry(id).or_default();
        let mut accesses = Vec::new();
        for (i, p) in params.iter().enumerate() {
            match &p.value {
                ParamRef::Stream(h) => {
                    let list = if p.direction == Direction::Out {
                        &mut self.stream_writers
                    } else {
                        &mut self.stream_readers
                    };
                    list.push((id, h.id.clone()));
                }
                ParamRef::Data(d) => {
                    let read = p.direction.reads().then(|| self.versions.get(d).copied().unwrap_or(0));
                    if p.direction.reads() {
                        if let Some(&w) = self.last_writer.get(d) {
                            self.edges.insert(Edge { from: w, to: id, data: *d });
                            self.preds.entry(id).or_default().insert(w);
                            self.succs.entry(w).or_default().insert(id);
                        }
                    }
                    accesses.push(Access {
                        param: i,
                        data: *d,
                        read,
                        write: None,
                    });
                }
                ParamRef::Value(_) => unreachable!("rejected above"),
            }
        }
        for a in accesses.iter_mut() {
            if params[a.param].direction.writes() {
                let v = self.versions.entry(a.data).or_insert(0);
                *v += 1;
                a.write = Some(*v);
                self.last_writer.insert(a.data, id);
            }
        }
        Ok(accesses)
    }

    pub fn nodes(&self) -> &BTreeSet<TaskId> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn stream_writers(&self) -> &[(TaskId, String)] {
        &self.stream_writers
    }

    pub fn stream_readers(&self) -> &[(TaskId, String)] {
        &self.stream_readers
    }

    pub fn last_writer(&self, d: DataId) -> Option<TaskId> {
        self.last_writer.get(&d).copied()
    }

    /// Current version of `d` (0 if never written by a task).
    pub fn version(&self, d: DataId) -> u32 {
        self.versions.get(&d).copied().unwrap_or(0)
    }

    pub fn predecessors(&self, id: TaskId) -> impl Iterator<Item = TaskId> + '_ {
        self.preds.get(&id).into_iter().flatten().copied()
    }

    pub fn successors(&self, id: TaskId) -> impl Iterator<Item = TaskId> + '_ {
        self.succs.get(&id).into_iter().flatten().copied()
    }

    /// Tasks not yet started whose predecessors are all DONE.
    pub fn ready_set(&self, state: impl Fn(TaskId) -> TaskState) -> BTreeSet<TaskId> {
        self.nodes
            .iter()
            .copied()
            .filter(|&t| matches!(state(t), TaskState::Registered | TaskState::Ready))
            .filter(|&t| self.predecessors(t).all(|p| state(p) == TaskState::Done))
            .collect()
    }

    /// Every task reachable from `id` along data edges.
    pub fn descendants(&self, id: TaskId) -> BTreeSet<TaskId> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<TaskId> = self.successors(id).collect();
        while let Some(t) = stack.pop() {
            if seen.insert(t) {
                stack.extend(self.successors(t));
            }
        }
        seen
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::StreamHandle;
    use crate::types::{ConsumerMode, StreamKind};

    fn handle(id: &str) -> StreamHandle {
        StreamHandle {
            id: id.into(),
            alias: None,
            kind: StreamKind::Object,
            base_dir: None,
            consumer_mode: ConsumerMode::ExactlyOnce,
            group: None,
        }
    }

    #[test]
    fn file_writer_then_reader_is_one_edge() {
        let mut g = DependencyGraph::new();
        g.add_task(1, &[ParamSpec::file_out(7)]).unwrap();
        g.add_task(2, &[ParamSpec::file_in(7)]).unwrap();
        assert_eq!(g.edges().iter().copied().collect::<Vec<_>>(), vec![Edge { from: 1, to: 2, data: 7 }]);
    }

    #[test]
    fn streams_link_without_edges() {
        let mut g = DependencyGraph::new();
        let s = handle("s");
        g.add_task(1, &[ParamSpec::stream_out(&s)]).unwrap();
        g.add_task(2, &[ParamSpec::stream_in(&s)]).unwrap();
        assert!(g.edges().is_empty());
        assert_eq!(g.stream_writers(), &[(1, "s".to_string())]);
        assert_eq!(g.stream_readers(), &[(2, "s".to_string())]);
        assert_eq!(g.ready_set(|_| TaskState::Registered).len(), 2);
    }

    #[test]
    fn stream_inout_is_rejected() {
        let mut g = DependencyGraph::new();
        let p = ParamSpec::new(ParamType::Stream, Direction::InOut, ParamRef::Stream(handle("s")));
        assert_eq!(g.add_task(1, &[p]), Err(AnnotationError::StreamInOut(0)));
        assert!(g.nodes().is_empty());
    }

    #[test]
    fn inout_chains_and_versions() {
        let mut g = DependencyGraph::new();
        let a = g.add_task(1, &[ParamSpec::object_out(1)]).unwrap();
        assert_eq!((a[0].read, a[0].write), (None, Some(1)));
        let b = g.add_task(2, &[ParamSpec::object_inout(1)]).unwrap();
        assert_eq!((b[0].read, b[0].write), (Some(1), Some(2)));
        let c = g.add_task(3, &[ParamSpec::object_in(1)]).unwrap();
        assert_eq!(c[0].read, Some(2));
        let edges: Vec<_> = g.edges().iter().map(|e| (e.from, e.to)).collect();
        assert_eq!(edges, vec![(1, 2), (2, 3)]);
        assert_eq!(g.descendants(1).into_iter().collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn ready_set_follows_completion() {
        let mut g = DependencyGraph::new();
        g.add_task(1, &[ParamSpec::object_out(1)]).unwrap();
        g.add_task(2, &[ParamSpec::object_in(1)]).unwrap();
        let ready = g.ready_set(|_| TaskState::Registered);
        assert_eq!(ready.into_iter().collect::<Vec<_>>(), vec![1]);
        let ready = g.ready_set(|t| if t == 1 { TaskState::Done } else { TaskState::Registered });
        assert_eq!(ready.into_iter().collect::<Vec<_>>(), vec![2]);
    }
}
