//! Task descriptors and parameter annotations.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::stream::StreamHandle;

pub type TaskId = u64;
pub type DataId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamType {
    Object,
    File,
    Stream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    In,
    Out,
    InOut,
}

impl Direction {
    pub fn reads(self) -> bool {
        matches!(self, Direction::In | Direction::InOut)
    }

    pub fn writes(self) -> bool {
        matches!(self, Direction::Out | Direction::InOut)
    }
}

/// What a parameter refers to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamRef {
    Data(DataId),
    /// A literal IN object, registered as fresh data when the task is
    /// submitted.
    Value(Vec<u8>),
    Stream(StreamHandle),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub ptype: ParamType,
    pub direction: Direction,
    pub value: ParamRef,
}

impl ParamSpec {
    pub fn new(ptype: ParamType, direction: Direction, value: ParamRef) -> Self {
        ParamSpec {
            ptype,
            direction,
            value,
        }
    }

    pub fn object_in(d: DataId) -> Self {
        Self::new(ParamType::Object, Direction::In, ParamRef::Data(d))
    }

    pub fn object_out(d: DataId) -> Self {
        Self::new(ParamType::Object, Direction::Out, ParamRef::Data(d))
    }

    pub fn object_inout(d: DataId) -> Self {
        Self::new(ParamType::Object, Direction::InOut, ParamRef::Data(d))
    }

    pub fn value(bytes: Vec<u8>) -> Self {
        Self::new(ParamType::Object, Direction::In, ParamRef::Value(bytes))
    }

    pub fn file_in(d: DataId) -> Self {
        Self::new(ParamType::File, Direction::In, ParamRef::Data(d))
    }

    pub fn file_out(d: DataId) -> Self {
        Self::new(ParamType::File, Direction::Out, ParamRef::Data(d))
    }

    pub fn file_inout(d: DataId) -> Self {
        Self::new(ParamType::File, Direction::InOut, ParamRef::Data(d))
    }

    pub fn stream_in(h: &StreamHandle) -> Self {
        Self::new(ParamType::Stream, Direction::In, ParamRef::Stream(h.clone()))
    }

    pub fn stream_out(h: &StreamHandle) -> Self {
        Self::new(ParamType::Stream, Direction::Out, ParamRef::Stream(h.clone()))
    }

    pub fn data_id(&self) -> Option<DataId> {
        match self.value {
            ParamRef::Data(d) => Some(d),
            _ => None,
        }
    }

    pub fn stream_id(&self) -> Option<&str> {
        match &self.value {
            ParamRef::Stream(h) => Some(&h.id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskState {
    Registered,
    Ready,
    Scheduled,
    Running,
    Done,
    Failed,
}

impl TaskState {
    pub fn is_final(self) -> bool {
        matches!(self, TaskState::Done | TaskState::Failed)
    }

    /// Allowed transitions. A task whose predecessor failed goes straight
    /// from REGISTERED to FAILED; it never becomes ready.
    pub fn can_become(self, next: TaskState) -> bool {
        use TaskState::*;
        matches!(
            (self, next),
            (Registered, Ready)
                | (Registered, Failed)
                | (Ready, Scheduled)
                | (Scheduled, Running)
                | (Running, Done)
                | (Running, Failed)
        )
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskState::Registered => "REGISTERED",
            TaskState::Ready => "READY",
            TaskState::Scheduled => "SCHEDULED",
            TaskState::Running => "RUNNING",
            TaskState::Done => "DONE",
            TaskState::Failed => "FAILED",
        };
        f.write_str(s)
    }
}

/// Phase durations in milliseconds; `None` until the phase completes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub analysis_ms: Option<f64>,
    pub schedule_ms: Option<f64>,
    pub execution_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDescriptor {
    pub task_id: TaskId,
    pub method: String,
    pub params: Vec<ParamSpec>,
    pub cores_required: u32,
    pub state: TaskState,
    pub timings: Timings,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_forward_transitions_are_allowed() {
        use TaskState::*;
        let all = [Registered, Ready, Scheduled, Running, Done, Failed];
        let allowed: Vec<(TaskState, TaskState)> = all
            .iter()
            .flat_map(|a| all.iter().map(move |b| (*a, *b)))
            .filter(|(a, b)| a.can_become(*b))
            .collect();
        assert_eq!(
            allowed,
            vec![
                (Registered, Ready),
                (Registered, Failed),
                (Ready, Scheduled),
                (Scheduled, Running),
                (Running, Done),
                (Running, Failed)
            ]
        );
        assert!(Done.is_final() && Failed.is_final() && !Running.is_final());
    }
}
