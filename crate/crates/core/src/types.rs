//! Small shared vocabulary used by the broker, the stream server and the
//! client.

use std::fmt;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

/// Backend family of a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StreamKind {
    Object,
    File,
}

impl fmt::Display for StreamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StreamKind::Object => "OBJECT",
            StreamKind::File => "FILE",
        })
    }
}

impl FromStr for StreamKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "OBJECT" => Ok(StreamKind::Object),
            "FILE" => Ok(StreamKind::File),
            other => Err(format!("unknown stream kind `{other}`")),
        }
    }
}

/// Record-processing guarantee applied by a consumer group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ConsumerMode {
    /// Records stay leased until the consumer's next poll (or clean
    /// disconnect) commits them; a crash in between redelivers them.
    AtLeastOnce,
    /// Records are committed and removed at fetch time.
    AtMostOnce,
    /// Fetch, commit and deletion happen atomically within one poll.
    #[default]
    ExactlyOnce,
}

impl fmt::Display for ConsumerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConsumerMode::AtLeastOnce => "AT_LEAST_ONCE",
            ConsumerMode::AtMostOnce => "AT_MOST_ONCE",
            ConsumerMode::ExactlyOnce => "EXACTLY_ONCE",
        })
    }
}

impl FromStr for ConsumerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "AT_LEAST_ONCE" => Ok(ConsumerMode::AtLeastOnce),
            "AT_MOST_ONCE" => Ok(ConsumerMode::AtMostOnce),
            "EXACTLY_ONCE" => Ok(ConsumerMode::ExactlyOnce),
            other => Err(format!("unknown consumer mode `{other}`")),
        }
    }
}

/// Role requested when a process asks the server for stream access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Producer,
    Consumer,
}

/// Milliseconds since the Unix epoch.
pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
