//! User-facing distributed streams.
//!
//! A [`DistroStream`] wraps a [`StreamHandle`] and the process's [`Client`].
//! OBJECT streams carry serialized values through the embedded broker; FILE
//! streams carry absolute paths of files that appeared in the stream's base
//! directory. Handles are plain data and can be shipped inside task
//! arguments; [`DistroStream::open`] rebuilds a usable stream from one.

use std::marker::PhantomData;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{Client, ClientError};
use crate::codec::{Codec, CodecError, JsonCodec};
use crate::protocol::codes;
use crate::registry::StreamInfo;
use crate::types::{ConsumerMode, StreamKind};

/// Environment variable naming the application run; its value is the
/// default consumer group.
pub const RUN_ID_ENV: &str = "HYBRIDFLOW_RUN_ID";

pub fn default_group() -> String {
    std::env::var(RUN_ID_ENV).unwrap_or_else(|_| "default".into())
}

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("registration failed: {0}")]
    Registration(String),
    #[error("{0}")]
    AliasKindMismatch(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("stream {0} is closed")]
    Closed(String),
    #[error("unknown stream: {0}")]
    UnknownStream(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("server unreachable: {0}")]
    Unreachable(String),
    #[error("payload: {0}")]
    Codec(#[from] CodecError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ClientError> for StreamError {
    fn from(e: ClientError) -> Self {
        match &e {
            ClientError::Server { code, message } => match code.as_str() {
                codes::ALIAS_KIND_MISMATCH => StreamError::AliasKindMismatch(message.clone()),
                codes::INVALID_PATH => StreamError::InvalidPath(message.clone()),
                codes::CLOSED => StreamError::Closed(message.clone()),
                codes::UNKNOWN_STREAM => StreamError::UnknownStream(message.clone()),
                codes::UNSUPPORTED => StreamError::Unsupported(message.clone()),
                codes::REGISTRATION => StreamError::Registration(message.clone()),
                _ => StreamError::Backend(e.to_string()),
            },
            ClientError::Unreachable { .. } | ClientError::Disconnected => StreamError::Unreachable(e.to_string()),
            ClientError::Protocol(_) => StreamError::Backend(e.to_string()),
        }
    }
}

/// Serializable reference to a registered stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamHandle {
    pub id: String,
    pub alias: Option<String>,
    pub kind: StreamKind,
    pub base_dir: Option<PathBuf>,
    pub consumer_mode: ConsumerMode,
    /// Consumer group used when polling; `None` means [`default_group`].
    #[serde(default)]
    pub group: Option<String>,
}

impl From<&StreamInfo> for StreamHandle {
    fn from(info: &StreamInfo) -> Self {
        StreamHandle {
            id: info.id.clone(),
            alias: info.alias.clone(),
            kind: info.kind,
            base_dir: info.base_dir.clone(),
            consumer_mode: info.consumer_mode,
            group: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamElement {
    pub payload: Vec<u8>,
    pub publish_time: u64,
}

impl StreamElement {
    /// The element as a path; meaningful for FILE streams.
    pub fn path(&self) -> PathBuf {
        PathBuf::from(String::from_utf8_lossy(&self.payload).into_owned())
    }
}

#[derive(Debug, Clone, Default)]
pub struct PollOutcome {
    pub elements: Vec<StreamElement>,
    /// The stream was closed before this poll fetched; no later poll can
    /// return elements published afterwards.
    pub closed: bool,
    /// Closed and nothing left to deliver to this group.
    pub drained: bool,
}

/// Options for [`DistroStream::create`].
#[derive(Debug, Clone, Default)]
pub struct StreamOptions {
    pub alias: Option<String>,
    pub base_dir: Option<PathBuf>,
    pub consumer_mode: ConsumerMode,
    pub partitions: Option<u32>,
    pub group: Option<String>,
}

static NEXT_CONSUMER: AtomicU64 = AtomicU64::new(1);

pub struct DistroStream {
    client: Arc<Client>,
    handle: StreamHandle,
    producer: Mutex<Option<String>>,
    producer_name: Option<String>,
    consumer: String,
    group: String,
    max_elements: Option<usize>,
    poll_lock: Mutex<()>,
}

impl DistroStream {
    pub fn create(client: Arc<Client>, kind: StreamKind, opts: StreamOptions) -> Result<Self, StreamError> {
        if kind == StreamKind::File {
            match &opts.base_dir {
                None => return Err(StreamError::InvalidPath("FILE streams need a base directory".into())),
                Some(p) if !p.is_absolute() => {
                    return Err(StreamError::InvalidPath(format!("{} is not absolute", p.display())))
                }
                _ => {}
            }
        }
        let info = client
            .register(
                kind,
                opts.alias.as_deref(),
                opts.base_dir.as_deref(),
                opts.consumer_mode,
                opts.partitions.unwrap_or(1),
            )
            .map_err(|e| match StreamError::from(e) {
                StreamError::Unreachable(m) | StreamError::Backend(m) => StreamError::Registration(m),
                other => other,
            })?;
        let mut handle = StreamHandle::from(&info);
        handle.group = opts.group;
        Ok(Self::with_handle(client, handle))
    }

    pub fn object(client: Arc<Client>, alias: Option<&str>) -> Result<Self, StreamError> {
        Self::create(
            client,
            StreamKind::Object,
            StreamOptions {
                alias: alias.map(str::to_string),
                ..Default::default()
            },
        )
    }

    pub fn file(client: Arc<Client>, alias: Option<&str>, base_dir: impl Into<PathBuf>) -> Result<Self, StreamError> {
        Self::create(
            client,
            StreamKind::File,
            StreamOptions {
                alias: alias.map(str::to_string),
                base_dir: Some(base_dir.into()),
                ..Default::default()
            },
        )
    }

    /// Rebuilds a stream from a handle received from elsewhere. The id must
    /// be known to the server.
    pub fn open(client: Arc<Client>, handle: StreamHandle) -> Result<Self, StreamError> {
        let info = client.lookup(&handle.id)?;
        if info.kind != handle.kind {
            return Err(StreamError::UnknownStream(format!("{} is not a {} stream", handle.id, handle.kind)));
        }
        Ok(Self::with_handle(client, handle))
    }

    fn with_handle(client: Arc<Client>, handle: StreamHandle) -> Self {
        let group = handle.group.clone().unwrap_or_else(default_group);
        let consumer = format!("{}/c{}", client.client_id(), NEXT_CONSUMER.fetch_add(1, Ordering::SeqCst));
        DistroStream {
            client,
            handle,
            producer: Mutex::new(None),
            producer_name: None,
            consumer,
            group,
            max_elements: None,
            poll_lock: Mutex::new(()),
        }
    }

    /// Publishes under a fixed producer identity instead of a generated one.
    pub fn with_producer_id(mut self, producer: impl Into<String>) -> Self {
        self.producer_name = Some(producer.into());
        self
    }

    /// Caps the number of elements one poll may return.
    pub fn with_max_elements(mut self, max: Option<usize>) -> Self {
        self.max_elements = max;
        self
    }

    pub fn handle(&self) -> &StreamHandle {
        &self.handle
    }

    pub fn id(&self) -> &str {
        &self.handle.id
    }

    pub fn alias(&self) -> Option<&str> {
        self.handle.alias.as_deref()
    }

    pub fn kind(&self) -> StreamKind {
        self.handle.kind
    }

    pub fn consumer_id(&self) -> &str {
        &self.consumer
    }

    pub fn client(&self) -> &Arc<Client> {
        &self.client
    }

    /// `(id, alias, kind)` as recorded by the server.
    pub fn metadata(&self) -> Result<(String, Option<String>, StreamKind), StreamError> {
        let info = self.client.lookup(&self.handle.id)?;
        Ok((info.id, info.alias, info.kind))
    }

    /// Registers this handle's producer grant on first use.
    fn ensure_producer(&self) -> Result<String, StreamError> {
        let mut slot = self.producer.lock();
        if let Some(p) = slot.as_ref() {
            return Ok(p.clone());
        }
        let id = self
            .producer_name
            .clone()
            .unwrap_or_else(|| self.client.next_producer_id());
        self.client.add_producer(&self.handle.id, &id)?;
        *slot = Some(id.clone());
        Ok(id)
    }

    /// Declares this handle a producer without publishing. FILE producers
    /// use this, since they write files rather than publish.
    pub fn register_producer(&self) -> Result<(), StreamError> {
        self.ensure_producer().map(|_| ())
    }

    pub fn publish(&self, payload: Vec<u8>) -> Result<(), StreamError> {
        self.publish_all(vec![payload])
    }

    /// Publishes the payloads as separate records, in order.
    pub fn publish_all(&self, payloads: Vec<Vec<u8>>) -> Result<(), StreamError> {
        if self.handle.kind == StreamKind::File {
            return Err(StreamError::Unsupported(
                "FILE streams publish by creating files in the base directory".into(),
            ));
        }
        if self.client.is_closed(&self.handle.id)? {
            return Err(StreamError::Closed(self.handle.id.clone()));
        }
        let producer = self.ensure_producer()?;
        if payloads.is_empty() {
            return Ok(());
        }
        self.client.publish(&self.handle.id, &producer, &payloads)?;
        Ok(())
    }

    /// Writes `bytes` into the base directory of a FILE stream under `name`.
    /// The file is written under a hidden name and renamed into place, so
    /// the monitor never sees it half-written.
    pub fn write_file(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, StreamError> {
        let Some(dir) = self.handle.base_dir.as_deref().filter(|_| self.handle.kind == StreamKind::File) else {
            return Err(StreamError::Unsupported("write_file needs a FILE stream".into()));
        };
        if self.client.is_closed(&self.handle.id)? {
            return Err(StreamError::Closed(self.handle.id.clone()));
        }
        self.ensure_producer()?;
        write_atomically(dir, name, bytes).map_err(StreamError::from)
    }

    /// All currently available elements.
    pub fn poll(&self) -> Result<Vec<StreamElement>, StreamError> {
        Ok(self.poll_outcome(None)?.elements)
    }

    /// Waits up to `timeout` for at least one element.
    pub fn poll_timeout(&self, timeout: Duration) -> Result<Vec<StreamElement>, StreamError> {
        Ok(self.poll_outcome(Some(timeout))?.elements)
    }

    pub fn poll_outcome(&self, timeout: Option<Duration>) -> Result<PollOutcome, StreamError> {
        let _serial = self.poll_lock.lock();
        let res = self.client.poll(
            &self.handle.id,
            &self.consumer,
            &self.group,
            self.max_elements,
            timeout,
        )?;
        Ok(PollOutcome {
            elements: res
                .elements
                .into_iter()
                .map(|e| StreamElement {
                    payload: e.payload,
                    publish_time: e.publish_time,
                })
                .collect(),
            closed: res.closed,
            drained: res.drained,
        })
    }

    /// Closes this handle's producer grant. Idempotent; closing a stream that
    /// is already fully closed is a no-op.
    pub fn close(&self) -> Result<(), StreamError> {
        let producer = match self.ensure_producer() {
            Ok(p) => p,
            Err(StreamError::Closed(_)) => return Ok(()),
            Err(e) => return Err(e),
        };
        self.client.close(&self.handle.id, &producer)?;
        Ok(())
    }

    pub fn is_closed(&self) -> Result<bool, StreamError> {
        Ok(self.client.is_closed(&self.handle.id)?)
    }
}

/// Writes `bytes` to `dir/.name.part` and renames it to `dir/name`.
pub fn write_atomically(dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
    let tmp = dir.join(format!(".{name}.part"));
    let target = dir.join(name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, &target)?;
    Ok(target)
}

/// An OBJECT stream of typed values.
pub struct TypedStream<T, C = JsonCodec<T>> {
    inner: DistroStream,
    codec: C,
    _t: PhantomData<fn() -> T>,
}

impl<T: Serialize + DeserializeOwned> TypedStream<T> {
    pub fn json(inner: DistroStream) -> Self {
        TypedStream {
            inner,
            codec: JsonCodec::default(),
            _t: PhantomData,
        }
    }
}

impl<T, C: Codec<T>> TypedStream<T, C> {
    pub fn new(inner: DistroStream, codec: C) -> Self {
        TypedStream {
            inner,
            codec,
            _t: PhantomData,
        }
    }

    pub fn stream(&self) -> &DistroStream {
        &self.inner
    }

    pub fn publish(&self, value: &T) -> Result<(), StreamError> {
        self.inner.publish(self.codec.encode(value))
    }

    pub fn publish_all<'a>(&self, values: impl IntoIterator<Item = &'a T>) -> Result<(), StreamError>
    where
        T: 'a,
    {
        self.inner
            .publish_all(values.into_iter().map(|v| self.codec.encode(v)).collect())
    }

    pub fn poll(&self) -> Result<Vec<T>, StreamError> {
        self.decode(self.inner.poll()?)
    }

    pub fn poll_timeout(&self, timeout: Duration) -> Result<Vec<T>, StreamError> {
        self.decode(self.inner.poll_timeout(timeout)?)
    }

    /// Like [`DistroStream::poll_outcome`], returning decoded values and the
    /// `(closed, drained)` flags.
    pub fn poll_outcome(&self, timeout: Option<Duration>) -> Result<(Vec<T>, bool, bool), StreamError> {
        let out = self.inner.poll_outcome(timeout)?;
        Ok((self.decode(out.elements)?, out.closed, out.drained))
    }

    fn decode(&self, elems: Vec<StreamElement>) -> Result<Vec<T>, StreamError> {
        elems
            .iter()
            .map(|e| self.codec.decode(&e.payload).map_err(StreamError::from))
            .collect()
    }

    pub fn close(&self) -> Result<(), StreamError> {
        self.inner.close()
    }

    pub fn is_closed(&self) -> Result<bool, StreamError> {
        self.inner.is_closed()
    }
}
