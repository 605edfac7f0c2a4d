//! Client-side connector to the stream server. One connection per client; a
//! reader thread routes responses by correlation id and applies pushed
//! invalidations to the metadata cache.

use std::collections::{HashMap, HashSet};
use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{bounded, Sender};
use parking_lot::Mutex;
use thiserror::Error;

use crate::broker::LogRecord;
use crate::protocol::{self, codes, WireElement};
use crate::registry::StreamInfo;
use crate::types::{ConsumerMode, StreamKind};
use crate::wire::{read_frame, write_frame, Frame, Verb, WireError};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach stream server at {addr}: {source}")]
    Unreachable {
        addr: String,
        source: std::io::Error,
    },
    #[error("connection to stream server lost")]
    Disconnected,
    #[error("server error {code}: {message}")]
    Server { code: String, message: String },
    #[error("unexpected response: {0}")]
    Protocol(String),
}

impl ClientError {
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Server { code, .. } => Some(code),
            _ => None,
        }
    }
}

impl From<WireError> for ClientError {
    fn from(e: WireError) -> Self {
        ClientError::Protocol(e.to_string())
    }
}

#[derive(Debug, Clone)]
struct CacheEntry {
    info: StreamInfo,
    valid: bool,
}

#[derive(Default)]
struct Cache {
    entries: HashMap<String, CacheEntry>,
    /// Streams whose invalidations reach this connection.
    watched: HashSet<String>,
}

struct Shared {
    pending: Mutex<HashMap<u64, Sender<Frame>>>,
    cache: Mutex<Cache>,
    generation: AtomicU64,
    alive: AtomicBool,
    invalidations: AtomicU64,
}

impl Shared {
    fn invalidate(&self, id: &str) {
        let mut cache = self.cache.lock();
        if let Some(e) = cache.entries.get_mut(id) {
            e.valid = false;
        }
        self.generation.fetch_add(1, Ordering::SeqCst);
        self.invalidations.fetch_add(1, Ordering::SeqCst);
    }
}

/// Outcome of one poll request.
#[derive(Debug, Clone, Default)]
pub struct PollResult {
    pub elements: Vec<WireElement>,
    /// The stream was already closed when the server started fetching.
    pub closed: bool,
    /// Closed, and nothing is left for the group (fetchable or leased).
    pub drained: bool,
}

/// Counters exposed for tests and benchmarks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClientStats {
    pub cache_hits: u64,
    pub server_queries: u64,
    pub invalidations: u64,
}

pub struct Client {
    shared: Arc<Shared>,
    writer: Mutex<BufWriter<TcpStream>>,
    socket: TcpStream,
    client_id: String,
    next_corr: AtomicU64,
    next_producer: AtomicU64,
    hits: AtomicU64,
    queries: AtomicU64,
    reader: Mutex<Option<std::thread::JoinHandle<()>>>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs + std::fmt::Display) -> Result<Self, ClientError> {
        let shown = addr.to_string();
        let unreachable = |source| ClientError::Unreachable {
            addr: shown.clone(),
            source,
        };
        let socket = TcpStream::connect(addr).map_err(unreachable)?;
        let _ = socket.set_nodelay(true);
        let read_half = socket.try_clone().map_err(unreachable)?;
        let write_half = socket.try_clone().map_err(unreachable)?;
        let shared = Arc::new(Shared {
            pending: Mutex::new(HashMap::new()),
            cache: Mutex::new(Cache::default()),
            generation: AtomicU64::new(0),
            alive: AtomicBool::new(true),
            invalidations: AtomicU64::new(0),
        });
        let reader = {
            let shared = shared.clone();
            std::thread::Builder::new()
                .name("ds-client-reader".into())
                .spawn(move || reader_loop(shared, read_half))
                .map_err(unreachable)?
        };
        Ok(Client {
            shared,
            writer: Mutex::new(BufWriter::new(write_half)),
            socket,
            client_id: format!("{}-{:08x}", std::process::id(), rand::random::<u32>()),
            next_corr: AtomicU64::new(1),
            next_producer: AtomicU64::new(1),
            hits: AtomicU64::new(0),
            queries: AtomicU64::new(0),
            reader: Mutex::new(Some(reader)),
        })
    }

    /// Connects to the address given by `DS_SERVER_HOST` / `DS_SERVER_PORT`.
    pub fn connect_default() -> Result<Self, ClientError> {
        Client::connect(crate::server::default_address())
    }

    pub fn client_id(&self) -> &str {
        &self.client_id
    }

    /// A fresh producer identity, unique within this client.
    pub fn next_producer_id(&self) -> String {
        format!("{}:{}", self.client_id, self.next_producer.fetch_add(1, Ordering::SeqCst))
    }

    pub fn is_connected(&self) -> bool {
        self.shared.alive.load(Ordering::SeqCst)
    }

    pub fn stats(&self) -> ClientStats {
        ClientStats {
            cache_hits: self.hits.load(Ordering::SeqCst),
            server_queries: self.queries.load(Ordering::SeqCst),
            invalidations: self.shared.invalidations.load(Ordering::SeqCst),
        }
    }

    /// Sends one request and waits for its response. `ERR` responses become
    /// [`ClientError::Server`].
    pub fn request(&self, frame: Frame) -> Result<Frame, ClientError> {
        let corr = self.next_corr.fetch_add(1, Ordering::SeqCst);
        let (tx, rx) = bounded(1);
        self.shared.pending.lock().insert(corr, tx);
        if !self.shared.alive.load(Ordering::SeqCst) {
            self.shared.pending.lock().remove(&corr);
            return Err(ClientError::Disconnected);
        }
        {
            let mut w = self.writer.lock();
            if write_frame(&mut *w, &frame.with_corr(corr)).is_err() {
                self.shared.pending.lock().remove(&corr);
                return Err(ClientError::Disconnected);
            }
        }
        let resp = rx.recv().map_err(|_| ClientError::Disconnected)?;
        match resp.verb {
            Verb::Ok => Ok(resp),
            Verb::Err => Err(ClientError::Server {
                code: resp.get(0).to_string(),
                message: resp.get(1).to_string(),
            }),
            other => Err(ClientError::Protocol(format!("response verb {other}"))),
        }
    }

    fn remember(&self, info: &StreamInfo, generation: u64) {
        let mut cache = self.shared.cache.lock();
        cache.watched.insert(info.id.clone());
        // a response that raced with an invalidation may be stale
        if self.shared.generation.load(Ordering::SeqCst) != generation {
            return;
        }
        let closed = info.closed || cache.entries.get(&info.id).is_some_and(|e| e.info.closed);
        let mut info = info.clone();
        info.closed = closed;
        cache.entries.insert(info.id.clone(), CacheEntry { info, valid: true });
    }

    fn mark_closed(&self, id: &str) {
        if let Some(e) = self.shared.cache.lock().entries.get_mut(id) {
            e.info.closed = true;
        }
    }

    pub fn register(
        &self,
        kind: StreamKind,
        alias: Option<&str>,
        base_dir: Option<&std::path::Path>,
        mode: ConsumerMode,
        partitions: u32,
    ) -> Result<StreamInfo, ClientError> {
        let generation = self.shared.generation.load(Ordering::SeqCst);
        let resp = self.request(
            Frame::new(Verb::Register)
                .field(kind)
                .field(alias.unwrap_or(""))
                .field(base_dir.map(|p| p.display().to_string()).unwrap_or_default())
                .field(mode)
                .field(partitions),
        )?;
        let info = parse_info(&resp)?;
        self.remember(&info, generation);
        Ok(info)
    }

    /// Stream metadata, from cache when valid.
    pub fn lookup(&self, id: &str) -> Result<StreamInfo, ClientError> {
        {
            let cache = self.shared.cache.lock();
            if let Some(e) = cache.entries.get(id).filter(|e| e.valid) {
                self.hits.fetch_add(1, Ordering::SeqCst);
                return Ok(e.info.clone());
            }
        }
        self.queries.fetch_add(1, Ordering::SeqCst);
        let generation = self.shared.generation.load(Ordering::SeqCst);
        let resp = self.request(Frame::new(Verb::Lookup).field(id))?;
        let info = parse_info(&resp)?;
        self.remember(&info, generation);
        let closed = self.shared.cache.lock().entries.get(id).is_some_and(|e| e.info.closed);
        Ok(StreamInfo {
            closed: info.closed || closed,
            ..info
        })
    }

    /// Whether the stream is fully closed. Served from the cache unless it was
    /// invalidated; a cached `true` is final.
    pub fn is_closed(&self, id: &str) -> Result<bool, ClientError> {
        {
            let cache = self.shared.cache.lock();
            if let Some(e) = cache.entries.get(id) {
                if e.info.closed || (e.valid && cache.watched.contains(id)) {
                    self.hits.fetch_add(1, Ordering::SeqCst);
                    return Ok(e.info.closed);
                }
            }
        }
        Ok(self.lookup(id)?.closed)
    }

    pub fn add_producer(&self, id: &str, producer: &str) -> Result<(), ClientError> {
        self.request(Frame::new(Verb::AddProd).field(id).field(producer))?;
        self.shared.cache.lock().watched.insert(id.to_string());
        Ok(())
    }

    pub fn add_consumer(&self, id: &str, consumer: &str, group: &str) -> Result<(), ClientError> {
        self.request(Frame::new(Verb::AddCons).field(id).field(consumer).field(group))?;
        self.shared.cache.lock().watched.insert(id.to_string());
        Ok(())
    }

    /// Closes one producer grant; returns whether the stream is now closed.
    pub fn close(&self, id: &str, producer: &str) -> Result<bool, ClientError> {
        let resp = self.request(Frame::new(Verb::Close).field(id).field(producer))?;
        let closed = resp.get(0) == "1";
        if closed {
            self.mark_closed(id);
        }
        Ok(closed)
    }

    pub fn publish(&self, id: &str, producer: &str, payloads: &[Vec<u8>]) -> Result<usize, ClientError> {
        let resp = self.request(
            Frame::new(Verb::PubReq)
                .field(id)
                .field(producer)
                .with_payload(crate::codec::encode_seq(payloads.iter())),
        )?;
        Ok(resp.parse(0)?)
    }

    pub fn poll(
        &self,
        id: &str,
        consumer: &str,
        group: &str,
        max: Option<usize>,
        timeout: Option<Duration>,
    ) -> Result<PollResult, ClientError> {
        let resp = self.request(
            Frame::new(Verb::PollReq)
                .field(id)
                .field(consumer)
                .field(group)
                .field(max.unwrap_or(0))
                .field(timeout.map_or(0, |t| t.as_millis().max(1) as u64)),
        )?;
        self.shared.cache.lock().watched.insert(id.to_string());
        let closed = resp.get(0) == "1";
        if closed {
            self.mark_closed(id);
        }
        Ok(PollResult {
            elements: protocol::decode_elements(&resp.payload)
                .map_err(|e| ClientError::Protocol(e.to_string()))?,
            closed,
            drained: resp.get(1) == "1",
        })
    }

    pub fn new_topic(&self, topic: &str, partitions: u32) -> Result<(), ClientError> {
        self.request(Frame::new(Verb::NewTopic).field(topic).field(partitions))?;
        Ok(())
    }

    pub fn delete_topic(&self, topic: &str) -> Result<(), ClientError> {
        self.request(Frame::new(Verb::DelTopic).field(topic))?;
        Ok(())
    }

    pub fn append(&self, topic: &str, key: Option<&[u8]>, value: Vec<u8>) -> Result<(u32, u64), ClientError> {
        let resp = self.request(
            Frame::new(Verb::Append)
                .field(topic)
                .field(key.map(protocol::hex).unwrap_or_default())
                .with_payload(value),
        )?;
        Ok((resp.parse(0)?, resp.parse(1)?))
    }

    pub fn fetch(
        &self,
        topic: &str,
        group: &str,
        consumer: &str,
        max: Option<usize>,
        mode: ConsumerMode,
    ) -> Result<Vec<LogRecord>, ClientError> {
        let resp = self.request(
            Frame::new(Verb::Fetch)
                .field(topic)
                .field(group)
                .field(consumer)
                .field(max.unwrap_or(0))
                .field(mode),
        )?;
        protocol::decode_records(&resp.payload).map_err(|e| ClientError::Protocol(e.to_string()))
    }

    pub fn commit(
        &self,
        topic: &str,
        group: &str,
        consumer: &str,
        offsets: &[(u32, u64)],
        delete: bool,
    ) -> Result<(), ClientError> {
        self.request(
            Frame::new(Verb::Commit)
                .field(topic)
                .field(group)
                .field(consumer)
                .field(u8::from(delete))
                .field(protocol::encode_offsets(offsets)),
        )?;
        Ok(())
    }

    /// Orderly disconnect: the server commits this client's in-flight
    /// at-least-once deliveries and expires its producer grants.
    pub fn bye(&self) -> Result<(), ClientError> {
        if !self.is_connected() {
            return Ok(());
        }
        let res = self.request(Frame::new(Verb::Bye)).map(|_| ());
        let _ = self.socket.shutdown(Shutdown::Both);
        res
    }

    /// Simulates a process crash: the socket is torn down without `BYE`.
    pub fn kill(&self) {
        let _ = self.socket.shutdown(Shutdown::Both);
        if let Some(h) = self.reader.lock().take() {
            let _ = h.join();
        }
    }
}

impl Drop for Client {
    fn drop(&mut self) {
        let _ = self.bye();
        let _ = self.socket.shutdown(Shutdown::Both);
        if let Some(h) = self.reader.lock().take() {
            let _ = h.join();
        }
    }
}

fn parse_info(f: &Frame) -> Result<StreamInfo, ClientError> {
    f.require_fields(7)?;
    Ok(StreamInfo {
        id: f.get(0).to_string(),
        alias: f.opt(1).map(str::to_string),
        kind: f.parse(2)?,
        base_dir: f.opt(3).map(PathBuf::from),
        consumer_mode: f.parse(4)?,
        partitions: f.parse(5)?,
        closed: f.get(6) == "1",
    })
}

fn reader_loop(shared: Arc<Shared>, socket: TcpStream) {
    let mut reader = BufReader::new(socket);
    loop {
        match read_frame(&mut reader) {
            Ok(Some(frame)) if frame.verb == Verb::Invalidate => shared.invalidate(frame.get(0)),
            Ok(Some(frame)) => {
                if let Some(tx) = shared.pending.lock().remove(&frame.corr) {
                    let _ = tx.send(frame);
                } else if frame.verb == Verb::Err && frame.get(0) == codes::MALFORMED {
                    tracing::warn!("server rejected a frame: {}", frame.get(1));
                }
            }
            Ok(None) | Err(WireError::Io(_)) | Err(WireError::Desync(_)) => break,
            Err(WireError::Malformed { reason, .. }) => {
                tracing::warn!("malformed frame from server: {reason}");
            }
        }
    }
    shared.alive.store(false, Ordering::SeqCst);
    // dropping the senders fails every waiting request
    shared.pending.lock().clear();
}
