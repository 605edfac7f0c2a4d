//! The stream server: one TCP listener, one handler thread per connection,
//! a registry behind a single lock, and the broker plus directory monitors
//! hosted in-process.
//!
//! Close notifications are pushed (`INVALIDATE`) to every connection that
//! touched the stream before the triggering `CLOSE` is answered.

use std::collections::{HashMap, HashSet};
use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use thiserror::Error;
use tracing::{debug, info};

use crate::broker::{Broker, BrokerError, DEFAULT_LEASE};
use crate::monitor::{validate_dir, DirMonitor, TickerGuard, DEFAULT_TICK};
use crate::protocol::{self, codes, WireElement};
use crate::registry::{ConnId, RegisterRequest, Registry, RegistryError, StreamInfo};
use crate::types::{now_ms, ConsumerMode, Role, StreamKind};
use crate::wire::{read_frame, write_frame, Frame, Verb, WireError};

pub const DEFAULT_PORT: u16 = 49049;
pub const PORT_ENV: &str = "DS_SERVER_PORT";
pub const HOST_ENV: &str = "DS_SERVER_HOST";

/// `DS_SERVER_HOST:DS_SERVER_PORT`, defaulting to `127.0.0.1:49049`.
pub fn default_address() -> String {
    let host = std::env::var(HOST_ENV).unwrap_or_else(|_| "127.0.0.1".into());
    let port = std::env::var(PORT_ENV)
        .ok()
        .and_then(|p| p.parse::<u16>().ok())
        .unwrap_or(DEFAULT_PORT);
    format!("{host}:{port}")
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("broker: {0}")]
    Broker(#[from] BrokerError),
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub monitor_tick: Duration,
    pub lease: Duration,
    pub journal: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            monitor_tick: DEFAULT_TICK,
            lease: DEFAULT_LEASE,
            journal: None,
        }
    }
}

struct Conn {
    writer: Mutex<BufWriter<TcpStream>>,
    stream: TcpStream,
    /// (stream id, group, consumer) registered over this connection.
    consumers: Mutex<HashSet<(String, String, String)>>,
}

impl Conn {
    fn send(&self, frame: &Frame) {
        let mut w = self.writer.lock();
        if let Err(e) = write_frame(&mut *w, frame) {
            debug!("write to client failed: {e}");
        }
    }
}

struct Shared {
    registry: Mutex<Registry>,
    broker: Arc<Broker>,
    monitor: Arc<DirMonitor>,
    conns: Mutex<HashMap<ConnId, Arc<Conn>>>,
    next_conn: AtomicU64,
    shutdown: AtomicBool,
}

pub struct StreamServer {
    shared: Arc<Shared>,
    addr: SocketAddr,
    acceptor: Option<JoinHandle<()>>,
    _ticker: TickerGuard,
}

impl StreamServer {
    /// Binds and starts serving in background threads.
    pub fn start(addr: impl ToSocketAddrs + std::fmt::Display, config: ServerConfig) -> Result<Self, ServerError> {
        let shown = addr.to_string();
        let listener = TcpListener::bind(addr).map_err(|source| ServerError::Bind {
            addr: shown.clone(),
            source,
        })?;
        let local = listener.local_addr().map_err(|source| ServerError::Bind {
            addr: shown,
            source,
        })?;
        let broker = Arc::new(match &config.journal {
            Some(path) => Broker::open_journal(path, config.lease)?,
            None => Broker::with_lease(config.lease),
        });
        let monitor = Arc::new(DirMonitor::new(broker.clone(), config.monitor_tick));
        let ticker = monitor.spawn_ticker();
        let shared = Arc::new(Shared {
            registry: Mutex::new(Registry::new()),
            broker,
            monitor,
            conns: Mutex::new(HashMap::new()),
            next_conn: AtomicU64::new(1),
            shutdown: AtomicBool::new(false),
        });
        let acceptor = {
            let shared = shared.clone();
            std::thread::Builder::new()
                .name("ds-acceptor".into())
                .spawn(move || accept_loop(listener, shared))
                .expect("spawn acceptor")
        };
        info!("stream server listening on {local}");
        Ok(StreamServer {
            shared,
            addr: local,
            acceptor: Some(acceptor),
            _ticker: ticker,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn broker(&self) -> &Arc<Broker> {
        &self.shared.broker
    }

    pub fn live_streams(&self) -> usize {
        self.shared.registry.lock().live_count()
    }

    /// Snapshot of a registry entry as `(info, open producers, consumers)`.
    pub fn inspect(&self, id: &str) -> Option<(StreamInfo, usize, usize)> {
        let reg = self.shared.registry.lock();
        reg.entry(id)
            .ok()
            .map(|e| (e.info().clone(), e.open_producers(), e.consumers().len()))
    }

    pub fn connection_count(&self) -> usize {
        self.shared.conns.lock().len()
    }

    /// Blocks until the acceptor stops (i.e. forever, barring shutdown).
    pub fn wait(mut self) {
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(&mut self) {
        if self.shared.shutdown.swap(true, Ordering::SeqCst) {
            return;
        }
        // unblock accept()
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
        for conn in self.shared.conns.lock().values() {
            let _ = conn.stream.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for StreamServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    for stream in listener.incoming() {
        if shared.shutdown.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let _ = stream.set_nodelay(true);
        let id = shared.next_conn.fetch_add(1, Ordering::SeqCst);
        let (Ok(read_half), Ok(write_half)) = (stream.try_clone(), stream.try_clone()) else {
            continue;
        };
        let conn = Arc::new(Conn {
            writer: Mutex::new(BufWriter::new(write_half)),
            stream,
            consumers: Mutex::new(HashSet::new()),
        });
        shared.conns.lock().insert(id, conn.clone());
        let shared = shared.clone();
        let spawned = std::thread::Builder::new()
            .name(format!("ds-conn-{id}"))
            .spawn(move || connection_loop(shared, id, conn, read_half));
        if spawned.is_err() {
            tracing::error!("could not spawn handler for connection {id}");
        }
    }
}

fn connection_loop(shared: Arc<Shared>, id: ConnId, conn: Arc<Conn>, read_half: TcpStream) {
    let mut reader = BufReader::new(read_half);
    let mut clean = false;
    loop {
        match read_frame(&mut reader) {
            Ok(Some(frame)) => {
                if frame.verb == Verb::Bye {
                    bye(&shared, &conn);
                    conn.send(&Frame::ok(frame.corr));
                    log_line("BYE", "-", &format!("conn-{id}"), "ok");
                    clean = true;
                    break;
                }
                let blocking = frame.verb == Verb::PollReq && frame.get(4).parse::<u64>().unwrap_or(0) > 0;
                if blocking {
                    let shared = shared.clone();
                    let conn2 = conn.clone();
                    std::thread::spawn(move || {
                        let resp = handle(&shared, id, &conn2, frame);
                        conn2.send(&resp);
                    });
                } else {
                    let resp = handle(&shared, id, &conn, frame);
                    conn.send(&resp);
                }
            }
            Ok(None) => break,
            Err(WireError::Malformed { corr, reason }) => {
                log_line("?", "-", &format!("conn-{id}"), &format!("malformed: {reason}"));
                conn.send(&Frame::err(corr.unwrap_or(0), codes::MALFORMED, reason));
            }
            Err(e) => {
                debug!("connection {id} dropped: {e}");
                break;
            }
        }
    }
    disconnect(&shared, id, &conn, clean);
}

/// Clean shutdown: commit whatever at-least-once consumers still hold.
fn bye(shared: &Shared, conn: &Conn) {
    let owned: Vec<_> = conn.consumers.lock().iter().cloned().collect();
    for (stream, group, consumer) in owned {
        let _ = shared.broker.commit_in_flight(&stream, &group, &consumer, false);
    }
}

fn disconnect(shared: &Shared, id: ConnId, conn: &Conn, clean: bool) {
    shared.conns.lock().remove(&id);
    let owned: Vec<_> = conn.consumers.lock().drain().collect();
    if !clean {
        for (stream, group, consumer) in &owned {
            let n = shared.broker.release_consumer(stream, group, consumer);
            if n > 0 {
                log_line("RELEASE", stream, consumer, &format!("redeliver {n}"));
            }
        }
    }
    let closed = shared.registry.lock().drop_connection(id);
    for (stream, outcome) in closed {
        log_line("CLOSE", &stream, &format!("conn-{id}"), "expired producers");
        notify_closed(shared, &stream, &outcome.notify);
    }
    let _ = conn.stream.shutdown(Shutdown::Both);
}

fn notify_closed(shared: &Shared, stream: &str, targets: &[ConnId]) {
    let conns: Vec<Arc<Conn>> = {
        let all = shared.conns.lock();
        targets.iter().filter_map(|c| all.get(c).cloned()).collect()
    };
    let push = Frame::new(Verb::Invalidate).field(stream);
    for c in conns {
        c.send(&push);
    }
    shared.broker.wake(stream);
}

fn log_line(verb: &str, stream: &str, process: &str, outcome: &str) {
    info!(target: "hybridflow::server", "{} | {} | {} | {} | {}", now_ms(), verb, stream, process, outcome);
}

fn registry_err(corr: u64, e: RegistryError) -> Frame {
    let code = match e {
        RegistryError::UnknownStream(_) => codes::UNKNOWN_STREAM,
        RegistryError::AliasKindMismatch { .. } => codes::ALIAS_KIND_MISMATCH,
        RegistryError::MissingBaseDir => codes::INVALID_PATH,
    };
    Frame::err(corr, code, e)
}

fn broker_err(corr: u64, e: BrokerError) -> Frame {
    let code = match e {
        BrokerError::StaleCommit { .. } => codes::STALE_COMMIT,
        _ => codes::BACKEND,
    };
    Frame::err(corr, code, e)
}

fn info_frame(corr: u64, info: &StreamInfo) -> Frame {
    Frame::ok(corr)
        .field(&info.id)
        .field(info.alias.as_deref().unwrap_or(""))
        .field(info.kind)
        .field(
            info.base_dir
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        )
        .field(info.consumer_mode)
        .field(info.partitions)
        .field(u8::from(info.closed))
}

fn handle(shared: &Shared, conn_id: ConnId, conn: &Conn, frame: Frame) -> Frame {
    let corr = frame.corr;
    let verb = frame.verb;
    let result = dispatch(shared, conn_id, conn, frame);
    match result {
        Ok(f) => f,
        Err(WireError::Malformed { reason, .. }) => {
            log_line(verb.as_str(), "-", &format!("conn-{conn_id}"), &format!("malformed: {reason}"));
            Frame::err(corr, codes::MALFORMED, reason)
        }
        Err(e) => Frame::err(corr, codes::MALFORMED, e),
    }
}

fn dispatch(shared: &Shared, conn_id: ConnId, conn: &Conn, f: Frame) -> Result<Frame, WireError> {
    let corr = f.corr;
    let who = format!("conn-{conn_id}");
    match f.verb {
        Verb::Register => {
            f.require_fields(4)?;
            let kind: StreamKind = f.parse(0)?;
            let mode: ConsumerMode = f.parse(3)?;
            let partitions: u32 = if f.get(4).is_empty() { 1 } else { f.parse(4)? };
            let base_dir = f.opt(2).map(PathBuf::from);
            if kind == StreamKind::File {
                let Some(dir) = &base_dir else {
                    return Ok(Frame::err(corr, codes::INVALID_PATH, "FILE streams need a base directory"));
                };
                if let Err(e) = validate_dir(dir) {
                    return Ok(Frame::err(corr, codes::INVALID_PATH, e));
                }
            }
            let req = RegisterRequest {
                kind,
                alias: f.opt(1).map(str::to_string),
                base_dir,
                consumer_mode: mode,
                partitions,
            };
            let mut reg = shared.registry.lock();
            let (info, created) = match reg.register(req, Some(conn_id)) {
                Ok(v) => v,
                Err(e) => {
                    log_line("REGISTER", f.get(1), &who, &e.to_string());
                    return Ok(registry_err(corr, e));
                }
            };
            if created {
                // backend resources are created while the registry lock is
                // held so no other client can see an id without its topic
                let backend = shared
                    .broker
                    .create_topic(&info.id, info.partitions)
                    .map_err(|e| e.to_string())
                    .and_then(|_| match (&info.kind, &info.base_dir) {
                        (StreamKind::File, Some(dir)) => {
                            shared.monitor.register_dir(&info.id, dir).map_err(|e| e.to_string())
                        }
                        _ => Ok(()),
                    });
                if let Err(e) = backend {
                    let _ = reg.delete(&info.id);
                    let _ = shared.broker.delete_topic(&info.id);
                    return Ok(Frame::err(corr, codes::REGISTRATION, e));
                }
            }
            log_line("REGISTER", &info.id, &who, if created { "created" } else { "reused" });
            Ok(info_frame(corr, &info))
        }
        Verb::Lookup => {
            f.require_fields(1)?;
            match shared.registry.lock().lookup(f.get(0), Some(conn_id)) {
                Ok(info) => Ok(info_frame(corr, &info)),
                Err(e) => Ok(registry_err(corr, e)),
            }
        }
        Verb::Status => {
            f.require_fields(1)?;
            match shared.registry.lock().status(f.get(0)) {
                Ok(closed) => Ok(Frame::ok(corr).field(u8::from(closed))),
                Err(e) => Ok(registry_err(corr, e)),
            }
        }
        Verb::AddProd => {
            f.require_fields(2)?;
            let granted = shared
                .registry
                .lock()
                .check_access(f.get(0), f.get(1), Role::Producer, "", Some(conn_id));
            match granted {
                Ok(true) => {
                    log_line("ADDPROD", f.get(0), f.get(1), "granted");
                    Ok(Frame::ok(corr))
                }
                Ok(false) => {
                    log_line("ADDPROD", f.get(0), f.get(1), "denied");
                    Ok(Frame::err(corr, codes::CLOSED, format!("stream {} is closed", f.get(0))))
                }
                Err(e) => Ok(registry_err(corr, e)),
            }
        }
        Verb::AddCons => {
            f.require_fields(3)?;
            match add_consumer(shared, conn_id, conn, f.get(0), f.get(1), f.get(2)) {
                Ok(()) => Ok(Frame::ok(corr)),
                Err(resp) => Ok(resp.with_corr(corr)),
            }
        }
        Verb::Close => {
            f.require_fields(2)?;
            let (id, producer) = (f.get(0), f.get(1));
            let kind = match shared.registry.lock().entry(id) {
                Ok(e) => e.info().kind,
                Err(e) => return Ok(registry_err(corr, e)),
            };
            // files written before the close must be in the log before the
            // stream is flagged closed
            if kind == StreamKind::File {
                let _ = shared.monitor.scan_once(id);
            }
            let outcome = shared.registry.lock().close_producer(id, producer);
            match outcome {
                Ok(out) => {
                    if out.newly_closed {
                        notify_closed(shared, id, &out.notify);
                    }
                    log_line("CLOSE", id, producer, if out.closed { "closed" } else { "open" });
                    Ok(Frame::ok(corr).field(u8::from(out.closed)))
                }
                Err(e) => Ok(registry_err(corr, e)),
            }
        }
        Verb::PubReq => {
            f.require_fields(2)?;
            let (id, producer) = (f.get(0), f.get(1));
            {
                let mut reg = shared.registry.lock();
                let info = match reg.entry(id) {
                    Ok(e) => e.info().clone(),
                    Err(e) => return Ok(registry_err(corr, e)),
                };
                if info.kind == StreamKind::File {
                    return Ok(Frame::err(corr, codes::UNSUPPORTED, "FILE streams publish by writing into the base directory"));
                }
                if info.closed {
                    return Ok(Frame::err(corr, codes::CLOSED, format!("stream {id} is closed")));
                }
                if !reg.is_open_producer(id, producer) {
                    match reg.check_access(id, producer, Role::Producer, "", Some(conn_id)) {
                        Ok(true) => {}
                        Ok(false) => return Ok(Frame::err(corr, codes::CLOSED, format!("stream {id} is closed"))),
                        Err(e) => return Ok(registry_err(corr, e)),
                    }
                }
            }
            let items = match crate::codec::decode_seq(&f.payload) {
                Ok(items) => items,
                Err(e) => return Ok(Frame::err(corr, codes::MALFORMED, e)),
            };
            let n = items.len();
            match shared.broker.append_batch(id, items.into_iter().map(|v| (None, v)).collect()) {
                Ok(_) => Ok(Frame::ok(corr).field(n)),
                Err(e) => Ok(broker_err(corr, e)),
            }
        }
        Verb::PollReq => {
            f.require_fields(5)?;
            let max: usize = f.parse(3)?;
            let timeout_ms: u64 = f.parse(4)?;
            poll(
                shared,
                conn_id,
                conn,
                f.get(0),
                f.get(1),
                f.get(2),
                (max > 0).then_some(max),
                Duration::from_millis(timeout_ms),
            )
            .map(|resp| resp.with_corr(corr))
            .or_else(|resp| Ok(resp.with_corr(corr)))
        }
        Verb::NewTopic => {
            f.require_fields(2)?;
            let parts: u32 = f.parse(1)?;
            match shared.broker.create_topic(f.get(0), parts) {
                Ok(()) => Ok(Frame::ok(corr)),
                Err(e) => Ok(broker_err(corr, e)),
            }
        }
        Verb::DelTopic => {
            f.require_fields(1)?;
            let id = f.get(0);
            match shared.broker.delete_topic(id) {
                Ok(()) => {
                    let mut reg = shared.registry.lock();
                    if reg.entry(id).is_ok() {
                        let _ = reg.delete(id);
                        shared.monitor.unregister(id);
                    }
                    Ok(Frame::ok(corr))
                }
                Err(e) => Ok(broker_err(corr, e)),
            }
        }
        Verb::Append => {
            f.require_fields(1)?;
            let key = match f.opt(1) {
                Some(k) => match protocol::unhex(k) {
                    Some(k) => Some(k),
                    None => return Ok(Frame::err(corr, codes::MALFORMED, "key is not hex")),
                },
                None => None,
            };
            let topic = f.get(0).to_string();
            match shared.broker.append(&topic, key.as_deref(), f.payload) {
                Ok((p, o)) => Ok(Frame::ok(corr).field(p).field(o)),
                Err(e) => Ok(broker_err(corr, e)),
            }
        }
        Verb::Fetch => {
            f.require_fields(5)?;
            let (topic, group, consumer) = (f.get(0), f.get(1), f.get(2));
            let max: usize = f.parse(3)?;
            let mode: ConsumerMode = f.parse(4)?;
            if let Err(e) = shared.broker.join_group(topic, group, consumer) {
                return Ok(broker_err(corr, e));
            }
            conn.consumers
                .lock()
                .insert((topic.to_string(), group.to_string(), consumer.to_string()));
            match shared.broker.fetch(topic, group, consumer, (max > 0).then_some(max), mode) {
                Ok(recs) => Ok(Frame::ok(corr).field(recs.len()).with_payload(protocol::encode_records(&recs))),
                Err(e) => Ok(broker_err(corr, e)),
            }
        }
        Verb::Commit => {
            f.require_fields(5)?;
            let delete = f.get(3) == "1";
            let Some(offsets) = protocol::decode_offsets(f.get(4)) else {
                return Ok(Frame::err(corr, codes::MALFORMED, "bad offset list"));
            };
            match shared.broker.commit(f.get(0), f.get(1), f.get(2), &offsets, delete) {
                Ok(()) => Ok(Frame::ok(corr)),
                Err(e) => Ok(broker_err(corr, e)),
            }
        }
        other => Ok(Frame::err(corr, codes::UNSUPPORTED, format!("{other} is not a request verb"))),
    }
}

fn add_consumer(
    shared: &Shared,
    conn_id: ConnId,
    conn: &Conn,
    id: &str,
    consumer: &str,
    group: &str,
) -> Result<(), Frame> {
    shared
        .registry
        .lock()
        .check_access(id, consumer, Role::Consumer, group, Some(conn_id))
        .map_err(|e| registry_err(0, e))?;
    shared
        .broker
        .join_group(id, group, consumer)
        .map_err(|e| broker_err(0, e))?;
    let fresh = conn
        .consumers
        .lock()
        .insert((id.to_string(), group.to_string(), consumer.to_string()));
    if fresh {
        log_line("ADDCONS", id, consumer, group);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn poll(
    shared: &Shared,
    conn_id: ConnId,
    conn: &Conn,
    id: &str,
    consumer: &str,
    group: &str,
    max: Option<usize>,
    timeout: Duration,
) -> Result<Frame, Frame> {
    add_consumer(shared, conn_id, conn, id, consumer, group)?;
    let (kind, mode) = {
        let reg = shared.registry.lock();
        let e = reg.entry(id).map_err(|e| registry_err(0, e))?;
        (e.info().kind, e.info().consumer_mode)
    };
    let broker = &shared.broker;
    if mode == ConsumerMode::AtLeastOnce {
        broker
            .commit_in_flight(id, group, consumer, false)
            .map_err(|e| broker_err(0, e))?;
    }
    let deadline = Instant::now() + timeout;
    let tick = shared.monitor.tick();
    loop {
        let seq = broker.seq(id).map_err(|e| broker_err(0, e))?;
        // read before fetching: if the stream was already closed, nothing can
        // be appended after this fetch
        let closed = shared.registry.lock().status(id).map_err(|e| registry_err(0, e))?;
        if kind == StreamKind::File {
            let _ = shared.monitor.scan_once(id);
        }
        let recs = broker
            .fetch(id, group, consumer, max, mode)
            .map_err(|e| broker_err(0, e))?;
        if mode == ConsumerMode::ExactlyOnce && !recs.is_empty() {
            let offs: Vec<(u32, u64)> = recs.iter().map(|r| (r.partition, r.offset)).collect();
            broker
                .commit(id, group, consumer, &offs, true)
                .map_err(|e| broker_err(0, e))?;
        }
        let now = Instant::now();
        if !recs.is_empty() || closed || now >= deadline {
            let drained = closed && recs.is_empty() && {
                let (fetchable, leased) = broker.pending(id, group).map_err(|e| broker_err(0, e))?;
                fetchable == 0 && leased == 0
            };
            let elems: Vec<WireElement> = recs
                .into_iter()
                .map(|r| WireElement {
                    publish_time: r.publish_time,
                    payload: r.value,
                })
                .collect();
            return Ok(Frame::ok(0)
                .field(u8::from(closed))
                .field(u8::from(drained))
                .with_payload(protocol::encode_elements(&elems)));
        }
        let wait = (deadline - now).min(tick);
        broker.wait_for_change(id, seq, wait);
    }
}

/// Writes a raw byte sequence to a socket; used by tests to inject garbage.
pub fn write_raw(stream: &mut TcpStream, bytes: &[u8]) -> std::io::Result<()> {
    stream.write_all(bytes)?;
    stream.flush()
}
