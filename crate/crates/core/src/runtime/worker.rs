//! Remote workers. A worker process connects to the master, announces its
//! cores, then runs the jobs it is sent and reports their outputs.
//!
//! Messages are a length-prefixed JSON header followed by a length-prefixed
//! binary payload. EXEC and DONE payloads carry the parameter values as a
//! sequence of blobs, each prefixed with one presence byte.

use std::collections::HashMap;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::executor::{run_job, ExecEnv, JobSpec, MethodRegistry, TaskError, Values};
use super::task::TaskId;
use super::WeakInner;
use crate::client::Client;
use crate::codec::{decode_seq, encode_seq};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Msg {
    Hello { name: String, cores: u32 },
    Welcome { worker: usize },
    Exec { spec: JobSpec, attempt: u32 },
    Done { task: TaskId, attempt: u32 },
    Fail { task: TaskId, attempt: u32, message: String },
}

fn write_msg<W: Write>(w: &mut W, msg: &Msg, payload: &[u8]) -> io::Result<()> {
    let header = serde_json::to_vec(msg).map_err(io::Error::other)?;
    w.write_all(&(header.len() as u32).to_be_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(payload.len() as u32).to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

fn read_blob<R: Read>(r: &mut R) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut buf = vec![0; u32::from_be_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// `Ok(None)` on a clean end of stream.
fn read_msg<R: Read>(r: &mut R) -> io::Result<Option<(Msg, Vec<u8>)>> {
    let header = match read_blob(r) {
        Ok(h) => h,
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    };
    let msg = serde_json::from_slice(&header).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    Ok(Some((msg, read_blob(r)?)))
}

pub fn encode_values(values: &[Option<Vec<u8>>]) -> Vec<u8> {
    encode_seq(values.iter().map(|v| match v {
        Some(b) => [&[1u8][..], b].concat(),
        None => vec![0u8],
    }))
}

pub fn decode_values(buf: &[u8]) -> io::Result<Values> {
    let items = decode_seq(buf).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    items
        .into_iter()
        .map(|b| match b.split_first() {
            Some((1, rest)) => Ok(Some(rest.to_vec())),
            Some((0, _)) => Ok(None),
            _ => Err(io::Error::new(io::ErrorKind::InvalidData, "bad value blob")),
        })
        .collect()
}

/// Master-side connection to one remote worker.
pub(crate) struct RemoteLink {
    writer: Mutex<BufWriter<TcpStream>>,
    stream: TcpStream,
}

impl RemoteLink {
    pub(crate) fn send_exec(&self, attempt: u32, spec: &JobSpec, inputs: &[Option<Vec<u8>>]) -> io::Result<()> {
        let msg = Msg::Exec {
            spec: spec.clone(),
            attempt,
        };
        write_msg(&mut *self.writer.lock(), &msg, &encode_values(inputs))
    }

    pub(crate) fn welcome(&self, worker: usize) -> io::Result<()> {
        write_msg(&mut *self.writer.lock(), &Msg::Welcome { worker }, &[])
    }

    pub(crate) fn disconnect(&self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

/// Accepts worker connections for a runtime.
pub(crate) struct Listener {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl Listener {
    pub(crate) fn start(addr: &str, inner: WeakInner) -> io::Result<Listener> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = std::thread::Builder::new()
            .name("worker-listener".into())
            .spawn(move || {
                for conn in listener.incoming() {
                    if flag.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(conn) = conn else { continue };
                    let inner = inner.clone();
                    let _ = std::thread::Builder::new()
                        .name("worker-conn".into())
                        .spawn(move || {
                            if let Err(e) = serve_worker(conn, inner) {
                                tracing::warn!("worker connection: {e}");
                            }
                        });
                }
            })?;
        Ok(Listener {
            addr,
            stop,
            thread: Some(thread),
        })
    }

    pub(crate) fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub(crate) fn stop(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn serve_worker(conn: TcpStream, inner: WeakInner) -> io::Result<()> {
    conn.set_nodelay(true)?;
    let mut reader = BufReader::new(conn.try_clone()?);
    let Some((Msg::Hello { name, cores }, _)) = read_msg(&mut reader)? else {
        return Ok(());
    };
    let link = Arc::new(RemoteLink {
        writer: Mutex::new(BufWriter::new(conn.try_clone()?)),
        stream: conn,
    });
    let Some(rt) = inner.upgrade() else { return Ok(()) };
    let w = rt.add_remote_worker(&name, cores, link.clone())?;
    drop(rt);
    tracing::info!("worker {name} joined as {w} with {cores} cores");
    loop {
        let next = read_msg(&mut reader);
        let Some(rt) = inner.upgrade() else { return Ok(()) };
        match next {
            Ok(Some((Msg::Done { task, attempt }, payload))) => {
                let result = decode_values(&payload).map_err(|e| TaskError(format!("bad DONE payload: {e}")));
                rt.complete(task, w, attempt, result);
            }
            Ok(Some((Msg::Fail { task, attempt, message }, _))) => {
                rt.complete(task, w, attempt, Err(TaskError(message)));
            }
            Ok(Some(_)) => tracing::warn!("worker {w}: unexpected message"),
            Ok(None) | Err(_) => {
                rt.worker_lost(w);
                return Ok(());
            }
        }
    }
}

/// A connected worker process.
pub struct Worker {
    stream: TcpStream,
    id: usize,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl Worker {
    /// Connects to the master and starts serving jobs in the background.
    pub fn connect(master: &str, name: &str, cores: u32, registry: MethodRegistry) -> io::Result<Worker> {
        let stream = TcpStream::connect(master)?;
        stream.set_nodelay(true)?;
        let writer = Arc::new(Mutex::new(BufWriter::new(stream.try_clone()?)));
        let mut reader = BufReader::new(stream.try_clone()?);
        write_msg(
            &mut *writer.lock(),
            &Msg::Hello {
                name: name.to_string(),
                cores,
            },
            &[],
        )?;
        let id = match read_msg(&mut reader)? {
            Some((Msg::Welcome { worker }, _)) => worker,
            _ => return Err(io::Error::new(io::ErrorKind::InvalidData, "expected a welcome")),
        };
        let registry = Arc::new(registry);
        let thread = std::thread::Builder::new()
            .name(format!("worker-{name}"))
            .spawn(move || serve_master(reader, writer, registry))?;
        Ok(Worker {
            stream,
            id,
            thread: Some(thread),
        })
    }

    /// Index the master assigned to this worker.
    pub fn id(&self) -> usize {
        self.id
    }

    /// Blocks until the master disconnects.
    pub fn join(mut self) -> io::Result<()> {
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(io::Error::other("worker thread panicked"))),
            None => Ok(()),
        }
    }

    /// Drops the connection as a crashed node would.
    pub fn kill(&self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

/// Connects and serves until the master goes away.
pub fn run_worker(master: &str, name: &str, cores: u32, registry: MethodRegistry) -> io::Result<()> {
    Worker::connect(master, name, cores, registry)?.join()
}

type Clients = Arc<Mutex<HashMap<String, Arc<Client>>>>;

fn serve_master(
    mut reader: BufReader<TcpStream>,
    writer: Arc<Mutex<BufWriter<TcpStream>>>,
    registry: Arc<MethodRegistry>,
) -> io::Result<()> {
    let clients: Clients = Arc::default();
    while let Some((msg, payload)) = read_msg(&mut reader)? {
        let Msg::Exec { spec, attempt } = msg else { continue };
        let (writer, registry, clients) = (writer.clone(), registry.clone(), clients.clone());
        std::thread::spawn(move || {
            let task = spec.task_id;
            let result = decode_values(&payload)
                .map_err(|e| TaskError(format!("bad EXEC payload: {e}")))
                .and_then(|inputs| {
                    let env = ExecEnv {
                        stream_client: stream_client(&clients, spec.stream_server.as_deref())?,
                        runtime: None,
                    };
                    run_job(&registry, &spec, &inputs, &env)
                });
            let mut w = writer.lock();
            let sent = match result {
                Ok(values) => write_msg(&mut *w, &Msg::Done { task, attempt }, &encode_values(&values)),
                Err(e) => write_msg(
                    &mut *w,
                    &Msg::Fail {
                        task,
                        attempt,
                        message: e.0,
                    },
                    &[],
                ),
            };
            if let Err(e) = sent {
                tracing::warn!("reporting task {task}: {e}");
            }
        });
    }
    Ok(())
}

/// One stream client per server address, created on first use.
fn stream_client(clients: &Clients, addr: Option<&str>) -> Result<Option<Arc<Client>>, TaskError> {
    let Some(addr) = addr else { return Ok(None) };
    let mut map = clients.lock();
    if let Some(c) = map.get(addr).filter(|c| c.is_connected()) {
        return Ok(Some(c.clone()));
    }
    let c = Arc::new(Client::connect(addr).map_err(|e| TaskError(format!("stream server {addr}: {e}")))?);
    map.insert(addr.to_string(), c.clone());
    Ok(Some(c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_roundtrip_keeps_absent_and_empty_apart() {
        let v: Values = vec![None, Some(vec![]), Some(b"xyz".to_vec())];
        assert_eq!(decode_values(&encode_values(&v)).unwrap(), v);
    }

    #[test]
    fn messages_roundtrip() {
        let mut buf = Vec::new();
        let m = Msg::Fail {
            task: 3,
            attempt: 1,
            message: "x".into(),
        };
        write_msg(&mut buf, &m, b"pay").unwrap();
        let (back, payload) = read_msg(&mut &buf[..]).unwrap().unwrap();
        assert_eq!((back, payload), (m, b"pay".to_vec()));
        assert!(read_msg(&mut &[][..]).unwrap().is_none());
    }
}
