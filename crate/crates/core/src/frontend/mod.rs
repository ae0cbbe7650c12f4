//! Socket front-end: frames TCP and UDP requests into the pipeline and routes
//! each response back to its client.
//!
//! Sockets feed one ingress pump through a bounded queue. The pump records a
//! route per request in an in-order tag queue and writes the request words.
//! Since the pipeline keeps request order, the egress router pairs each
//! finished response with the oldest outstanding route.

mod framing;

use std::io::{self, Read, Write};
use std::net::{IpAddr, Ipv4Addr, Shutdown, SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

pub use framing::*;

use crate::parser::ParserConfig;
use crate::pipeline::{build_pipeline, ConfigError, PipelineConfig, StageThreads, Stages};
use crate::wordstream::{pack, Consumer, Producer, StreamWord};

pub const DEFAULT_PORT: u16 = 11211;

/// How often blocked socket threads look at the stop flag.
const POLL_INTERVAL: Duration = Duration::from_millis(50);
const WRITE_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServerConfig {
    pub listen: IpAddr,
    pub tcp_port: u16,
    /// `None` disables UDP.
    pub udp_port: Option<u16>,
    pub pipeline: PipelineConfig,
    /// Framed requests waiting for the ingress pump.
    pub queue_depth: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            listen: IpAddr::V4(Ipv4Addr::LOCALHOST),
            tcp_port: DEFAULT_PORT,
            udp_port: Some(DEFAULT_PORT),
            pipeline: PipelineConfig::default(),
            queue_depth: 1024,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Counters shared by the front-end threads.
#[derive(Debug, Default)]
pub struct ServerStats {
    pub requests: AtomicU64,
    pub responses: AtomicU64,
    pub udp_dropped: AtomicU64,
    /// Responses whose TCP connection was gone.
    pub discarded: AtomicU64,
}

/// Write half of a TCP connection.
#[derive(Debug)]
struct Conn {
    stream: Mutex<TcpStream>,
}

/// Where a response goes.
#[derive(Debug)]
enum Route {
    Tcp { conn: Arc<Conn>, close: bool },
    Udp { peer: SocketAddr, request_id: u16 },
}

struct Inbound {
    route: Route,
    bytes: Vec<u8>,
}

pub struct Server {
    tcp_addr: SocketAddr,
    udp_addr: Option<SocketAddr>,
    stop: Arc<AtomicBool>,
    stats: Arc<ServerStats>,
    threads: Vec<JoinHandle<()>>,
    stages: StageThreads,
}

impl Server {
    pub fn start(cfg: &ServerConfig) -> Result<Server, ServerError> {
        if cfg.queue_depth == 0 {
            return Err(ConfigError::new("queue_depth", "must be positive").into());
        }
        let pipeline = build_pipeline(&cfg.pipeline)?;
        let listener = TcpListener::bind((cfg.listen, cfg.tcp_port))?;
        listener.set_nonblocking(true)?;
        let udp = cfg.udp_port.map(|p| UdpSocket::bind((cfg.listen, p))).transpose()?;
        let tcp_addr = listener.local_addr()?;
        let udp_addr = udp.as_ref().map(UdpSocket::local_addr).transpose()?;

        let stop = Arc::new(AtomicBool::new(false));
        let stats = Arc::new(ServerStats::default());
        let (in_tx, in_rx) = mpsc::sync_channel::<Inbound>(cfg.queue_depth);
        let (tag_tx, tag_rx) = mpsc::channel::<Route>();
        let udp_out = udp.as_ref().map(UdpSocket::try_clone).transpose()?;
        let limits = frame_limits(&cfg.pipeline.parser);

        let mut threads = Vec::new();
        let (s, st) = (stop.clone(), stats.clone());
        threads.push(spawn("ingress", move || ingress_pump(in_rx, tag_tx, pipeline.ingress, &s, &st)));
        let (s, st) = (stop.clone(), stats.clone());
        threads.push(spawn("egress", move || egress_router(pipeline.egress, tag_rx, udp_out, &s, &st)));
        let (s, tx) = (stop.clone(), in_tx.clone());
        threads.push(spawn("accept", move || accept_loop(listener, tx, limits, &s)));
        if let Some(sock) = udp {
            let (s, st) = (stop.clone(), stats.clone());
            sock.set_read_timeout(Some(POLL_INTERVAL))?;
            threads.push(spawn("udp", move || udp_loop(sock, in_tx, &s, &st)));
        }
        Ok(Server { tcp_addr, udp_addr, stop, stats, threads, stages: pipeline.stages.spawn() })
    }

    pub fn tcp_addr(&self) -> SocketAddr {
        self.tcp_addr
    }

    pub fn udp_addr(&self) -> Option<SocketAddr> {
        self.udp_addr
    }

    pub fn stats(&self) -> &ServerStats {
        &self.stats
    }

    /// Stops accepting, stops every thread and returns the pipeline stages.
    pub fn shutdown(self) -> Stages {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads {
            t.join().expect("front-end thread");
        }
        self.stages.stop()
    }
}

fn spawn(name: &str, f: impl FnOnce() + Send + 'static) -> JoinHandle<()> {
    thread::Builder::new().name(format!("kvpipe-{name}")).spawn(f).expect("spawn thread")
}

fn frame_limits(p: &ParserConfig) -> FrameLimits {
    FrameLimits { limits: p.limits, max_line: p.max_line }
}

fn accept_loop(listener: TcpListener, tx: SyncSender<Inbound>, limits: FrameLimits, stop: &Arc<AtomicBool>) {
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let (tx, stop) = (tx.clone(), stop.clone());
                spawn("conn", move || {
                    if let Err(e) = serve_connection(stream, tx, limits, &stop) {
                        log::debug!("connection {peer}: {e}");
                    }
                });
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL_INTERVAL / 5),
            Err(e) => log::warn!("accept: {e}"),
        }
    }
}

/// Reads one connection, forwarding each framed request. A full ingress
/// queue blocks the send, which pauses reading.
fn serve_connection(
    stream: TcpStream,
    tx: SyncSender<Inbound>,
    limits: FrameLimits,
    stop: &AtomicBool,
) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(POLL_INTERVAL))?;
    stream.set_write_timeout(Some(WRITE_TIMEOUT))?;
    let conn = Arc::new(Conn { stream: Mutex::new(stream.try_clone()?) });
    let mut reader = stream;
    let mut buf = Vec::new();
    let mut chunk = vec![0u8; 16 * 1024];
    while !stop.load(Ordering::Relaxed) {
        loop {
            let (n, close) = match frame_request(&buf, &limits) {
                Frame::Incomplete => break,
                Frame::Request(n) => (n, false),
                Frame::Unframeable(n) => (n, true),
            };
            let bytes = buf.drain(..n).collect();
            if tx.send(Inbound { route: Route::Tcp { conn: conn.clone(), close }, bytes }).is_err() {
                return Ok(());
            }
            if close {
                return Ok(());
            }
        }
        match reader.read(&mut chunk) {
            Ok(0) => return Ok(()),
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

fn udp_loop(sock: UdpSocket, tx: SyncSender<Inbound>, stop: &AtomicBool, stats: &ServerStats) {
    let mut buf = vec![0u8; 64 * 1024];
    while !stop.load(Ordering::Relaxed) {
        let (n, peer) = match sock.recv_from(&mut buf) {
            Ok(r) => r,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
            Err(e) => {
                log::warn!("udp receive: {e}");
                continue;
            }
        };
        let Some((h, payload)) = parse_datagram(&buf[..n]) else {
            stats.udp_dropped.fetch_add(1, Ordering::Relaxed);
            continue;
        };
        let msg = Inbound { route: Route::Udp { peer, request_id: h.request_id }, bytes: payload.to_vec() };
        match tx.try_send(msg) {
            Ok(()) => {}
            Err(TrySendError::Full(_)) => {
                stats.udp_dropped.fetch_add(1, Ordering::Relaxed);
            }
            Err(TrySendError::Disconnected(_)) => return,
        }
    }
}

/// The single writer of the pipeline's ingress channel.
fn ingress_pump(
    rx: Receiver<Inbound>,
    tags: Sender<Route>,
    ingress: Producer<StreamWord>,
    stop: &AtomicBool,
    stats: &ServerStats,
) {
    while !stop.load(Ordering::Relaxed) {
        let msg = match rx.recv_timeout(POLL_INTERVAL) {
            Ok(m) => m,
            Err(RecvTimeoutError::Timeout) => continue,
            Err(RecvTimeoutError::Disconnected) => return,
        };
        if tags.send(msg.route).is_err() {
            return;
        }
        stats.requests.fetch_add(1, Ordering::Relaxed);
        for w in pack(&msg.bytes) {
            let mut w = w;
            while let Err(back) = ingress.try_write(w) {
                if stop.load(Ordering::Relaxed) {
                    return;
                }
                w = back;
                thread::yield_now();
            }
        }
    }
}

/// The single reader of the pipeline's egress channel.
fn egress_router(
    egress: Consumer<StreamWord>,
    tags: Receiver<Route>,
    udp: Option<UdpSocket>,
    stop: &AtomicBool,
    stats: &ServerStats,
) {
    let mut response = Vec::new();
    let mut idle = 0u32;
    while !stop.load(Ordering::Relaxed) {
        let Some(w) = egress.try_read() else {
            idle = idle.saturating_add(1);
            if idle > 1024 {
                thread::sleep(Duration::from_micros(50));
            } else {
                thread::yield_now();
            }
            continue;
        };
        idle = 0;
        response.extend_from_slice(w.bytes());
        if !w.last {
            continue;
        }
        let route = tags.recv().expect("every response has a route");
        stats.responses.fetch_add(1, Ordering::Relaxed);
        match route {
            Route::Tcp { conn, close } => {
                let mut s = conn.stream.lock().expect("connection lock");
                if s.write_all(&response).is_err() {
                    stats.discarded.fetch_add(1, Ordering::Relaxed);
                }
                if close {
                    let _ = s.shutdown(Shutdown::Both);
                }
            }
            Route::Udp { peer, request_id } => {
                if let Some(sock) = &udp {
                    if let Err(e) = sock.send_to(&response_datagram(request_id, &response), peer) {
                        log::debug!("udp send to {peer}: {e}");
                    }
                }
            }
        }
        response.clear();
    }
}
