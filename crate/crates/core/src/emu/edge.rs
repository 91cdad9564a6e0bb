use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::Serialize;

use super::wire::{FrameDecoder, MsgType, Reassembled, Reassembler, WireFrame, FLAG_LAST_CHUNK};
use super::{EmuError, Transport};

const POLL: Duration = Duration::from_millis(20);

#[derive(Clone, Debug)]
pub struct EdgeConfig {
    pub endpoint: SocketAddr,
    pub processing_delay: Duration,
    pub transport: Transport,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EdgeStats {
    pub frames: u64,
    pub commands: u64,
    pub malformed: u64,
    pub connections: u64,
}

#[derive(Debug, Default)]
struct Counters {
    frames: AtomicU64,
    commands: AtomicU64,
    malformed: AtomicU64,
    connections: AtomicU64,
}

impl Counters {
    fn snapshot(&self) -> EdgeStats {
        EdgeStats {
            frames: self.frames.load(Ordering::Relaxed),
            commands: self.commands.load(Ordering::Relaxed),
            malformed: self.malformed.load(Ordering::Relaxed),
            connections: self.connections.load(Ordering::Relaxed),
        }
    }
}

pub struct EdgeHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    counters: Arc<Counters>,
    thread: Option<JoinHandle<()>>,
}

impl EdgeHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> EdgeStats {
        self.counters.snapshot()
    }

    pub fn shutdown(mut self) -> EdgeStats {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
        self.counters.snapshot()
    }
}

impl Drop for EdgeHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds and serves in a background thread.
pub fn spawn_edge(cfg: &EdgeConfig) -> Result<EdgeHandle, EmuError> {
    let stop = Arc::new(AtomicBool::new(false));
    let counters = Arc::new(Counters::default());
    let (addr, thread) = match cfg.transport {
        Transport::Tcp => {
            let listener = TcpListener::bind(cfg.endpoint)?;
            listener.set_nonblocking(true)?;
            let addr = listener.local_addr()?;
            let (delay, stop, counters) = (cfg.processing_delay, stop.clone(), counters.clone());
            (addr, thread::spawn(move || serve_tcp(listener, delay, &stop, &counters)))
        }
        Transport::Udp => {
            let socket = UdpSocket::bind(cfg.endpoint)?;
            socket.set_read_timeout(Some(POLL))?;
            let addr = socket.local_addr()?;
            let (delay, stop, counters) = (cfg.processing_delay, stop.clone(), counters.clone());
            (addr, thread::spawn(move || serve_udp(socket, delay, &stop, &counters)))
        }
    };
    Ok(EdgeHandle { addr, stop, counters, thread: Some(thread) })
}

/// Serves on the calling thread until `stop` is set.
pub fn run_edge(cfg: &EdgeConfig, stop: Arc<AtomicBool>) -> Result<EdgeStats, EmuError> {
    let handle = spawn_edge(cfg)?;
    log::info!("edge agent listening on {} ({:?})", handle.local_addr(), cfg.transport);
    while !stop.load(Ordering::SeqCst) {
        thread::sleep(POLL);
    }
    Ok(handle.shutdown())
}

fn command_for(done: &Reassembled) -> WireFrame {
    WireFrame {
        msg_type: MsgType::Command,
        stream_id: done.stream_id,
        flags: FLAG_LAST_CHUNK,
        seq: done.seq,
        send_ts_ns: done.send_ts_ns,
        payload: done.send_ts_ns.to_be_bytes().to_vec(),
    }
}

/// Reply produced for one inbound message, if any, and whether it completed
/// a frame.
fn handle_message(msg: WireFrame, reassembler: &mut Reassembler, counters: &Counters) -> Option<(WireFrame, bool)> {
    match msg.msg_type {
        MsgType::Frame => reassembler.push(&msg).map(|done| {
            counters.frames.fetch_add(1, Ordering::Relaxed);
            (command_for(&done), true)
        }),
        MsgType::Probe => Some((msg, false)),
        MsgType::Command => None,
    }
}

fn serve_tcp(listener: TcpListener, delay: Duration, stop: &Arc<AtomicBool>, counters: &Arc<Counters>) {
    let mut workers = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                log::debug!("edge: connection from {peer}");
                counters.connections.fetch_add(1, Ordering::Relaxed);
                let (stop, counters) = (stop.clone(), counters.clone());
                workers.push(thread::spawn(move || {
                    if let Err(e) = serve_connection(stream, delay, &stop, &counters) {
                        log::warn!("edge: connection from {peer} ended: {e}");
                    }
                }));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                log::warn!("edge: accept failed: {e}");
                thread::sleep(POLL);
            }
        }
        workers.retain(|w| !w.is_finished());
    }
    for w in workers {
        let _ = w.join();
    }
}

fn serve_connection(stream: TcpStream, delay: Duration, stop: &AtomicBool, counters: &Counters) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(POLL))?;
    let mut writer = stream.try_clone()?;
    let (tx, rx) = mpsc::channel::<(Instant, Vec<u8>)>();
    let sender = thread::spawn(move || {
        for (due, bytes) in rx {
            sleep_until(due);
            if writer.write_all(&bytes).is_err() {
                break;
            }
        }
    });

    let mut reader = stream;
    let mut decoder = FrameDecoder::new();
    let mut reassembler = Reassembler::new();
    let mut buf = vec![0u8; 64 * 1024];
    let mut seen_malformed = 0;
    let result = loop {
        if stop.load(Ordering::SeqCst) {
            break Ok(());
        }
        match reader.read(&mut buf) {
            Ok(0) => break Ok(()),
            Ok(n) => decoder.push(&buf[..n]),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
            Err(e) => break Err(e),
        }
        while let Some(msg) = decoder.next_frame() {
            if let Some((reply, completed)) = handle_message(msg, &mut reassembler, counters) {
                let due = if completed { Instant::now() + delay } else { Instant::now() };
                if tx.send((due, reply.encode())).is_ok() && completed {
                    counters.commands.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        let m = decoder.malformed();
        counters.malformed.fetch_add(m - seen_malformed, Ordering::Relaxed);
        seen_malformed = m;
    };
    drop(tx);
    let _ = sender.join();
    result
}

fn serve_udp(socket: UdpSocket, delay: Duration, stop: &AtomicBool, counters: &Counters) {
    let Ok(out) = socket.try_clone() else {
        log::warn!("edge: cannot clone UDP socket");
        return;
    };
    let (tx, rx) = mpsc::channel::<(Instant, SocketAddr, Vec<u8>)>();
    let sender = thread::spawn(move || {
        for (due, peer, bytes) in rx {
            sleep_until(due);
            if let Err(e) = out.send_to(&bytes, peer) {
                log::debug!("edge: send to {peer} failed: {e}");
            }
        }
    });
    let mut reassemblers: HashMap<SocketAddr, Reassembler> = HashMap::new();
    let mut buf = vec![0u8; 65_536];
    while !stop.load(Ordering::SeqCst) {
        let (n, peer) = match socket.recv_from(&mut buf) {
            Ok(v) => v,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
            Err(e) => {
                log::debug!("edge: recv failed: {e}");
                continue;
            }
        };
        // One datagram carries exactly one message.
        match WireFrame::decode(&buf[..n]) {
            Ok((msg, used)) if used == n => {
                let r = reassemblers.entry(peer).or_default();
                if let Some((reply, completed)) = handle_message(msg, r, counters) {
                    let due = if completed { Instant::now() + delay } else { Instant::now() };
                    if tx.send((due, peer, reply.encode())).is_ok() && completed {
                        counters.commands.fetch_add(1, Ordering::Relaxed);
                    }
                }
            }
            _ => {
                counters.malformed.fetch_add(1, Ordering::Relaxed);
            }
        }
    }
    drop(tx);
    let _ = sender.join();
}

pub(super) fn sleep_until(due: Instant) {
    let now = Instant::now();
    if due > now {
        thread::sleep(due - now);
    }
}
