use std::collections::{HashSet, VecDeque};
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpStream, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::edge::sleep_until;
use super::shaper::{ShaperConfig, TokenBucket};
use super::wire::{chunk_payload, FrameDecoder, MsgType, WireFrame, HEADER_LEN, MAX_CHUNK_PAYLOAD};
use super::{EmpiricalReport, EmuError, Transport};
use crate::catalog::StreamSpec;
use crate::engine::DEFAULT_QUEUE_BOUND;
use crate::link::LinkProfile;
use crate::units::Exact;

/// Chunks are kept well below the wire limit so the token bucket paces a
/// frame instead of releasing it in one burst, and so a chunk fits in a
/// single UDP datagram.
pub const DEFAULT_CHUNK_BYTES: usize = 32 * 1024;

const POLL: Duration = Duration::from_millis(20);

#[derive(Clone, Debug)]
pub struct DeviceConfig {
    pub endpoint: SocketAddr,
    pub transport: Transport,
    pub stream_id: u8,
    pub frame_bits: u64,
    pub frame_interval: Duration,
    pub duration: Duration,
    pub chunk_bytes: usize,
    pub shaper: ShaperConfig,
    pub queue_bound: usize,
    /// How long to wait for outstanding commands once sending is done.
    pub drain_grace: Duration,
    pub connect_timeout: Duration,
}

impl DeviceConfig {
    /// Shaping at the profile's uplink rate, half the mean RTT added each way.
    pub fn for_profile(
        endpoint: SocketAddr,
        profile: &LinkProfile,
        stream: &StreamSpec,
        duration: Duration,
    ) -> Result<Self, EmuError> {
        let interval = stream
            .frame_interval
            .ok_or_else(|| EmuError::Config(format!("stream {} is not periodic", stream.id)))?;
        let one_way = Duration::from_secs_f64(profile.rtt_mean.as_f64() / 2.0 / 1e3);
        let chunk_bytes = DEFAULT_CHUNK_BYTES;
        Ok(DeviceConfig {
            endpoint,
            transport: Transport::Tcp,
            stream_id: 0,
            frame_bits: stream.frame_bits(),
            frame_interval: interval_duration(&interval),
            duration,
            chunk_bytes,
            shaper: ShaperConfig {
                rate: profile.uplink_rate,
                bucket_depth_bits: ((HEADER_LEN + chunk_bytes) * 8) as u64,
                added_one_way_delay: one_way,
            },
            queue_bound: DEFAULT_QUEUE_BOUND,
            drain_grace: Duration::from_secs(1),
            connect_timeout: Duration::from_secs(2),
        })
    }

    pub fn validate(&self) -> Result<(), EmuError> {
        let bad = |m: &str| Err(EmuError::Config(m.to_string()));
        if self.frame_interval.is_zero() {
            return bad("frame interval must be positive");
        }
        if self.frame_bits == 0 {
            return bad("frame size must be positive");
        }
        if self.chunk_bytes == 0 || self.chunk_bytes > MAX_CHUNK_PAYLOAD {
            return bad("chunk size must be between 1 byte and 1 MiB");
        }
        if self.transport == Transport::Udp && self.chunk_bytes + HEADER_LEN > 65_507 {
            return bad("chunk does not fit in a UDP datagram");
        }
        if self.queue_bound == 0 {
            return bad("queue bound must be at least one frame");
        }
        self.shaper.validate(((HEADER_LEN + self.chunk_bytes) * 8) as u64).map_err(EmuError::Config)
    }
}

/// Rounded up to whole nanoseconds, so `k * interval` never lands before
/// the exact generation instant.
fn interval_duration(seconds: &Exact) -> Duration {
    let ns = seconds * Exact::from_integer(1_000_000_000);
    Duration::from_nanos(ns.ceil().to_integer().max(0) as u64)
}

#[derive(Default)]
struct SendQueue {
    frames: VecDeque<(u32, u64)>,
    closed: bool,
    superseded: u64,
}

#[derive(Default)]
struct SendStats {
    frames_sent: u64,
    bits: u64,
    first_release: Option<Duration>,
    last_release: Option<Duration>,
}

#[derive(Default)]
struct Received {
    seqs: HashSet<u32>,
    samples_ms: Vec<f64>,
    malformed: u64,
}

enum Link {
    Tcp(TcpStream),
    Udp(UdpSocket),
}

impl Link {
    fn connect(cfg: &DeviceConfig) -> Result<Link, EmuError> {
        let unreachable = |source| EmuError::Unreachable { addr: cfg.endpoint, source };
        match cfg.transport {
            Transport::Tcp => {
                let s = TcpStream::connect_timeout(&cfg.endpoint, cfg.connect_timeout).map_err(unreachable)?;
                s.set_nodelay(true)?;
                s.set_read_timeout(Some(POLL))?;
                Ok(Link::Tcp(s))
            }
            Transport::Udp => {
                let bind: SocketAddr = if cfg.endpoint.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" }.parse().expect("literal");
                let s = UdpSocket::bind(bind)?;
                s.connect(cfg.endpoint).map_err(unreachable)?;
                // No handshake in UDP; a probe round trip proves someone listens.
                s.set_read_timeout(Some(cfg.connect_timeout))?;
                let probe = WireFrame { msg_type: MsgType::Probe, stream_id: 0, flags: 1, seq: 0, send_ts_ns: 0, payload: vec![] };
                s.send(&probe.encode()).map_err(unreachable)?;
                let mut buf = [0u8; 64];
                s.recv(&mut buf).map_err(unreachable)?;
                s.set_read_timeout(Some(POLL))?;
                Ok(Link::Udp(s))
            }
        }
    }

    fn try_clone(&self) -> io::Result<Link> {
        Ok(match self {
            Link::Tcp(s) => Link::Tcp(s.try_clone()?),
            Link::Udp(s) => Link::Udp(s.try_clone()?),
        })
    }

    fn send(&mut self, bytes: &[u8]) -> io::Result<()> {
        match self {
            Link::Tcp(s) => s.write_all(bytes),
            Link::Udp(s) => s.send(bytes).map(|_| ()),
        }
    }

    fn close(&self) {
        if let Link::Tcp(s) = self {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
    }
}

/// Streams frames to the edge for the configured duration and reports what
/// came back.
pub fn run_device(cfg: &DeviceConfig) -> Result<EmpiricalReport, EmuError> {
    cfg.validate()?;
    let link = Link::connect(cfg)?;
    let epoch = Instant::now();
    let now_ns = move || epoch.elapsed().as_nanos() as u64;
    let one_way = cfg.shaper.added_one_way_delay;

    let queue = Arc::new((Mutex::new(SendQueue::default()), Condvar::new()));
    let stats = Arc::new(Mutex::new(SendStats::default()));
    let received = Arc::new(Mutex::new(Received::default()));
    let stop = Arc::new(AtomicBool::new(false));

    // Delay line: constant delay keeps release order, so a FIFO suffices.
    let (wire_tx, wire_rx) = mpsc::channel::<(Instant, Vec<u8>)>();
    let mut out = link.try_clone()?;
    let writer = thread::spawn(move || -> io::Result<()> {
        for (due, bytes) in wire_rx {
            sleep_until(due);
            out.send(&bytes)?;
        }
        Ok(())
    });

    let shaper = {
        let (queue, stats, cfg) = (queue.clone(), stats.clone(), cfg.clone());
        thread::spawn(move || {
            let mut bucket = TokenBucket::new(cfg.shaper.rate, cfg.shaper.bucket_depth_bits, epoch.elapsed());
            let frame_bytes = cfg.frame_bits.div_ceil(8) as usize;
            loop {
                let next = {
                    let (lock, cvar) = &*queue;
                    let mut q = lock.lock().expect("queue lock");
                    while q.frames.is_empty() && !q.closed {
                        q = cvar.wait(q).expect("queue lock");
                    }
                    q.frames.pop_front()
                };
                let Some((seq, ts)) = next else { break };
                for chunk in chunk_payload(MsgType::Frame, cfg.stream_id, seq, ts, frame_bytes, cfg.chunk_bytes) {
                    let bytes = chunk.encode();
                    let bits = (bytes.len() * 8) as u64;
                    loop {
                        let now = epoch.elapsed();
                        let wait = bucket.wait_for(bits, now);
                        if wait.is_zero() && bucket.try_consume(bits, now) {
                            break;
                        }
                        thread::sleep(wait.max(Duration::from_micros(50)));
                    }
                    let released = epoch.elapsed();
                    {
                        let mut s = stats.lock().expect("stats lock");
                        s.bits += bits;
                        s.first_release.get_or_insert(released);
                        s.last_release = Some(released);
                    }
                    if wire_tx.send((epoch + released + one_way, bytes)).is_err() {
                        return;
                    }
                }
                stats.lock().expect("stats lock").frames_sent += 1;
            }
        })
    };

    let receiver = {
        let (received, stop) = (received.clone(), stop.clone());
        let mut inbound = link.try_clone()?;
        thread::spawn(move || {
            let mut decoder = FrameDecoder::new();
            let mut buf = vec![0u8; 65_536];
            let mut datagram_malformed = 0;
            while !stop.load(Ordering::SeqCst) {
                let n = match &mut inbound {
                    Link::Tcp(s) => s.read(&mut buf),
                    Link::Udp(s) => s.recv(&mut buf),
                };
                let arrival = now_ns();
                let mut msgs = Vec::new();
                match n {
                    Ok(0) if matches!(inbound, Link::Tcp(_)) => break,
                    Ok(n) => match &inbound {
                        Link::Tcp(_) => {
                            decoder.push(&buf[..n]);
                            while let Some(m) = decoder.next_frame() {
                                msgs.push(m);
                            }
                        }
                        Link::Udp(_) => match WireFrame::decode(&buf[..n]) {
                            Ok((m, used)) if used == n => msgs.push(m),
                            _ => datagram_malformed += 1,
                        },
                    },
                    Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
                    Err(e) => {
                        log::debug!("device: receive failed: {e}");
                        break;
                    }
                }
                let mut r = received.lock().expect("received lock");
                r.malformed = decoder.malformed() + datagram_malformed;
                for m in msgs.into_iter().filter(|m| m.msg_type == MsgType::Command) {
                    if r.seqs.insert(m.seq) {
                        // The return leg delay is virtual: add it to the
                        // measured arrival instead of holding the message.
                        let lat = arrival + one_way.as_nanos() as u64 - m.send_ts_ns.min(arrival);
                        r.samples_ms.push(lat as f64 / 1e6);
                    }
                }
            }
        })
    };

    // Frame k (k >= 1) is generated at k * interval while before the end.
    let mut generated = 0u64;
    for k in 1u32.. {
        let offset = cfg.frame_interval * k;
        if offset >= cfg.duration {
            break;
        }
        sleep_until(epoch + offset);
        let (lock, cvar) = &*queue;
        let mut q = lock.lock().expect("queue lock");
        if q.frames.len() >= cfg.queue_bound {
            q.frames.pop_front();
            q.superseded += 1;
        }
        q.frames.push_back((k - 1, now_ns()));
        generated += 1;
        cvar.notify_one();
    }
    {
        let (lock, cvar) = &*queue;
        lock.lock().expect("queue lock").closed = true;
        cvar.notify_all();
    }
    let _ = shaper.join();
    let writer_result = writer.join().unwrap_or(Ok(()));

    let sent = stats.lock().expect("stats lock").frames_sent;
    let deadline = Instant::now() + cfg.drain_grace;
    while Instant::now() < deadline && (received.lock().expect("received lock").seqs.len() as u64) < sent {
        thread::sleep(Duration::from_millis(5));
    }
    stop.store(true, Ordering::SeqCst);
    link.close();
    let _ = receiver.join();
    writer_result?;

    let s = stats.lock().expect("stats lock");
    let achieved_ul_mbps = match (s.first_release, s.last_release) {
        (Some(a), Some(b)) if b > a => s.bits as f64 / (b - a).as_secs_f64() / 1e6,
        _ => 0.0,
    };
    let r = received.lock().expect("received lock");
    let delivered = r.samples_ms.len() as u64;
    Ok(EmpiricalReport {
        samples_ms: r.samples_ms.clone(),
        achieved_ul_mbps,
        missed: generated - delivered.min(generated),
        malformed: r.malformed,
        generated,
        delivered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emu::{spawn_edge, EdgeConfig};
    use crate::link::profile;
    use crate::catalog::lookup;

    #[test]
    fn refused_connection_is_unreachable() {
        // Bind then drop to get a port nobody listens on.
        let addr = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
        let cfg = DeviceConfig::for_profile(addr, &profile("5g100opt").unwrap(), &lookup("rgbd_camera").unwrap(), Duration::from_millis(100))
            .unwrap();
        assert!(matches!(run_device(&cfg), Err(EmuError::Unreachable { .. })));
    }

    #[test]
    fn duration_shorter_than_interval_sends_nothing() {
        let edge = spawn_edge(&EdgeConfig {
            endpoint: "127.0.0.1:0".parse().unwrap(),
            processing_delay: Duration::ZERO,
            transport: Transport::Tcp,
        })
        .unwrap();
        let mut cfg = DeviceConfig::for_profile(
            edge.local_addr(),
            &profile("5g100opt").unwrap(),
            &lookup("rgbd_camera").unwrap(),
            Duration::from_millis(10),
        )
        .unwrap();
        cfg.drain_grace = Duration::ZERO;
        let report = run_device(&cfg).unwrap();
        assert_eq!((report.generated, report.delivered, report.missed), (0, 0, 0));
        assert!(report.samples_ms.is_empty());
    }

    #[test]
    fn short_tcp_run_measures_latency_near_analytic() {
        let edge = spawn_edge(&EdgeConfig {
            endpoint: "127.0.0.1:0".parse().unwrap(),
            processing_delay: Duration::ZERO,
            transport: Transport::Tcp,
        })
        .unwrap();
        let cfg = DeviceConfig::for_profile(
            edge.local_addr(),
            &profile("5g100opt").unwrap(),
            &lookup("rgbd_camera").unwrap(),
            Duration::from_secs(1),
        )
        .unwrap();
        let report = run_device(&cfg).unwrap();
        assert_eq!(report.generated, 29);
        assert_eq!(report.delivered + report.missed, report.generated);
        let mean = report.mean_ms().unwrap();
        assert!((mean - 40.798).abs() <= 6.2, "mean {mean}");
        assert_eq!(report.malformed, 0);
    }

    #[test]
    fn udp_mode_round_trips() {
        let edge = spawn_edge(&EdgeConfig {
            endpoint: "127.0.0.1:0".parse().unwrap(),
            processing_delay: Duration::ZERO,
            transport: Transport::Udp,
        })
        .unwrap();
        let mut cfg = DeviceConfig::for_profile(
            edge.local_addr(),
            &profile("5g100opt").unwrap(),
            &lookup("rgbd_camera").unwrap(),
            Duration::from_millis(500),
        )
        .unwrap();
        cfg.transport = Transport::Udp;
        let report = run_device(&cfg).unwrap();
        assert_eq!(report.generated, 14);
        assert!(report.delivered > 0);
    }
}
