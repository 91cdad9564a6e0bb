//! Discrete-event simulation of the device → edge → device control loop.
//!
//! Each periodic stream emits frames on its own clock. Uplink frames are
//! serialized by the uplink scheduler, propagate for half a sampled RTT,
//! wait out the edge processing time, and trigger a command that is
//! serialized on the downlink and propagates for the other half of the RTT.
//! Downlink feedback streams are emitted at the edge and only traverse the
//! downlink. The clock is integer nanoseconds; simultaneous events are
//! ordered by a fixed class rank and then by insertion order, so a run is a
//! pure function of the scenario and seed.

mod trace;

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use num_bigint::BigInt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::catalog::{self, Direction, StreamKind, StreamSpec};
use crate::control::{CommandOutcome, ControlMode, FailsafeConfig, LinkEvent, Mode};
use crate::link::{access_network_latency, frame_transmission_time, sample_rtt, LatencyBudget, LinkProfile, RttModel};
use crate::qos::{q_int, Completion, LinkScheduler, SchedulerPolicy, TransferJob, Q};
use crate::units::{exact_to_f64, Exact, Millis};

pub use trace::{
    ns_to_ms, Counters, EventTrace, FrameRecord, LatencyBreakdown, LatencyStats, Metrics, Outcome, StreamMetrics,
    TRACE_VERSION,
};

/// Frames a stream may have waiting (not yet transmitting) before the
/// oldest is superseded.
pub const DEFAULT_QUEUE_BOUND: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("invalid scenario: `{field}` {reason}")]
    Invalid { field: String, reason: String },
    #[error("crosscheck undefined: {0}")]
    CrosscheckUndefined(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> EngineError {
    EngineError::Invalid { field: field.into(), reason: reason.into() }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EdgeProcessing {
    Fixed(Millis),
    /// Normal(mean, sigma) in milliseconds, resampled until nonnegative.
    TruncatedNormal { mean_ms: f64, sigma_ms: f64 },
}

impl Default for EdgeProcessing {
    fn default() -> Self {
        EdgeProcessing::Fixed(Millis::ZERO)
    }
}

impl EdgeProcessing {
    fn validate(&self) -> Result<(), EngineError> {
        match self {
            EdgeProcessing::Fixed(ms) if ms.is_negative() => Err(invalid("edge_processing_ms", "must be nonnegative")),
            EdgeProcessing::TruncatedNormal { mean_ms, sigma_ms } => {
                if !(mean_ms.is_finite() && *mean_ms >= 0.0) {
                    Err(invalid("edge_processing_ms.mean", "must be a nonnegative number"))
                } else if !(sigma_ms.is_finite() && *sigma_ms >= 0.0) {
                    Err(invalid("edge_processing_ms.sigma", "must be a nonnegative number"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    fn sample_ns(&self, rng: &mut ChaCha8Rng) -> u64 {
        match self {
            EdgeProcessing::Fixed(ms) => ms.to_nanos(),
            EdgeProcessing::TruncatedNormal { mean_ms, sigma_ms } => {
                if *sigma_ms == 0.0 {
                    return (mean_ms * 1e6).round() as u64;
                }
                let normal = Normal::new(*mean_ms, *sigma_ms).expect("validated parameters");
                for _ in 0..64 {
                    let v = normal.sample(rng);
                    if v >= 0.0 {
                        return (v * 1e6).round() as u64;
                    }
                }
                0
            }
        }
    }
}

/// A link outage window, seconds from scenario start.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outage {
    pub start: Exact,
    pub end: Exact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub streams: Vec<StreamSpec>,
    pub link: LinkProfile,
    pub rtt_model: RttModel,
    pub qos: SchedulerPolicy,
    pub edge_processing: EdgeProcessing,
    pub budget: LatencyBudget,
    pub failsafe: FailsafeConfig,
    /// Seconds.
    pub duration: Exact,
    pub seed: u64,
    pub queue_bound: usize,
    pub outages: Vec<Outage>,
}

impl Scenario {
    /// The testbed loop: one RGBD camera uplink and the small command
    /// downlink, deterministic RTT, no edge processing.
    pub fn testbed(link: LinkProfile, duration_s: Exact) -> Self {
        let rtt_model = RttModel::deterministic(link.rtt_mean);
        Scenario {
            streams: vec![
                catalog::lookup("rgbd_camera").expect("builtin stream"),
                catalog::lookup("command").expect("builtin stream"),
            ],
            link,
            rtt_model,
            qos: SchedulerPolicy::strict(),
            edge_processing: EdgeProcessing::default(),
            budget: LatencyBudget::default(),
            failsafe: FailsafeConfig::default(),
            duration: duration_s,
            seed: 0,
            queue_bound: DEFAULT_QUEUE_BOUND,
            outages: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.duration <= Exact::from_integer(0) {
            return Err(invalid("duration_s", "must be positive"));
        }
        let mut ids = std::collections::HashSet::new();
        for (i, s) in self.streams.iter().enumerate() {
            if !ids.insert(s.id.as_str()) {
                return Err(invalid(format!("streams[{i}].id"), format!("duplicate stream id `{}`", s.id)));
            }
            s.validate().map_err(|e| invalid(format!("streams[{i}]"), e.to_string()))?;
        }
        if self.streams.iter().filter(|s| s.kind == StreamKind::Command).count() > 1 {
            return Err(invalid("streams", "at most one command stream"));
        }
        self.link.validate().map_err(|e| invalid("link", e.to_string()))?;
        self.rtt_model.validate().map_err(|e| invalid("rtt_model", e.to_string()))?;
        self.qos.validate().map_err(|e| invalid("qos", e.to_string()))?;
        self.edge_processing.validate()?;
        self.failsafe.validate().map_err(|e| invalid("failsafe", e.to_string()))?;
        if self.queue_bound == 0 {
            return Err(invalid("queue_bound_frames", "must be at least 1"));
        }
        for (i, o) in self.outages.iter().enumerate() {
            if o.start < Exact::from_integer(0) || o.end <= o.start {
                return Err(invalid(format!("link_outages[{i}]"), "needs 0 <= start_s < end_s"));
            }
            if i > 0 && o.start < self.outages[i - 1].end {
                return Err(invalid(format!("link_outages[{i}]"), "windows must be sorted and disjoint"));
            }
        }
        Ok(())
    }

    fn command_spec(&self) -> StreamSpec {
        self.streams
            .iter()
            .find(|s| s.kind == StreamKind::Command)
            .cloned()
            .unwrap_or_else(|| catalog::lookup("command").expect("builtin stream"))
    }
}

fn q_ms_from_ns(ns: u64) -> Q {
    q_int(ns as i128) / q_int(1_000_000)
}

fn q_ms_to_ns_ceil(t: &Q) -> u64 {
    let scaled = t * Q::from_integer(BigInt::from(1_000_000));
    let ceil = scaled.ceil().to_integer();
    u64::try_from(ceil).unwrap_or(u64::MAX)
}

fn seconds_to_ns_floor(s: &Exact) -> u64 {
    (s * 1_000_000_000).floor().to_integer().max(0) as u64
}

/// Same-instant events run in this order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    LinkDown,
    LinkUp,
    Wakeup(usize),
    EdgeArrival(usize),
    EdgeDone(usize),
    DeviceArrival(usize),
    Deadline(usize),
    Generate(usize),
}

struct FrameState {
    up_leg: u64,
    down_leg: u64,
    edge_arrival: u64,
    processing: u64,
    missed: bool,
}

struct Sim<'a> {
    scenario: &'a Scenario,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<(u64, EventKind, u64)>>,
    insertion: u64,
    now: u64,
    end: u64,
    schedulers: [LinkScheduler; 2],
    wakeups: [Option<u64>; 2],
    frames: Vec<FrameRecord>,
    state: Vec<FrameState>,
    job_index: HashMap<(String, u64), usize>,
    next_seq: Vec<u64>,
    command: StreamSpec,
    command_seq: u64,
    control: ControlMode,
    deadline_ns: u64,
}

fn dir_index(d: Direction) -> usize {
    match d {
        Direction::Uplink => 0,
        Direction::Downlink => 1,
    }
}

impl<'a> Sim<'a> {
    fn new(scenario: &'a Scenario) -> Result<Self, EngineError> {
        let sched = |rate| {
            LinkScheduler::new(scenario.qos.clone(), rate).map_err(|e| invalid("qos", e.to_string()))
        };
        Ok(Sim {
            scenario,
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            queue: BinaryHeap::new(),
            insertion: 0,
            now: 0,
            end: seconds_to_ns_floor(&scenario.duration),
            schedulers: [sched(scenario.link.uplink_rate)?, sched(scenario.link.downlink_rate)?],
            wakeups: [None, None],
            frames: Vec::new(),
            state: Vec::new(),
            job_index: HashMap::new(),
            next_seq: vec![0; scenario.streams.len()],
            command: scenario.command_spec(),
            command_seq: 0,
            control: ControlMode::new(scenario.failsafe.clone()).map_err(|e| invalid("failsafe", e.to_string()))?,
            deadline_ns: scenario.failsafe.command_deadline.to_nanos(),
        })
    }

    fn push(&mut self, at: u64, kind: EventKind) {
        self.insertion += 1;
        self.queue.push(Reverse((at, kind, self.insertion)));
    }

    fn generation_time(&self, stream: usize, k: u64) -> Option<u64> {
        let interval = self.scenario.streams[stream].frame_interval?;
        let t = seconds_to_ns_floor(&(interval * k as i128));
        (t < self.end).then_some(t)
    }

    fn run(mut self) -> Result<(EventTrace, Metrics), EngineError> {
        for (i, s) in self.scenario.streams.iter().enumerate() {
            if s.is_periodic() {
                if let Some(t) = self.generation_time(i, 1) {
                    self.push(t, EventKind::Generate(i));
                }
            }
        }
        let outages: Vec<(u64, u64)> = self
            .scenario
            .outages
            .iter()
            .map(|o| (seconds_to_ns_floor(&o.start), seconds_to_ns_floor(&o.end)))
            .collect();
        for (start, end) in outages {
            self.push(start, EventKind::LinkDown);
            self.push(end, EventKind::LinkUp);
        }

        while let Some(Reverse((at, kind, _))) = self.queue.pop() {
            if at > self.end {
                break;
            }
            if at < self.now {
                return Err(EngineError::Internal("event scheduled in the past".into()));
            }
            self.now = at;
            self.drain_completions()?;
            self.handle(kind)?;
            self.reschedule_wakeups();
        }
        let fallback_ns = fallback_time_ns(self.control.history(), self.end);
        for f in self.frames.iter_mut().filter(|f| !f.settled) {
            f.outcome = Outcome::InFlightAtEnd;
        }
        let trace = EventTrace {
            seed: self.scenario.seed,
            duration_s: exact_to_f64(&self.scenario.duration),
            link: self.scenario.link.name.clone(),
            frames: self.frames,
            transitions: self.control.history().to_vec(),
        };
        let metrics = Metrics::from_trace(&trace, self.scenario.budget.upper.to_nanos(), fallback_ns);
        if !metrics.conserved() {
            return Err(EngineError::Internal("frame conservation violated".into()));
        }
        Ok((trace, metrics))
    }

    fn drain_completions(&mut self) -> Result<(), EngineError> {
        let now = q_ms_from_ns(self.now);
        for dir in 0..2 {
            let done = self.schedulers[dir].advance_to(&now).map_err(|e| EngineError::Internal(e.to_string()))?;
            for c in done {
                self.on_transmitted(dir, c)?;
            }
        }
        Ok(())
    }

    fn reschedule_wakeups(&mut self) {
        for dir in 0..2 {
            let next = self.schedulers[dir].peek_next_finish().map(|t| q_ms_to_ns_ceil(&t).max(self.now));
            if next.is_some() && next != self.wakeups[dir] {
                self.wakeups[dir] = next;
                self.push(next.expect("checked"), EventKind::Wakeup(dir));
            }
        }
    }

    fn sample_legs(&mut self) -> Result<(u64, u64), EngineError> {
        let rtt_ms = sample_rtt(&self.scenario.rtt_model, &mut self.rng).map_err(|e| invalid("rtt_model", e.to_string()))?;
        let rtt_ns = match self.scenario.rtt_model.is_deterministic() {
            true => self.scenario.rtt_model.mean.to_nanos(),
            false => (rtt_ms * 1e6).round() as u64,
        };
        let up = rtt_ns / 2;
        Ok((up, rtt_ns - up))
    }

    fn on_transmitted(&mut self, dir: usize, c: Completion) -> Result<(), EngineError> {
        let key = (c.job.stream_id.clone(), c.job.frame_seq);
        let idx = self
            .job_index
            .remove(&key)
            .ok_or_else(|| EngineError::Internal(format!("unknown job {key:?}")))?;
        let start = q_ms_to_ns_ceil(&c.start_time);
        let done = q_ms_to_ns_ceil(&c.finish_time);
        let is_command = c.job.stream_id == self.command.id;
        if dir == 0 {
            let (up, down) = self.sample_legs()?;
            let f = &mut self.frames[idx];
            f.t_tx_start = Some(start);
            f.t_tx_done = Some(done);
            let st = &mut self.state[idx];
            st.up_leg = up;
            st.down_leg = down;
            st.edge_arrival = done + up;
            self.push(done + up, EventKind::EdgeArrival(idx));
        } else if is_command {
            let arrival = done + self.state[idx].down_leg;
            self.push(arrival, EventKind::DeviceArrival(idx));
        } else {
            let (_, down) = self.sample_legs()?;
            let f = &mut self.frames[idx];
            f.t_tx_start = Some(start);
            f.t_tx_done = Some(done);
            self.state[idx].down_leg = down;
            self.push(done + down, EventKind::DeviceArrival(idx));
        }
        Ok(())
    }

    fn handle(&mut self, kind: EventKind) -> Result<(), EngineError> {
        match kind {
            EventKind::Wakeup(dir) => {
                if self.wakeups[dir] == Some(self.now) {
                    self.wakeups[dir] = None;
                }
            }
            EventKind::LinkDown | EventKind::LinkUp => {
                let down = kind == EventKind::LinkDown;
                let now_q = q_ms_from_ns(self.now);
                for s in &mut self.schedulers {
                    s.set_paused(down, &now_q).map_err(|e| EngineError::Internal(e.to_string()))?;
                }
                self.wakeups = [None, None];
                let event = if down { LinkEvent::Down } else { LinkEvent::Up };
                self.control.on_link_event(event, ns_to_ms(self.now)).map_err(|e| EngineError::Internal(e.to_string()))?;
            }
            EventKind::Generate(stream) => self.generate(stream)?,
            EventKind::EdgeArrival(idx) => {
                let processing = self.scenario.edge_processing.sample_ns(&mut self.rng);
                self.state[idx].processing = processing;
                self.push(self.now + processing, EventKind::EdgeDone(idx));
            }
            EventKind::EdgeDone(idx) => {
                self.frames[idx].t_edge_done = Some(self.now);
                let seq = self.command_seq;
                self.command_seq += 1;
                let job = TransferJob {
                    stream_id: self.command.id.clone(),
                    frame_seq: seq,
                    size_bits: self.command.frame_bits(),
                    enqueue_time: q_ms_from_ns(self.now),
                    priority: self.command.priority,
                };
                self.job_index.insert((self.command.id.clone(), seq), idx);
                self.schedulers[1].enqueue(job).map_err(|e| EngineError::Internal(e.to_string()))?;
            }
            EventKind::DeviceArrival(idx) => self.deliver(idx)?,
            EventKind::Deadline(idx) => {
                let f = &self.frames[idx];
                if f.t_cmd_received.is_none() {
                    self.state[idx].missed = true;
                    self.control
                        .on_command_outcome(CommandOutcome::Missed, ns_to_ms(self.now))
                        .map_err(|e| EngineError::Internal(e.to_string()))?;
                }
            }
        }
        Ok(())
    }

    fn generate(&mut self, stream: usize) -> Result<(), EngineError> {
        let spec = &self.scenario.streams[stream];
        let seq = self.next_seq[stream];
        self.next_seq[stream] += 1;
        let dir = dir_index(spec.direction);
        let idx = self.frames.len();
        self.frames.push(FrameRecord::new(&spec.id, seq, spec.direction, spec.frame_bits(), self.now));
        self.state.push(FrameState { up_leg: 0, down_leg: 0, edge_arrival: 0, processing: 0, missed: false });

        let mut waiting = self.schedulers[dir].waiting_seqs(&spec.id);
        while waiting.len() >= self.scenario.queue_bound {
            let oldest = waiting.remove(0);
            self.schedulers[dir].cancel(&spec.id, oldest);
            let victim = self
                .job_index
                .remove(&(spec.id.clone(), oldest))
                .ok_or_else(|| EngineError::Internal("dropped frame not indexed".into()))?;
            self.frames[victim].outcome = Outcome::Dropped;
            self.frames[victim].settled = true;
        }

        if spec.frame_bits() == 0 {
            // Nothing to send; the frame is delivered instantly at the edge.
            self.frames[idx].t_tx_start = Some(self.now);
            self.frames[idx].t_tx_done = Some(self.now);
            if dir == 0 {
                let (up, down) = self.sample_legs()?;
                self.state[idx].up_leg = up;
                self.state[idx].down_leg = down;
                self.state[idx].edge_arrival = self.now + up;
                self.push(self.now + up, EventKind::EdgeArrival(idx));
            } else {
                let (_, down) = self.sample_legs()?;
                self.state[idx].down_leg = down;
                self.push(self.now + down, EventKind::DeviceArrival(idx));
            }
        } else {
            let job = TransferJob {
                stream_id: spec.id.clone(),
                frame_seq: seq,
                size_bits: spec.frame_bits(),
                enqueue_time: q_ms_from_ns(self.now),
                priority: spec.priority,
            };
            self.job_index.insert((spec.id.clone(), seq), idx);
            self.schedulers[dir].enqueue(job).map_err(|e| EngineError::Internal(e.to_string()))?;
        }

        if dir == 0 {
            self.push(self.now.saturating_add(self.deadline_ns), EventKind::Deadline(idx));
        }
        if let Some(t) = self.generation_time(stream, seq + 2) {
            self.push(t, EventKind::Generate(stream));
        }
        Ok(())
    }

    fn deliver(&mut self, idx: usize) -> Result<(), EngineError> {
        let now = self.now;
        let st = &self.state[idx];
        let f = &mut self.frames[idx];
        f.t_cmd_received = Some(now);
        f.outcome = Outcome::Delivered;
        f.settled = true;
        let latency = now - f.t_generated;
        f.control_latency = Some(latency);
        let tx_start = f.t_tx_start.expect("transmitted before delivery");
        let tx_done = f.t_tx_done.expect("transmitted before delivery");
        let breakdown = if f.direction == Direction::Uplink {
            let edge_done = f.t_edge_done.expect("processed before delivery");
            LatencyBreakdown {
                queueing: tx_start - f.t_generated,
                transmission: tx_done - tx_start,
                propagation: st.up_leg + st.down_leg,
                processing: edge_done - st.edge_arrival,
                downlink: now - st.down_leg - edge_done,
            }
        } else {
            LatencyBreakdown {
                queueing: tx_start - f.t_generated,
                transmission: tx_done - tx_start,
                propagation: st.down_leg,
                processing: 0,
                downlink: 0,
            }
        };
        debug_assert_eq!(breakdown.total(), latency);
        debug_assert_eq!(breakdown.processing, st.processing);
        f.breakdown = Some(breakdown);
        if f.direction == Direction::Uplink && !st.missed && latency <= self.deadline_ns {
            self.control
                .on_command_outcome(CommandOutcome::OnTime, ns_to_ms(now))
                .map_err(|e| EngineError::Internal(e.to_string()))?;
        }
        Ok(())
    }
}

/// Time spent in local fallback up to `end_ns`.
fn fallback_time_ns(history: &[crate::control::ModeTransition], end_ns: u64) -> u64 {
    let to_ns = |ms: f64| (ms * 1e6).round() as u64;
    let mut total = 0;
    let mut entered = None;
    for t in history {
        match t.to {
            Mode::LocalFallback => entered = Some(to_ns(t.time)),
            Mode::EdgeActive => {
                if let Some(start) = entered.take() {
                    total += to_ns(t.time).saturating_sub(start);
                }
            }
        }
    }
    if let Some(start) = entered {
        total += end_ns.saturating_sub(start);
    }
    total
}

/// Runs one scenario to completion.
pub fn run(scenario: &Scenario) -> Result<(EventTrace, Metrics), EngineError> {
    scenario.validate()?;
    Sim::new(scenario)?.run()
}

/// Closed-form steady-state latency of the single uplink stream:
/// transmission time plus RTT plus edge processing.
pub fn analytic_crosscheck(scenario: &Scenario) -> Result<Vec<(String, Millis)>, EngineError> {
    let undefined = |why: &str| EngineError::CrosscheckUndefined(why.to_string());
    if !scenario.rtt_model.is_deterministic() {
        return Err(undefined("RTT model is not deterministic"));
    }
    let processing = match &scenario.edge_processing {
        EdgeProcessing::Fixed(ms) => *ms,
        EdgeProcessing::TruncatedNormal { .. } => return Err(undefined("edge processing is not fixed")),
    };
    if !scenario.outages.is_empty() {
        return Err(undefined("scenario has link outages"));
    }
    let uplink: Vec<&StreamSpec> = scenario.streams.iter().filter(|s| s.direction == Direction::Uplink).collect();
    let other_downlink = scenario
        .streams
        .iter()
        .any(|s| s.direction == Direction::Downlink && s.kind != StreamKind::Command);
    let [stream] = uplink.as_slice() else {
        return Err(undefined("needs exactly one uplink stream"));
    };
    if other_downlink || !stream.is_periodic() {
        return Err(undefined("needs a single framed uplink stream and no downlink feedback"));
    }
    let interval = stream.frame_interval.expect("periodic");
    let tx = frame_transmission_time(stream.frame_bits(), scenario.link.uplink_rate)
        .map_err(|e| invalid("link", e.to_string()))?;
    if tx.exact() >= interval * 1000 {
        return Err(undefined("uplink utilization is not below 1"));
    }
    let latency = access_network_latency(tx, scenario.rtt_model.mean) + processing;
    Ok(vec![(stream.id.clone(), latency)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::{profile, JitterMode};

    fn secs(n: i128) -> Exact {
        Exact::from_integer(n)
    }

    #[test]
    fn testbed_on_optimized_5g_hits_41_ms() {
        let sc = Scenario::testbed(profile("5g100opt").unwrap(), secs(2));
        let (trace, metrics) = run(&sc).unwrap();
        let delivered: Vec<_> = trace.frames.iter().filter(|f| f.outcome == Outcome::Delivered).collect();
        assert!(!delivered.is_empty());
        for f in &delivered {
            let lat = f.control_latency_ms().unwrap();
            assert!((lat - 40.798).abs() < 0.01, "latency {lat}");
            assert_eq!(lat.round(), 41.0);
            assert!(f.timestamps_ordered());
            assert_eq!(f.breakdown.unwrap().total(), f.control_latency.unwrap());
        }
        assert_eq!(metrics.budget_violation_fraction, 0.0);
        assert!(metrics.conserved());
        assert_eq!(metrics.counters.dropped, 0);
        // frames at 1/30 s .. < 2 s
        assert_eq!(metrics.counters.generated, 59);
    }

    #[test]
    fn slow_4g_violates_budget_and_drops() {
        let sc = Scenario::testbed(profile("4g10").unwrap(), secs(2));
        let (trace, metrics) = run(&sc).unwrap();
        assert_eq!(metrics.budget_violation_fraction, 1.0);
        assert!(metrics.counters.dropped > 0);
        let first = trace.frames.iter().find(|f| f.outcome == Outcome::Delivered).unwrap();
        assert_eq!(first.control_latency_ms().unwrap().round(), 172.0);
        assert!(metrics.conserved());
    }

    #[test]
    fn tiny_duration_generates_nothing() {
        let sc = Scenario::testbed(profile("5g100opt").unwrap(), Exact::new(1, 1000));
        let (trace, metrics) = run(&sc).unwrap();
        assert!(trace.frames.is_empty());
        assert_eq!(metrics.counters, Counters::default());
    }

    #[test]
    fn validation_names_fields() {
        let mut sc = Scenario::testbed(profile("5g100opt").unwrap(), secs(0));
        assert!(matches!(run(&sc), Err(EngineError::Invalid { field, .. }) if field == "duration_s"));
        sc.duration = secs(1);
        sc.streams.push(sc.streams[0].clone());
        assert!(matches!(run(&sc), Err(EngineError::Invalid { field, .. }) if field == "streams[2].id"));
    }

    #[test]
    fn crosscheck_examples() {
        let sc = Scenario::testbed(profile("5g60").unwrap(), secs(1));
        assert_eq!(analytic_crosscheck(&sc).unwrap_err(), EngineError::CrosscheckUndefined("uplink utilization is not below 1".into()));
        let mut sc = Scenario::testbed(profile("5g60").unwrap(), secs(1));
        sc.streams[0] = StreamSpec::video("rgbd_camera", 424, 240, 32, 5, 3);
        assert_eq!(analytic_crosscheck(&sc).unwrap()[0].1.rounded(), 77);

        let mut sc = Scenario::testbed(profile("4g20").unwrap(), secs(1));
        sc.streams[0] = StreamSpec::video("rgbd_camera", 424, 240, 32, 5, 3);
        sc.edge_processing = EdgeProcessing::Fixed(Millis::from_int(30));
        assert_eq!(analytic_crosscheck(&sc).unwrap()[0].1.rounded(), 125);

        let mut jittery = sc.clone();
        jittery.rtt_model.jitter = JitterMode::ShiftedLognormal { sigma: 0.2 };
        assert!(matches!(analytic_crosscheck(&jittery), Err(EngineError::CrosscheckUndefined(_))));
    }

    #[test]
    fn outage_forces_fallback_immediately() {
        let mut sc = Scenario::testbed(profile("5g100opt").unwrap(), secs(3));
        sc.outages.push(Outage { start: secs(1), end: secs(2) });
        let (trace, metrics) = run(&sc).unwrap();
        let first = &trace.transitions[0];
        assert_eq!(first.time, 1000.0);
        assert_eq!(first.to, Mode::LocalFallback);
        assert_eq!(metrics.fallback_episodes, 1);
        // recovery needs 10 on-time commands after the link returns
        assert_eq!(trace.transitions.len(), 2);
        assert!(trace.transitions[1].time > 2000.0);
        assert!(metrics.conserved());
    }
}
