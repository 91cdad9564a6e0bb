//! Per-frame lifecycle records, their JSON-lines export, and aggregated
//! metrics.

use std::collections::BTreeMap;

use serde::{Serialize, Serializer};

use crate::catalog::Direction;
use crate::control::ModeTransition;

pub const TRACE_VERSION: u32 = 1;

pub fn ns_to_ms(ns: u64) -> f64 {
    ns as f64 / 1e6
}

fn opt_ms<S: Serializer>(v: &Option<u64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(ns) => s.serialize_some(&ns_to_ms(*ns)),
        None => s.serialize_none(),
    }
}

fn ms<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(ns_to_ms(*v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Delivered,
    Dropped,
    InFlightAtEnd,
}

/// Additive split of a delivered frame's latency. Nanoseconds internally;
/// the components sum exactly to the control latency.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LatencyBreakdown {
    #[serde(rename = "queueing_ms", serialize_with = "ms")]
    pub queueing: u64,
    #[serde(rename = "transmission_ms", serialize_with = "ms")]
    pub transmission: u64,
    #[serde(rename = "propagation_ms", serialize_with = "ms")]
    pub propagation: u64,
    #[serde(rename = "processing_ms", serialize_with = "ms")]
    pub processing: u64,
    #[serde(rename = "downlink_ms", serialize_with = "ms")]
    pub downlink: u64,
}

impl LatencyBreakdown {
    pub fn total(&self) -> u64 {
        self.queueing + self.transmission + self.propagation + self.processing + self.downlink
    }
}

/// Timestamps are nanoseconds since scenario start and serialize as
/// milliseconds. For downlink feedback frames `t_generated` is the edge
/// emission time and `t_cmd_received` the arrival at the device.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameRecord {
    pub stream_id: String,
    pub seq: u64,
    pub direction: Direction,
    pub bits: u64,
    #[serde(serialize_with = "ms")]
    pub t_generated: u64,
    #[serde(serialize_with = "opt_ms")]
    pub t_tx_start: Option<u64>,
    #[serde(serialize_with = "opt_ms")]
    pub t_tx_done: Option<u64>,
    #[serde(serialize_with = "opt_ms")]
    pub t_edge_done: Option<u64>,
    #[serde(serialize_with = "opt_ms")]
    pub t_cmd_received: Option<u64>,
    pub outcome: Outcome,
    #[serde(rename = "control_latency_ms", serialize_with = "opt_ms")]
    pub control_latency: Option<u64>,
    pub breakdown: Option<LatencyBreakdown>,
    #[serde(skip)]
    pub(crate) settled: bool,
}

impl FrameRecord {
    pub(crate) fn new(stream_id: &str, seq: u64, direction: Direction, bits: u64, t_generated: u64) -> Self {
        FrameRecord {
            stream_id: stream_id.to_string(),
            seq,
            direction,
            bits,
            t_generated,
            t_tx_start: None,
            t_tx_done: None,
            t_edge_done: None,
            t_cmd_received: None,
            outcome: Outcome::InFlightAtEnd,
            control_latency: None,
            breakdown: None,
            settled: false,
        }
    }

    pub fn control_latency_ms(&self) -> Option<f64> {
        self.control_latency.map(ns_to_ms)
    }

    /// Timestamps that are present never decrease in lifecycle order.
    pub fn timestamps_ordered(&self) -> bool {
        let stamps = [Some(self.t_generated), self.t_tx_start, self.t_tx_done, self.t_edge_done, self.t_cmd_received];
        stamps.iter().flatten().collect::<Vec<_>>().windows(2).all(|w| w[0] <= w[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
struct TraceHeader<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    trace_version: u32,
    seed: u64,
    duration_s: f64,
    link: &'a str,
}

#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(flatten)]
    inner: &'a T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventTrace {
    pub seed: u64,
    pub duration_s: f64,
    pub link: String,
    pub frames: Vec<FrameRecord>,
    pub transitions: Vec<ModeTransition>,
}

impl EventTrace {
    /// JSON-lines rendering: a header line, then frame and mode-transition
    /// records merged in time order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = TraceHeader {
            kind: "header",
            trace_version: TRACE_VERSION,
            seed: self.seed,
            duration_s: self.duration_s,
            link: &self.link,
        };
        out.push_str(&serde_json::to_string(&header).expect("header serializes"));
        out.push('\n');
        let mut frames = self.frames.iter().peekable();
        let mut transitions = self.transitions.iter().peekable();
        loop {
            let take_frame = match (frames.peek(), transitions.peek()) {
                (Some(f), Some(t)) => ns_to_ms(f.t_generated) <= t.time,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            let line = if take_frame {
                serde_json::to_string(&Tagged { kind: "frame", inner: frames.next().expect("peeked") })
            } else {
                serde_json::to_string(&Tagged { kind: "mode_transition", inner: transitions.next().expect("peeked") })
            };
            out.push_str(&line.expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// One CSV row per delivered frame.
    pub fn latency_csv(&self) -> String {
        let mut out = String::from("stream_id,seq,t_generated_ms,control_latency_ms\n");
        for f in self.frames.iter().filter(|f| f.outcome == Outcome::Delivered) {
            let lat = f.control_latency_ms().unwrap_or(f64::NAN);
            out.push_str(&format!("{},{},{},{}\n", f.stream_id, f.seq, ns_to_ms(f.t_generated), lat));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    /// Nearest-rank percentiles over nanosecond samples.
    pub fn from_ns(samples: &[u64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        let rank = |p: f64| {
            let idx = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
            ns_to_ms(sorted[idx.clamp(1, sorted.len()) - 1])
        };
        let sum: u128 = sorted.iter().map(|&v| v as u128).sum();
        Some(LatencyStats {
            mean_ms: sum as f64 / sorted.len() as f64 / 1e6,
            p50_ms: rank(50.0),
            p95_ms: rank(95.0),
            p99_ms: rank(99.0),
            max_ms: ns_to_ms(*sorted.last().expect("nonempty")),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Counters {
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
}

impl Counters {
    pub fn conserved(&self) -> bool {
        self.generated == self.delivered + self.dropped + self.in_flight
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StreamMetrics {
    pub stream_id: String,
    pub direction: Direction,
    #[serde(flatten)]
    pub counters: Counters,
    pub latency: Option<LatencyStats>,
    pub budget_violations: u64,
    pub budget_violation_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub trace_version: u32,
    #[serde(flatten)]
    pub counters: Counters,
    pub budget_violation_fraction: f64,
    pub fallback_episodes: u64,
    pub fallback_time_ms: f64,
    pub mode_transitions: u64,
    pub streams: Vec<StreamMetrics>,
}

impl Metrics {
    pub fn stream(&self, id: &str) -> Option<&StreamMetrics> {
        self.streams.iter().find(|s| s.stream_id == id)
    }

    pub fn conserved(&self) -> bool {
        self.counters.conserved() && self.streams.iter().all(|s| s.counters.conserved())
    }

    /// Aggregates frame records. A settled frame violates the budget when it
    /// was dropped or arrived later than `budget_upper_ns`.
    pub fn from_trace(trace: &EventTrace, budget_upper_ns: u64, fallback_time_ns: u64) -> Metrics {
        let mut per: BTreeMap<&str, (Direction, Counters, Vec<u64>, u64)> = BTreeMap::new();
        for f in &trace.frames {
            let entry = per.entry(f.stream_id.as_str()).or_insert_with(|| (f.direction, Counters::default(), Vec::new(), 0));
            entry.1.generated += 1;
            match f.outcome {
                Outcome::Delivered => {
                    entry.1.delivered += 1;
                    let lat = f.control_latency.expect("delivered frames carry latency");
                    entry.2.push(lat);
                    if lat > budget_upper_ns {
                        entry.3 += 1;
                    }
                }
                Outcome::Dropped => {
                    entry.1.dropped += 1;
                    entry.3 += 1;
                }
                Outcome::InFlightAtEnd => entry.1.in_flight += 1,
            }
        }
        let fraction = |violations: u64, c: &Counters| {
            let settled = c.delivered + c.dropped;
            if settled == 0 { 0.0 } else { violations as f64 / settled as f64 }
        };
        let mut total = Counters::default();
        let mut total_violations = 0;
        let streams = per
            .into_iter()
            .map(|(id, (direction, counters, samples, violations))| {
                total.generated += counters.generated;
                total.delivered += counters.delivered;
                total.dropped += counters.dropped;
                total.in_flight += counters.in_flight;
                total_violations += violations;
                StreamMetrics {
                    stream_id: id.to_string(),
                    direction,
                    budget_violation_fraction: fraction(violations, &counters),
                    counters,
                    latency: LatencyStats::from_ns(&samples),
                    budget_violations: violations,
                }
            })
            .collect();
        let episodes = trace.transitions.iter().filter(|t| t.to == crate::control::Mode::LocalFallback).count() as u64;
        Metrics {
            trace_version: TRACE_VERSION,
            budget_violation_fraction: fraction(total_violations, &total),
            counters: total,
            fallback_episodes: episodes,
            fallback_time_ms: ns_to_ms(fallback_time_ns),
            mode_transitions: trace.transitions.len() as u64,
            streams,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let samples: Vec<u64> = (1..=100).map(|v| v * 1_000_000).collect();
        let s = LatencyStats::from_ns(&samples).unwrap();
        assert_eq!(s.p50_ms, 50.0);
        assert_eq!(s.p95_ms, 95.0);
        assert_eq!(s.p99_ms, 99.0);
        assert_eq!(s.max_ms, 100.0);
        assert_eq!(s.mean_ms, 50.5);
        assert!(LatencyStats::from_ns(&[]).is_none());
        let one = LatencyStats::from_ns(&[7_000_000]).unwrap();
        assert_eq!((one.p50_ms, one.p99_ms), (7.0, 7.0));
    }

    #[test]
    fn timestamp_order_check() {
        let mut f = FrameRecord::new("cam", 0, Direction::Uplink, 10, 5);
        f.t_tx_start = Some(6);
        f.t_tx_done = Some(9);
        assert!(f.timestamps_ordered());
        f.t_edge_done = Some(8);
        assert!(!f.timestamps_ordered());
    }
}
