//! Oracles shared by the integration tests and the acceptance runner. They
//! are written independently of the library internals and only look at
//! public outputs.

#![allow(dead_code)]

use limbnet::catalog::PriorityClass;
use limbnet::control::{CommandOutcome, ControlMode, FailsafeConfig, LinkEvent, Mode, TransitionCause};
use limbnet::qos::{Completion, LinkScheduler, SchedulerPolicy, ServiceSpan, Slice, TransferJob, Q};
use limbnet::units::{DataRate, Exact};
use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use proptest::prelude::*;

// ---------------------------------------------------------------- scheduler

#[derive(Clone, Debug)]
pub struct JobSet {
    /// Bits per millisecond.
    pub rate: u64,
    /// (enqueue time in ms, rank, size in bits), sorted by time.
    pub jobs: Vec<(u32, u8, u64)>,
}

pub fn job_set() -> impl Strategy<Value = JobSet> {
    (1u64..2_000, proptest::collection::vec((0u32..50, 0u8..4, 1u64..20_000), 1..10)).prop_map(|(rate, mut jobs)| {
        jobs.sort_by_key(|j| j.0);
        JobSet { rate, jobs }
    })
}

/// Slices over ranks 0..4 whose fractions (in tenths) sum to at most one.
pub fn slices() -> impl Strategy<Value = Vec<Slice>> {
    proptest::collection::btree_map(0u8..4, 0i128..=10, 0..4).prop_filter_map("fractions over 1", |m| {
        let total: i128 = m.values().sum();
        (total <= 10).then(|| m.into_iter().map(|(rank, tenths)| Slice { rank, fraction: Exact::new(tenths, 10) }).collect())
    })
}

pub fn qi(n: i128) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub struct Run {
    pub rate: Q,
    pub jobs: Vec<TransferJob>,
    pub completions: Vec<Completion>,
    pub log: Vec<ServiceSpan>,
}

pub fn run_jobs(policy: SchedulerPolicy, set: &JobSet) -> Run {
    let mut s = LinkScheduler::new(policy, DataRate::from_bps(set.rate * 1000)).unwrap().with_service_log();
    let jobs: Vec<TransferJob> = set
        .jobs
        .iter()
        .enumerate()
        .map(|(i, &(t, rank, bits))| TransferJob {
            stream_id: format!("s{i}"),
            frame_seq: 0,
            size_bits: bits,
            enqueue_time: qi(t as i128),
            priority: PriorityClass::new(rank),
        })
        .collect();
    let mut completions = Vec::new();
    for j in &jobs {
        completions.extend(s.advance_to(&j.enqueue_time).unwrap());
        s.enqueue(j.clone()).unwrap();
    }
    while let Ok(c) = s.next_completion(&s.clock().clone()) {
        completions.push(c);
    }
    Run { rate: qi(set.rate as i128), jobs, log: s.service_log().to_vec(), completions }
}

fn finish_of<'a>(run: &'a Run, job: &TransferJob) -> &'a Q {
    &run.completions.iter().find(|c| c.job.stream_id == job.stream_id).expect("every job completes").finish_time
}

fn overlap(a0: &Q, a1: &Q, b0: &Q, b1: &Q) -> Q {
    let lo = if a0 > b0 { a0 } else { b0 };
    let hi = if a1 < b1 { a1 } else { b1 };
    if hi > lo {
        hi - lo
    } else {
        Q::zero()
    }
}

/// Under preemptive strict priority no lower-ranked job is served while a
/// higher-ranked job is waiting.
pub fn check_non_inversion(run: &Run) -> Result<(), String> {
    for span in &run.log {
        for j in run.jobs.iter().filter(|j| j.priority.rank < span.rank) {
            let f = finish_of(run, j);
            if overlap(&span.start, &span.end, &j.enqueue_time, f).is_positive() {
                return Err(format!("{} (rank {}) served while {} (rank {}) waited", span.stream_id, span.rank, j.stream_id, j.priority.rank));
            }
        }
    }
    Ok(())
}

/// Busy-period identity: the last completion equals the time a single FIFO
/// server of the same rate would need; all bits are served exactly once.
pub fn check_work_conservation(run: &Run) -> Result<(), String> {
    if run.completions.len() != run.jobs.len() {
        return Err(format!("{} of {} jobs completed", run.completions.len(), run.jobs.len()));
    }
    let mut t = Q::zero();
    for j in &run.jobs {
        if j.enqueue_time > t {
            t = j.enqueue_time.clone();
        }
        t += qi(j.size_bits as i128) / &run.rate;
    }
    let last = run.completions.iter().map(|c| &c.finish_time).max().expect("nonempty");
    if *last != t {
        return Err(format!("makespan {last} != busy-period oracle {t}"));
    }
    let served: Q = run.log.iter().fold(Q::zero(), |a, s| a + &s.bits);
    let offered: Q = run.jobs.iter().fold(Q::zero(), |a, j| a + qi(j.size_bits as i128));
    if served != offered {
        return Err(format!("served {served} bits, offered {offered}"));
    }
    for c in &run.completions {
        let min_finish = &c.job.enqueue_time + qi(c.job.size_bits as i128) / &run.rate;
        if c.finish_time < min_finish {
            return Err(format!("{} finished faster than line rate", c.job.stream_id));
        }
    }
    Ok(())
}

/// Whenever a rank with reserved fraction `f` is backlogged it accumulates
/// service at no less than `f * rate`, up to `quantum` bits.
pub fn check_slice_guarantee(run: &Run, slices: &[Slice], quantum: &Q) -> Result<(), String> {
    for slice in slices.iter().filter(|s| !s.fraction.is_zero()) {
        let f = Q::new(BigInt::from(*slice.fraction.numer()), BigInt::from(*slice.fraction.denom()));
        // Maximal backlogged intervals of this rank.
        let mut pending: Vec<(Q, Q)> = run
            .jobs
            .iter()
            .filter(|j| j.priority.rank == slice.rank)
            .map(|j| (j.enqueue_time.clone(), finish_of(run, j).clone()))
            .collect();
        pending.sort();
        let mut intervals: Vec<(Q, Q)> = Vec::new();
        for (a, b) in pending {
            match intervals.last_mut() {
                Some(last) if a <= last.1 => {
                    if b > last.1 {
                        last.1 = b;
                    }
                }
                _ => intervals.push((a, b)),
            }
        }
        for (a, b) in &intervals {
            let got: Q = run
                .log
                .iter()
                .filter(|s| s.rank == slice.rank)
                .map(|s| {
                    let len = &s.end - &s.start;
                    if len.is_zero() {
                        Q::zero()
                    } else {
                        &s.bits * overlap(&s.start, &s.end, a, b) / len
                    }
                })
                .fold(Q::zero(), |acc, x| acc + x);
            let floor = &f * &run.rate * (b - a);
            if got + quantum < floor {
                return Err(format!("rank {} got less than its {} share over [{a}, {b})", slice.rank, slice.fraction));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- failsafe

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ev {
    Missed,
    OnTime,
    Up,
    Down,
}

pub const EVENTS: [Ev; 4] = [Ev::Missed, Ev::OnTime, Ev::Up, Ev::Down];

/// Reference semantics, written as counters over the event history rather
/// than as a transition table.
#[derive(Clone, Debug)]
pub struct Reference {
    threshold: u32,
    probes: u32,
    fallback: bool,
    misses_since_ok: u32,
    oks_since_trouble: u32,
    pub alerts: u32,
}

impl Reference {
    pub fn new(threshold: u32, probes: u32) -> Self {
        Reference { threshold, probes, fallback: false, misses_since_ok: 0, oks_since_trouble: 0, alerts: 0 }
    }

    pub fn mode(&self) -> Mode {
        if self.fallback {
            Mode::LocalFallback
        } else {
            Mode::EdgeActive
        }
    }

    /// Applies one event and reports whether the mode flipped.
    pub fn step(&mut self, ev: Ev) -> bool {
        let before = self.fallback;
        if self.fallback {
            match ev {
                Ev::OnTime => self.oks_since_trouble += 1,
                Ev::Missed | Ev::Down => self.oks_since_trouble = 0,
                Ev::Up => {}
            }
            if self.oks_since_trouble == self.probes {
                self.fallback = false;
            }
        } else {
            match ev {
                Ev::Missed => self.misses_since_ok += 1,
                Ev::OnTime => self.misses_since_ok = 0,
                Ev::Up => {}
                Ev::Down => self.fallback = true,
            }
            if self.misses_since_ok == self.threshold {
                self.fallback = true;
            }
        }
        let flipped = before != self.fallback;
        if flipped {
            self.alerts += 1;
            self.misses_since_ok = 0;
            self.oks_since_trouble = 0;
        }
        flipped
    }
}

fn apply(m: &mut ControlMode, ev: Ev, now: f64) {
    match ev {
        Ev::Missed => m.on_command_outcome(CommandOutcome::Missed, now),
        Ev::OnTime => m.on_command_outcome(CommandOutcome::OnTime, now),
        Ev::Up => m.on_link_event(LinkEvent::Up, now),
        Ev::Down => m.on_link_event(LinkEvent::Down, now),
    }
    .expect("monotone clock");
}

fn cause_fits(cause: TransitionCause, ev: Ev) -> bool {
    matches!(
        (cause, ev),
        (TransitionCause::TimeoutStreak, Ev::Missed)
            | (TransitionCause::LinkDown, Ev::Down)
            | (TransitionCause::RecoveryStreak, Ev::OnTime)
            | (TransitionCause::LinkUpProbes, Ev::OnTime)
    )
}

/// Walks every event sequence of length up to `depth` depth-first, sharing
/// prefixes. Returns the number of sequences checked.
pub fn exhaustive_failsafe(config: &FailsafeConfig, depth: usize) -> Result<u64, String> {
    fn walk(
        m: &ControlMode,
        r: &Reference,
        path: &mut Vec<Ev>,
        depth: usize,
        count: &mut u64,
    ) -> Result<(), String> {
        *count += 1;
        let alerts = m.history().iter().filter(|t| t.alert_emitted).count() as u32;
        if m.mode() != r.mode() || alerts != r.alerts || m.history().len() as u32 != r.alerts {
            return Err(format!("{path:?}: machine {:?}/{alerts} vs reference {:?}/{}", m.mode(), r.mode(), r.alerts));
        }
        if path.len() == depth {
            return Ok(());
        }
        for ev in EVENTS {
            let mut m2 = m.clone();
            let mut r2 = r.clone();
            let before = m2.history().len();
            apply(&mut m2, ev, path.len() as f64);
            let flipped = r2.step(ev);
            path.push(ev);
            let h = m2.history();
            if h.len() > before {
                let t = h.last().expect("new transition");
                let prev_to = if before == 0 { Mode::EdgeActive } else { h[before - 1].to };
                if t.from != prev_to || t.from == t.to || !cause_fits(t.cause, ev) || !flipped {
                    return Err(format!("{path:?}: bad transition {t:?}"));
                }
            }
            walk(&m2, &r2, path, depth, count)?;
            path.pop();
        }
        Ok(())
    }
    let m = ControlMode::new(config.clone()).map_err(|e| e.to_string())?;
    let r = Reference::new(config.miss_threshold, config.recovery_probes);
    let mut count = 0;
    walk(&m, &r, &mut Vec::new(), depth, &mut count)?;
    Ok(count)
}
