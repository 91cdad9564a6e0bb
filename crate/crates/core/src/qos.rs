//! Per-direction link scheduler.
//!
//! Service is fluid: bits drain continuously at the link rate with no packet
//! boundaries, so a lone frame finishes after exactly `size / rate`. Two
//! disciplines are provided:
//!
//! * strict priority, where the lowest-rank backlogged job owns the whole
//!   link (preempting at arrival instants unless preemption is disabled);
//! * sliced weighted share, where every backlogged rank receives its reserved
//!   fraction and idle or unreserved capacity is redistributed in proportion
//!   to the backlogged weights.
//!
//! Time is exact-rational milliseconds, so completion times and the
//! work-conservation identity hold without rounding.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Direction, PriorityClass, StreamSpec};
use crate::link::LinkProfile;
use crate::units::{exact_from_f64, exact_to_f64, DataRate, Exact};

pub type Q = BigRational;

pub fn q(x: &Exact) -> Q {
    Q::new(BigInt::from(*x.numer()), BigInt::from(*x.denom()))
}

pub fn q_int(n: i128) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn q_to_f64(x: &Q) -> f64 {
    num_traits::ToPrimitive::to_f64(x).unwrap_or(f64::NAN)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchedError {
    #[error("duplicate frame ({stream_id}, {seq})")]
    DuplicateFrame { stream_id: String, seq: u64 },
    #[error("frame_seq for `{stream_id}` must increase (got {seq} after {last})")]
    OutOfOrder { stream_id: String, seq: u64, last: u64 },
    #[error("job for `{0}` has zero size")]
    EmptyJob(String),
    #[error("time moved backwards")]
    TimeRegression,
    #[error("no pending work")]
    NoPendingWork,
    #[error("nonpositive link rate")]
    NonpositiveRate,
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Discipline {
    #[default]
    #[serde(rename = "strict")]
    StrictPriority,
    #[serde(rename = "sliced")]
    SlicedWeightedShare,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Slice {
    pub rank: u8,
    pub fraction: Exact,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SchedulerPolicy {
    pub discipline: Discipline,
    pub slices: Vec<Slice>,
    /// Strict priority only: whether an arriving higher-priority job
    /// interrupts the job in service.
    pub preemptive: bool,
}

impl Default for SchedulerPolicy {
    fn default() -> Self {
        SchedulerPolicy::strict()
    }
}

impl SchedulerPolicy {
    pub fn strict() -> Self {
        SchedulerPolicy { discipline: Discipline::StrictPriority, slices: Vec::new(), preemptive: true }
    }

    pub fn sliced(slices: Vec<Slice>) -> Self {
        SchedulerPolicy { discipline: Discipline::SlicedWeightedShare, slices, preemptive: true }
    }

    pub fn validate(&self) -> Result<(), SchedError> {
        if self.discipline == Discipline::StrictPriority && !self.slices.is_empty() {
            return Err(SchedError::InvalidPolicy("strict priority takes no slices".into()));
        }
        let mut ranks = HashSet::new();
        let mut total = Exact::from_integer(0);
        for s in &self.slices {
            if s.fraction < Exact::from_integer(0) || s.fraction > Exact::from_integer(1) {
                return Err(SchedError::InvalidPolicy(format!("slice fraction for rank {} outside [0,1]", s.rank)));
            }
            if !ranks.insert(s.rank) {
                return Err(SchedError::InvalidPolicy(format!("rank {} has two slices", s.rank)));
            }
            total += s.fraction;
        }
        if total > Exact::from_integer(1) {
            return Err(SchedError::InvalidPolicy("slice fractions sum above 1".into()));
        }
        Ok(())
    }
}

/// JSON form: `{"discipline": "strict"|"sliced", "slices": [{"rank": n, "fraction": x}]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDoc {
    pub discipline: Discipline,
    #[serde(default)]
    pub slices: Vec<SliceDoc>,
    #[serde(default = "default_true")]
    pub preemptive: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceDoc {
    pub rank: u8,
    pub fraction: f64,
}

impl Default for PolicyDoc {
    fn default() -> Self {
        PolicyDoc::from(&SchedulerPolicy::strict())
    }
}

impl From<&SchedulerPolicy> for PolicyDoc {
    fn from(p: &SchedulerPolicy) -> Self {
        PolicyDoc {
            discipline: p.discipline,
            slices: p.slices.iter().map(|s| SliceDoc { rank: s.rank, fraction: exact_to_f64(&s.fraction) }).collect(),
            preemptive: p.preemptive,
        }
    }
}

impl TryFrom<&PolicyDoc> for SchedulerPolicy {
    type Error = SchedError;

    fn try_from(d: &PolicyDoc) -> Result<Self, Self::Error> {
        let slices = d
            .slices
            .iter()
            .map(|s| {
                exact_from_f64(s.fraction)
                    .map(|fraction| Slice { rank: s.rank, fraction })
                    .ok_or_else(|| SchedError::InvalidPolicy(format!("slice fraction for rank {} not finite", s.rank)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let p = SchedulerPolicy { discipline: d.discipline, slices, preemptive: d.preemptive };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransferJob {
    pub stream_id: String,
    pub frame_seq: u64,
    pub size_bits: u64,
    /// Milliseconds.
    pub enqueue_time: Q,
    pub priority: PriorityClass,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Completion {
    pub job: TransferJob,
    /// First instant the job received service.
    pub start_time: Q,
    pub finish_time: Q,
}

/// A maximal interval during which one job was served at a constant share.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServiceSpan {
    pub stream_id: String,
    pub frame_seq: u64,
    pub rank: u8,
    pub start: Q,
    pub end: Q,
    pub bits: Q,
}

#[derive(Clone, Debug)]
struct Pending {
    job: TransferJob,
    remaining: Q,
    start_time: Option<Q>,
}

impl Pending {
    fn order_key(&self) -> (&Q, &str, u64) {
        (&self.job.enqueue_time, self.job.stream_id.as_str(), self.job.frame_seq)
    }
}

#[derive(Clone, Debug)]
pub struct LinkScheduler {
    policy: SchedulerPolicy,
    /// Bits per millisecond.
    rate: Q,
    clock: Q,
    queues: BTreeMap<u8, Vec<Pending>>,
    seen: HashSet<(String, u64)>,
    last_seq: HashMap<String, u64>,
    in_service: Option<u8>,
    paused: bool,
    ready: VecDeque<Completion>,
    log: Option<Vec<ServiceSpan>>,
}

impl LinkScheduler {
    pub fn new(policy: SchedulerPolicy, rate: DataRate) -> Result<Self, SchedError> {
        policy.validate()?;
        if rate.is_zero() {
            return Err(SchedError::NonpositiveRate);
        }
        Ok(LinkScheduler {
            policy,
            rate: q(&rate.bits_per_second()) / q_int(1000),
            clock: Q::zero(),
            queues: BTreeMap::new(),
            seen: HashSet::new(),
            last_seq: HashMap::new(),
            in_service: None,
            paused: false,
            ready: VecDeque::new(),
            log: None,
        })
    }

    /// Records every service interval for later inspection.
    pub fn with_service_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn service_log(&self) -> &[ServiceSpan] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn clock(&self) -> &Q {
        &self.clock
    }

    pub fn is_idle(&self) -> bool {
        self.queues.values().all(Vec::is_empty) && self.ready.is_empty()
    }

    /// Sum of remaining bits over all queued jobs.
    pub fn backlog_bits(&self) -> Q {
        self.queues.values().flatten().fold(Q::zero(), |acc, p| acc + &p.remaining)
    }

    pub fn pending_jobs(&self) -> usize {
        self.queues.values().map(Vec::len).sum()
    }

    /// Sequence numbers of a stream's queued jobs that have not begun service.
    pub fn waiting_seqs(&self, stream_id: &str) -> Vec<u64> {
        self.queues
            .values()
            .flatten()
            .filter(|p| p.job.stream_id == stream_id && p.start_time.is_none())
            .map(|p| p.job.frame_seq)
            .collect()
    }

    pub fn enqueue(&mut self, job: TransferJob) -> Result<(), SchedError> {
        if job.size_bits == 0 {
            return Err(SchedError::EmptyJob(job.stream_id));
        }
        let key = (job.stream_id.clone(), job.frame_seq);
        if self.seen.contains(&key) {
            return Err(SchedError::DuplicateFrame { stream_id: job.stream_id, seq: job.frame_seq });
        }
        if let Some(&last) = self.last_seq.get(&job.stream_id) {
            if job.frame_seq <= last {
                return Err(SchedError::OutOfOrder { stream_id: job.stream_id, seq: job.frame_seq, last });
            }
        }
        if job.enqueue_time < self.clock {
            return Err(SchedError::TimeRegression);
        }
        let at = job.enqueue_time.clone();
        self.serve_until(&at);
        self.seen.insert(key);
        self.last_seq.insert(job.stream_id.clone(), job.frame_seq);
        let entry = Pending { remaining: q_int(job.size_bits as i128), job, start_time: None };
        let queue = self.queues.entry(entry.job.priority.rank).or_default();
        let pos = queue.partition_point(|p| p.order_key() <= entry.order_key());
        queue.insert(pos, entry);
        Ok(())
    }

    /// Removes a job that has not started transmission.
    pub fn cancel(&mut self, stream_id: &str, seq: u64) -> Option<TransferJob> {
        for queue in self.queues.values_mut() {
            if let Some(pos) = queue
                .iter()
                .position(|p| p.job.stream_id == stream_id && p.job.frame_seq == seq && p.start_time.is_none())
            {
                return Some(queue.remove(pos).job);
            }
        }
        None
    }

    /// Halts or resumes service, e.g. while the radio link is down.
    pub fn set_paused(&mut self, paused: bool, now: &Q) -> Result<(), SchedError> {
        if *now < self.clock {
            return Err(SchedError::TimeRegression);
        }
        self.serve_until(now);
        self.paused = paused;
        Ok(())
    }

    /// Serves up to `now` and hands back every completion not yet reported.
    pub fn advance_to(&mut self, now: &Q) -> Result<Vec<Completion>, SchedError> {
        if *now < self.clock {
            return Err(SchedError::TimeRegression);
        }
        self.serve_until(now);
        Ok(self.ready.drain(..).collect())
    }

    /// Earliest unreported completion at or after `now`, advancing the clock
    /// to its finish time when no completion is already due.
    /// A `now` behind the scheduler clock is treated as the clock.
    pub fn next_completion(&mut self, now: &Q) -> Result<Completion, SchedError> {
        self.serve_until(now);
        if let Some(c) = self.ready.pop_front() {
            return Ok(c);
        }
        let finish = self.next_finish_from_clock().ok_or(SchedError::NoPendingWork)?;
        self.serve_until(&finish);
        self.ready.pop_front().ok_or(SchedError::NoPendingWork)
    }

    /// When the next completion will happen if nothing else arrives.
    pub fn peek_next_finish(&self) -> Option<Q> {
        match self.ready.front() {
            Some(c) => Some(c.finish_time.clone()),
            None => self.next_finish_from_clock(),
        }
    }

    fn next_finish_from_clock(&self) -> Option<Q> {
        if self.paused {
            return None;
        }
        self.shares()
            .into_iter()
            .map(|(rank, share)| &self.queues[&rank][0].remaining / (share * &self.rate))
            .min()
            .map(|dt| &self.clock + dt)
    }

    /// Fraction of the link each served rank receives right now. Only the
    /// head job of a rank is ever in service.
    fn shares(&self) -> Vec<(u8, Q)> {
        let backlogged: Vec<u8> = self.queues.iter().filter(|(_, q)| !q.is_empty()).map(|(r, _)| *r).collect();
        if backlogged.is_empty() {
            return Vec::new();
        }
        match self.policy.discipline {
            Discipline::StrictPriority => {
                let rank = match self.in_service {
                    Some(r) if !self.policy.preemptive && backlogged.contains(&r) => r,
                    _ => backlogged[0],
                };
                vec![(rank, Q::one())]
            }
            Discipline::SlicedWeightedShare => {
                let reserved: HashMap<u8, Q> = self.policy.slices.iter().map(|s| (s.rank, q(&s.fraction))).collect();
                let unreserved = Q::one() - reserved.values().fold(Q::zero(), |a, f| a + f);
                let unsliced = backlogged.iter().filter(|r| !reserved.contains_key(r)).count();
                let weights: Vec<(u8, Q)> = backlogged
                    .iter()
                    .map(|r| match reserved.get(r) {
                        Some(f) => (*r, f.clone()),
                        None => (*r, &unreserved / q_int(unsliced as i128)),
                    })
                    .collect();
                let total = weights.iter().fold(Q::zero(), |a, (_, w)| a + w);
                if total.is_zero() {
                    let even = Q::one() / q_int(backlogged.len() as i128);
                    backlogged.into_iter().map(|r| (r, even.clone())).collect()
                } else {
                    weights.into_iter().filter(|(_, w)| w.is_positive()).map(|(r, w)| (r, w / &total)).collect()
                }
            }
        }
    }

    fn serve_until(&mut self, until: &Q) {
        while self.clock < *until {
            if self.paused {
                self.clock = until.clone();
                return;
            }
            let shares = self.shares();
            if shares.is_empty() {
                self.clock = until.clone();
                return;
            }
            let next = shares
                .iter()
                .map(|(rank, share)| &self.queues[rank][0].remaining / (share * &self.rate))
                .min()
                .expect("nonempty shares");
            let step_end = (&self.clock + next).min(until.clone());
            let dt = &step_end - &self.clock;
            for (rank, share) in &shares {
                let bits = share * &self.rate * &dt;
                let head = &mut self.queues.get_mut(rank).expect("served rank exists")[0];
                if head.start_time.is_none() {
                    head.start_time = Some(self.clock.clone());
                }
                head.remaining -= &bits;
                if let Some(log) = self.log.as_mut() {
                    log.push(ServiceSpan {
                        stream_id: head.job.stream_id.clone(),
                        frame_seq: head.job.frame_seq,
                        rank: *rank,
                        start: self.clock.clone(),
                        end: step_end.clone(),
                        bits,
                    });
                }
                if self.policy.discipline == Discipline::StrictPriority {
                    self.in_service = Some(*rank);
                }
            }
            self.clock = step_end;
            for (rank, _) in &shares {
                let queue = self.queues.get_mut(rank).expect("served rank exists");
                if queue[0].remaining <= Q::zero() {
                    let done = queue.remove(0);
                    if self.in_service == Some(*rank) {
                        self.in_service = None;
                    }
                    self.ready.push_back(Completion {
                        job: done.job,
                        start_time: done.start_time.unwrap_or_else(|| self.clock.clone()),
                        finish_time: self.clock.clone(),
                    });
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirectionLoad {
    pub direction: Direction,
    pub offered_load_bps: f64,
    pub capacity_bps: f64,
    pub utilization: f64,
    pub feasible: bool,
    #[serde(skip)]
    pub offered_load: DataRate,
    #[serde(skip)]
    pub capacity: DataRate,
}

/// Offered load against link capacity, per direction.
pub fn feasibility_report(streams: &[StreamSpec], profile: &LinkProfile) -> Vec<DirectionLoad> {
    [(Direction::Uplink, profile.uplink_rate), (Direction::Downlink, profile.downlink_rate)]
        .into_iter()
        .map(|(direction, capacity)| {
            let offered: DataRate = streams.iter().filter(|s| s.direction == direction).filter_map(|s| s.rate()).sum();
            let utilization = if capacity.is_zero() {
                if offered.is_zero() { 0.0 } else { f64::INFINITY }
            } else {
                exact_to_f64(&(offered.bits_per_second() / capacity.bits_per_second()))
            };
            DirectionLoad {
                direction,
                offered_load_bps: offered.as_bps_f64(),
                capacity_bps: capacity.as_bps_f64(),
                utilization,
                feasible: offered <= capacity,
                offered_load: offered,
                capacity,
            }
        })
        .collect()
}
