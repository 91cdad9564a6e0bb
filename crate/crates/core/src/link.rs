//! Measured access-network profiles and the closed-form latency accounting
//! built on them.
//!
//! The access-network latency of an uplink frame is its serialization time
//! at the measured uplink rate plus the measured round-trip time; downlink
//! transmission of the few-byte command is neglected. Arithmetic is exact
//! and rounding to whole milliseconds happens only at presentation.

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{exact_from_f64, DataRate, Exact, Millis};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkError {
    #[error("nonpositive link rate")]
    NonpositiveRate,
    #[error("invalid rtt model: {0}")]
    InvalidRttModel(String),
    #[error("invalid latency budget: {0}")]
    InvalidBudget(String),
    #[error("invalid link profile `{name}`: {reason}")]
    InvalidProfile { name: String, reason: String },
    #[error("unknown link profile `{0}`")]
    UnknownProfile(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Generation {
    #[serde(rename = "LTE")]
    Lte,
    #[serde(rename = "NR")]
    Nr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modulation {
    #[serde(rename = "QAM64")]
    Qam64,
    #[serde(rename = "QAM256")]
    Qam256,
}

/// Radio configuration behind a measurement. Informational only: it never
/// enters latency arithmetic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioParams {
    pub dl_slots: u32,
    pub ul_slots: u32,
    pub sr_period_ms: u32,
    pub ul_modulation: Modulation,
}

impl RadioParams {
    pub const NR_DEFAULT: RadioParams =
        RadioParams { dl_slots: 6, ul_slots: 3, sr_period_ms: 20, ul_modulation: Modulation::Qam64 };
    pub const NR_UPLINK_OPTIMIZED: RadioParams =
        RadioParams { dl_slots: 2, ul_slots: 7, sr_period_ms: 10, ul_modulation: Modulation::Qam256 };
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkProfile {
    pub name: String,
    pub generation: Generation,
    pub bandwidth_mhz: u32,
    pub optimized: bool,
    pub uplink_rate: DataRate,
    pub downlink_rate: DataRate,
    pub rtt_mean: Millis,
    pub radio_params: Option<RadioParams>,
}

impl LinkProfile {
    fn measured(name: &str, generation: Generation, bandwidth_mhz: u32, optimized: bool, ul: u64, dl: u64, rtt: i128) -> Self {
        let radio_params = match (generation, optimized) {
            (Generation::Lte, _) => None,
            (Generation::Nr, false) => Some(RadioParams::NR_DEFAULT),
            (Generation::Nr, true) => Some(RadioParams::NR_UPLINK_OPTIMIZED),
        };
        LinkProfile {
            name: name.to_string(),
            generation,
            bandwidth_mhz,
            optimized,
            uplink_rate: DataRate::from_mbps(ul),
            downlink_rate: DataRate::from_mbps(dl),
            rtt_mean: Millis::from_int(rtt),
            radio_params,
        }
    }

    /// Table label such as `4G (10 MHz)` or `5G (100 MHz) opt.`.
    pub fn label(&self) -> String {
        let gen = match self.generation {
            Generation::Lte => "4G",
            Generation::Nr => "5G",
        };
        let opt = if self.optimized { " opt." } else { "" };
        format!("{gen} ({} MHz){opt}", self.bandwidth_mhz)
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        let bad = |reason: &str| LinkError::InvalidProfile { name: self.name.clone(), reason: reason.into() };
        if self.name.is_empty() {
            return Err(bad("name must not be empty"));
        }
        if self.uplink_rate.is_zero() {
            return Err(bad("ul_mbps must be positive"));
        }
        if self.downlink_rate.is_zero() {
            return Err(bad("dl_mbps must be positive"));
        }
        if self.rtt_mean <= Millis::ZERO {
            return Err(bad("rtt_ms must be positive"));
        }
        Ok(())
    }
}

/// The six measured 4G/5G configurations.
pub fn builtin_profiles() -> Vec<LinkProfile> {
    use Generation::*;
    vec![
        LinkProfile::measured("4g10", Lte, 10, false, 22, 47, 24),
        LinkProfile::measured("4g20", Lte, 20, false, 48, 93, 27),
        LinkProfile::measured("5g60", Nr, 60, false, 60, 302, 23),
        LinkProfile::measured("5g100", Nr, 100, false, 107, 244, 30),
        LinkProfile::measured("5g60opt", Nr, 60, true, 180, 99, 27),
        LinkProfile::measured("5g100opt", Nr, 100, true, 236, 160, 27),
    ]
}

pub fn profile(name: &str) -> Result<LinkProfile, LinkError> {
    builtin_profiles()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| LinkError::UnknownProfile(name.to_string()))
}

/// JSON form of a profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkProfileDoc {
    pub name: String,
    pub generation: Generation,
    pub bandwidth_mhz: u32,
    pub optimized: bool,
    pub ul_mbps: f64,
    pub dl_mbps: f64,
    pub rtt_ms: f64,
    #[serde(default)]
    pub radio_params: Option<RadioParams>,
}

impl From<&LinkProfile> for LinkProfileDoc {
    fn from(p: &LinkProfile) -> Self {
        LinkProfileDoc {
            name: p.name.clone(),
            generation: p.generation,
            bandwidth_mhz: p.bandwidth_mhz,
            optimized: p.optimized,
            ul_mbps: p.uplink_rate.as_mbps_f64(),
            dl_mbps: p.downlink_rate.as_mbps_f64(),
            rtt_ms: p.rtt_mean.as_f64(),
            radio_params: p.radio_params,
        }
    }
}

impl TryFrom<LinkProfileDoc> for LinkProfile {
    type Error = LinkError;

    fn try_from(d: LinkProfileDoc) -> Result<Self, Self::Error> {
        let bad = |reason: &str| LinkError::InvalidProfile { name: d.name.clone(), reason: reason.into() };
        let p = LinkProfile {
            uplink_rate: DataRate::from_mbps_f64(d.ul_mbps).ok_or_else(|| bad("ul_mbps must be a nonnegative number"))?,
            downlink_rate: DataRate::from_mbps_f64(d.dl_mbps).ok_or_else(|| bad("dl_mbps must be a nonnegative number"))?,
            rtt_mean: Millis(exact_from_f64(d.rtt_ms).ok_or_else(|| bad("rtt_ms must be finite"))?),
            name: d.name,
            generation: d.generation,
            bandwidth_mhz: d.bandwidth_mhz,
            optimized: d.optimized,
            radio_params: d.radio_params,
        };
        p.validate()?;
        Ok(p)
    }
}

/// End-to-end response window for comfortable prosthesis control.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatencyBudget {
    pub lower: Millis,
    pub upper: Millis,
}

impl Default for LatencyBudget {
    fn default() -> Self {
        LatencyBudget { lower: Millis::from_int(100), upper: Millis::from_int(125) }
    }
}

impl LatencyBudget {
    pub fn new(lower: Millis, upper: Millis) -> Result<Self, LinkError> {
        if lower <= Millis::ZERO {
            return Err(LinkError::InvalidBudget("lower must be positive".into()));
        }
        if lower > upper {
            return Err(LinkError::InvalidBudget("lower must not exceed upper".into()));
        }
        Ok(LatencyBudget { lower, upper })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Feasible,
    Marginal,
    Infeasible,
}

/// Serialization time of `frame_bits` at `uplink_rate`, in milliseconds.
pub fn frame_transmission_time(frame_bits: u64, uplink_rate: DataRate) -> Result<Millis, LinkError> {
    if uplink_rate.is_zero() {
        return Err(LinkError::NonpositiveRate);
    }
    Ok(Millis(Exact::from_integer(frame_bits as i128 * 1000) / uplink_rate.bits_per_second()))
}

pub fn access_network_latency(tx_time: Millis, rtt: Millis) -> Millis {
    tx_time + rtt
}

/// Budget left for edge processing, measured against the upper bound.
pub fn remaining_budget(access_latency: Millis, budget: &LatencyBudget) -> Millis {
    budget.upper - access_latency
}

pub fn budget_verdict(access_latency: Millis, edge_processing: Millis, budget: &LatencyBudget) -> Verdict {
    let total = access_latency + edge_processing;
    if total > budget.upper {
        Verdict::Infeasible
    } else if total > budget.lower {
        Verdict::Marginal
    } else {
        Verdict::Feasible
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum JitterMode {
    Deterministic,
    /// `minimum + LogNormal(mu, sigma)` with `mu` chosen so that the sample
    /// mean equals the model mean.
    ShiftedLognormal { sigma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RttModel {
    pub mean: Millis,
    pub jitter: JitterMode,
    pub minimum: Millis,
}

impl RttModel {
    pub fn deterministic(mean: Millis) -> Self {
        RttModel { mean, jitter: JitterMode::Deterministic, minimum: mean }
    }

    /// Lognormal jitter with the floor at half the mean.
    pub fn shifted_lognormal(mean: Millis, sigma: f64) -> Self {
        RttModel { mean, jitter: JitterMode::ShiftedLognormal { sigma }, minimum: Millis(mean.exact() / 2) }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self.jitter, JitterMode::Deterministic)
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        if self.mean <= Millis::ZERO {
            return Err(LinkError::InvalidRttModel("mean must be positive".into()));
        }
        if let JitterMode::ShiftedLognormal { sigma } = self.jitter {
            if !(sigma >= 0.0) || !sigma.is_finite() {
                return Err(LinkError::InvalidRttModel("sigma must be nonnegative".into()));
            }
            if self.minimum <= Millis::ZERO {
                return Err(LinkError::InvalidRttModel("minimum must be positive".into()));
            }
            if sigma > 0.0 && self.minimum >= self.mean {
                return Err(LinkError::InvalidRttModel("minimum must be below the mean".into()));
            }
        }
        Ok(())
    }
}

/// Draws one round-trip time in milliseconds.
pub fn sample_rtt<R: Rng + ?Sized>(model: &RttModel, rng: &mut R) -> Result<f64, LinkError> {
    model.validate()?;
    match model.jitter {
        JitterMode::Deterministic => Ok(model.mean.as_f64()),
        JitterMode::ShiftedLognormal { sigma } if sigma == 0.0 => Ok(model.mean.as_f64()),
        JitterMode::ShiftedLognormal { sigma } => {
            let floor = model.minimum.as_f64();
            let excess = model.mean.as_f64() - floor;
            let mu = excess.ln() - sigma * sigma / 2.0;
            let dist = LogNormal::new(mu, sigma).map_err(|e| LinkError::InvalidRttModel(e.to_string()))?;
            Ok(floor + dist.sample(rng))
        }
    }
}

/// One row of the transmission-time table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransmissionRow {
    pub configuration: String,
    pub name: String,
    pub tx_ms: f64,
    pub tx_ms_rounded: i128,
    pub access_ms: f64,
    pub access_ms_rounded: i128,
    pub remaining_ms: i128,
    pub verdict: Verdict,
}

pub fn transmission_table(frame_bits: u64, profiles: &[LinkProfile], budget: &LatencyBudget) -> Result<Vec<TransmissionRow>, LinkError> {
    profiles
        .iter()
        .map(|p| {
            let tx = frame_transmission_time(frame_bits, p.uplink_rate)?;
            let access = access_network_latency(tx, p.rtt_mean);
            Ok(TransmissionRow {
                configuration: p.label(),
                name: p.name.clone(),
                tx_ms: tx.as_f64(),
                tx_ms_rounded: tx.rounded(),
                access_ms: access.as_f64(),
                access_ms_rounded: access.rounded(),
                remaining_ms: remaining_budget(access, budget).rounded(),
                verdict: budget_verdict(access, Millis::ZERO, budget),
            })
        })
        .collect()
}

pub fn exact_ms(x: f64) -> Option<Millis> {
    exact_from_f64(x).map(Millis)
}
