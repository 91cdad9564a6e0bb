//! Loopback emulation: a device agent streams shaped, delayed frames to an
//! edge agent over a real socket and measures command round trips.

mod device;
mod edge;
pub mod shaper;
pub mod wire;

use std::io;
use std::net::SocketAddr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::Millis;

pub use device::{run_device, DeviceConfig, DEFAULT_CHUNK_BYTES};
pub use edge::{run_edge, spawn_edge, EdgeConfig, EdgeHandle, EdgeStats};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    #[default]
    Tcp,
    Udp,
}

#[derive(Debug, Error)]
pub enum EmuError {
    #[error("edge endpoint {addr} unreachable")]
    Unreachable { addr: SocketAddr, source: io::Error },
    #[error("transport error: {0}")]
    Transport(#[from] io::Error),
    #[error("invalid emulation setup: {0}")]
    Config(String),
}

/// What the device agent measured.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalReport {
    pub samples_ms: Vec<f64>,
    pub achieved_ul_mbps: f64,
    pub missed: u64,
    pub malformed: u64,
    pub generated: u64,
    pub delivered: u64,
}

impl EmpiricalReport {
    pub fn mean_ms(&self) -> Option<f64> {
        if self.samples_ms.is_empty() {
            None
        } else {
            Some(self.samples_ms.iter().sum::<f64>() / self.samples_ms.len() as f64)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub analytic_ms: f64,
    pub measured_mean_ms: Option<f64>,
    pub tolerance_ms: f64,
    pub agrees: bool,
}

/// Measured mean against the analytic latency, tolerance
/// max(15 % of analytic, 5 ms).
pub fn compare(report: &EmpiricalReport, analytic: Millis) -> Comparison {
    let analytic_ms = analytic.as_f64();
    let tolerance_ms = (0.15 * analytic_ms).max(5.0);
    let measured_mean_ms = report.mean_ms();
    let agrees = measured_mean_ms.is_some_and(|m| (m - analytic_ms).abs() <= tolerance_ms);
    Comparison { analytic_ms, measured_mean_ms, tolerance_ms, agrees }
}
