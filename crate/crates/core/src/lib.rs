//! Latency modeling, discrete-event simulation and loopback emulation for
//! bionic limbs whose perception and control run on an edge server over a
//! 4G/5G access network.

pub mod catalog;
pub mod control;
pub mod emu;
pub mod engine;
pub mod link;
pub mod qos;
pub mod report;
pub mod scenario;
pub mod units;
