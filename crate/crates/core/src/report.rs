//! Reproduced tables and simulation reports.

use std::fmt::Write as _;

use serde::Serialize;

use crate::catalog::{frame_size, Direction};
use crate::engine::{analytic_crosscheck, run, EngineError, EventTrace, Metrics, Scenario};
use crate::link::{
    budget_verdict, builtin_profiles, transmission_table, LatencyBudget, LinkProfileDoc, TransmissionRow, Verdict,
};
use crate::qos::{feasibility_report, DirectionLoad};
use crate::scenario::{ConfigError, ScenarioFile};
use crate::units::{exact_from_f64, Millis};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Frame size of the testbed camera, 424x240 at 32 bits per pixel.
pub fn testbed_frame_bits() -> u64 {
    frame_size(424, 240, 32)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tables {
    pub frame_bits: u64,
    pub network_performance: Vec<LinkProfileDoc>,
    pub transmission: Vec<TransmissionRow>,
}

pub fn tables() -> Tables {
    let profiles = builtin_profiles();
    let frame_bits = testbed_frame_bits();
    Tables {
        frame_bits,
        network_performance: profiles.iter().map(LinkProfileDoc::from).collect(),
        transmission: transmission_table(frame_bits, &profiles, &LatencyBudget::default())
            .expect("builtin profiles have positive rates"),
    }
}

/// Fixed-width text rendering of both tables.
pub fn render_tables(t: &Tables) -> String {
    let profiles = builtin_profiles();
    let mut out = String::new();
    out.push_str("Measured network performance\n");
    let _ = writeln!(out, "{:<20}{:>14}{:>16}{:>13}", "Configuration", "Uplink speed", "Downlink speed", "Average RTT");
    for p in &profiles {
        let _ = writeln!(
            out,
            "{:<20}{:>14}{:>16}{:>13}",
            p.label(),
            format!("{} Mb/s", crate::units::round_half_up(&p.uplink_rate.mbps())),
            format!("{} Mb/s", crate::units::round_half_up(&p.downlink_rate.mbps())),
            format!("{} ms", p.rtt_mean.rounded()),
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "Transmission time (frame of {} bits)", t.frame_bits);
    let _ = writeln!(out, "{:<20}{:>25}{:>24}", "Configuration", "Frame transmission time", "Access network latency");
    for r in &t.transmission {
        let _ = writeln!(
            out,
            "{:<20}{:>25}{:>24}",
            r.configuration,
            format!("{} ms", r.tx_ms_rounded),
            format!("{} ms", r.access_ms_rounded)
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StreamVerdict {
    pub stream_id: String,
    pub direction: Direction,
    pub p95_ms: Option<f64>,
    /// None when no frame of the stream settled.
    pub verdict: Option<Verdict>,
}

/// Per-stream verdict from the p95 control latency. A stream whose frames
/// were all dropped is infeasible.
pub fn stream_verdicts(metrics: &Metrics, budget: &LatencyBudget) -> Vec<StreamVerdict> {
    metrics
        .streams
        .iter()
        .map(|s| {
            let p95 = s.latency.as_ref().map(|l| l.p95_ms);
            let verdict = match p95 {
                Some(v) => {
                    let ms = Millis(exact_from_f64(v).expect("latency is finite"));
                    Some(budget_verdict(ms, Millis::ZERO, budget))
                }
                None if s.counters.dropped > 0 => Some(Verdict::Infeasible),
                None => None,
            };
            StreamVerdict { stream_id: s.stream_id.clone(), direction: s.direction, p95_ms: p95, verdict }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrosscheckEntry {
    pub stream_id: String,
    pub analytic_ms: f64,
    pub analytic_ms_rounded: i128,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportDocument {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub scenario: ScenarioFile,
    pub metrics: Metrics,
    pub verdicts: Vec<StreamVerdict>,
    pub feasibility: Vec<DirectionLoad>,
    /// Present when the scenario has a closed-form latency.
    pub crosscheck: Option<Vec<CrosscheckEntry>>,
    pub tables: Tables,
}

impl ReportDocument {
    pub fn any_infeasible(&self) -> bool {
        self.verdicts.iter().any(|v| v.verdict == Some(Verdict::Infeasible))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimulateError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Resolves, runs, and assembles the report for one scenario file.
pub fn simulate(file: &ScenarioFile) -> Result<(ReportDocument, EventTrace), SimulateError> {
    let scenario: Scenario = file.resolve()?;
    let (trace, metrics) = run(&scenario)?;
    let crosscheck = analytic_crosscheck(&scenario).ok().map(|rows| {
        rows.into_iter()
            .map(|(stream_id, ms)| CrosscheckEntry { stream_id, analytic_ms: ms.as_f64(), analytic_ms_rounded: ms.rounded() })
            .collect()
    });
    let report = ReportDocument {
        tool: "limbnet",
        tool_version: TOOL_VERSION,
        scenario: file.clone(),
        verdicts: stream_verdicts(&metrics, &scenario.budget),
        feasibility: feasibility_report(&scenario.streams, &scenario.link),
        metrics,
        crosscheck,
        tables: tables(),
    };
    Ok((report, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rows_match_reference_values() {
        let t = tables();
        assert_eq!(t.frame_bits, 3_256_320);
        let tx: Vec<_> = t.transmission.iter().map(|r| r.tx_ms_rounded).collect();
        let access: Vec<_> = t.transmission.iter().map(|r| r.access_ms_rounded).collect();
        assert_eq!(tx, [148, 68, 54, 30, 18, 14]);
        assert_eq!(access, [172, 95, 77, 60, 45, 41]);
    }

    #[test]
    fn rendered_tables_are_stable() {
        let text = render_tables(&tables());
        assert_eq!(text, render_tables(&tables()));
        assert!(text.contains("4G (10 MHz)                22 Mb/s         47 Mb/s        24 ms"), "{text}");
        assert!(text.contains("5G (60 MHz) opt.                        18 ms                   45 ms"), "{text}");
    }

    #[test]
    fn testbed_report() {
        let (report, _) = simulate(&ScenarioFile::testbed("5g100opt", 5.0)).unwrap();
        let cam = report.metrics.stream("rgbd_camera").unwrap();
        assert_eq!(cam.latency.as_ref().unwrap().p50_ms.round(), 41.0);
        assert_eq!(report.metrics.budget_violation_fraction, 0.0);
        assert!(!report.any_infeasible());
        assert!(report.metrics.conserved());

        let (report, _) = simulate(&ScenarioFile::testbed("4g10", 5.0)).unwrap();
        assert!(report.any_infeasible());
    }

    #[test]
    fn echo_reproduces_metrics() {
        let mut f = ScenarioFile::testbed("5g60", 3.0);
        f.rtt_model.mode = crate::scenario::RttMode::ShiftedLognormal;
        f.rtt_model.sigma = 0.4;
        f.seed = 99;
        let (a, _) = simulate(&f).unwrap();
        let echoed = ScenarioFile::from_json(&serde_json::to_string(&a.scenario).unwrap()).unwrap();
        let (b, _) = simulate(&echoed).unwrap();
        assert_eq!(a.metrics, b.metrics);
    }
}
