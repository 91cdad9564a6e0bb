mod common;

use common::*;
use limbnet::control::{CommandOutcome, ControlMode, FailsafeConfig, LinkEvent, Mode};

fn config(threshold: u32, probes: u32) -> FailsafeConfig {
    FailsafeConfig { miss_threshold: threshold, recovery_probes: probes, ..FailsafeConfig::default() }
}

#[test]
fn matches_reference_on_short_sequences() {
    for (threshold, probes) in [(1, 1), (2, 3), (3, 10)] {
        let n = exhaustive_failsafe(&config(threshold, probes), 7).unwrap();
        assert_eq!(n, (4u64.pow(8) - 1) / 3);
    }
}

#[test]
fn reference_agrees_with_hand_traces() {
    let mut r = Reference::new(3, 1);
    for ev in [Ev::Missed, Ev::OnTime, Ev::Missed, Ev::Missed] {
        r.step(ev);
    }
    assert_eq!(r.mode(), Mode::EdgeActive);
    assert!(r.step(Ev::Missed));
    assert_eq!(r.alerts, 1);
    assert!(!r.step(Ev::Down));
    assert!(r.step(Ev::OnTime));
    assert_eq!(r.mode(), Mode::EdgeActive);
}

#[test]
fn dead_link_reaches_fallback_and_healthy_link_recovers() {
    let cfg = FailsafeConfig::default();
    let mut m = ControlMode::new(cfg.clone()).unwrap();
    let mut t = 0.0;
    while m.mode() == Mode::EdgeActive {
        t += 10.0;
        m.on_command_outcome(CommandOutcome::Missed, t).unwrap();
    }
    assert_eq!(t, 10.0 * cfg.miss_threshold as f64);
    m.on_link_event(LinkEvent::Up, t).unwrap();
    let mut probes = 0;
    while m.mode() == Mode::LocalFallback {
        t += 10.0;
        probes += 1;
        m.on_command_outcome(CommandOutcome::OnTime, t).unwrap();
    }
    assert_eq!(probes, cfg.recovery_probes);
    assert_eq!(m.history().len(), 2);
}
