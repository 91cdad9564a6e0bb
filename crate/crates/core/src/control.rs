//! Shared-control mode machine: edge control with failsafe fallback to the
//! local controller.
//!
//! The limb runs with full dexterity while edge commands arrive in time.
//! A streak of missed command deadlines, or an explicit link-down event,
//! drops it to the local controller, which only recognizes gross motions.
//! Returning to edge control always takes a streak of on-time commands,
//! even after the link reports up again. Every transition raises a user
//! alert.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{exact_from_f64, exact_to_f64, Millis};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ControlError {
    #[error("non-monotone clock")]
    NonMonotoneClock,
    #[error("invalid failsafe config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FailsafeConfig {
    pub miss_threshold: u32,
    pub command_deadline: Millis,
    pub recovery_probes: u32,
    pub alert_channel: String,
}

impl Default for FailsafeConfig {
    fn default() -> Self {
        FailsafeConfig {
            miss_threshold: 3,
            command_deadline: Millis::from_int(125),
            recovery_probes: 10,
            alert_channel: "haptic_feedback".into(),
        }
    }
}

impl FailsafeConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        if self.miss_threshold < 1 {
            return Err(ControlError::InvalidConfig("miss_threshold must be at least 1".into()));
        }
        if self.recovery_probes < 1 {
            return Err(ControlError::InvalidConfig("recovery_probes must be at least 1".into()));
        }
        if self.command_deadline <= Millis::ZERO {
            return Err(ControlError::InvalidConfig("command_deadline_ms must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailsafeDoc {
    #[serde(default = "default_miss_threshold")]
    pub miss_threshold: u32,
    /// Defaults to the upper latency bound when absent.
    #[serde(default)]
    pub command_deadline_ms: Option<f64>,
    #[serde(default = "default_recovery_probes")]
    pub recovery_probes: u32,
    #[serde(default = "default_alert_channel")]
    pub alert_channel: String,
}

fn default_miss_threshold() -> u32 {
    3
}

fn default_recovery_probes() -> u32 {
    10
}

fn default_alert_channel() -> String {
    "haptic_feedback".into()
}

impl Default for FailsafeDoc {
    fn default() -> Self {
        FailsafeDoc {
            miss_threshold: default_miss_threshold(),
            command_deadline_ms: None,
            recovery_probes: default_recovery_probes(),
            alert_channel: default_alert_channel(),
        }
    }
}

impl FailsafeDoc {
    pub fn resolve(&self, budget_upper: Millis) -> Result<FailsafeConfig, ControlError> {
        let command_deadline = match self.command_deadline_ms {
            Some(v) => Millis(
                exact_from_f64(v).ok_or_else(|| ControlError::InvalidConfig("command_deadline_ms must be finite".into()))?,
            ),
            None => budget_upper,
        };
        let cfg = FailsafeConfig {
            miss_threshold: self.miss_threshold,
            command_deadline,
            recovery_probes: self.recovery_probes,
            alert_channel: self.alert_channel.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<&FailsafeConfig> for FailsafeDoc {
    fn from(c: &FailsafeConfig) -> Self {
        FailsafeDoc {
            miss_threshold: c.miss_threshold,
            command_deadline_ms: Some(exact_to_f64(&c.command_deadline.exact())),
            recovery_probes: c.recovery_probes,
            alert_channel: c.alert_channel.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    EdgeActive,
    LocalFallback,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    FullDexterity,
    GrossMotions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransitionCause {
    #[serde(rename = "timeout_streak")]
    TimeoutStreak,
    #[serde(rename = "link_down")]
    LinkDown,
    #[serde(rename = "recovery_streak")]
    RecoveryStreak,
    #[serde(rename = "link_up+probes")]
    LinkUpProbes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommandOutcome {
    OnTime,
    Missed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkEvent {
    Up,
    Down,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeTransition {
    /// Milliseconds.
    pub time: f64,
    pub from: Mode,
    pub to: Mode,
    pub cause: TransitionCause,
    pub alert_emitted: bool,
    pub alert_channel: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlMode {
    config: FailsafeConfig,
    mode: Mode,
    since: f64,
    now: f64,
    miss_streak: u32,
    recovery_streak: u32,
    link_up: bool,
    /// Whether an up event arrived during the current fallback episode
    /// after a link loss.
    saw_link_up: bool,
    history: Vec<ModeTransition>,
}

impl ControlMode {
    pub fn new(config: FailsafeConfig) -> Result<Self, ControlError> {
        config.validate()?;
        Ok(ControlMode {
            config,
            mode: Mode::EdgeActive,
            since: 0.0,
            now: f64::NEG_INFINITY,
            miss_streak: 0,
            recovery_streak: 0,
            link_up: true,
            saw_link_up: false,
            history: Vec::new(),
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn since(&self) -> f64 {
        self.since
    }

    pub fn capability(&self) -> Capability {
        capability(self.mode)
    }

    pub fn history(&self) -> &[ModeTransition] {
        &self.history
    }

    pub fn config(&self) -> &FailsafeConfig {
        &self.config
    }

    pub fn link_up(&self) -> bool {
        self.link_up
    }

    fn tick(&mut self, now: f64) -> Result<(), ControlError> {
        if now < self.now {
            return Err(ControlError::NonMonotoneClock);
        }
        self.now = now;
        Ok(())
    }

    fn switch(&mut self, to: Mode, cause: TransitionCause, now: f64) -> ModeTransition {
        let t = ModeTransition {
            time: now,
            from: self.mode,
            to,
            cause,
            alert_emitted: true,
            alert_channel: self.config.alert_channel.clone(),
        };
        self.mode = to;
        self.since = now;
        self.miss_streak = 0;
        self.recovery_streak = 0;
        self.saw_link_up = false;
        self.history.push(t.clone());
        t
    }

    pub fn on_command_outcome(&mut self, outcome: CommandOutcome, now: f64) -> Result<Option<ModeTransition>, ControlError> {
        self.tick(now)?;
        let transition = match (self.mode, outcome) {
            (Mode::EdgeActive, CommandOutcome::OnTime) => {
                self.miss_streak = 0;
                None
            }
            (Mode::EdgeActive, CommandOutcome::Missed) => {
                self.miss_streak += 1;
                (self.miss_streak >= self.config.miss_threshold)
                    .then(|| self.switch(Mode::LocalFallback, TransitionCause::TimeoutStreak, now))
            }
            (Mode::LocalFallback, CommandOutcome::Missed) => {
                self.recovery_streak = 0;
                None
            }
            (Mode::LocalFallback, CommandOutcome::OnTime) => {
                self.recovery_streak += 1;
                if self.recovery_streak >= self.config.recovery_probes {
                    let cause =
                        if self.saw_link_up { TransitionCause::LinkUpProbes } else { TransitionCause::RecoveryStreak };
                    Some(self.switch(Mode::EdgeActive, cause, now))
                } else {
                    None
                }
            }
        };
        Ok(transition)
    }

    pub fn on_link_event(&mut self, event: LinkEvent, now: f64) -> Result<Option<ModeTransition>, ControlError> {
        self.tick(now)?;
        match event {
            LinkEvent::Down => {
                self.link_up = false;
                match self.mode {
                    Mode::EdgeActive => Ok(Some(self.switch(Mode::LocalFallback, TransitionCause::LinkDown, now))),
                    Mode::LocalFallback => {
                        self.recovery_streak = 0;
                        self.saw_link_up = false;
                        Ok(None)
                    }
                }
            }
            LinkEvent::Up => {
                self.link_up = true;
                if self.mode == Mode::LocalFallback {
                    self.saw_link_up = true;
                }
                Ok(None)
            }
        }
    }
}

pub fn capability(mode: Mode) -> Capability {
    match mode {
        Mode::EdgeActive => Capability::FullDexterity,
        Mode::LocalFallback => Capability::GrossMotions,
    }
}
