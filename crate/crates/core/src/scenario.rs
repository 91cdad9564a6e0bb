//! JSON scenario files and their resolution into engine scenarios.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::catalog::{lookup, StreamDoc, StreamSpec};
use crate::control::FailsafeDoc;
use crate::engine::{EdgeProcessing, Outage, Scenario, DEFAULT_QUEUE_BOUND};
use crate::link::{profile, LatencyBudget, LinkProfile, LinkProfileDoc, RttModel};
use crate::qos::{PolicyDoc, SchedulerPolicy};
use crate::units::{exact_from_f64, Exact, Millis};

/// Validation failure pinned to a field path such as `streams[1].source`.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("`{field}`: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError { field: field.into(), reason: reason.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum StreamRef {
    Builtin(String),
    Inline(StreamDoc),
}

impl<'de> Deserialize<'de> for StreamRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(id) => Ok(StreamRef::Builtin(id)),
            other => StreamDoc::deserialize(other).map(StreamRef::Inline).map_err(D::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum LinkRef {
    Builtin(String),
    Inline(LinkProfileDoc),
}

impl<'de> Deserialize<'de> for LinkRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(name) => Ok(LinkRef::Builtin(name)),
            other => LinkProfileDoc::deserialize(other).map(LinkRef::Inline).map_err(D::Error::custom),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RttMode {
    #[default]
    Deterministic,
    ShiftedLognormal,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RttModelDoc {
    #[serde(default)]
    pub mode: RttMode,
    #[serde(default)]
    pub sigma: f64,
    /// Defaults to the link's average RTT.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_ms: Option<f64>,
    /// Defaults to half the mean.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minimum_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ProcessingDoc {
    Fixed(f64),
    Normal { mean: f64, sigma: f64 },
}

impl Default for ProcessingDoc {
    fn default() -> Self {
        ProcessingDoc::Fixed(0.0)
    }
}

impl<'de> Deserialize<'de> for ProcessingDoc {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Normal {
            mean: f64,
            sigma: f64,
        }
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::Number(n) => {
                n.as_f64().map(ProcessingDoc::Fixed).ok_or_else(|| D::Error::custom("not a finite number"))
            }
            other => Normal::deserialize(other)
                .map(|n| ProcessingDoc::Normal { mean: n.mean, sigma: n.sigma })
                .map_err(|e| D::Error::custom(format!("expected milliseconds or {{mean, sigma}}: {e}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetDoc {
    pub lower_ms: f64,
    pub upper_ms: f64,
}

impl Default for BudgetDoc {
    fn default() -> Self {
        BudgetDoc { lower_ms: 100.0, upper_ms: 125.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutageDoc {
    pub start_s: f64,
    pub end_s: f64,
}

fn default_queue_bound() -> usize {
    DEFAULT_QUEUE_BOUND
}

/// A scenario as written on disk. Serializing it back gives the
/// self-contained echo stored in reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub streams: Vec<StreamRef>,
    pub link: LinkRef,
    #[serde(default)]
    pub rtt_model: RttModelDoc,
    #[serde(default)]
    pub qos: PolicyDoc,
    #[serde(default)]
    pub edge_processing_ms: ProcessingDoc,
    #[serde(default)]
    pub budget: BudgetDoc,
    #[serde(default)]
    pub failsafe: FailsafeDoc,
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_queue_bound")]
    pub queue_bound_frames: usize,
    #[serde(default)]
    pub link_outages: Vec<OutageDoc>,
}

fn exact(field: &str, v: f64) -> Result<Exact, ConfigError> {
    exact_from_f64(v).ok_or_else(|| ConfigError::new(field, "must be a finite number"))
}

impl ScenarioFile {
    /// Parses and checks the document shape; unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "(document)".to_string() } else { path };
            ConfigError::new(field, e.into_inner().to_string())
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// The default testbed loop on the named link.
    pub fn testbed(link: &str, duration_s: f64) -> Self {
        ScenarioFile {
            streams: vec![StreamRef::Builtin("rgbd_camera".into()), StreamRef::Builtin("command".into())],
            link: LinkRef::Builtin(link.into()),
            rtt_model: RttModelDoc::default(),
            qos: PolicyDoc::default(),
            edge_processing_ms: ProcessingDoc::default(),
            budget: BudgetDoc::default(),
            failsafe: FailsafeDoc::default(),
            duration_s,
            seed: 0,
            queue_bound_frames: DEFAULT_QUEUE_BOUND,
            link_outages: Vec::new(),
        }
    }

    /// Builds and validates the engine scenario.
    pub fn resolve(&self) -> Result<Scenario, ConfigError> {
        let streams = self
            .streams
            .iter()
            .enumerate()
            .map(|(i, s)| -> Result<StreamSpec, ConfigError> {
                let field = format!("streams[{i}]");
                match s {
                    StreamRef::Builtin(id) => lookup(id).map_err(|e| ConfigError::new(field, e.to_string())),
                    StreamRef::Inline(doc) => {
                        StreamSpec::try_from(doc.clone()).map_err(|e| ConfigError::new(field, e.to_string()))
                    }
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let link: LinkProfile = match &self.link {
            LinkRef::Builtin(name) => profile(name).map_err(|e| ConfigError::new("link", e.to_string()))?,
            LinkRef::Inline(doc) => {
                LinkProfile::try_from(doc.clone()).map_err(|e| ConfigError::new("link", e.to_string()))?
            }
        };

        let mean = match self.rtt_model.mean_ms {
            Some(v) => Millis(exact("rtt_model.mean_ms", v)?),
            None => link.rtt_mean,
        };
        let mut rtt_model = match self.rtt_model.mode {
            RttMode::Deterministic => RttModel::deterministic(mean),
            RttMode::ShiftedLognormal => RttModel::shifted_lognormal(mean, self.rtt_model.sigma),
        };
        if let Some(v) = self.rtt_model.minimum_ms {
            if self.rtt_model.mode == RttMode::Deterministic {
                return Err(ConfigError::new("rtt_model.minimum_ms", "only applies to shifted_lognormal"));
            }
            rtt_model.minimum = Millis(exact("rtt_model.minimum_ms", v)?);
        }

        let qos = SchedulerPolicy::try_from(&self.qos).map_err(|e| ConfigError::new("qos", e.to_string()))?;
        let edge_processing = match self.edge_processing_ms {
            ProcessingDoc::Fixed(v) => EdgeProcessing::Fixed(Millis(exact("edge_processing_ms", v)?)),
            ProcessingDoc::Normal { mean, sigma } => EdgeProcessing::TruncatedNormal { mean_ms: mean, sigma_ms: sigma },
        };
        let budget = LatencyBudget::new(
            Millis(exact("budget.lower_ms", self.budget.lower_ms)?),
            Millis(exact("budget.upper_ms", self.budget.upper_ms)?),
        )
        .map_err(|e| ConfigError::new("budget", e.to_string()))?;
        let failsafe = self.failsafe.resolve(budget.upper).map_err(|e| ConfigError::new("failsafe", e.to_string()))?;
        let outages = self
            .link_outages
            .iter()
            .enumerate()
            .map(|(i, o)| {
                Ok(Outage {
                    start: exact(&format!("link_outages[{i}].start_s"), o.start_s)?,
                    end: exact(&format!("link_outages[{i}].end_s"), o.end_s)?,
                })
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;

        let scenario = Scenario {
            streams,
            link,
            rtt_model,
            qos,
            edge_processing,
            budget,
            failsafe,
            duration: exact("duration_s", self.duration_s)?,
            seed: self.seed,
            queue_bound: self.queue_bound_frames,
            outages,
        };
        scenario.validate().map_err(|e| match e {
            crate::engine::EngineError::Invalid { field, reason } => ConfigError { field, reason },
            other => ConfigError::new("(scenario)", other.to_string()),
        })?;
        Ok(scenario)
    }
}
