//! Stream inventory: sensory, feedback and command streams with their rates.
//!
//! All rate arithmetic is exact. The built-in catalog models a dexterous
//! prosthetic hand with high-density EMG, an IMU, an electronic skin, a
//! wrist-mounted RGBD camera, electrotactile and XR feedback, and the
//! command stream returned by the edge controller.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{exact_from_f64, exact_to_f64, DataRate, Exact};

/// Payload bytes of a single control decision sent back to the device.
pub const COMMAND_PAYLOAD_BYTES: u32 = 8;

/// Bits per pixel of the RGBD camera: 24-bit RGB plus 8-bit depth.
pub const RGBD_BITS_PER_PIXEL: u32 = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CatalogError {
    #[error("stream `{id}`: field `{field}` {reason}")]
    InvalidStream { id: String, field: &'static str, reason: String },
    #[error("unknown stream id `{0}`")]
    UnknownStream(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    SampledSensor,
    Video,
    Feedback,
    Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Uplink,
    Downlink,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Uplink => "uplink",
            Direction::Downlink => "downlink",
        })
    }
}

/// Scheduling class; rank 0 is served first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriorityClass {
    pub rank: u8,
}

impl PriorityClass {
    pub const HIGHEST: PriorityClass = PriorityClass { rank: 0 };

    pub const fn new(rank: u8) -> Self {
        PriorityClass { rank }
    }
}

/// How a stream's bits are produced.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum StreamSource {
    Sampled { channels: u64, sample_rate_hz: u64, bits_per_sample: u64 },
    Video { width: u64, height: u64, bits_per_pixel: u64, fps: u64 },
    /// Opaque constant-rate stream (e.g. compressed XR delivery).
    ConstantRate { rate_bps: DataRate },
    /// Event-driven fixed payload, one message per control decision.
    Payload { bytes: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamSpec {
    pub id: String,
    pub kind: StreamKind,
    pub direction: Direction,
    pub source: StreamSource,
    /// Seconds between frames. Derived as `1/fps` for video; `None` for
    /// event-driven payload streams.
    pub frame_interval: Option<Exact>,
    pub priority: PriorityClass,
}

pub fn sampled_stream_rate(channels: u64, sample_rate_hz: u64, bits_per_sample: u64) -> DataRate {
    DataRate::from_bps(channels * sample_rate_hz * bits_per_sample)
}

pub fn video_stream_rate(width: u64, height: u64, bits_per_pixel: u64, fps: u64) -> DataRate {
    DataRate::from_bps(frame_size(width, height, bits_per_pixel) * fps)
}

/// Bits in one uncompressed frame.
pub fn frame_size(width: u64, height: u64, bits_per_pixel: u64) -> u64 {
    width * height * bits_per_pixel
}

impl StreamSpec {
    pub fn sampled(
        id: &str,
        kind: StreamKind,
        direction: Direction,
        (channels, sample_rate_hz, bits_per_sample): (u64, u64, u64),
        frame_interval: Exact,
        priority: u8,
    ) -> Self {
        StreamSpec {
            id: id.to_string(),
            kind,
            direction,
            source: StreamSource::Sampled { channels, sample_rate_hz, bits_per_sample },
            frame_interval: Some(frame_interval),
            priority: PriorityClass::new(priority),
        }
    }

    pub fn video(id: &str, width: u64, height: u64, bits_per_pixel: u64, fps: u64, priority: u8) -> Self {
        StreamSpec {
            id: id.to_string(),
            kind: StreamKind::Video,
            direction: Direction::Uplink,
            source: StreamSource::Video { width, height, bits_per_pixel, fps },
            frame_interval: (fps > 0).then(|| Exact::new(1, fps as i128)),
            priority: PriorityClass::new(priority),
        }
    }

    /// Nominal offered rate; `None` for event-driven payload streams.
    pub fn rate(&self) -> Option<DataRate> {
        match &self.source {
            StreamSource::Sampled { channels, sample_rate_hz, bits_per_sample } => {
                Some(sampled_stream_rate(*channels, *sample_rate_hz, *bits_per_sample))
            }
            StreamSource::Video { width, height, bits_per_pixel, fps } => {
                Some(video_stream_rate(*width, *height, *bits_per_pixel, *fps))
            }
            StreamSource::ConstantRate { rate_bps } => Some(*rate_bps),
            StreamSource::Payload { .. } => None,
        }
    }

    /// Bits per generated frame, rounded up to whole bits.
    pub fn frame_bits(&self) -> u64 {
        match &self.source {
            StreamSource::Video { width, height, bits_per_pixel, .. } => frame_size(*width, *height, *bits_per_pixel),
            StreamSource::Payload { bytes } => *bytes as u64 * 8,
            _ => match (self.rate(), self.frame_interval) {
                (Some(rate), Some(interval)) => rate.bits_over(interval).ceil().to_integer().max(0) as u64,
                _ => 0,
            },
        }
    }

    /// Streams that produce frames on a clock (everything but commands).
    pub fn is_periodic(&self) -> bool {
        !matches!(self.source, StreamSource::Payload { .. }) && self.frame_interval.is_some()
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        let bad = |field: &'static str, reason: &str| CatalogError::InvalidStream {
            id: self.id.clone(),
            field,
            reason: reason.to_string(),
        };
        if self.id.is_empty() {
            return Err(bad("id", "must not be empty"));
        }
        match (&self.kind, &self.source) {
            (StreamKind::Video, StreamSource::Video { fps, .. }) => {
                let expected = (*fps > 0).then(|| Exact::new(1, *fps as i128));
                if self.frame_interval != expected {
                    return Err(bad("frame_interval", "must equal 1/fps for video"));
                }
            }
            (StreamKind::Video, _) => return Err(bad("source", "video streams need video geometry")),
            (_, StreamSource::Video { .. }) => return Err(bad("source", "video geometry only allowed on video streams")),
            (StreamKind::Command, StreamSource::Payload { bytes }) => {
                if *bytes == 0 {
                    return Err(bad("bytes", "must be positive"));
                }
                if self.direction != Direction::Downlink {
                    return Err(bad("direction", "commands travel downlink"));
                }
            }
            (StreamKind::Command, _) => return Err(bad("source", "command streams carry a fixed payload")),
            (_, StreamSource::Payload { .. }) => return Err(bad("source", "payload source only allowed on command streams")),
            (StreamKind::SampledSensor, StreamSource::ConstantRate { .. }) => {
                return Err(bad("source", "sampled sensors need channel geometry"))
            }
            _ => {}
        }
        if let StreamSource::Sampled { bits_per_sample, .. } = &self.source {
            if !(1..=64).contains(bits_per_sample) {
                return Err(bad("bits_per_sample", "must be within 1..=64"));
            }
        }
        if !matches!(self.source, StreamSource::Payload { .. } | StreamSource::Video { .. }) {
            match self.frame_interval {
                Some(i) if i > Exact::from_integer(0) => {}
                _ => return Err(bad("frame_interval_s", "must be positive")),
            }
        }
        Ok(())
    }
}

/// The seven built-in streams.
pub fn builtin_catalog() -> Vec<StreamSpec> {
    vec![
        // 64-channel HD-EMG, 2 kHz, 16 bit, batched every 10 ms.
        StreamSpec::sampled("emg64", StreamKind::SampledSensor, Direction::Uplink, (64, 2000, 16), Exact::new(1, 100), 0),
        // 3-axis accelerometer, gyroscope and magnetometer.
        StreamSpec::sampled("imu", StreamKind::SampledSensor, Direction::Uplink, (9, 50, 8), Exact::new(1, 50), 1),
        StreamSpec::sampled("tactile64", StreamKind::SampledSensor, Direction::Uplink, (64, 2000, 8), Exact::new(1, 100), 2),
        StreamSpec::video("rgbd_camera", 424, 240, RGBD_BITS_PER_PIXEL as u64, 30, 3),
        StreamSpec::sampled("haptic_feedback", StreamKind::Feedback, Direction::Downlink, (64, 100, 8), Exact::new(1, 100), 1),
        StreamSpec {
            id: "xr_feedback".into(),
            kind: StreamKind::Feedback,
            direction: Direction::Downlink,
            source: StreamSource::ConstantRate { rate_bps: DataRate::from_mbps(400) },
            frame_interval: Some(Exact::new(1, 60)),
            priority: PriorityClass::new(2),
        },
        StreamSpec {
            id: "command".into(),
            kind: StreamKind::Command,
            direction: Direction::Downlink,
            source: StreamSource::Payload { bytes: COMMAND_PAYLOAD_BYTES },
            frame_interval: None,
            priority: PriorityClass::HIGHEST,
        },
    ]
}

pub fn lookup(id: &str) -> Result<StreamSpec, CatalogError> {
    builtin_catalog()
        .into_iter()
        .find(|s| s.id == id)
        .ok_or_else(|| CatalogError::UnknownStream(id.to_string()))
}

/// Deterministic order: direction, then rank, then id.
pub fn sort_by_priority(streams: &mut [StreamSpec]) {
    streams.sort_by(|a, b| (a.direction, a.priority, &a.id).cmp(&(b.direction, b.priority, &b.id)));
}

/// Checks the class ordering rules: commands outrank every other downlink
/// stream and EMG outranks every other uplink stream.
pub fn check_priority_order(streams: &[StreamSpec]) -> bool {
    let outranks = |top: &StreamSpec| {
        streams
            .iter()
            .filter(|s| s.direction == top.direction && s.id != top.id)
            .all(|s| top.priority < s.priority)
    };
    streams.iter().filter(|s| s.kind == StreamKind::Command).all(outranks)
        && streams.iter().filter(|s| s.id.starts_with("emg")).all(outranks)
}

/// Row of the machine-readable catalog export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: String,
    pub kind: StreamKind,
    pub direction: Direction,
    pub rate_bps: Option<f64>,
    pub frame_bits: u64,
    pub frame_interval_s: Option<f64>,
    pub priority_rank: u8,
}

impl From<&StreamSpec> for CatalogEntry {
    fn from(s: &StreamSpec) -> Self {
        CatalogEntry {
            id: s.id.clone(),
            kind: s.kind,
            direction: s.direction,
            rate_bps: s.rate().map(|r| r.as_bps_f64()),
            frame_bits: s.frame_bits(),
            frame_interval_s: s.frame_interval.as_ref().map(exact_to_f64),
            priority_rank: s.priority.rank,
        }
    }
}

pub fn catalog_json(streams: &[StreamSpec]) -> serde_json::Value {
    let rows: Vec<CatalogEntry> = streams.iter().map(CatalogEntry::from).collect();
    serde_json::to_value(rows).expect("catalog rows serialize")
}

/// Inline stream definition as written in scenario files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamDoc {
    pub id: String,
    pub kind: StreamKind,
    pub direction: Direction,
    pub priority_rank: u8,
    pub source: StreamSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_interval_s: Option<f64>,
    /// Alternative to `frame_interval_s` for intervals of exactly `1/n` s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames_per_s: Option<u64>,
}

impl TryFrom<StreamDoc> for StreamSpec {
    type Error = CatalogError;

    fn try_from(doc: StreamDoc) -> Result<Self, Self::Error> {
        let bad = |field: &'static str, reason: &str| CatalogError::InvalidStream {
            id: doc.id.clone(),
            field,
            reason: reason.into(),
        };
        let frame_interval = match (&doc.source, doc.frame_interval_s, doc.frames_per_s) {
            (_, Some(_), Some(_)) => return Err(bad("frames_per_s", "conflicts with frame_interval_s")),
            (_, None, Some(0)) => return Err(bad("frames_per_s", "must be positive")),
            (_, None, Some(n)) => Some(Exact::new(1, n as i128)),
            (StreamSource::Video { fps, .. }, None, None) => (*fps > 0).then(|| Exact::new(1, *fps as i128)),
            (_, Some(v), None) => Some(exact_from_f64(v).ok_or_else(|| bad("frame_interval_s", "must be a finite number"))?),
            (_, None, None) => None,
        };
        let spec = StreamSpec {
            id: doc.id,
            kind: doc.kind,
            direction: doc.direction,
            source: doc.source,
            frame_interval,
            priority: PriorityClass::new(doc.priority_rank),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<&StreamSpec> for StreamDoc {
    fn from(s: &StreamSpec) -> Self {
        StreamDoc {
            id: s.id.clone(),
            kind: s.kind,
            direction: s.direction,
            priority_rank: s.priority.rank,
            source: s.source.clone(),
            frame_interval_s: match (&s.source, s.frame_interval) {
                (StreamSource::Video { .. }, _) => None,
                (_, Some(i)) if *i.numer() != 1 => Some(exact_to_f64(&i)),
                _ => None,
            },
            frames_per_s: match (&s.source, s.frame_interval) {
                (StreamSource::Video { .. }, _) => None,
                (_, Some(i)) if *i.numer() == 1 => Some(*i.denom() as u64),
                _ => None,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bps(n: u64) -> DataRate {
        DataRate::from_bps(n)
    }

    #[test]
    fn sampled_rates_match_reported_figures() {
        assert_eq!(sampled_stream_rate(64, 2000, 16), bps(2_048_000));
        assert_eq!(sampled_stream_rate(64, 2000, 8), bps(1_024_000));
        assert_eq!(sampled_stream_rate(9, 50, 8), bps(3_600));
        assert_eq!(sampled_stream_rate(64, 100, 8), bps(51_200));
        assert_eq!(sampled_stream_rate(0, 2000, 16), DataRate::ZERO);
    }

    #[test]
    fn video_rates_and_frame_sizes() {
        assert_eq!(video_stream_rate(424, 240, 24, 30), bps(73_267_200));
        assert_eq!(video_stream_rate(424, 240, 24, 30).to_string(), "73.27 Mb/s");
        assert_eq!(video_stream_rate(1920, 1080, 24, 60), bps(2_985_984_000));
        assert_eq!(video_stream_rate(424, 240, 24, 0), DataRate::ZERO);
        assert_eq!(frame_size(424, 240, 32), 3_256_320);
        assert_eq!(frame_size(0, 240, 32), 0);
        assert_eq!(frame_size(1920, 1080, 24), 1920 * 1080 * 24);
    }

    #[test]
    fn builtin_catalog_contents() {
        let cat = builtin_catalog();
        assert_eq!(cat.len(), 7);
        for s in &cat {
            s.validate().unwrap();
        }
        let emg = lookup("emg64").unwrap();
        assert_eq!(emg.rate(), Some(bps(2_048_000)));
        assert_eq!(emg.direction, Direction::Uplink);
        assert_eq!(emg.priority.rank, 0);
        let xr = lookup("xr_feedback").unwrap();
        assert_eq!(xr.rate(), Some(DataRate::from_mbps(400)));
        assert_eq!(xr.direction, Direction::Downlink);
        let cam = lookup("rgbd_camera").unwrap();
        assert_eq!(cam.frame_bits(), 3_256_320);
        assert_eq!(cam.frame_interval, Some(Exact::new(1, 30)));
        assert_eq!(lookup("command").unwrap().frame_bits(), 64);
        assert!(check_priority_order(&cat));
    }

    #[test]
    fn uplink_sensors_without_video_stay_below_4_mbps() {
        let total: DataRate = builtin_catalog()
            .iter()
            .filter(|s| s.direction == Direction::Uplink && s.kind != StreamKind::Video)
            .filter_map(|s| s.rate())
            .sum();
        // 2.048 + 0.0036 + 1.024 Mb/s
        assert_eq!(total, bps(3_075_600));
        assert!(total < DataRate::from_mbps(4));
    }

    #[test]
    fn priority_sort_is_deterministic() {
        let mut cat = builtin_catalog();
        cat.reverse();
        sort_by_priority(&mut cat);
        let ids: Vec<_> = cat.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(
            ids,
            ["emg64", "imu", "tactile64", "rgbd_camera", "command", "haptic_feedback", "xr_feedback"]
        );
    }

    #[test]
    fn validation_rejects_bad_streams() {
        let mut s = lookup("imu").unwrap();
        s.source = StreamSource::Sampled { channels: 9, sample_rate_hz: 50, bits_per_sample: 0 };
        assert!(matches!(s.validate(), Err(CatalogError::InvalidStream { field: "bits_per_sample", .. })));

        let mut v = lookup("rgbd_camera").unwrap();
        v.kind = StreamKind::SampledSensor;
        assert!(v.validate().is_err());

        let mut c = lookup("command").unwrap();
        c.direction = Direction::Uplink;
        assert!(c.validate().is_err());
    }

    #[test]
    fn catalog_export_keys() {
        let json = catalog_json(&builtin_catalog());
        let first = &json[0];
        for key in ["id", "kind", "direction", "rate_bps", "frame_bits", "frame_interval_s", "priority_rank"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
        assert_eq!(first["rate_bps"], 2_048_000.0);
    }

    #[test]
    fn inline_doc_round_trip() {
        for s in builtin_catalog() {
            let doc = StreamDoc::from(&s);
            let text = serde_json::to_string(&doc).unwrap();
            let back: StreamDoc = serde_json::from_str(&text).unwrap();
            assert_eq!(StreamSpec::try_from(back).unwrap(), s);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sampled_rate_is_linear(c in 0u64..512, r in 0u64..100_000, b in 1u64..=64) {
                let base = sampled_stream_rate(c, r, b);
                prop_assert_eq!(sampled_stream_rate(2 * c, r, b), base.scale(2));
                prop_assert_eq!(sampled_stream_rate(c, 2 * r, b), base.scale(2));
                prop_assert_eq!(sampled_stream_rate(c, r, 2 * b), base.scale(2));
            }
        }
    }
}
