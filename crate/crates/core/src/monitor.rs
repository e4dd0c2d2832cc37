//! Health monitoring: periodic snapshots of topic rates, model confidence,
//! and optics sharpness, plus threshold-based symptom detection.
//!
//! The monitor is itself a lifecycle-managed node: while it is not ACTIVE it
//! takes no samples, learns nothing from the bus, and publishes nothing.
//! Detection is purely signal-based — the monitor never inspects node
//! internals, only what crosses the bus — so a deliberately deactivated
//! publisher and a crashed one look identical here. Deciding what to do
//! about a symptom is the controller's job (see `crate::managing`).

use crate::bus::Message;
use crate::lifecycle::LifecycleState;
use crate::pipeline::frames::Payload;
use crate::pipeline::nodes::{
    TOPIC_CAMERA, TOPIC_DEPTH, TOPIC_ENHANCEMENT, TOPIC_FUSION, TOPIC_SEGMENTATION,
};
use crate::time::VirtualTime;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Sampling period of the monitor; the first sample runs one period in.
pub const MONITOR_PERIOD_MS: u64 = 500;

/// Width of the sliding window used for topic-frequency estimates. The
/// count is always divided by the full window, so early-run estimates are
/// conservative underestimates rather than noisy extrapolations.
pub const FREQUENCY_WINDOW_SECS: f64 = 2.0;

/// Data topics whose delivery rate every snapshot reports.
pub const MONITORED_TOPICS: [&str; 5] =
    [TOPIC_CAMERA, TOPIC_DEPTH, TOPIC_ENHANCEMENT, TOPIC_FUSION, TOPIC_SEGMENTATION];

/// Minimum Laplacian-variance sharpness of camera frames before the image
/// counts as defocused. Geometric mean of the measured sharpness of nominal
/// frames (~3.7e-3) and of frames blurred at the default defocus strength
/// (~1.1e-5), so the threshold sits symmetrically (in log space) between
/// the two populations, roughly 15x away from each.
pub const SHARPNESS_THRESHOLD: f64 = 2.0e-4;

/// How serious a symptom is. Orderable: `Error > Warning > Ok`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criticality {
    Ok,
    Warning,
    Error,
}

impl Criticality {
    pub fn as_str(self) -> &'static str {
        match self {
            Criticality::Ok => "ok",
            Criticality::Warning => "warning",
            Criticality::Error => "error",
        }
    }

    pub fn parse(s: &str) -> Option<Criticality> {
        match s {
            "ok" => Some(Criticality::Ok),
            "warning" => Some(Criticality::Warning),
            "error" => Some(Criticality::Error),
            _ => None,
        }
    }
}

impl fmt::Display for Criticality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The observable deviations the monitor can flag. Each carries a stable
/// short code (`S1`..`S5`) used in logs and diagnostics messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Symptom {
    /// Camera stream under the minimum rate.
    CameraRateLow,
    /// Fusion output under the minimum rate.
    FusionRateLow,
    /// Segmentation output under the minimum rate.
    SegmentationRateLow,
    /// Segmentation confidence collapsed (mean entropy above threshold).
    EntropyHigh,
    /// Camera frames defocused (sharpness below threshold).
    SharpnessLow,
}

impl Symptom {
    pub fn code(self) -> &'static str {
        match self {
            Symptom::CameraRateLow => "S1",
            Symptom::FusionRateLow => "S2",
            Symptom::SegmentationRateLow => "S3",
            Symptom::EntropyHigh => "S4",
            Symptom::SharpnessLow => "S5",
        }
    }

    pub fn parse_code(s: &str) -> Option<Symptom> {
        match s {
            "S1" => Some(Symptom::CameraRateLow),
            "S2" => Some(Symptom::FusionRateLow),
            "S3" => Some(Symptom::SegmentationRateLow),
            "S4" => Some(Symptom::EntropyHigh),
            "S5" => Some(Symptom::SharpnessLow),
            _ => None,
        }
    }

    /// The topic on which this symptom is observed.
    pub fn location(self) -> &'static str {
        match self {
            Symptom::CameraRateLow => TOPIC_CAMERA,
            Symptom::FusionRateLow => TOPIC_FUSION,
            Symptom::SegmentationRateLow => TOPIC_SEGMENTATION,
            Symptom::EntropyHigh => TOPIC_SEGMENTATION,
            Symptom::SharpnessLow => TOPIC_CAMERA,
        }
    }

    pub fn criticality(self) -> Criticality {
        match self {
            Symptom::CameraRateLow
            | Symptom::FusionRateLow
            | Symptom::SegmentationRateLow => Criticality::Error,
            Symptom::EntropyHigh => Criticality::Warning,
            Symptom::SharpnessLow => Criticality::Ok,
        }
    }
}

impl fmt::Display for Symptom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Detection thresholds; scenario files may override any of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// A topic below this delivery rate (Hz) counts as starved.
    pub freq_min_hz: f64,
    /// Mean normalized entropy above this counts as low confidence.
    pub entropy_max: f64,
    /// Camera sharpness below this counts as defocused.
    pub sharpness_min: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { freq_min_hz: 1.0, entropy_max: 0.06, sharpness_min: SHARPNESS_THRESHOLD }
    }
}

/// One periodic health sample. This struct is the entire interface between
/// the monitored system and any controller: controllers see nothing else.
#[derive(Debug, Clone)]
pub struct DiagnosticsSnapshot {
    pub t: VirtualTime,
    /// Delivery rate (Hz) per monitored topic over the sliding window.
    pub topic_frequencies: BTreeMap<String, f64>,
    /// Mean entropy of the most recent segmentation output the monitor saw;
    /// `None` until the first output arrives.
    pub mean_entropy: Option<f64>,
    /// Sharpness of the most recent camera frame the monitor saw.
    pub sharpness: Option<f64>,
    /// Lifecycle state per currently deployed node; nodes mid-redeploy are
    /// absent.
    pub lifecycle_states: BTreeMap<String, LifecycleState>,
}

/// A symptom currently present, with the time it was first seen in the
/// ongoing episode (resets when the symptom clears).
#[derive(Debug, Clone, PartialEq)]
pub struct SymptomObservation {
    pub symptom: Symptom,
    pub criticality: Criticality,
    pub location: String,
    pub first_observed: VirtualTime,
}

impl SymptomObservation {
    /// Compact `S1@/camera/image` form used in diagnostics messages.
    pub fn label(&self) -> String {
        format!("{}@{}", self.symptom.code(), self.location)
    }
}

/// Pure threshold check of one snapshot. Returned in fixed `S1..S5` order.
pub fn detect_symptoms(snapshot: &DiagnosticsSnapshot, thresholds: &Thresholds) -> Vec<Symptom> {
    let mut found = Vec::new();
    let starved = |topic: &str| {
        snapshot
            .topic_frequencies
            .get(topic)
            .map(|f| *f < thresholds.freq_min_hz)
            .unwrap_or(true)
    };
    if starved(TOPIC_CAMERA) {
        found.push(Symptom::CameraRateLow);
    }
    if starved(TOPIC_FUSION) {
        found.push(Symptom::FusionRateLow);
    }
    if starved(TOPIC_SEGMENTATION) {
        found.push(Symptom::SegmentationRateLow);
    }
    if let Some(e) = snapshot.mean_entropy {
        if e > thresholds.entropy_max {
            found.push(Symptom::EntropyHigh);
        }
    }
    if let Some(s) = snapshot.sharpness {
        if s < thresholds.sharpness_min {
            found.push(Symptom::SharpnessLow);
        }
    }
    found
}

/// Highest criticality among `observations` (`Ok` when the list is empty).
pub fn overall_level(observations: &[SymptomObservation]) -> Criticality {
    observations.iter().map(|o| o.criticality).max().unwrap_or(Criticality::Ok)
}

/// Remembers when each symptom episode started. An episode ends (and the
/// start time is forgotten) when a sample no longer shows the symptom.
#[derive(Debug, Default)]
pub struct SymptomTracker {
    first_observed: BTreeMap<Symptom, VirtualTime>,
}

impl SymptomTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Folds one sample's detections into the episode state and returns the
    /// full observations (with stable first-observed times).
    pub fn update(&mut self, now: VirtualTime, current: &[Symptom]) -> Vec<SymptomObservation> {
        let present: BTreeSet<Symptom> = current.iter().copied().collect();
        self.first_observed.retain(|s, _| present.contains(s));
        current
            .iter()
            .map(|&symptom| {
                let first = *self.first_observed.entry(symptom).or_insert(now);
                SymptomObservation {
                    symptom,
                    criticality: symptom.criticality(),
                    location: symptom.location().to_string(),
                    first_observed: first,
                }
            })
            .collect()
    }
}

/// The monitor's run-time knowledge: the freshest values it has seen on the
/// topics it subscribes to, plus symptom episode state. Reset when the
/// monitor node is redeployed.
#[derive(Debug, Default)]
pub struct MonitorState {
    pub latest_entropy: Option<f64>,
    pub latest_sharpness: Option<f64>,
    pub tracker: SymptomTracker,
}

impl MonitorState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Ingests one delivered message (only called while the monitor node is
    /// ACTIVE, so an inactive monitor's knowledge goes stale, as it should).
    pub fn observe(&mut self, msg: &Message) {
        match &msg.payload {
            Payload::Segmentation(result) if msg.topic == TOPIC_SEGMENTATION => {
                self.latest_entropy = Some(result.mean_entropy);
            }
            Payload::Rgb(frame) if msg.topic == TOPIC_CAMERA => {
                self.latest_sharpness = Some(frame.sharpness);
            }
            _ => {}
        }
    }
}
