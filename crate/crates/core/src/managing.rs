//! Pluggable self-adaptation controllers.
//!
//! A controller sees exactly one thing — the monitor's periodic
//! `DiagnosticsSnapshot` — plus immutable deployment facts in
//! `SystemConfig`, and answers with adaptation commands. It has no access
//! to node internals, the event queue, or ground truth, so any strategy
//! that type-checks here is automatically confined to the architecture's
//! sensing/actuation boundary.
//!
//! Controllers are looked up by name in a `ControllerRegistry`; external
//! code can register additional strategies without touching the pipeline,
//! the injector, or the monitor.

use crate::lifecycle::{AdaptationAction, AdaptationCommand, LifecycleState, ParamValue};
use crate::monitor::Thresholds;
// Controller authors need the snapshot type next to the trait; save them
// the extra import path.
pub use crate::monitor::DiagnosticsSnapshot;
use crate::pipeline::model::ModelConfig;
use crate::pipeline::nodes::{
    NODE_CAMERA, NODE_DEPTH, NODE_ENHANCEMENT, NODE_FUSION, NODE_MONITOR, NODE_SEGMENTATION,
    TOPIC_CAMERA, TOPIC_DEPTH, TOPIC_DIAGNOSTICS, TOPIC_ENHANCEMENT, TOPIC_FUSION,
    TOPIC_SEGMENTATION,
};
use crate::time::VirtualTime;
use std::collections::BTreeMap;

/// Redeploying a sensor driver takes longer than a pure software node.
pub const REDEPLOY_SENSOR_SECS: f64 = 3.0;
pub const REDEPLOY_DEFAULT_SECS: f64 = 1.0;
/// Downtime of a node restart (teardown to reactivation).
pub const RESTART_RESUME_SECS: f64 = 0.5;

/// Static facts about the deployment that a controller may rely on.
/// Deliberately excludes anything about the scene or the run seed: a
/// controller must work from observations alone.
#[derive(Debug, Clone)]
pub struct SystemConfig {
    /// All managed nodes in deployment order.
    pub nodes: Vec<String>,
    /// topic -> the node that publishes it.
    pub topic_publishers: BTreeMap<String, String>,
    /// Nominal sensor frame period in seconds.
    pub frame_period_secs: f64,
    /// Stamp tolerance the fusion node pairs within, in seconds.
    pub pairing_tolerance_secs: f64,
    /// Monitor sampling period in seconds.
    pub monitor_period_secs: f64,
    /// Sliding window used for topic-frequency estimates, in seconds.
    pub frequency_window_secs: f64,
    /// Downtime of a restart, in seconds.
    pub restart_resume_secs: f64,
    /// Per-node redeployment downtime, in seconds.
    pub redeploy_delay_secs: BTreeMap<String, f64>,
    pub thresholds: Thresholds,
    pub model: ModelConfig,
}

impl SystemConfig {
    pub fn redeploy_delay(&self, node: &str) -> f64 {
        self.redeploy_delay_secs.get(node).copied().unwrap_or(REDEPLOY_DEFAULT_SECS)
    }
}

impl Default for SystemConfig {
    fn default() -> Self {
        let nodes: Vec<String> = crate::pipeline::nodes::NODE_NAMES
            .iter()
            .map(|n| n.to_string())
            .collect();
        let topic_publishers: BTreeMap<String, String> = [
            (TOPIC_CAMERA, NODE_CAMERA),
            (TOPIC_DEPTH, NODE_DEPTH),
            (TOPIC_ENHANCEMENT, NODE_ENHANCEMENT),
            (TOPIC_FUSION, NODE_FUSION),
            (TOPIC_SEGMENTATION, NODE_SEGMENTATION),
            (TOPIC_DIAGNOSTICS, NODE_MONITOR),
        ]
        .into_iter()
        .map(|(t, n)| (t.to_string(), n.to_string()))
        .collect();
        let redeploy_delay_secs: BTreeMap<String, f64> = [
            (NODE_CAMERA, REDEPLOY_SENSOR_SECS),
            (NODE_DEPTH, REDEPLOY_SENSOR_SECS),
            (NODE_ENHANCEMENT, REDEPLOY_DEFAULT_SECS),
            (NODE_FUSION, REDEPLOY_DEFAULT_SECS),
            (NODE_SEGMENTATION, REDEPLOY_DEFAULT_SECS),
            (NODE_MONITOR, REDEPLOY_DEFAULT_SECS),
        ]
        .into_iter()
        .map(|(n, d)| (n.to_string(), d))
        .collect();
        SystemConfig {
            nodes,
            topic_publishers,
            frame_period_secs: 0.1,
            pairing_tolerance_secs: 0.05,
            monitor_period_secs: crate::monitor::MONITOR_PERIOD_MS as f64 / 1000.0,
            frequency_window_secs: crate::monitor::FREQUENCY_WINDOW_SECS,
            restart_resume_secs: RESTART_RESUME_SECS,
            redeploy_delay_secs,
            thresholds: Thresholds::default(),
            model: ModelConfig::default(),
        }
    }
}

/// A self-adaptation strategy. `step` runs once per monitor sample.
pub trait Controller: Send {
    /// Registry name; also recorded as the issuer of emitted commands.
    fn name(&self) -> &str;
    /// Reacts to one health sample with zero or more commands.
    fn step(&mut self, snapshot: &DiagnosticsSnapshot, config: &SystemConfig)
        -> Vec<AdaptationCommand>;
}

pub type ControllerFactory = Box<dyn Fn() -> Box<dyn Controller> + Send + Sync>;

/// Name-indexed controller factories. Each run constructs a fresh
/// controller so no knowledge leaks between runs.
pub struct ControllerRegistry {
    factories: BTreeMap<String, ControllerFactory>,
}

impl ControllerRegistry {
    /// Registry with the two built-in strategies, `none` and `baseline`.
    pub fn with_builtins() -> Self {
        let mut registry = ControllerRegistry { factories: BTreeMap::new() };
        registry
            .register("none", Box::new(|| Box::new(NoneController)))
            .expect("fresh registry");
        registry
            .register("baseline", Box::new(|| Box::new(BaselineController::new())))
            .expect("fresh registry");
        registry
    }

    pub fn register(&mut self, name: &str, factory: ControllerFactory) -> Result<(), String> {
        if self.factories.contains_key(name) {
            return Err(format!("controller `{name}` is already registered"));
        }
        self.factories.insert(name.to_string(), factory);
        Ok(())
    }

    pub fn create(&self, name: &str) -> Option<Box<dyn Controller>> {
        self.factories.get(name).map(|f| f())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.factories.keys().cloned().collect()
    }
}

/// Does nothing; the unmanaged reference configuration.
pub struct NoneController;

impl Controller for NoneController {
    fn name(&self) -> &str {
        "none"
    }

    fn step(&mut self, _: &DiagnosticsSnapshot, _: &SystemConfig) -> Vec<AdaptationCommand> {
        Vec::new()
    }
}

/// Two-rule reactive strategy:
///
/// 1. a starved topic whose publisher is deployed and ACTIVE gets that
///    publisher redeployed (the heavy hammer: works for any failure, pays
///    the full redeployment downtime every time);
/// 2. collapsed segmentation confidence triggers a fusion recalibration.
///
/// Per-target hold-off intervals stop the same symptom from re-triggering
/// while its remedy is still in flight, and a publisher that only just
/// became active is exempt from rule 1 until one full frequency window has
/// elapsed — before that the windowed rate still counts pre-activation
/// silence, so "frequency < 1 Hz" is not yet evidence of starvation.
pub struct BaselineController {
    hold_off_until: BTreeMap<String, VirtualTime>,
    recalibrate_hold_off_until: Option<VirtualTime>,
    /// Per active node: `Some(t)` = first seen active at snapshot `t`
    /// (rate warm-up runs until `t` + window); `None` = already active in
    /// the first snapshot this controller ever saw, so its rate estimate
    /// is trusted from the start.
    active_since: BTreeMap<String, Option<VirtualTime>>,
    seen_first_snapshot: bool,
}

/// How long rule 2 waits before re-issuing a recalibration.
const RECALIBRATE_HOLD_OFF_SECS: f64 = 2.0;

impl BaselineController {
    pub fn new() -> Self {
        BaselineController {
            hold_off_until: BTreeMap::new(),
            recalibrate_hold_off_until: None,
            active_since: BTreeMap::new(),
            seen_first_snapshot: false,
        }
    }

    /// Folds one snapshot's lifecycle states into the activation tracking.
    fn track_activations(&mut self, snapshot: &DiagnosticsSnapshot) {
        self.active_since.retain(|node, _| {
            snapshot.lifecycle_states.get(node) == Some(&LifecycleState::Active)
        });
        for (node, state) in &snapshot.lifecycle_states {
            if *state == LifecycleState::Active && !self.active_since.contains_key(node) {
                let since = if self.seen_first_snapshot { Some(snapshot.t) } else { None };
                self.active_since.insert(node.clone(), since);
            }
        }
        self.seen_first_snapshot = true;
    }

    /// True once `publisher`'s windowed frequency reflects only time the
    /// node was actually active.
    fn rate_estimate_trusted(&self, publisher: &str, now: VirtualTime, window_secs: f64) -> bool {
        match self.active_since.get(publisher) {
            Some(None) => true,
            Some(Some(since)) => since.plus_secs_f64(window_secs) <= now,
            // Not tracked as active; rule 1's lifecycle check rejects the
            // node before this is consulted.
            None => false,
        }
    }
}

impl Default for BaselineController {
    fn default() -> Self {
        Self::new()
    }
}

impl Controller for BaselineController {
    fn name(&self) -> &str {
        "baseline"
    }

    fn step(
        &mut self,
        snapshot: &DiagnosticsSnapshot,
        config: &SystemConfig,
    ) -> Vec<AdaptationCommand> {
        let now = snapshot.t;
        self.track_activations(snapshot);
        let mut commands = Vec::new();

        // Rule 1: starved topic -> redeploy its publisher.
        for (topic, freq) in &snapshot.topic_frequencies {
            if *freq >= config.thresholds.freq_min_hz {
                continue;
            }
            let Some(publisher) = config.topic_publishers.get(topic) else {
                continue;
            };
            // Mid-redeploy nodes are absent from the snapshot; deliberately
            // inactive ones (e.g. the idle enhancement node) are not broken.
            if snapshot.lifecycle_states.get(publisher) != Some(&LifecycleState::Active) {
                continue;
            }
            if !self.rate_estimate_trusted(publisher, now, config.frequency_window_secs) {
                continue;
            }
            if self.hold_off_until.get(publisher).is_some_and(|&until| now < until) {
                continue;
            }
            // Hold off until well after the redeployed node is back and its
            // frequency estimate has had time to recover.
            let hold = config.redeploy_delay(publisher) + 1.0;
            self.hold_off_until.insert(publisher.clone(), now.plus_secs_f64(hold));
            commands.push(AdaptationCommand::new(
                publisher,
                AdaptationAction::Redeploy,
                self.name(),
            ));
        }

        // Rule 2: low confidence -> recalibrate fusion.
        if let Some(entropy) = snapshot.mean_entropy {
            let held = self.recalibrate_hold_off_until.is_some_and(|until| now < until);
            let fusion_active =
                snapshot.lifecycle_states.get(NODE_FUSION) == Some(&LifecycleState::Active);
            if entropy > config.thresholds.entropy_max && !held && fusion_active {
                self.recalibrate_hold_off_until =
                    Some(now.plus_secs_f64(RECALIBRATE_HOLD_OFF_SECS));
                commands.push(AdaptationCommand::new(
                    NODE_FUSION,
                    AdaptationAction::SetParameter {
                        name: "recalibrate".to_string(),
                        value: ParamValue::Bool(true),
                    },
                    self.name(),
                ));
            }
        }

        commands
    }
}
