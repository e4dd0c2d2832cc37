//! The run engine: wires nodes, bus, monitor, injector effects, and a
//! controller into one deterministic event loop.
//!
//! Every run is a pure function of (scenario, controller): the bus pops
//! events in (due, insertion) order, node RNG streams are derived from the
//! scenario seed and frame stamps, and all iteration goes through sorted
//! maps, so identical inputs give byte-identical logs.

use crate::bus::{Bus, ControlOp, Event, EventKind, Message};
use crate::injector::{self, Effect, Uncertainty};
use crate::lifecycle::{
    AdaptationAction, AdaptationCommand, AdaptationOutcome, LifecycleState, Transition,
};
use crate::log::{detail, fixed, EventLog};
use crate::managing::{Controller, ControllerRegistry, SystemConfig};
use crate::metrics;
use crate::monitor::{
    detect_symptoms, overall_level, Criticality, DiagnosticsSnapshot, MonitorState,
    FREQUENCY_WINDOW_SECS, MONITORED_TOPICS, MONITOR_PERIOD_MS,
};
use crate::pipeline::frames::{DiagnosticStatus, Payload};
use crate::pipeline::nodes::{
    default_node, ManagedNode, NodeBehavior, NodeCtx, NODE_ENHANCEMENT, NODE_MONITOR,
    TOPIC_DIAGNOSTICS, TOPIC_SEGMENTATION,
};
use crate::scenario::Scenario;
use crate::scene::generate_labels;
use crate::time::VirtualTime;
use serde_json::Value;
use std::collections::BTreeMap;
use std::sync::Arc;

/// Pseudo-subscriber that scores every segmentation output against ground
/// truth. It lives outside the managed system: nothing in the pipeline or
/// the controllers can see its output.
pub const HARNESS: &str = "harness";

/// A finished run.
pub struct RunResult {
    pub log: EventLog,
}

/// Builds, runs, and tears down one scenario.
pub struct Simulation {
    bus: Bus,
    nodes: BTreeMap<String, ManagedNode>,
    /// Nodes currently being redeployed, with their completion times.
    redeploying: BTreeMap<String, VirtualTime>,
    env: crate::pipeline::nodes::Environment,
    monitor: MonitorState,
    controller: Box<dyn Controller>,
    config: SystemConfig,
    scenario: Scenario,
    /// Catalog entry per scenario injection, resolved at construction.
    injection_catalog: Vec<Uncertainty>,
    applied_criticalities: Vec<Criticality>,
    frame_period_ms: u64,
    pairing_tolerance_ms: u64,
    t_end: VirtualTime,
}

impl Simulation {
    pub fn new(scenario: Scenario, controller: Box<dyn Controller>) -> Result<Simulation, String> {
        let injection_catalog: Vec<Uncertainty> = scenario
            .injections
            .iter()
            .map(|inj| {
                injector::lookup(&inj.uncertainty)
                    .ok_or_else(|| format!("unknown uncertainty id `{}`", inj.uncertainty))
            })
            .collect::<Result<_, _>>()?;

        let mut config = SystemConfig::default();
        config.frame_period_secs = scenario.frame_period_ms() as f64 / 1000.0;
        config.restart_resume_secs = scenario.delays.restart_resume_secs;
        for (node, delay) in config.redeploy_delay_secs.iter_mut() {
            *delay = if node == "camera" || node == "depth" {
                scenario.delays.redeploy_sensor_secs
            } else {
                scenario.delays.redeploy_default_secs
            };
        }
        config.thresholds = scenario.thresholds.clone();
        config.model = scenario.model.clone();

        let mut sim = Simulation {
            bus: Bus::new(),
            nodes: BTreeMap::new(),
            redeploying: BTreeMap::new(),
            env: Default::default(),
            monitor: MonitorState::new(),
            controller,
            frame_period_ms: scenario.frame_period_ms(),
            pairing_tolerance_ms: (config.pairing_tolerance_secs * 1000.0).round() as u64,
            t_end: VirtualTime::from_secs_f64(scenario.duration_secs),
            config,
            injection_catalog,
            applied_criticalities: Vec::new(),
            scenario,
        };

        sim.bus.log_event(
            "run_start",
            "sim",
            None,
            None,
            detail(&[
                ("name", Value::String(sim.scenario.name.clone())),
                ("seed", Value::from(sim.scenario.seed)),
                ("controller", Value::String(sim.controller.name().to_string())),
                ("duration", fixed(sim.scenario.duration_secs)),
                ("frame_period_ms", Value::from(sim.frame_period_ms)),
            ]),
        );

        // Everything externally scheduled goes on the queue before any node
        // timer exists, so at equal instants: injections, then scripted
        // commands, then monitor samples, then pipeline activity.
        for (index, inj) in sim.scenario.injections.iter().enumerate() {
            sim.bus.schedule(VirtualTime::from_secs_f64(inj.time), EventKind::Injection { index });
        }
        for ad in sim.scenario.adaptations.clone() {
            let command = AdaptationCommand::new(&ad.target, ad.action, "scenario");
            sim.bus.schedule(
                VirtualTime::from_secs_f64(ad.time),
                EventKind::AdaptationDelivery { command },
            );
        }
        sim.bus
            .schedule_in_millis(MONITOR_PERIOD_MS, EventKind::Control(ControlOp::MonitorSample));

        for name in crate::pipeline::nodes::NODE_NAMES {
            sim.nodes.insert(name.to_string(), default_node(name).expect("known node"));
        }
        for name in crate::pipeline::nodes::NODE_NAMES {
            sim.transition(name, Transition::Configure).expect("initial configure");
            // The enhancement node deploys configured but idle; it only
            // activates when an adaptation turns it on.
            if name != NODE_ENHANCEMENT {
                sim.transition(name, Transition::Activate).expect("initial activate");
            }
        }
        sim.bus.subscribe(TOPIC_SEGMENTATION, HARNESS);
        Ok(sim)
    }

    /// Drives the event loop to the end of the scenario.
    pub fn run(mut self) -> RunResult {
        let t_end = self.t_end;
        while let Some(event) = self.bus.pop_due(t_end) {
            self.dispatch(event);
        }
        self.bus.advance_to(t_end);
        self.bus.log_event(
            "run_end",
            "sim",
            None,
            None,
            detail(&[("duration", fixed(self.scenario.duration_secs))]),
        );
        RunResult { log: self.bus.log }
    }

    fn dispatch(&mut self, event: Event) {
        match event.kind {
            EventKind::TimerFire { node, epoch } => {
                let Some(mut n) = self.nodes.remove(&node) else {
                    return; // redeploying: the old timer chain dies with the node
                };
                if n.epoch == epoch && n.state == LifecycleState::Active {
                    self.with_ctx(&mut n, |behavior, ctx| behavior.on_timer(ctx));
                }
                self.nodes.insert(node, n);
            }
            EventKind::MessageDelivery { subscriber, message } => {
                if subscriber == HARNESS {
                    self.score(&message);
                    return;
                }
                if subscriber == NODE_MONITOR {
                    // The monitor's knowledge lives in the simulation so the
                    // sampling step can read it; it still obeys the
                    // lifecycle gate like any other subscriber.
                    let active = self
                        .nodes
                        .get(NODE_MONITOR)
                        .is_some_and(|n| n.state == LifecycleState::Active);
                    if active {
                        self.monitor.observe(&message);
                    }
                    return;
                }
                let Some(mut n) = self.nodes.remove(&subscriber) else {
                    return;
                };
                if n.state == LifecycleState::Active {
                    self.with_ctx(&mut n, |behavior, ctx| behavior.on_message(ctx, &message));
                }
                self.nodes.insert(subscriber, n);
            }
            EventKind::Injection { index } => self.apply_injection(index),
            EventKind::AdaptationDelivery { command } => {
                self.submit_command(command);
            }
            EventKind::Control(op) => match op {
                ControlOp::MonitorSample => self.monitor_sample(),
                ControlOp::RestartResume { node } => self.finish_restart(&node),
                ControlOp::RedeployComplete { node } => self.finish_redeploy(&node),
            },
        }
    }

    /// Runs `f` with a borrow-split context over one (removed) node.
    fn with_ctx<R>(
        &mut self,
        node: &mut ManagedNode,
        f: impl FnOnce(&mut Box<dyn NodeBehavior>, &mut NodeCtx) -> R,
    ) -> R {
        let ManagedNode { name, state, epoch, faults, behavior } = node;
        let mut ctx = NodeCtx {
            bus: &mut self.bus,
            env: &mut self.env,
            name: name.as_str(),
            active: *state == LifecycleState::Active,
            faults,
            epoch: *epoch,
            scene: &self.scenario.scene,
            seed: self.scenario.seed,
            model: &self.config.model,
            frame_period_ms: self.frame_period_ms,
            pairing_tolerance_ms: self.pairing_tolerance_ms,
        };
        f(behavior, &mut ctx)
    }

    /// Applies one lifecycle transition to a deployed node, with legality
    /// checking, logging, and the transition's side effects.
    fn transition(&mut self, name: &str, transition: Transition) -> Result<(), String> {
        let Some(mut node) = self.nodes.remove(name) else {
            return Err(format!("node `{name}` is not deployed"));
        };
        let result = match transition.apply(node.state) {
            None => Err(format!(
                "illegal transition `{}` from `{}`",
                transition.as_str(),
                node.state
            )),
            Some(next) => {
                let from = node.state;
                node.state = next;
                self.bus.log_event(
                    "lifecycle",
                    name,
                    None,
                    None,
                    detail(&[
                        ("transition", Value::String(transition.as_str().to_string())),
                        ("from", Value::String(from.as_str().to_string())),
                        ("to", Value::String(next.as_str().to_string())),
                    ]),
                );
                match transition {
                    Transition::Configure => {
                        node.faults.clear_transient();
                        self.with_ctx(&mut node, |b, ctx| b.on_configure(ctx));
                    }
                    Transition::Activate => {
                        node.epoch += 1;
                        self.with_ctx(&mut node, |b, ctx| b.on_activate(ctx));
                    }
                    Transition::Cleanup => {
                        self.bus.unsubscribe_all(name);
                    }
                    Transition::Deactivate | Transition::Shutdown => {}
                }
                Ok(())
            }
        };
        self.nodes.insert(name.to_string(), node);
        result
    }

    /// Executes one adaptation command and logs it with its outcome.
    pub fn submit_command(&mut self, command: AdaptationCommand) -> AdaptationOutcome {
        let outcome = self.execute_command(&command);
        let mut fields: Vec<(&str, Value)> = vec![
            (
                "command",
                serde_json::to_value(&command.action).expect("action serializes"),
            ),
            ("issuer", Value::String(command.issuer.clone())),
            ("outcome", Value::String(outcome.as_str().to_string())),
        ];
        if let AdaptationOutcome::Rejected(reason) = &outcome {
            fields.push(("reason", Value::String(reason.clone())));
        }
        self.bus.log_event("adaptation", &command.target, None, None, detail(&fields));
        outcome
    }

    fn execute_command(&mut self, command: &AdaptationCommand) -> AdaptationOutcome {
        use AdaptationOutcome::{Accepted, Queued, Rejected};
        let target = command.target.as_str();
        if self.redeploying.contains_key(target) {
            return Rejected("target is mid-redeploy".to_string());
        }
        if !self.nodes.contains_key(target) {
            return Rejected(format!("unknown node `{target}`"));
        }
        match &command.action {
            AdaptationAction::Activate => match self.transition(target, Transition::Activate) {
                Ok(()) => Accepted,
                Err(e) => Rejected(e),
            },
            AdaptationAction::Deactivate => match self.transition(target, Transition::Deactivate) {
                Ok(()) => Accepted,
                Err(e) => Rejected(e),
            },
            AdaptationAction::SetParameter { name, value } => {
                let mut node = self.nodes.remove(target).expect("checked above");
                let result = if node.state == LifecycleState::Finalized {
                    Err("node is finalized".to_string())
                } else {
                    self.with_ctx(&mut node, |b, ctx| b.set_param(ctx, name, value))
                };
                self.nodes.insert(target.to_string(), node);
                match result {
                    Ok(()) => Accepted,
                    Err(e) => Rejected(e),
                }
            }
            AdaptationAction::ChangeSubscription { from_topic, to_topic } => {
                let mut node = self.nodes.remove(target).expect("checked above");
                let result = self
                    .with_ctx(&mut node, |b, ctx| b.change_subscription(ctx, from_topic, to_topic));
                self.nodes.insert(target.to_string(), node);
                match result {
                    Ok(()) => Accepted,
                    Err(e) => Rejected(e),
                }
            }
            AdaptationAction::Restart => {
                let state = self.nodes[target].state;
                let teardown = match state {
                    LifecycleState::Active => self
                        .transition(target, Transition::Deactivate)
                        .and_then(|()| self.transition(target, Transition::Cleanup)),
                    LifecycleState::Inactive => self.transition(target, Transition::Cleanup),
                    LifecycleState::Unconfigured => Ok(()),
                    LifecycleState::Finalized => Err("node is finalized".to_string()),
                };
                match teardown {
                    Ok(()) => {
                        let resume_ms =
                            (self.config.restart_resume_secs * 1000.0).round() as u64;
                        self.bus.schedule_in_millis(
                            resume_ms,
                            EventKind::Control(ControlOp::RestartResume {
                                node: target.to_string(),
                            }),
                        );
                        Queued
                    }
                    Err(e) => Rejected(e),
                }
            }
            AdaptationAction::Redeploy => {
                self.bus.unsubscribe_all(target);
                self.nodes.remove(target);
                let delay_secs = self.config.redeploy_delay(target);
                let due = self.bus.now().plus_secs_f64(delay_secs);
                self.redeploying.insert(target.to_string(), due);
                self.bus.log_event(
                    "redeploy_start",
                    target,
                    None,
                    None,
                    detail(&[("delay", fixed(delay_secs))]),
                );
                self.bus.schedule(
                    due,
                    EventKind::Control(ControlOp::RedeployComplete { node: target.to_string() }),
                );
                Queued
            }
        }
    }

    fn finish_restart(&mut self, name: &str) {
        // If the node was redeployed in the meantime, the redeploy owns it.
        let Some(state) = self.nodes.get(name).map(|n| n.state) else {
            return;
        };
        if state == LifecycleState::Unconfigured {
            let _ = self.transition(name, Transition::Configure);
        }
        if self.nodes.get(name).map(|n| n.state) == Some(LifecycleState::Inactive) {
            let _ = self.transition(name, Transition::Activate);
        }
    }

    fn finish_redeploy(&mut self, name: &str) {
        self.redeploying.remove(name);
        let Some(node) = default_node(name) else {
            return;
        };
        self.nodes.insert(name.to_string(), node);
        self.bus.log_event("redeploy_complete", name, None, None, detail(&[]));
        let _ = self.transition(name, Transition::Configure);
        if name != NODE_ENHANCEMENT {
            let _ = self.transition(name, Transition::Activate);
        }
        if name == NODE_MONITOR {
            // A fresh monitor deployment knows nothing yet.
            self.monitor = MonitorState::new();
        }
    }

    fn apply_injection(&mut self, index: usize) {
        let uncertainty = self.injection_catalog[index].clone();
        let criticality = uncertainty.criticality();

        let rejection: Option<&str> = if self.applied_criticalities.contains(&criticality) {
            Some("an uncertainty of this criticality class is already active")
        } else if matches!(uncertainty.effect, Effect::NodeFault { node, .. } if !self.nodes.contains_key(node))
        {
            Some("target node is not deployed")
        } else {
            None
        };

        let severity = uncertainty
            .severity()
            .map(|s| Value::String(s.as_str().to_string()))
            .unwrap_or(Value::Null);
        let mut fields: Vec<(&str, Value)> = vec![
            ("id", Value::String(uncertainty.id.to_string())),
            ("symptom", Value::String(uncertainty.symptom.code().to_string())),
            ("criticality", Value::String(criticality.as_str().to_string())),
            ("severity", severity),
            (
                "outcome",
                Value::String(if rejection.is_none() { "applied" } else { "rejected" }.to_string()),
            ),
        ];
        if let Some(reason) = rejection {
            fields.push(("reason", Value::String(reason.to_string())));
        }
        self.bus.log_event("injection", uncertainty.target, None, None, detail(&fields));
        if rejection.is_some() {
            return;
        }

        self.applied_criticalities.push(criticality);
        match &uncertainty.effect {
            Effect::NodeFault { node, persistent } => {
                let n = self.nodes.get_mut(*node).expect("checked above");
                if *persistent {
                    n.faults.set_persistent("outage");
                } else {
                    n.faults.set_transient("outage");
                }
            }
            Effect::ColorShift { delta } => self.env.color_shift = *delta,
            Effect::CameraBlur { sigma } => self.env.camera_blur_sigma = *sigma,
            Effect::DepthNoise { sigma } => self.env.depth_noise_sigma = *sigma,
            Effect::DepthMisalignment { dx, dy } => self.env.depth_misalignment = (*dx, *dy),
            Effect::SpuriousEnhancement => {
                for command in uncertainty.effect.setup_commands() {
                    self.submit_command(command);
                }
            }
        }
    }

    fn monitor_sample(&mut self) {
        // The tick itself always continues; an inactive or absent monitor
        // just skips the work until it is back.
        self.bus
            .schedule_in_millis(MONITOR_PERIOD_MS, EventKind::Control(ControlOp::MonitorSample));
        let monitor_active = self
            .nodes
            .get(NODE_MONITOR)
            .is_some_and(|n| n.state == LifecycleState::Active);
        if !monitor_active {
            return;
        }

        let t = self.bus.now();
        let topic_frequencies: BTreeMap<String, f64> = MONITORED_TOPICS
            .iter()
            .map(|topic| {
                (topic.to_string(), self.bus.estimate_frequency(topic, FREQUENCY_WINDOW_SECS, t))
            })
            .collect();
        let lifecycle_states: BTreeMap<String, LifecycleState> =
            self.nodes.iter().map(|(name, node)| (name.clone(), node.state)).collect();
        let snapshot = DiagnosticsSnapshot {
            t,
            topic_frequencies,
            mean_entropy: self.monitor.latest_entropy,
            sharpness: self.monitor.latest_sharpness,
            lifecycle_states,
        };

        let current = detect_symptoms(&snapshot, &self.config.thresholds);
        let observations = self.monitor.tracker.update(t, &current);
        let level = overall_level(&observations);

        let status = DiagnosticStatus {
            level: level.as_str().to_string(),
            symptoms: observations.iter().map(|o| o.label()).collect(),
        };
        self.bus.publish(
            NODE_MONITOR,
            true,
            TOPIC_DIAGNOSTICS,
            t,
            Payload::Diagnostics(Arc::new(status)),
            &[("level", Value::String(level.as_str().to_string()))],
        );

        let frequencies: serde_json::Map<String, Value> = snapshot
            .topic_frequencies
            .iter()
            .map(|(topic, freq)| (topic.clone(), fixed(*freq)))
            .collect();
        let symptom_values: Vec<Value> = observations
            .iter()
            .map(|o| {
                serde_json::json!({
                    "symptom": o.symptom.code(),
                    "criticality": o.criticality.as_str(),
                    "location": o.location,
                    "first_observed": o.first_observed.to_string(),
                })
            })
            .collect();
        self.bus.log_event(
            "diagnostics",
            NODE_MONITOR,
            None,
            None,
            detail(&[
                ("level", Value::String(level.as_str().to_string())),
                ("frequencies", Value::Object(frequencies)),
                (
                    "entropy",
                    snapshot.mean_entropy.map(fixed).unwrap_or(Value::Null),
                ),
                (
                    "sharpness",
                    snapshot.sharpness.map(fixed).unwrap_or(Value::Null),
                ),
                ("symptoms", Value::Array(symptom_values)),
            ]),
        );

        let commands = self.controller.step(&snapshot, &self.config);
        for command in commands {
            self.submit_command(command);
        }
    }

    /// Scores one segmentation output against ground-truth labels.
    fn score(&mut self, message: &Message) {
        let Payload::Segmentation(result) = &message.payload else {
            return;
        };
        let truth = generate_labels(&self.scenario.scene, self.scenario.seed, result.stamp);
        let iou = metrics::mean_iou(&result.labels, &truth, crate::scene::NUM_CLASSES);
        self.bus.log_event(
            "iou",
            HARNESS,
            Some(TOPIC_SEGMENTATION),
            Some(message.seq),
            detail(&[
                ("stamp", Value::String(result.stamp.to_string())),
                ("iou", fixed(iou)),
            ]),
        );
    }
}

/// Runs `scenario` with its configured controller from `registry`.
pub fn run_scenario(scenario: &Scenario, registry: &ControllerRegistry) -> Result<RunResult, String> {
    let controller = registry
        .create(&scenario.controller)
        .ok_or_else(|| format!("unknown controller `{}`", scenario.controller))?;
    Ok(Simulation::new(scenario.clone(), controller)?.run())
}
