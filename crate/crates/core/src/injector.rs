//! Injectable uncertainties: the catalog of faults and degradations a
//! scenario can introduce, each with its observable symptom, severity, a
//! machine-applicable effect, and the command sequence that genuinely
//! removes its cause.
//!
//! Effects split into two families. Node faults attach to one node's fault
//! register and obey lifecycle semantics: a transient fault dies on the
//! next configure pass (so a restart suffices), a persistent one survives
//! everything short of redeployment. Environment effects change the world
//! outside the nodes — lighting, focus, sensor noise, extrinsic alignment —
//! and are immune to restarts and redeploys by construction; only a
//! compensating adaptation helps.
//!
//! The resolving command sequences are ground truth for evaluation only.
//! Nothing at run time reads them: controllers must work from symptoms.

use crate::lifecycle::{AdaptationAction, AdaptationCommand, ParamValue};
use crate::monitor::{Criticality, Symptom};
use crate::pipeline::nodes::{
    DEFAULT_ENHANCEMENT_DELTA, NODE_CAMERA, NODE_DEPTH, NODE_ENHANCEMENT, NODE_FUSION,
    NODE_SEGMENTATION, TOPIC_CAMERA, TOPIC_ENHANCEMENT,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

/// Default lighting-drift magnitude (gray shift added to every channel).
pub const DEFAULT_COLOR_SHIFT: f64 = DEFAULT_ENHANCEMENT_DELTA;
/// Default defocus blur strength.
pub const DEFAULT_BLUR_SIGMA: f64 = 2.0;
/// Default depth noise-burst strength.
pub const DEFAULT_DEPTH_NOISE_SIGMA: f64 = 0.15;
/// Default extrinsic misalignment, in pixels.
pub const DEFAULT_MISALIGNMENT: (i64, i64) = (6, 6);

/// How deep a node fault sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    /// Cleared by any configure pass: a restart is enough.
    Low,
    /// Survives restarts; only redeployment replaces the broken part.
    High,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Low => "low",
            Severity::High => "high",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What applying an uncertainty actually does.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    /// Sets an `outage` fault on one node's register.
    NodeFault { node: &'static str, persistent: bool },
    /// Shifts every camera channel by `delta` (lighting drift).
    ColorShift { delta: f64 },
    /// Defocuses the camera.
    CameraBlur { sigma: f64 },
    /// Adds Gaussian noise to the depth sensor.
    DepthNoise { sigma: f64 },
    /// Offsets depth frames as fusion ingests them (extrinsic drift).
    DepthMisalignment { dx: i64, dy: i64 },
    /// Switches the enhancement path on against clean input: activates the
    /// enhancement node and rewires fusion to consume its output. The
    /// correction itself then corrupts the data.
    SpuriousEnhancement,
}

impl Effect {
    /// Severity of the underlying fault, where the notion applies.
    pub fn severity(&self) -> Option<Severity> {
        match self {
            Effect::NodeFault { persistent, .. } => {
                Some(if *persistent { Severity::High } else { Severity::Low })
            }
            _ => None,
        }
    }

    /// Commands the injector itself must issue to install the effect.
    pub fn setup_commands(&self) -> Vec<AdaptationCommand> {
        match self {
            Effect::SpuriousEnhancement => vec![
                AdaptationCommand::new(NODE_ENHANCEMENT, AdaptationAction::Activate, ISSUER),
                AdaptationCommand::new(
                    NODE_FUSION,
                    AdaptationAction::ChangeSubscription {
                        from_topic: TOPIC_CAMERA.to_string(),
                        to_topic: TOPIC_ENHANCEMENT.to_string(),
                    },
                    ISSUER,
                ),
            ],
            _ => Vec::new(),
        }
    }
}

/// Issuer string on commands the injector submits while installing an
/// effect; evaluation excludes these from executed-adaptation counts.
pub const ISSUER: &str = "injector";

/// One step of a resolving recipe. `value: None` on a parameter template
/// accepts any value (e.g. any focus setting refocuses the lens).
#[derive(Debug, Clone, PartialEq)]
pub enum TemplateAction {
    SetParameter { name: &'static str, value: Option<ParamValue> },
    ChangeSubscription { from_topic: &'static str, to_topic: &'static str },
    Activate,
    Deactivate,
    Restart,
    Redeploy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandTemplate {
    pub target: &'static str,
    pub action: TemplateAction,
}

impl CommandTemplate {
    pub fn matches(&self, command: &AdaptationCommand) -> bool {
        if command.target != self.target {
            return false;
        }
        match (&self.action, &command.action) {
            (
                TemplateAction::SetParameter { name, value },
                AdaptationAction::SetParameter { name: got_name, value: got_value },
            ) => name == got_name && value.as_ref().map_or(true, |v| v == got_value),
            (
                TemplateAction::ChangeSubscription { from_topic, to_topic },
                AdaptationAction::ChangeSubscription { from_topic: got_from, to_topic: got_to },
            ) => from_topic == got_from && to_topic == got_to,
            (TemplateAction::Activate, AdaptationAction::Activate) => true,
            (TemplateAction::Deactivate, AdaptationAction::Deactivate) => true,
            (TemplateAction::Restart, AdaptationAction::Restart) => true,
            (TemplateAction::Redeploy, AdaptationAction::Redeploy) => true,
            _ => false,
        }
    }
}

/// One catalog entry.
#[derive(Debug, Clone)]
pub struct Uncertainty {
    /// Stable identifier, `U01`..`U11`.
    pub id: &'static str,
    pub description: &'static str,
    /// The symptom this uncertainty manifests as.
    pub symptom: Symptom,
    /// Node (or sensor) where the cause sits; informational.
    pub target: &'static str,
    pub effect: Effect,
    /// The command sequence that removes the cause. Executing all of it, in
    /// order, resolves the uncertainty; reaction time is measured to the
    /// first executed command matching any step.
    pub resolving: Vec<CommandTemplate>,
}

impl Uncertainty {
    pub fn criticality(&self) -> Criticality {
        self.symptom.criticality()
    }

    pub fn severity(&self) -> Option<Severity> {
        self.effect.severity()
    }
}

fn set_param(target: &'static str, name: &'static str, value: Option<ParamValue>) -> CommandTemplate {
    CommandTemplate { target, action: TemplateAction::SetParameter { name, value } }
}

/// The full catalog, in id order.
pub fn catalog() -> Vec<Uncertainty> {
    vec![
        Uncertainty {
            id: "U01",
            description: "camera driver hang (recoverable)",
            symptom: Symptom::CameraRateLow,
            target: NODE_CAMERA,
            effect: Effect::NodeFault { node: NODE_CAMERA, persistent: false },
            resolving: vec![CommandTemplate { target: NODE_CAMERA, action: TemplateAction::Restart }],
        },
        Uncertainty {
            id: "U02",
            description: "camera driver corruption (restart-proof)",
            symptom: Symptom::CameraRateLow,
            target: NODE_CAMERA,
            effect: Effect::NodeFault { node: NODE_CAMERA, persistent: true },
            resolving: vec![CommandTemplate { target: NODE_CAMERA, action: TemplateAction::Redeploy }],
        },
        Uncertainty {
            id: "U03",
            description: "fusion deadlock (recoverable)",
            symptom: Symptom::FusionRateLow,
            target: NODE_FUSION,
            effect: Effect::NodeFault { node: NODE_FUSION, persistent: false },
            resolving: vec![CommandTemplate { target: NODE_FUSION, action: TemplateAction::Restart }],
        },
        Uncertainty {
            id: "U04",
            description: "fusion state corruption (restart-proof)",
            symptom: Symptom::FusionRateLow,
            target: NODE_FUSION,
            effect: Effect::NodeFault { node: NODE_FUSION, persistent: true },
            resolving: vec![CommandTemplate { target: NODE_FUSION, action: TemplateAction::Redeploy }],
        },
        Uncertainty {
            id: "U05",
            description: "segmentation hang (recoverable)",
            symptom: Symptom::SegmentationRateLow,
            target: NODE_SEGMENTATION,
            effect: Effect::NodeFault { node: NODE_SEGMENTATION, persistent: false },
            resolving: vec![CommandTemplate {
                target: NODE_SEGMENTATION,
                action: TemplateAction::Restart,
            }],
        },
        Uncertainty {
            id: "U06",
            description: "segmentation crash loop (restart-proof)",
            symptom: Symptom::SegmentationRateLow,
            target: NODE_SEGMENTATION,
            effect: Effect::NodeFault { node: NODE_SEGMENTATION, persistent: true },
            resolving: vec![CommandTemplate {
                target: NODE_SEGMENTATION,
                action: TemplateAction::Redeploy,
            }],
        },
        Uncertainty {
            id: "U07",
            description: "lighting drift shifts every camera channel",
            symptom: Symptom::EntropyHigh,
            target: NODE_CAMERA,
            effect: Effect::ColorShift { delta: DEFAULT_COLOR_SHIFT },
            resolving: vec![
                CommandTemplate { target: NODE_ENHANCEMENT, action: TemplateAction::Activate },
                CommandTemplate {
                    target: NODE_FUSION,
                    action: TemplateAction::ChangeSubscription {
                        from_topic: TOPIC_CAMERA,
                        to_topic: TOPIC_ENHANCEMENT,
                    },
                },
            ],
        },
        Uncertainty {
            id: "U08",
            description: "enhancement applied to clean input",
            symptom: Symptom::EntropyHigh,
            target: NODE_ENHANCEMENT,
            effect: Effect::SpuriousEnhancement,
            resolving: vec![
                CommandTemplate {
                    target: NODE_FUSION,
                    action: TemplateAction::ChangeSubscription {
                        from_topic: TOPIC_ENHANCEMENT,
                        to_topic: TOPIC_CAMERA,
                    },
                },
                CommandTemplate { target: NODE_ENHANCEMENT, action: TemplateAction::Deactivate },
            ],
        },
        Uncertainty {
            id: "U09",
            description: "depth extrinsics drift out of alignment",
            symptom: Symptom::EntropyHigh,
            target: NODE_FUSION,
            effect: Effect::DepthMisalignment {
                dx: DEFAULT_MISALIGNMENT.0,
                dy: DEFAULT_MISALIGNMENT.1,
            },
            resolving: vec![set_param(NODE_FUSION, "recalibrate", Some(ParamValue::Bool(true)))],
        },
        Uncertainty {
            id: "U10",
            description: "depth sensor noise burst",
            symptom: Symptom::EntropyHigh,
            target: NODE_DEPTH,
            effect: Effect::DepthNoise { sigma: DEFAULT_DEPTH_NOISE_SIGMA },
            resolving: vec![set_param(
                NODE_FUSION,
                "modality",
                Some(ParamValue::Text("rgb_only".to_string())),
            )],
        },
        Uncertainty {
            id: "U11",
            description: "camera slowly drifts out of focus",
            symptom: Symptom::SharpnessLow,
            target: NODE_CAMERA,
            effect: Effect::CameraBlur { sigma: DEFAULT_BLUR_SIGMA },
            resolving: vec![set_param(NODE_CAMERA, "focus", None)],
        },
    ]
}

pub fn lookup(id: &str) -> Option<Uncertainty> {
    catalog().into_iter().find(|u| u.id == id)
}

/// Ids grouped by criticality, in catalog order.
pub fn ids_with_criticality(criticality: Criticality) -> Vec<&'static str> {
    catalog().into_iter().filter(|u| u.criticality() == criticality).map(|u| u.id).collect()
}

/// Static check used by scenario validation: every id must exist, and no
/// two injections may share a criticality class (the classes are mutually
/// exclusive within one run so that symptoms stay attributable).
pub fn validate_injection_ids(ids: &[String]) -> Result<(), String> {
    let mut seen = BTreeSet::new();
    for id in ids {
        let Some(u) = lookup(id) else {
            return Err(format!("unknown uncertainty id `{id}`"));
        };
        if !seen.insert(u.criticality()) {
            return Err(format!(
                "injections must not share a criticality class; `{id}` duplicates {}",
                u.criticality()
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifecycle::AdaptationCommand;

    #[test]
    fn catalog_has_eleven_entries_with_unique_sorted_ids() {
        let entries = catalog();
        assert_eq!(entries.len(), 11);
        let ids: Vec<_> = entries.iter().map(|u| u.id).collect();
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(ids, sorted, "ids are unique and in order");
        assert!(ids.iter().all(|id| id.starts_with('U') && id.len() == 3));
    }

    #[test]
    fn criticality_classes_split_six_four_one() {
        assert_eq!(ids_with_criticality(Criticality::Error).len(), 6);
        assert_eq!(ids_with_criticality(Criticality::Warning).len(), 4);
        assert_eq!(ids_with_criticality(Criticality::Ok), vec!["U11"]);
    }

    #[test]
    fn node_faults_pair_low_and_high_severity_per_target() {
        for (low, high) in [("U01", "U02"), ("U03", "U04"), ("U05", "U06")] {
            let l = lookup(low).unwrap();
            let h = lookup(high).unwrap();
            assert_eq!(l.severity(), Some(Severity::Low));
            assert_eq!(h.severity(), Some(Severity::High));
            assert_eq!(l.target, h.target);
            assert_eq!(l.symptom, h.symptom);
            assert!(matches!(
                l.resolving[0].action,
                TemplateAction::Restart
            ));
            assert!(matches!(h.resolving[0].action, TemplateAction::Redeploy));
        }
    }

    #[test]
    fn environment_effects_have_no_severity() {
        for id in ["U07", "U08", "U09", "U10", "U11"] {
            assert_eq!(lookup(id).unwrap().severity(), None, "{id}");
        }
    }

    #[test]
    fn wildcard_parameter_template_accepts_any_value() {
        let u11 = lookup("U11").unwrap();
        let t = &u11.resolving[0];
        let make = |v: ParamValue| {
            AdaptationCommand::new(
                NODE_CAMERA,
                AdaptationAction::SetParameter { name: "focus".into(), value: v },
                "anyone",
            )
        };
        assert!(t.matches(&make(ParamValue::Text("auto".into()))));
        assert!(t.matches(&make(ParamValue::Float(1.25))));
        let wrong_name = AdaptationCommand::new(
            NODE_CAMERA,
            AdaptationAction::SetParameter { name: "exposure".into(), value: ParamValue::Int(1) },
            "anyone",
        );
        assert!(!t.matches(&wrong_name));
    }

    #[test]
    fn pinned_parameter_template_requires_the_exact_value() {
        let u09 = lookup("U09").unwrap();
        let t = &u09.resolving[0];
        let make = |v: ParamValue| {
            AdaptationCommand::new(
                NODE_FUSION,
                AdaptationAction::SetParameter { name: "recalibrate".into(), value: v },
                "anyone",
            )
        };
        assert!(t.matches(&make(ParamValue::Bool(true))));
        assert!(!t.matches(&make(ParamValue::Bool(false))));
    }

    #[test]
    fn template_matching_checks_target_and_shape() {
        let u02 = lookup("U02").unwrap();
        let t = &u02.resolving[0];
        let right =
            AdaptationCommand::new(NODE_CAMERA, AdaptationAction::Redeploy, "baseline");
        let wrong_target =
            AdaptationCommand::new(NODE_FUSION, AdaptationAction::Redeploy, "baseline");
        let wrong_action =
            AdaptationCommand::new(NODE_CAMERA, AdaptationAction::Restart, "baseline");
        assert!(t.matches(&right));
        assert!(!t.matches(&wrong_target));
        assert!(!t.matches(&wrong_action));
    }

    #[test]
    fn spurious_enhancement_installs_via_injector_commands() {
        let u08 = lookup("U08").unwrap();
        let setup = u08.effect.setup_commands();
        assert_eq!(setup.len(), 2);
        assert!(setup.iter().all(|c| c.issuer == ISSUER));
        assert!(matches!(setup[0].action, AdaptationAction::Activate));
        assert_eq!(setup[0].target, NODE_ENHANCEMENT);
        // Every other effect installs without touching the command channel.
        for id in ["U01", "U07", "U09", "U10", "U11"] {
            assert!(lookup(id).unwrap().effect.setup_commands().is_empty());
        }
    }

    #[test]
    fn validation_rejects_unknown_ids_and_duplicate_criticalities() {
        let ok = ["U01", "U07", "U11"].map(String::from);
        assert!(validate_injection_ids(&ok).is_ok());
        let unknown = ["U99"].map(String::from);
        assert!(validate_injection_ids(&unknown).is_err());
        let dup = ["U07", "U09"].map(String::from);
        let err = validate_injection_ids(&dup).unwrap_err();
        assert!(err.contains("criticality"), "{err}");
    }

    #[test]
    fn resolving_recipes_stay_inside_the_adaptation_vocabulary() {
        // Every recipe is non-empty and targets a real node.
        for u in catalog() {
            assert!(!u.resolving.is_empty(), "{} must be resolvable", u.id);
            for step in &u.resolving {
                assert!(
                    crate::pipeline::nodes::NODE_NAMES.contains(&step.target),
                    "{}: unknown target {}",
                    u.id,
                    step.target
                );
            }
        }
    }
}
