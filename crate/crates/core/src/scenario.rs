//! Scenario files: the TOML run description consumed by the CLI.
//!
//! A scenario pins everything a run needs — seed, duration, sensor rate,
//! controller, uncertainty injections, scripted adaptation commands, and
//! optional threshold/model/scene overrides — so a (scenario, binary) pair
//! reproduces a run byte for byte.

use crate::injector;
use crate::lifecycle::AdaptationAction;
use crate::monitor::Thresholds;
use crate::pipeline::model::ModelConfig;
use crate::scene::SceneSpec;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

/// One uncertainty injection at a point in virtual time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionSpec {
    /// Injection time in seconds from run start.
    pub time: f64,
    /// Catalog id, e.g. `U07`.
    pub uncertainty: String,
}

/// One pre-scripted adaptation command, delivered at a point in virtual
/// time with issuer `scenario`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedAdaptation {
    /// Delivery time in seconds from run start.
    pub time: f64,
    /// Node the command addresses.
    pub target: String,
    #[serde(flatten)]
    pub action: AdaptationAction,
}

/// Node timing overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelaySpec {
    /// Restart downtime in seconds.
    pub restart_resume_secs: f64,
    /// Redeployment downtime for sensor drivers (camera, depth).
    pub redeploy_sensor_secs: f64,
    /// Redeployment downtime for every other node.
    pub redeploy_default_secs: f64,
}

impl Default for DelaySpec {
    fn default() -> Self {
        DelaySpec {
            restart_resume_secs: crate::managing::RESTART_RESUME_SECS,
            redeploy_sensor_secs: crate::managing::REDEPLOY_SENSOR_SECS,
            redeploy_default_secs: crate::managing::REDEPLOY_DEFAULT_SECS,
        }
    }
}

/// A complete run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    /// Free-form name; defaults to the file stem on load.
    pub name: String,
    pub seed: u64,
    pub duration_secs: f64,
    /// Sensor timer rate (camera and depth), in Hz.
    pub frame_rate_hz: f64,
    /// Controller name resolved against the registry.
    pub controller: String,
    pub injections: Vec<InjectionSpec>,
    pub adaptations: Vec<ScriptedAdaptation>,
    pub thresholds: Thresholds,
    pub delays: DelaySpec,
    pub model: ModelConfig,
    pub scene: SceneSpec,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            schema_version: SCHEMA_VERSION,
            name: "unnamed".to_string(),
            seed: 0,
            duration_secs: 20.0,
            frame_rate_hz: 10.0,
            controller: "none".to_string(),
            injections: Vec::new(),
            adaptations: Vec::new(),
            thresholds: Thresholds::default(),
            delays: DelaySpec::default(),
            model: ModelConfig::default(),
            scene: SceneSpec::default(),
        }
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Scenario, String> {
        toml::from_str(text).map_err(|e| format!("invalid scenario: {e}"))
    }

    pub fn load(path: &Path) -> Result<Scenario, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let mut scenario = Self::from_toml_str(&text)?;
        if scenario.name == "unnamed" {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                scenario.name = stem.to_string();
            }
        }
        Ok(scenario)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn frame_period_ms(&self) -> u64 {
        (1000.0 / self.frame_rate_hz).round() as u64
    }

    /// All structural checks. `known_controllers` comes from the registry.
    pub fn validate(&self, known_controllers: &[String]) -> Result<(), Vec<String>> {
        let mut errors = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errors.push(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if !(self.duration_secs > 0.0) {
            errors.push("duration_secs must be positive".to_string());
        }
        if !(self.frame_rate_hz > 0.0) || self.frame_period_ms() == 0 {
            errors.push("frame_rate_hz must be positive and at most 1000".to_string());
        }
        if !known_controllers.iter().any(|c| c == &self.controller) {
            errors.push(format!(
                "unknown controller `{}` (known: {})",
                self.controller,
                known_controllers.join(", ")
            ));
        }
        let ids: Vec<String> = self.injections.iter().map(|i| i.uncertainty.clone()).collect();
        if let Err(e) = injector::validate_injection_ids(&ids) {
            errors.push(e);
        }
        for inj in &self.injections {
            if inj.time < 0.0 || inj.time > self.duration_secs {
                errors.push(format!(
                    "injection of {} at {}s is outside the run [0, {}]",
                    inj.uncertainty, inj.time, self.duration_secs
                ));
            }
        }
        for ad in &self.adaptations {
            if ad.time < 0.0 || ad.time > self.duration_secs {
                errors.push(format!(
                    "adaptation of {} at {}s is outside the run [0, {}]",
                    ad.target, ad.time, self.duration_secs
                ));
            }
            if !crate::pipeline::nodes::NODE_NAMES.contains(&ad.target.as_str()) {
                errors.push(format!("adaptation targets unknown node `{}`", ad.target));
            }
        }
        if !(self.thresholds.freq_min_hz > 0.0) {
            errors.push("thresholds.freq_min_hz must be positive".to_string());
        }
        if !(self.delays.restart_resume_secs >= 0.0)
            || !(self.delays.redeploy_sensor_secs >= 0.0)
            || !(self.delays.redeploy_default_secs >= 0.0)
        {
            errors.push("delays must be non-negative".to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifecycle::ParamValue;

    fn known() -> Vec<String> {
        vec!["none".to_string(), "baseline".to_string()]
    }

    #[test]
    fn minimal_scenario_uses_defaults() {
        let s = Scenario::from_toml_str("").unwrap();
        assert_eq!(s.schema_version, SCHEMA_VERSION);
        assert_eq!(s.duration_secs, 20.0);
        assert_eq!(s.frame_rate_hz, 10.0);
        assert_eq!(s.frame_period_ms(), 100);
        assert_eq!(s.controller, "none");
        assert!(s.validate(&known()).is_ok());
    }

    #[test]
    fn full_scenario_roundtrips_through_toml() {
        let text = r#"
            schema_version = 1
            seed = 7
            duration_secs = 12.5
            controller = "baseline"

            [[injections]]
            time = 5.0
            uncertainty = "U09"

            [[adaptations]]
            time = 6.0
            target = "fusion"
            action = "set_parameter"
            name = "recalibrate"
            value = true

            [[adaptations]]
            time = 7.0
            target = "camera"
            action = "restart"

            [thresholds]
            entropy_max = 0.08
        "#;
        let s = Scenario::from_toml_str(text).unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.injections.len(), 1);
        assert_eq!(s.adaptations.len(), 2);
        assert_eq!(
            s.adaptations[0].action,
            AdaptationAction::SetParameter {
                name: "recalibrate".into(),
                value: ParamValue::Bool(true)
            }
        );
        assert_eq!(s.adaptations[1].action, AdaptationAction::Restart);
        assert_eq!(s.thresholds.entropy_max, 0.08);
        assert!(s.validate(&known()).is_ok());

        let reparsed = Scenario::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, reparsed);
    }

    #[test]
    fn validation_catches_structural_errors() {
        let text = r#"
            schema_version = 3
            duration_secs = 10.0
            controller = "mystery"

            [[injections]]
            time = 50.0
            uncertainty = "U99"

            [[adaptations]]
            time = 2.0
            target = "gps"
            action = "restart"
        "#;
        let s = Scenario::from_toml_str(text).unwrap();
        let errors = s.validate(&known()).unwrap_err();
        let all = errors.join("\n");
        assert!(all.contains("schema_version"), "{all}");
        assert!(all.contains("mystery"), "{all}");
        assert!(all.contains("U99"), "{all}");
        assert!(all.contains("outside the run"), "{all}");
        assert!(all.contains("gps"), "{all}");
    }

    #[test]
    fn duplicate_criticality_injections_fail_validation() {
        let text = r#"
            [[injections]]
            time = 1.0
            uncertainty = "U07"

            [[injections]]
            time = 2.0
            uncertainty = "U09"
        "#;
        let s = Scenario::from_toml_str(text).unwrap();
        let errors = s.validate(&known()).unwrap_err();
        assert!(errors.iter().any(|e| e.contains("criticality")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Scenario::from_toml_str("banana = 1").is_err());
    }
}
