//! Managed-node lifecycle states, transitions, and adaptation commands.
//!
//! Every node in the managed pipeline walks the same four-state lifecycle.
//! Only `Active` nodes publish. Transitions are requested either by scripted
//! scenario steps or by a managing system, always through an
//! [`AdaptationCommand`]; illegal transitions are rejected, never panicked.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

/// Lifecycle state of a managed node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleState {
    Unconfigured,
    Inactive,
    Active,
    Finalized,
}

impl LifecycleState {
    pub fn as_str(self) -> &'static str {
        match self {
            LifecycleState::Unconfigured => "unconfigured",
            LifecycleState::Inactive => "inactive",
            LifecycleState::Active => "active",
            LifecycleState::Finalized => "finalized",
        }
    }
}

impl fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The primitive lifecycle transitions a node can take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    Configure,
    Activate,
    Deactivate,
    Cleanup,
    Shutdown,
}

impl Transition {
    pub fn as_str(self) -> &'static str {
        match self {
            Transition::Configure => "configure",
            Transition::Activate => "activate",
            Transition::Deactivate => "deactivate",
            Transition::Cleanup => "cleanup",
            Transition::Shutdown => "shutdown",
        }
    }

    /// Returns the target state if this transition is legal from `from`.
    pub fn apply(self, from: LifecycleState) -> Option<LifecycleState> {
        use LifecycleState::*;
        match (self, from) {
            (Transition::Configure, Unconfigured) => Some(Inactive),
            (Transition::Activate, Inactive) => Some(Active),
            (Transition::Deactivate, Active) => Some(Inactive),
            (Transition::Cleanup, Inactive) => Some(Unconfigured),
            (Transition::Shutdown, Finalized) => None,
            (Transition::Shutdown, _) => Some(Finalized),
            _ => None,
        }
    }
}

/// A typed parameter value carried by `SetParameter` commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Float(v) => Some(*v),
            ParamValue::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            ParamValue::Bool(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Text(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(v) => write!(f, "{v}"),
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v:.6}"),
            ParamValue::Text(v) => f.write_str(v),
        }
    }
}

/// The action requested by an adaptation command.
///
/// `Restart` is the packaged deactivate/cleanup/configure/activate round
/// trip; it exists as a first-class action so scripted scenarios and
/// controllers can request it atomically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "action")]
pub enum AdaptationAction {
    SetParameter { name: String, value: ParamValue },
    ChangeSubscription { from_topic: String, to_topic: String },
    Activate,
    Deactivate,
    Restart,
    Redeploy,
}

impl AdaptationAction {
    pub fn kind(&self) -> &'static str {
        match self {
            AdaptationAction::SetParameter { .. } => "set_parameter",
            AdaptationAction::ChangeSubscription { .. } => "change_subscription",
            AdaptationAction::Activate => "activate",
            AdaptationAction::Deactivate => "deactivate",
            AdaptationAction::Restart => "restart",
            AdaptationAction::Redeploy => "redeploy",
        }
    }

    /// Short human-readable form used in logs.
    pub fn describe(&self) -> String {
        match self {
            AdaptationAction::SetParameter { name, value } => {
                format!("set_parameter {name}={value}")
            }
            AdaptationAction::ChangeSubscription { from_topic, to_topic } => {
                format!("change_subscription {from_topic}->{to_topic}")
            }
            other => other.kind().to_string(),
        }
    }
}

/// A single adaptation command addressed to one node.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationCommand {
    pub target: String,
    pub action: AdaptationAction,
    pub issuer: String,
}

impl AdaptationCommand {
    pub fn new(target: impl Into<String>, action: AdaptationAction, issuer: impl Into<String>) -> Self {
        AdaptationCommand { target: target.into(), action, issuer: issuer.into() }
    }
}

/// Result of attempting to apply an adaptation command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdaptationOutcome {
    Accepted,
    /// Command arrived while the target was being redeployed; it will be
    /// applied after the node is recreated.
    Queued,
    Rejected(String),
}

impl AdaptationOutcome {
    pub fn as_str(&self) -> &str {
        match self {
            AdaptationOutcome::Accepted => "accepted",
            AdaptationOutcome::Queued => "queued",
            AdaptationOutcome::Rejected(_) => "rejected",
        }
    }
}

/// Per-node fault storage.
///
/// Transient faults are erased on every pass through the configure
/// transition (and therefore by a restart). Persistent faults survive
/// restarts and are only erased when the node is torn down and redeployed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultRegister {
    transient: BTreeSet<String>,
    persistent: BTreeSet<String>,
}

impl FaultRegister {
    pub fn set_transient(&mut self, tag: impl Into<String>) {
        self.transient.insert(tag.into());
    }

    pub fn set_persistent(&mut self, tag: impl Into<String>) {
        self.persistent.insert(tag.into());
    }

    pub fn clear_transient(&mut self) {
        self.transient.clear();
    }

    pub fn clear_all(&mut self) {
        self.transient.clear();
        self.persistent.clear();
    }

    pub fn has(&self, tag: &str) -> bool {
        self.transient.contains(tag) || self.persistent.contains(tag)
    }

    pub fn has_any(&self) -> bool {
        !self.transient.is_empty() || !self.persistent.is_empty()
    }

    pub fn has_persistent(&self) -> bool {
        !self.persistent.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn legal_transition_cycle() {
        use LifecycleState::*;
        let mut state = Unconfigured;
        for (transition, expected) in [
            (Transition::Configure, Inactive),
            (Transition::Activate, Active),
            (Transition::Deactivate, Inactive),
            (Transition::Cleanup, Unconfigured),
        ] {
            state = transition.apply(state).expect("legal transition");
            assert_eq!(state, expected);
        }
    }

    #[test]
    fn illegal_transitions_are_rejected() {
        use LifecycleState::*;
        assert_eq!(Transition::Activate.apply(Active), None);
        assert_eq!(Transition::Activate.apply(Unconfigured), None);
        assert_eq!(Transition::Deactivate.apply(Inactive), None);
        assert_eq!(Transition::Configure.apply(Active), None);
        assert_eq!(Transition::Cleanup.apply(Active), None);
        assert_eq!(Transition::Shutdown.apply(Finalized), None);
    }

    #[test]
    fn shutdown_reaches_finalized_from_everywhere_else() {
        use LifecycleState::*;
        for from in [Unconfigured, Inactive, Active] {
            assert_eq!(Transition::Shutdown.apply(from), Some(Finalized));
        }
    }

    #[test]
    fn fault_register_severity_semantics() {
        let mut reg = FaultRegister::default();
        reg.set_transient("outage");
        reg.set_persistent("outage");
        assert!(reg.has("outage"));
        assert!(reg.has_persistent());

        // A configure pass erases the transient set only.
        reg.clear_transient();
        assert!(reg.has("outage"), "persistent fault survives configure");

        reg.clear_all();
        assert!(!reg.has_any());
    }

    proptest! {
        /// Any sequence of transitions keeps the state machine inside the
        /// four legal states, and nothing ever leaves Finalized.
        #[test]
        fn random_transition_sequences_stay_closed(steps in prop::collection::vec(0u8..5, 0..64)) {
            let mut state = LifecycleState::Unconfigured;
            let mut finalized_at: Option<usize> = None;
            for (i, step) in steps.iter().enumerate() {
                let transition = match step {
                    0 => Transition::Configure,
                    1 => Transition::Activate,
                    2 => Transition::Deactivate,
                    3 => Transition::Cleanup,
                    _ => Transition::Shutdown,
                };
                if let Some(next) = transition.apply(state) {
                    state = next;
                    if state == LifecycleState::Finalized && finalized_at.is_none() {
                        finalized_at = Some(i);
                    }
                }
                if finalized_at.is_some() {
                    prop_assert_eq!(state, LifecycleState::Finalized);
                }
            }
        }
    }
}
