//! Run evaluation: segmentation quality, output downtime, adaptation
//! effectiveness, reaction time, and redeployment overhead — all computed
//! by replaying the run log, never by peeking into live state, so any log
//! (fresh or loaded from disk) evaluates identically.

use crate::injector::{self, Severity, Uncertainty};
use crate::lifecycle::AdaptationAction;
use crate::log::{EventLog, EventRecord};
use crate::monitor::Symptom;
use crate::pipeline::nodes::{TOPIC_CAMERA, TOPIC_FUSION, TOPIC_SEGMENTATION};
use crate::scenario::Scenario;
use crate::time::VirtualTime;
use serde::Serialize;
use serde_json::Value;
use std::collections::BTreeSet;

/// Mean intersection-over-union between two label maps. Classes absent
/// from both maps are excluded from the mean; a class present in exactly
/// one contributes zero.
pub fn mean_iou(pred: &[u8], truth: &[u8], num_classes: usize) -> f64 {
    assert_eq!(pred.len(), truth.len(), "label maps must match in size");
    let mut intersection = vec![0u64; num_classes];
    let mut union = vec![0u64; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        let (p, t) = (p as usize, t as usize);
        assert!(p < num_classes && t < num_classes, "label out of range");
        if p == t {
            intersection[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[t] += 1;
        }
    }
    let mut total = 0.0;
    let mut classes = 0u32;
    for c in 0..num_classes {
        if union[c] > 0 {
            total += intersection[c] as f64 / union[c] as f64;
            classes += 1;
        }
    }
    if classes == 0 {
        // Degenerate: no labels at all (empty maps with num_classes > 0).
        return 0.0;
    }
    total / classes as f64
}

/// Total time (seconds) the stream described by `publish_ms` was down in
/// `[0, t_end_ms)`: for every inter-publish gap (including the leading and
/// trailing boundary gaps) the excess over one nominal period counts.
/// Computed on the millisecond grid so it agrees exactly with
/// [`downtime_by_ticks`].
pub fn downtime_from_gaps(publish_ms: &[u64], t_end_ms: u64, period_ms: u64) -> f64 {
    let mut down_ms: u64 = 0;
    let mut last = 0u64;
    for &t in publish_ms {
        let gap = t.saturating_sub(last);
        down_ms += gap.saturating_sub(period_ms);
        last = t;
    }
    let tail = t_end_ms.saturating_sub(last);
    down_ms += tail.saturating_sub(period_ms);
    down_ms as f64 / 1000.0
}

/// Brute-force oracle for [`downtime_from_gaps`]: walks every millisecond
/// tick and asks "has a publish happened recently enough?".
pub fn downtime_by_ticks(publish_ms: &[u64], t_end_ms: u64, period_ms: u64) -> f64 {
    let mut down_ticks: u64 = 0;
    let mut next_idx = 0;
    let mut latest: u64 = 0;
    for k in 0..t_end_ms {
        let cutoff = k + 1;
        while next_idx < publish_ms.len() && publish_ms[next_idx] < cutoff {
            latest = publish_ms[next_idx];
            next_idx += 1;
        }
        if cutoff - latest > period_ms {
            down_ticks += 1;
        }
    }
    down_ticks as f64 / 1000.0
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Population standard deviation.
fn std_dev(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    Some(var.sqrt())
}

/// Evaluation of one injected uncertainty.
#[derive(Debug, Clone, Serialize)]
pub struct PerUncertaintyReport {
    pub id: String,
    pub injected_at_secs: f64,
    /// When the matching symptom episode started, if it was ever observed.
    pub first_observed_secs: Option<f64>,
    /// When the first executed command matching a resolving step ran.
    pub matched_command_secs: Option<f64>,
    /// `matched_command_secs - first_observed_secs`.
    pub t_react_secs: Option<f64>,
    pub resolved: bool,
}

/// All run-level metrics.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub controller: String,
    pub seed: u64,
    pub duration_secs: f64,
    /// Mean/std over per-frame mean-IoU scores; absent when the run
    /// produced no segmentation output at all.
    pub iou_mean: Option<f64>,
    pub iou_std: Option<f64>,
    /// Downtime of the segmentation output stream.
    pub t_down_secs: f64,
    pub availability: f64,
    /// Commands executed (outcome not rejected), excluding the injector's
    /// own installation commands.
    pub adaptations_executed: u64,
    pub uncertainties_injected: u64,
    pub uncertainties_resolved: u64,
    /// `uncertainties_resolved / adaptations_executed`; absent when nothing
    /// was executed.
    pub ratio: Option<f64>,
    /// Mean reaction time over uncertainties with a matched command.
    pub t_react_mean_secs: Option<f64>,
    /// Executed redeploys whose target had no persistent fault to clear.
    pub redeploys_unnecessary: u64,
    pub per_uncertainty: Vec<PerUncertaintyReport>,
}

struct ExecutedCommand {
    t: VirtualTime,
    command: crate::lifecycle::AdaptationCommand,
}

struct AppliedInjection {
    t: VirtualTime,
    uncertainty: Uncertainty,
}

struct DiagSample {
    t: VirtualTime,
    entropy: Option<f64>,
    sharpness: Option<f64>,
    frequencies: Vec<(String, f64)>,
    /// (symptom code, first_observed seconds) pairs present in the sample.
    symptoms: Vec<(String, f64)>,
}

impl DiagSample {
    fn frequency(&self, topic: &str) -> Option<f64> {
        self.frequencies.iter().find(|(t, _)| t == topic).map(|(_, f)| *f)
    }

    /// Positive evidence that the signal behind `symptom` is healthy. A
    /// missing signal (no data yet) is *not* nominal.
    fn nominal_for(&self, symptom: Symptom, thresholds: &crate::monitor::Thresholds) -> bool {
        match symptom {
            Symptom::CameraRateLow => {
                self.frequency(TOPIC_CAMERA).is_some_and(|f| f >= thresholds.freq_min_hz)
            }
            Symptom::FusionRateLow => {
                self.frequency(TOPIC_FUSION).is_some_and(|f| f >= thresholds.freq_min_hz)
            }
            Symptom::SegmentationRateLow => {
                self.frequency(TOPIC_SEGMENTATION).is_some_and(|f| f >= thresholds.freq_min_hz)
            }
            Symptom::EntropyHigh => self.entropy.is_some_and(|e| e <= thresholds.entropy_max),
            Symptom::SharpnessLow => {
                self.sharpness.is_some_and(|s| s >= thresholds.sharpness_min)
            }
        }
    }
}

fn parse_time_str(s: &str) -> Option<f64> {
    s.parse().ok()
}

fn parse_diag(record: &EventRecord) -> DiagSample {
    let frequencies = record
        .detail
        .get("frequencies")
        .and_then(Value::as_object)
        .map(|obj| {
            obj.iter()
                .filter_map(|(k, v)| {
                    let f = match v {
                        Value::String(s) => s.parse().ok(),
                        Value::Number(n) => n.as_f64(),
                        _ => None,
                    }?;
                    Some((k.clone(), f))
                })
                .collect()
        })
        .unwrap_or_default();
    let symptoms = record
        .detail
        .get("symptoms")
        .and_then(Value::as_array)
        .map(|arr| {
            arr.iter()
                .filter_map(|s| {
                    let code = s.get("symptom")?.as_str()?.to_string();
                    let first = parse_time_str(s.get("first_observed")?.as_str()?)?;
                    Some((code, first))
                })
                .collect()
        })
        .unwrap_or_default();
    DiagSample {
        t: record.t,
        entropy: record.detail_f64("entropy"),
        sharpness: record.detail_f64("sharpness"),
        frequencies,
        symptoms,
    }
}

/// Replays `log` into the full metrics report. `scenario` supplies the
/// thresholds and timing the run was executed with.
pub fn compute_report(log: &EventLog, scenario: &Scenario) -> MetricsReport {
    let records = log.records();
    let duration = scenario.duration_secs;
    let duration_ms = VirtualTime::from_secs_f64(duration).millis();
    let period_ms = scenario.frame_period_ms();
    let thresholds = &scenario.thresholds;

    let controller = records
        .iter()
        .find(|r| r.kind == "run_start")
        .and_then(|r| r.detail_str("controller"))
        .unwrap_or("unknown")
        .to_string();

    // Per-frame segmentation quality.
    let iou_values: Vec<f64> =
        records.iter().filter(|r| r.kind == "iou").filter_map(|r| r.detail_f64("iou")).collect();

    // Output continuity.
    let seg_publish_ms: Vec<u64> = records
        .iter()
        .filter(|r| r.kind == "publish" && r.topic.as_deref() == Some(TOPIC_SEGMENTATION))
        .map(|r| r.t.millis())
        .collect();
    let t_down_secs = downtime_from_gaps(&seg_publish_ms, duration_ms, period_ms);
    let availability = 1.0 - t_down_secs / duration;

    // Commands that actually ran (the injector's installation commands are
    // part of the uncertainty, not a response to it).
    let executed: Vec<ExecutedCommand> = records
        .iter()
        .filter(|r| r.kind == "adaptation")
        .filter(|r| r.detail_str("outcome").is_some_and(|o| o != "rejected"))
        .filter(|r| r.detail_str("issuer").is_some_and(|i| i != injector::ISSUER))
        .filter_map(|r| {
            let action: AdaptationAction =
                serde_json::from_value(r.detail.get("command")?.clone()).ok()?;
            let issuer = r.detail_str("issuer").unwrap_or_default().to_string();
            Some(ExecutedCommand {
                t: r.t,
                command: crate::lifecycle::AdaptationCommand::new(&r.node, action, &issuer),
            })
        })
        .collect();

    let applied: Vec<AppliedInjection> = records
        .iter()
        .filter(|r| r.kind == "injection")
        .filter(|r| r.detail_str("outcome") == Some("applied"))
        .filter_map(|r| {
            let id = r.detail_str("id")?;
            Some(AppliedInjection { t: r.t, uncertainty: injector::lookup(id)? })
        })
        .collect();

    let diagnostics: Vec<DiagSample> =
        records.iter().filter(|r| r.kind == "diagnostics").map(parse_diag).collect();

    let per_uncertainty: Vec<PerUncertaintyReport> = applied
        .iter()
        .map(|inj| {
            let u = &inj.uncertainty;
            let code = u.symptom.code();

            let first_observed_secs = diagnostics
                .iter()
                .filter(|d| d.t >= inj.t)
                .find_map(|d| d.symptoms.iter().find(|(c, _)| c == code).map(|(_, f)| *f));

            let matched_command_secs = executed
                .iter()
                .filter(|c| c.t >= inj.t)
                .find(|c| u.resolving.iter().any(|tpl| tpl.matches(&c.command)))
                .map(|c| c.t.as_secs_f64());

            let t_react_secs = match (matched_command_secs, first_observed_secs) {
                (Some(cmd), Some(obs)) => Some(cmd - obs),
                _ => None,
            };

            let resolved = executed
                .iter()
                .find(|c| c.t >= inj.t)
                .map(|first_cmd| sustained_nominal(&diagnostics, first_cmd.t, u.symptom, thresholds))
                .unwrap_or(false);

            PerUncertaintyReport {
                id: u.id.to_string(),
                injected_at_secs: inj.t.as_secs_f64(),
                first_observed_secs,
                matched_command_secs,
                t_react_secs,
                resolved,
            }
        })
        .collect();

    let uncertainties_resolved = per_uncertainty.iter().filter(|p| p.resolved).count() as u64;
    let adaptations_executed = executed.len() as u64;
    let ratio = if adaptations_executed == 0 {
        None
    } else {
        Some(uncertainties_resolved as f64 / adaptations_executed as f64)
    };
    let t_react_values: Vec<f64> =
        per_uncertainty.iter().filter_map(|p| p.t_react_secs).collect();

    MetricsReport {
        scenario: scenario.name.clone(),
        controller,
        seed: scenario.seed,
        duration_secs: duration,
        iou_mean: mean(&iou_values),
        iou_std: std_dev(&iou_values),
        t_down_secs,
        availability,
        adaptations_executed,
        uncertainties_injected: applied.len() as u64,
        uncertainties_resolved,
        ratio,
        t_react_mean_secs: mean(&t_react_values),
        redeploys_unnecessary: count_unnecessary_redeploys(records),
        per_uncertainty,
    }
}

/// True when, at or after `after`, three consecutive monitor samples 0.5 s
/// apart all show the signal behind `symptom` as healthy (1 s sustained).
fn sustained_nominal(
    diagnostics: &[DiagSample],
    after: VirtualTime,
    symptom: Symptom,
    thresholds: &crate::monitor::Thresholds,
) -> bool {
    let eligible: Vec<&DiagSample> = diagnostics.iter().filter(|d| d.t >= after).collect();
    eligible.windows(3).any(|w| {
        w[1].t.millis() - w[0].t.millis() == crate::monitor::MONITOR_PERIOD_MS
            && w[2].t.millis() - w[1].t.millis() == crate::monitor::MONITOR_PERIOD_MS
            && w.iter().all(|d| d.nominal_for(symptom, thresholds))
    })
}

/// Replays fault bookkeeping: a redeploy is unnecessary when its target had
/// no persistent fault at issue time (a restart, or nothing, would have
/// done).
fn count_unnecessary_redeploys(records: &[EventRecord]) -> u64 {
    let mut persistent: BTreeSet<String> = BTreeSet::new();
    let mut unnecessary = 0;
    for r in records {
        match r.kind.as_str() {
            "injection" => {
                if r.detail_str("outcome") == Some("applied")
                    && r.detail_str("severity") == Some(Severity::High.as_str())
                {
                    persistent.insert(r.node.clone());
                }
            }
            "redeploy_complete" => {
                persistent.remove(&r.node);
            }
            "adaptation" => {
                let is_redeploy = r
                    .detail
                    .get("command")
                    .and_then(|c| c.get("action"))
                    .and_then(Value::as_str)
                    == Some("redeploy");
                let executed = r.detail_str("outcome").is_some_and(|o| o != "rejected");
                if is_redeploy && executed && !persistent.contains(&r.node) {
                    unnecessary += 1;
                }
            }
            _ => {}
        }
    }
    unnecessary
}

impl MetricsReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
