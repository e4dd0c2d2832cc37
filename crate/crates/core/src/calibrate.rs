//! Threshold calibration: searches the fused-model temperature over a log
//! grid until the nominal pipeline and every quality degradation sit on
//! opposite sides of the operating thresholds, then emits the committed
//! constants (temperatures, scene noise, sharpness floor) as TOML.
//!
//! Gates: clean-run mean entropy < 0.04 and every entropy-symptom
//! uncertainty at its default magnitude > 0.09 — the 0.06 monitor
//! threshold then separates them with margin on both sides. The sharpness
//! floor is the geometric mean of nominal and defocused sharpness.

use crate::injector;
use crate::managing::ControllerRegistry;
use crate::monitor::Criticality;
use crate::pipeline::model::{TAU_FUSED, TAU_RGB};
use crate::scenario::{InjectionSpec, Scenario};
use crate::scene::SceneSpec;
use crate::sim::run_scenario;
use rayon::prelude::*;

/// Gate: the clean run must stay below this mean entropy.
pub const CLEAN_ENTROPY_MAX: f64 = 0.04;
/// Gate: every entropy-symptom uncertainty must exceed this mean entropy.
pub const UNCERTAIN_ENTROPY_MIN: f64 = 0.09;
/// Virtual length of each probe run.
const PROBE_DURATION_SECS: f64 = 6.0;
/// Probe runs all use this seed; calibration is a one-shot procedure whose
/// output is committed, not a statistical estimate.
const PROBE_SEED: u64 = 0;

/// Entropy measurements for one candidate temperature.
#[derive(Debug, Clone)]
pub struct CalibrationProbe {
    pub tau_fused: f64,
    pub clean_entropy: f64,
    /// Mean entropy per entropy-symptom uncertainty id, catalog order.
    pub uncertainty_entropies: Vec<(String, f64)>,
    pub feasible: bool,
    /// Smaller of the two gate margins (>1 iff feasible); the grid point
    /// with the largest score balances the gates best.
    pub score: f64,
}

/// The chosen constants plus the evidence behind them.
#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub tau_fused: f64,
    pub tau_rgb: f64,
    pub tau_depth: f64,
    pub pixel_noise_sigma: f64,
    pub sharpness_threshold: f64,
    pub sharpness_clean: f64,
    pub sharpness_blurred: f64,
    pub chosen: CalibrationProbe,
    pub probes: Vec<CalibrationProbe>,
}

/// Default temperature grid: log-spaced across a decade around the
/// committed value.
pub fn default_grid() -> Vec<f64> {
    let (lo, hi, n) = (0.002f64, 0.02f64, 13);
    (0..n)
        .map(|i| {
            let f = i as f64 / (n - 1) as f64;
            (lo.ln() + f * (hi.ln() - lo.ln())).exp()
        })
        .collect()
}

fn single_modality_tau(tau_fused: f64) -> f64 {
    tau_fused * (TAU_RGB / TAU_FUSED)
}

fn probe_scenario(name: &str, tau_fused: f64, uncertainty: Option<&str>) -> Scenario {
    let mut s = Scenario::default();
    s.name = name.to_string();
    s.seed = PROBE_SEED;
    s.duration_secs = PROBE_DURATION_SECS;
    s.model.tau_fused = tau_fused;
    s.model.tau_rgb = single_modality_tau(tau_fused);
    s.model.tau_depth = single_modality_tau(tau_fused);
    if let Some(u) = uncertainty {
        s.injections = vec![InjectionSpec { time: 0.0, uncertainty: u.to_string() }];
    }
    s
}

fn mean_detail(
    log: &crate::log::EventLog,
    topic: &str,
    key: &str,
) -> Result<f64, String> {
    let values: Vec<f64> = log
        .records()
        .iter()
        .filter(|r| r.kind == "publish" && r.topic.as_deref() == Some(topic))
        .filter_map(|r| r.detail_f64(key))
        .collect();
    if values.is_empty() {
        return Err(format!("probe run published nothing on {topic}"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

fn probe_entropy(
    registry: &ControllerRegistry,
    tau_fused: f64,
    uncertainty: Option<&str>,
) -> Result<f64, String> {
    let name = format!("calibrate-{}-{}", tau_fused, uncertainty.unwrap_or("clean"));
    let result = run_scenario(&probe_scenario(&name, tau_fused, uncertainty), registry)?;
    mean_detail(&result.log, "/segmentation/output", "entropy")
}

/// Entropy-symptom uncertainty ids (the WARNING class).
fn entropy_uncertainties() -> Vec<&'static str> {
    injector::ids_with_criticality(Criticality::Warning)
}

/// Measures one grid point.
pub fn probe(registry: &ControllerRegistry, tau_fused: f64) -> Result<CalibrationProbe, String> {
    let clean = probe_entropy(registry, tau_fused, None)?;
    let mut uncertainty_entropies = Vec::new();
    for id in entropy_uncertainties() {
        uncertainty_entropies.push((id.to_string(), probe_entropy(registry, tau_fused, Some(id))?));
    }
    let min_u = uncertainty_entropies.iter().map(|(_, e)| *e).fold(f64::INFINITY, f64::min);
    let clean_margin = CLEAN_ENTROPY_MAX / clean;
    let uncertain_margin = min_u / UNCERTAIN_ENTROPY_MIN;
    let score = clean_margin.min(uncertain_margin);
    Ok(CalibrationProbe {
        tau_fused,
        clean_entropy: clean,
        uncertainty_entropies,
        feasible: clean < CLEAN_ENTROPY_MAX && min_u > UNCERTAIN_ENTROPY_MIN,
        score,
    })
}

/// Why calibration produced no constants.
#[derive(Debug)]
pub enum CalibrationError {
    /// A probe run itself failed (not a threshold problem).
    Runtime(String),
    /// Every grid point violated a gate; the probes feed the diagnostic table.
    Infeasible(Vec<CalibrationProbe>),
}

/// Runs the grid search.
pub fn run_calibration(
    registry: &ControllerRegistry,
    grid: &[f64],
) -> Result<CalibrationResult, CalibrationError> {
    let probes: Vec<CalibrationProbe> = grid
        .par_iter()
        .map(|&tau| probe(registry, tau))
        .collect::<Result<_, _>>()
        .map_err(CalibrationError::Runtime)?;

    let best = probes
        .iter()
        .filter(|p| p.feasible)
        .fold(None::<&CalibrationProbe>, |best, p| match best {
            // Strictly-greater keeps the smaller tau on ties (grid is ascending).
            Some(b) if p.score > b.score => Some(p),
            Some(b) => Some(b),
            None => Some(p),
        })
        .cloned();

    let Some(chosen) = best else {
        return Err(CalibrationError::Infeasible(probes));
    };

    // Sharpness split is independent of temperature: one nominal and one
    // defocused probe.
    let clean_run = run_scenario(
        &probe_scenario("calibrate-sharp-clean", chosen.tau_fused, None),
        registry,
    )
    .map_err(CalibrationError::Runtime)?;
    let blur_run = run_scenario(
        &probe_scenario("calibrate-sharp-blur", chosen.tau_fused, Some("U11")),
        registry,
    )
    .map_err(CalibrationError::Runtime)?;
    let sharp_clean = mean_detail(&clean_run.log, "/camera/image", "sharpness")
        .map_err(CalibrationError::Runtime)?;
    let sharp_blur = mean_detail(&blur_run.log, "/camera/image", "sharpness")
        .map_err(CalibrationError::Runtime)?;

    Ok(CalibrationResult {
        tau_fused: chosen.tau_fused,
        tau_rgb: single_modality_tau(chosen.tau_fused),
        tau_depth: single_modality_tau(chosen.tau_fused),
        pixel_noise_sigma: SceneSpec::default().pixel_noise_sigma,
        sharpness_threshold: (sharp_clean * sharp_blur).sqrt(),
        sharpness_clean: sharp_clean,
        sharpness_blurred: sharp_blur,
        chosen,
        probes,
    })
}

impl CalibrationResult {
    /// Constants as a TOML fragment usable in a scenario file.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        out.push_str("# Calibrated pipeline constants.\n");
        out.push_str(&format!(
            "# clean mean entropy {:.6} (gate < {CLEAN_ENTROPY_MAX}), weakest degradation {:.6} (gate > {UNCERTAIN_ENTROPY_MIN}).\n",
            self.chosen.clean_entropy,
            self.chosen
                .uncertainty_entropies
                .iter()
                .map(|(_, e)| *e)
                .fold(f64::INFINITY, f64::min),
        ));
        out.push_str(&format!(
            "# sharpness: nominal {:.6e}, defocused {:.6e}.\n",
            self.sharpness_clean, self.sharpness_blurred
        ));
        out.push_str("\n[model]\n");
        out.push_str(&format!("tau_fused = {}\n", self.tau_fused));
        out.push_str(&format!("tau_rgb = {}\n", self.tau_rgb));
        out.push_str(&format!("tau_depth = {}\n", self.tau_depth));
        out.push_str("\n[scene]\n");
        out.push_str(&format!("pixel_noise_sigma = {}\n", self.pixel_noise_sigma));
        out.push_str("\n[thresholds]\n");
        out.push_str(&format!("sharpness_min = {}\n", self.sharpness_threshold));
        out
    }

    /// Human-readable margin report.
    pub fn margin_report(&self) -> String {
        let mut out = format!(
            "calibrated tau_fused = {} (clean {:.4} < {CLEAN_ENTROPY_MAX}; gates met)\n",
            self.tau_fused, self.chosen.clean_entropy
        );
        for (id, e) in &self.chosen.uncertainty_entropies {
            out.push_str(&format!(
                "  {id}: mean entropy {e:.4} (x{:.2} above {UNCERTAIN_ENTROPY_MIN})\n",
                e / UNCERTAIN_ENTROPY_MIN
            ));
        }
        out.push_str(&format!(
            "  sharpness floor {:.6e} (nominal {:.3e} / defocused {:.3e})\n",
            self.sharpness_threshold, self.sharpness_clean, self.sharpness_blurred
        ));
        out
    }
}

/// Table of every probed temperature, printed when calibration fails.
pub fn diagnostic_table(probes: &[CalibrationProbe]) -> String {
    let mut out = String::from("tau_fused   clean     weakest   feasible\n");
    for p in probes {
        let min_u =
            p.uncertainty_entropies.iter().map(|(_, e)| *e).fold(f64::INFINITY, f64::min);
        out.push_str(&format!(
            "{:<11.6} {:<9.4} {:<9.4} {}\n",
            p.tau_fused,
            p.clean_entropy,
            min_u,
            if p.feasible { "yes" } else { "no" }
        ));
    }
    out
}
