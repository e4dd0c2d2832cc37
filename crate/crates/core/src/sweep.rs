//! Batch evaluation: the full uncertainty-combination sweep, reference
//! (unmanaged) runs, per-run artifact output, and the aggregated summary
//! CSV. Runs execute in parallel; every run's seed is a pure function of
//! its position in the sweep, so repeated sweeps are byte-identical.

use crate::injector;
use crate::managing::ControllerRegistry;
use crate::metrics::{compute_report, MetricsReport};
use crate::monitor::Criticality;
use crate::scenario::{InjectionSpec, Scenario};
use crate::sim::run_scenario;
use rayon::prelude::*;
use std::fs;
use std::path::Path;

/// Virtual length of every sweep run.
pub const SWEEP_DURATION_SECS: f64 = 20.0;
/// When the uncertainty bundle hits a managed run (leaves a clean lead-in).
pub const SWEEP_INJECTION_SECS: f64 = 5.0;
/// Reference runs carry their uncertainties from the start.
pub const REFERENCE_INJECTION_SECS: f64 = 0.0;

/// Aggregation group labels for the two unmanaged reference rows.
pub const ROW_NONE_CLEAN: &str = "none-clean";
pub const ROW_NONE_UNCERTAIN: &str = "none-uncertain";

/// One planned simulation run: which summary row it feeds and the complete
/// scenario to execute.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub id: String,
    pub row: String,
    pub scenario: Scenario,
}

/// A finished run: the report, or the failure that prevented one.
pub struct RunOutcome {
    pub id: String,
    pub row: String,
    pub report: Result<MetricsReport, String>,
}

fn base_scenario(id: &str, controller: &str, seed: u64) -> Scenario {
    let mut s = Scenario::default();
    s.name = id.to_string();
    s.controller = controller.to_string();
    s.seed = seed;
    s.duration_secs = SWEEP_DURATION_SECS;
    s
}

/// The two unmanaged reference groups: a clean run per repetition, and one
/// run per WARNING uncertainty per repetition with that uncertainty plus
/// the defocus (OK-level) uncertainty active from the start.
pub fn reference_plans(repetitions: u32) -> Vec<RunPlan> {
    let mut plans = Vec::new();
    for rep in 0..repetitions {
        let id = format!("none-clean-r{rep}");
        let scenario = base_scenario(&id, "none", 1_000_000 + rep as u64);
        plans.push(RunPlan { id, row: ROW_NONE_CLEAN.to_string(), scenario });
    }
    let warnings = injector::ids_with_criticality(Criticality::Warning);
    let ok_ids = injector::ids_with_criticality(Criticality::Ok);
    for rep in 0..repetitions {
        for (w, warning) in warnings.iter().enumerate() {
            let id = format!("none-uncertain-{warning}-r{rep}");
            let mut scenario =
                base_scenario(&id, "none", 2_000_000 + w as u64 * 1_000 + rep as u64);
            scenario.injections = ok_ids
                .iter()
                .chain(std::iter::once(warning))
                .map(|u| InjectionSpec {
                    time: REFERENCE_INJECTION_SECS,
                    uncertainty: u.to_string(),
                })
                .collect();
            plans.push(RunPlan { id, row: ROW_NONE_UNCERTAIN.to_string(), scenario });
        }
    }
    plans
}

/// The full combination sweep for one controller: every ERROR uncertainty x
/// every WARNING uncertainty, with the OK-level defocus always present —
/// one run per combination per repetition, injected mid-run.
pub fn controller_plans(controller: &str, controller_index: u64, repetitions: u32) -> Vec<RunPlan> {
    let errors = injector::ids_with_criticality(Criticality::Error);
    let warnings = injector::ids_with_criticality(Criticality::Warning);
    let ok_ids = injector::ids_with_criticality(Criticality::Ok);
    let mut plans = Vec::new();
    for rep in 0..repetitions {
        for (e, error) in errors.iter().enumerate() {
            for (w, warning) in warnings.iter().enumerate() {
                let combo = (e * warnings.len() + w) as u64;
                let id = format!("{controller}-{error}-{warning}-r{rep}");
                let seed = (3 + controller_index) * 1_000_000 + combo * 1_000 + rep as u64;
                let mut scenario = base_scenario(&id, controller, seed);
                scenario.injections = [*error, *warning]
                    .iter()
                    .chain(ok_ids.iter())
                    .map(|u| InjectionSpec {
                        time: SWEEP_INJECTION_SECS,
                        uncertainty: u.to_string(),
                    })
                    .collect();
                plans.push(RunPlan { id, row: controller.to_string(), scenario });
            }
        }
    }
    plans
}

/// Reference plans plus a combination sweep per listed controller.
pub fn sweep_plans(controllers: &[&str], repetitions: u32) -> Vec<RunPlan> {
    let mut plans = reference_plans(repetitions);
    for (k, controller) in controllers.iter().enumerate() {
        plans.extend(controller_plans(controller, k as u64, repetitions));
    }
    plans
}

/// Executes the plans in parallel. With `out_dir` set, each run writes
/// `runs/<id>/log.jsonl` and `report.json` (or `error.txt` on failure); a
/// failed run is recorded and the sweep continues.
pub fn execute(
    plans: &[RunPlan],
    registry: &ControllerRegistry,
    out_dir: Option<&Path>,
) -> std::io::Result<Vec<RunOutcome>> {
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir.join("runs"))?;
    }
    let outcomes: Vec<(RunOutcome, Option<(String, String)>)> = plans
        .par_iter()
        .map(|plan| {
            let (report, files) = match run_scenario(&plan.scenario, registry) {
                Ok(result) => {
                    let report = compute_report(&result.log, &plan.scenario);
                    let files = (result.log.to_jsonl(), report.to_json_pretty());
                    (Ok(report), Some(files))
                }
                Err(err) => (Err(err), None),
            };
            (RunOutcome { id: plan.id.clone(), row: plan.row.clone(), report }, files)
        })
        .collect();

    let mut results = Vec::with_capacity(outcomes.len());
    for (outcome, files) in outcomes {
        if let Some(dir) = out_dir {
            let run_dir = dir.join("runs").join(&outcome.id);
            fs::create_dir_all(&run_dir)?;
            match (&outcome.report, files) {
                (Ok(_), Some((log_jsonl, report_json))) => {
                    fs::write(run_dir.join("log.jsonl"), log_jsonl)?;
                    fs::write(run_dir.join("report.json"), report_json)?;
                }
                (Err(err), _) => fs::write(run_dir.join("error.txt"), err)?,
                (Ok(_), None) => unreachable!("successful runs always carry artifacts"),
            }
        }
        results.push(outcome);
    }
    Ok(results)
}

/// One aggregated summary row; `None` renders as N/A.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub controller: String,
    pub ratio: Option<(f64, f64)>,
    pub t_react: Option<(f64, f64)>,
    pub redeploys_u: Option<(f64, f64)>,
    pub t_down: Option<(f64, f64)>,
    pub iou: Option<(f64, f64)>,
}

fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Collapses every successful run of one row group into a summary row.
/// Controller metrics stay undefined (N/A) when no run in the group
/// executed an adaptation.
pub fn aggregate(row: &str, outcomes: &[&RunOutcome]) -> SummaryRow {
    let reports: Vec<&MetricsReport> =
        outcomes.iter().filter_map(|o| o.report.as_ref().ok()).collect();
    let any_executed = reports.iter().any(|r| r.adaptations_executed > 0);
    let collect = |f: &dyn Fn(&MetricsReport) -> Option<f64>| -> Vec<f64> {
        reports.iter().filter_map(|r| f(r)).collect()
    };
    SummaryRow {
        controller: row.to_string(),
        ratio: if any_executed { mean_std(&collect(&|r| r.ratio)) } else { None },
        t_react: if any_executed { mean_std(&collect(&|r| r.t_react_mean_secs)) } else { None },
        redeploys_u: if any_executed {
            mean_std(&collect(&|r| Some(r.redeploys_unnecessary as f64)))
        } else {
            None
        },
        t_down: mean_std(&collect(&|r| Some(r.t_down_secs))),
        iou: mean_std(&collect(&|r| r.iou_mean)),
    }
}

/// Groups outcomes by row following the plan order (references first, then
/// controllers in registration order) and aggregates each group.
pub fn summarize(outcomes: &[RunOutcome]) -> Vec<SummaryRow> {
    let mut order: Vec<&str> = Vec::new();
    for o in outcomes {
        if !order.contains(&o.row.as_str()) {
            order.push(&o.row);
        }
    }
    order
        .iter()
        .map(|row| {
            let group: Vec<&RunOutcome> = outcomes.iter().filter(|o| &o.row == row).collect();
            aggregate(row, &group)
        })
        .collect()
}

pub const CSV_HEADER: &str =
    "controller,ratio,ratio_std,t_react,t_react_std,redeploys_u,redeploys_u_std,t_down,t_down_std,iou,iou_std";

fn push_pair(out: &mut String, value: Option<(f64, f64)>) {
    match value {
        Some((mean, std)) => out.push_str(&format!(",{mean:.4},{std:.4}")),
        None => out.push_str(",N/A,N/A"),
    }
}

/// Renders the summary rows as the sweep CSV.
pub fn to_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.controller);
        push_pair(&mut out, row.ratio);
        push_pair(&mut out, row.t_react);
        push_pair(&mut out, row.redeploys_u);
        push_pair(&mut out, row.t_down);
        push_pair(&mut out, row.iou);
        out.push('\n');
    }
    out
}
