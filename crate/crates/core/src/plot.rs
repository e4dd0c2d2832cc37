//! Minimal SVG plotting: renders a run log's segmentation-entropy trace
//! over virtual time, with the monitor's entropy threshold and the
//! injection instants marked. No external renderer — the chart is plain
//! SVG assembled by hand, so artifacts stay self-contained.

use crate::log::EventLog;
use crate::pipeline::nodes::TOPIC_SEGMENTATION;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 46.0;

/// (time, entropy) samples from every segmentation publish in the log.
pub fn entropy_series(log: &EventLog) -> Vec<(f64, f64)> {
    log.records()
        .iter()
        .filter(|r| r.kind == "publish" && r.topic.as_deref() == Some(TOPIC_SEGMENTATION))
        .filter_map(|r| Some((r.t.as_secs_f64(), r.detail_f64("entropy")?)))
        .collect()
}

/// Applied injections as (time, uncertainty id).
fn injections(log: &EventLog) -> Vec<(f64, String)> {
    log.records()
        .iter()
        .filter(|r| r.kind == "injection")
        .filter(|r| r.detail_str("outcome") == Some("applied"))
        .filter_map(|r| Some((r.t.as_secs_f64(), r.detail_str("id")?.to_string())))
        .collect()
}

fn run_duration(log: &EventLog) -> Option<f64> {
    log.records()
        .iter()
        .find(|r| r.kind == "run_end")
        .map(|r| r.t.as_secs_f64())
        .or_else(|| log.records().last().map(|r| r.t.as_secs_f64()))
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// Renders the chart. `threshold` draws a horizontal reference line
/// (normally the monitor's entropy maximum).
pub fn entropy_svg(log: &EventLog, title: &str, threshold: f64) -> String {
    let series = entropy_series(log);
    let t_max = run_duration(log).unwrap_or(1.0).max(1e-9);
    let e_max = series
        .iter()
        .map(|(_, e)| *e)
        .fold(threshold * 1.5, f64::max)
        * 1.1;

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x = |t: f64| MARGIN_LEFT + t / t_max * plot_w;
    let y = |e: f64| MARGIN_TOP + (1.0 - e / e_max) * plot_h;

    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    svg.push('\n');
    svg.push_str(&format!(
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    ));
    svg.push('\n');
    svg.push_str(&format!(
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        xml_escape(title)
    ));
    svg.push('\n');

    // Axes.
    svg.push_str(&format!(
        r#"<line x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{l}" y1="{t}" x2="{l}" y2="{b}" stroke="black"/>"#,
        l = MARGIN_LEFT,
        r = WIDTH - MARGIN_RIGHT,
        t = MARGIN_TOP,
        b = HEIGHT - MARGIN_BOTTOM,
    ));
    svg.push('\n');

    // Ticks: five on each axis.
    for i in 0..=5 {
        let tv = t_max * i as f64 / 5.0;
        let ev = e_max * i as f64 / 5.0;
        svg.push_str(&format!(
            r#"<line x1="{x0}" y1="{b}" x2="{x0}" y2="{b2}" stroke="black"/><text x="{x0}" y="{ty}" font-family="sans-serif" font-size="11" text-anchor="middle">{tl}</text>"#,
            x0 = x(tv),
            b = HEIGHT - MARGIN_BOTTOM,
            b2 = HEIGHT - MARGIN_BOTTOM + 5.0,
            ty = HEIGHT - MARGIN_BOTTOM + 18.0,
            tl = fmt(tv),
        ));
        svg.push_str(&format!(
            r#"<line x1="{l2}" y1="{y0}" x2="{l}" y2="{y0}" stroke="black"/><text x="{tx}" y="{y1}" font-family="sans-serif" font-size="11" text-anchor="end">{el}</text>"#,
            l = MARGIN_LEFT,
            l2 = MARGIN_LEFT - 5.0,
            y0 = y(ev),
            y1 = y(ev) + 4.0,
            tx = MARGIN_LEFT - 8.0,
            el = format!("{ev:.3}"),
        ));
        svg.push('\n');
    }

    // Axis labels.
    svg.push_str(&format!(
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">virtual time [s]</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 8.0
    ));
    svg.push_str(&format!(
        r#"<text x="14" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">mean entropy</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    ));
    svg.push('\n');

    // Threshold reference.
    svg.push_str(&format!(
        r##"<line x1="{l}" y1="{y0}" x2="{r}" y2="{y0}" stroke="#c02020" stroke-dasharray="6,4"/><text x="{r}" y="{y1}" font-family="sans-serif" font-size="11" text-anchor="end" fill="#c02020">threshold {th}</text>"##,
        l = MARGIN_LEFT,
        r = WIDTH - MARGIN_RIGHT,
        y0 = y(threshold),
        y1 = y(threshold) - 4.0,
        th = threshold,
    ));
    svg.push('\n');

    // Injection markers.
    for (t, id) in injections(log) {
        svg.push_str(&format!(
            r##"<line x1="{x0}" y1="{t0}" x2="{x0}" y2="{b}" stroke="#2050c0" stroke-dasharray="2,3"/><text x="{x0}" y="{t1}" font-family="sans-serif" font-size="10" text-anchor="middle" fill="#2050c0">{id}</text>"##,
            x0 = x(t),
            t0 = MARGIN_TOP,
            b = HEIGHT - MARGIN_BOTTOM,
            t1 = MARGIN_TOP - 4.0,
        ));
        svg.push('\n');
    }

    // The entropy trace itself.
    if series.is_empty() {
        svg.push_str(&format!(
            r##"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" fill="#808080">no segmentation output</text>"##,
            MARGIN_LEFT + plot_w / 2.0,
            MARGIN_TOP + plot_h / 2.0
        ));
    } else {
        let points: Vec<String> =
            series.iter().map(|(t, e)| format!("{:.2},{:.2}", x(*t), y(*e))).collect();
        svg.push_str(&format!(
            r##"<polyline points="{}" fill="none" stroke="#107030" stroke-width="1.5"/>"##,
            points.join(" ")
        ));
    }
    svg.push('\n');
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::managing::ControllerRegistry;
    use crate::scenario::{InjectionSpec, Scenario};
    use crate::sim::run_scenario;

    fn sample_log() -> EventLog {
        let mut scenario = Scenario::default();
        scenario.name = "plot-test".to_string();
        scenario.duration_secs = 3.0;
        scenario.injections =
            vec![InjectionSpec { time: 1.0, uncertainty: "U07".to_string() }];
        let registry = ControllerRegistry::with_builtins();
        run_scenario(&scenario, &registry).expect("run").log
    }

    #[test]
    fn chart_contains_trace_marker_and_labels() {
        let log = sample_log();
        let svg = entropy_svg(&log, "plot-test", 0.06);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("U07"), "injection marker");
        assert!(svg.contains("threshold 0.06"));
        assert!(svg.contains("virtual time [s]"));
    }

    #[test]
    fn series_reflects_the_injection_step() {
        let log = sample_log();
        let series = entropy_series(&log);
        assert!(!series.is_empty());
        let before: Vec<f64> =
            series.iter().filter(|(t, _)| *t < 1.0).map(|(_, e)| *e).collect();
        let after: Vec<f64> =
            series.iter().filter(|(t, _)| *t > 1.5).map(|(_, e)| *e).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&after) > mean(&before) * 5.0, "entropy step visible");
    }

    #[test]
    fn empty_log_renders_a_placeholder() {
        let svg = entropy_svg(&EventLog::new(), "empty", 0.06);
        assert!(svg.contains("no segmentation output"));
        assert!(!svg.contains("<polyline"));
    }

    #[test]
    fn titles_are_escaped() {
        let svg = entropy_svg(&EventLog::new(), "a<b&c>d", 0.06);
        assert!(svg.contains("a&lt;b&amp;c&gt;d"));
    }
}
