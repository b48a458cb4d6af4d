//! Static SVG charts for ablation reports and training logs.

use std::fmt::Write as _;

use crate::ablation::{AblationReport, MeanStd};
use crate::train::EpochLog;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 90.0;
const PALETTE: [&str; 4] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    )
}

fn y_axis(svg: &mut String, lo: f64, hi: f64) {
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    for i in 0..=4 {
        let v = lo + (hi - lo) * f64::from(i) / 4.0;
        let y = MARGIN_TOP + plot_h * (1.0 - f64::from(i) / 4.0);
        let _ = writeln!(
            svg,
            "<line x1=\"{MARGIN_LEFT}\" x2=\"{}\" y1=\"{y:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>\
             <text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{v:.2}</text>",
            WIDTH - MARGIN_RIGHT,
            MARGIN_LEFT - 6.0,
            y + 4.0
        );
    }
}

type MetricOf = fn(&crate::ablation::ArmSummary) -> MeanStd;

/// Grouped bars (one group per arm, one bar per metric) with ±1 std
/// whiskers.
pub fn ablation_svg(report: &AblationReport) -> String {
    let metrics: [(&str, MetricOf); 3] = [
        ("intent accuracy", |a| a.intent_accuracy),
        ("reason subset accuracy", |a| a.reason_subset_accuracy),
        ("reason macro-F1", |a| a.reason_macro_f1),
    ];
    let mut svg = header(&format!("Ablation over {} seeds", report.seeds.len()));
    y_axis(&mut svg, 0.0, 1.0);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let groups = report.arms.len().max(1) as f64;
    let group_w = plot_w / groups;
    let bar_w = group_w * 0.8 / metrics.len() as f64;
    let y_of = |v: f64| MARGIN_TOP + plot_h * (1.0 - v.clamp(0.0, 1.0));
    for (g, arm) in report.arms.iter().enumerate() {
        let x0 = MARGIN_LEFT + group_w * g as f64 + group_w * 0.1;
        for (m, (_, get)) in metrics.iter().enumerate() {
            let s = get(arm);
            let x = x0 + bar_w * m as f64;
            let top = y_of(s.mean);
            let _ = writeln!(
                svg,
                "<rect x=\"{x:.1}\" y=\"{top:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\"/>",
                bar_w * 0.9,
                MARGIN_TOP + plot_h - top,
                PALETTE[m % PALETTE.len()]
            );
            let cx = x + bar_w * 0.45;
            let _ = writeln!(
                svg,
                "<line x1=\"{cx:.1}\" x2=\"{cx:.1}\" y1=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
                y_of(s.mean - s.std),
                y_of(s.mean + s.std)
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            x0 + group_w * 0.4,
            HEIGHT - MARGIN_BOTTOM + 16.0,
            escape(&arm.arm.label)
        );
    }
    for (m, (name, _)) in metrics.iter().enumerate() {
        let x = MARGIN_LEFT + 170.0 * m as f64;
        let y = HEIGHT - 30.0;
        let _ = writeln!(
            svg,
            "<rect x=\"{x}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{}\"/><text x=\"{}\" y=\"{y}\">{name}</text>",
            y - 10.0,
            PALETTE[m % PALETTE.len()],
            x + 16.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Train and validation loss per epoch.
pub fn training_svg(log: &[EpochLog]) -> String {
    let mut svg = header("Training loss");
    let series: [(&str, Vec<(f64, f64)>); 2] = [
        ("train", log.iter().map(|e| (e.epoch as f64, e.train_loss)).collect()),
        (
            "validation",
            log.iter().filter_map(|e| e.val_loss.map(|v| (e.epoch as f64, v))).collect(),
        ),
    ];
    let all: Vec<f64> = series.iter().flat_map(|(_, s)| s.iter().map(|p| p.1)).collect();
    let hi = all.iter().copied().fold(0.0, f64::max).max(1e-12);
    y_axis(&mut svg, 0.0, hi);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let last_epoch = log.last().map_or(1.0, |e| e.epoch as f64).max(1.0);
    for (i, (name, points)) in series.iter().enumerate() {
        if points.is_empty() {
            continue;
        }
        let path: Vec<String> = points
            .iter()
            .map(|(x, y)| {
                format!(
                    "{:.1},{:.1}",
                    MARGIN_LEFT + plot_w * x / last_epoch,
                    MARGIN_TOP + plot_h * (1.0 - y / hi)
                )
            })
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>",
            PALETTE[i],
            path.join(" ")
        );
        let y = HEIGHT - 30.0;
        let x = MARGIN_LEFT + 120.0 * i as f64;
        let _ = writeln!(
            svg,
            "<rect x=\"{x}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{}\"/><text x=\"{}\" y=\"{y}\">{name}</text>",
            y - 10.0,
            PALETTE[i],
            x + 16.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">epoch (1 to {last_epoch})</text>",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - MARGIN_BOTTOM + 20.0
    );
    svg.push_str("</svg>\n");
    svg
}
