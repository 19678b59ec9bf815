//! Hand-written SVG charts built from aggregate rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::warn;
use ticket_core::pruning::sparsity_label;

use crate::aggregate::AggregateRow;
use crate::error::CliError;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    /// Half-length of the error bar; `None` draws no bar.
    pub err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarGroup {
    pub label: String,
    /// (series label, value, error)
    pub bars: Vec<(String, f64, Option<f64>)>,
}

/// Tick positions at 1, 2 or 5 × 10^k spacing covering `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let w = WIDTH - LEFT - RIGHT;
        LEFT + if self.x1 > self.x0 {
            (x - self.x0) / (self.x1 - self.x0) * w
        } else {
            w / 2.0
        }
    }

    fn py(&self, y: f64) -> f64 {
        let h = HEIGHT - TOP - BOTTOM;
        HEIGHT
            - BOTTOM
            - if self.y1 > self.y0 {
                (y - self.y0) / (self.y1 - self.y0) * h
            } else {
                h / 2.0
            }
    }
}

fn header(svg: &mut String, title: &str) {
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        (WIDTH - RIGHT + LEFT) / 2.0,
        escape(title)
    );
}

fn axes(svg: &mut String, f: &Frame, x_label: &str, y_label: &str, x_ticks: &[(f64, String)]) {
    let (l, r, t, b) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        svg,
        "<g stroke=\"#333\" fill=\"none\"><path d=\"M{l} {t}V{b}H{r}\"/></g>"
    );
    for y in nice_ticks(f.y0, f.y1, 5) {
        let py = f.py(y);
        let _ = writeln!(
            svg,
            "<line x1=\"{l}\" x2=\"{r}\" y1=\"{py:.2}\" y2=\"{py:.2}\" stroke=\"#ddd\"/><text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            l - 6.0,
            py + 4.0,
            fmt_tick(y)
        );
    }
    for (x, label) in x_ticks {
        let px = f.px(*x);
        let _ = writeln!(
            svg,
            "<line x1=\"{px:.2}\" x2=\"{px:.2}\" y1=\"{b}\" y2=\"{:.2}\" stroke=\"#333\"/><text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            b + 5.0,
            b + 18.0,
            escape(label)
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
        (l + r) / 2.0,
        HEIGHT - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        "<text transform=\"translate(18 {:.2}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
        (t + b) / 2.0,
        escape(y_label)
    );
}

fn legend(svg: &mut String, labels: &[&str]) {
    let x = WIDTH - RIGHT + 15.0;
    for (i, label) in labels.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let c = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            svg,
            "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"12\" height=\"12\" fill=\"{c}\"/><text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
            y - 10.0,
            x + 18.0,
            y,
            escape(label)
        );
    }
}

fn y_range(values: impl Iterator<Item = (f64, f64)>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (a, b) in values {
        lo = lo.min(a);
        hi = hi.max(b);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad, hi + pad)
}

/// One polyline per series, with error bars where `err` is set.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let pts = || series.iter().flat_map(|s| &s.points);
    let x0 = pts().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let x1 = pts().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let (y0, y1) = y_range(pts().map(|p| {
        let e = p.err.unwrap_or(0.0);
        (p.y - e, p.y + e)
    }));
    let (x0, x1) = if x0.is_finite() { (x0, x1) } else { (0.0, 1.0) };
    let f = Frame { x0, x1, y0, y1 };

    let mut svg = String::new();
    header(&mut svg, title);
    let xt: Vec<(f64, String)> = nice_ticks(x0, x1, 6).into_iter().map(|x| (x, fmt_tick(x))).collect();
    axes(&mut svg, &f, x_label, y_label, &xt);
    for (i, s) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", f.px(p.x), f.py(p.y)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{c}\" stroke-width=\"1.5\" points=\"{}\"/>",
            path.join(" ")
        );
        for p in &s.points {
            let (px, py) = (f.px(p.x), f.py(p.y));
            let _ = writeln!(svg, "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"2.5\" fill=\"{c}\"/>");
            if let Some(e) = p.err {
                let (top, bot) = (f.py(p.y + e), f.py(p.y - e));
                let _ = writeln!(
                    svg,
                    "<path class=\"errorbar\" stroke=\"{c}\" d=\"M{px:.2} {top:.2}V{bot:.2}M{:.2} {top:.2}H{:.2}M{:.2} {bot:.2}H{:.2}\"/>",
                    px - 3.0,
                    px + 3.0,
                    px - 3.0,
                    px + 3.0
                );
            }
        }
    }
    let labels: Vec<&str> = series.iter().map(|s| s.label.as_str()).collect();
    legend(&mut svg, &labels);
    svg.push_str("</svg>\n");
    svg
}

/// Grouped bars; every group shows the same series in the same order.
pub fn bar_chart(title: &str, x_label: &str, y_label: &str, groups: &[BarGroup]) -> String {
    let mut series_labels: Vec<&str> = Vec::new();
    for g in groups {
        for (l, _, _) in &g.bars {
            if !series_labels.contains(&l.as_str()) {
                series_labels.push(l);
            }
        }
    }
    let (_, y1) = y_range(
        groups
            .iter()
            .flat_map(|g| g.bars.iter().map(|(_, v, e)| (0.0, v + e.unwrap_or(0.0)))),
    );
    let f = Frame {
        x0: 0.0,
        x1: groups.len() as f64,
        y0: 0.0,
        y1,
    };
    let mut svg = String::new();
    header(&mut svg, title);
    let xt: Vec<(f64, String)> = groups
        .iter()
        .enumerate()
        .map(|(i, g)| (i as f64 + 0.5, g.label.clone()))
        .collect();
    axes(&mut svg, &f, x_label, y_label, &xt);
    let slot = (f.px(1.0) - f.px(0.0)) * 0.8 / series_labels.len().max(1) as f64;
    for (gi, g) in groups.iter().enumerate() {
        for (label, v, e) in &g.bars {
            let si = series_labels.iter().position(|l| l == label).unwrap_or(0);
            let x = f.px(gi as f64 + 0.1) + si as f64 * slot;
            let (top, base) = (f.py(*v), f.py(0.0));
            let c = PALETTE[si % PALETTE.len()];
            let _ = writeln!(
                svg,
                "<rect x=\"{x:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{c}\"/>",
                slot * 0.9,
                base - top
            );
            if let Some(e) = e {
                let cx = x + slot * 0.45;
                let _ = writeln!(
                    svg,
                    "<path class=\"errorbar\" stroke=\"#000\" d=\"M{cx:.2} {:.2}V{:.2}\"/>",
                    f.py(v + e),
                    f.py(v - e)
                );
            }
        }
    }
    legend(&mut svg, &series_labels);
    svg.push_str("</svg>\n");
    svg
}

fn err_of(r: &AggregateRow, scale: f64) -> Option<f64> {
    (r.n > 1).then_some(r.std * scale)
}

type CellKey = (String, String, String, String);

fn cell_key(r: &AggregateRow) -> CellKey {
    (
        r.dataset.clone(),
        r.strategy.clone(),
        r.train_mode.clone(),
        r.attack.clone(),
    )
}

/// Curves of `metric` on the test split, one series per round.
fn curves(rows: &[&AggregateRow], metric: &str, scale: f64) -> Vec<Series> {
    let mut by_round: BTreeMap<usize, Series> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.split == "test" && r.metric == metric) {
        let s = by_round.entry(r.round).or_insert_with(|| Series {
            label: format!("P_m {}%", sparsity_label(r.sparsity_pct / 100.0)),
            points: Vec::new(),
        });
        s.points.push(Point {
            x: r.iteration.unwrap_or(0) as f64,
            y: r.mean * scale,
            err: err_of(r, scale),
        });
    }
    let mut out: Vec<Series> = by_round.into_values().collect();
    for s in &mut out {
        s.points.sort_by(|a, b| a.x.total_cmp(&b.x));
    }
    out
}

fn write_svg(dir: &Path, name: &str, svg: &str, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let p = dir.join(name);
    std::fs::write(&p, svg).map_err(|e| CliError::io(&p, e))?;
    written.push(p);
    Ok(())
}

/// Accuracy and loss curves per cell, and early-stop bars per strategy.
pub fn render_plots(
    metrics: &[AggregateRow],
    early: &[AggregateRow],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    if metrics.is_empty() && early.is_empty() {
        return Err(CliError::Empty("no aggregate rows; nothing to plot".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut written = Vec::new();

    let mut cells: BTreeMap<CellKey, Vec<&AggregateRow>> = BTreeMap::new();
    for r in metrics {
        cells.entry(cell_key(r)).or_default().push(r);
    }
    let charts = [
        ("accuracy", "natural_acc", "natural test accuracy (%)", 100.0),
        ("accuracy", "adv_acc", "adversarial test accuracy (%)", 100.0),
        ("loss", "natural_loss", "natural test loss", 1.0),
        ("loss", "adv_loss", "adversarial test loss", 1.0),
    ];
    for ((dataset, strategy, mode, attack), rows) in &cells {
        for (kind, metric, y_label, scale) in charts {
            let series = curves(rows, metric, scale);
            if series.is_empty() {
                warn!("{dataset}/{strategy}/{mode}/{attack}: no test series for {metric}, plot skipped");
                continue;
            }
            let title = format!("{dataset} {strategy}, {mode} training, {attack}");
            let svg = line_chart(&title, "training iteration", y_label, &series);
            let name = format!("{kind}_{dataset}_{strategy}_{mode}_{attack}_{metric}.svg");
            write_svg(out_dir, &name, &svg, &mut written)?;
        }
    }

    let mut strategies: BTreeMap<(String, String), BTreeMap<usize, BarGroup>> = BTreeMap::new();
    for r in early
        .iter()
        .filter(|r| r.split == "test" && r.metric == "early_stop_iteration")
    {
        let groups = strategies.entry((r.dataset.clone(), r.strategy.clone())).or_default();
        let g = groups.entry(r.round).or_insert_with(|| BarGroup {
            label: sparsity_label(r.sparsity_pct / 100.0),
            bars: Vec::new(),
        });
        g.bars
            .push((format!("{} {}", r.train_mode, r.attack), r.mean, err_of(r, 1.0)));
    }
    for ((dataset, strategy), groups) in strategies {
        let groups: Vec<BarGroup> = groups.into_values().collect();
        let svg = bar_chart(
            &format!("{dataset} {strategy}: early-stopping iteration"),
            "P_m (%)",
            "iteration",
            &groups,
        );
        write_svg(
            out_dir,
            &format!("early_stop_{dataset}_{strategy}.svg"),
            &svg,
            &mut written,
        )?;
    }
    if written.is_empty() {
        return Err(CliError::Empty("no plottable series".into()));
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agg(round: usize, iteration: usize, mean: f64, std: f64, n: usize) -> AggregateRow {
        AggregateRow {
            dataset: "digits".into(),
            strategy: "original".into(),
            train_mode: "natural".into(),
            attack: "fgsm".into(),
            round,
            sparsity_pct: if round == 0 { 100.0 } else { 51.3 },
            iteration: Some(iteration),
            split: "test".into(),
            metric: "natural_acc".into(),
            mean,
            std,
            n,
        }
    }

    #[test]
    fn ticks_are_round_numbers() {
        assert_eq!(
            nice_ticks(0.0, 1.0, 5),
            vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]
        );
        assert_eq!(
            nice_ticks(500.0, 5000.0, 6),
            vec![1000.0, 2000.0, 3000.0, 4000.0, 5000.0]
        );
        assert_eq!(fmt_tick(0.6000000000000001), "0.6");
    }

    #[test]
    fn empty_aggregate_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("plots");
        assert!(matches!(render_plots(&[], &[], &out), Err(CliError::Empty(_))));
        assert!(!out.exists());
    }

    #[test]
    fn single_trial_series_has_no_error_bars() {
        let rows = vec![agg(0, 500, 0.9, 0.0, 1), agg(0, 1000, 0.95, 0.0, 1)];
        let dir = tempfile::tempdir().unwrap();
        let files = render_plots(&rows, &[], dir.path()).unwrap();
        assert_eq!(files.len(), 1);
        let svg = std::fs::read_to_string(&files[0]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(!svg.contains("errorbar"));
    }

    #[test]
    fn error_bars_span_the_std() {
        let rows = [agg(0, 500, 0.9, 0.02, 5), agg(0, 1000, 0.95, 0.01, 5)];
        let series = curves(&rows.iter().collect::<Vec<_>>(), "natural_acc", 100.0);
        assert_eq!(series[0].points[0].err, Some(2.0));
        let svg = line_chart("t", "x", "y", &series);
        assert_eq!(svg.matches("errorbar").count(), 2);
    }

    #[test]
    fn output_is_deterministic() {
        let rows = [agg(0, 500, 0.9, 0.02, 5), agg(1, 500, 0.8, 0.01, 5)];
        let a = line_chart(
            "t",
            "x",
            "y",
            &curves(&rows.iter().collect::<Vec<_>>(), "natural_acc", 100.0),
        );
        let b = line_chart(
            "t",
            "x",
            "y",
            &curves(&rows.iter().collect::<Vec<_>>(), "natural_acc", 100.0),
        );
        assert_eq!(a, b);
        assert_eq!(a.matches("<polyline").count(), 2);
    }

    #[test]
    fn bars_render() {
        let groups = vec![BarGroup {
            label: "100.0".into(),
            bars: vec![
                ("natural fgsm".into(), 3000.0, Some(100.0)),
                ("adversarial fgsm".into(), 4000.0, None),
            ],
        }];
        let svg = bar_chart("t", "x", "y", &groups);
        assert_eq!(svg.matches("<rect x=").count(), 2 + 2);
    }
}
