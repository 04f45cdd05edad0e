//! Standalone SVG charts of a results table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::LabError;
use crate::results::ResultsTable;

pub const LINE_PLOT_FILE: &str = "att_vs_episode.svg";
pub const BAR_PLOT_FILE: &str = "att_by_run.svg";
/// Episodes averaged for the bar heights.
pub const BAR_TAIL: usize = 10;

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Roughly five round tick values covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if (hi - lo).abs() < 1e-12 {
        let d = if lo.abs() > 1.0 { lo.abs() * 0.1 } else { 1.0 };
        (lo - d, hi + d)
    } else {
        (lo, hi)
    }
}

fn frame(svg: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        (TOP + H - BOTTOM) / 2.0,
        escape(y_label)
    );
    let _ = writeln!(
        svg,
        r#"<g class="axes" stroke="black"><line x1="{LEFT}" y1="{0}" x2="{1}" y2="{0}"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{0}"/></g>"#,
        H - BOTTOM,
        W - RIGHT
    );
}

fn y_axis(svg: &mut String, lo: f64, hi: f64, sy: &dyn Fn(f64) -> f64) {
    for t in ticks(lo, hi) {
        let y = sy(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT - 5.0,
            W - RIGHT,
            LEFT - 8.0,
            y + 4.0,
            t
        );
    }
}

fn legend(svg: &mut String, labels: &[String]) {
    let _ = writeln!(svg, r#"<g class="legend">"#);
    for (i, l) in labels.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * i as f64;
        let x = W - RIGHT + 15.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{x}" y="{}" width="14" height="4" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            y - 2.0,
            COLORS[i % COLORS.len()],
            x + 20.0,
            y + 4.0,
            escape(l)
        );
    }
    let _ = writeln!(svg, "</g>");
}

/// Line chart with one polyline per series.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let (x0, x1) = padded(x0, x1);
    let (y0, y1) = padded(y0.min(0.0), y1 * 1.05);
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let sy = |y: f64| H - BOTTOM - (y - y0) / (y1 - y0) * (H - TOP - BOTTOM);

    let mut svg = String::new();
    frame(&mut svg, title, x_label, y_label);
    for t in ticks(x0, x1) {
        let x = sx(t);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{0}" x2="{x:.2}" y2="{1}" stroke="black"/><text x="{x:.2}" y="{2}" text-anchor="middle">{t}</text>"#,
            H - BOTTOM,
            H - BOTTOM + 5.0,
            H - BOTTOM + 18.0
        );
    }
    y_axis(&mut svg, y0, y1, &sy);
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        if s.points.len() == 1 {
            let (x, y) = s.points[0];
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#, sx(x), sy(y));
        }
    }
    legend(&mut svg, &series.iter().map(|s| s.label.clone()).collect::<Vec<_>>());
    svg.push_str("</svg>\n");
    svg
}

/// Bar chart, one bar per `(label, value)`.
pub fn bar_plot_svg(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let top = bars.iter().map(|b| b.1).fold(0.0f64, f64::max);
    let (y0, y1) = padded(0.0, top * 1.1);
    let sy = |y: f64| H - BOTTOM - (y - y0) / (y1 - y0) * (H - TOP - BOTTOM);
    let mut svg = String::new();
    frame(&mut svg, title, "run", y_label);
    y_axis(&mut svg, y0, y1, &sy);
    let slot = (W - LEFT - RIGHT) / bars.len().max(1) as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = LEFT + slot * (i as f64 + 0.15);
        let y = sy(*v);
        let _ = writeln!(
            svg,
            r#"<rect class="bar" x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"/><text x="{:.2}" y="{:.2}" text-anchor="middle">{:.1}</text><text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            slot * 0.7,
            (H - BOTTOM - y).max(0.0),
            COLORS[i % COLORS.len()],
            x + slot * 0.35,
            y - 4.0,
            v,
            x + slot * 0.35,
            H - BOTTOM + 18.0,
            escape(label)
        );
    }
    legend(&mut svg, &bars.iter().map(|b| b.0.clone()).collect::<Vec<_>>());
    svg.push_str("</svg>\n");
    svg
}

/// ATT series of every run in the table, labelled `run_id (controller)`.
pub fn att_series(table: &ResultsTable) -> Vec<Series> {
    table
        .run_ids()
        .into_iter()
        .map(|id| {
            let rows: Vec<_> = table.run(id).collect();
            Series {
                label: format!("{id} ({})", rows[0].controller),
                points: rows.iter().map(|r| (r.episode as f64, r.att_secs)).collect(),
            }
        })
        .collect()
}

/// Writes the ATT-per-episode chart and, for several runs, the per-run bar chart.
///
/// An empty table writes nothing and returns no paths.
pub fn emit_plots(table: &ResultsTable, out_dir: &Path) -> Result<Vec<PathBuf>, LabError> {
    if table.is_empty() {
        eprintln!("warning: no results rows, skipping plots");
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(out_dir).map_err(|e| LabError::io(out_dir, e))?;
    let mut written = Vec::new();
    let line = line_plot_svg("Average travel time per episode", "episode", "ATT (s)", &att_series(table));
    let path = out_dir.join(LINE_PLOT_FILE);
    std::fs::write(&path, line).map_err(|e| LabError::io(&path, e))?;
    written.push(path);
    let ids = table.run_ids();
    if ids.len() > 1 {
        let bars: Vec<(String, f64)> =
            ids.iter().map(|id| (id.to_string(), table.tail_mean_att(id, BAR_TAIL).unwrap_or(0.0))).collect();
        let svg = bar_plot_svg(&format!("ATT, mean of last {BAR_TAIL} episodes"), "ATT (s)", &bars);
        let path = out_dir.join(BAR_PLOT_FILE);
        std::fs::write(&path, svg).map_err(|e| LabError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::results::ResultRow;

    fn table(runs: &[(&str, &str, usize)]) -> ResultsTable {
        let mut t = ResultsTable::new();
        for (id, ctrl, n) in runs {
            for e in 0..*n {
                t.push(ResultRow {
                    run_id: id.to_string(),
                    episode: e,
                    controller: ctrl.to_string(),
                    seed: 0,
                    att_secs: 200.0 - e as f64,
                    throughput: 1,
                    mean_reward: 0.0,
                    l_recon: None,
                    l_clip: None,
                    wall_secs: 0.0,
                })
                .unwrap();
            }
        }
        t
    }

    fn polylines(svg: &str) -> Vec<usize> {
        svg.lines()
            .filter(|l| l.contains("<polyline"))
            .map(|l| {
                let start = l.find("points=\"").unwrap() + 8;
                let end = start + l[start..].find('"').unwrap();
                l[start..end].split_whitespace().count()
            })
            .collect()
    }

    #[test]
    fn ticks_are_round() {
        assert_eq!(ticks(0.0, 100.0), vec![0.0, 20.0, 40.0, 60.0, 80.0, 100.0]);
        assert_eq!(ticks(0.0, 1.0).len(), 6);
    }

    #[test]
    fn single_row_is_a_point() {
        let svg = line_plot_svg("t", "x", "y", &att_series(&table(&[("a", "fixed", 1)])));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(polylines(&svg), vec![1]);
        assert!(svg.contains("<circle"));
    }

    #[test]
    fn hundred_rows_give_hundred_vertices() {
        let svg = line_plot_svg("t", "x", "y", &att_series(&table(&[("a", "dhlight", 100)])));
        assert_eq!(polylines(&svg), vec![100]);
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn legend_lists_each_run() {
        let svg = line_plot_svg("t", "x", "y", &att_series(&table(&[("f", "fixed", 1), ("m", "maxpressure", 1)])));
        let legend = &svg[svg.find("class=\"legend\"").unwrap()..];
        assert_eq!(legend.matches("<text").count(), 2);
        assert!(legend.contains("f (fixed)") && legend.contains("m (maxpressure)"));
    }

    #[test]
    fn bars_and_escaping() {
        let svg = bar_plot_svg("t", "y", &[("a<b".into(), 10.0), ("c".into(), 20.0)]);
        assert_eq!(svg.matches("class=\"bar\"").count(), 2);
        assert!(svg.contains("a&lt;b"));
    }

    #[test]
    fn emit_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_plots(&ResultsTable::new(), dir.path()).unwrap().is_empty());
        let one = emit_plots(&table(&[("a", "fixed", 3)]), dir.path()).unwrap();
        assert_eq!(one.len(), 1);
        let two = emit_plots(&table(&[("a", "fixed", 3), ("b", "fixed", 2)]), dir.path()).unwrap();
        assert_eq!(two.len(), 2);
        assert!(std::fs::read_to_string(&two[1]).unwrap().contains("class=\"bar\""));
    }
}
