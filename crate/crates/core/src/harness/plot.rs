//! MSE-versus-multiplier chart: a CSV of points plus a standalone SVG.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::FeatureSet;
use super::report::{fmt_metric, ExperimentReport};
use super::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub series: FeatureSet,
    pub x: f64,
    pub mse: f64,
}

fn color(s: FeatureSet) -> &'static str {
    match s {
        FeatureSet::Baseline => "#1f77b4",
        FeatureSet::Smooth => "#d62728",
        FeatureSet::Slang => "#2ca02c",
        FeatureSet::SmoothSlang => "#ff7f0e",
    }
}

/// Rows sharing the report's first K, radius and classifier, grouped by
/// feature set and ordered by multiplier.
pub fn plot_points(report: &ExperimentReport) -> Result<Vec<PlotPoint>, HarnessError> {
    let first = report.rows.first().ok_or_else(|| HarnessError::data("plot", "report has no rows"))?;
    let mut series: Vec<FeatureSet> = Vec::new();
    for r in &report.rows {
        if !series.contains(&r.feature_set) {
            series.push(r.feature_set);
        }
    }
    let mut out = Vec::new();
    for s in series {
        let mut pts: Vec<PlotPoint> = report
            .rows
            .iter()
            .filter(|r| r.feature_set == s && r.k == first.k && r.radius_km == first.radius_km && r.classifier == first.classifier)
            .map(|r| PlotPoint { series: s, x: r.multiplier, mse: r.mse })
            .collect();
        pts.sort_by(|a, b| a.x.total_cmp(&b.x));
        out.extend(pts);
    }
    Ok(out)
}

pub fn points_csv(points: &[PlotPoint]) -> String {
    let mut s = String::from("series,x,mse\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.series, p.x, fmt_metric(p.mse));
    }
    s
}

pub fn render_svg(points: &[PlotPoint]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const L: f64 = 70.0;
    const R: f64 = 150.0;
    const T: f64 = 30.0;
    const B: f64 = 50.0;
    let (mut x0, mut x1) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.x), b.max(p.x)));
    let (mut y0, mut y1) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.mse), b.max(p.mse)));
    if x1 - x0 <= 0.0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 <= 0.0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let px = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let py = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<line x1="{L}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - B, W - R, H - B);
    let _ = writeln!(s, r#"<line x1="{L}" y1="{T}" x2="{L}" y2="{}" stroke="black"/>"#, H - B);
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{:.2}</text>"#, px(fx), H - B + 18.0, fx);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3}</text>"#, L - 6.0, py(fy) + 4.0, fy);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">multiplier</text>"#, (L + W - R) / 2.0, H - 10.0);
    let _ = writeln!(s, r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">MSE</text>"#, (T + H - B) / 2.0, (T + H - B) / 2.0);

    let mut series: Vec<FeatureSet> = Vec::new();
    for p in points {
        if !series.contains(&p.series) {
            series.push(p.series);
        }
    }
    for (i, &ser) in series.iter().enumerate() {
        let c = color(ser);
        let pts: Vec<&PlotPoint> = points.iter().filter(|p| p.series == ser).collect();
        if pts.len() > 1 {
            let path: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", px(p.x), py(p.mse))).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#, path.join(" "));
        }
        for p in &pts {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#, px(p.x), py(p.mse));
        }
        let ly = T + 10.0 + 18.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{c}" stroke-width="2"/>"#, W - R + 15.0, W - R + 35.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{ser}</text>"#, W - R + 40.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `plot.csv` and `plot.svg` into `dir`.
pub fn emit_plot(report: &ExperimentReport, dir: &Path) -> Result<(PathBuf, PathBuf), HarnessError> {
    let points = plot_points(report)?;
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.to_path_buf(), source })?;
    let csv_path = dir.join("plot.csv");
    let svg_path = dir.join("plot.svg");
    for (path, body) in [(&csv_path, points_csv(&points)), (&svg_path, render_svg(&points))] {
        std::fs::write(path, body).map_err(|source| HarnessError::Io { path: path.clone(), source })?;
    }
    Ok((csv_path, svg_path))
}
