//! CSV and SVG emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::metrics::{AggregateRow, CSV_HEADER};
use crate::record::RunRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportFormat {
    Csv,
    Svg,
}

pub fn emit_report(record: &RunRecord, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    match format {
        ReportFormat::Csv => Ok(vec![emit_csv(record, dir)?]),
        ReportFormat::Svg => emit_svgs(record, dir),
    }
}

pub fn emit_csv(record: &RunRecord, dir: &Path) -> Result<PathBuf> {
    let path = dir.join("metrics.csv");
    write_aggregates_csv(&path, &record.aggregates)?;
    Ok(path)
}

/// Writes the aggregate table. The header row is always present.
pub fn write_aggregates_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| wrap_csv(path, e))?;
    w.write_record(CSV_HEADER).map_err(|e| wrap_csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| wrap_csv(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

pub fn read_aggregates_csv(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| wrap_csv(path, e))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(HarnessError::Config(format!(
            "{}: unexpected header {header:?}",
            path.display()
        )));
    }
    Ok(r.deserialize().collect::<std::result::Result<Vec<AggregateRow>, _>>()?)
}

fn wrap_csv(path: &Path, e: csv::Error) -> HarnessError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => HarnessError::io(path, io),
            other => HarnessError::Config(format!("{other:?}")),
        }
    } else {
        HarnessError::Csv(e)
    }
}

/// Writes one chart per metric (series grouped by weight family), plus the
/// approximation-error and loss curves when present.
pub fn emit_svgs(record: &RunRecord, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let x_label = match record.kind {
        crate::config::ExperimentKind::BaselineSdedit => "start time t0",
        _ => "exponent a",
    };
    let metrics: [(&str, fn(&AggregateRow) -> f64); 3] = [
        ("mse_to_y", |r| r.mse_to_y_mean),
        ("mse_to_coarse", |r| r.mse_to_coarse_mean),
        ("loglik_p0", |r| r.loglik_p0_mean),
    ];
    if record.aggregates.iter().any(|r| r.x.is_some()) {
        for (name, get) in metrics {
            let mut groups: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
            for r in &record.aggregates {
                if let Some(x) = r.x {
                    groups.entry(r.family.as_str()).or_default().push((x, get(r)));
                }
            }
            let series: Vec<Series> = groups
                .into_iter()
                .map(|(k, mut pts)| {
                    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                    Series {
                        name: k.to_string(),
                        points: pts,
                    }
                })
                .collect();
            out.push(write_svg(dir, name, &line_chart(name, x_label, name, &series))?);
        }
    }
    if !record.error_curve.is_empty() {
        let pts = record.error_curve.iter().map(|p| (p.t, p.mean)).collect();
        let chart = line_chart(
            "approximation error",
            "time t",
            "J(t)",
            &[Series {
                name: "mean J".into(),
                points: pts,
            }],
        );
        out.push(write_svg(dir, "error_curve", &chart)?);
    }
    if !record.loss_curve.is_empty() {
        let pts = record.loss_curve.iter().map(|p| (p.step as f64, p.loss)).collect();
        let chart = line_chart(
            "training loss",
            "step",
            "loss",
            &[Series {
                name: "loss".into(),
                points: pts,
            }],
        );
        out.push(write_svg(dir, "loss_curve", &chart)?);
    }
    Ok(out)
}

fn write_svg(dir: &Path, stem: &str, body: &str) -> Result<PathBuf> {
    let path = dir.join(format!("{stem}.svg"));
    fs::write(&path, body).map_err(|e| HarnessError::io(&path, e))?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Minimal SVG line chart. Each distinct x value gets one `xtick` group.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 150.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;

    let finite = |v: &f64| v.is_finite();
    let mut xs: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .filter(finite)
        .collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let ys: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .filter(finite)
        .collect();
    let span = |v: &[f64]| -> (f64, f64) {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = span(&xs);
    let (y0, y1) = span(&ys);
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text class="title" x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<line class="axis" x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        top + ph,
        left + pw,
        top + ph
    );
    let _ = writeln!(
        svg,
        r#"<line class="axis" x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#,
        top + ph
    );
    for &x in &xs {
        let px = sx(x);
        let _ = writeln!(
            svg,
            r#"<g class="xtick"><line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="black"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text></g>"#,
            top + ph,
            top + ph + 5.0,
            top + ph + 18.0,
            tick_label(x)
        );
    }
    for k in 0..=4 {
        let y = y0 + (y1 - y0) * k as f64 / 4.0;
        let py = sy(y);
        let _ = writeln!(
            svg,
            r#"<g class="ytick"><line x1="{}" y1="{py:.2}" x2="{left}" y2="{py:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text></g>"#,
            left - 5.0,
            left - 8.0,
            py + 4.0,
            tick_label(y)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text class="xlabel" x="{}" y="{}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text class="ylabel" x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="series" data-name="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            escape(&s.name),
            pts.join(" ")
        );
        for p in &pts {
            let (cx, cy) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(svg, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
        }
        let ly = top + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<g class="legend"><line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text></g>"#,
            left + pw + 10.0,
            left + pw + 30.0,
            left + pw + 35.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn tick_label(v: f64) -> String {
    if v == v.round() && v.abs() < 1e6 {
        format!("{v:.0}")
    } else if v.abs() >= 1e-2 && v.abs() < 1e4 {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}
