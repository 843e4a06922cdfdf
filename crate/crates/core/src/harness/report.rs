use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::curve::LearningCurve;
use super::experiment::EvalReport;
use crate::{Error, Result};

pub const REPORT_CSV_HEADER: &str = "method,depth,delta1,delta2,dim,accuracy,p_value,seed";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Usage(format!("unknown report format {other:?}"))),
        }
    }
}

fn opt(v: Option<usize>) -> String {
    v.map_or_else(|| "-".to_owned(), |v| v.to_string())
}

/// One row per report. Floats use the shortest representation that parses
/// back to the same value; absent architecture fields are written as `-`.
pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.method,
            opt(r.depth),
            opt(r.delta1),
            opt(r.delta2),
            r.feature_dim,
            r.accuracy,
            r.p_value,
            r.seed
        );
    }
    out
}

pub fn reports_to_json(reports: &[EvalReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)?)
}

pub fn curve_to_csv(curve: &LearningCurve) -> String {
    let mut out = String::from("train_size,train_error,test_error\n");
    for p in &curve.points {
        let _ = writeln!(out, "{},{},{}", p.train_size, p.train_error, p.test_error);
    }
    out
}

const SVG_WIDTH: f64 = 640.0;
const SVG_HEIGHT: f64 = 400.0;
const SVG_MARGIN: f64 = 50.0;

/// Line plot of train and test error against training-set size.
pub fn curve_to_svg(curve: &LearningCurve) -> String {
    let max_size = curve.points.iter().map(|p| p.train_size).max().unwrap_or(1).max(1) as f64;
    let plot_w = SVG_WIDTH - 2.0 * SVG_MARGIN;
    let plot_h = SVG_HEIGHT - 2.0 * SVG_MARGIN;
    let x = |size: usize| SVG_MARGIN + plot_w * size as f64 / max_size;
    let y = |err: f64| SVG_MARGIN + plot_h * (1.0 - err);
    let series = |pick: fn(&super::curve::CurvePoint) -> f64| {
        curve
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", x(p.train_size), y(pick(p))))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, y0, x1, y1) = (SVG_MARGIN, SVG_MARGIN + plot_h, SVG_MARGIN + plot_w, SVG_MARGIN);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">training samples</text>"#,
        SVG_MARGIN + plot_w / 2.0,
        SVG_HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" font-size="12" transform="rotate(-90 14 {})" text-anchor="middle">error</text>"#,
        SVG_MARGIN + plot_h / 2.0,
        SVG_MARGIN + plot_h / 2.0
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">0</text>"#, x0 - 4.0, y0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">1</text>"#, x0 - 4.0, y1 + 4.0);
    let _ = writeln!(
        svg,
        r#"<text x="{x1}" y="{}" font-size="10" text-anchor="end">{max_size}</text>"#,
        y0 + 14.0
    );
    let _ = writeln!(
        svg,
        r#"<polyline id="train" fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
        series(|p| p.train_error)
    );
    let _ = writeln!(
        svg,
        r#"<polyline id="test" fill="none" stroke="firebrick" stroke-width="2" points="{}"/>"#,
        series(|p| p.test_error)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" fill="steelblue">train error</text>"#,
        x1 - 90.0,
        y1 + 14.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" fill="firebrick">test error</text>"#,
        x1 - 90.0,
        y1 + 30.0
    );
    svg.push_str("</svg>\n");
    svg
}

/// Write `reports` to `out` and, when given, a learning-curve plot.
pub fn emit_report(
    reports: &[EvalReport],
    format: ReportFormat,
    out: impl AsRef<Path>,
    plot: Option<(&LearningCurve, &Path)>,
) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::contract("no reports to emit"));
    }
    let body = match format {
        ReportFormat::Csv => reports_to_csv(reports),
        ReportFormat::Json => reports_to_json(reports)?,
    };
    std::fs::write(out, body)?;
    if let Some((curve, path)) = plot {
        std::fs::write(path, curve_to_svg(curve))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{CurvePoint, Method};

    fn report(method: Method, accuracy: f64) -> EvalReport {
        EvalReport {
            method,
            depth: (method == Method::Cnn).then_some(2),
            delta1: (method == Method::Cnn).then_some(16),
            delta2: (method == Method::Cnn).then_some(4),
            feature_dim: 1024,
            accuracy,
            p_value: 1.0 / 3.0,
            chance: 0.1,
            n_correct: 1,
            n_test: 3,
            confusion: vec![vec![1, 0], vec![2, 0]],
            seed: 42,
        }
    }

    #[test]
    fn single_report_csv() {
        let csv = reports_to_csv(&[report(Method::Raw, 0.1)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], REPORT_CSV_HEADER);
        assert!(lines[1].starts_with("raw,-,-,-,1024,"));
    }

    #[test]
    fn csv_floats_round_trip() {
        let acc = 0.123_456_789_012_345_67;
        let csv = reports_to_csv(&[report(Method::Cnn, acc)]);
        let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[..5], ["cnn", "2", "16", "4", "1024"]);
        assert_eq!(row[5].parse::<f64>().unwrap(), acc);
        assert_eq!(row[6].parse::<f64>().unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn json_carries_confusion() {
        let json = reports_to_json(&[report(Method::Hrf, 0.5)]).unwrap();
        let parsed: Vec<EvalReport> = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed[0], report(Method::Hrf, 0.5));
    }

    #[test]
    fn svg_has_two_polylines_of_n_vertices() {
        let curve = LearningCurve {
            points: (1..=5)
                .map(|i| CurvePoint {
                    train_size: 20 * i,
                    train_error: 0.0,
                    test_error: 1.0 / i as f64,
                })
                .collect(),
            step: 20,
        };
        let svg = curve_to_svg(&curve);
        let polylines: Vec<&str> = svg.lines().filter(|l| l.starts_with("<polyline")).collect();
        assert_eq!(polylines.len(), 2);
        for line in polylines {
            let points = line.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
            assert_eq!(points.split(' ').count(), 5);
        }
    }

    #[test]
    fn emit_rejects_empty_and_bad_paths() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(&[], ReportFormat::Csv, dir.path().join("r.csv"), None).is_err());
        let missing = dir.path().join("no/such/dir/r.csv");
        assert!(matches!(
            emit_report(&[report(Method::Raw, 0.1)], ReportFormat::Csv, missing, None),
            Err(Error::Io(_))
        ));
    }
}
