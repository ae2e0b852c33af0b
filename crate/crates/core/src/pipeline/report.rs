//! Report emission: JSON (source of truth), CSV summary and SVG curves.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::metrics::{recall_curve, SummaryRow, SummaryTable};

use super::run::RunReport;
use super::PipelineError;

pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CURVES_FILE: &str = "curves.svg";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Svg,
}

pub const ALL_FORMATS: [Format; 3] = [Format::Json, Format::Csv, Format::Svg];

/// C `%.{digits}g` formatting; infinities print as `inf`/`-inf`.
pub fn format_g(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let p = digits.max(1);
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let strip = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -4 || exp >= p as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip(mantissa), exp.abs())
    } else {
        strip(&format!("{:.*}", (p as i32 - 1 - exp) as usize, x))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn csv_header(table: &SummaryTable) -> Vec<String> {
    let c = &table.config;
    let mut cols = vec!["method".to_string()];
    cols.extend(c.precision_thresholds_px.iter().map(|t| format!("mPrec@{t}px")));
    cols.extend(c.auc_rotation_deg.iter().map(|t| format!("AUC@{t}deg")));
    cols.extend(c.auc_translation_m.iter().map(|t| format!("AUC@{t}m")));
    for s in ["mAA", "mInl", "mInlPct", "medErr", "mKpts", "mMatches", "time_s_per_pair"] {
        cols.push(s.into());
    }
    cols
}

/// Numeric values of a row, in [`csv_header`] order after `method`.
pub fn row_values(row: &SummaryRow) -> Vec<f64> {
    let mut v: Vec<f64> = row.mean_precision.0.iter().map(|(_, x)| *x).collect();
    v.extend(row.auc_rotation.0.iter().map(|(_, x)| *x));
    v.extend(row.auc_translation.0.iter().map(|(_, x)| *x));
    v.extend([
        row.maa,
        row.mean_inliers,
        row.mean_inlier_pct,
        row.median_rot_err_deg,
        row.mean_keypoints,
        row.mean_matches,
        row.mean_runtime_s,
    ]);
    v
}

/// One row per method with values at 6 significant digits.
pub fn summary_csv(table: &SummaryTable) -> String {
    let mut out = csv_header(table).join(",");
    out.push('\n');
    for row in &table.rows {
        let mut fields = vec![csv_field(&row.method)];
        fields.extend(row_values(row).iter().map(|v| format_g(*v, 6)));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn svg_panel(svg: &mut String, y0: f64, title: &str, unit: &str, thresholds: &[f64], curves: &[(String, Vec<f64>)]) {
    let (x0, w, h) = (60.0, 520.0, 220.0);
    let xmax = 2.0 * thresholds.iter().copied().fold(0.0, f64::max);
    let xmax = if xmax > 0.0 { xmax } else { 1.0 };
    let px = |e: f64| x0 + w * e.min(xmax) / xmax;
    let py = |r: f64| y0 + h * (1.0 - r);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="14">{title}</text>"#, x0, y0 - 8.0);
    let _ = writeln!(
        svg,
        r##"<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#000"/>"##
    );
    for t in thresholds {
        let x = px(*t);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{}" stroke="#888" stroke-dasharray="4 3"/><text x="{x:.2}" y="{}" font-size="11" text-anchor="middle">{}{unit}</text>"##,
            y0 + h,
            y0 + h + 14.0,
            format_g(*t, 6)
        );
    }
    for r in [0.25, 0.5, 0.75] {
        let _ = writeln!(
            svg,
            r##"<line x1="{x0}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="#ddd"/>"##,
            py(r),
            x0 + w,
            py(r)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="end">1</text>"#,
        x0 - 4.0,
        y0 + 4.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="end">0</text>"#,
        x0 - 4.0,
        y0 + h
    );
    for (i, (method, errors)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = recall_curve(errors, xmax)
            .iter()
            .map(|(e, r)| format!("{:.2},{:.2}", px(*e), py(*r)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = y0 + 16.0 + 14.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" font-size="11" fill="{color}">{}</text>"#,
            x0 + w - 150.0,
            xml_escape(method)
        );
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Error–recall curves per method for rotation and translation error, with
/// dashed gridlines at the AUC thresholds.
pub fn curves_svg(report: &RunReport) -> String {
    let methods: Vec<&str> = report.summary.rows.iter().map(|r| r.method.as_str()).collect();
    let errors = |f: &dyn Fn(&crate::metrics::PairResult) -> f64| -> Vec<(String, Vec<f64>)> {
        methods
            .iter()
            .map(|m| {
                let e = report
                    .pairs
                    .iter()
                    .filter(|p| p.method == *m)
                    .map(|p| if p.failure { f64::INFINITY } else { f(p) })
                    .collect();
                (m.to_string(), e)
            })
            .collect()
    };
    let mut svg = String::from(r#"<svg xmlns="http://www.w3.org/2000/svg" width="640" height="600" font-family="sans-serif">"#);
    svg.push('\n');
    let cfg = &report.summary.config;
    svg_panel(
        &mut svg,
        40.0,
        "Recall vs rotation error",
        "°",
        &cfg.auc_rotation_deg,
        &errors(&|p| p.rot_err_deg),
    );
    svg_panel(
        &mut svg,
        330.0,
        "Recall vs translation error",
        " m",
        &cfg.auc_translation_m,
        &errors(&|p| p.trans_err_m),
    );
    svg.push_str("</svg>\n");
    svg
}

// Temp files are created 0600; reports are meant to be shared.
#[cfg(unix)]
fn publish_permissions(f: &std::fs::File) -> std::io::Result<()> {
    use std::os::unix::fs::PermissionsExt;
    f.set_permissions(std::fs::Permissions::from_mode(0o644))
}

#[cfg(not(unix))]
fn publish_permissions(_: &std::fs::File) -> std::io::Result<()> {
    Ok(())
}

/// Write the requested formats into `dir`. All files are first written to
/// temporaries in `dir` and only renamed into place once every one of them
/// succeeded.
pub fn emit_report(report: &RunReport, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::Runtime(format!("creating {}: {e}", dir.display())))?;
    let mut staged = Vec::new();
    for f in formats {
        let (name, body) = match f {
            Format::Json => (REPORT_FILE, report.to_json()),
            Format::Csv => (SUMMARY_FILE, summary_csv(&report.summary)),
            Format::Svg => (CURVES_FILE, curves_svg(report)),
        };
        let mut tmp = NamedTempFile::new_in(dir).map_err(|e| PipelineError::Runtime(format!("writing to {}: {e}", dir.display())))?;
        tmp.write_all(body.as_bytes())
            .and_then(|_| tmp.flush())
            .and_then(|_| publish_permissions(tmp.as_file()))
            .map_err(|e| PipelineError::Runtime(format!("writing {name}: {e}")))?;
        staged.push((tmp, dir.join(name)));
    }
    let mut written = Vec::new();
    for (tmp, target) in staged {
        tmp.persist(&target)
            .map_err(|e| PipelineError::Runtime(format!("renaming into {}: {}", target.display(), e.error)))?;
        written.push(target);
    }
    Ok(written)
}

/// Header and `(method, values)` rows of a parsed summary CSV.
pub type ParsedCsv = (Vec<String>, Vec<(String, Vec<f64>)>);

pub fn parse_summary_csv(text: &str) -> Result<ParsedCsv, PipelineError> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| PipelineError::validation("empty CSV"))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let (method, rest) = if let Some(stripped) = line.strip_prefix('"') {
            let end = stripped
                .match_indices('"')
                .map(|(j, _)| j)
                .find(|&j| !stripped[j + 1..].starts_with('"') && !stripped[..j].ends_with('"'))
                .ok_or_else(|| PipelineError::validation(format!("line {}: unterminated quote", i + 2)))?;
            (stripped[..end].replace("\"\"", "\""), &stripped[end + 1..])
        } else {
            let (m, r) = line.split_once(',').unwrap_or((line, ""));
            (m.to_string(), r)
        };
        let values = rest
            .trim_start_matches(',')
            .split(',')
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| PipelineError::validation(format!("line {}: bad number {v:?}", i + 2)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((method, values));
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_g_matches_c() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (0.5, "0.5"),
            (2.0 / 9.0, "0.222222"),
            (123456.0, "123456"),
            (1234567.0, "1.23457e+06"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (999999.5, "1e+06"),
            (-1.23456789, "-1.23457"),
            (100.0, "100"),
            (f64::INFINITY, "inf"),
            (1e-300, "1e-300"),
        ];
        for (x, want) in cases {
            assert_eq!(format_g(x, 6), want, "{x}");
        }
    }

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
    }
}
