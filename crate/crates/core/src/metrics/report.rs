//! Report and curve serialization.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::metrics::confusion::MetricsReport;
use crate::metrics::roc::RocCurve;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Full-precision JSON; parses back to the identical report.
    Json,
    /// Fixed-width table at 4 significant digits.
    Table,
}

/// `x` rounded to 4 significant digits.
pub fn sig4(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (3 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn report_to_json(r: &MetricsReport) -> String {
    serde_json::to_string_pretty(r).expect("plain struct") + "\n"
}

pub fn parse_report(text: &str) -> Result<MetricsReport> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        what: "metrics report".into(),
        detail: e.to_string(),
    })
}

pub fn report_table(r: &MetricsReport, class_names: &[String]) -> String {
    let mut s = String::new();
    let head = ["accuracy", "sensitivity", "specificity", "precision", "recall", "f1"];
    let vals = [r.accuracy, r.sensitivity, r.specificity, r.precision, r.recall, r.f1];
    for h in head {
        let _ = write!(s, "{h:>12}");
    }
    s.push('\n');
    for v in vals {
        let _ = write!(s, "{:>12}", sig4(v));
    }
    s.push_str("\n\n");
    let _ = writeln!(s, "{:<24}{:>12}{:>12}{:>12}{:>10}", "class", "precision", "recall", "f1", "support");
    for (c, m) in r.per_class.iter().enumerate() {
        let name = class_names.get(c).cloned().unwrap_or_else(|| format!("class_{c}"));
        let _ = writeln!(
            s,
            "{name:<24}{:>12}{:>12}{:>12}{:>10}",
            sig4(m.precision),
            sig4(m.recall),
            sig4(m.f1),
            m.support
        );
    }
    s
}

pub fn emit_report(r: &MetricsReport, format: ReportFormat, class_names: &[String]) -> Vec<u8> {
    match format {
        ReportFormat::Json => report_to_json(r).into_bytes(),
        ReportFormat::Table => report_table(r, class_names).into_bytes(),
    }
}

/// `fpr,tpr` header then one row per curve point.
pub fn emit_roc(curve: &RocCurve) -> Vec<u8> {
    let mut s = String::from("fpr,tpr\n");
    for (x, y) in curve.fpr.iter().zip(&curve.tpr) {
        let _ = writeln!(s, "{x},{y}");
    }
    s.into_bytes()
}

/// The curve as a single SVG polyline on a unit square.
pub fn emit_roc_svg(curve: &RocCurve) -> Vec<u8> {
    const SIZE: f64 = 400.0;
    let points: Vec<String> = curve
        .fpr
        .iter()
        .zip(&curve.tpr)
        .map(|(x, y)| format!("{:.2},{:.2}", x * SIZE, (1.0 - y) * SIZE))
        .collect();
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n\
         <title>ROC (AUC {})</title>\n\
         <polyline fill=\"none\" stroke=\"black\" stroke-width=\"2\" points=\"{}\"/>\n\
         </svg>\n",
        sig4(curve.auc),
        points.join(" ")
    )
    .into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{confusion, metrics_from_confusion, roc_binary};

    #[test]
    fn significant_digits() {
        assert_eq!(sig4(0.833333), "0.8333");
        assert_eq!(sig4(1.0), "1.000");
        assert_eq!(sig4(0.0512345), "0.05123");
        assert_eq!(sig4(520.0), "520.0");
        assert_eq!(sig4(0.0), "0");
    }

    #[test]
    fn json_round_trip_and_schema() {
        let cm = confusion(&[0, 0, 0, 0, 1, 1], &[0, 0, 0, 1, 1, 1], 2).unwrap();
        let r = metrics_from_confusion(&cm).unwrap();
        let text = report_to_json(&r);
        assert_eq!(parse_report(&text).unwrap(), r);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(keys, ["accuracy", "f1", "per_class", "precision", "recall", "sensitivity", "specificity"]);
        assert!(report_table(&r, &[]).contains("0.8333"));
    }

    #[test]
    fn roc_csv_endpoints() {
        let c = roc_binary(&[0.9, 0.4, 0.35, 0.8], &[true, false, true, false], 1).unwrap();
        let csv = String::from_utf8(emit_roc(&c)).unwrap();
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows[0], "fpr,tpr");
        assert_eq!(rows[1], "0,0");
        assert_eq!(*rows.last().unwrap(), "1,1");
        let svg = String::from_utf8(emit_roc_svg(&c)).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
    }
}
