//! Deterministic plain-text reporting.
//!
//! Every number funnels through [`fmt_sig`] so the same inputs always
//! produce byte-identical report text, regardless of thread count or
//! locale. Tables use fixed-width columns with left-aligned labels and
//! right-aligned values.

use crate::metrics::QualityReport;

/// Width of each numeric column in rendered tables.
const VALUE_WIDTH: usize = 12;

/// Format with five significant digits.
///
/// Zero renders as `0.0000`; very large or very small magnitudes switch to
/// scientific notation; NaN and infinities pass through as `NaN` / `inf`.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        return "NaN".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if x == 0.0 {
        return "0.0000".to_string();
    }
    let mag = x.abs();
    if !(1e-3..1e5).contains(&mag) {
        return format!("{x:.4e}");
    }
    let decimals = (4 - mag.log10().floor() as i32).clamp(0, 10) as usize;
    format!("{x:.decimals$}")
}

/// `fmt_sig` for optional values; absent metrics render as `n/a`.
pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_sig).unwrap_or_else(|| "n/a".to_string())
}

fn render_table(header: &[&str], rows: &[(String, Vec<Option<f64>>)]) -> String {
    let label_width = rows
        .iter()
        .map(|(label, _)| label.len())
        .chain(std::iter::once("method".len()))
        .max()
        .unwrap_or(6);
    let mut out = String::new();
    out.push_str(&format!("{:<label_width$}", "method"));
    for h in header {
        out.push_str(&format!("  {h:>VALUE_WIDTH$}"));
    }
    out.push('\n');
    for (label, values) in rows {
        out.push_str(&format!("{label:<label_width$}"));
        for v in values {
            out.push_str(&format!("  {:>VALUE_WIDTH$}", fmt_opt(*v)));
        }
        out.push('\n');
    }
    out
}

/// Table of reduced-resolution scores, one row per labeled report.
pub fn reduced_table(rows: &[(String, QualityReport)]) -> String {
    let body: Vec<(String, Vec<Option<f64>>)> = rows
        .iter()
        .map(|(label, r)| (label.clone(), vec![r.uiqi, r.sam_deg, r.ergas]))
        .collect();
    render_table(&["UIQI", "SAM_deg", "ERGAS"], &body)
}

/// Table of full-resolution scores, one row per labeled report.
pub fn full_table(rows: &[(String, QualityReport)]) -> String {
    let body: Vec<(String, Vec<Option<f64>>)> = rows
        .iter()
        .map(|(label, r)| (label.clone(), vec![r.d_lambda_k, r.d_s_star, r.q_star]))
        .collect();
    render_table(&["D_lambda", "D_s", "Q*"], &body)
}

/// Section divider used throughout report text.
pub fn section(title: &str) -> String {
    format!("== {title} ==\n")
}
