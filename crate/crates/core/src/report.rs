//! Two-sided estimate reports and their CSV / SVG renderings.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::{LabError, Result};
use crate::logspace::LogScalar;

/// A named nonnegative term of one side of an inequality.
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub name: String,
    pub value: LogScalar,
}

impl Term {
    pub fn new(name: impl Into<String>, value: LogScalar) -> Self {
        Term {
            name: name.into(),
            value,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ReportParams {
    pub s: f64,
    pub lambda: f64,
    pub dim: usize,
    pub n: usize,
    pub steps: usize,
}

/// Both sides of one inequality, term by term.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateReport {
    pub label: String,
    pub lhs: Vec<Term>,
    pub rhs: Vec<Term>,
    pub lhs_total: LogScalar,
    pub rhs_total: LogScalar,
    /// `lhs_total / rhs_total`, 0 when both vanish; may underflow to 0.
    pub ratio: f64,
    /// `ln(lhs_total / rhs_total)`; finite whenever the ratio is.
    pub ln_ratio: f64,
    pub params: ReportParams,
}

impl EstimateReport {
    pub fn new(
        label: impl Into<String>,
        lhs: Vec<Term>,
        rhs: Vec<Term>,
        params: ReportParams,
    ) -> Self {
        let lhs_total = LogScalar::sum(lhs.iter().map(|t| t.value));
        let rhs_total = LogScalar::sum(rhs.iter().map(|t| t.value));
        let ln_ratio = lhs_total.ln_ratio(&rhs_total);
        EstimateReport {
            label: label.into(),
            lhs,
            rhs,
            lhs_total,
            rhs_total,
            ratio: ln_ratio.exp(),
            ln_ratio,
            params,
        }
    }

    pub fn term(&self, name: &str) -> Option<LogScalar> {
        self.lhs
            .iter()
            .chain(&self.rhs)
            .find(|t| t.name == name)
            .map(|t| t.value)
    }

    /// Ratio is finite (0/0 counts as finite).
    pub fn ratio_is_finite(&self) -> bool {
        self.ln_ratio != f64::INFINITY && !self.ln_ratio.is_nan()
    }

    pub fn is_zero(&self) -> bool {
        self.lhs_total.is_zero() && self.rhs_total.is_zero()
    }

    fn term_names(&self) -> Vec<&str> {
        self.lhs
            .iter()
            .chain(&self.rhs)
            .map(|t| t.name.as_str())
            .collect()
    }
}

/// `{:.16e}` keeps 17 significant digits.
pub fn fmt_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// One row per report, every term as a value column plus its logarithm.
pub fn write_reports_csv<W: Write>(rows: &[(String, &EstimateReport)], mut out: W) -> Result<()> {
    let Some((_, first)) = rows.first() else {
        return Err(LabError::Precondition("no reports to emit".into()));
    };
    let names = first.term_names();
    let mut header = String::from("id,label,s,lambda");
    for name in &names {
        let _ = write!(header, ",{name},ln_{name}");
    }
    header.push_str(",lhs_total,rhs_total,ratio,ln_ratio");
    writeln!(out, "{header}")?;
    for (id, r) in rows {
        if r.term_names() != names {
            return Err(LabError::Precondition(format!(
                "report {id} has a different term layout"
            )));
        }
        let mut line = format!(
            "{id},{},{},{}",
            r.label,
            fmt_value(r.params.s),
            fmt_value(r.params.lambda)
        );
        for t in r.lhs.iter().chain(&r.rhs) {
            let _ = write!(
                line,
                ",{},{}",
                fmt_value(t.value.value()),
                fmt_value(t.value.ln())
            );
        }
        let _ = write!(
            line,
            ",{},{},{},{}",
            fmt_value(r.lhs_total.value()),
            fmt_value(r.rhs_total.value()),
            fmt_value(r.ratio),
            fmt_value(r.ln_ratio)
        );
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Long form `test_id,s,lambda,term_name,value,ln_value`, totals and ratio included.
pub fn write_terms_csv<W: Write>(rows: &[(String, &EstimateReport)], mut out: W) -> Result<()> {
    if rows.is_empty() {
        return Err(LabError::Precondition("no reports to emit".into()));
    }
    writeln!(out, "test_id,s,lambda,term_name,value,ln_value")?;
    for (id, r) in rows {
        let (s, l) = (fmt_value(r.params.s), fmt_value(r.params.lambda));
        let extra = [("lhs_total", r.lhs_total), ("rhs_total", r.rhs_total)];
        for (name, v) in r
            .lhs
            .iter()
            .chain(&r.rhs)
            .map(|t| (t.name.as_str(), t.value))
            .chain(extra)
        {
            writeln!(
                out,
                "{id},{s},{l},{name},{},{}",
                fmt_value(v.value()),
                fmt_value(v.ln())
            )?;
        }
        writeln!(
            out,
            "{id},{s},{l},ratio,{},{}",
            fmt_value(r.ratio),
            fmt_value(r.ln_ratio)
        )?;
    }
    Ok(())
}

/// Rows `part,term,value,ln_value`.
pub fn write_parts_csv<W: Write>(parts: &[(&str, &EstimateReport)], mut out: W) -> Result<()> {
    if parts.is_empty() {
        return Err(LabError::Precondition("no reports to emit".into()));
    }
    writeln!(out, "part,term,value,ln_value")?;
    for (part, r) in parts {
        for t in r.lhs.iter().chain(&r.rhs) {
            writeln!(
                out,
                "{part},{},{},{}",
                t.name,
                fmt_value(t.value.value()),
                fmt_value(t.value.ln())
            )?;
        }
        for (name, v) in [("lhs_total", r.lhs_total), ("rhs_total", r.rhs_total)] {
            writeln!(
                out,
                "{part},{name},{},{}",
                fmt_value(v.value()),
                fmt_value(v.ln())
            )?;
        }
        writeln!(
            out,
            "{part},ratio,{},{}",
            fmt_value(r.ratio),
            fmt_value(r.ln_ratio)
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Axes {
    pub log_x: bool,
    pub log_y: bool,
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// Standalone SVG line plot, one polyline per series. Points with a
/// non-finite coordinate (after the log transform) are dropped.
pub fn svg_line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    axes: Axes,
) -> Result<String> {
    if series.is_empty() {
        return Err(LabError::Precondition("plot has no series".into()));
    }
    let tx = |v: f64| if axes.log_x { v.log10() } else { v };
    let ty = |v: f64| if axes.log_y { v.log10() } else { v };
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .map(|&(x, y)| (tx(x), ty(y)))
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .collect()
        })
        .collect();
    let all = pts.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let (w, h, m) = (640.0, 420.0, 60.0);
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    let lx = if axes.log_x {
        format!("log10 {x_label}")
    } else {
        x_label.to_string()
    };
    let ly = if axes.log_y {
        format!("log10 {y_label}")
    } else {
        y_label.to_string()
    };
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        w / 2.0,
        h - 15.0,
        escape(&lx)
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(&ly)
    );
    for (v, anchor_x, anchor_y) in [(x0, px(x0), h - m + 16.0), (x1, px(x1), h - m + 16.0)] {
        let _ = writeln!(
            svg,
            r#"<text x="{anchor_x}" y="{anchor_y}" text-anchor="middle" font-family="sans-serif" font-size="10">{v:.3}</text>"#
        );
    }
    for (v, anchor_y) in [(y0, py(y0)), (y1, py(y1))] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{anchor_y}" text-anchor="end" font-family="sans-serif" font-size="10">{v:.3}</text>"#,
            m - 4.0
        );
    }
    for (k, (s, p)) in series.iter().zip(&pts).enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let coords: Vec<String> = p
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
            w - m + 4.0,
            m + 14.0 * k as f64,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(ratio_ln: f64) -> EstimateReport {
        EstimateReport::new(
            "demo",
            vec![Term::new("a", LogScalar::new(-100.0, ratio_ln))],
            vec![Term::new("b", LogScalar::new(-100.0, 0.0))],
            ReportParams {
                s: 2.0,
                lambda: 1.0,
                ..Default::default()
            },
        )
    }

    #[test]
    fn ratio_conventions() {
        let z = EstimateReport::new(
            "z",
            vec![Term::new("a", LogScalar::ZERO)],
            vec![Term::new("b", LogScalar::ZERO)],
            ReportParams::default(),
        );
        assert_eq!(z.ratio, 0.0);
        assert!(z.ratio_is_finite() && z.is_zero());
        let r = sample(1.0);
        assert!((r.ratio - 1f64.exp()).abs() < 1e-15);
        assert_eq!(r.term("b"), Some(LogScalar::new(-100.0, 0.0)));
    }

    #[test]
    fn single_report_is_one_row() {
        let r = sample(0.5);
        let mut buf = Vec::new();
        write_reports_csv(&[("0".into(), &r)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "id,label,s,lambda,a,ln_a,b,ln_b,lhs_total,rhs_total,ratio,ln_ratio"
        );
        assert_eq!(lines[1].split(',').count(), 12);
    }

    #[test]
    fn empty_report_list_is_rejected() {
        assert!(write_reports_csv(&[], Vec::new()).is_err());
        assert!(write_terms_csv(&[], Vec::new()).is_err());
        assert!(write_parts_csv(&[], Vec::new()).is_err());
    }

    #[test]
    fn svg_polyline_has_one_point_per_report() {
        let points: Vec<(f64, f64)> = (1..=12).map(|k| (k as f64, (k * k) as f64)).collect();
        let svg = svg_line_plot(
            "ratio",
            "s",
            "ratio",
            &[Series {
                name: "max".into(),
                points,
            }],
            Axes {
                log_x: true,
                log_y: true,
            },
        )
        .unwrap();
        let poly = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        let inner = poly
            .split("points=\"")
            .nth(1)
            .unwrap()
            .trim_end_matches("\"/>");
        assert_eq!(inner.split(' ').count(), 12);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}
