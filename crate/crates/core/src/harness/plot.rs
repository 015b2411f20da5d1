//! Standalone SVG rendering of ROC curves.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::metrics::RocCurve;

const SIZE: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// SVG with unit axes, the chance diagonal, one polyline per curve and a
/// legend giving each curve's AUC to three decimals.
pub fn roc_svg(curves: &[(String, RocCurve)]) -> Result<String> {
    if curves.is_empty() {
        return Err(Error::InvalidArgument("no ROC curves to plot".into()));
    }
    let legend_h = 20.0 * curves.len() as f64;
    let width = SIZE + 2.0 * MARGIN;
    let height = SIZE + 2.0 * MARGIN + legend_h;
    let px = |x: f64| MARGIN + x * SIZE;
    let py = |y: f64| MARGIN + (1.0 - y) * SIZE;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{}" y="{}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#,
        px(0.0),
        py(1.0)
    );
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{t:.1}</text>"#,
            px(t),
            py(0.0) + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{t:.1}</text>"#,
            px(0.0) - 6.0,
            py(t) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">False positive rate</text>"#,
        px(0.5),
        py(0.0) + 34.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">True positive rate</text>"#,
        py(0.5),
        py(0.5)
    );
    let _ = writeln!(
        s,
        r##"<line class="diagonal" x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4 4"/>"##,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    for (i, (name, roc)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = roc
            .points
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        let ly = SIZE + 2.0 * MARGIN + 20.0 * i as f64 + 4.0;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/>"#,
            MARGIN,
            ly - 4.0,
            MARGIN + 20.0,
            ly - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}">{} (AUC {:.3})</text>"#,
            MARGIN + 26.0,
            escape(name),
            roc.area()
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn render_roc_svg(curves: &[(String, RocCurve)], out: &Path) -> Result<()> {
    fsutil::write_atomic(out, roc_svg(curves)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structure() {
        let perfect = RocCurve {
            points: vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)],
            thresholds: vec![f64::INFINITY, 0.9, 0.1],
        };
        let random = RocCurve {
            points: vec![(0.0, 0.0), (0.5, 0.52), (1.0, 1.0)],
            thresholds: vec![f64::INFINITY, 0.5, 0.1],
        };
        let svg = roc_svg(&[("a".into(), perfect.clone()), ("b<c".into(), random)]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("AUC 1.000"));
        assert!(svg.contains("AUC 0.510"));
        assert!(svg.contains("b&lt;c"));
        assert_eq!(roc_svg(&[("a".into(), perfect)]).unwrap().matches("<polyline").count(), 1);
        assert!(roc_svg(&[]).is_err());
    }
}
