//! Deterministic SVG plots of time/voltage curves (seconds vs millivolts).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::curve::DischargeCurve;
use crate::error::{Error, Result};

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 540.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 200.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 60.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x), hi.max(x))
    });
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

pub fn render_svg(curves: &[DischargeCurve]) -> Result<String> {
    if curves.is_empty() || curves.iter().any(|c| c.is_empty()) {
        return Err(Error::Degenerate("plot needs at least one non-empty curve".into()));
    }
    let (t0, t1) = range(curves.iter().flat_map(|c| c.times()));
    let (v0, v1) = range(curves.iter().flat_map(|c| c.voltages().map(|v| v * 1000.0)));
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let x = |t: f64| MARGIN_L + (t - t0) / (t1 - t0) * pw;
    let y = |mv: f64| MARGIN_T + (1.0 - (mv - v0) / (v1 - v0)) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=5 {
        let f = k as f64 / 5.0;
        let tv = t0 + f * (t1 - t0);
        let mv = v0 + f * (v1 - v0);
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{tv:.0}</text>"#,
            x(tv),
            HEIGHT - MARGIN_B + 18.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{mv:.1}</text>"#,
            MARGIN_L - 6.0,
            y(mv) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">time [s]</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">voltage [mV]</text>"#,
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0
    );

    for (k, c) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut pts = String::new();
        for s in c.samples() {
            let _ = write!(pts, "{:.2},{:.2} ", x(s.t), y(s.v * 1000.0));
        }
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#,
            pts.trim_end()
        );
        let label = c
            .meta
            .label
            .clone()
            .unwrap_or_else(|| legend_from_meta(c, k));
        let ly = MARGIN_T + 14.0 + 18.0 * k as f64;
        let lx = WIDTH - MARGIN_R + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
            ly - 4.0,
            lx + 20.0,
            ly - 4.0
        );
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, lx + 26.0, escape(&label));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn legend_from_meta(c: &DischargeCurve, k: usize) -> String {
    let m = &c.meta;
    let mut parts = Vec::new();
    if let Some(l) = m.load {
        parts.push(format!("L={l}"));
    }
    if let Some(p) = m.period {
        parts.push(format!("p={p}s"));
    }
    if let Some(d) = m.duty {
        parts.push(format!("d={d}"));
    }
    if let Some(t) = m.temperature {
        parts.push(format!("T={t}C"));
    }
    if parts.is_empty() {
        format!("curve {}", k + 1)
    } else {
        parts.join(" ")
    }
}

pub fn emit_plot(curves: &[DischargeCurve], path: impl AsRef<Path>) -> Result<()> {
    let svg = render_svg(curves)?;
    fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::CurveMeta;

    fn curve() -> DischargeCurve {
        DischargeCurve::from_tv((0..100).map(|k| (k as f64, 1.3 - 0.002 * k as f64)))
            .unwrap()
            .with_meta(CurveMeta {
                label: Some("a <b>".into()),
                ..CurveMeta::default()
            })
    }

    #[test]
    fn one_polyline_per_curve() {
        let svg = render_svg(&[curve()]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("a &lt;b&gt;"));
        let svg = render_svg(&[curve(), curve()]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn deterministic_files() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.svg"), dir.path().join("b.svg"));
        emit_plot(&[curve()], &a).unwrap();
        emit_plot(&[curve()], &b).unwrap();
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }

    #[test]
    fn empty_list_is_rejected() {
        assert!(matches!(render_svg(&[]), Err(Error::Degenerate(_))));
    }
}
