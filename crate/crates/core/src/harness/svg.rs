//! Minimal deterministic SVG line charts.
//!
//! One polyline per series (a lone point gets only a marker), ±2 s.e. error
//! bars, a legend, and linear or logarithmic axes. All coordinates are
//! printed with fixed precision, so equal inputs give byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use super::RiskCurve;
use crate::error::{Error, Result};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    /// `(x, y, std_err)`.
    pub points: Vec<(f64, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotStyle {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub width: f64,
    pub height: f64,
    /// Explicit x tick positions; defaults to the distinct x values.
    pub x_ticks: Option<Vec<f64>>,
}

impl Default for PlotStyle {
    fn default() -> Self {
        PlotStyle {
            title: String::new(),
            x_label: "k".into(),
            y_label: "metric".into(),
            log_x: true,
            log_y: true,
            width: 720.0,
            height: 460.0,
            x_ticks: None,
        }
    }
}

/// Series for every `(predictor, rho)` key of the curve, x = k.
pub fn series_from_curve(curve: &RiskCurve) -> Vec<Series> {
    curve
        .series_keys()
        .into_iter()
        .map(|(p, rho)| Series {
            label: if rho.is_nan() {
                p.clone()
            } else {
                format!("{p} (rho={rho})")
            },
            points: curve
                .series(&p, rho)
                .iter()
                .map(|r| (r.k as f64, r.metric, r.std_err))
                .collect(),
        })
        .collect()
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn map(&self, v: f64) -> f64 {
        let (a, b, v) = if self.log {
            (self.lo.log10(), self.hi.log10(), v.max(self.lo).log10())
        } else {
            (self.lo, self.hi, v)
        };
        let t = if b > a { (v - a) / (b - a) } else { 0.5 };
        self.px_lo + t.clamp(0.0, 1.0) * (self.px_hi - self.px_lo)
    }
}

fn usable(v: f64, log: bool) -> bool {
    v.is_finite() && (!log || v > 0.0)
}

fn range(values: impl Iterator<Item = f64>, log: bool) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| usable(*v, log)) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return None;
    }
    if lo == hi {
        if log {
            lo /= 2.0;
            hi *= 2.0;
        } else {
            let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.5 };
            lo -= pad;
            hi += pad;
        }
    }
    Some((lo, hi))
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.0e}")
    } else if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn y_ticks(lo: f64, hi: f64, log: bool) -> Vec<f64> {
    if log {
        let (a, b) = (lo.log10().floor() as i32, hi.log10().ceil() as i32);
        let stride = ((b - a) / 6 + 1).max(1);
        (a..=b)
            .step_by(stride as usize)
            .map(|e| 10f64.powi(e))
            .filter(|v| *v >= lo * (1.0 - 1e-12) && *v <= hi * (1.0 + 1e-12))
            .collect()
    } else {
        let raw = (hi - lo) / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|s| *s >= raw)
            .unwrap_or(10.0 * mag);
        let start = (lo / step).ceil() as i64;
        let end = (hi / step).floor() as i64;
        (start..=end).map(|i| i as f64 * step).collect()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Renders the series as an SVG document.
pub fn render_svg(series: &[Series], style: &PlotStyle) -> Result<String> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    let pts = || series.iter().flat_map(|s| s.points.iter());
    let (x_lo, x_hi) = range(pts().map(|p| p.0), style.log_x)
        .ok_or_else(|| Error::InvalidArgument("no plottable x values".into()))?;
    let band = |p: &(f64, f64, f64), sign: f64| {
        if p.2.is_finite() {
            p.1 + sign * 2.0 * p.2
        } else {
            p.1
        }
    };
    let (y_lo, y_hi) = range(
        pts().flat_map(|p| [p.1, band(p, -1.0), band(p, 1.0)]),
        style.log_y,
    )
    .ok_or_else(|| Error::InvalidArgument("no plottable y values".into()))?;

    let (w, h) = (style.width, style.height);
    let (left, right, top, bottom) = (80.0, w - 200.0, 40.0, h - 60.0);
    let xa = Axis {
        lo: x_lo,
        hi: x_hi,
        log: style.log_x,
        px_lo: left,
        px_hi: right,
    };
    let ya = Axis {
        lo: y_lo,
        hi: y_hi,
        log: style.log_y,
        px_lo: bottom,
        px_hi: top,
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{w:.0}" height="{h:.0}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        (left + right) / 2.0,
        escape(&style.title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{left:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        right - left,
        bottom - top
    );

    let x_ticks: Vec<f64> = match &style.x_ticks {
        Some(t) => t.clone(),
        None => {
            let mut xs: Vec<f64> = pts()
                .map(|p| p.0)
                .filter(|v| usable(*v, style.log_x))
                .collect();
            xs.sort_by(f64::total_cmp);
            xs.dedup();
            xs
        }
    };
    for t in x_ticks
        .iter()
        .filter(|t| usable(**t, style.log_x) && **t >= x_lo && **t <= x_hi)
    {
        let x = xa.map(*t);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{bottom:.2}" x2="{x:.2}" y2="{:.2}" stroke="#888"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            bottom + 5.0,
            bottom + 18.0,
            fmt_tick(*t)
        );
    }
    for t in y_ticks(y_lo, y_hi, style.log_y) {
        let y = ya.map(t);
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{left:.2}" y2="{y:.2}" stroke="#888"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            left - 5.0,
            left - 8.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (left + right) / 2.0,
        h - 20.0,
        escape(&style.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.1}" text-anchor="middle" transform="rotate(-90 20 {:.1})">{}</text>"#,
        (top + bottom) / 2.0,
        (top + bottom) / 2.0,
        escape(&style.y_label)
    );

    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let visible: Vec<&(f64, f64, f64)> = ser
            .points
            .iter()
            .filter(|p| usable(p.0, style.log_x) && usable(p.1, style.log_y))
            .collect();
        if visible.len() >= 2 {
            let coords: Vec<String> = visible
                .iter()
                .map(|p| format!("{:.2},{:.2}", xa.map(p.0), ya.map(p.1)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
        for p in &visible {
            let (x, y) = (xa.map(p.0), ya.map(p.1));
            if p.2.is_finite() && p.2 > 0.0 {
                let (y1, y2) = (ya.map(p.1 - 2.0 * p.2), ya.map(p.1 + 2.0 * p.2));
                let _ = writeln!(
                    s,
                    r#"<path d="M{x:.2},{y1:.2}V{y2:.2}M{:.2},{y1:.2}H{:.2}M{:.2},{y2:.2}H{:.2}" stroke="{color}" fill="none"/>"#,
                    x - 3.0,
                    x + 3.0,
                    x - 3.0,
                    x + 3.0
                );
            }
            let _ = writeln!(
                s,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#
            );
        }
        let ly = top + 14.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            right + 12.0,
            right + 32.0,
            right + 38.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_svg(path: &Path, series: &[Series], style: &PlotStyle) -> Result<()> {
    let doc = render_svg(series, style)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, doc)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRID: [f64; 7] = [8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0];

    fn sample() -> Vec<Series> {
        vec![
            Series {
                label: "oracle".into(),
                points: GRID.iter().map(|k| (*k, 1.0 / k, 0.1 / k)).collect(),
            },
            Series {
                label: "erm".into(),
                points: GRID.iter().map(|k| (*k, 1.0 / k.sqrt(), 0.0)).collect(),
            },
        ]
    }

    #[test]
    fn single_point_has_marker_but_no_polyline() {
        let s = vec![Series {
            label: "x".into(),
            points: vec![(32.0, 0.5, 0.01)],
        }];
        let doc = render_svg(&s, &PlotStyle::default()).unwrap();
        assert_eq!(doc.matches("<circle").count(), 1);
        assert!(!doc.contains("<polyline"));
    }

    #[test]
    fn identical_inputs_give_identical_bytes() {
        let style = PlotStyle {
            title: "t".into(),
            ..Default::default()
        };
        assert_eq!(
            render_svg(&sample(), &style).unwrap(),
            render_svg(&sample(), &style).unwrap()
        );
    }

    #[test]
    fn ticks_follow_the_k_grid_and_legend_lists_series() {
        let doc = render_svg(&sample(), &PlotStyle::default()).unwrap();
        for k in ["8", "16", "32", "64", "128", "256", "512"] {
            assert!(doc.contains(&format!(">{k}</text>")), "missing tick {k}");
        }
        assert_eq!(doc.matches("<polyline").count(), 2);
        assert!(doc.contains(">oracle</text>") && doc.contains(">erm</text>"));
        // Error bars only where std_err > 0.
        assert_eq!(doc.matches("<path").count(), 7);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(render_svg(&[], &PlotStyle::default()).is_err());
        let empty = vec![Series {
            label: "x".into(),
            points: vec![],
        }];
        assert!(render_svg(&empty, &PlotStyle::default()).is_err());
    }

    #[test]
    fn linear_axes_accept_nonpositive_values() {
        let s = vec![Series {
            label: "acc".into(),
            points: vec![(1.0, 0.0, 0.0), (2.0, 0.5, 0.1)],
        }];
        let style = PlotStyle {
            log_x: false,
            log_y: false,
            ..Default::default()
        };
        let doc = render_svg(&s, &style).unwrap();
        assert_eq!(doc.matches("<circle").count(), 2);
    }
}
