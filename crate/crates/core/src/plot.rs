//! Dependency-free SVG rendering of a rate summary alongside the
//! determinations and the calibration curve.
//!
//! Calendar age runs older-to-younger left to right. The left axis is the
//! occurrence rate; the right axis is ¹⁴C age, carrying the calibration curve
//! (mean ± 2τ) and the determinations as rug ticks.

use std::fmt::Write as _;

use crate::calibration::{CalendarGrid, CalibrationCurve, DensityGrid, Determination};
use crate::posterior::RateSummary;
use crate::spd::QuantileBand;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 78.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;

const MEAN_COLOUR: &str = "#5b2c8f";
const BAND_COLOUR: &str = "#b9a2d6";
const TRUTH_COLOUR: &str = "#d62728";
const SPD_COLOUR: &str = "#9a9a9a";
const CURVE_COLOUR: &str = "#1f77b4";

/// Everything that may appear on one panel. Densities (SPD, bootstrap band)
/// are multiplied by `density_scale` so they share the rate axis; pass the
/// number of determinations to compare them with an events-per-year rate.
#[derive(Default)]
pub struct Panel<'a> {
    pub title: String,
    pub summary: Option<&'a RateSummary>,
    pub truth: Option<Vec<f64>>,
    pub spd: Option<&'a DensityGrid>,
    pub spd_band: Option<&'a QuantileBand>,
    pub density_scale: f64,
    pub curve: Option<&'a CalibrationCurve>,
    pub determinations: &'a [Determination],
    pub y_label: Option<String>,
}

struct Frame {
    t_a: f64,
    t_b: f64,
    y_max: f64,
    c14: Option<(f64, f64)>,
}

impl Frame {
    fn x(&self, theta: f64) -> f64 {
        LEFT + (self.t_b - theta) / (self.t_b - self.t_a) * (WIDTH - LEFT - RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - BOTTOM - v / self.y_max * (HEIGHT - TOP - BOTTOM)
    }

    fn y14(&self, v: f64) -> f64 {
        let (lo, hi) = self.c14.expect("radiocarbon axis");
        HEIGHT - BOTTOM - (v - lo) / (hi - lo) * (HEIGHT - TOP - BOTTOM)
    }
}

fn nice_step(range: f64, target_ticks: f64) -> f64 {
    let raw = range / target_ticks;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.1}")
    } else {
        let digits = (-v.abs().log10()).ceil() as usize + 1;
        format!("{v:.digits$}")
    }
}

fn step_path(frame: &Frame, grid: &CalendarGrid, values: &[f64], scale: f64) -> String {
    let mut d = String::new();
    for (j, &v) in values.iter().enumerate() {
        let lo = grid.start + j as f64 * grid.step;
        let (x0, x1, y) = (frame.x(lo), frame.x(lo + grid.step), frame.y(v * scale));
        let cmd = if j == 0 { 'M' } else { 'L' };
        let _ = write!(d, "{cmd}{x0:.2},{y:.2}L{x1:.2},{y:.2}");
    }
    d
}

fn band_polygon(frame: &Frame, grid: &CalendarGrid, lower: &[f64], upper: &[f64], scale: f64) -> String {
    let mut pts = String::new();
    for (c, u) in grid.centres().zip(upper) {
        let _ = write!(pts, "{:.2},{:.2} ", frame.x(c), frame.y(u * scale));
    }
    for (c, l) in grid.centres().zip(lower).rev() {
        let _ = write!(pts, "{:.2},{:.2} ", frame.x(c), frame.y(l * scale));
    }
    pts
}

pub fn render_svg(panel: &Panel<'_>) -> String {
    let grid = panel
        .summary
        .map(|s| s.grid)
        .or_else(|| panel.spd.map(|s| s.grid))
        .or_else(|| panel.spd_band.map(|b| b.grid))
        .expect("panel needs a summary, SPD or band");
    let scale = if panel.density_scale > 0.0 { panel.density_scale } else { 1.0 };

    let mut y_max: f64 = 0.0;
    if let Some(s) = panel.summary {
        y_max = s.upper.iter().chain(&s.mean).copied().fold(y_max, f64::max);
    }
    if let Some(t) = &panel.truth {
        y_max = t.iter().copied().fold(y_max, f64::max);
    }
    if let Some(s) = panel.spd {
        y_max = s.values.iter().map(|v| v * scale).fold(y_max, f64::max);
    }
    if let Some(b) = panel.spd_band {
        y_max = b.upper.iter().map(|v| v * scale).fold(y_max, f64::max);
    }
    let y_max = if y_max > 0.0 { y_max * 1.08 } else { 1.0 };

    let c14 = panel.curve.and_then(|curve| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in grid.centres() {
            if let Ok((mu, tau)) = curve.at(c) {
                lo = lo.min(mu - 2.0 * tau);
                hi = hi.max(mu + 2.0 * tau);
            }
        }
        for d in panel.determinations {
            lo = lo.min(d.c14_age);
            hi = hi.max(d.c14_age);
        }
        (lo < hi).then(|| {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        })
    });
    let frame = Frame {
        t_a: grid.start,
        t_b: grid.end,
        y_max,
        c14,
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(&panel.title)
    );

    // calibration curve, drawn first so the rate sits on top
    if let (Some(curve), Some(_)) = (panel.curve, c14) {
        let mut upper = String::new();
        let mut lower = String::new();
        let mut mean = String::new();
        for c in grid.centres() {
            if let Ok((mu, tau)) = curve.at(c) {
                let x = frame.x(c);
                let _ = write!(upper, "{x:.2},{:.2} ", frame.y14(mu + 2.0 * tau));
                lower.insert_str(0, &format!("{x:.2},{:.2} ", frame.y14(mu - 2.0 * tau)));
                let _ = write!(mean, "{x:.2},{:.2} ", frame.y14(mu));
            }
        }
        let _ = writeln!(
            svg,
            r#"<polygon points="{upper}{lower}" fill="{CURVE_COLOUR}" fill-opacity="0.18" stroke="none"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<polyline points="{mean}" fill="none" stroke="{CURVE_COLOUR}" stroke-width="1"/>"#
        );
    }

    if let Some(s) = panel.spd {
        let mut d = step_path(&frame, &grid, &s.values, scale);
        let _ = write!(
            d,
            "L{:.2},{:.2}L{:.2},{:.2}Z",
            frame.x(grid.end),
            frame.y(0.0),
            frame.x(grid.start),
            frame.y(0.0)
        );
        let _ = writeln!(
            svg,
            r#"<path d="{d}" fill="{SPD_COLOUR}" fill-opacity="0.35" stroke="{SPD_COLOUR}" stroke-width="0.8"/>"#
        );
    }
    if let Some(b) = panel.spd_band {
        for vals in [&b.lower, &b.upper] {
            let _ = writeln!(
                svg,
                r#"<path d="{}" fill="none" stroke="{SPD_COLOUR}" stroke-width="1.2" stroke-dasharray="4 3"/>"#,
                step_path(&frame, &grid, vals, scale)
            );
        }
    }
    if let Some(s) = panel.summary {
        let _ = writeln!(
            svg,
            r#"<polygon points="{}" fill="{BAND_COLOUR}" fill-opacity="0.45" stroke="none"/>"#,
            band_polygon(&frame, &grid, &s.lower, &s.upper, 1.0)
        );
    }
    if let Some(t) = &panel.truth {
        let _ = writeln!(
            svg,
            r#"<path d="{}" fill="none" stroke="{TRUTH_COLOUR}" stroke-width="1.5"/>"#,
            step_path(&frame, &grid, t, 1.0)
        );
    }
    if let Some(s) = panel.summary {
        let mut pts = String::new();
        for (c, m) in grid.centres().zip(&s.mean) {
            let _ = write!(pts, "{:.2},{:.2} ", frame.x(c), frame.y(*m));
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{pts}" fill="none" stroke="{MEAN_COLOUR}" stroke-width="2"/>"#
        );
    }

    // rug of determinations against the radiocarbon axis
    if c14.is_some() {
        let x1 = WIDTH - RIGHT;
        for d in panel.determinations {
            let y = frame.y14(d.c14_age);
            let _ = writeln!(
                svg,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y:.2}" stroke="black" stroke-width="0.8"/>"#,
                x1 - 10.0
            );
        }
    }

    axes(&mut svg, &frame, panel.y_label.as_deref().unwrap_or("Occurrence rate (events / cal yr)"));
    svg.push_str("</svg>\n");
    svg
}

fn axes(svg: &mut String, frame: &Frame, y_label: &str) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        svg,
        r#"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y0 - y1
    );
    let step = nice_step(frame.t_b - frame.t_a, 8.0);
    let mut t = (frame.t_a / step).ceil() * step;
    while t <= frame.t_b + 1e-9 {
        let x = frame.x(t);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
            y0 + 5.0,
            y0 + 18.0,
            fmt_num(t)
        );
        t += step;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">Calendar age (cal yr BP)</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 10.0
    );
    let ystep = nice_step(frame.y_max, 5.0);
    let mut v = 0.0;
    while v <= frame.y_max + 1e-12 {
        let y = frame.y(v);
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0,
            fmt_num(v)
        );
        v += ystep;
    }
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
    if let Some((lo, hi)) = frame.c14 {
        let step = nice_step(hi - lo, 6.0);
        let mut v = (lo / step).ceil() * step;
        while v <= hi {
            let y = frame.y14(v);
            let _ = writeln!(
                svg,
                r#"<line x1="{x1}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="{CURVE_COLOUR}"/><text x="{}" y="{:.2}" fill="{CURVE_COLOUR}">{}</text>"#,
                x1 + 5.0,
                x1 + 8.0,
                y + 4.0,
                fmt_num(v)
            );
            v += step;
        }
        let _ = writeln!(
            svg,
            r#"<text transform="translate({},{}) rotate(90)" text-anchor="middle" fill="{CURVE_COLOUR}">Radiocarbon age (¹⁴C yr BP)</text>"#,
            WIDTH - 14.0,
            (y0 + y1) / 2.0
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
