//! Minimal SVG line chart of divergence against generation.

use std::fmt::Write as _;
use std::path::Path;

use crate::engine::GenerationTrace;
use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 20.0;
const MARGIN_BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

/// Step of 1, 2 or 5 × 10^k giving about `target` intervals over `span`.
fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let frac = raw / mag;
    let nice = if frac <= 1.0 {
        1.0
    } else if frac <= 2.0 {
        2.0
    } else if frac <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    format!("{v:.decimals$}")
}

/// SVG document for one or more traces; the legend uses each trace's label.
pub fn render_svg(traces: &[GenerationTrace]) -> Result<String> {
    if traces.is_empty() {
        return Err(Error::NoTraces);
    }
    let g_max = traces
        .iter()
        .flat_map(|t| t.records.iter().map(|r| r.g))
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let d_max = traces
        .iter()
        .flat_map(|t| t.records.iter().map(|r| r.d_actual))
        .filter(|d| d.is_finite())
        .fold(0.0, f64::max);
    let y_step = nice_step(if d_max > 0.0 { d_max } else { 1.0 }, 5);
    let y_top = ((d_max / y_step).ceil() * y_step).max(y_step);
    let x_step = nice_step(g_max, 10).max(1.0);

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |g: f64| MARGIN_LEFT + g / g_max * plot_w;
    let sy = |d: f64| MARGIN_TOP + (1.0 - d / y_top) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );

    // axes
    let (x0, x1) = (sx(0.0), sx(g_max));
    let (y0, y1) = (sy(0.0), sy(y_top));
    let _ = writeln!(
        svg,
        r#"<path d="M{x0:.2} {y1:.2} V{y0:.2} H{x1:.2}" fill="none" stroke="black"/>"#
    );
    let mut g = 0.0;
    while g <= g_max + 1e-9 {
        let x = sx(g);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 5.0,
            y0 + 18.0,
            g as usize
        );
        g += x_step;
    }
    let mut d = 0.0;
    while d <= y_top + y_step * 1e-9 {
        let y = sy(d);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            x0,
            x0 - 8.0,
            y + 4.0,
            tick_label(d, y_step)
        );
        d += y_step;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">generation g</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16 {:.2}) rotate(-90)" text-anchor="middle">D(S_g)</text>"#,
        (y0 + y1) / 2.0
    );

    for (i, t) in traces.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = t
            .records
            .iter()
            .filter(|r| r.d_actual.is_finite())
            .map(|r| format!("{:.2},{:.2}", sx(r.g as f64), sy(r.d_actual)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            points.join(" ")
        );
        let label = t
            .label
            .clone()
            .unwrap_or_else(|| format!("trace {}", i + 1));
        let ly = MARGIN_TOP + 12.0 + 18.0 * i as f64;
        let lx = x1 - 180.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{colour}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            escape(&label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn render_plot(traces: &[GenerationTrace], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_svg(traces)?)?;
    Ok(())
}
