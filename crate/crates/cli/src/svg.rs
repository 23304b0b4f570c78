//! Static log₂–log₂ convergence plot.
//!
//! Every point carries `data-dt`, `data-q-bar` and `data-error` attributes
//! holding the same strings as the CSV, so the figure can be checked
//! against the table.

use std::fmt::Write;

use sdde_core::harness::{ErrorTable, RateFit};

use crate::commands::num;

const W: f64 = 640.0;
const H: f64 = 480.0;
const PAD: f64 = 64.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn rate_plot(table: &ErrorTable, fits: &[(f64, Option<RateFit>)]) -> String {
    let pts: Vec<(f64, f64)> = table
        .rows
        .iter()
        .filter(|r| r.error > 0.0)
        .map(|r| (r.dt.log2(), r.error.log2()))
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if pts.is_empty() {
        (x0, x1, y0, y1) = (-1.0, 0.0, -1.0, 0.0);
    }
    // whole-unit bounds with a margin
    let (x0, x1) = ((x0 - 0.5).floor(), (x1 + 0.5).ceil());
    let (y0, y1) = ((y0 - 0.5).floor(), (y1 + 0.5).ceil());
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<g id="axes" stroke="black"><line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{PAD}" y1="{b}" x2="{PAD}" y2="{PAD}"/></g>"#,
        b = H - PAD,
        r = W - PAD
    );
    let _ = writeln!(s, r#"<g id="ticks" text-anchor="middle">"#);
    for k in (x0 as i64)..=(x1 as i64) {
        let x = sx(k as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{b}" x2="{x:.2}" y2="{b2}" stroke="black"/><text x="{x:.2}" y="{ty}">{k}</text>"#,
            b = H - PAD,
            b2 = H - PAD + 5.0,
            ty = H - PAD + 18.0
        );
    }
    for k in (y0 as i64)..=(y1 as i64) {
        let y = sy(k as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{l}" y1="{y:.2}" x2="{PAD}" y2="{y:.2}" stroke="black"/><text x="{tx}" y="{ty:.2}" text-anchor="end">{k}</text>"#,
            l = PAD - 5.0,
            tx = PAD - 8.0,
            ty = y + 4.0
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<text x="{cx}" y="{by}" text-anchor="middle">log2(dt)</text>"#,
        cx = W / 2.0,
        by = H - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{cy}" text-anchor="middle" transform="rotate(-90 18 {cy})">log2(error)</text>"#,
        cy = H / 2.0
    );

    for (i, (q, fit)) in fits.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(s, r#"<g class="series" data-q-bar="{}" fill="{color}">"#, num(*q));
        for r in table.rows_for(*q).filter(|r| r.error > 0.0) {
            let _ = writeln!(
                s,
                r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="4" data-dt="{}" data-q-bar="{}" data-error="{}"/>"#,
                sx(r.dt.log2()),
                sy(r.error.log2()),
                num(r.dt),
                num(r.q_bar),
                num(r.error)
            );
        }
        let label = match fit {
            Some(f) => {
                let (a, b) = (x0 + 0.25, x1 - 0.25);
                let _ = writeln!(
                    s,
                    r#"<line class="fit" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-dasharray="6 4" data-slope="{}" data-intercept="{}"/>"#,
                    sx(a),
                    sy(f.slope * a + f.intercept),
                    sx(b),
                    sy(f.slope * b + f.intercept),
                    num(f.slope),
                    num(f.intercept)
                );
                format!("q̄ = {q}: slope {:.3}", f.slope)
            }
            None => format!("q̄ = {q}: slope undefined"),
        };
        let _ = writeln!(
            s,
            r#"<text class="slope" x="{x}" y="{y}">{}</text>"#,
            escape(&label),
            x = PAD + 12.0,
            y = PAD + 16.0 * (i as f64 + 1.0)
        );
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}
