//! Minimal SVG line chart of mastery curves.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::experiment::{CurvePoint, Group};

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 90.0;

fn colour(group: Group) -> &'static str {
    match group {
        Group::Random => "#d62728",
        Group::MabAgnostic => "#1f77b4",
        Group::MabFull => "#2ca02c",
    }
}

/// Step between axis ticks giving at most about eight ticks.
fn tick_step(max: f64) -> f64 {
    let raw = (max / 8.0).max(1.0);
    let magnitude = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * magnitude)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * magnitude)
}

/// Renders one polyline per group, y in `[0, 1]`, x over question index.
pub fn render_svg(curves: &BTreeMap<Group, Vec<CurvePoint>>) -> String {
    let x_max = curves
        .values()
        .map(|c| c.len().saturating_sub(1))
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |q: f64| LEFT + q / x_max * plot_w;
    let sy = |m: f64| TOP + (1.0 - m) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">Average simulated mastery by question</text>"#,
        WIDTH / 2.0
    );

    for i in 0..=10 {
        let m = i as f64 / 10.0;
        let y = sy(m);
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e5e5e5"/><text x="{}" y="{:.2}" text-anchor="end">{m:.1}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let step = tick_step(x_max);
    let mut q = 0.0;
    while q <= x_max + 1e-9 {
        let x = sx(q);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{q}</text>"##,
            TOP + plot_h,
            TOP + plot_h + 5.0,
            TOP + plot_h + 18.0
        );
        q += step;
    }
    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333"/>"##
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">Question index</text>"#,
        LEFT + plot_w / 2.0,
        TOP + plot_h + 36.0
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(18 {}) rotate(-90)" text-anchor="middle">Mean mastery estimate</text>"#,
        TOP + plot_h / 2.0
    );

    for (g, curve) in curves {
        let points: Vec<String> = curve
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.question_index as f64), sy(p.mean_mastery)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"><title>{}</title></polyline>"#,
            colour(*g),
            points.join(" "),
            g.label()
        );
    }

    let mut ly = TOP + plot_h + 56.0;
    let mut lx = LEFT;
    for g in curves.keys() {
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            lx + 24.0,
            colour(*g),
            lx + 30.0,
            ly + 4.0,
            g.label()
        );
        lx += 210.0;
    }
    ly += 22.0;
    let _ = writeln!(
        svg,
        r##"<text x="{LEFT}" y="{ly}" font-size="11" fill="#555">Students who finish early hold their final mastery for the remaining indices.</text>"##
    );
    svg.push_str("</svg>\n");
    svg
}
