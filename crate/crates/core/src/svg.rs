//! Scatter of per-draw (rejection probability, RR) pairs, one marker group
//! per criterion.

use std::fmt::Write as _;

use crate::risk::RiskGrid;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 180.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 60.0;

const COLOURS: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

#[derive(Debug, Clone, Copy)]
enum Marker {
    Circle,
    Square,
    Triangle,
    Diamond,
    Cross,
}

const MARKERS: [Marker; 5] = [
    Marker::Circle,
    Marker::Square,
    Marker::Triangle,
    Marker::Diamond,
    Marker::Cross,
];

fn marker(out: &mut String, kind: Marker, x: f64, y: f64, r: f64) {
    let _ = match kind {
        Marker::Circle => writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r:.1}"/>"#),
        Marker::Square => writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.1}" height="{:.1}"/>"#,
            x - r,
            y - r,
            2.0 * r,
            2.0 * r
        ),
        Marker::Triangle => writeln!(
            out,
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}"/>"#,
            x,
            y - r,
            x - r,
            y + r,
            x + r,
            y + r
        ),
        Marker::Diamond => writeln!(
            out,
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}"/>"#,
            x,
            y - r,
            x + r,
            y,
            x,
            y + r,
            x - r,
            y
        ),
        Marker::Cross => writeln!(
            out,
            r#"<path d="M{:.2},{:.2}L{:.2},{:.2}M{:.2},{:.2}L{:.2},{:.2}" fill="none" stroke-width="1"/>"#,
            x - r,
            y - r,
            x + r,
            y + r,
            x - r,
            y + r,
            x + r,
            y - r
        ),
    };
}

fn nice_max(v: f64) -> f64 {
    if !(v > 0.0) {
        return 1.0;
    }
    let e = 10f64.powf(v.log10().floor());
    for k in [1.0, 2.0, 2.5, 5.0, 10.0] {
        if k * e >= v {
            return k * e;
        }
    }
    10.0 * e
}

/// Render the scatter. At most `max_points` draws per criterion are plotted,
/// taken at a regular stride.
pub fn scatter_svg(grid: &RiskGrid, max_points: usize) -> String {
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_max = nice_max(
        grid.series
            .iter()
            .flat_map(|s| s.reject.iter().copied())
            .fold(0.0, f64::max),
    );
    let y_max = nice_max(
        grid.series
            .iter()
            .flat_map(|s| s.rr.iter().copied())
            .fold(0.0, f64::max),
    );
    let px = |x: f64| MARGIN_LEFT + plot_w * (x / x_max).clamp(0.0, 1.0);
    let py = |y: f64| MARGIN_TOP + plot_h * (1.0 - (y / y_max).clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);

    // axes
    let _ = writeln!(s, r#"<g class="axes" stroke="black" fill="none">"#);
    let _ = writeln!(
        s,
        r#"<path d="M{:.1},{:.1}V{:.1}H{:.1}"/>"#,
        MARGIN_LEFT,
        MARGIN_TOP,
        MARGIN_TOP + plot_h,
        MARGIN_LEFT + plot_w
    );
    for k in 0..=5 {
        let f = k as f64 / 5.0;
        let (x, y) = (px(f * x_max), py(f * y_max));
        let base = MARGIN_TOP + plot_h;
        let _ = writeln!(s, r#"<path d="M{x:.1},{base:.1}v5"/>"#);
        let _ = writeln!(s, r#"<path d="M{MARGIN_LEFT:.1},{y:.1}h-5"/>"#);
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="tick-labels" fill="black">"#);
    for k in 0..=5 {
        let f = k as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(f * x_max),
            MARGIN_TOP + plot_h + 18.0,
            fmt_tick(f * x_max)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 8.0,
            py(f * y_max) + 4.0,
            fmt_tick(f * y_max)
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<text class="x-label" x="{:.1}" y="{:.1}" text-anchor="middle">P(MC not met)</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text class="y-label" transform="translate(18,{:.1}) rotate(-90)" text-anchor="middle">RR</text>"#,
        MARGIN_TOP + plot_h / 2.0
    );

    for (k, (cell, series)) in grid.cells.iter().zip(&grid.series).enumerate() {
        let colour = COLOURS[k % COLOURS.len()];
        let kind = MARKERS[k % MARKERS.len()];
        let _ = writeln!(
            s,
            r#"<g class="criterion" data-criterion="{}" fill="{colour}" stroke="{colour}" fill-opacity="0.5">"#,
            cell.criterion
        );
        let stride = series.rr.len().div_ceil(max_points.max(1)).max(1);
        for i in (0..series.rr.len()).step_by(stride) {
            marker(&mut s, kind, px(series.reject[i]), py(series.rr[i]), 2.5);
        }
        if cell.error.is_none() {
            let (mx, my) = (px(cell.reject_pct_mean / 100.0), py(cell.rr_mean));
            let _ = writeln!(
                s,
                r#"<g class="mean" fill="black" stroke="black" fill-opacity="1">"#
            );
            marker(&mut s, kind, mx, my, 5.0);
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" stroke="none">E(RR)={:.2}</text>"#,
                mx + 7.0,
                my - 6.0,
                cell.rr_mean
            );
            let _ = writeln!(s, "</g>");
        }
        // legend entry
        let ly = MARGIN_TOP + 10.0 + 16.0 * k as f64;
        let lx = WIDTH - MARGIN_RIGHT + 20.0;
        marker(&mut s, kind, lx, ly, 4.0);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" fill="black" stroke="none" fill-opacity="1">{} ({:.2}, {:.2})</text>"#,
            lx + 10.0,
            ly + 4.0,
            cell.criterion,
            cell.reject_pct_mean / 100.0,
            cell.rr_mean
        );
        let _ = writeln!(s, "</g>");
    }
    let _ = writeln!(s, "</svg>");
    s
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() {
        "0".into()
    } else {
        s.into()
    }
}
