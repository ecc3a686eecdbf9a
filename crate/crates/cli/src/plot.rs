//! Self-contained SVG of the sweep curves, each normalised to its own range.

use std::fmt::Write as _;

use taskcode::sweep::{Family, SweepResult, SweepSummary};

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

fn normalise(values: &[Option<f64>]) -> Vec<Option<f64>> {
    let finite = values.iter().flatten().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    values.iter().map(|v| v.filter(|x| x.is_finite()).map(|x| (x - lo) / span)).collect()
}

pub fn curves(result: &SweepResult, summary: &SweepSummary) -> String {
    let log_x = result.family == Family::Width;
    let grid = result.grid();
    let xs: Vec<f64> = grid.iter().map(|&v| if log_x { v.ln() } else { v }).collect();
    let (x0, x1) = (xs[0], *xs.last().expect("non-empty grid"));
    let xspan = if x1 > x0 { x1 - x0 } else { 1.0 };
    let px = |x: f64| LEFT + (x - x0) / xspan * (W - LEFT - RIGHT);
    let py = |y: f64| TOP + (1.0 - y) * (H - TOP - BOTTOM);

    let column = |get: &dyn Fn(&taskcode::sweep::PointValues) -> f64| -> Vec<Option<f64>> {
        result.points.iter().map(|p| p.values().map(get)).collect()
    };
    let mut series = vec![
        ("MMSE", "#1f77b4", normalise(&column(&|v| v.mmse.value)), Some(summary.argmin_mmse)),
        ("f", "#d62728", normalise(&column(&|v| v.f.value)), Some(summary.argmin_f)),
        ("MI", "#2ca02c", normalise(&column(&|v| v.mi.value)), Some(summary.argmax_mi)),
    ];
    if result.family == Family::Anisotropy {
        series.push((
            "Kalman f",
            "#9467bd",
            normalise(&column(&|v| v.kalman.map_or(f64::NAN, |k| k.f))),
            summary.kalman_argmin_f,
        ));
    }

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    for (k, &i) in [0, grid.len() / 2, grid.len() - 1].iter().enumerate() {
        let x = px(xs[i]);
        let anchor = ["start", "middle", "end"][k];
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="{anchor}">{:.3}</text>"#,
            H - BOTTOM + 16.0,
            grid[i]
        );
    }
    let label = if log_x { "tuning width p (log scale)" } else { "anisotropy angle zeta" };
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
        LEFT + (W - LEFT - RIGHT) / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">normalised value</text>"#,
        18.0,
        H / 2.0,
        H / 2.0
    );

    for (row, (name, colour, ys, best)) in series.iter().enumerate() {
        let mut d = String::new();
        let mut pen_down = false;
        for (x, y) in xs.iter().zip(ys) {
            match y {
                Some(y) => {
                    let _ = write!(d, "{}{:.2},{:.2} ", if pen_down { "L" } else { "M" }, px(*x), py(*y));
                    pen_down = true;
                }
                None => pen_down = false,
            }
        }
        let _ = writeln!(svg, r#"<path d="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#, d.trim_end());
        if let Some(Some(y)) = best.map(|i| ys[i]) {
            let i = best.expect("checked");
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{colour}"/>"#, px(xs[i]), py(y));
        }
        let ly = TOP + 14.0 + 20.0 * row as f64;
        let lx = W - RIGHT + 16.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{colour}" stroke-width="2"/>"#,
            lx + 24.0
        );
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}">{name}</text>"#, lx + 30.0, ly + 4.0);
    }
    svg.push_str("</svg>\n");
    svg
}
