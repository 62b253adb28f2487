//! Line chart of actual versus forecast values for one series.

use std::fmt::Write;

use popcast_core::eval::ForecastResult;
use popcast_core::SeriesKey;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 480.0;
const LEFT: f64 = 90.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const ACTUAL_COLOR: &str = "#000000";
/// Assigned to models by registration order, cycling.
pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

struct Scale {
    lo: f64,
    hi: f64,
    from: f64,
    to: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64, from: f64, to: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
        Self { lo, hi, from, to }
    }

    fn map(&self, v: f64) -> f64 {
        self.from + (v - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn polyline(out: &mut String, points: &[(f64, f64)], color: &str, dashed: bool) {
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let dash = if dashed { " stroke-dasharray=\"6 4\"" } else { "" };
    writeln!(
        out,
        "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"{dash} points=\"{}\"/>",
        pts.join(" ")
    )
    .unwrap();
    for (x, y) in points {
        writeln!(out, "  <circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"{color}\"/>").unwrap();
    }
}

/// Renders the test-period actuals and each model's forecast. `models` fixes
/// the color order; `cells` are this key's results in any order.
pub fn render(key: SeriesKey, models: &[String], cells: &[&ForecastResult]) -> String {
    let mut years: Vec<i32> = cells.iter().flat_map(|c| c.years.iter().copied()).collect();
    years.sort_unstable();
    years.dedup();
    let values = cells.iter().flat_map(|c| c.actual.iter().chain(&c.predicted)).copied();
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let pad = (hi - lo) * 0.05;
    let (first, last) = (
        *years.first().unwrap_or(&0) as f64,
        *years.last().unwrap_or(&0) as f64,
    );
    let sx = Scale::new(first, last, LEFT, WIDTH - RIGHT);
    let sy = Scale::new(lo - pad, hi + pad, HEIGHT - BOTTOM, TOP);

    let mut out = String::new();
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    )
    .unwrap();
    writeln!(out, "  <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>").unwrap();
    writeln!(
        out,
        "  <text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{} actual vs forecast</text>",
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(&key.to_string())
    )
    .unwrap();

    // axes
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    writeln!(out, "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"#444444\"/>").unwrap();
    writeln!(out, "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"#444444\"/>").unwrap();
    for year in &years {
        let x = sx.map(f64::from(*year));
        writeln!(out, "  <line x1=\"{x:.2}\" y1=\"{y0}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#444444\"/>", y0 + 5.0).unwrap();
        writeln!(out, "  <text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{year}</text>", y0 + 20.0).unwrap();
    }
    for i in 0..=4 {
        let v = sy.lo + (sy.hi - sy.lo) * f64::from(i) / 4.0;
        let y = sy.map(v);
        writeln!(out, "  <line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{x0}\" y2=\"{y:.2}\" stroke=\"#444444\"/>", x0 - 5.0).unwrap();
        writeln!(out, "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{:.0}</text>", x0 - 8.0, y + 4.0, v).unwrap();
    }
    writeln!(out, "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">year</text>", (x0 + x1) / 2.0, HEIGHT - 10.0).unwrap();
    writeln!(
        out,
        "  <text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">persons</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    )
    .unwrap();

    let point = |year: i32, v: f64| (sx.map(f64::from(year)), sy.map(v));
    let mut legend: Vec<(String, &str, bool)> = Vec::new();
    if let Some(c) = cells.first() {
        let pts: Vec<_> = c.years.iter().zip(&c.actual).map(|(y, v)| point(*y, *v)).collect();
        polyline(&mut out, &pts, ACTUAL_COLOR, false);
        legend.push(("actual".to_string(), ACTUAL_COLOR, false));
    }
    for (i, model) in models.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if let Some(c) = cells.iter().find(|c| &c.model == model) {
            let pts: Vec<_> = c.years.iter().zip(&c.predicted).map(|(y, v)| point(*y, *v)).collect();
            polyline(&mut out, &pts, color, true);
            legend.push((model.clone(), color, true));
        }
    }

    for (i, (label, color, dashed)) in legend.iter().enumerate() {
        let y = TOP + 10.0 + 22.0 * i as f64;
        let lx = WIDTH - RIGHT + 20.0;
        let dash = if *dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        writeln!(
            out,
            "  <line x1=\"{lx}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{color}\" stroke-width=\"2\"{dash}/>",
            lx + 30.0
        )
        .unwrap();
        writeln!(out, "  <text x=\"{}\" y=\"{}\">{}</text>", lx + 38.0, y + 4.0, escape(label)).unwrap();
    }
    out.push_str("</svg>\n");
    out
}
