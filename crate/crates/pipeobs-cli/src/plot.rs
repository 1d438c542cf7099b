//! Minimal hand-emitted SVG decay plot: the L2 error on a log axis over
//! time, as a single polyline with plain axes. CSV stays the primary
//! artifact; the plot is a quick visual check.

use pipeobs::energy::ERR_FLOOR;
use pipeobs::solver::Sample;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 20.0;
const MARGIN_BOTTOM: f64 = 45.0;

/// Render the decay plot for a sample series. Returns a complete SVG
/// document; an empty or flat series still renders with sane axes.
pub fn decay_svg(samples: &[Sample]) -> String {
    let points: Vec<(f64, f64)> = samples
        .iter()
        .map(|s| (s.t, s.l2_err_sq.sqrt().max(ERR_FLOOR).log10()))
        .collect();

    let (t_min, t_max) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(t, _)| (lo.min(t), hi.max(t)));
    let (mut y_min, mut y_max) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, y)| (lo.min(y), hi.max(y)));
    let (t_min, t_max) = if points.is_empty() || t_min >= t_max { (0.0, 1.0) } else { (t_min, t_max) };
    if points.is_empty() || y_min >= y_max {
        y_min -= 1.0;
        y_max += 1.0;
    }
    if !y_min.is_finite() || !y_max.is_finite() {
        y_min = -15.0;
        y_max = 0.0;
    }

    let x_of = |t: f64| MARGIN_LEFT + (t - t_min) / (t_max - t_min) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT);
    let y_of = |y: f64| HEIGHT - MARGIN_BOTTOM - (y - y_min) / (y_max - y_min) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM);

    let mut poly = String::new();
    for &(t, y) in &points {
        if !poly.is_empty() {
            poly.push(' ');
        }
        poly.push_str(&format!("{:.2},{:.2}", x_of(t), y_of(y)));
    }

    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"monospace\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    ));

    // Up to five y ticks at whole decades.
    let first_decade = y_min.ceil() as i64;
    let last_decade = y_max.floor() as i64;
    let n_decades = (last_decade - first_decade).max(0) + 1;
    let stride = ((n_decades + 4) / 5).max(1);
    let mut d = first_decade;
    while d <= last_decade {
        let y = y_of(d as f64);
        svg.push_str(&format!(
            "  <line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"black\"/>\n",
            x0 - 4.0,
            x0
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">1e{d}</text>\n",
            x0 - 7.0,
            y + 4.0
        ));
        d += stride;
    }
    for (t, anchor) in [(t_min, "start"), (t_max, "end")] {
        let x = x_of(t);
        svg.push_str(&format!(
            "  <line x1=\"{x:.2}\" y1=\"{y0}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
            y0 + 4.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"{anchor}\">t = {t:.3}</text>\n",
            y0 + 18.0
        ));
    }
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">L2 error (log scale)</text>\n",
        (x0 + x1) / 2.0,
        y1 - 6.0
    ));

    if !poly.is_empty() {
        svg.push_str(&format!(
            "  <polyline points=\"{poly}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\"/>\n"
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
