//! Hand-written static SVG charts. Output bytes depend only on the inputs.

use std::fmt::Write;

use lensprobe_core::analysis::DistributionView;

use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct LineSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axes {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Stretch the y range down to zero when the data sits above it.
    pub y_from_zero: bool,
}

pub(crate) fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
    out
}

/// Tick step of 1, 2 or 5 times a power of ten giving about five ticks.
fn tick_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let magnitude = 10f64.powf(raw.log10().floor());
    let f = raw / magnitude;
    let nice = if f <= 1.0 {
        1.0
    } else if f <= 2.0 {
        2.0
    } else if f <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * magnitude
}

/// Axis range widened to whole ticks, plus the tick values.
pub(crate) fn ticks(lo: f64, hi: f64) -> (f64, f64, Vec<f64>) {
    let (lo, hi) = if hi - lo < 1e-12 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let step = tick_step(hi - lo);
    let start = (lo / step + 1e-9).floor();
    let end = (hi / step - 1e-9).ceil();
    let values = (0..=(end - start) as i64).map(|k| (start + k as f64) * step).collect();
    (start * step, end * step, values)
}

fn tick_label(value: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    // adding 0.0 turns -0 into 0
    format!("{:.*}", decimals, value + 0.0)
}

fn open(out: &mut String, title: &str, metadata: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(out, "<metadata>{}</metadata>", escape(metadata));
    let _ = writeln!(out, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );
}

/// Frame, ticks and labels for the x axis, shared by both chart kinds.
fn x_axis(out: &mut String, x_lo: f64, x_hi: f64, x_ticks: &[f64], label: &str) {
    let plot_w = WIDTH - LEFT - RIGHT;
    let bottom = HEIGHT - BOTTOM;
    let step = x_ticks.get(1).map_or(1.0, |t| t - x_ticks[0]);
    let _ = writeln!(
        out,
        "<line x1=\"{LEFT:.2}\" y1=\"{bottom:.2}\" x2=\"{:.2}\" y2=\"{bottom:.2}\" stroke=\"#000000\"/>",
        LEFT + plot_w
    );
    for &t in x_ticks {
        let x = LEFT + (t - x_lo) / (x_hi - x_lo) * plot_w;
        let _ = writeln!(
            out,
            "<line x1=\"{x:.2}\" y1=\"{bottom:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#000000\"/>",
            bottom + 5.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            bottom + 19.0,
            tick_label(t, step)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        escape(label)
    );
}

/// Line chart with one polyline and legend entry per series.
pub fn render_lines(series: &[LineSeries], axes: &Axes, metadata: &str) -> Result<String> {
    if series.is_empty() {
        return Err(Error::Report("line chart needs at least one series".into()));
    }
    if let Some(s) = series.iter().find(|s| s.points.len() < 2) {
        return Err(Error::Report(format!("series `{}` has fewer than two points", s.label)));
    }
    if series.iter().flat_map(|s| &s.points).any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Report("non-finite point in line chart".into()));
    }
    let points = || series.iter().flat_map(|s| s.points.iter());
    let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| points().map(pick).fold(init, f);
    let (x_min, x_max) = (fold(f64::min, f64::INFINITY, |p| p.0), fold(f64::max, f64::NEG_INFINITY, |p| p.0));
    let (mut y_min, y_max) = (fold(f64::min, f64::INFINITY, |p| p.1), fold(f64::max, f64::NEG_INFINITY, |p| p.1));
    if axes.y_from_zero && y_min > 0.0 {
        y_min = 0.0;
    }
    let (x_lo, x_hi, x_ticks) = ticks(x_min, x_max);
    let (y_lo, y_hi, y_ticks) = ticks(y_min, y_max);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| TOP + (y_hi - y) / (y_hi - y_lo) * plot_h;

    let mut out = String::new();
    open(&mut out, &axes.title, metadata);
    x_axis(&mut out, x_lo, x_hi, &x_ticks, &axes.x_label);
    let _ = writeln!(
        out,
        "<line x1=\"{LEFT:.2}\" y1=\"{TOP:.2}\" x2=\"{LEFT:.2}\" y2=\"{:.2}\" stroke=\"#000000\"/>",
        TOP + plot_h
    );
    let y_step = y_ticks.get(1).map_or(1.0, |t| t - y_ticks[0]);
    for &t in &y_ticks {
        let y = sy(t);
        let _ = writeln!(
            out,
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>",
            LEFT,
            LEFT + plot_w
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            LEFT - 8.0,
            y + 4.0,
            tick_label(t, y_step)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{}</text>",
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(&axes.y_label)
    );

    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            pts.join(" ")
        );
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let lx = WIDTH - RIGHT + 14.0;
        let _ = writeln!(
            out,
            "<g class=\"legend\"><line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>\
             <text x=\"{:.2}\" y=\"{:.2}\">{}</text></g>",
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Stacked density silhouettes, one row per distribution, first on top,
/// over a shared x axis `[0, max_entropy]`.
pub fn render_ridgeline(dists: &[DistributionView], title: &str, metadata: &str) -> Result<String> {
    let first = dists
        .first()
        .ok_or_else(|| Error::Report("ridgeline needs at least one distribution".into()))?;
    let x_max = first.max_entropy;
    if dists.iter().any(|d| d.max_entropy != x_max || d.probabilities.is_empty()) {
        return Err(Error::Report("ridgeline distributions must share one binning".into()));
    }
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let row = plot_h / (dists.len() as f64 + 0.6);
    let peak = row * 1.6;
    let sx = |x: f64| LEFT + x / x_max * plot_w;

    let mut out = String::new();
    open(&mut out, title, metadata);
    for (k, d) in dists.iter().enumerate() {
        let base = TOP + row * (k as f64 + 1.6);
        let color = PALETTE[k % PALETTE.len()];
        let tallest = d.probabilities.iter().copied().fold(0.0, f64::max);
        let mut path = format!("M{:.2},{base:.2}", sx(0.0));
        for (b, &p) in d.probabilities.iter().enumerate() {
            let h = if tallest > 0.0 { p / tallest * peak } else { 0.0 };
            let _ = write!(path, " L{:.2},{:.2}", sx((b as f64 + 0.5) * d.bin_width), base - h);
        }
        let _ = write!(path, " L{:.2},{base:.2} Z", sx(x_max));
        let _ = writeln!(
            out,
            "<path class=\"ridge\" d=\"{path}\" fill=\"{color}\" fill-opacity=\"0.6\" stroke=\"#000000\" stroke-width=\"0.8\"/>"
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">layer {}</text>",
            LEFT - 8.0,
            base,
            d.layer
        );
    }
    let (_, _, x_ticks) = ticks(0.0, x_max);
    let x_ticks: Vec<f64> = x_ticks.into_iter().filter(|&t| t <= x_max + 1e-9).collect();
    x_axis(&mut out, 0.0, x_max, &x_ticks, "entropy (bits)");
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_steps() {
        assert_eq!(ticks(0.0, 10.0).2, [0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        let (lo, hi, t) = ticks(0.13, 0.87);
        assert!((lo - 0.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        assert_eq!(t.len(), 6);
        let (lo, hi, _) = ticks(3.0, 3.0);
        assert!(lo <= 2.5 && hi >= 3.5);
    }

    #[test]
    fn labels_drop_negative_zero() {
        assert_eq!(tick_label(-0.0, 0.2), "0.0");
        assert_eq!(tick_label(40.0, 10.0), "40");
    }

    #[test]
    fn escaping() {
        assert_eq!(escape("a<b & \"c\">"), "a&lt;b &amp; &quot;c&quot;&gt;");
    }
}
