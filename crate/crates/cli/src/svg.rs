//! Hand-emitted SVG. Every chart uses the same fixed stage: an 800×600
//! viewport with a 60px margin; data coordinates map linearly onto the
//! inner rectangle with the y axis flipped (SVG y grows downward). No
//! text escaping is needed because every label we emit is numeric.

use std::fmt::Write as _;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 600.0;
pub const MARGIN: f64 = 60.0;

/// Ten visually distinct fill colors, reused cyclically for class labels.
pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// Linear data→stage mapping for one axis span.
#[derive(Debug, Clone, Copy)]
pub struct AxisMap {
    lo: f64,
    hi: f64,
    stage_lo: f64,
    stage_hi: f64,
}

impl AxisMap {
    /// Pad a degenerate span so a constant series still renders mid-stage.
    pub fn new(lo: f64, hi: f64, stage_lo: f64, stage_hi: f64) -> AxisMap {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        AxisMap { lo, hi, stage_lo, stage_hi }
    }

    pub fn x(span: (f64, f64)) -> AxisMap {
        AxisMap::new(span.0, span.1, MARGIN, WIDTH - MARGIN)
    }

    /// Flipped: larger data values sit higher on the page.
    pub fn y(span: (f64, f64)) -> AxisMap {
        AxisMap::new(span.0, span.1, HEIGHT - MARGIN, MARGIN)
    }

    pub fn map(&self, v: f64) -> f64 {
        self.stage_lo + (v - self.lo) / (self.hi - self.lo) * (self.stage_hi - self.stage_lo)
    }
}

pub struct Svg {
    body: String,
}

impl Svg {
    pub fn new() -> Svg {
        let mut body = String::new();
        let _ = writeln!(
            body,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
             viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
        );
        let _ = writeln!(
            body,
            "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
        );
        Svg { body }
    }

    pub fn frame(&mut self) {
        let _ = writeln!(
            self.body,
            "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" \
             stroke=\"#333\" stroke-width=\"1\"/>",
            WIDTH - 2.0 * MARGIN,
            HEIGHT - 2.0 * MARGIN
        );
    }

    pub fn circle(&mut self, cx: f64, cy: f64, r: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{r}\" fill=\"{fill}\"/>"
        );
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{fill}\"/>"
        );
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        let coords: Vec<String> =
            pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"1.5\"/>",
            coords.join(" ")
        );
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, fill: &str, s: &str) {
        let _ = writeln!(
            self.body,
            "<text x=\"{x:.2}\" y=\"{y:.2}\" font-size=\"{size}\" font-family=\"sans-serif\" \
             text-anchor=\"{anchor}\" fill=\"{fill}\">{s}</text>"
        );
    }

    /// Min/mid/max tick labels along both axes of the stage frame.
    pub fn axis_labels(&mut self, xs: (f64, f64), ys: (f64, f64)) {
        let xm = AxisMap::x(xs);
        let ym = AxisMap::y(ys);
        for v in [xs.0, 0.5 * (xs.0 + xs.1), xs.1] {
            self.text(xm.map(v), HEIGHT - MARGIN + 20.0, 12.0, "middle", "#333", &fmt_tick(v));
        }
        for v in [ys.0, 0.5 * (ys.0 + ys.1), ys.1] {
            self.text(MARGIN - 8.0, ym.map(v) + 4.0, 12.0, "end", "#333", &fmt_tick(v));
        }
    }

    pub fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 0.01 && v.abs() < 10_000.0) {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

/// Diverging blue→white→red map over [−1, 1], clamped.
pub fn diverging_color(v: f64) -> String {
    let v = v.clamp(-1.0, 1.0);
    let (r, g, b) = if v < 0.0 {
        let t = 1.0 + v; // 0 at −1 (full blue), 1 at 0 (white)
        (31.0 + t * 224.0, 119.0 + t * 136.0, 180.0 + t * 75.0)
    } else {
        let t = 1.0 - v; // 1 at 0 (white), 0 at +1 (full red)
        (214.0 + t * 41.0, 39.0 + t * 216.0, 40.0 + t * 215.0)
    };
    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
}
