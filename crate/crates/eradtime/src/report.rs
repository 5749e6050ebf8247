//! Static vector figures: a gap plot for one trajectory and the
//! effective-boundary sketch.
//!
//! Everything here is deterministic string assembly; no drawing library,
//! no display. Figures are SVG documents built from a tiny primitive set
//! (lines, polylines, polygons, circles, text) and a world-to-screen
//! frame with linear axes. Marker elements carry `class` attributes so
//! the documents stay machine-checkable.

use std::fs;
use std::path::Path;

use crate::dynamics::Trajectory;
use crate::eradication::CrossingReport;
use crate::rates::RateSchedule;
use crate::Result;

/// Accumulates SVG elements in insertion order.
pub struct SvgCanvas {
    width: f64,
    height: f64,
    body: Vec<String>,
}

/// Screen coordinates print with two decimals: sub-pixel on the default
/// canvas and stable across platforms.
fn px(v: f64) -> String {
    format!("{v:.2}")
}

/// Tick labels print with three decimals, trailing zeros trimmed.
fn tick(v: f64) -> String {
    let mut s = format!("{v:.3}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

impl SvgCanvas {
    pub fn new(width: f64, height: f64) -> Self {
        SvgCanvas { width, height, body: Vec::new() }
    }

    pub fn line(&mut self, a: (f64, f64), b: (f64, f64), style: &str) {
        self.body.push(format!(
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" {style}/>"#,
            px(a.0),
            px(a.1),
            px(b.0),
            px(b.1)
        ));
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], style: &str) {
        let coords: Vec<String> =
            points.iter().map(|p| format!("{},{}", px(p.0), px(p.1))).collect();
        self.body.push(format!(
            r#"<polyline points="{}" fill="none" {style}/>"#,
            coords.join(" ")
        ));
    }

    pub fn polygon(&mut self, points: &[(f64, f64)], style: &str) {
        let coords: Vec<String> =
            points.iter().map(|p| format!("{},{}", px(p.0), px(p.1))).collect();
        self.body
            .push(format!(r#"<polygon points="{}" {style}/>"#, coords.join(" ")));
    }

    pub fn circle(&mut self, center: (f64, f64), r: f64, style: &str) {
        self.body.push(format!(
            r#"<circle cx="{}" cy="{}" r="{}" {style}/>"#,
            px(center.0),
            px(center.1),
            px(r)
        ));
    }

    pub fn rect(&mut self, corner: (f64, f64), w: f64, h: f64, style: &str) {
        self.body.push(format!(
            r#"<rect x="{}" y="{}" width="{}" height="{}" {style}/>"#,
            px(corner.0),
            px(corner.1),
            px(w),
            px(h)
        ));
    }

    /// `anchor` is the SVG `text-anchor` value: start, middle, or end.
    pub fn text(&mut self, at: (f64, f64), size: f64, anchor: &str, content: &str) {
        let escaped = content.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
        self.body.push(format!(
            r#"<text x="{}" y="{}" font-size="{}" font-family="sans-serif" text-anchor="{anchor}">{escaped}</text>"#,
            px(at.0),
            px(at.1),
            px(size)
        ));
    }

    pub fn to_svg(&self) -> String {
        let mut out = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {} {}\" width=\"{}\" height=\"{}\">\n",
            px(self.width),
            px(self.height),
            px(self.width),
            px(self.height)
        );
        out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        for el in &self.body {
            out.push_str(el);
            out.push('\n');
        }
        out.push_str("</svg>\n");
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_svg())?;
        Ok(())
    }
}

/// Linear world-to-screen map with fixed margins and a y flip.
pub struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    left: f64,
    right: f64,
    top: f64,
    bottom: f64,
}

impl Frame {
    /// World box `(x0, x1, y0, y1)` on a `width` by `height` canvas.
    pub fn new(width: f64, height: f64, world: (f64, f64, f64, f64)) -> Self {
        Frame {
            x0: world.0,
            x1: world.1,
            y0: world.2,
            y1: world.3,
            left: 58.0,
            right: width - 16.0,
            top: 20.0,
            bottom: height - 42.0,
        }
    }

    pub fn sx(&self, x: f64) -> f64 {
        self.left + (x - self.x0) / (self.x1 - self.x0) * (self.right - self.left)
    }

    pub fn sy(&self, y: f64) -> f64 {
        self.bottom - (y - self.y0) / (self.y1 - self.y0) * (self.bottom - self.top)
    }

    pub fn map(&self, p: (f64, f64)) -> (f64, f64) {
        (self.sx(p.0), self.sy(p.1))
    }

    /// Axis box, five ticks per axis, and the two labels.
    pub fn draw_axes(&self, canvas: &mut SvgCanvas, x_label: &str, y_label: &str) {
        let axis = r#"stroke="black" stroke-width="1""#;
        canvas.line((self.left, self.top), (self.left, self.bottom), axis);
        canvas.line((self.left, self.bottom), (self.right, self.bottom), axis);
        for i in 0..=4 {
            let fx = self.x0 + (self.x1 - self.x0) * f64::from(i) / 4.0;
            let sx = self.sx(fx);
            canvas.line((sx, self.bottom), (sx, self.bottom + 4.0), axis);
            canvas.text((sx, self.bottom + 16.0), 11.0, "middle", &tick(fx));
            let fy = self.y0 + (self.y1 - self.y0) * f64::from(i) / 4.0;
            let sy = self.sy(fy);
            canvas.line((self.left - 4.0, sy), (self.left, sy), axis);
            canvas.text((self.left - 7.0, sy + 4.0), 11.0, "end", &tick(fy));
        }
        let mid_x = (self.left + self.right) / 2.0;
        canvas.text((mid_x, self.bottom + 32.0), 12.0, "middle", x_label);
        canvas.text((self.left, self.top - 7.0), 12.0, "start", y_label);
    }
}

const RED: &str = "#d62728";
const BLUE: &str = "#1f77b4";

/// Infected-curve plot with the threshold line, every crossing ticked,
/// and the two eradication times under distinct markers: a filled circle
/// where the path first commits below `mu`, an open square where it last
/// leaves `mu` behind.
pub fn figure_gap(traj: &Trajectory, report: &CrossingReport, path: &Path) -> Result<()> {
    let mut canvas = SvgCanvas::new(640.0, 420.0);
    let horizon = traj.horizon();
    let n = 600;
    let mut curve = Vec::with_capacity(n + 1);
    let mut i_max: f64 = report.mu;
    for k in 0..=n {
        let s = horizon * k as f64 / n as f64;
        let (_, i) = traj.eval(s)?;
        i_max = i_max.max(i);
        curve.push((s, i));
    }
    let frame = Frame::new(640.0, 420.0, (0.0, horizon, 0.0, i_max * 1.12));
    frame.draw_axes(&mut canvas, "elapsed time s", "infected fraction");

    let mu_y = frame.sy(report.mu);
    canvas.line(
        (frame.sx(0.0), mu_y),
        (frame.sx(horizon), mu_y),
        &format!(r#"stroke="{RED}" stroke-width="1" stroke-dasharray="6 4""#),
    );
    canvas.text(
        (frame.sx(horizon) - 4.0, mu_y - 5.0),
        11.0,
        "end",
        &format!("threshold {}", tick(report.mu)),
    );

    let screen: Vec<(f64, f64)> = curve.iter().map(|&p| frame.map(p)).collect();
    canvas.polyline(&screen, &format!(r#"stroke="{BLUE}" stroke-width="1.6""#));

    for c in &report.crossings {
        let (sx, sy) = frame.map((c.s, report.mu));
        canvas.line(
            (sx, sy - 5.0),
            (sx, sy + 5.0),
            &format!(r#"class="crossing-mark" stroke="{RED}" stroke-width="1.2""#),
        );
    }

    let (lx, ly) = frame.map((report.lower_time, report.mu));
    canvas.circle(
        (lx, ly),
        5.0,
        &format!(r#"class="lower-marker" fill="{BLUE}" stroke="black" stroke-width="1""#),
    );
    let (ux, uy) = frame.map((report.upper_time, report.mu));
    canvas.rect(
        (ux - 5.0, uy - 5.0),
        10.0,
        10.0,
        &format!(r#"class="upper-marker" fill="none" stroke="{RED}" stroke-width="1.8""#),
    );

    let gap = report.upper_time - report.lower_time;
    canvas.text(
        (frame.sx(0.0) + 8.0, frame.sy(i_max * 1.12) + 14.0),
        12.0,
        "start",
        &format!(
            "first entry {} (circle), last exit {} (square), gap {}",
            tick(report.lower_time),
            tick(report.upper_time),
            tick(gap)
        ),
    );
    canvas.write(path)
}

/// Effective-boundary sketch in the `xy`-plane: the initial-time slab is
/// shaded, and the two lateral pieces, the strip `y = mu0` up to the band
/// ceiling and the wall `x = 0`, are drawn bold.
pub fn figure_boundary(
    rates: &RateSchedule,
    mu0: f64,
    y_max: f64,
    path: &Path,
) -> Result<()> {
    let mut canvas = SvgCanvas::new(640.0, 420.0);
    let x_hi = rates.x_hi();
    let x_span = x_hi * 1.45;
    let frame = Frame::new(640.0, 420.0, (0.0, x_span, 0.0, y_max));
    frame.draw_axes(&mut canvas, "susceptible fraction x", "infected fraction y");

    let slab = [
        frame.map((0.0, mu0)),
        frame.map((x_hi, mu0)),
        frame.map((x_hi, y_max)),
        frame.map((0.0, y_max)),
    ];
    canvas.polygon(
        &slab,
        &format!(r#"class="initial-slab" fill="{RED}" fill-opacity="0.12" stroke="none""#),
    );

    canvas.line(
        frame.map((0.0, mu0)),
        frame.map((x_hi, mu0)),
        &format!(r#"class="strip-face" stroke="{RED}" stroke-width="3""#),
    );
    canvas.line(
        frame.map((0.0, mu0)),
        frame.map((0.0, y_max)),
        &format!(r#"class="axis-face" stroke="{RED}" stroke-width="3""#),
    );
    canvas.line(
        frame.map((x_hi, 0.0)),
        frame.map((x_hi, y_max)),
        r#"stroke="gray" stroke-width="1" stroke-dasharray="4 4""#,
    );

    canvas.text(
        (frame.sx(x_hi / 2.0), frame.sy(mu0) + 16.0),
        11.0,
        "middle",
        &format!("y = {} up to the band ceiling", tick(mu0)),
    );
    canvas.text((frame.sx(0.0) + 6.0, frame.sy(y_max * 0.6)), 11.0, "start", "x = 0");
    canvas.text(
        (frame.sx(x_hi) + 4.0, frame.sy(y_max) + 12.0),
        11.0,
        "start",
        &format!("band ceiling {}", tick(x_hi)),
    );
    canvas.text(
        (frame.sx(x_hi / 2.0), frame.sy((mu0 + y_max) / 2.0)),
        11.0,
        "middle",
        "initial-time slab",
    );
    canvas.write(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{flow, Datum};
    use crate::eradication::eradication_report;
    use crate::rates::{ControlSignal, RateKind, RateSchedule, Sinusoid};

    #[test]
    fn canvas_emits_a_well_formed_document() {
        let mut canvas = SvgCanvas::new(100.0, 50.0);
        canvas.line((0.0, 0.0), (10.0, 10.0), r#"stroke="black""#);
        canvas.text((5.0, 5.0), 10.0, "middle", "a < b & c");
        let doc = canvas.to_svg();
        assert!(doc.starts_with("<svg xmlns"));
        assert!(doc.ends_with("</svg>\n"));
        assert!(doc.contains("a &lt; b &amp; c"));
        assert!(doc.contains(r#"viewBox="0 0 100.00 50.00""#));
    }

    #[test]
    fn frame_maps_corners_to_margins_and_flips_y() {
        let frame = Frame::new(640.0, 420.0, (1.0, 3.0, 10.0, 30.0));
        assert_eq!(frame.map((1.0, 10.0)), (58.0, 378.0));
        assert_eq!(frame.map((3.0, 30.0)), (624.0, 20.0));
        assert!(frame.sy(10.0) > frame.sy(30.0));
        let (mx, my) = frame.map((2.0, 20.0));
        assert!((mx - (58.0 + 624.0) / 2.0).abs() < 1e-9);
        assert!((my - (378.0 + 20.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn tick_labels_trim_trailing_zeros() {
        assert_eq!(tick(0.5), "0.5");
        assert_eq!(tick(2.0), "2");
        assert_eq!(tick(0.125), "0.125");
        assert_eq!(tick(-0.0001), "0");
    }

    #[test]
    fn gap_figure_marks_every_crossing_once() {
        let rates = RateSchedule::new(
            RateKind::Sinusoidal {
                beta: Sinusoid { base: 0.4, amp: 0.0, freq: 1.0, phase: 0.0 },
                gamma: Sinusoid { base: 0.3, amp: 0.2, freq: 1.0, phase: 0.0 },
            },
            0.4,
            0.4,
            0.1,
            0.5,
        )
        .unwrap();
        let alpha = ControlSignal::constant(0.0);
        let datum = Datum::new(1.0, 0.05, 0.0).unwrap();
        let report = eradication_report(&rates, &alpha, &datum, 0.04).unwrap();
        assert!(report.crossings.len() >= 3);
        let traj =
            flow(&rates, &alpha, &datum, report.upper_time.max(1.0) * 1.15).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gap.svg");
        figure_gap(&traj, &report, &path).unwrap();
        let doc = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            doc.matches(r#"class="crossing-mark""#).count(),
            report.crossings.len()
        );
        assert_eq!(doc.matches(r#"class="lower-marker""#).count(), 1);
        assert_eq!(doc.matches(r#"class="upper-marker""#).count(), 1);
        assert!(doc.contains("threshold 0.04"));
    }

    #[test]
    fn boundary_sketch_draws_the_three_pieces() {
        let rates = RateSchedule::constant(0.5, 0.2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("boundary.svg");
        figure_boundary(&rates, 0.1, 0.5, &path).unwrap();
        let doc = std::fs::read_to_string(&path).unwrap();
        for class in ["initial-slab", "strip-face", "axis-face"] {
            assert_eq!(doc.matches(&format!(r#"class="{class}""#)).count(), 1, "{class}");
        }
        assert!(doc.contains("band ceiling 0.4"));
    }

    #[test]
    fn figures_are_deterministic() {
        let rates = RateSchedule::constant(0.5, 0.2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.svg");
        let b = dir.path().join("b.svg");
        figure_boundary(&rates, 0.1, 0.5, &a).unwrap();
        figure_boundary(&rates, 0.1, 0.5, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}
