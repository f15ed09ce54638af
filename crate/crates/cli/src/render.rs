//! Static SVG output built from raw strings.
//!
//! Everything here is a pure function of its inputs: coordinates are
//! formatted with a fixed precision, layers are emitted in a fixed
//! order, and no timestamps or random ids appear anywhere, so the same
//! scene always serializes to the same bytes. Curves are clipped to the
//! viewport by splitting them into visible runs rather than relying on
//! the SVG clip machinery, which keeps the output self-describing.

use std::fmt::Write as _;
use tolerance_core::linalg::Vec2;

pub const MAP_COLORS: &[(&str, &str)] = &[
    ("tolerance", "#fdb863"),
    ("no-tolerance", "#b2abd2"),
    ("inconclusive", "#e0e0e0"),
    ("left-of-reference", "#f6f6f6"),
    ("outside-basin", "#bdbdbd"),
    ("error", "#ff3dc8"),
];

pub const TRAJECTORY_COLORS: &[&str] = &["#1b7837", "#2166ac", "#7b3294", "#e66101", "#35978f"];
pub const REFERENCE_COLOR: &str = "#b2182b";
pub const ISOCLINE_COLOR: &str = "#9ecae1";
pub const REGION_COLOR: &str = "#08519c";
pub const INHIBITION_COLOR: &str = "#6a51a3";

pub fn map_color(label: &str) -> &'static str {
    MAP_COLORS
        .iter()
        .find(|(k, _)| *k == label)
        .map(|(_, c)| *c)
        .unwrap_or("#ff3dc8")
}

/// World-to-screen mapping for a fixed pixel canvas with a margin for
/// axes and labels.
#[derive(Clone, Copy, Debug)]
pub struct Viewport {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub width: f64,
    pub height: f64,
    pub pad: f64,
}

impl Viewport {
    pub fn new(bounds: (f64, f64, f64, f64), width: f64, height: f64) -> Viewport {
        Viewport {
            x0: bounds.0,
            x1: bounds.1,
            y0: bounds.2,
            y1: bounds.3,
            width,
            height,
            pad: 44.0,
        }
    }

    pub fn sx(&self, x: f64) -> f64 {
        self.pad + (x - self.x0) / (self.x1 - self.x0) * (self.width - 2.0 * self.pad)
    }

    pub fn sy(&self, y: f64) -> f64 {
        self.height - self.pad - (y - self.y0) / (self.y1 - self.y0) * (self.height - 2.0 * self.pad)
    }

    fn contains(&self, p: Vec2) -> bool {
        let mx = (self.x1 - self.x0) * 0.001;
        let my = (self.y1 - self.y0) * 0.001;
        p.is_finite()
            && p.x >= self.x0 - mx
            && p.x <= self.x1 + mx
            && p.y >= self.y0 - my
            && p.y <= self.y1 + my
    }
}

/// Screen coordinate with two decimals: sub-pixel resolution, stable
/// formatting.
fn px(v: f64) -> String {
    format!("{v:.2}")
}

/// Tick label: round to six decimals, then print the shortest form.
fn tick(v: f64) -> String {
    let r = (v * 1e6).round() / 1e6;
    if r == 0.0 {
        "0".to_string()
    } else {
        format!("{r}")
    }
}

pub struct Document {
    body: String,
    width: f64,
    height: f64,
}

impl Document {
    pub fn new(width: f64, height: f64) -> Document {
        Document {
            body: String::new(),
            width,
            height,
        }
    }

    pub fn finish(self) -> String {
        format!(
            concat!(
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
                "viewBox=\"0 0 {w} {h}\">\n",
                "<rect width=\"{w}\" height=\"{h}\" fill=\"#ffffff\"/>\n",
                "{body}</svg>\n"
            ),
            w = px(self.width),
            h = px(self.height),
            body = self.body,
        )
    }

    /// Filled world-coordinate rectangle (map cells, strips).
    pub fn cell(&mut self, vp: &Viewport, x0: f64, x1: f64, y0: f64, y1: f64, fill: &str) {
        let (sx, sy) = (vp.sx(x0), vp.sy(y1));
        let (w, h) = (vp.sx(x1) - sx, vp.sy(y0) - sy);
        let _ = writeln!(
            self.body,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{fill}\"/>",
            px(sx),
            px(sy),
            px(w.max(0.0)),
            px(h.max(0.0)),
        );
    }

    pub fn rect_outline(
        &mut self,
        vp: &Viewport,
        x0: f64,
        x1: f64,
        y0: f64,
        y1: f64,
        stroke: &str,
        dash: Option<&str>,
    ) {
        let (sx, sy) = (vp.sx(x0), vp.sy(y1));
        let (w, h) = (vp.sx(x1) - sx, vp.sy(y0) - sy);
        let dash = dash
            .map(|d| format!(" stroke-dasharray=\"{d}\""))
            .unwrap_or_default();
        let _ = writeln!(
            self.body,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" \
             stroke=\"{stroke}\" stroke-width=\"1.2\"{dash}/>",
            px(sx),
            px(sy),
            px(w.max(0.0)),
            px(h.max(0.0)),
        );
    }

    /// Polyline through world points, split into runs that stay inside
    /// the viewport.
    pub fn polyline(
        &mut self,
        vp: &Viewport,
        pts: &[Vec2],
        stroke: &str,
        width: f64,
        dash: Option<&str>,
    ) {
        let mut d = String::new();
        let mut run = false;
        for &p in pts {
            if !vp.contains(p) {
                run = false;
                continue;
            }
            let cmd = if run { 'L' } else { 'M' };
            let _ = write!(d, "{cmd}{} {} ", px(vp.sx(p.x)), px(vp.sy(p.y)));
            run = true;
        }
        if d.is_empty() {
            return;
        }
        let dash = dash
            .map(|s| format!(" stroke-dasharray=\"{s}\""))
            .unwrap_or_default();
        let _ = writeln!(
            self.body,
            "<path d=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"{}\"{dash}/>",
            d.trim_end(),
            px(width),
        );
    }

    /// Closed filled polygon (excursion region).
    pub fn polygon(&mut self, vp: &Viewport, pts: &[Vec2], fill: &str, opacity: f64, stroke: &str) {
        if pts.len() < 3 {
            return;
        }
        let mut d = String::new();
        for (i, &p) in pts.iter().enumerate() {
            let cmd = if i == 0 { 'M' } else { 'L' };
            let _ = write!(d, "{cmd}{} {} ", px(vp.sx(p.x)), px(vp.sy(p.y)));
        }
        let _ = writeln!(
            self.body,
            "<path d=\"{}Z\" fill=\"{fill}\" fill-opacity=\"{opacity}\" \
             stroke=\"{stroke}\" stroke-width=\"1.2\"/>",
            d,
        );
    }

    /// Disconnected world-coordinate segments merged into one path
    /// (level-set output).
    pub fn segments(&mut self, vp: &Viewport, segs: &[(Vec2, Vec2)], stroke: &str, dash: Option<&str>) {
        if segs.is_empty() {
            return;
        }
        let mut d = String::new();
        for &(a, b) in segs {
            if !vp.contains(a) || !vp.contains(b) {
                continue;
            }
            let _ = write!(
                d,
                "M{} {} L{} {} ",
                px(vp.sx(a.x)),
                px(vp.sy(a.y)),
                px(vp.sx(b.x)),
                px(vp.sy(b.y)),
            );
        }
        if d.is_empty() {
            return;
        }
        let dash = dash
            .map(|s| format!(" stroke-dasharray=\"{s}\""))
            .unwrap_or_default();
        let _ = writeln!(
            self.body,
            "<path d=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"1\"{dash}/>",
            d.trim_end(),
        );
    }

    pub fn marker(&mut self, vp: &Viewport, p: Vec2, radius: f64, fill: &str, title: &str) {
        if !vp.contains(p) {
            return;
        }
        let _ = writeln!(
            self.body,
            "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"{fill}\" stroke=\"#000000\" \
             stroke-width=\"1\"><title>{title}</title></circle>",
            px(vp.sx(p.x)),
            px(vp.sy(p.y)),
            px(radius),
        );
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, content: &str) {
        let _ = writeln!(
            self.body,
            "<text x=\"{}\" y=\"{}\" font-size=\"{}\" font-family=\"monospace\" \
             text-anchor=\"{anchor}\" fill=\"#222222\">{content}</text>",
            px(x),
            px(y),
            px(size),
        );
    }

    /// Frame, five ticks per axis, and numeric labels.
    pub fn axes(&mut self, vp: &Viewport) {
        let (l, r) = (vp.pad, vp.width - vp.pad);
        let (t, b) = (vp.pad, vp.height - vp.pad);
        let _ = writeln!(
            self.body,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" \
             stroke=\"#555555\" stroke-width=\"1\"/>",
            px(l),
            px(t),
            px(r - l),
            px(b - t),
        );
        for k in 0..=4 {
            let fx = vp.x0 + (vp.x1 - vp.x0) * k as f64 / 4.0;
            let sx = vp.sx(fx);
            let _ = writeln!(
                self.body,
                "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"#555555\" \
                 stroke-width=\"1\"/>",
                px(sx),
                px(b),
                px(b + 4.0),
            );
            self.text(sx, b + 16.0, 11.0, "middle", &tick(fx));
            let fy = vp.y0 + (vp.y1 - vp.y0) * k as f64 / 4.0;
            let sy = vp.sy(fy);
            let _ = writeln!(
                self.body,
                "<line x1=\"{1}\" y1=\"{0}\" x2=\"{2}\" y2=\"{0}\" stroke=\"#555555\" \
                 stroke-width=\"1\"/>",
                px(sy),
                px(l - 4.0),
                px(l),
            );
            self.text(l - 7.0, sy + 4.0, 11.0, "end", &tick(fy));
        }
    }

    /// Color legend in the top-right corner.
    pub fn legend(&mut self, vp: &Viewport, entries: &[(String, String)]) {
        let x = vp.width - vp.pad - 150.0;
        for (i, (color, label)) in entries.iter().enumerate() {
            let y = vp.pad + 10.0 + 16.0 * i as f64;
            let _ = writeln!(
                self.body,
                "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\" \
                 stroke=\"#555555\" stroke-width=\"0.5\"/>",
                px(x),
                px(y - 9.0),
            );
            self.text(x + 15.0, y, 11.0, "start", label);
        }
    }
}

/// Zero level set of a scalar field over a uniform grid, as a list of
/// world-coordinate segments. Cells where the field fails to evaluate
/// are skipped; ambiguous saddle cells are resolved by the sign at the
/// cell center, so the output is a function of the field alone.
pub fn level_segments(
    field: &dyn Fn(Vec2) -> Option<f64>,
    bounds: (f64, f64, f64, f64),
    nx: usize,
    ny: usize,
) -> Vec<(Vec2, Vec2)> {
    let (x0, x1, y0, y1) = bounds;
    let nx = nx.max(2);
    let ny = ny.max(2);
    let gx = |i: usize| x0 + (x1 - x0) * i as f64 / nx as f64;
    let gy = |j: usize| y0 + (y1 - y0) * j as f64 / ny as f64;
    let mut values = vec![None; (nx + 1) * (ny + 1)];
    for j in 0..=ny {
        for i in 0..=nx {
            values[j * (nx + 1) + i] =
                field(Vec2::new(gx(i), gy(j))).filter(|v| v.is_finite());
        }
    }
    let mut segs = Vec::new();
    // Corner order: 0 bottom-left, 1 bottom-right, 2 top-right, 3 top-left.
    for j in 0..ny {
        for i in 0..nx {
            let c = [
                values[j * (nx + 1) + i],
                values[j * (nx + 1) + i + 1],
                values[(j + 1) * (nx + 1) + i + 1],
                values[(j + 1) * (nx + 1) + i],
            ];
            let Some(v) = c[0].zip(c[1]).zip(c[2].zip(c[3])) else {
                continue;
            };
            let v = [v.0 .0, v.0 .1, v.1 .0, v.1 .1];
            let corner = [
                Vec2::new(gx(i), gy(j)),
                Vec2::new(gx(i + 1), gy(j)),
                Vec2::new(gx(i + 1), gy(j + 1)),
                Vec2::new(gx(i), gy(j + 1)),
            ];
            let mut code = 0usize;
            for (k, val) in v.iter().enumerate() {
                if *val > 0.0 {
                    code |= 1 << k;
                }
            }
            if code == 0 || code == 15 {
                continue;
            }
            // Zero crossing on edge (a, b) by linear interpolation.
            let cross = |a: usize, b: usize| -> Vec2 {
                let (va, vb) = (v[a], v[b]);
                let t = if (vb - va).abs() < f64::MIN_POSITIVE {
                    0.5
                } else {
                    (va / (va - vb)).clamp(0.0, 1.0)
                };
                Vec2::new(
                    corner[a].x + (corner[b].x - corner[a].x) * t,
                    corner[a].y + (corner[b].y - corner[a].y) * t,
                )
            };
            // Edges: 0 bottom (0-1), 1 right (1-2), 2 top (2-3), 3 left (3-0).
            let edge = |e: usize| match e {
                0 => cross(0, 1),
                1 => cross(1, 2),
                2 => cross(2, 3),
                _ => cross(3, 0),
            };
            let mut emit = |a: usize, b: usize| segs.push((edge(a), edge(b)));
            match code {
                1 | 14 => emit(3, 0),
                2 | 13 => emit(0, 1),
                4 | 11 => emit(1, 2),
                8 | 7 => emit(2, 3),
                3 | 12 => emit(3, 1),
                6 | 9 => emit(0, 2),
                5 | 10 => {
                    let center = field(Vec2::new(
                        0.5 * (gx(i) + gx(i + 1)),
                        0.5 * (gy(j) + gy(j + 1)),
                    ))
                    .filter(|w| w.is_finite())
                    .unwrap_or(0.0);
                    let positive_pair = (code == 5) == (center > 0.0);
                    if positive_pair {
                        // The diagonal corners connect through the center.
                        emit(3, 2);
                        emit(0, 1);
                    } else {
                        emit(3, 0);
                        emit(1, 2);
                    }
                }
                _ => {}
            }
        }
    }
    segs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_segments_trace_a_circle() {
        let f = |p: Vec2| Some(p.x * p.x + p.y * p.y - 1.0);
        let segs = level_segments(&f, (-2.0, 2.0, -2.0, 2.0), 64, 64);
        assert!(segs.len() > 100);
        for (a, b) in &segs {
            for p in [a, b] {
                let r = p.norm();
                assert!((r - 1.0).abs() < 0.05, "point {p} off the unit circle");
            }
        }
    }

    #[test]
    fn level_segments_skip_failed_cells() {
        let f = |p: Vec2| {
            if p.x < 0.0 {
                None
            } else {
                Some(p.y - 0.5)
            }
        };
        let segs = level_segments(&f, (-1.0, 1.0, 0.0, 1.0), 8, 8);
        assert!(!segs.is_empty());
        for (a, b) in &segs {
            assert!(a.x >= 0.0 && b.x >= 0.0);
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let draw = || {
            let vp = Viewport::new((0.0, 1.0, 0.0, 1.0), 300.0, 200.0);
            let mut doc = Document::new(300.0, 200.0);
            doc.axes(&vp);
            doc.polyline(
                &vp,
                &[Vec2::new(0.1, 0.1), Vec2::new(0.9, 0.8)],
                "#000000",
                1.5,
                None,
            );
            doc.finish()
        };
        assert_eq!(draw(), draw());
        assert!(draw().starts_with("<svg "));
    }
}
