//! Minimal SVG writer for the result plots.
//!
//! Numbers are written with 6 significant digits. Field arrows are drawn in
//! data coordinates inside a group carrying the data-to-pixel transform, so
//! their endpoints can be read back directly.

use std::fmt::Write as _;

use rvf_core::geom::{Bounds, Vec2};

/// Plot-time scaling of field arrows.
pub const ARROW_SCALE: f64 = 0.2;

pub const SIGNIFICANT: &str = "#c0392b";
pub const NOT_SIGNIFICANT: &str = "#9aa5ad";
pub const UNRESOLVED: &str = "#b0b0b0";
pub const PALETTE: [&str; 8] = ["#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22"];

/// `x` rounded to 6 significant digits, shortest form.
pub fn num(x: f64) -> String {
    if !x.is_finite() {
        return "0".into();
    }
    let r: f64 = format!("{x:.5e}").parse().expect("formatted float");
    if r == 0.0 {
        "0".into()
    } else {
        format!("{r}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Pixel layout of a data rectangle.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub width: f64,
    pub height: f64,
    pub left: f64,
    pub right: f64,
    pub top: f64,
    pub bottom: f64,
    pub data: Bounds,
}

impl Frame {
    pub fn new(data: Bounds) -> Self {
        Frame { width: 640.0, height: 520.0, left: 64.0, right: 20.0, top: 36.0, bottom: 52.0, data }
    }

    fn sx(&self) -> f64 {
        (self.width - self.left - self.right) / self.data.width()
    }

    fn sy(&self) -> f64 {
        (self.height - self.top - self.bottom) / self.data.height()
    }

    pub fn px(&self, x: f64) -> f64 {
        self.left + (x - self.data.min.x) * self.sx()
    }

    pub fn py(&self, y: f64) -> f64 {
        self.height - self.bottom - (y - self.data.min.y) * self.sy()
    }

    pub fn p(&self, z: Vec2) -> (f64, f64) {
        (self.px(z.x), self.py(z.y))
    }

    /// `matrix(a b c d e f)` mapping data to pixel coordinates.
    pub fn transform(&self) -> String {
        let (sx, sy) = (self.sx(), self.sy());
        format!(
            "matrix({} 0 0 {} {} {})",
            num(sx),
            num(-sy),
            num(self.left - self.data.min.x * sx),
            num(self.height - self.bottom + self.data.min.y * sy)
        )
    }
}

/// Bounds of `points` with a relative margin; degenerate extents are widened.
pub fn padded_bounds(points: impl IntoIterator<Item = Vec2>, pad: f64) -> Bounds {
    let pts: Vec<Vec2> = points.into_iter().filter(|p| p.is_finite()).collect();
    let b = Bounds::of_points(&pts).unwrap_or(Bounds { min: Vec2::new(0.0, 0.0), max: Vec2::new(1.0, 1.0) });
    let w = if b.width() > 0.0 { b.width() } else { 1.0 };
    let h = if b.height() > 0.0 { b.height() } else { 1.0 };
    b.expand(pad * w, pad * h)
}

/// About five round tick values inside `[lo, hi]`.
pub fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        return vec![lo];
    }
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

pub struct Svg {
    frame: Frame,
    body: String,
}

impl Svg {
    pub fn new(frame: Frame, title: &str) -> Self {
        let mut body = String::new();
        let _ = writeln!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#,
            w = num(frame.width),
            h = num(frame.height)
        );
        let _ = writeln!(body, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            body,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
            num(frame.width / 2.0),
            esc(title)
        );
        Svg { frame, body }
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn axes(&mut self, xlabel: &str, ylabel: &str) {
        let f = self.frame;
        let (x0, x1) = (f.px(f.data.min.x), f.px(f.data.max.x));
        let (y0, y1) = (f.py(f.data.min.y), f.py(f.data.max.y));
        let _ = writeln!(
            self.body,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black" stroke-width="1"/>"#,
            num(x0),
            num(y1),
            num(x1 - x0),
            num(y0 - y1)
        );
        self.body.push_str("<g class=\"ticks\" stroke=\"black\">\n");
        for t in ticks(f.data.min.x, f.data.max.x) {
            let x = f.px(t);
            let _ = writeln!(
                self.body,
                r#"<line x1="{x}" y1="{y}" x2="{x}" y2="{y2}"/><text x="{x}" y="{ty}" text-anchor="middle" stroke="none">{l}</text>"#,
                x = num(x),
                y = num(y0),
                y2 = num(y0 + 4.0),
                ty = num(y0 + 16.0),
                l = num(t)
            );
        }
        for t in ticks(f.data.min.y, f.data.max.y) {
            let y = f.py(t);
            let _ = writeln!(
                self.body,
                r#"<line x1="{x}" y1="{y}" x2="{x2}" y2="{y}"/><text x="{tx}" y="{ty}" text-anchor="end" stroke="none">{l}</text>"#,
                x = num(x0),
                x2 = num(x0 - 4.0),
                y = num(y),
                tx = num(x0 - 6.0),
                ty = num(y + 4.0),
                l = num(t)
            );
        }
        self.body.push_str("</g>\n");
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            num((x0 + x1) / 2.0),
            num(f.height - 12.0),
            esc(xlabel)
        );
        let _ = writeln!(
            self.body,
            r#"<text x="14" y="{y}" text-anchor="middle" transform="rotate(-90 14 {y})">{}</text>"#,
            esc(ylabel),
            y = num((y0 + y1) / 2.0)
        );
    }

    pub fn polyline(&mut self, pts: &[Vec2], stroke: &str, width: f64, dash: Option<&str>) {
        let f = self.frame;
        let coords: Vec<String> = pts
            .iter()
            .filter(|p| p.is_finite())
            .map(|&p| {
                let (x, y) = f.p(p);
                format!("{},{}", num(x), num(y))
            })
            .collect();
        if coords.len() < 2 {
            return;
        }
        let dash = dash.map(|d| format!(r#" stroke-dasharray="{d}""#)).unwrap_or_default();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{}"{dash}/>"#,
            coords.join(" "),
            num(width)
        );
    }

    /// Shaded band between two curves sharing `x`.
    pub fn band(&mut self, x: &[f64], lo: &[f64], hi: &[f64], fill: &str) {
        let f = self.frame;
        let mut coords = Vec::new();
        for i in 0..x.len() {
            if lo[i].is_finite() && x[i].is_finite() {
                coords.push(format!("{},{}", num(f.px(x[i])), num(f.py(lo[i]))));
            }
        }
        for i in (0..x.len()).rev() {
            if hi[i].is_finite() && x[i].is_finite() {
                coords.push(format!("{},{}", num(f.px(x[i])), num(f.py(hi[i]))));
            }
        }
        if coords.len() < 3 {
            return;
        }
        let _ = writeln!(self.body, r#"<polygon points="{}" fill="{fill}" fill-opacity="0.25" stroke="none"/>"#, coords.join(" "));
    }

    pub fn points(&mut self, pts: &[Vec2], fill: &str, r: f64, class: &str) {
        let f = self.frame;
        let _ = writeln!(self.body, r#"<g class="{class}" fill="{fill}" fill-opacity="0.6">"#);
        for &p in pts.iter().filter(|p| p.is_finite()) {
            let (x, y) = f.p(p);
            let _ = writeln!(self.body, r#"<circle cx="{}" cy="{}" r="{}"/>"#, num(x), num(y), num(r));
        }
        self.body.push_str("</g>\n");
    }

    /// Circle of data radius `r` around `c`, an ellipse on screen.
    pub fn data_circle(&mut self, c: Vec2, r: f64, stroke: &str, label: &str) {
        let f = self.frame;
        let (x, y) = f.p(c);
        let rx = f.px(c.x + r) - x;
        let ry = y - f.py(c.y + r);
        let _ = writeln!(
            self.body,
            r#"<ellipse class="basin" cx="{}" cy="{}" rx="{}" ry="{}" fill="none" stroke="{stroke}" stroke-width="2"/>"#,
            num(x),
            num(y),
            num(rx),
            num(ry)
        );
        self.text(Vec2::new(c.x, c.y + r), label, "middle", -4.0);
    }

    pub fn text(&mut self, at: Vec2, s: &str, anchor: &str, dy: f64) {
        let (x, y) = self.frame.p(at);
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" text-anchor="{anchor}">{}</text>"#,
            num(x),
            num(y + dy),
            esc(s)
        );
    }

    /// Field arrows scaled by [`ARROW_SCALE`]. Shafts are lines in data
    /// coordinates; heads are drawn in pixel space.
    pub fn arrows(&mut self, arrows: &[(Vec2, Vec2, bool)]) {
        let f = self.frame;
        let _ = writeln!(self.body, r#"<g class="arrows" transform="{}" stroke-width="1.2">"#, f.transform());
        for &(z, d, sig) in arrows {
            let tip = z + d * ARROW_SCALE;
            let _ = writeln!(
                self.body,
                r#"<line class="arrow" x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}" vector-effect="non-scaling-stroke"/>"#,
                num(z.x),
                num(z.y),
                num(tip.x),
                num(tip.y),
                if sig { SIGNIFICANT } else { NOT_SIGNIFICANT }
            );
        }
        self.body.push_str("</g>\n<g class=\"heads\">\n");
        for &(z, d, sig) in arrows {
            let (x0, y0) = f.p(z);
            let (x1, y1) = f.p(z + d * ARROW_SCALE);
            let (ux, uy) = (x1 - x0, y1 - y0);
            let len = (ux * ux + uy * uy).sqrt();
            if !(len > 1.0) {
                continue;
            }
            let s = len.min(12.0) * 0.35;
            let (ux, uy) = (ux / len, uy / len);
            let a = (x1 - s * ux + 0.5 * s * uy, y1 - s * uy - 0.5 * s * ux);
            let b = (x1 - s * ux - 0.5 * s * uy, y1 - s * uy + 0.5 * s * ux);
            let _ = writeln!(
                self.body,
                r#"<polygon points="{},{} {},{} {},{}" fill="{}"/>"#,
                num(x1),
                num(y1),
                num(a.0),
                num(a.1),
                num(b.0),
                num(b.1),
                if sig { SIGNIFICANT } else { NOT_SIGNIFICANT }
            );
        }
        self.body.push_str("</g>\n");
    }

    /// Legend entries `(colour, text)` stacked in the top-left corner.
    pub fn legend(&mut self, entries: &[(&str, String)]) {
        let f = self.frame;
        for (i, (c, t)) in entries.iter().enumerate() {
            let y = f.top + 14.0 + 14.0 * i as f64;
            let _ = writeln!(
                self.body,
                r#"<rect x="{}" y="{}" width="10" height="10" fill="{c}"/><text x="{}" y="{}">{}</text>"#,
                num(f.left + 8.0),
                num(y - 9.0),
                num(f.left + 22.0),
                num(y),
                esc(t)
            );
        }
    }

    pub fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

/// A line chart of several series over a shared x axis.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, x: &[f64], series: &[(&str, &[f64])], band: Option<(&[f64], &[f64])>) -> String {
    let mut all: Vec<Vec2> = Vec::new();
    for (_, ys) in series {
        all.extend(x.iter().zip(ys.iter()).map(|(&a, &b)| Vec2::new(a, b)));
    }
    if let Some((lo, hi)) = band {
        all.extend(x.iter().zip(lo).map(|(&a, &b)| Vec2::new(a, b)));
        all.extend(x.iter().zip(hi).map(|(&a, &b)| Vec2::new(a, b)));
    }
    let mut svg = Svg::new(Frame::new(padded_bounds(all, 0.05)), title);
    svg.axes(xlabel, ylabel);
    if let Some((lo, hi)) = band {
        svg.band(x, lo, hi, PALETTE[0]);
    }
    let mut legend = Vec::new();
    for (i, (name, ys)) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let pts: Vec<Vec2> = x.iter().zip(ys.iter()).map(|(&a, &b)| Vec2::new(a, b)).collect();
        svg.polyline(&pts, c, 1.8, None);
        legend.push((c, name.to_string()));
    }
    if series.len() > 1 {
        svg.legend(&legend);
    }
    svg.finish()
}
