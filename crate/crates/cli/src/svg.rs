//! Hand-written SVG: map outlines, trajectories with robot outlines and safety
//! balls, and per-location error heat maps.

use std::fmt::Write as _;

use lsbnav::geometry::{build_lsb, transform_boundary, Aabb, ObstacleSet, RobotShape, Vec2};
use lsbnav::net::LocationError;
use lsbnav::sim::TrajectoryLog;

const PX_PER_M: f64 = 120.0;
const MARGIN: f64 = 20.0;

/// World-to-pixel mapping with `y` pointing up.
struct Canvas {
    bounds: Aabb,
    body: String,
}

impl Canvas {
    fn new(bounds: Aabb) -> Self {
        Self { bounds, body: String::new() }
    }

    fn px(&self, p: Vec2) -> (f64, f64) {
        (MARGIN + (p.x - self.bounds.min.x) * PX_PER_M, MARGIN + (self.bounds.max.y - p.y) * PX_PER_M)
    }

    fn width(&self) -> f64 {
        2.0 * MARGIN + self.bounds.width() * PX_PER_M
    }

    fn height(&self) -> f64 {
        2.0 * MARGIN + self.bounds.height() * PX_PER_M
    }

    fn points(&self, pts: &[Vec2]) -> String {
        let mut s = String::new();
        for (i, p) in pts.iter().enumerate() {
            let (x, y) = self.px(*p);
            let sep = if i == 0 { "" } else { " " };
            let _ = write!(s, "{sep}{x:.2},{y:.2}");
        }
        s
    }

    fn polygon(&mut self, pts: &[Vec2], style: &str) {
        let p = self.points(pts);
        let _ = writeln!(self.body, r#"<polygon points="{p}" {style}/>"#);
    }

    fn polyline(&mut self, pts: &[Vec2], style: &str) {
        let p = self.points(pts);
        let _ = writeln!(self.body, r#"<polyline points="{p}" fill="none" {style}/>"#);
    }

    fn circle(&mut self, c: Vec2, r_m: f64, style: &str) {
        let (x, y) = self.px(c);
        let r = r_m * PX_PER_M;
        let _ = writeln!(self.body, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r:.2}" {style}/>"#);
    }

    fn text(&mut self, x: f64, y: f64, s: &str) {
        let _ = writeln!(self.body, r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="12">{s}</text>"#);
    }

    fn obstacles(&mut self, obs: &ObstacleSet) {
        for o in obs.obstacles() {
            self.polygon(o.points(), r##"fill="#b0b0b0" stroke="#404040" stroke-width="1""##);
        }
    }

    fn finish(self) -> String {
        let (w, h) = (self.width(), self.height());
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.2} {h:.2}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body
        )
    }
}

/// Linear ramp from blue (`t = 0`) through yellow to red (`t = 1`).
pub fn ramp(t: f64) -> (u8, u8, u8) {
    let t = if t.is_nan() { 1.0 } else { t.clamp(0.0, 1.0) };
    let lerp = |a: f64, b: f64, u: f64| (a + (b - a) * u).round() as u8;
    if t < 0.5 {
        let u = t * 2.0;
        (lerp(40.0, 250.0, u), lerp(80.0, 220.0, u), lerp(220.0, 60.0, u))
    } else {
        let u = (t - 0.5) * 2.0;
        (lerp(250.0, 210.0, u), lerp(220.0, 30.0, u), lerp(60.0, 30.0, u))
    }
}

/// Trajectory over the map. With a shape, the robot outline and its local
/// safety ball are drawn every `every` steps and at the final record.
pub fn trajectory(obs: &ObstacleSet, log: &TrajectoryLog, shape: Option<&RobotShape>, every: usize) -> String {
    let mut c = Canvas::new(*obs.world_bounds());
    c.obstacles(obs);
    let path: Vec<Vec2> = log.records.iter().map(|r| Vec2::new(r.state.x, r.state.y)).collect();
    if let Some(shape) = shape {
        let last = log.records.len().saturating_sub(1);
        for (i, r) in log.records.iter().enumerate() {
            if i % every.max(1) != 0 && i != last {
                continue;
            }
            let cfg = r.state.configuration();
            let outline = transform_boundary(shape, &cfg);
            let stroke = if r.sweep_ok { "#1f4e9c" } else { "#d02020" };
            c.polygon(outline.points(), &format!(r#"fill="none" stroke="{stroke}" stroke-width="1""#));
            let ball = build_lsb(shape, &cfg, r.d_pred);
            if ball.is_valid() {
                c.circle(ball.center, ball.radius, r##"fill="#2ca02c" fill-opacity="0.12" stroke="#2ca02c" stroke-width="0.5""##);
            }
        }
    }
    if path.len() > 1 {
        c.polyline(&path, r##"stroke="#e07000" stroke-width="2""##);
    }
    if let (Some(a), Some(b)) = (path.first(), path.last()) {
        c.circle(*a, 0.04, r##"fill="#1f4e9c""##);
        c.circle(*b, 0.04, r##"fill="#d02020""##);
    }
    c.finish()
}

/// Per-location MSE heat map; colors run linearly from 0 to `vmax`
/// (the largest location MSE when `None`).
pub fn heatmap(obs: Option<&ObstacleSet>, locations: &[LocationError], vmax: Option<f64>) -> String {
    let bounds = match obs {
        Some(o) => *o.world_bounds(),
        None => {
            let pts: Vec<Vec2> = locations.iter().map(|l| Vec2::new(l.x, l.y)).collect();
            if pts.is_empty() {
                Aabb::new(Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0)).expect("unit box")
            } else {
                bounding(&pts)
            }
        }
    };
    let mut c = Canvas::new(bounds);
    if let Some(o) = obs {
        c.obstacles(o);
    }
    let top = vmax.unwrap_or_else(|| locations.iter().map(|l| l.mse).fold(0.0, f64::max));
    let area = bounds.width() * bounds.height();
    let radius = 0.5 * (area / locations.len().max(1) as f64).sqrt();
    for l in locations {
        let t = if top > 0.0 { l.mse / top } else { 0.0 };
        let (r, g, b) = ramp(t);
        c.circle(Vec2::new(l.x, l.y), radius, &format!(r#"fill="rgb({r},{g},{b})" fill-opacity="0.85""#));
    }
    // Legend: ramp bar along the bottom margin.
    let steps = 20;
    let (x0, y0) = (MARGIN, c.height() - MARGIN + 4.0);
    let bar = (c.width() - 2.0 * MARGIN) * 0.5;
    for k in 0..steps {
        let (r, g, b) = ramp(k as f64 / (steps - 1) as f64);
        let x = x0 + bar * k as f64 / steps as f64;
        let w = bar / steps as f64;
        let _ = writeln!(c.body, r#"<rect x="{x:.2}" y="{y0:.2}" width="{w:.2}" height="8" fill="rgb({r},{g},{b})"/>"#);
    }
    c.text(x0 + bar + 6.0, y0 + 8.0, &format!("0 .. {top:.3e} m² (per-location MSE)"));
    c.finish()
}

fn bounding(pts: &[Vec2]) -> Aabb {
    let (mut lo, mut hi) = (pts[0], pts[0]);
    for p in pts {
        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let pad = 0.05;
    Aabb::new(Vec2::new(lo.x - pad, lo.y - pad), Vec2::new(hi.x + pad, hi.y + pad)).expect("padded box is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), (40, 80, 220));
        assert_eq!(ramp(1.0), (210, 30, 30));
        assert_eq!(ramp(7.0), ramp(1.0));
        assert_eq!(ramp(-1.0), ramp(0.0));
    }

    #[test]
    fn heatmap_has_one_circle_per_location() {
        let locs = vec![
            LocationError { x: 0.0, y: 0.0, mse: 0.0, count: 2 },
            LocationError { x: 1.0, y: 1.0, mse: 0.02, count: 2 },
        ];
        let svg = heatmap(None, &locs, Some(0.01));
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("rgb(210,30,30)"));
    }
}
