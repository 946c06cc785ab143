//! Boundary-sampled planar geometry.
//!
//! Robots and obstacles are represented only by ordered samples along their
//! closed boundaries. Clearance, penetration, extreme-point anchoring and the
//! swept-motion audit all operate on those samples.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default spacing between consecutive boundary samples, in meters.
pub const DEFAULT_MAX_GAP: f64 = 0.01;

/// Points closer than this to a boundary segment count as on the boundary.
const ON_BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("boundary needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("max_gap must be positive and finite, got {0}")]
    BadGap(f64),
    #[error("boundary gap {gap:.6} between samples {index} and its successor exceeds max_gap {max_gap:.6}")]
    GapExceeded { index: usize, gap: f64, max_gap: f64 },
    #[error("boundary edges {0} and {1} intersect")]
    SelfIntersecting(usize, usize),
    #[error("boundary point ({x}, {y}) lies outside the world bounds")]
    OutOfBounds { x: f64, y: f64 },
    #[error("non-finite coordinate in boundary")]
    NonFinite,
    #[error("degenerate world bounds")]
    BadBounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Counter-clockwise rotation by `angle` radians.
    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        self.rotate_sc(s, c)
    }

    #[inline]
    fn rotate_sc(self, s: f64, c: f64) -> Vec2 {
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(angle: f64) -> f64 {
    if !angle.is_finite() || (angle > -PI && angle <= PI) {
        return angle;
    }
    let mut a = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub fn new(min: Vec2, max: Vec2) -> Result<Self, GeometryError> {
        if !(min.is_finite() && max.is_finite()) || min.x >= max.x || min.y >= max.y {
            return Err(GeometryError::BadBounds);
        }
        Ok(Self { min, max })
    }

    fn of_points(points: &[Vec2]) -> Self {
        let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        Self { min, max }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Euclidean distance from `p` to the box (0 inside).
    pub fn distance_to(&self, p: Vec2) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        dx.hypot(dy)
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }
}

/// Ordered samples tracing one closed boundary loop.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySamples {
    points: Vec<Vec2>,
    max_gap: f64,
    bbox: Aabb,
    /// Boxes over runs of consecutive samples, used to prune searches.
    chunks: Vec<Chunk>,
}

const CHUNK: usize = 32;
const PRUNE_MARGIN: f64 = 1e-9;

/// Samples `start..end` plus the segment to the following sample.
#[derive(Debug, Clone, PartialEq)]
struct Chunk {
    start: usize,
    end: usize,
    bbox: Aabb,
}

impl BoundarySamples {
    fn assemble(points: Vec<Vec2>, max_gap: f64) -> Self {
        let n = points.len();
        let chunks = (0..n)
            .step_by(CHUNK)
            .map(|start| {
                let end = (start + CHUNK).min(n);
                let mut run: Vec<Vec2> = points[start..end].to_vec();
                run.push(points[end % n]);
                Chunk { start, end, bbox: Aabb::of_points(&run) }
            })
            .collect();
        let bbox = Aabb::of_points(&points);
        Self { points, max_gap, bbox, chunks }
    }

    /// Wraps already-dense samples, checking every invariant.
    pub fn new(points: Vec<Vec2>, max_gap: f64) -> Result<Self, GeometryError> {
        if !(max_gap.is_finite() && max_gap > 0.0) {
            return Err(GeometryError::BadGap(max_gap));
        }
        if points.len() < 3 {
            return Err(GeometryError::TooFewPoints(points.len()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let n = points.len();
        for i in 0..n {
            let gap = points[i].dist(points[(i + 1) % n]);
            // Resampled edges carry rounding noise in the last few bits.
            if gap > max_gap * (1.0 + 1e-9) {
                return Err(GeometryError::GapExceeded { index: i, gap, max_gap });
            }
        }
        check_simple(&points)?;
        Ok(Self::assemble(points, max_gap))
    }

    /// Resamples a closed polygon (vertex list) so that every gap is at most
    /// `max_gap`. Each edge is split into equal pieces; the original vertices
    /// are kept, in order, as samples.
    pub fn from_polygon(vertices: &[Vec2], max_gap: f64) -> Result<Self, GeometryError> {
        if !(max_gap.is_finite() && max_gap > 0.0) {
            return Err(GeometryError::BadGap(max_gap));
        }
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewPoints(vertices.len()));
        }
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        check_simple(vertices)?;
        let n = vertices.len();
        let mut points = Vec::new();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let len = a.dist(b);
            let pieces = ((len / max_gap).ceil() as usize).max(1);
            for k in 0..pieces {
                let t = k as f64 / pieces as f64;
                points.push(a + (b - a) * t);
            }
        }
        Self::new(points, max_gap)
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max_gap(&self) -> f64 {
        self.max_gap
    }

    pub fn bbox(&self) -> &Aabb {
        &self.bbox
    }

    /// Even-odd containment; points on the loop count as inside.
    pub fn contains(&self, p: Vec2) -> bool {
        if self.bbox.distance_to(p) > ON_BOUNDARY_TOL {
            return false;
        }
        let pts = &self.points;
        let n = pts.len();
        let mut inside = false;
        for c in &self.chunks {
            // Chunks off the rightward ray neither touch `p` nor cross the ray.
            let b = &c.bbox;
            if b.max.y < p.y - PRUNE_MARGIN || b.min.y > p.y + PRUNE_MARGIN || b.max.x < p.x - PRUNE_MARGIN {
                continue;
            }
            for i in c.start..c.end {
                let a = pts[i];
                let b = pts[(i + 1) % n];
                if on_segment(p, a, b) {
                    return true;
                }
                if (a.y > p.y) != (b.y > p.y) {
                    let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                    if p.x < x_cross {
                        inside = !inside;
                    }
                }
            }
        }
        inside
    }

    /// Nearest sample to `p`: (index, distance).
    pub fn nearest(&self, p: Vec2) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        self.scan_nearest(p, &mut best);
        (best.0, best.1.sqrt())
    }

    /// Lowers `best = (index, squared distance)` if some sample is closer to `p`.
    fn scan_nearest(&self, p: Vec2, best: &mut (usize, f64)) {
        for c in &self.chunks {
            let lb = c.bbox.distance_to(p);
            if lb * lb > best.1 {
                continue;
            }
            for (i, q) in self.points[c.start..c.end].iter().enumerate() {
                let d2 = (*q - p).norm_sq();
                if d2 < best.1 {
                    *best = (c.start + i, d2);
                }
            }
        }
    }
}

fn on_segment(p: Vec2, a: Vec2, b: Vec2) -> bool {
    let ab = b - a;
    let ap = p - a;
    let len_sq = ab.norm_sq();
    if len_sq == 0.0 {
        return ap.norm() <= ON_BOUNDARY_TOL;
    }
    let t = ap.dot(ab) / len_sq;
    if !(0.0..=1.0).contains(&t) {
        return false;
    }
    (ap.cross(ab)).abs() / len_sq.sqrt() <= ON_BOUNDARY_TOL
}

fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    fn orient(p: Vec2, q: Vec2, r: Vec2) -> f64 {
        (q - p).cross(r - p)
    }
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
        && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
    {
        return true;
    }
    (o1 == 0.0 && on_segment(c, a, b))
        || (o2 == 0.0 && on_segment(d, a, b))
        || (o3 == 0.0 && on_segment(a, c, d))
        || (o4 == 0.0 && on_segment(b, c, d))
}

/// Rejects loops where two non-adjacent edges touch.
fn check_simple(points: &[Vec2]) -> Result<(), GeometryError> {
    let n = points.len();
    // Dense loops are checked cheaply via a sweep over x-sorted edge boxes.
    let mut edges: Vec<(f64, f64, usize)> = (0..n)
        .map(|i| {
            let a = points[i];
            let b = points[(i + 1) % n];
            (a.x.min(b.x), a.x.max(b.x), i)
        })
        .collect();
    edges.sort_by(|l, r| l.0.total_cmp(&r.0).then(l.2.cmp(&r.2)));
    for (k, &(_, hi, i)) in edges.iter().enumerate() {
        for &(lo2, _, j) in &edges[k + 1..] {
            if lo2 > hi {
                break;
            }
            let (i, j) = (i.min(j), i.max(j));
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (a, b) = (points[i], points[(i + 1) % n]);
            let (c, d) = (points[j], points[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return Err(GeometryError::SelfIntersecting(i, j));
            }
        }
    }
    Ok(())
}

/// Static obstacles plus the world box they live in.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleSet {
    obstacles: Vec<BoundarySamples>,
    world_bounds: Aabb,
}

impl ObstacleSet {
    pub fn new(obstacles: Vec<BoundarySamples>, world_bounds: Aabb) -> Result<Self, GeometryError> {
        for obs in &obstacles {
            if let Some(p) = obs.points().iter().find(|p| !world_bounds.contains(**p)) {
                return Err(GeometryError::OutOfBounds { x: p.x, y: p.y });
            }
        }
        Ok(Self { obstacles, world_bounds })
    }

    pub fn empty(world_bounds: Aabb) -> Self {
        Self { obstacles: Vec::new(), world_bounds }
    }

    pub fn obstacles(&self) -> &[BoundarySamples] {
        &self.obstacles
    }

    pub fn world_bounds(&self) -> &Aabb {
        &self.world_bounds
    }

    pub fn len(&self) -> usize {
        self.obstacles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obstacles.is_empty()
    }

    pub fn sample_count(&self) -> usize {
        self.obstacles.iter().map(BoundarySamples::len).sum()
    }

    /// Index of the first obstacle containing `p`, if any.
    pub fn containing(&self, p: Vec2) -> Option<usize> {
        self.obstacles.iter().position(|o| o.contains(p))
    }
}

/// Robot outline in its body frame plus the precomputed extreme point.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotShape {
    body_boundary: BoundarySamples,
    extreme_index: usize,
    extreme_offset: Vec2,
    extreme_radius: f64,
}

impl RobotShape {
    /// `body_boundary` must be expressed with the reference point at the origin.
    pub fn new(body_boundary: BoundarySamples) -> Self {
        let mut extreme_index = 0;
        let mut extreme_radius = f64::NEG_INFINITY;
        for (i, p) in body_boundary.points().iter().enumerate() {
            let r = p.norm();
            // Strict comparison keeps the lowest index on ties.
            if r > extreme_radius {
                extreme_radius = r;
                extreme_index = i;
            }
        }
        let extreme_offset = body_boundary.points()[extreme_index];
        Self { body_boundary, extreme_index, extreme_offset, extreme_radius }
    }

    pub fn body_boundary(&self) -> &BoundarySamples {
        &self.body_boundary
    }

    pub fn extreme_index(&self) -> usize {
        self.extreme_index
    }

    pub fn extreme_offset(&self) -> Vec2 {
        self.extreme_offset
    }

    pub fn extreme_radius(&self) -> f64 {
        self.extreme_radius
    }
}

/// Planar pose of the robot reference point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub x: f64,
    pub y: f64,
    theta: f64,
}

impl Configuration {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: wrap_angle(theta) }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// The configuration that undoes this one: `inverse ∘ self = identity`.
    pub fn inverse(&self) -> Configuration {
        let back = (-self.position()).rotate(-self.theta);
        Configuration::new(back.x, back.y, -self.theta)
    }

    /// Maps a body-frame point into the world frame.
    pub fn apply(&self, body: Vec2) -> Vec2 {
        self.position() + body.rotate(self.theta)
    }
}

/// Signed clearance with the sample pair that attains it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClearanceResult {
    /// Meters; negative when robot samples lie inside an obstacle, `+∞` with no obstacles.
    pub distance: f64,
    pub robot_witness: Option<Vec2>,
    pub obstacle_witness: Option<Vec2>,
}

impl ClearanceResult {
    fn unbounded() -> Self {
        Self { distance: f64::INFINITY, robot_witness: None, obstacle_witness: None }
    }
}

/// A local safety ball anchored at the extreme boundary point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsbSpec {
    pub center: Vec2,
    pub radius: f64,
    pub infeasible: bool,
}

impl LsbSpec {
    pub fn is_valid(&self) -> bool {
        !self.infeasible
    }
}

/// Robot boundary samples placed at `cfg`, order preserved.
pub fn transform_boundary(shape: &RobotShape, cfg: &Configuration) -> BoundarySamples {
    let pts = transform_points(shape.body_boundary().points(), cfg);
    BoundarySamples::assemble(pts, shape.body_boundary().max_gap())
}

fn transform_points(body: &[Vec2], cfg: &Configuration) -> Vec<Vec2> {
    let (s, c) = cfg.theta.sin_cos();
    let origin = cfg.position();
    body.iter().map(|p| origin + p.rotate_sc(s, c)).collect()
}

/// Even-odd containment against every obstacle loop; boundary points are inside.
pub fn point_in_obstacles(p: Vec2, obs: &ObstacleSet) -> bool {
    obs.containing(p).is_some()
}

/// Signed robot–obstacle clearance over boundary samples.
///
/// Without penetration this is the minimum pairwise sample distance. When some
/// robot samples are inside an obstacle, it is minus the largest distance from
/// such a sample to the boundary samples of the obstacle containing it.
pub fn clearance(shape: &RobotShape, cfg: &Configuration, obs: &ObstacleSet) -> ClearanceResult {
    if obs.is_empty() {
        return ClearanceResult::unbounded();
    }
    let robot = transform_points(shape.body_boundary().points(), cfg);
    clearance_of_points(&robot, obs)
}

pub(crate) fn clearance_of_points(robot: &[Vec2], obs: &ObstacleSet) -> ClearanceResult {
    if obs.is_empty() {
        return ClearanceResult::unbounded();
    }
    let robot_box = Aabb::of_points(robot);

    // Penetration pass: only obstacles overlapping the robot's box can contain samples.
    let mut depth = f64::NEG_INFINITY;
    let mut deep_pair = (Vec2::ZERO, Vec2::ZERO);
    for o in obs.obstacles() {
        let ob = o.bbox();
        let overlaps = ob.min.x <= robot_box.max.x
            && ob.max.x >= robot_box.min.x
            && ob.min.y <= robot_box.max.y
            && ob.max.y >= robot_box.min.y;
        if !overlaps {
            continue;
        }
        for &r in robot {
            if o.contains(r) {
                let (j, d) = o.nearest(r);
                if d > depth {
                    depth = d;
                    deep_pair = (r, o.points()[j]);
                }
            }
        }
    }
    if depth > f64::NEG_INFINITY {
        return ClearanceResult {
            distance: -depth,
            robot_witness: Some(deep_pair.0),
            obstacle_witness: Some(deep_pair.1),
        };
    }

    let mut best_sq = f64::INFINITY;
    let mut pair = (Vec2::ZERO, Vec2::ZERO);
    for &r in robot {
        for o in obs.obstacles() {
            let lb = o.bbox().distance_to(r);
            if lb * lb >= best_sq {
                continue;
            }
            let mut best = (usize::MAX, best_sq);
            o.scan_nearest(r, &mut best);
            if best.0 != usize::MAX {
                best_sq = best.1;
                pair = (r, o.points()[best.0]);
            }
        }
    }
    ClearanceResult {
        distance: best_sq.sqrt(),
        robot_witness: Some(pair.0),
        obstacle_witness: Some(pair.1),
    }
}

/// World position of the extreme boundary point at `cfg`.
pub fn extreme_point(shape: &RobotShape, cfg: &Configuration) -> Vec2 {
    cfg.apply(shape.extreme_offset())
}

pub fn build_lsb(shape: &RobotShape, cfg: &Configuration, radius: f64) -> LsbSpec {
    LsbSpec { center: extreme_point(shape, cfg), radius, infeasible: !(radius > 0.0) }
}

/// Pose at fraction `tau` of the rigid motion `from → to`: linear in position,
/// shortest arc in heading.
pub fn interpolate(from: &Configuration, to: &Configuration, tau: f64) -> Configuration {
    let dtheta = wrap_angle(to.theta - from.theta);
    Configuration::new(
        from.x + tau * (to.x - from.x),
        from.y + tau * (to.y - from.y),
        from.theta + tau * dtheta,
    )
}

fn sweep_taus(n_interp: usize) -> impl Iterator<Item = f64> {
    assert!(n_interp >= 2, "n_interp must be at least 2");
    (0..n_interp).map(move |j| j as f64 / (n_interp - 1) as f64)
}

/// Largest displacement of any boundary sample over the interpolated motion.
pub fn sweep_displacement(
    shape: &RobotShape,
    from: &Configuration,
    to: &Configuration,
    n_interp: usize,
) -> f64 {
    let body = shape.body_boundary().points();
    let start = transform_points(body, from);
    let mut worst: f64 = 0.0;
    for tau in sweep_taus(n_interp) {
        let cfg = interpolate(from, to, tau);
        let (s, c) = cfg.theta.sin_cos();
        let origin = cfg.position();
        for (p, p0) in body.iter().zip(&start) {
            let moved = origin + p.rotate_sc(s, c);
            worst = worst.max((moved - *p0).norm());
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepAudit {
    pub safe: bool,
    /// Smallest signed clearance found along the interpolated motion.
    pub worst_clearance: f64,
}

/// Ground-truth audit of one rigid step at `n_interp` interpolated poses.
pub fn check_step_safe(
    shape: &RobotShape,
    from: &Configuration,
    to: &Configuration,
    obs: &ObstacleSet,
    n_interp: usize,
) -> StepAudit {
    let mut worst = f64::INFINITY;
    for tau in sweep_taus(n_interp) {
        let cfg = interpolate(from, to, tau);
        worst = worst.min(clearance(shape, &cfg, obs).distance);
    }
    StepAudit { safe: worst >= 0.0, worst_clearance: worst }
}

/// Axis-aligned rectangle centered on the origin, first vertex at `(+w/2, +h/2)`,
/// counter-clockwise.
pub fn rectangle(width: f64, height: f64) -> Vec<Vec2> {
    let (hw, hh) = (width / 2.0, height / 2.0);
    vec![Vec2::new(hw, hh), Vec2::new(-hw, hh), Vec2::new(-hw, -hh), Vec2::new(hw, -hh)]
}

/// Regular polygon approximating a circle.
pub fn circle(center: Vec2, radius: f64, n: usize) -> Vec<Vec2> {
    (0..n)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / n as f64;
            center + Vec2::new(radius * a.cos(), radius * a.sin())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn world() -> Aabb {
        Aabb::new(Vec2::new(-10.0, -10.0), Vec2::new(10.0, 10.0)).unwrap()
    }

    fn point_robot() -> RobotShape {
        // A vanishingly small triangle stands in for a point robot.
        let tri = vec![Vec2::new(0.0, 0.0), Vec2::new(1e-9, 0.0), Vec2::new(0.0, 1e-9)];
        RobotShape::new(BoundarySamples::new(tri, 1.0).unwrap())
    }

    fn rect_shape() -> RobotShape {
        RobotShape::new(BoundarySamples::from_polygon(&rectangle(0.35, 0.2), 0.01).unwrap())
    }

    fn unit_square() -> ObstacleSet {
        let sq = rectangle(2.0, 2.0);
        ObstacleSet::new(vec![BoundarySamples::from_polygon(&sq, 0.05).unwrap()], world()).unwrap()
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-7.0), -7.0 + 2.0 * PI, epsilon = 1e-12);
        assert_eq!(Configuration::new(0.0, 0.0, -PI).theta(), PI);
    }

    #[test]
    fn transform_examples() {
        let body = BoundarySamples::new(
            vec![Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), Vec2::new(-1.0, -1.0)],
            3.0,
        )
        .unwrap();
        let shape = RobotShape::new(body);
        let first = |cfg: Configuration| transform_boundary(&shape, &cfg).points()[0];

        assert_eq!(first(Configuration::new(0.0, 0.0, 0.0)), Vec2::new(1.0, 0.0));
        let p = first(Configuration::new(0.0, 0.0, PI / 2.0));
        assert_abs_diff_eq!(p.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, 1.0, epsilon = 1e-12);
        let p = first(Configuration::new(2.0, 3.0, PI));
        assert_abs_diff_eq!(p.x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn resampling_respects_gap_and_keeps_vertices() {
        let b = BoundarySamples::from_polygon(&rectangle(0.35, 0.2), 0.01).unwrap();
        // 35 + 20 + 35 + 20 pieces
        assert_eq!(b.len(), 110);
        assert_eq!(b.points()[0], Vec2::new(0.175, 0.1));
        assert_eq!(b.points()[35], Vec2::new(-0.175, 0.1));
        let n = b.len();
        for i in 0..n {
            assert!(b.points()[i].dist(b.points()[(i + 1) % n]) <= 0.01 + 1e-12);
        }
    }

    #[test]
    fn rejects_bad_boundaries() {
        assert_eq!(
            BoundarySamples::new(vec![Vec2::ZERO, Vec2::new(1.0, 0.0)], 1.0),
            Err(GeometryError::TooFewPoints(2))
        );
        let bow_tie = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
        ];
        assert!(matches!(
            BoundarySamples::from_polygon(&bow_tie, 0.1),
            Err(GeometryError::SelfIntersecting(..))
        ));
        let sparse = rectangle(1.0, 1.0);
        assert!(matches!(
            BoundarySamples::new(sparse, 0.5),
            Err(GeometryError::GapExceeded { .. })
        ));
        let far = BoundarySamples::from_polygon(&circle(Vec2::new(20.0, 0.0), 1.0, 8), 1.0).unwrap();
        assert!(matches!(ObstacleSet::new(vec![far], world()), Err(GeometryError::OutOfBounds { .. })));
    }

    #[test]
    fn point_in_obstacles_examples() {
        let obs = unit_square();
        assert!(point_in_obstacles(Vec2::new(0.0, 0.0), &obs));
        assert!(!point_in_obstacles(Vec2::new(5.0, 5.0), &obs));
        // Boundary vertex and a point mid-edge are both inside.
        assert!(point_in_obstacles(Vec2::new(1.0, 1.0), &obs));
        assert!(point_in_obstacles(Vec2::new(1.0, 0.013), &obs));
        assert!(!point_in_obstacles(Vec2::new(1.0 + 1e-6, 0.0), &obs));
    }

    #[test]
    fn circle_clearance_and_penetration() {
        let ring = BoundarySamples::from_polygon(&circle(Vec2::new(3.0, 0.0), 1.0, 360), 0.02).unwrap();
        let gap = ring.max_gap();
        let obs = ObstacleSet::new(vec![ring], world()).unwrap();
        let robot = point_robot();

        let c = clearance(&robot, &Configuration::new(0.0, 0.0, 0.0), &obs);
        assert!((c.distance - 2.0).abs() <= gap, "{}", c.distance);
        let w = (c.robot_witness.unwrap(), c.obstacle_witness.unwrap());
        assert_abs_diff_eq!(w.0.dist(w.1), c.distance, epsilon = 1e-12);

        let c = clearance(&robot, &Configuration::new(3.0, 0.0, 0.0), &obs);
        assert!((c.distance + 1.0).abs() <= gap, "{}", c.distance);
    }

    #[test]
    fn empty_obstacles_are_unbounded() {
        let c = clearance(&rect_shape(), &Configuration::new(1.0, 2.0, 0.3), &ObstacleSet::empty(world()));
        assert_eq!(c.distance, f64::INFINITY);
        assert!(c.robot_witness.is_none() && c.obstacle_witness.is_none());
    }

    #[test]
    fn penetration_uses_containing_obstacle_only() {
        let a = BoundarySamples::from_polygon(&rectangle(2.0, 2.0), 0.01).unwrap();
        let b_pts: Vec<Vec2> = rectangle(0.5, 0.5).into_iter().map(|p| p + Vec2::new(1.5, 0.0)).collect();
        let b = BoundarySamples::from_polygon(&b_pts, 0.01).unwrap();
        let only_a = ObstacleSet::new(vec![a.clone()], world()).unwrap();
        let both = ObstacleSet::new(vec![a, b], world()).unwrap();
        let robot = point_robot();
        let cfg = Configuration::new(0.6, 0.0, 0.0);
        let d1 = clearance(&robot, &cfg, &only_a).distance;
        let d2 = clearance(&robot, &cfg, &both).distance;
        assert_abs_diff_eq!(d1, -0.4, epsilon = 1e-6);
        assert_eq!(d1, d2);
    }

    #[test]
    fn extreme_point_rectangle() {
        let shape = rect_shape();
        assert_eq!(shape.extreme_index(), 0);
        assert_eq!(shape.extreme_offset(), Vec2::new(0.175, 0.1));
        assert_abs_diff_eq!(shape.extreme_radius(), 0.201556443707, epsilon = 1e-9);
        assert_eq!(extreme_point(&shape, &Configuration::new(0.0, 0.0, 0.0)), shape.extreme_offset());

        let s = Vec2::new(1.0, -2.0);
        let a = extreme_point(&shape, &Configuration::new(s.x, s.y, 0.4));
        let b = extreme_point(&shape, &Configuration::new(s.x, s.y, 0.4 + PI));
        let mid = (a + b) * 0.5;
        assert_abs_diff_eq!(mid.x, s.x, epsilon = 1e-12);
        assert_abs_diff_eq!(mid.y, s.y, epsilon = 1e-12);
    }

    #[test]
    fn build_lsb_examples() {
        let shape = rect_shape();
        let lsb = build_lsb(&shape, &Configuration::new(1.0, 1.0, 0.0), 0.5);
        assert_abs_diff_eq!(lsb.center.x, 1.175, epsilon = 1e-12);
        assert_abs_diff_eq!(lsb.center.y, 1.1, epsilon = 1e-12);
        assert_eq!(lsb.radius, 0.5);
        assert!(lsb.is_valid());
        assert!(build_lsb(&shape, &Configuration::new(0.0, 0.0, 0.0), 0.0).infeasible);
        assert!(build_lsb(&shape, &Configuration::new(0.0, 0.0, 0.0), -0.2).infeasible);
    }

    #[test]
    fn sweep_examples() {
        let shape = rect_shape();
        let from = Configuration::new(1.0, 1.0, 0.2);
        assert_eq!(sweep_displacement(&shape, &from, &from, 10), 0.0);

        let to = Configuration::new(1.3, 1.4, 0.2);
        assert_abs_diff_eq!(sweep_displacement(&shape, &from, &to, 7), 0.5, epsilon = 1e-12);

        let dtheta = 0.7;
        let to = Configuration::new(1.0, 1.0, 0.2 + dtheta);
        let chord = shape.extreme_radius() * 2.0 * (dtheta / 2.0).sin();
        assert_abs_diff_eq!(sweep_displacement(&shape, &from, &to, 20), chord, epsilon = 1e-12);
    }

    #[test]
    fn sweep_takes_the_short_way_round() {
        let shape = rect_shape();
        let from = Configuration::new(0.0, 0.0, PI - 0.1);
        let to = Configuration::new(0.0, 0.0, -PI + 0.1);
        let chord = shape.extreme_radius() * 2.0 * (0.1f64).sin();
        assert_abs_diff_eq!(sweep_displacement(&shape, &from, &to, 50), chord, epsilon = 1e-12);
    }

    #[test]
    fn thin_wall_needs_dense_audit() {
        // Robot jumps across a 2 cm wall: endpoints are clear, the middle is not.
        let wall = BoundarySamples::from_polygon(&rectangle(0.02, 2.0), 0.005).unwrap();
        let obs = ObstacleSet::new(vec![wall], world()).unwrap();
        let shape = RobotShape::new(
            BoundarySamples::from_polygon(&rectangle(0.05, 0.05), 0.005).unwrap(),
        );
        let from = Configuration::new(-0.5, 0.0, 0.0);
        let to = Configuration::new(0.5, 0.0, 0.0);
        assert!(check_step_safe(&shape, &from, &from, &obs, 2).safe);
        assert!(check_step_safe(&shape, &from, &to, &obs, 2).safe);
        let dense = check_step_safe(&shape, &from, &to, &obs, 50);
        assert!(!dense.safe);
        assert!(dense.worst_clearance < 0.0);
    }

    #[test]
    fn inverse_round_trip() {
        let shape = rect_shape();
        let cfg = Configuration::new(1.2, -0.7, 2.9);
        let placed = transform_boundary(&shape, &cfg);
        let inv = cfg.inverse();
        for (p, p0) in placed.points().iter().zip(shape.body_boundary().points()) {
            let back = inv.apply(*p);
            assert_abs_diff_eq!(back.x, p0.x, epsilon = 1e-9);
            assert_abs_diff_eq!(back.y, p0.y, epsilon = 1e-9);
        }
    }
}
