//! Polygon tables parametrized by arclength with perimeter one.
//!
//! Every polygon is rescaled on construction so that its perimeter equals one
//! and oriented counterclockwise. The boundary is the circle `s ∈ [0, 1)`,
//! with the first vertex at `s = 0`. Inward normals are the tangents rotated
//! by +90°.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Arclength distance below which a boundary point counts as a vertex.
pub const VERTEX_TOL: f64 = 1e-9;

/// Angular distance from `±π/2` below which an arrival counts as grazing.
pub const TANGENTIAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("sides {0} and {1} intersect")]
    NotSimple(usize, usize),
    #[error("vertex {0} is not a corner (collinear or repeated neighbours)")]
    DegenerateVertex(usize),
    #[error("arclength {s} lies on vertex {vertex}")]
    AtVertex { s: f64, vertex: usize },
    #[error("direction does not point into the table (inner product with normal {0})")]
    NotInward(f64),
    #[error("ray found no boundary intersection")]
    NoIntersection,
    #[error("non-finite coordinate in input")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the planar cross product.
    #[inline]
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Counterclockwise rotation by 90°.
    #[inline]
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        Vec2::new(self.x / n, self.y / n)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    #[inline]
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    #[inline]
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    #[inline]
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl fmt::Display for Vec2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// One side of a normalized polygon, running from `start` to `end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Side {
    pub start: Vec2,
    pub end: Vec2,
    pub tangent: Vec2,
    pub normal: Vec2,
    pub length: f64,
    /// Arclength of `start`.
    pub s_start: f64,
}

impl Side {
    #[inline]
    pub fn point_at(&self, w: f64) -> Vec2 {
        self.start + self.tangent * w
    }

    /// Direction angle of the tangent, in radians.
    pub fn heading(&self) -> f64 {
        self.tangent.y.atan2(self.tangent.x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Vec2>,
    sides: Vec<Side>,
    s_vertices: Vec<f64>,
    scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub s: f64,
    pub side_index: usize,
    /// Arclength from the start of the side.
    pub offset: f64,
    pub position: Vec2,
    pub inward_normal: Vec2,
    pub tangent: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitKind {
    Interior,
    Vertex,
    Grazing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub s: f64,
    /// Euclidean flight length in normalized units.
    pub t: f64,
    pub side: usize,
    pub offset: f64,
    pub position: Vec2,
    pub kind: HitKind,
    /// Index of the corner when `kind == Vertex`.
    pub vertex: Option<usize>,
}

fn segments_intersect(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> bool {
    let d1 = (a1 - a0).cross(b0 - a0);
    let d2 = (a1 - a0).cross(b1 - a0);
    let d3 = (b1 - b0).cross(a0 - b0);
    let d4 = (b1 - b0).cross(a1 - b0);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on_segment = |p: Vec2, q0: Vec2, q1: Vec2, d: f64| {
        d == 0.0
            && p.x >= q0.x.min(q1.x)
            && p.x <= q0.x.max(q1.x)
            && p.y >= q0.y.min(q1.y)
            && p.y <= q0.y.max(q1.y)
    };
    on_segment(b0, a0, a1, d1)
        || on_segment(b1, a0, a1, d2)
        || on_segment(a0, b0, b1, d3)
        || on_segment(a1, b0, b1, d4)
}

impl Polygon {
    /// Builds the normalized model from raw vertices in either orientation.
    pub fn new(raw: &[Vec2]) -> Result<Self, GeometryError> {
        let d = raw.len();
        if d < 3 {
            return Err(GeometryError::TooFewVertices(d));
        }
        if raw.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let area2: f64 = (0..d).map(|i| raw[i].cross(raw[(i + 1) % d])).sum();
        let mut pts: Vec<Vec2> = raw.to_vec();
        if area2 < 0.0 {
            // Keep the first vertex first so that s = 0 stays on it.
            pts[1..].reverse();
        }

        for i in 0..d {
            let prev = pts[(i + d - 1) % d];
            let cur = pts[i];
            let next = pts[(i + 1) % d];
            let e0 = cur - prev;
            let e1 = next - cur;
            let (l0, l1) = (e0.norm(), e1.norm());
            if l0 == 0.0 || l1 == 0.0 || e0.cross(e1).abs() <= 1e-12 * l0 * l1 {
                return Err(GeometryError::DegenerateVertex(i));
            }
        }
        for i in 0..d {
            for j in (i + 1)..d {
                let adjacent = j == i + 1 || (i == 0 && j == d - 1);
                if adjacent {
                    continue;
                }
                if segments_intersect(pts[i], pts[(i + 1) % d], pts[j], pts[(j + 1) % d]) {
                    return Err(GeometryError::NotSimple(i, j));
                }
            }
        }
        let perimeter: f64 = (0..d).map(|i| (pts[(i + 1) % d] - pts[i]).norm()).sum();
        let vertices: Vec<Vec2> = pts.iter().map(|&p| p * (1.0 / perimeter)).collect();

        let mut sides = Vec::with_capacity(d);
        let mut s_vertices = Vec::with_capacity(d);
        let mut acc = 0.0;
        for i in 0..d {
            let start = vertices[i];
            let end = vertices[(i + 1) % d];
            let e = end - start;
            let length = e.norm();
            let tangent = e * (1.0 / length);
            s_vertices.push(acc);
            sides.push(Side {
                start,
                end,
                tangent,
                normal: tangent.perp(),
                length,
                s_start: acc,
            });
            acc += length;
        }
        // Absorb rounding so the circle closes exactly at 1.
        let total = acc;
        for (side, sv) in sides.iter_mut().zip(s_vertices.iter_mut()) {
            side.s_start /= total;
            *sv = side.s_start;
        }
        Ok(Self {
            vertices,
            sides,
            s_vertices,
            scale: perimeter,
        })
    }

    pub fn from_pairs(raw: &[[f64; 2]]) -> Result<Self, GeometryError> {
        let pts: Vec<Vec2> = raw.iter().map(|p| Vec2::new(p[0], p[1])).collect();
        Self::new(&pts)
    }

    pub fn side_count(&self) -> usize {
        self.sides.len()
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn sides(&self) -> &[Side] {
        &self.sides
    }

    #[inline]
    pub fn side(&self, i: usize) -> &Side {
        &self.sides[i]
    }

    pub fn s_vertices(&self) -> &[f64] {
        &self.s_vertices
    }

    /// Original perimeter; raw coordinates were divided by this.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Arclength end of side `i` (1.0 for the last side).
    #[inline]
    pub fn side_end_s(&self, i: usize) -> f64 {
        if i + 1 == self.sides.len() {
            1.0
        } else {
            self.s_vertices[i + 1]
        }
    }

    /// Side containing arclength `s` (reduced mod 1); vertices belong to the
    /// side they start.
    pub fn side_of(&self, s: f64) -> usize {
        let s = s.rem_euclid(1.0);
        match self
            .s_vertices
            .binary_search_by(|v| v.partial_cmp(&s).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }

    /// Circle distance from `s` to the nearest vertex, and that vertex.
    pub fn nearest_vertex(&self, s: f64) -> (usize, f64) {
        let s = s.rem_euclid(1.0);
        let mut best = (0, f64::INFINITY);
        for (i, &sv) in self.s_vertices.iter().enumerate() {
            let d = circle_dist(s, sv);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    pub fn boundary_point(&self, s: f64) -> Result<BoundaryPoint, GeometryError> {
        let s = s.rem_euclid(1.0);
        let (v, dist) = self.nearest_vertex(s);
        if dist < VERTEX_TOL {
            return Err(GeometryError::AtVertex { s, vertex: v });
        }
        let i = self.side_of(s);
        let side = &self.sides[i];
        let offset = s - side.s_start;
        Ok(BoundaryPoint {
            s,
            side_index: i,
            offset,
            position: side.point_at(offset),
            inward_normal: side.normal,
            tangent: side.tangent,
        })
    }

    /// Boundary point from a side index and an offset along it.
    pub fn boundary_point_on(&self, side: usize, offset: f64) -> Result<BoundaryPoint, GeometryError> {
        let sd = &self.sides[side];
        if offset < VERTEX_TOL {
            return Err(GeometryError::AtVertex {
                s: sd.s_start + offset,
                vertex: side,
            });
        }
        if sd.length - offset < VERTEX_TOL {
            return Err(GeometryError::AtVertex {
                s: sd.s_start + offset,
                vertex: (side + 1) % self.sides.len(),
            });
        }
        Ok(BoundaryPoint {
            s: sd.s_start + offset,
            side_index: side,
            offset,
            position: sd.point_at(offset),
            inward_normal: sd.normal,
            tangent: sd.tangent,
        })
    }

    pub fn cast_ray(&self, from: &BoundaryPoint, direction: Vec2) -> Result<RayHit, GeometryError> {
        let inner = direction.dot(from.inward_normal);
        if inner <= 0.0 {
            return Err(GeometryError::NotInward(inner));
        }
        self.cast_from(from.position, from.side_index, direction)
            .ok_or(GeometryError::NoIntersection)
    }

    /// First boundary intersection of the ray `origin + t·dir`, `t > 0`,
    /// ignoring side `skip` (the side the ray leaves from). Every side is
    /// tested, so non-convex tables are handled.
    #[inline]
    pub fn cast_from(&self, origin: Vec2, skip: usize, dir: Vec2) -> Option<RayHit> {
        let mut best_t = f64::INFINITY;
        let mut best: Option<(usize, f64)> = None;
        for (j, side) in self.sides.iter().enumerate() {
            if j == skip {
                continue;
            }
            let denom = dir.cross(side.tangent);
            if denom.abs() < 1e-300 {
                continue;
            }
            let rel = side.start - origin;
            let t = rel.cross(side.tangent) / denom;
            if !(t > 0.0) || t >= best_t {
                continue;
            }
            let w = rel.cross(dir) / denom;
            if w < -VERTEX_TOL || w > side.length + VERTEX_TOL {
                continue;
            }
            best_t = t;
            best = Some((j, w));
        }
        let (j, w) = best?;
        let side = &self.sides[j];
        let d = self.sides.len();
        let (kind, vertex) = if w < VERTEX_TOL {
            (HitKind::Vertex, Some(j))
        } else if side.length - w < VERTEX_TOL {
            (HitKind::Vertex, Some((j + 1) % d))
        // sin(TANGENTIAL_TOL) == TANGENTIAL_TOL in double precision.
        } else if -dir.dot(side.normal) <= TANGENTIAL_TOL {
            (HitKind::Grazing, None)
        } else {
            (HitKind::Interior, None)
        };
        let w = w.clamp(0.0, side.length);
        Some(RayHit {
            s: (side.s_start + w).rem_euclid(1.0),
            t: best_t,
            side: j,
            offset: w,
            position: side.point_at(w),
            kind,
            vertex,
        })
    }

    /// Even-odd point-in-polygon test (boundary points are unspecified).
    pub fn contains(&self, p: Vec2) -> bool {
        let mut inside = false;
        let d = self.vertices.len();
        for i in 0..d {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % d];
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// True when some segment inside the table meets two parallel sides
    /// orthogonally with at least one endpoint off the corners.
    ///
    /// For every pair of antiparallel sides facing each other, the overlap of
    /// their orthogonal projections is sampled and the orthogonal chord from
    /// each witness is ray-cast; a first hit in the interior of the opposite
    /// side is a witness.
    pub fn has_parallel_facing_sides(&self) -> bool {
        const WITNESSES: usize = 65;
        let d = self.sides.len();
        for i in 0..d {
            for j in 0..d {
                if i == j {
                    continue;
                }
                let (a, b) = (&self.sides[i], &self.sides[j]);
                if a.tangent.cross(b.tangent).abs() > 1e-12 || a.tangent.dot(b.tangent) > 0.0 {
                    continue;
                }
                if (b.start - a.start).dot(a.normal) <= 0.0 {
                    continue;
                }
                // Projection of side j onto side i's tangent coordinate.
                let p0 = (b.start - a.start).dot(a.tangent);
                let p1 = (b.end - a.start).dot(a.tangent);
                let lo = p0.min(p1).max(0.0);
                let hi = p0.max(p1).min(a.length);
                if hi - lo <= 2.0 * VERTEX_TOL {
                    continue;
                }
                for k in 0..WITNESSES {
                    let w = lo + (hi - lo) * (k as f64 + 0.5) / WITNESSES as f64;
                    if w < VERTEX_TOL || a.length - w < VERTEX_TOL {
                        continue;
                    }
                    if let Some(hit) = self.cast_from(a.point_at(w), i, a.normal) {
                        if hit.side == j && hit.kind == HitKind::Interior {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// Distance on the unit circle.
#[inline]
pub fn circle_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Signed shortest difference `a − b` on the unit circle, in `[-0.5, 0.5)`.
#[inline]
pub fn circle_diff(a: f64, b: f64) -> f64 {
    (a - b + 0.5).rem_euclid(1.0) - 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Polygon {
        Polygon::from_pairs(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap()
    }

    fn triangle() -> Polygon {
        Polygon::from_pairs(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap()
    }

    #[test]
    fn square_normalization() {
        let p = square();
        assert_eq!(p.scale(), 4.0);
        assert_eq!(p.s_vertices(), &[0.0, 0.25, 0.5, 0.75]);
        let total: f64 = p.sides().iter().map(|s| s.length).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn triangle_normalization() {
        let p = triangle();
        let per = 2.0 + 2f64.sqrt();
        assert!((p.scale() - per).abs() < 1e-12);
        let sv = p.s_vertices();
        assert_eq!(sv[0], 0.0);
        assert!((sv[1] - 1.0 / per).abs() < 1e-12);
        // Hypotenuse has length √2, so the third vertex sits at (1 + √2)/per.
        assert!((sv[2] - (1.0 + 2f64.sqrt()) / per).abs() < 1e-12);
    }

    #[test]
    fn clockwise_input_is_reoriented() {
        let p = Polygon::from_pairs(&[[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(p.vertices()[1], Vec2::new(0.25, 0.0));
        for side in p.sides() {
            assert_eq!(side.normal, side.tangent.perp());
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(
            Polygon::from_pairs(&[[0.0, 0.0], [1.0, 0.0]]),
            Err(GeometryError::TooFewVertices(2))
        );
        assert!(matches!(
            Polygon::from_pairs(&[[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]),
            Err(GeometryError::NotSimple(..))
        ));
        assert!(matches!(
            Polygon::from_pairs(&[[0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [0.0, 1.0]]),
            Err(GeometryError::DegenerateVertex(1))
        ));
    }

    #[test]
    fn boundary_point_square() {
        let p = square();
        let b = p.boundary_point(0.125).unwrap();
        assert!((b.position.x - 0.125).abs() < 1e-15 && b.position.y.abs() < 1e-15);
        assert_eq!(b.inward_normal, Vec2::new(0.0, 1.0));
        assert!(matches!(
            p.boundary_point(0.25),
            Err(GeometryError::AtVertex { vertex: 1, .. })
        ));
    }

    /// Walks the perimeter in raw coordinates, independently of the side table.
    fn walk(raw: &[[f64; 2]], frac: f64) -> (Vec2, Vec2) {
        let n = raw.len();
        let lens: Vec<f64> = (0..n)
            .map(|i| {
                let a = raw[i];
                let b = raw[(i + 1) % n];
                ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
            })
            .collect();
        let per: f64 = lens.iter().sum();
        let mut left = frac * per;
        for i in 0..n {
            if left <= lens[i] {
                let a = raw[i];
                let b = raw[(i + 1) % n];
                let tx = (b[0] - a[0]) / lens[i];
                let ty = (b[1] - a[1]) / lens[i];
                let pos = Vec2::new((a[0] + tx * left) / per, (a[1] + ty * left) / per);
                return (pos, Vec2::new(-ty, tx));
            }
            left -= lens[i];
        }
        unreachable!()
    }

    #[test]
    fn boundary_point_matches_walker() {
        let raw = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let p = triangle();
        let hyp_start = p.s_vertices()[1];
        let hyp_len = p.side(1).length;
        for s in [0.05 * hyp_len + hyp_start, 0.01, 0.3, 0.55, 0.97] {
            let b = p.boundary_point(s).unwrap();
            let (pos, nrm) = walk(&raw, s);
            assert!((b.position - pos).norm() < 1e-12, "s={s}");
            assert!((b.inward_normal - nrm).norm() < 1e-12);
        }
    }

    #[test]
    fn ray_between_parallel_sides() {
        let p = square();
        let b = p.boundary_point(0.125).unwrap();
        let hit = p.cast_ray(&b, Vec2::new(0.0, 1.0)).unwrap();
        assert!((hit.s - 0.625).abs() < 1e-15);
        assert!((hit.t - 0.25).abs() < 1e-15);
        assert_eq!(hit.kind, HitKind::Interior);
    }

    #[test]
    fn ray_into_corner() {
        let p = square();
        let b = p.boundary_point(0.125).unwrap();
        let dir = (Vec2::new(0.25, 0.25) - b.position).normalized();
        let hit = p.cast_ray(&b, dir).unwrap();
        assert_eq!(hit.kind, HitKind::Vertex);
        assert_eq!(hit.vertex, Some(2));
    }

    #[test]
    fn outward_ray_rejected() {
        let p = square();
        let b = p.boundary_point(0.1).unwrap();
        assert!(matches!(
            p.cast_ray(&b, Vec2::new(0.0, -1.0)),
            Err(GeometryError::NotInward(_))
        ));
    }

    #[test]
    fn non_convex_ray_matches_marching_oracle() {
        // L-shaped hexagon; the notch corner is at (1, 1).
        let p = Polygon::from_pairs(&[
            [0.0, 0.0],
            [2.0, 0.0],
            [2.0, 1.0],
            [1.0, 1.0],
            [1.0, 2.0],
            [0.0, 2.0],
        ])
        .unwrap();
        let k = 1.0 / p.scale();
        let b = p.boundary_point(0.75 * 2.0 * k).unwrap(); // (1.5, 0) raw
        let mut checked = 0;
        for i in 1..40 {
            let ang = std::f64::consts::PI * i as f64 / 40.0;
            let dir = Vec2::new(ang.cos(), ang.sin());
            let hit = p.cast_ray(&b, dir).unwrap();
            if hit.kind != HitKind::Interior {
                continue;
            }
            // Oracle: march until leaving the polygon.
            let h = 1e-6 * k;
            let mut t = h;
            while p.contains(b.position + dir * t) {
                t += h;
            }
            assert!((t - hit.t).abs() < 2.0 * h, "angle {ang}: {t} vs {}", hit.t);
            assert!((hit.position - (b.position + dir * hit.t)).norm() < 1e-10);
            checked += 1;
        }
        assert!(checked > 30);
    }

    #[test]
    fn parallel_facing_predicate() {
        assert!(square().has_parallel_facing_sides());
        assert!(!triangle().has_parallel_facing_sides());
        let rect =
            Polygon::from_pairs(&[[0.0, 0.0], [3.0, 0.0], [3.0, 1.0], [0.0, 1.0]]).unwrap();
        assert!(rect.has_parallel_facing_sides());
        // Parallel sides whose projections do not overlap.
        let skew =
            Polygon::from_pairs(&[[0.0, 0.0], [1.0, 0.0], [3.0, 1.0], [2.5, 1.0]]).unwrap();
        assert!(!skew.has_parallel_facing_sides());
    }

    #[test]
    fn circle_helpers() {
        assert!((circle_dist(0.99, 0.01) - 0.02).abs() < 1e-15);
        assert!((circle_diff(0.01, 0.99) - 0.02).abs() < 1e-15);
        assert!((circle_diff(0.99, 0.01) + 0.02).abs() < 1e-15);
    }
}
