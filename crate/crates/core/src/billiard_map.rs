//! The billiard map with a reflection law, its derivative, orbits and
//! inverse branches.
//!
//! Phase points are `(s, θ)` with `s` the normalized arclength and `θ` the
//! angle of the outgoing velocity from the inward normal, positive towards
//! the positive tangent. `θ = 0` is a perpendicular bounce.
//!
//! For a regular step from `(s, θ)` the specular arrival angle `θ̄₁` satisfies
//! `v·T₁ = sin θ̄₁` and `v·N₁ = -cos θ̄₁` for the flight direction `v`, and the
//! map returns `(s₁, f(θ̄₁))`. With this convention
//!
//! ```text
//! DΦ = -[ cos θ / cos θ̄₁   t / cos θ̄₁ ]
//!       [       0            f'(θ̄₁)   ]
//! ```
//!
//! where `t` is the flight length in normalized units.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;
use std::ops::Mul;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{circle_diff, GeometryError, HitKind, Polygon, Vec2, TANGENTIAL_TOL};
use crate::reflection::ReflectionLaw;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhasePoint {
    pub s: f64,
    pub theta: f64,
}

impl PhasePoint {
    pub const fn new(s: f64, theta: f64) -> Self {
        Self { s, theta }
    }

    /// Euclidean distance in `(s, θ)` with `s` taken on the circle.
    pub fn dist(&self, o: &PhasePoint) -> f64 {
        circle_diff(self.s, o.s).hypot(self.theta - o.theta)
    }
}

/// Why an orbit cannot be continued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Singularity {
    StartAtVertex,
    BoundaryAngle,
    VertexHit,
    Grazing,
    NoIntersection,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("phase point starts on a vertex (s = {0})")]
    StartAtVertex(f64),
    #[error("angle {0} is on the boundary of the phase cylinder")]
    BoundaryAngle(f64),
    #[error("flight hits vertex {vertex}")]
    SingularVertexHit { vertex: usize },
    #[error("flight arrives tangentially at s = {0}")]
    SingularGrazing(f64),
    #[error("ray found no boundary intersection")]
    NoIntersection,
    #[error("point is singular: {0:?}")]
    SingularPoint(Singularity),
    #[error("orbit is singular at step {step}: {kind:?}")]
    SingularOrbit { step: usize, kind: Singularity },
    #[error("point is outside the image of the requested inverse branch: {0}")]
    NotInBranchImage(String),
}

impl MapError {
    pub fn singularity(&self) -> Option<Singularity> {
        match self {
            MapError::StartAtVertex(_) => Some(Singularity::StartAtVertex),
            MapError::BoundaryAngle(_) => Some(Singularity::BoundaryAngle),
            MapError::SingularVertexHit { .. } => Some(Singularity::VertexHit),
            MapError::SingularGrazing(_) => Some(Singularity::Grazing),
            MapError::NoIntersection => Some(Singularity::NoIntersection),
            MapError::SingularPoint(k) => Some(*k),
            MapError::SingularOrbit { kind, .. } => Some(*kind),
            MapError::NotInBranchImage(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    Regular,
    VertexHit,
    Grazing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    /// Specular arrival angle `θ̄₁`, before the law is applied.
    pub pre_angle: f64,
    pub out: PhasePoint,
    /// Euclidean flight length (normalized units).
    pub flight: f64,
    pub side_hit: usize,
    /// Arclength offset of the hit along `side_hit`.
    pub offset_hit: f64,
    pub outcome: StepOutcome,
    pub vertex: Option<usize>,
}

/// Sequence of visited sides; consecutive entries differ.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Itinerary(pub Vec<usize>);

impl Itinerary {
    pub fn sides(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_admissible(&self) -> bool {
        self.0.windows(2).all(|w| w[0] != w[1])
    }
}

impl std::fmt::Display for Itinerary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|s| s.to_string()).collect();
        write!(f, "{}", parts.join("-"))
    }
}

/// 2×2 matrix, row major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0f64, |a, &b| a.max(b.abs()))
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        Mat2([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }
}

/// Position on the boundary in side coordinates, plus the outgoing angle.
/// This is the state carried through long orbits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Collision {
    pub side: usize,
    pub offset: f64,
    pub theta: f64,
}

/// Per-step data produced while advancing a [`Collision`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flight {
    pub theta_out: f64,
    pub pre_angle: f64,
    pub length: f64,
}

impl Flight {
    /// Horizontal expansion factor `cos θ / cos θ̄₁`.
    #[inline]
    pub fn alpha(&self) -> f64 {
        self.theta_out.cos() / self.pre_angle.cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Termination {
    /// Number of regular steps completed before the singular one.
    pub step: usize,
    pub kind: Singularity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Orbit {
    /// `x₀, x₁, …`; one more entry than completed steps.
    pub points: Vec<PhasePoint>,
    /// Side of every entry of `points`.
    pub itinerary: Itinerary,
    pub flights: Vec<f64>,
    pub pre_angles: Vec<f64>,
    pub terminated: Option<Termination>,
}

#[derive(Serialize)]
struct OrbitRow {
    k: usize,
    s: f64,
    theta: f64,
    side: usize,
    t: Option<f64>,
    outcome: &'static str,
}

impl Orbit {
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    /// CSV rows `(k, s, theta, side, t, outcome)`; `t` and `outcome` describe
    /// the flight leaving row `k`.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let n = self.points.len();
        for (k, p) in self.points.iter().enumerate() {
            let (t, outcome) = if k + 1 < n {
                (Some(self.flights[k]), "regular")
            } else {
                match self.terminated {
                    Some(term) => (
                        None,
                        match term.kind {
                            Singularity::StartAtVertex => "start_at_vertex",
                            Singularity::BoundaryAngle => "boundary_angle",
                            Singularity::VertexHit => "vertex_hit",
                            Singularity::Grazing => "grazing",
                            Singularity::NoIntersection => "no_intersection",
                        },
                    ),
                    None => (None, "end"),
                }
            };
            wr.serialize(OrbitRow {
                k,
                s: p.s,
                theta: p.theta,
                side: self.itinerary.0.get(k).copied().unwrap_or(usize::MAX),
                t,
                outcome,
            })?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// A polygon together with a reflection law.
#[derive(Debug, Clone)]
pub struct BilliardMap {
    polygon: Polygon,
    law: ReflectionLaw,
}

impl BilliardMap {
    pub fn new(polygon: Polygon, law: ReflectionLaw) -> Self {
        Self { polygon, law }
    }

    pub fn polygon(&self) -> &Polygon {
        &self.polygon
    }

    pub fn law(&self) -> &ReflectionLaw {
        &self.law
    }

    /// Converts a phase point to side coordinates.
    pub fn locate(&self, x: PhasePoint) -> Result<Collision, MapError> {
        if !(x.theta.abs() < FRAC_PI_2) {
            return Err(MapError::BoundaryAngle(x.theta));
        }
        let b = self.polygon.boundary_point(x.s).map_err(|e| match e {
            GeometryError::AtVertex { s, .. } => MapError::StartAtVertex(s),
            _ => MapError::StartAtVertex(x.s),
        })?;
        Ok(Collision {
            side: b.side_index,
            offset: b.offset,
            theta: x.theta,
        })
    }

    pub fn phase_point(&self, c: &Collision) -> PhasePoint {
        PhasePoint::new(
            (self.polygon.side(c.side).s_start + c.offset).rem_euclid(1.0),
            c.theta,
        )
    }

    /// Outgoing unit velocity for angle `theta` on side `side`.
    #[inline]
    pub fn direction(&self, side: usize, theta: f64) -> Vec2 {
        let sd = self.polygon.side(side);
        let (sn, cs) = theta.sin_cos();
        sd.normal * cs + sd.tangent * sn
    }

    /// Specular flight from side coordinates; never applies the law.
    #[inline]
    fn specular(&self, side: usize, offset: f64, theta: f64) -> Result<StepResult, MapError> {
        let sd = self.polygon.side(side);
        let dir = self.direction(side, theta);
        let hit = self
            .polygon
            .cast_from(sd.point_at(offset), side, dir)
            .ok_or(MapError::NoIntersection)?;
        let target = self.polygon.side(hit.side);
        let pre = dir.dot(target.tangent).atan2(-dir.dot(target.normal));
        let outcome = match hit.kind {
            HitKind::Vertex => StepOutcome::VertexHit,
            HitKind::Grazing => StepOutcome::Grazing,
            HitKind::Interior if pre.abs() >= FRAC_PI_2 - TANGENTIAL_TOL => StepOutcome::Grazing,
            HitKind::Interior => StepOutcome::Regular,
        };
        Ok(StepResult {
            pre_angle: pre,
            out: PhasePoint::new(hit.s, pre),
            flight: hit.t,
            side_hit: hit.side,
            offset_hit: hit.offset,
            outcome,
            vertex: hit.vertex,
        })
    }

    /// Specular step with its outcome, singular or not.
    pub fn standard_outcome(&self, x: PhasePoint) -> Result<StepResult, MapError> {
        let c = self.locate(x)?;
        self.specular(c.side, c.offset, c.theta)
    }

    /// Step with the law applied, singular or not.
    pub fn step_outcome(&self, x: PhasePoint) -> Result<StepResult, MapError> {
        let mut r = self.standard_outcome(x)?;
        r.out.theta = self.law.eval(r.pre_angle);
        Ok(r)
    }

    fn require_regular(r: StepResult) -> Result<StepResult, MapError> {
        match r.outcome {
            StepOutcome::Regular => Ok(r),
            StepOutcome::VertexHit => Err(MapError::SingularVertexHit {
                vertex: r.vertex.unwrap_or(usize::MAX),
            }),
            StepOutcome::Grazing => Err(MapError::SingularGrazing(r.out.s)),
        }
    }

    /// The specular billiard map `Φ_P`.
    pub fn standard_step(&self, x: PhasePoint) -> Result<StepResult, MapError> {
        Self::require_regular(self.standard_outcome(x)?)
    }

    /// The billiard map with reflection law, `R_f ∘ Φ_P`.
    pub fn step(&self, x: PhasePoint) -> Result<StepResult, MapError> {
        Self::require_regular(self.step_outcome(x)?)
    }

    /// Advances `c` in place by one step of the map with reflection law.
    #[inline]
    pub fn advance(&self, c: &mut Collision) -> Result<Flight, Singularity> {
        let r = match self.specular(c.side, c.offset, c.theta) {
            Ok(r) => r,
            Err(_) => return Err(Singularity::NoIntersection),
        };
        match r.outcome {
            StepOutcome::Regular => {}
            StepOutcome::VertexHit => return Err(Singularity::VertexHit),
            StepOutcome::Grazing => return Err(Singularity::Grazing),
        }
        let flight = Flight {
            theta_out: c.theta,
            pre_angle: r.pre_angle,
            length: r.flight,
        };
        c.side = r.side_hit;
        c.offset = r.offset_hit;
        c.theta = self.law.eval(r.pre_angle);
        Ok(flight)
    }

    /// `DΦ` at a regular point.
    pub fn derivative(&self, x: PhasePoint) -> Result<Mat2, MapError> {
        let r = self.step_outcome(x).map_err(|e| match e.singularity() {
            Some(k) => MapError::SingularPoint(k),
            None => e,
        })?;
        if r.outcome != StepOutcome::Regular {
            return Err(MapError::SingularPoint(match r.outcome {
                StepOutcome::VertexHit => Singularity::VertexHit,
                _ => Singularity::Grazing,
            }));
        }
        Ok(self.derivative_from(x.theta, r.pre_angle, r.flight))
    }

    /// `DΦ` from the outgoing angle, the arrival angle and the flight length.
    #[inline]
    pub fn derivative_from(&self, theta: f64, pre_angle: f64, flight: f64) -> Mat2 {
        let c1 = pre_angle.cos();
        Mat2([
            [-theta.cos() / c1, -flight / c1],
            [0.0, -self.law.deriv(pre_angle)],
        ])
    }

    /// Iterates up to `n` steps, stopping at the first singular step.
    pub fn orbit(&self, x0: PhasePoint, n: usize) -> Orbit {
        let mut orbit = Orbit {
            points: vec![x0],
            itinerary: Itinerary(Vec::new()),
            flights: Vec::new(),
            pre_angles: Vec::new(),
            terminated: None,
        };
        let mut c = match self.locate(x0) {
            Ok(c) => c,
            Err(e) => {
                orbit.itinerary.0.push(self.polygon.side_of(x0.s));
                orbit.terminated = Some(Termination {
                    step: 0,
                    kind: e.singularity().unwrap_or(Singularity::StartAtVertex),
                });
                return orbit;
            }
        };
        orbit.itinerary.0.push(c.side);
        for k in 0..n {
            match self.advance(&mut c) {
                Ok(fl) => {
                    orbit.points.push(self.phase_point(&c));
                    orbit.itinerary.0.push(c.side);
                    orbit.flights.push(fl.length);
                    orbit.pre_angles.push(fl.pre_angle);
                }
                Err(kind) => {
                    orbit.terminated = Some(Termination { step: k, kind });
                    break;
                }
            }
        }
        orbit
    }

    /// Side sequence of the first `n` steps (starting side first), or the
    /// step index at which the orbit is singular.
    pub fn itinerary(&self, x0: PhasePoint, n: usize) -> Result<Itinerary, Termination> {
        let mut c = self.locate(x0).map_err(|e| Termination {
            step: 0,
            kind: e.singularity().unwrap_or(Singularity::StartAtVertex),
        })?;
        let mut sides = Vec::with_capacity(n + 1);
        sides.push(c.side);
        for k in 0..n {
            self.advance(&mut c)
                .map_err(|kind| Termination { step: k, kind })?;
            sides.push(c.side);
        }
        Ok(Itinerary(sides))
    }

    /// Preimage of `y` under the branch of the map leaving from `prev_side`.
    pub fn inverse_branch_step(&self, y: PhasePoint, prev_side: usize) -> Result<PhasePoint, MapError> {
        let cy = self
            .locate(y)
            .map_err(|e| MapError::NotInBranchImage(e.to_string()))?;
        let x = self.inverse_from(cy.side, cy.offset, y.theta, prev_side)?;
        Ok(self.phase_point(&x))
    }

    /// Inverse branch in side coordinates.
    pub fn inverse_from(
        &self,
        side: usize,
        offset: f64,
        theta: f64,
        prev_side: usize,
    ) -> Result<Collision, MapError> {
        if prev_side == side {
            return Err(MapError::NotInBranchImage("flight cannot return to its side".into()));
        }
        let pre = self
            .law
            .inverse_eval(theta)
            .map_err(|e| MapError::NotInBranchImage(e.to_string()))?;
        if pre.abs() >= FRAC_PI_2 - TANGENTIAL_TOL {
            return Err(MapError::NotInBranchImage("tangential arrival".into()));
        }
        let sd = self.polygon.side(side);
        let (sn, cs) = pre.sin_cos();
        let arrival = sd.tangent * sn - sd.normal * cs;
        let hit = self
            .polygon
            .cast_from(sd.point_at(offset), side, -arrival)
            .ok_or(MapError::NoIntersection)?;
        if hit.side != prev_side {
            return Err(MapError::NotInBranchImage(format!(
                "reversed flight lands on side {} instead of {prev_side}",
                hit.side
            )));
        }
        if hit.kind != HitKind::Interior {
            return Err(MapError::NotInBranchImage(format!(
                "reversed flight is singular ({:?})",
                hit.kind
            )));
        }
        let src = self.polygon.side(prev_side);
        let th = arrival.dot(src.tangent).atan2(arrival.dot(src.normal));
        if th.abs() >= FRAC_PI_2 - TANGENTIAL_TOL {
            return Err(MapError::NotInBranchImage("tangential departure".into()));
        }
        Ok(Collision {
            side: prev_side,
            offset: hit.offset,
            theta: th,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reflection::linear_law;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(sigma: f64) -> BilliardMap {
        BilliardMap::new(
            Polygon::from_pairs(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap(),
            linear_law(sigma).unwrap(),
        )
    }

    fn triangle(sigma: f64) -> BilliardMap {
        BilliardMap::new(
            Polygon::from_pairs(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap(),
            linear_law(sigma).unwrap(),
        )
    }

    #[test]
    fn perpendicular_bounce() {
        let m = square(0.5);
        let r = m.standard_step(PhasePoint::new(0.125, 0.0)).unwrap();
        assert!((r.out.s - 0.625).abs() < 1e-15);
        assert_eq!(r.pre_angle, 0.0);
        assert!((r.flight - 0.25).abs() < 1e-15);
        let r = m.step(PhasePoint::new(0.125, 0.0)).unwrap();
        assert_eq!(r.out.theta, 0.0);
    }

    #[test]
    fn aimed_at_corner_is_singular() {
        let m = square(0.5);
        let x = PhasePoint::new(0.125, 0.5f64.atan());
        assert!(matches!(
            m.standard_step(x),
            Err(MapError::SingularVertexHit { vertex: 2 })
        ));
        let o = m.orbit(x, 5);
        assert_eq!(
            o.terminated,
            Some(Termination {
                step: 0,
                kind: Singularity::VertexHit
            })
        );
    }

    #[test]
    fn start_at_vertex() {
        let m = square(0.5);
        assert!(matches!(
            m.step(PhasePoint::new(0.25, 0.1)),
            Err(MapError::StartAtVertex(_))
        ));
        assert!(matches!(
            m.step(PhasePoint::new(0.1, FRAC_PI_2)),
            Err(MapError::BoundaryAngle(_))
        ));
    }

    #[test]
    fn square_derivative() {
        let m = square(0.5);
        let d = m.derivative(PhasePoint::new(0.125, 0.0)).unwrap();
        assert_eq!(d, Mat2([[-1.0, -0.25], [0.0, -0.5]]));
    }

    /// Dense ray-marching oracle for the first collision.
    #[test]
    fn triangle_step_matches_marching() {
        let m = triangle(0.5);
        let x = PhasePoint::new(0.1, 0.3);
        let r = m.standard_step(x).unwrap();
        let p = m.polygon();
        let b = p.boundary_point(x.s).unwrap();
        let dir = m.direction(b.side_index, x.theta);
        let h = 1e-7;
        let mut t = h;
        while p.contains(b.position + dir * t) {
            t += h;
        }
        assert!((t - r.flight).abs() < 2.0 * h);
        let hit = b.position + dir * r.flight;
        let expect = p.boundary_point(r.out.s).unwrap().position;
        assert!((hit - expect).norm() < 1e-12);
        // Specular reflection keeps the tangential component.
        let sd = p.side(r.side_hit);
        assert!((dir.dot(sd.tangent) - r.pre_angle.sin()).abs() < 1e-14);
        assert!((dir.dot(sd.normal) + r.pre_angle.cos()).abs() < 1e-14);

        let full = m.step(x).unwrap();
        assert_eq!(full.out.theta, m.law().eval(r.out.theta));
        assert_eq!(full.out.s, r.out.s);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let m = triangle(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        let mut checked = 0;
        while checked < 200 {
            let x = PhasePoint::new(rng.gen_range(0.0..1.0), rng.gen_range(-1.4..1.4));
            let Ok(d) = m.derivative(x) else { continue };
            let side = m.step(x).unwrap().side_hit;
            let probe = |dx: f64, dt: f64| {
                m.step(PhasePoint::new(x.s + dx, x.theta + dt))
                    .ok()
                    .filter(|r| r.side_hit == side)
            };
            let (Some(sp), Some(sm), Some(tp), Some(tm)) =
                (probe(h, 0.0), probe(-h, 0.0), probe(0.0, h), probe(0.0, -h))
            else {
                continue;
            };
            let fd = Mat2([
                [
                    circle_diff(sp.out.s, sm.out.s) / (2.0 * h),
                    circle_diff(tp.out.s, tm.out.s) / (2.0 * h),
                ],
                [
                    (sp.out.theta - sm.out.theta) / (2.0 * h),
                    (tp.out.theta - tm.out.theta) / (2.0 * h),
                ],
            ]);
            let err = Mat2([
                [fd.0[0][0] - d.0[0][0], fd.0[0][1] - d.0[0][1]],
                [fd.0[1][0] - d.0[1][0], fd.0[1][1] - d.0[1][1]],
            ]);
            assert!(err.max_abs() / d.max_abs() < 1e-6, "{x:?}: {fd:?} vs {d:?}");
            assert_eq!(d.0[1][0], 0.0);
            assert!(d.0.iter().flatten().all(|&e| e <= 0.0));
            checked += 1;
        }
    }

    #[test]
    fn square_orbit_is_period_two() {
        let m = square(0.5);
        let o = m.orbit(PhasePoint::new(0.125, 0.0), 10);
        assert!(o.terminated.is_none());
        assert_eq!(o.points.len(), 11);
        for (k, p) in o.points.iter().enumerate() {
            let s = if k % 2 == 0 { 0.125 } else { 0.625 };
            assert!((p.s - s).abs() < 1e-14 && p.theta == 0.0);
        }
        assert_eq!(o.itinerary.0[..4], [0, 2, 0, 2]);
        assert!(o.itinerary.is_admissible());
    }

    #[test]
    fn long_orbit_stays_in_law_image() {
        let m = triangle(0.5);
        let o = m.orbit(PhasePoint::new(0.37, 0.81), 10_000);
        assert!(o.terminated.is_none());
        let bound = 0.5 * FRAC_PI_2;
        assert!(o.points[1..].iter().all(|p| p.theta.abs() <= bound));
    }

    #[test]
    fn inverse_branch_round_trip() {
        let m = square(0.5);
        let back = m
            .inverse_branch_step(PhasePoint::new(0.625, 0.0), 0)
            .unwrap();
        assert!((back.s - 0.125).abs() < 1e-14 && back.theta.abs() < 1e-15);

        let m = triangle(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut n = 0;
        while n < 500 {
            let x = PhasePoint::new(rng.gen_range(0.0..1.0), rng.gen_range(-1.5..1.5));
            let Ok(c) = m.locate(x) else { continue };
            let Ok(r) = m.step(x) else { continue };
            let back = m.inverse_branch_step(r.out, c.side).unwrap();
            assert!(back.dist(&x) < 1e-10, "{x:?} -> {back:?}");
            n += 1;
        }
    }

    #[test]
    fn inverse_rejects_wrong_branch() {
        let m = triangle(0.5);
        let x = PhasePoint::new(0.1, 0.3);
        let r = m.step(x).unwrap();
        let c = m.locate(x).unwrap();
        let other = (0..3).find(|&s| s != c.side && s != r.side_hit).unwrap();
        assert!(matches!(
            m.inverse_branch_step(r.out, other),
            Err(MapError::NotInBranchImage(_))
        ));
        // Outside the image of the law.
        assert!(m.inverse_branch_step(PhasePoint::new(r.out.s, 1.0), c.side).is_err());
    }

    #[test]
    fn orbit_csv_rows() {
        let m = square(0.5);
        let o = m.orbit(PhasePoint::new(0.125, 0.0), 2);
        let mut buf = Vec::new();
        o.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,s,theta,side,t,outcome");
        assert_eq!(lines[1], "0,0.125,0.0,0,0.25,regular");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].ends_with(",,end"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn triangular_cocycle(s in 0.0f64..1.0, theta in -1.4f64..1.4, n in 1usize..12) {
                let m = triangle(0.5);
                let o = m.orbit(PhasePoint::new(s, theta), n);
                prop_assume!(o.terminated.is_none());
                let mut prod = Mat2::IDENTITY;
                let mut diag11 = 1.0;
                let mut diag22 = 1.0;
                for k in 0..n {
                    let d = m.derivative_from(o.points[k].theta, o.pre_angles[k], o.flights[k]);
                    prod = d * prod;
                    diag11 *= o.points[k].theta.cos() / o.pre_angles[k].cos();
                    diag22 *= m.law().deriv(o.pre_angles[k]);
                }
                prop_assert_eq!(prod.0[1][0], 0.0);
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                prop_assert!((prod.0[0][0] - sign * diag11).abs() <= 1e-12 * diag11.abs());
                prop_assert!((prod.0[1][1] - sign * diag22).abs() <= 1e-12 * diag22.abs());
            }

            #[test]
            fn horizontal_segments_stay_horizontal(s in 0.0f64..1.0, theta in -1.4f64..1.4) {
                let m = triangle(0.5);
                let base = m.step(PhasePoint::new(s, theta));
                prop_assume!(base.is_ok());
                let base = base.unwrap();
                for k in 1..=8 {
                    let r = m.step(PhasePoint::new(s + k as f64 * 1e-7, theta));
                    if let Ok(r) = r {
                        if r.side_hit == base.side_hit {
                            prop_assert!((r.out.theta - base.out.theta).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }
}
