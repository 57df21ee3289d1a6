//! Singular curves `S⁺_n`, their arrangement, sector fans and branching
//! numbers.
//!
//! Every curve is stored together with the recipe that generates it: a base
//! side, a target vertex and the chain of sides used for pulling back. A node
//! with parameter `u` is obtained by aiming from offset `u` on the base side
//! at the target vertex and then applying the inverse branches of the chain.
//! Polylines are therefore only an index; every refinement (run boundaries,
//! crossings) goes back to the exact curve.

use std::collections::{HashMap, HashSet};
use std::f64::consts::{FRAC_PI_2, TAU};
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::billiard_map::{BilliardMap, Collision, Itinerary, PhasePoint};
use crate::geometry::{circle_diff, HitKind, TANGENTIAL_TOL};

/// Maximal phase-space distance between adjacent polyline nodes.
pub const NODE_SPACING: f64 = 1e-3;
/// Probe-circle resolution used by [`sector_fan`].
pub const FAN_PROBES: usize = 360;
/// Smallest probe radius tried before a fan is declared unstable.
pub const MIN_FAN_RADIUS: f64 = 1e-7;
/// Default starting probe radius.
pub const DEFAULT_FAN_RADIUS: f64 = 1e-4;
/// Sectors whose orbits come closer than this to grazing are not regular.
pub const REGULAR_MARGIN_TOL: f64 = 1e-6;

const BASE_GRID: usize = 512;
const DEDUP_DIST: f64 = 1e-10;
const MAX_FILL_DEPTH: usize = 48;
const FAN_BISECT_DEPTH: usize = 36;
const CELL: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FanError {
    #[error("no singular curve passes through ({s}, {theta})")]
    CenterNotSingular { s: f64, theta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularCurve {
    pub samples: Vec<PhasePoint>,
    /// Base-side offsets generating `samples`.
    pub params: Vec<f64>,
    /// Pull-back depth; 0 for curves of `S`.
    pub generation: usize,
    /// Side carrying the curve.
    pub side: usize,
    pub base_side: usize,
    pub target_vertex: usize,
    /// Sides visited by the first `generation` collisions; starts with `side`.
    pub branch_itinerary: Itinerary,
}

impl SingularCurve {
    /// Exact curve point for base offset `u`, if the chain is defined there.
    pub fn eval(&self, map: &BilliardMap, u: f64) -> Option<Collision> {
        chain_eval(map, self.base_side, self.target_vertex, &self.branch_itinerary.0, u)
    }

    /// `Δs·Δθ < 0` between every pair of adjacent nodes.
    pub fn is_strictly_decreasing(&self) -> bool {
        self.samples
            .windows(2)
            .all(|w| circle_diff(w[1].s, w[0].s) * (w[1].theta - w[0].theta) < 0.0)
    }

    /// `min(π/2 − |θ|)` over the nodes.
    pub fn boundary_margin(&self) -> f64 {
        self.samples
            .iter()
            .map(|p| FRAC_PI_2 - p.theta.abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Distance from `p` to the polyline.
    pub fn distance_to(&self, p: PhasePoint) -> f64 {
        if self.samples.len() == 1 {
            return self.samples[0].dist(&p);
        }
        self.samples
            .windows(2)
            .map(|w| segment_distance(w[0], w[1], p))
            .fold(f64::INFINITY, f64::min)
    }
}

fn segment_distance(a: PhasePoint, b: PhasePoint, p: PhasePoint) -> f64 {
    let (bx, by) = (circle_diff(b.s, a.s), b.theta - a.theta);
    let (px, py) = (circle_diff(p.s, a.s), p.theta - a.theta);
    let len2 = bx * bx + by * by;
    let t = if len2 > 0.0 {
        ((px * bx + py * by) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (px - t * bx).hypot(py - t * by)
}

/// Outgoing state on `side` at offset `w` aimed exactly at `vertex`, when
/// that vertex is the first collision.
pub fn aim_at_vertex(map: &BilliardMap, side: usize, vertex: usize, w: f64) -> Option<Collision> {
    let poly = map.polygon();
    let sd = poly.side(side);
    if !(w > 0.0 && w < sd.length) {
        return None;
    }
    let p = sd.point_at(w);
    let d = poly.vertices()[vertex] - p;
    if d.dot(sd.normal) <= 0.0 {
        return None;
    }
    let dir = d.normalized();
    let hit = poly.cast_from(p, side, dir)?;
    if hit.kind != HitKind::Vertex || hit.vertex != Some(vertex) {
        return None;
    }
    let theta = dir.dot(sd.tangent).atan2(dir.dot(sd.normal));
    if theta.abs() >= FRAC_PI_2 - TANGENTIAL_TOL {
        return None;
    }
    Some(Collision {
        side,
        offset: w,
        theta,
    })
}

fn chain_eval(
    map: &BilliardMap,
    base_side: usize,
    vertex: usize,
    chain: &[usize],
    u: f64,
) -> Option<Collision> {
    let mut c = aim_at_vertex(map, base_side, vertex, u)?;
    for &prev in chain.iter().rev() {
        c = map.inverse_from(c.side, c.offset, c.theta, prev).ok()?;
    }
    Some(c)
}

type Node = (f64, Collision);

#[inline]
fn node_dist(a: &Collision, b: &Collision) -> f64 {
    (b.offset - a.offset).hypot(b.theta - a.theta)
}

/// Valid node closest to the boundary between `valid` and `invalid`.
fn bisect<F: Fn(f64) -> Option<Collision>>(eval: &F, valid: Node, invalid: f64) -> Node {
    let (mut a, mut ca) = valid;
    let mut b = invalid;
    for _ in 0..80 {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        match eval(m) {
            Some(c) => {
                a = m;
                ca = c;
            }
            None => b = m,
        }
    }
    (a, ca)
}

fn fill<F: Fn(f64) -> Option<Collision>>(
    eval: &F,
    a: Node,
    b: Node,
    cur: &mut Vec<Node>,
    out: &mut Vec<Vec<Node>>,
    depth: usize,
) {
    if node_dist(&a.1, &b.1) <= NODE_SPACING
        || depth >= MAX_FILL_DEPTH
        || (b.0 - a.0).abs() <= 1e-15 * (1.0 + a.0.abs())
    {
        cur.push(b);
        return;
    }
    let um = 0.5 * (a.0 + b.0);
    match eval(um) {
        Some(c) => {
            let m = (um, c);
            fill(eval, a, m, cur, out, depth + 1);
            fill(eval, m, b, cur, out, depth + 1);
        }
        None => {
            let end = bisect(eval, a, um);
            if end.0 != a.0 {
                cur.push(end);
            }
            out.push(std::mem::take(cur));
            let start = bisect(eval, b, um);
            cur.push(start);
            if start.0 != b.0 {
                fill(eval, start, b, cur, out, depth + 1);
            }
        }
    }
}

/// Maximal runs of `eval` over `grid`, with boundaries bisected and nodes
/// refined to [`NODE_SPACING`]. `lo`/`hi` bound the parameter domain.
fn trace_runs<F: Fn(f64) -> Option<Collision>>(eval: &F, grid: &[f64], lo: f64, hi: f64) -> Vec<Vec<Node>> {
    let vals: Vec<Option<Collision>> = grid.iter().map(|&u| eval(u)).collect();
    let mut runs = Vec::new();
    let mut i = 0;
    while i < grid.len() {
        if vals[i].is_none() {
            i += 1;
            continue;
        }
        let start = i;
        while i < grid.len() && vals[i].is_some() {
            i += 1;
        }
        let end = i - 1;
        let mut nodes: Vec<Node> = Vec::with_capacity(end - start + 3);
        let before = if start == 0 { lo } else { grid[start - 1] };
        let first = bisect(eval, (grid[start], vals[start].unwrap()), before);
        if first.0 != grid[start] {
            nodes.push(first);
        }
        for k in start..=end {
            nodes.push((grid[k], vals[k].unwrap()));
        }
        let after = if end + 1 == grid.len() { hi } else { grid[end + 1] };
        let last = bisect(eval, (grid[end], vals[end].unwrap()), after);
        if last.0 != grid[end] {
            nodes.push(last);
        }

        let mut cur = vec![nodes[0]];
        for w in nodes.windows(2) {
            fill(eval, w[0], w[1], &mut cur, &mut runs, 0);
        }
        runs.push(cur);
    }
    runs
}

fn make_curves(
    map: &BilliardMap,
    runs: Vec<Vec<Node>>,
    generation: usize,
    base_side: usize,
    target_vertex: usize,
    chain: &[usize],
) -> Vec<SingularCurve> {
    let mut curves = Vec::new();
    for run in runs {
        let mut kept: Vec<Node> = Vec::with_capacity(run.len());
        for (k, node) in run.iter().enumerate() {
            if let Some(prev) = kept.last() {
                if node_dist(&prev.1, &node.1) < DEDUP_DIST {
                    if k + 1 == run.len() && kept.len() > 1 {
                        kept.pop();
                    } else {
                        continue;
                    }
                }
            }
            kept.push(*node);
        }
        if kept.len() < 2 {
            continue;
        }
        curves.push(SingularCurve {
            samples: kept.iter().map(|(_, c)| map.phase_point(c)).collect(),
            params: kept.iter().map(|(u, _)| *u).collect(),
            generation,
            side: kept[0].1.side,
            base_side,
            target_vertex,
            branch_itinerary: Itinerary(chain.to_vec()),
        });
    }
    curves
}

/// Curves of `S`: points whose first collision is a vertex.
#[allow(non_snake_case)]
pub fn compute_S(map: &BilliardMap) -> Vec<SingularCurve> {
    let poly = map.polygon();
    let d = poly.side_count();
    let pairs: Vec<(usize, usize)> = (0..d)
        .flat_map(|i| (0..d).filter(move |&v| v != i && v != (i + 1) % d).map(move |v| (i, v)))
        .collect();
    pairs
        .par_iter()
        .flat_map_iter(|&(i, v)| {
            let len = poly.side(i).length;
            let grid: Vec<f64> = (0..BASE_GRID)
                .map(|k| len * (k as f64 + 0.5) / BASE_GRID as f64)
                .collect();
            let eval = |u: f64| aim_at_vertex(map, i, v, u);
            let runs = trace_runs(&eval, &grid, 0.0, len);
            make_curves(map, runs, 0, i, v, &[])
        })
        .collect()
}

/// Preimages of `curve` under each branch leaving another side.
pub fn pull_back_once(map: &BilliardMap, curve: &SingularCurve) -> Vec<SingularCurve> {
    let d = map.polygon().side_count();
    let mut grid = Vec::with_capacity(2 * curve.params.len());
    for w in curve.params.windows(2) {
        grid.push(w[0]);
        grid.push(0.5 * (w[0] + w[1]));
    }
    grid.push(*curve.params.last().unwrap());
    let (lo, hi) = (grid[0], *grid.last().unwrap());
    let mut out = Vec::new();
    for prev in (0..d).filter(|&p| p != curve.side) {
        let mut chain = Vec::with_capacity(curve.branch_itinerary.len() + 1);
        chain.push(prev);
        chain.extend_from_slice(&curve.branch_itinerary.0);
        let eval = |u: f64| chain_eval(map, curve.base_side, curve.target_vertex, &chain, u);
        let runs = trace_runs(&eval, &grid, lo, hi);
        out.extend(make_curves(
            map,
            runs,
            curve.generation + 1,
            curve.base_side,
            curve.target_vertex,
            &chain,
        ));
    }
    out
}

/// `curves` followed by `k` further generations of preimages of the
/// highest-generation input curves.
pub fn pull_back(map: &BilliardMap, curves: &[SingularCurve], k: usize) -> Vec<SingularCurve> {
    let mut out = curves.to_vec();
    let top = curves.iter().map(|c| c.generation).max().unwrap_or(0);
    let mut frontier: Vec<SingularCurve> = curves.iter().filter(|c| c.generation == top).cloned().collect();
    for _ in 0..k {
        let next: Vec<SingularCurve> = frontier
            .par_iter()
            .flat_map_iter(|c| pull_back_once(map, c))
            .collect();
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// A transversal intersection of two arrangement curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crossing {
    pub curves: (usize, usize),
    pub point: PhasePoint,
}

/// Polyline approximation of `S⁺_n` (generations `0..n`).
#[derive(Debug, Clone, Serialize)]
pub struct Arrangement {
    pub order: usize,
    pub curves: Vec<SingularCurve>,
}

#[derive(Serialize)]
struct ArrangementRow<'a> {
    curve_id: usize,
    generation: usize,
    itinerary: &'a str,
    s: f64,
    theta: f64,
}

impl Arrangement {
    pub fn build(map: &BilliardMap, order: usize) -> Self {
        let base = compute_S(map);
        let curves = if order <= 1 {
            base
        } else {
            pull_back(map, &base, order - 1)
        };
        Self {
            order: order.max(1),
            curves,
        }
    }

    pub fn node_count(&self) -> usize {
        self.curves.iter().map(|c| c.samples.len()).sum()
    }

    pub fn generation(&self, g: usize) -> impl Iterator<Item = &SingularCurve> {
        self.curves.iter().filter(move |c| c.generation == g)
    }

    pub fn all_strictly_decreasing(&self) -> bool {
        self.curves.iter().all(SingularCurve::is_strictly_decreasing)
    }

    /// `min(π/2 − |θ|)` over nodes of generation at least `from`.
    pub fn boundary_margin(&self, from: usize) -> f64 {
        self.curves
            .iter()
            .filter(|c| c.generation >= from)
            .map(SingularCurve::boundary_margin)
            .fold(f64::INFINITY, f64::min)
    }

    /// Distance from `p` to the union of curves of generation `g` (all
    /// generations if `None`).
    pub fn distance_to(&self, p: PhasePoint, g: Option<usize>) -> f64 {
        self.curves
            .iter()
            .filter(|c| g.is_none_or(|g| c.generation == g))
            .map(|c| c.distance_to(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Pairwise polyline intersections, refined on the exact curves.
    pub fn crossings(&self, map: &BilliardMap) -> Vec<Crossing> {
        // Bucket segments by (side, cell) in (offset, θ) coordinates.
        let poly = map.polygon();
        let mut buckets: HashMap<(usize, i64, i64), Vec<(usize, usize)>> = HashMap::new();
        for (ci, c) in self.curves.iter().enumerate() {
            let s0 = poly.side(c.side).s_start;
            for k in 0..c.samples.len() - 1 {
                let (a, b) = (c.samples[k], c.samples[k + 1]);
                let (ax, bx) = (circle_diff(a.s, s0), circle_diff(b.s, s0));
                let (x0, x1) = (ax.min(bx), ax.max(bx));
                let (y0, y1) = (a.theta.min(b.theta), a.theta.max(b.theta));
                for cx in (x0 / CELL).floor() as i64..=(x1 / CELL).floor() as i64 {
                    for cy in (y0 / CELL).floor() as i64..=(y1 / CELL).floor() as i64 {
                        buckets.entry((c.side, cx, cy)).or_default().push((ci, k));
                    }
                }
            }
        }
        let mut keys: Vec<_> = buckets.keys().copied().collect();
        keys.sort_unstable();
        let mut seen = HashSet::new();
        let mut raw = Vec::new();
        for key in keys {
            let segs = &buckets[&key];
            for (i, &(ca, ka)) in segs.iter().enumerate() {
                for &(cb, kb) in &segs[i + 1..] {
                    if ca == cb {
                        continue;
                    }
                    let pair = if ca < cb { (ca, ka, cb, kb) } else { (cb, kb, ca, ka) };
                    if !seen.insert(pair) {
                        continue;
                    }
                    if let Some((ta, tb)) = self.segment_hit(pair) {
                        raw.push((pair, ta, tb));
                    }
                }
            }
        }
        let refined: Vec<Crossing> = raw
            .par_iter()
            .map(|&((ca, ka, cb, kb), ta, tb)| {
                let (a, b) = (&self.curves[ca], &self.curves[cb]);
                let point = refine_crossing(map, a, ka, ta, b, kb, tb);
                Crossing {
                    curves: (ca, cb),
                    point,
                }
            })
            .collect();
        let mut out = Vec::new();
        let mut keys = HashSet::new();
        for c in refined {
            if keys.insert(round_key(c.point)) {
                out.push(c);
            }
        }
        out
    }

    fn segment_hit(&self, (ca, ka, cb, kb): (usize, usize, usize, usize)) -> Option<(f64, f64)> {
        let (a0, a1) = (self.curves[ca].samples[ka], self.curves[ca].samples[ka + 1]);
        let (b0, b1) = (self.curves[cb].samples[kb], self.curves[cb].samples[kb + 1]);
        let r = (circle_diff(a1.s, a0.s), a1.theta - a0.theta);
        let q = (circle_diff(b1.s, b0.s), b1.theta - b0.theta);
        let w = (circle_diff(b0.s, a0.s), b0.theta - a0.theta);
        let den = r.0 * q.1 - r.1 * q.0;
        if den.abs() < 1e-300 {
            return None;
        }
        let ta = (w.0 * q.1 - w.1 * q.0) / den;
        let tb = (w.0 * r.1 - w.1 * r.0) / den;
        const EPS: f64 = 1e-9;
        ((-EPS..=1.0 + EPS).contains(&ta) && (-EPS..=1.0 + EPS).contains(&tb)).then_some((ta, tb))
    }

    /// Candidate fan centres: crossings and curve endpoints, with endpoints
    /// on `V` snapped to the vertex arclength.
    pub fn candidates(&self, map: &BilliardMap) -> Vec<PhasePoint> {
        let poly = map.polygon();
        let mut pts: Vec<PhasePoint> = self.crossings(map).into_iter().map(|c| c.point).collect();
        for c in &self.curves {
            for p in [c.samples[0], *c.samples.last().unwrap()] {
                let (_, dist) = poly.nearest_vertex(p.s);
                let (v, _) = poly.nearest_vertex(p.s);
                let s = if dist < 1e-7 { poly.s_vertices()[v] } else { p.s };
                pts.push(PhasePoint::new(s, p.theta));
            }
        }
        let mut seen = HashSet::new();
        pts.retain(|p| seen.insert(round_key(*p)));
        pts
    }

    /// CSV rows `(curve_id, generation, itinerary, s, theta)`.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for (id, c) in self.curves.iter().enumerate() {
            let mut sides = c.branch_itinerary.0.clone();
            sides.push(c.base_side);
            let itin = Itinerary(sides).to_string();
            for p in &c.samples {
                wr.serialize(ArrangementRow {
                    curve_id: id,
                    generation: c.generation,
                    itinerary: &itin,
                    s: p.s,
                    theta: p.theta,
                })?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

fn round_key(p: PhasePoint) -> (i64, i64) {
    ((p.s.rem_euclid(1.0) * 1e8).round() as i64, (p.theta * 1e8).round() as i64)
}

fn line_hit(a0: &Collision, a1: &Collision, b0: &Collision, b1: &Collision) -> Option<(f64, f64)> {
    let r = (a1.offset - a0.offset, a1.theta - a0.theta);
    let q = (b1.offset - b0.offset, b1.theta - b0.theta);
    let w = (b0.offset - a0.offset, b0.theta - a0.theta);
    let den = r.0 * q.1 - r.1 * q.0;
    if den.abs() < 1e-300 {
        return None;
    }
    Some(((w.0 * q.1 - w.1 * q.0) / den, (w.0 * r.1 - w.1 * r.0) / den))
}

/// Secant refinement of a polyline crossing on the exact curves.
fn refine_crossing(
    map: &BilliardMap,
    a: &SingularCurve,
    ka: usize,
    ta: f64,
    b: &SingularCurve,
    kb: usize,
    tb: f64,
) -> PhasePoint {
    let lerp = |c: &SingularCurve, k: usize, t: f64| {
        let (p, q) = (c.samples[k], c.samples[k + 1]);
        PhasePoint::new(
            (p.s + t * circle_diff(q.s, p.s)).rem_euclid(1.0),
            p.theta + t * (q.theta - p.theta),
        )
    };
    let mut best = lerp(a, ka, ta);
    let mut ua = a.params[ka] + ta * (a.params[ka + 1] - a.params[ka]);
    let mut ub = b.params[kb] + tb * (b.params[kb + 1] - b.params[kb]);
    let mut ha = 0.5 * (a.params[ka + 1] - a.params[ka]).abs();
    let mut hb = 0.5 * (b.params[kb + 1] - b.params[kb]).abs();
    for _ in 0..60 {
        let pts = (
            a.eval(map, ua - ha),
            a.eval(map, ua + ha),
            b.eval(map, ub - hb),
            b.eval(map, ub + hb),
        );
        let (Some(a0), Some(a1), Some(b0), Some(b1)) = pts else {
            ha *= 0.25;
            hb *= 0.25;
            if ha < 1e-16 && hb < 1e-16 {
                break;
            }
            continue;
        };
        let Some((sa, sb)) = line_hit(&a0, &a1, &b0, &b1) else { break };
        if !(-4.0..=5.0).contains(&sa) || !(-4.0..=5.0).contains(&sb) {
            break;
        }
        ua = (ua - ha) + sa * 2.0 * ha;
        ub = (ub - hb) + sb * 2.0 * hb;
        if let (Some(pa), Some(pb)) = (a.eval(map, ua), b.eval(map, ub)) {
            let cand = map.phase_point(&Collision {
                side: pa.side,
                offset: 0.5 * (pa.offset + pb.offset),
                theta: 0.5 * (pa.theta + pb.theta),
            });
            if cand.dist(&best) < 1e-3 {
                best = cand;
            }
            if node_dist(&pa, &pb) < 1e-13 {
                break;
            }
        }
        ha = (ha * 0.05).max(1e-15 * (1.0 + ua.abs()));
        hb = (hb * 0.05).max(1e-15 * (1.0 + ub.abs()));
    }
    best
}

/// One arc of a probe circle with a constant itinerary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sector {
    pub itinerary: Itinerary,
    /// Angular interval on the probe circle, radians, `start ≤ end`; `end`
    /// may exceed `2π` for the arc that wraps.
    pub arc: (f64, f64),
    pub regular: bool,
    /// Smallest `π/2 − |θ̄|` seen along the arc.
    pub grazing_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SectorFan {
    pub center: PhasePoint,
    pub order: usize,
    pub radius: f64,
    /// Itinerary sequence agreed at `radius` and `radius / 2`.
    pub stable: bool,
    pub sectors: Vec<Sector>,
}

impl SectorFan {
    pub fn regular_count(&self) -> usize {
        self.sectors.iter().filter(|s| s.regular).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Probe {
    Regular(Itinerary, f64),
    Singular,
    Outside,
}

impl Probe {
    fn same(&self, o: &Probe) -> bool {
        match (self, o) {
            (Probe::Regular(a, _), Probe::Regular(b, _)) => a == b,
            (Probe::Singular, Probe::Singular) | (Probe::Outside, Probe::Outside) => true,
            _ => false,
        }
    }
}

/// Side sequence of `n` steps and the smallest distance `π/2 − |θ̄|` of an
/// arrival angle from grazing.
fn classify(map: &BilliardMap, p: PhasePoint, n: usize) -> Probe {
    if p.theta.abs() >= FRAC_PI_2 {
        return Probe::Outside;
    }
    let Ok(mut c) = map.locate(PhasePoint::new(p.s.rem_euclid(1.0), p.theta)) else {
        return Probe::Singular;
    };
    let mut sides = Vec::with_capacity(n + 1);
    sides.push(c.side);
    let mut margin = f64::INFINITY;
    for _ in 0..n {
        match map.advance(&mut c) {
            Ok(fl) => margin = margin.min(FRAC_PI_2 - fl.pre_angle.abs()),
            Err(_) => return Probe::Singular,
        }
        sides.push(c.side);
    }
    Probe::Regular(Itinerary(sides), margin)
}

#[inline]
fn on_circle(center: PhasePoint, r: f64, phi: f64) -> PhasePoint {
    let (sn, cs) = phi.sin_cos();
    PhasePoint::new(center.s + r * cs, center.theta + r * sn)
}

struct RawFan {
    sectors: Vec<(Itinerary, Vec<(f64, f64)>)>,
    outside: bool,
    singular: bool,
}

impl RawFan {
    fn signature(&self) -> Vec<&Itinerary> {
        let seq: Vec<&Itinerary> = self.sectors.iter().map(|(i, _)| i).collect();
        if seq.is_empty() {
            return seq;
        }
        let best = (0..seq.len())
            .min_by(|&a, &b| {
                let ra = seq[a..].iter().chain(&seq[..a]);
                let rb = seq[b..].iter().chain(&seq[..b]);
                ra.cmp(rb)
            })
            .unwrap();
        seq[best..].iter().chain(&seq[..best]).copied().collect()
    }
}

fn subdivide(
    map: &BilliardMap,
    center: PhasePoint,
    r: f64,
    n: usize,
    a: (f64, &Probe),
    b: (f64, &Probe),
    depth: usize,
    out: &mut Vec<(f64, Probe)>,
) {
    if depth == 0 {
        return;
    }
    let m = 0.5 * (a.0 + b.0);
    let pm = classify(map, on_circle(center, r, m), n);
    if !a.1.same(&pm) {
        subdivide(map, center, r, n, a, (m, &pm), depth - 1, out);
    }
    if !pm.same(b.1) {
        subdivide(map, center, r, n, (m, &pm), b, depth - 1, out);
    }
    out.push((m, pm));
}

fn raw_fan(map: &BilliardMap, center: PhasePoint, n: usize, r: f64) -> RawFan {
    let m = FAN_PROBES;
    // Phase offset keeps probes off axis-aligned directions.
    #[allow(clippy::approx_constant)]
    let phis: Vec<f64> = (0..m).map(|j| TAU * (j as f64 + 0.318) / m as f64).collect();
    let probes: Vec<Probe> = phis.iter().map(|&p| classify(map, on_circle(center, r, p), n)).collect();
    let mut samples: Vec<(f64, Probe)> = Vec::with_capacity(2 * m);
    for j in 0..m {
        let k = (j + 1) % m;
        let phi_k = if k == 0 { phis[0] + TAU } else { phis[k] };
        samples.push((phis[j], probes[j].clone()));
        if !probes[j].same(&probes[k]) {
            subdivide(
                map,
                center,
                r,
                n,
                (phis[j], &probes[j]),
                (phi_k, &probes[k]),
                FAN_BISECT_DEPTH,
                &mut samples,
            );
        }
    }
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));

    let outside = samples.iter().any(|(_, p)| *p == Probe::Outside);
    let singular = samples.iter().any(|(_, p)| *p == Probe::Singular);
    let mut sectors: Vec<(Itinerary, Vec<(f64, f64)>)> = Vec::new();
    for (phi, p) in &samples {
        let Probe::Regular(itin, margin) = p else { continue };
        match sectors.last_mut() {
            Some((last, pts)) if last == itin => pts.push((*phi, *margin)),
            _ => sectors.push((itin.clone(), vec![(*phi, *margin)])),
        }
    }
    if sectors.len() > 1 && sectors[0].0 == sectors[sectors.len() - 1].0 {
        let (_, tail) = sectors.pop().unwrap();
        let head = &mut sectors[0].1;
        let mut merged: Vec<(f64, f64)> = tail.into_iter().map(|(p, mg)| (p - TAU, mg)).collect();
        merged.append(head);
        *head = merged;
        // Keep arcs in increasing start order with angles in [0, 2π).
        let first = sectors.remove(0);
        let shifted = (first.0, first.1.into_iter().map(|(p, mg)| (p + TAU, mg)).collect());
        sectors.push(shifted);
    }
    RawFan {
        sectors,
        outside,
        singular,
    }
}

/// Sector structure of `N⁺_n` around `center`.
///
/// The probe radius starts at `radius` and is halved until the cyclic
/// itinerary sequence agrees with the one at half the radius. A sector is
/// regular when that agreement holds, its orbits keep a grazing margin above
/// [`REGULAR_MARGIN_TOL`], and the margin does not shrink in proportion to
/// the radius (which signals a tangential singularity at the centre).
pub fn sector_fan(
    map: &BilliardMap,
    center: PhasePoint,
    n: usize,
    radius: f64,
) -> Result<SectorFan, FanError> {
    let mut r = radius;
    let mut fan = raw_fan(map, center, n, r);
    let stable = loop {
        let half = raw_fan(map, center, n, 0.5 * r);
        if fan.signature() == half.signature() {
            break true;
        }
        if 0.5 * r < MIN_FAN_RADIUS {
            r *= 0.5;
            fan = half;
            break false;
        }
        r *= 0.5;
        fan = half;
    };
    if fan.sectors.len() < 2 && !fan.singular {
        return Err(FanError::CenterNotSingular {
            s: center.s,
            theta: center.theta,
        });
    }
    let sectors = fan
        .sectors
        .iter()
        .map(|(itin, pts)| {
            let margin = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            let step = (pts.len() / 32).max(1);
            let mut quarter = f64::INFINITY;
            for (k, &(phi, _)) in pts.iter().enumerate() {
                if k % step != 0 && k + 1 != pts.len() {
                    continue;
                }
                if let Probe::Regular(i, mg) = classify(map, on_circle(center, 0.25 * r, phi), n) {
                    if &i == itin {
                        quarter = quarter.min(mg);
                    }
                }
            }
            let decays = quarter.is_finite() && quarter < 0.5 * margin;
            Sector {
                itinerary: itin.clone(),
                arc: (pts[0].0, pts[pts.len() - 1].0),
                regular: stable && !fan.outside && margin > REGULAR_MARGIN_TOL && !decays,
                grazing_margin: margin,
            }
        })
        .collect();
    Ok(SectorFan {
        center,
        order: n,
        radius: r,
        stable,
        sectors,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchingReport {
    pub order: usize,
    pub b_n: usize,
    pub witness: Option<PhasePoint>,
    pub candidates: usize,
    pub fan: Option<SectorFan>,
}

/// Largest number of regular order-`n` sectors over `candidates`.
pub fn branching_over(map: &BilliardMap, n: usize, candidates: &[PhasePoint]) -> BranchingReport {
    let fans: Vec<Option<SectorFan>> = candidates
        .par_iter()
        .map(|&c| sector_fan(map, c, n, DEFAULT_FAN_RADIUS).ok())
        .collect();
    let mut best: Option<SectorFan> = None;
    for fan in fans.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| fan.regular_count() > b.regular_count()) {
            best = Some(fan);
        }
    }
    BranchingReport {
        order: n,
        b_n: best.as_ref().map_or(0, SectorFan::regular_count),
        witness: best.as_ref().map(|f| f.center),
        candidates: candidates.len(),
        fan: best,
    }
}

/// Branching number `b_n` with candidate centres taken from the order-`n`
/// arrangement.
pub fn branching_number(map: &BilliardMap, n: usize) -> BranchingReport {
    let arr = Arrangement::build(map, n);
    branching_over(map, n, &arr.candidates(map))
}

/// The linear bound `(2n − 1)·b_1`.
pub fn branching_bound(b1: usize, n: usize) -> usize {
    (2 * n - 1) * b1
}
