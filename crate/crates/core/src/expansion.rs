//! The unstable cocycle `α`, expansion factors along orbits, splitting of
//! horizontal curves by the singular set, the n-step expansion estimate and
//! the growth inequality.
//!
//! Along an h-curve the angle is constant, so every step of the map is an
//! affine map in `s` with slope `-α` on each branch. Two independent routes
//! to the components of `Γ \ N⁺_n` are provided: [`subdivide_h_curve`]
//! bisects on itinerary changes, [`propagate_h_curve`] pushes the curve
//! forward exactly, splitting at the offsets whose rays pass through a
//! vertex.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::billiard_map::{BilliardMap, Itinerary, MapError, PhasePoint};
use crate::geometry::{HitKind, Polygon, Vec2, TANGENTIAL_TOL};
use crate::singular_set::Arrangement;

/// Split points of [`subdivide_h_curve`] are located to this accuracy in `s`.
pub const SPLIT_TOL: f64 = 1e-10;
const UNIFORM_SAMPLES: usize = 65;
const CLUSTER_LEVELS: i32 = 44;
const MAX_PIECES: usize = 2_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExpansionError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("h-curve must have positive length below 1 and |θ| < π/2")]
    BadCurve,
    #[error("forward images split into more than {0} pieces")]
    TooManyPieces(usize),
    #[error("eps = {eps} reaches the boundary strip (limit {limit})")]
    EpsTooLarge { eps: f64, limit: f64 },
}

/// Horizontal segment `{(start + t, θ) : 0 < t < length}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HCurve {
    pub theta: f64,
    pub start: f64,
    pub length: f64,
}

impl HCurve {
    pub fn new(start: f64, length: f64, theta: f64) -> Result<Self, ExpansionError> {
        if !(length > 0.0 && length < 1.0 && theta.abs() < FRAC_PI_2) {
            return Err(ExpansionError::BadCurve);
        }
        Ok(Self {
            theta,
            start: start.rem_euclid(1.0),
            length,
        })
    }

    /// Centred at `c` with the given length.
    pub fn centered(c: PhasePoint, length: f64) -> Result<Self, ExpansionError> {
        Self::new(c.s - 0.5 * length, length, c.theta)
    }

    pub fn point(&self, t: f64) -> PhasePoint {
        PhasePoint::new((self.start + t).rem_euclid(1.0), self.theta)
    }

    /// Open arc `(a, b)` in `s`; `b` may exceed 1 when the arc wraps.
    pub fn s_interval(&self) -> (f64, f64) {
        (self.start, self.start + self.length)
    }
}

/// One component of `Γ \ N⁺_n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HComponent {
    pub curve: HCurve,
    pub itinerary: Itinerary,
    pub alpha_n: f64,
}

/// `α(x) = cos θ / cos θ̄₁`.
pub fn alpha(map: &BilliardMap, x: PhasePoint) -> Result<f64, MapError> {
    let r = map.step(x)?;
    Ok(x.theta.cos() / r.pre_angle.cos())
}

/// Lower bound `cos(πλ/2)` of `α` on the image of the map.
pub fn alpha_lower_bound(lambda: f64) -> f64 {
    (FRAC_PI_2 * lambda).cos()
}

/// `α_n(x) = α(x)·α(Φx)⋯α(Φⁿ⁻¹x)`.
pub fn expansion_n(map: &BilliardMap, x: PhasePoint, n: usize) -> Result<f64, MapError> {
    let mut c = map.locate(x)?;
    let mut prod = 1.0;
    for step in 0..n {
        let fl = map
            .advance(&mut c)
            .map_err(|kind| MapError::SingularOrbit { step, kind })?;
        prod *= fl.alpha();
    }
    Ok(prod)
}

fn label(map: &BilliardMap, p: PhasePoint, n: usize) -> Option<(Itinerary, f64)> {
    let mut c = map.locate(p).ok()?;
    let mut sides = Vec::with_capacity(n + 1);
    sides.push(c.side);
    let mut a = 1.0;
    for _ in 0..n {
        a *= map.advance(&mut c).ok()?.alpha();
        sides.push(c.side);
    }
    Some((Itinerary(sides), a))
}

type Sample = (f64, Option<(Itinerary, f64)>);

fn same(a: &Sample, b: &Sample) -> bool {
    match (&a.1, &b.1) {
        (Some(x), Some(y)) => x.0 == y.0,
        (None, None) => true,
        _ => false,
    }
}

fn split(map: &BilliardMap, g: &HCurve, n: usize, a: &Sample, b: &Sample, out: &mut Vec<Sample>) {
    if b.0 - a.0 <= SPLIT_TOL {
        return;
    }
    let m = 0.5 * (a.0 + b.0);
    let sm = (m, label(map, g.point(m), n));
    if !same(a, &sm) {
        split(map, g, n, a, &sm, out);
    }
    if !same(&sm, b) {
        split(map, g, n, &sm, b, out);
    }
    out.push(sm);
}

/// Components of `Γ \ N⁺_n` found by bisection on itinerary changes.
///
/// Samples are uniform plus geometrically clustered towards the centre and
/// both ends, where components of fan-centred curves concentrate. `α_n` is
/// constant on every component and is taken from its middle sample.
pub fn subdivide_h_curve(map: &BilliardMap, g: &HCurve, n: usize) -> Vec<HComponent> {
    let l = g.length;
    let mut ts: Vec<f64> = (0..UNIFORM_SAMPLES)
        .map(|k| l * (k as f64 + 0.5) / UNIFORM_SAMPLES as f64)
        .collect();
    for j in 1..=CLUSTER_LEVELS {
        let h = 0.5 * l * 2f64.powi(-j);
        ts.extend([0.5 * l - h, 0.5 * l + h, h, l - h]);
    }
    ts.push(0.5 * l);
    ts.retain(|&t| t > 0.0 && t < l);
    ts.sort_by(f64::total_cmp);
    ts.dedup();

    let base: Vec<Sample> = ts.iter().map(|&t| (t, label(map, g.point(t), n))).collect();
    let mut samples = base.clone();
    for w in base.windows(2) {
        if !same(&w[0], &w[1]) {
            split(map, g, n, &w[0], &w[1], &mut samples);
        }
    }
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Runs of equal itinerary; boundaries at bracket midpoints.
    let mut comps: Vec<(f64, f64, Itinerary, Vec<(f64, f64)>)> = Vec::new();
    let mut prev_t = 0.0;
    for (t, lab) in &samples {
        match lab {
            Some((itin, a)) => match comps.last_mut() {
                Some((_, hi, last, pts)) if last == itin && *hi >= prev_t => {
                    *hi = *t;
                    pts.push((*t, *a));
                }
                _ => {
                    let lo = if comps.is_empty() { 0.0 } else { 0.5 * (prev_t + t) };
                    if let Some(c) = comps.last_mut() {
                        c.1 = lo;
                    }
                    comps.push((lo, *t, itin.clone(), vec![(*t, *a)]));
                }
            },
            None => {
                if let Some(c) = comps.last_mut() {
                    c.1 = *t;
                }
            }
        }
        prev_t = *t;
    }
    if let Some(c) = comps.last_mut() {
        c.1 = l;
    }
    comps
        .into_iter()
        .map(|(lo, hi, itin, pts)| {
            let mid = 0.5 * (lo + hi);
            let a = pts
                .iter()
                .min_by(|x, y| (x.0 - mid).abs().total_cmp(&(y.0 - mid).abs()))
                .unwrap()
                .1;
            HComponent {
                curve: HCurve {
                    theta: g.theta,
                    start: (g.start + lo).rem_euclid(1.0),
                    length: hi - lo,
                },
                itinerary: itin,
                alpha_n: a,
            }
        })
        .collect()
}

/// `Σ 1/α_n` over components.
pub fn beta_of(components: &[HComponent]) -> f64 {
    components.iter().map(|c| 1.0 / c.alpha_n).sum()
}

/// Image of a sub-interval of Γ after some steps: the parameter interval
/// `[t0, t1]` on Γ maps affinely onto offsets `[w0, w1]` of `side`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HPiece {
    pub t0: f64,
    pub t1: f64,
    pub side: usize,
    pub w0: f64,
    pub w1: f64,
    pub theta: f64,
    /// `|dw/dt|`, the accumulated expansion.
    pub alpha: f64,
    pub itinerary: Vec<usize>,
}

impl HPiece {
    fn t_at(&self, w: f64) -> f64 {
        self.t0 + (w - self.w0) / (self.w1 - self.w0) * (self.t1 - self.t0)
    }
}

/// Offset along side `side` where the ray leaving it at angle `theta`
/// passes through point `c`; `None` if `c` is not ahead of the side.
fn offset_through(poly: &Polygon, side: usize, theta: f64, c: Vec2) -> Option<f64> {
    let sd = poly.side(side);
    let rel = c - sd.start;
    if rel.dot(sd.normal) <= 0.0 {
        return None;
    }
    let (sn, cs) = theta.sin_cos();
    let v = sd.normal * cs + sd.tangent * sn;
    Some(rel.cross(v) / cs)
}

/// First side hit with the hit offset strictly inside the side, and that
/// offset. Unlike [`Polygon::cast_from`] this never reports vertex hits, so
/// it stays usable on arbitrarily short pieces.
fn first_hit_strict(poly: &Polygon, origin: Vec2, skip: usize, dir: Vec2) -> Option<(usize, f64, f64)> {
    let mut best: Option<(usize, f64, f64)> = None;
    for (j, side) in poly.sides().iter().enumerate() {
        if j == skip {
            continue;
        }
        let denom = dir.cross(side.tangent);
        if denom.abs() < 1e-300 {
            continue;
        }
        let rel = side.start - origin;
        let t = rel.cross(side.tangent) / denom;
        let w = rel.cross(dir) / denom;
        if t > 0.0 && w > 0.0 && w < side.length && best.is_none_or(|b| t < b.1) {
            best = Some((j, t, w));
        }
    }
    best
}

/// Offset on side `j`'s line reached from `origin` along `dir`.
fn line_offset(poly: &Polygon, j: usize, origin: Vec2, dir: Vec2) -> f64 {
    let side = poly.side(j);
    let rel = side.start - origin;
    rel.cross(dir) / dir.cross(side.tangent)
}

fn advance_piece(map: &BilliardMap, p: &HPiece, out: &mut Vec<HPiece>) {
    let poly = map.polygon();
    let sd = poly.side(p.side);
    let (lo, hi) = (p.w0.min(p.w1), p.w0.max(p.w1));
    let mut cuts = vec![lo];
    for c in poly.vertices() {
        if let Some(w) = offset_through(poly, p.side, p.theta, *c) {
            if w > lo && w < hi {
                cuts.push(w);
            }
        }
    }
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    let (sn, cs) = p.theta.sin_cos();
    let dir = sd.normal * cs + sd.tangent * sn;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(b > a) {
            continue;
        }
        let mid = 0.5 * (a + b);
        let Some((j, _, _)) = first_hit_strict(poly, sd.point_at(mid), p.side, dir) else {
            continue;
        };
        let target = poly.side(j);
        let pre = dir.dot(target.tangent).atan2(-dir.dot(target.normal));
        if pre.abs() >= FRAC_PI_2 - TANGENTIAL_TOL {
            continue;
        }
        let wa = line_offset(poly, j, sd.point_at(a), dir);
        let wb = line_offset(poly, j, sd.point_at(b), dir);
        let mut itinerary = p.itinerary.clone();
        itinerary.push(j);
        out.push(HPiece {
            t0: p.t_at(a),
            t1: p.t_at(b),
            side: j,
            w0: wa,
            w1: wb,
            theta: map.law().eval(pre),
            alpha: p.alpha * cs / pre.cos(),
            itinerary,
        });
    }
}

/// Pieces of `Γ` at time 0, split where `Γ` crosses `V`.
fn initial_pieces(map: &BilliardMap, g: &HCurve) -> Vec<HPiece> {
    let poly = map.polygon();
    let mut cuts = vec![0.0];
    for &sv in poly.s_vertices() {
        let t = (sv - g.start).rem_euclid(1.0);
        if t > 0.0 && t < g.length {
            cuts.push(t);
        }
    }
    cuts.push(g.length);
    cuts.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let side = poly.side_of(g.point(mid).s);
        let s0 = poly.side(side).s_start;
        let off = |t: f64| {
            let d = (g.start + t - s0).rem_euclid(1.0);
            // Keep the far end of the side at `length`, not 0.
            if d > 0.5 && t == w[1] { d } else if d > 1.0 - 1e-12 { d - 1.0 } else { d }
        };
        out.push(HPiece {
            t0: w[0],
            t1: w[1],
            side,
            w0: off(w[0]),
            w1: off(w[1]).max(off(w[0])),
            theta: g.theta,
            alpha: 1.0,
            itinerary: vec![side],
        });
    }
    out
}

/// Exact forward images of `Γ` after `0..=n` steps; entry `k` lists the
/// pieces of `Φᵏ(Γ \ N⁺_k)`.
pub fn propagate_h_curve(map: &BilliardMap, g: &HCurve, n: usize) -> Result<Vec<Vec<HPiece>>, ExpansionError> {
    let mut levels = vec![initial_pieces(map, g)];
    for _ in 0..n {
        let mut next = Vec::new();
        for p in levels.last().unwrap() {
            advance_piece(map, p, &mut next);
        }
        if next.len() > MAX_PIECES {
            return Err(ExpansionError::TooManyPieces(MAX_PIECES));
        }
        levels.push(next);
    }
    Ok(levels)
}

/// Components of `Γ \ N⁺_n` from exact propagation.
pub fn exact_components(map: &BilliardMap, g: &HCurve, n: usize) -> Result<Vec<HComponent>, ExpansionError> {
    let levels = propagate_h_curve(map, g, n)?;
    let mut pieces = levels.into_iter().last().unwrap();
    pieces.sort_by(|a, b| a.t0.min(a.t1).total_cmp(&b.t0.min(b.t1)));
    // Pieces cut at occluded vertices continue with the same itinerary.
    let mut runs: Vec<(f64, f64, Vec<usize>, f64)> = Vec::new();
    for p in pieces {
        let (lo, hi) = (p.t0.min(p.t1), p.t0.max(p.t1));
        match runs.last_mut() {
            Some(last) if last.2 == p.itinerary && (last.1 - lo).abs() < 1e-12 => last.1 = hi,
            _ => runs.push((lo, hi, p.itinerary, p.alpha)),
        }
    }
    Ok(runs
        .into_iter()
        .map(|(lo, hi, itin, a)| HComponent {
            curve: HCurve {
                theta: g.theta,
                start: (g.start + lo).rem_euclid(1.0),
                length: hi - lo,
            },
            itinerary: Itinerary(itin),
            alpha_n: a,
        })
        .collect())
}

fn union_length(mut iv: Vec<(f64, f64)>) -> f64 {
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for (a, b) in iv {
        match cur {
            Some((ca, cb)) if a <= cb => cur = Some((ca, cb.max(b))),
            Some((ca, cb)) => {
                total += cb - ca;
                cur = Some((a, b));
            }
            None => cur = Some((a, b)),
        }
    }
    if let Some((a, b)) = cur {
        total += b - a;
    }
    total
}

/// Offsets on `side` where the horizontal line at `theta` meets `N⁺`
/// (side ends and curves of `S`).
fn singular_offsets(map: &BilliardMap, side: usize, theta: f64) -> Vec<f64> {
    let poly = map.polygon();
    let sd = poly.side(side);
    let (sn, cs) = theta.sin_cos();
    let dir = sd.normal * cs + sd.tangent * sn;
    let d = poly.side_count();
    let mut out = vec![0.0, sd.length];
    for v in (0..d).filter(|&v| v != side && v != (side + 1) % d) {
        let Some(w) = offset_through(poly, side, theta, poly.vertices()[v]) else { continue };
        if !(w > 0.0 && w < sd.length) {
            continue;
        }
        if let Some(hit) = poly.cast_from(sd.point_at(w), side, dir) {
            if hit.kind == HitKind::Vertex && hit.vertex == Some(v) {
                out.push(w);
            }
        }
    }
    out
}

/// Length of the part of `pieces`' preimage on Γ whose image lies within
/// horizontal distance `eps` of `N⁺`.
fn measured_near_singular(map: &BilliardMap, pieces: &[HPiece], eps: f64) -> f64 {
    pieces
        .iter()
        .map(|p| {
            let (lo, hi) = (p.w0.min(p.w1), p.w0.max(p.w1));
            let iv: Vec<(f64, f64)> = singular_offsets(map, p.side, p.theta)
                .into_iter()
                .filter_map(|c| {
                    let (a, b) = ((c - eps).max(lo), (c + eps).min(hi));
                    (b > a).then_some((a, b))
                })
                .collect();
            union_length(iv) / p.alpha
        })
        .sum()
}

/// `ℓ(Γ ∩ Φ^{-r}(N⁺_ε))` with the neighbourhood measured horizontally.
pub fn growth_check(map: &BilliardMap, g: &HCurve, r: usize, eps: f64) -> Result<f64, ExpansionError> {
    Ok(growth_table(map, g, r, &[eps])?[r][0])
}

/// `growth_check` for all `r ≤ r_max` and every `eps`, sharing the forward
/// propagation. Entry `[r][k]` belongs to `eps[k]`.
pub fn growth_table(
    map: &BilliardMap,
    g: &HCurve,
    r_max: usize,
    eps: &[f64],
) -> Result<Vec<Vec<f64>>, ExpansionError> {
    let limit = FRAC_PI_2 * (1.0 - map.law().lambda());
    if let Some(&e) = eps.iter().find(|&&e| e >= limit) {
        return Err(ExpansionError::EpsTooLarge { eps: e, limit });
    }
    let levels = propagate_h_curve(map, g, r_max)?;
    Ok(levels
        .iter()
        .map(|pieces| eps.iter().map(|&e| measured_near_singular(map, pieces, e)).collect())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthRow {
    pub curve: usize,
    pub r: usize,
    pub eps: f64,
    pub length: f64,
    pub measured: f64,
    pub bound: f64,
}

/// Fitted constants of `measured ≤ C·ε·(aʳ + ℓ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthFit {
    pub c: f64,
    pub a: f64,
    /// Fraction of cells satisfying the bound.
    pub coverage: f64,
    /// Largest `measured / bound` over all cells.
    pub max_excess: f64,
    pub feasible: bool,
}

/// Coverage quantile used to pick `C` for a given `a`.
pub const FIT_QUANTILE: f64 = 0.99;

/// Tightest feasible fit. For each `a` on a grid over `(0, 1]`, `C` is the
/// smallest constant such that the [`FIT_QUANTILE`] of cells satisfy the
/// bound and every cell is within twice it; the pair with the smallest total
/// bound wins. `a = 1` is on the grid, so `a < 1` is a genuine outcome.
pub fn fit_growth(rows: &[GrowthRow]) -> GrowthFit {
    let mut best: Option<(f64, GrowthFit)> = None;
    for k in 1..=40 {
        let a = k as f64 / 40.0;
        let denom = |row: &GrowthRow| row.eps * (a.powi(row.r as i32) + row.length);
        let mut ratios: Vec<f64> = rows.iter().map(|row| row.measured / denom(row)).collect();
        ratios.sort_by(f64::total_cmp);
        if ratios.is_empty() {
            break;
        }
        let idx = ((FIT_QUANTILE * ratios.len() as f64).ceil() as usize).clamp(1, ratios.len()) - 1;
        let top = *ratios.last().unwrap();
        let c = ratios[idx].max(0.5 * top).max(f64::MIN_POSITIVE);
        let total: f64 = rows.iter().map(|row| c * denom(row)).sum();
        let covered = ratios.iter().filter(|&&q| q <= c).count();
        let fit = GrowthFit {
            c,
            a,
            coverage: covered as f64 / ratios.len() as f64,
            max_excess: top / c,
            feasible: false,
        };
        if best.is_none_or(|(t, _)| total < t) {
            best = Some((total, fit));
        }
    }
    let Some((_, mut fit)) = best else {
        return GrowthFit {
            c: 0.0,
            a: 1.0,
            coverage: 0.0,
            max_excess: f64::INFINITY,
            feasible: false,
        };
    };
    fit.feasible = fit.a < 1.0 && fit.coverage >= FIT_QUANTILE && fit.max_excess <= 2.0;
    fit
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    pub curves: Vec<HCurve>,
    pub rows: Vec<GrowthRow>,
    pub fit: GrowthFit,
}

#[derive(Serialize)]
struct GrowthCsvRow {
    curve: usize,
    r: usize,
    eps: f64,
    length: f64,
    measured: f64,
    bound: f64,
}

impl GrowthReport {
    /// CSV rows `(curve, r, eps, length, measured, bound)`.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for row in &self.rows {
            wr.serialize(GrowthCsvRow {
                curve: row.curve,
                r: row.r,
                eps: row.eps,
                length: row.length,
                measured: row.measured,
                bound: row.bound,
            })?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Random h-curves inside the image strip `|θ| ≤ λπ/2`, lengths
/// log-uniform in `[min_len, max_len]`.
pub fn random_h_curves(map: &BilliardMap, count: usize, min_len: f64, max_len: f64, seed: u64) -> Vec<HCurve> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tmax = FRAC_PI_2 * map.law().lambda();
    (0..count)
        .map(|_| {
            let len = (rng.gen_range(min_len.ln()..=max_len.ln())).exp();
            HCurve {
                theta: rng.gen_range(-tmax..=tmax),
                start: rng.gen_range(0.0..1.0),
                length: len,
            }
        })
        .collect()
}

/// Growth table over `curves × 0..=r_max × eps` and its fit.
pub fn growth_experiment(
    map: &BilliardMap,
    curves: &[HCurve],
    r_max: usize,
    eps: &[f64],
) -> Result<GrowthReport, ExpansionError> {
    let tables: Vec<Vec<Vec<f64>>> = curves
        .par_iter()
        .map(|g| growth_table(map, g, r_max, eps))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::with_capacity(curves.len() * (r_max + 1) * eps.len());
    for (ci, (g, table)) in curves.iter().zip(&tables).enumerate() {
        for (r, per_eps) in table.iter().enumerate() {
            for (&e, &measured) in eps.iter().zip(per_eps) {
                rows.push(GrowthRow {
                    curve: ci,
                    r,
                    eps: e,
                    length: g.length,
                    measured,
                    bound: 0.0,
                });
            }
        }
    }
    let fit = fit_growth(&rows);
    for row in &mut rows {
        row.bound = fit.c * row.eps * (fit.a.powi(row.r as i32) + row.length);
    }
    Ok(GrowthReport {
        curves: curves.to_vec(),
        rows,
        fit,
    })
}

/// Per-curve entry of an [`ExpansionReport`].
#[derive(Debug, Clone, Serialize)]
pub struct CurveExpansion {
    pub curve: HCurve,
    pub worst_case: bool,
    pub beta: f64,
    pub components: Vec<(HCurve, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionReport {
    pub n: usize,
    pub delta: f64,
    pub beta_hat: f64,
    pub success: bool,
    pub worst_curve: HCurve,
    /// Smallest `α_n` over all sampled components.
    #[serde(rename = "A_n")]
    pub a_n: f64,
    pub sampled_curves: usize,
    pub worst_case_curves: usize,
    pub component_table: Vec<CurveExpansion>,
}

/// Depth of the arrangement used for fan-centred worst cases.
pub const WORST_CASE_ORDER: usize = 3;

/// Fan-centred h-curves of length `delta`: centred at arrangement vertices,
/// and shifted in θ so that every curve through the vertex is crossed
/// separately. Only centres in the image strip `|θ| ≤ λπ/2` are used; off
/// it `α` is not bounded below and the sum is unbounded.
pub fn worst_case_curves(map: &BilliardMap, n: usize, delta: f64) -> Vec<HCurve> {
    let arr = Arrangement::build(map, n.min(WORST_CASE_ORDER));
    let tmax = FRAC_PI_2 * map.law().lambda();
    let offsets = [0.0, delta / 8.0, -delta / 8.0, delta / 64.0, -delta / 64.0];
    let mut out = Vec::new();
    for c in arr.candidates(map) {
        for dt in offsets {
            let theta = c.theta + dt;
            if theta.abs() <= tmax {
                out.push(HCurve {
                    theta,
                    start: (c.s - 0.5 * delta).rem_euclid(1.0),
                    length: delta,
                });
            }
        }
    }
    out
}

/// Estimate of `β = sup_Γ Σ_γ 1/α_n(γ)` over fan-centred worst cases and
/// `samples` random curves of length `delta` in the image strip.
pub fn n_step_expansion(map: &BilliardMap, n: usize, delta: f64, samples: usize, seed: u64) -> ExpansionReport {
    let worst = worst_case_curves(map, n, delta);
    let random = random_h_curves(map, samples, delta, delta, seed);
    n_step_expansion_over(map, n, delta, &worst, &random)
}

pub fn n_step_expansion_over(
    map: &BilliardMap,
    n: usize,
    delta: f64,
    worst: &[HCurve],
    random: &[HCurve],
) -> ExpansionReport {
    let all: Vec<(HCurve, bool)> = worst
        .iter()
        .map(|&c| (c, true))
        .chain(random.iter().map(|&c| (c, false)))
        .collect();
    let table: Vec<CurveExpansion> = all
        .par_iter()
        .map(|&(curve, worst_case)| {
            let comps = subdivide_h_curve(map, &curve, n);
            CurveExpansion {
                curve,
                worst_case,
                beta: beta_of(&comps),
                components: comps.iter().map(|c| (c.curve, c.alpha_n)).collect(),
            }
        })
        .collect();
    let mut beta_hat = 0.0;
    let mut worst_curve = all.first().map(|c| c.0).unwrap_or(HCurve {
        theta: 0.0,
        start: 0.0,
        length: delta,
    });
    let mut a_n = f64::INFINITY;
    for e in &table {
        if e.beta > beta_hat {
            beta_hat = e.beta;
            worst_curve = e.curve;
        }
        for &(_, a) in &e.components {
            a_n = a_n.min(a);
        }
    }
    ExpansionReport {
        n,
        delta,
        beta_hat,
        success: beta_hat < 1.0,
        worst_curve,
        a_n,
        sampled_curves: table.len(),
        worst_case_curves: worst.len(),
        component_table: table,
    }
}
