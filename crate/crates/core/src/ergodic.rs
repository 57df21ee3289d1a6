//! Numerical ergodic theory of the map: Birkhoff averages, SRB components
//! and their basins, Lyapunov exponents, periodic orbits, correlation decay
//! and attractor samples.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::billiard_map::{BilliardMap, Collision, Itinerary, MapError, PhasePoint, Termination};
use crate::geometry::{circle_diff, Vec2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ErgodicError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Map(#[from] MapError),
}

/// Bounded test functions on phase space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    Sin2PiS,
    Cos2PiS,
    Theta,
    ThetaSquared,
    /// Indicator of the side the point lies on.
    Side(usize),
    Constant(f64),
}

impl Observable {
    pub fn name(&self) -> String {
        match self {
            Self::Sin2PiS => "sin2pi_s".into(),
            Self::Cos2PiS => "cos2pi_s".into(),
            Self::Theta => "theta".into(),
            Self::ThetaSquared => "theta_sq".into(),
            Self::Side(i) => format!("side_{i}"),
            Self::Constant(c) => format!("const_{c}"),
        }
    }

    #[inline]
    pub fn eval(&self, s: f64, theta: f64, side: usize) -> f64 {
        match *self {
            Self::Sin2PiS => (TAU * s).sin(),
            Self::Cos2PiS => (TAU * s).cos(),
            Self::Theta => theta,
            Self::ThetaSquared => theta * theta,
            Self::Side(i) => f64::from(u8::from(side == i)),
            Self::Constant(c) => c,
        }
    }

    /// Sup norm over phase space.
    pub fn bound(&self) -> f64 {
        match *self {
            Self::Sin2PiS | Self::Cos2PiS | Self::Side(_) => 1.0,
            Self::Theta => FRAC_PI_2,
            Self::ThetaSquared => FRAC_PI_2 * FRAC_PI_2,
            Self::Constant(c) => c.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservableSet {
    pub observables: Vec<Observable>,
}

impl ObservableSet {
    /// `sin 2πs, cos 2πs, θ, θ²` and one indicator per side.
    pub fn standard(sides: usize) -> Self {
        let mut observables = vec![
            Observable::Sin2PiS,
            Observable::Cos2PiS,
            Observable::Theta,
            Observable::ThetaSquared,
        ];
        observables.extend((0..sides).map(Observable::Side));
        Self { observables }
    }

    pub fn new(observables: Vec<Observable>) -> Self {
        Self { observables }
    }

    pub fn len(&self) -> usize {
        self.observables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observables.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.observables.iter().map(Observable::name).collect()
    }

    pub fn bound(&self) -> f64 {
        self.observables.iter().map(Observable::bound).fold(0.0, f64::max)
    }

    #[inline]
    fn accumulate(&self, s: f64, theta: f64, side: usize, acc: &mut [f64]) {
        for (a, o) in acc.iter_mut().zip(&self.observables) {
            *a += o.eval(s, theta, side);
        }
    }
}

/// Default split-sample tolerance of [`birkhoff_average`].
pub const CONVERGENCE_TOL: f64 = 2e-2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BirkhoffResult {
    pub mean: Vec<f64>,
    pub converged: bool,
    /// Largest gap between first-half and full-window means.
    pub gap: f64,
    /// Points averaged.
    pub samples: usize,
    pub terminated: Option<Termination>,
}

/// Averages `obs` over `Φᵏ x0` for `burn_in ≤ k < n`. Converged means every
/// observable's first-half mean is within `tol` of the full-window mean.
/// A singular orbit is never converged; its partial means are reported.
pub fn birkhoff_average(
    map: &BilliardMap,
    x0: PhasePoint,
    obs: &ObservableSet,
    n: usize,
    burn_in: usize,
    tol: f64,
) -> Result<BirkhoffResult, ErgodicError> {
    if n < 2 * burn_in || n == burn_in {
        return Err(ErgodicError::InvalidParameter(format!(
            "need n ≥ 2·burn_in and n > burn_in, got n = {n}, burn_in = {burn_in}"
        )));
    }
    let k = obs.len();
    let fail = |step: usize, kind, acc: &[f64], count: usize| BirkhoffResult {
        mean: acc.iter().map(|a| a / count.max(1) as f64).collect(),
        converged: false,
        gap: f64::INFINITY,
        samples: count,
        terminated: Some(Termination { step, kind }),
    };
    let mut c = match map.locate(x0) {
        Ok(c) => c,
        Err(e) => {
            let kind = e.singularity().unwrap_or(crate::billiard_map::Singularity::StartAtVertex);
            return Ok(fail(0, kind, &vec![0.0; k], 0));
        }
    };
    for step in 0..burn_in {
        if let Err(kind) = map.advance(&mut c) {
            return Ok(fail(step, kind, &vec![0.0; k], 0));
        }
    }
    let total = n - burn_in;
    let half = total / 2;
    let mut acc = vec![0.0; k];
    let mut first = vec![0.0; k];
    let poly = map.polygon();
    for i in 0..total {
        if i == half {
            first.copy_from_slice(&acc);
        }
        let s = (poly.side(c.side).s_start + c.offset).rem_euclid(1.0);
        obs.accumulate(s, c.theta, c.side, &mut acc);
        if i + 1 < total {
            if let Err(kind) = map.advance(&mut c) {
                return Ok(fail(burn_in + i, kind, &acc, i + 1));
            }
        }
    }
    let mean: Vec<f64> = acc.iter().map(|a| a / total as f64).collect();
    let gap = first
        .iter()
        .zip(&mean)
        .map(|(f, m)| (f / half.max(1) as f64 - m).abs())
        .fold(0.0, f64::max);
    Ok(BirkhoffResult {
        mean,
        converged: gap < tol,
        gap,
        samples: total,
        terminated: None,
    })
}

/// Lyapunov exponents from the diagonal of the triangular cocycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lyapunov {
    pub chi_u: f64,
    pub chi_s: f64,
    /// `(1/n) Σ log |det DΦ|` computed from the full matrices.
    pub log_det_average: f64,
}

/// `χ_u = (1/n) Σ log α`, `χ_s = (1/n) Σ log f′(θ̄₁)` along `n` steps from `x0`.
pub fn lyapunov(map: &BilliardMap, x0: PhasePoint, n: usize) -> Result<Lyapunov, MapError> {
    let mut c = map.locate(x0)?;
    let (mut su, mut ss, mut sd) = (0.0, 0.0, 0.0);
    for step in 0..n {
        let theta = c.theta;
        let fl = map
            .advance(&mut c)
            .map_err(|kind| MapError::SingularOrbit { step, kind })?;
        su += fl.alpha().abs().ln();
        ss += map.law().deriv(fl.pre_angle).abs().ln();
        sd += map.derivative_from(theta, fl.pre_angle, fl.length).det().abs().ln();
    }
    let n = n.max(1) as f64;
    Ok(Lyapunov {
        chi_u: su / n,
        chi_s: ss / n,
        log_det_average: sd / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicComponentReport {
    pub id: usize,
    pub mean_vector: Vec<f64>,
    pub basin_fraction: f64,
    pub lyapunov: Lyapunov,
    pub representative: PhasePoint,
    pub attractor_sample: Vec<PhasePoint>,
    pub correlation_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanParams {
    pub grid_s: usize,
    pub grid_theta: usize,
    pub n: usize,
    pub burn_in: usize,
    pub convergence_tol: f64,
    /// `None`: ten times the median split-sample gap.
    pub cluster_tol: Option<f64>,
    /// Clusters with a smaller share of the grid count as unassigned.
    pub min_cluster_share: f64,
    /// Points kept per component as an attractor sample.
    pub sample_len: usize,
}

impl Default for ScanParams {
    fn default() -> Self {
        Self {
            grid_s: 100,
            grid_theta: 100,
            n: 100_000,
            burn_in: 1_000,
            convergence_tol: CONVERGENCE_TOL,
            cluster_tol: None,
            min_cluster_share: 1e-3,
            sample_len: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicScan {
    pub observables: Vec<String>,
    pub params: ScanParams,
    pub cluster_tol: f64,
    pub median_gap: f64,
    pub components: Vec<ErgodicComponentReport>,
    pub unassigned_fraction: f64,
    pub non_converged_fraction: f64,
    pub hypotheses_met: bool,
    /// Per grid point, row-major in `s` then `θ`.
    #[serde(skip)]
    pub labels: Vec<Option<usize>>,
}

/// Grid point `(i, j)` of an `gs × gt` scan of the open phase cylinder.
pub fn grid_point(i: usize, j: usize, gs: usize, gt: usize) -> PhasePoint {
    PhasePoint::new(
        (i as f64 + 0.5) / gs as f64,
        -FRAC_PI_2 + PI * (j as f64 + 0.5) / gt as f64,
    )
}

fn cheb(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Complete-linkage clustering with cut height `tol` on weighted points.
/// Returns a cluster index per point.
fn complete_linkage(points: &[Vec<f64>], tol: f64) -> Vec<usize> {
    let k = points.len();
    let mut members: Vec<Option<Vec<usize>>> = (0..k).map(|i| Some(vec![i])).collect();
    let mut d: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| cheb(&points[i], &points[j])).collect())
        .collect();
    loop {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..k {
            if members[i].is_none() {
                continue;
            }
            for j in i + 1..k {
                if members[j].is_some() && d[i][j] < best.0 {
                    best = (d[i][j], i, j);
                }
            }
        }
        let (dist, a, b) = best;
        if !(dist <= tol) {
            break;
        }
        let mb = members[b].take().unwrap();
        members[a].as_mut().unwrap().extend(mb);
        for j in 0..k {
            let m = d[a][j].max(d[b][j]);
            d[a][j] = m;
            d[j][a] = m;
        }
    }
    let mut label = vec![0; k];
    for (c, m) in members.iter().flatten().enumerate() {
        for &i in m {
            label[i] = c;
        }
    }
    label
}

/// Scans a grid of initial conditions, clusters converged Birkhoff means and
/// reports one component per cluster with its basin share.
///
/// Means are first quantized to cells of a quarter of the cluster tolerance;
/// cell centroids are clustered by complete linkage in the max norm.
pub fn find_ergodic_components(
    map: &BilliardMap,
    obs: &ObservableSet,
    params: &ScanParams,
) -> Result<ErgodicScan, ErgodicError> {
    let (gs, gt) = (params.grid_s, params.grid_theta);
    if gs == 0 || gt == 0 || params.convergence_tol <= 0.0 {
        return Err(ErgodicError::InvalidParameter("empty grid or non-positive tolerance".into()));
    }
    let total = gs * gt;
    let results: Vec<BirkhoffResult> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let x = grid_point(idx / gt, idx % gt, gs, gt);
            birkhoff_average(map, x, obs, params.n, params.burn_in, params.convergence_tol)
        })
        .collect::<Result<_, _>>()?;

    let mut gaps: Vec<f64> = results.iter().filter(|r| r.converged).map(|r| r.gap).collect();
    gaps.sort_by(f64::total_cmp);
    let median_gap = gaps.get(gaps.len() / 2).copied().unwrap_or(params.convergence_tol);
    let tol = params.cluster_tol.unwrap_or(10.0 * median_gap);

    // Micro-cells keyed by quantized mean vector; BTreeMap keeps order stable.
    let q = 0.25 * tol;
    let mut cells: BTreeMap<Vec<i64>, (Vec<f64>, Vec<usize>)> = BTreeMap::new();
    for (idx, r) in results.iter().enumerate().filter(|(_, r)| r.converged) {
        let key: Vec<i64> = r.mean.iter().map(|m| (m / q).floor() as i64).collect();
        let e = cells.entry(key).or_insert_with(|| (vec![0.0; r.mean.len()], Vec::new()));
        for (a, m) in e.0.iter_mut().zip(&r.mean) {
            *a += m;
        }
        e.1.push(idx);
    }
    let cells: Vec<(Vec<f64>, Vec<usize>)> = cells
        .into_values()
        .map(|(sum, idx)| (sum.iter().map(|v| v / idx.len() as f64).collect(), idx))
        .collect();
    let centroids: Vec<Vec<f64>> = cells.iter().map(|c| c.0.clone()).collect();
    let cell_label = complete_linkage(&centroids, tol);

    let mut clusters: HashMap<usize, Vec<usize>> = HashMap::new();
    for (cell, &l) in cells.iter().zip(&cell_label) {
        clusters.entry(l).or_default().extend(&cell.1);
    }
    let min_size = (params.min_cluster_share * total as f64).ceil().max(1.0) as usize;
    let mut kept: Vec<Vec<usize>> = clusters.into_values().filter(|m| m.len() >= min_size).collect();
    for m in &mut kept {
        m.sort_unstable();
    }
    kept.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));

    let mut labels = vec![None; total];
    let mut components = Vec::with_capacity(kept.len());
    for (id, m) in kept.iter().enumerate() {
        let dim = results[m[0]].mean.len();
        let mut mean = vec![0.0; dim];
        for &i in m {
            for (a, v) in mean.iter_mut().zip(&results[i].mean) {
                *a += v;
            }
            labels[i] = Some(id);
        }
        for a in &mut mean {
            *a /= m.len() as f64;
        }
        let rep_idx = *m
            .iter()
            .min_by(|&&a, &&b| cheb(&results[a].mean, &mean).total_cmp(&cheb(&results[b].mean, &mean)))
            .unwrap();
        let rep = grid_point(rep_idx / gt, rep_idx % gt, gs, gt);
        let mut c = map.locate(rep)?;
        for step in 0..params.burn_in {
            map.advance(&mut c)
                .map_err(|kind| MapError::SingularOrbit { step, kind })?;
        }
        let start = map.phase_point(&c);
        let lyap = lyapunov(map, start, params.n - params.burn_in)?;
        let mut sample = Vec::with_capacity(params.sample_len);
        for step in 0..params.sample_len {
            map.advance(&mut c)
                .map_err(|kind| MapError::SingularOrbit { step, kind })?;
            sample.push(map.phase_point(&c));
        }
        components.push(ErgodicComponentReport {
            id,
            mean_vector: mean,
            basin_fraction: m.len() as f64 / total as f64,
            lyapunov: lyap,
            representative: start,
            attractor_sample: sample,
            correlation_rate: None,
        });
    }
    let assigned = labels.iter().filter(|l| l.is_some()).count();
    Ok(ErgodicScan {
        observables: obs.names(),
        params: params.clone(),
        cluster_tol: tol,
        median_gap,
        unassigned_fraction: 1.0 - assigned as f64 / total as f64,
        non_converged_fraction: results.iter().filter(|r| !r.converged).count() as f64 / total as f64,
        hypotheses_met: !map.polygon().has_parallel_facing_sides(),
        components,
        labels,
    })
}

#[derive(Serialize)]
struct BasinRow {
    s: f64,
    theta: f64,
    component: String,
}

#[derive(Serialize)]
struct PointRow {
    s: f64,
    theta: f64,
}

impl ErgodicScan {
    /// Basin map `(s, theta, component)`; unassigned points are labelled so.
    pub fn write_basin_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let (gs, gt) = (self.params.grid_s, self.params.grid_theta);
        let mut wr = csv::Writer::from_writer(w);
        for (idx, l) in self.labels.iter().enumerate() {
            let p = grid_point(idx / gt, idx % gt, gs, gt);
            wr.serialize(BasinRow {
                s: p.s,
                theta: p.theta,
                component: l.map_or_else(|| "unassigned".to_string(), |c| c.to_string()),
            })?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Writes phase points as `(s, theta)` rows.
pub fn write_points_csv<W: Write>(points: &[PhasePoint], w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for p in points {
        wr.serialize(PointRow { s: p.s, theta: p.theta })?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodicOrbit {
    pub itinerary: Itinerary,
    pub points: Vec<PhasePoint>,
    /// `∏ f′(θ̄)` around the orbit.
    pub theta_multiplier: f64,
    /// `α_p` around the orbit.
    pub s_multiplier: f64,
    pub residual: f64,
    /// Sweeps of the angle return map until convergence.
    pub iterations: usize,
    pub chi_u: f64,
    pub chi_s: f64,
}

/// Angle tolerance of the θ fixed-point iteration.
pub const THETA_FIXED_TOL: f64 = 1e-13;
/// Closure tolerance for accepted periodic orbits.
pub const CLOSURE_TOL: f64 = 1e-9;

/// Iteration bound `⌈log(tol)/log(λᵖ)⌉` for the angle return map.
pub fn theta_iteration_bound(lambda: f64, p: usize) -> usize {
    (THETA_FIXED_TOL.ln() / (p as f64 * lambda.ln())).ceil() as usize
}

/// Cyclic words over `d` sides with distinct neighbours, one per rotation
/// class, primitive only.
fn cyclic_words(d: usize, p: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut w = vec![0usize; p];
    fn rec(d: usize, k: usize, w: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let p = w.len();
        if k == p {
            if w[p - 1] == w[0] {
                return;
            }
            // Canonical: lexicographically least rotation, and primitive.
            for r in 1..p {
                let rot: Vec<usize> = w[r..].iter().chain(&w[..r]).copied().collect();
                if rot <= *w {
                    return;
                }
            }
            out.push(w.clone());
            return;
        }
        for s in 0..d {
            if k > 0 && w[k - 1] == s {
                continue;
            }
            w[k] = s;
            rec(d, k + 1, w, out);
        }
    }
    rec(d, 0, &mut w, &mut out);
    out
}

/// Arrival angle at side `j` of a flight leaving side `i` along its normal;
/// a flight leaving at `θ` arrives at `c − θ`.
fn angle_offset(map: &BilliardMap, i: usize, j: usize) -> f64 {
    let n = map.polygon().side(i).normal;
    let t = map.polygon().side(j);
    n.dot(t.tangent).atan2(-n.dot(t.normal))
}

/// Offset reached on side `j`'s line from offset `w` on side `i` at angle `theta`.
fn transfer(map: &BilliardMap, i: usize, j: usize, theta: f64, w: f64) -> f64 {
    let si = map.polygon().side(i);
    let sj = map.polygon().side(j);
    let dir: Vec2 = map.direction(i, theta);
    let rel = sj.start - si.point_at(w);
    rel.cross(dir) / dir.cross(sj.tangent)
}

fn solve_itinerary(map: &BilliardMap, word: &[usize]) -> Option<PeriodicOrbit> {
    let p = word.len();
    let law = map.law();
    let lam = law.lambda();
    let offs: Vec<f64> = (0..p).map(|k| angle_offset(map, word[k], word[(k + 1) % p])).collect();
    // θ_k is the outgoing angle at word[k].
    let sweep = |t0: f64| -> Option<Vec<f64>> {
        let mut th = vec![t0; p + 1];
        for k in 0..p {
            let pre = offs[k] - th[k];
            if pre.abs() >= FRAC_PI_2 {
                return None;
            }
            th[k + 1] = law.eval(pre);
        }
        Some(th)
    };
    let contraction = lam.powi(p as i32);
    let mut theta = 0.0;
    let mut iterations = 0;
    let thetas = loop {
        let th = sweep(theta)?;
        iterations += 1;
        let delta = (th[p] - theta).abs();
        theta = th[p];
        if contraction / (1.0 - contraction) * delta < THETA_FIXED_TOL || delta == 0.0 {
            break sweep(theta)?;
        }
        if iterations > 10_000 {
            return None;
        }
    };

    // Affine s-return map at the fixed angles.
    let (mut a, mut b) = (1.0, 0.0);
    for k in 0..p {
        let (i, j) = (word[k], word[(k + 1) % p]);
        let c0 = transfer(map, i, j, thetas[k], 0.0);
        let c1 = transfer(map, i, j, thetas[k], 1.0) - c0;
        a *= c1;
        b = c1 * b + c0;
    }
    let w0 = if (1.0 - a).abs() > 1e-12 {
        b / (1.0 - a)
    } else if b.abs() < 1e-12 {
        // Parabolic family: take the middle of the admissible offsets.
        let (mut lo, mut hi) = (0.0, map.polygon().side(word[0]).length);
        let (mut ca, mut cb) = (1.0, 0.0);
        for k in 0..p {
            let (i, j) = (word[k], word[(k + 1) % p]);
            let c0 = transfer(map, i, j, thetas[k], 0.0);
            let c1 = transfer(map, i, j, thetas[k], 1.0) - c0;
            ca *= c1;
            cb = c1 * cb + c0;
            let len = map.polygon().side(j).length;
            let (x, y) = ((0.0 - cb) / ca, (len - cb) / ca);
            lo = f64::max(lo, x.min(y));
            hi = f64::min(hi, x.max(y));
        }
        if !(hi > lo) {
            return None;
        }
        0.5 * (lo + hi)
    } else {
        return None;
    };
    let len0 = map.polygon().side(word[0]).length;
    if !(w0 > 0.0 && w0 < len0) {
        return None;
    }

    // Verify through the full step map.
    let start = Collision {
        side: word[0],
        offset: w0,
        theta: thetas[0],
    };
    let x0 = map.phase_point(&start);
    let mut c = start;
    let mut points = Vec::with_capacity(p);
    let (mut su, mut ss, mut ms, mut mt) = (0.0, 0.0, 1.0, 1.0);
    for &side in word {
        if c.side != side {
            return None;
        }
        points.push(map.phase_point(&c));
        let fl = map.advance(&mut c).ok()?;
        let a = fl.alpha();
        let d = law.deriv(fl.pre_angle);
        su += a.ln();
        ss += d.ln();
        ms *= a;
        mt *= d;
    }
    let residual = map.phase_point(&c).dist(&x0);
    if c.side != word[0] || !(residual < CLOSURE_TOL) {
        return None;
    }
    Some(PeriodicOrbit {
        itinerary: Itinerary(word.to_vec()),
        points,
        theta_multiplier: mt,
        s_multiplier: ms,
        residual,
        iterations,
        chi_u: su / p as f64,
        chi_s: ss / p as f64,
    })
}

/// All periodic orbits of period `2..=max_period`, one per cyclic itinerary.
pub fn find_periodic_orbits(map: &BilliardMap, max_period: usize) -> Result<Vec<PeriodicOrbit>, ErgodicError> {
    if max_period < 2 {
        return Err(ErgodicError::InvalidParameter("max_period must be at least 2".into()));
    }
    let d = map.polygon().side_count();
    let words: Vec<Vec<usize>> = (2..=max_period).flat_map(|p| cyclic_words(d, p)).collect();
    Ok(words
        .par_iter()
        .filter_map(|w| solve_itinerary(map, w))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlation {
    /// `C(0..=max_lag)`.
    pub c: Vec<f64>,
    /// Fit of `log|C(k)|` over the envelope lags.
    pub rate: f64,
    pub r_squared: f64,
    /// Envelope lags: local maxima of `|C(k)|` above the noise floor.
    pub lags: Vec<usize>,
    /// Same fit over every lag above the noise floor.
    pub raw_rate: f64,
    pub raw_r_squared: f64,
    pub noise_floor: f64,
}

/// Autocovariance of `obs` along `n` points after `burn_in`, and a
/// log-linear fit of `|C(k)|` above the noise floor `3·C(0)/√n`.
///
/// Correlations of side indicators oscillate in sign, so `log|C(k)|` dives
/// at every zero crossing. The primary fit uses the local maxima of `|C|`,
/// which trace the decaying envelope; the fit over all lags is kept as
/// `raw_*`.
pub fn autocorrelation(
    map: &BilliardMap,
    x0: PhasePoint,
    obs: Observable,
    n: usize,
    max_lag: usize,
    burn_in: usize,
) -> Result<Correlation, MapError> {
    let mut c = map.locate(x0)?;
    for step in 0..burn_in {
        map.advance(&mut c)
            .map_err(|kind| MapError::SingularOrbit { step, kind })?;
    }
    let m = max_lag + 1;
    let mut ring = vec![0.0; m];
    let mut prod = vec![0.0; m];
    let mut sum = 0.0;
    let poly = map.polygon();
    for t in 0..n + max_lag {
        let s = (poly.side(c.side).s_start + c.offset).rem_euclid(1.0);
        let v = obs.eval(s, c.theta, c.side);
        ring[t % m] = v;
        if t >= max_lag {
            // Pairs (t − k, t) for every lag, with t − max_lag < n as the base.
            let base = t - max_lag;
            let vb = ring[base % m];
            sum += vb;
            for (k, p) in prod.iter_mut().enumerate() {
                *p += vb * ring[(base + k) % m];
            }
        }
        map.advance(&mut c)
            .map_err(|kind| MapError::SingularOrbit { step: burn_in + t, kind })?;
    }
    let mean = sum / n as f64;
    let cov: Vec<f64> = prod.iter().map(|p| p / n as f64 - mean * mean).collect();
    let floor = 3.0 * cov[0].abs() / (n as f64).sqrt();
    let above: Vec<usize> = (1..=max_lag).filter(|&k| cov[k].abs() > floor).collect();
    let lags: Vec<usize> = above
        .iter()
        .copied()
        .filter(|&k| {
            let a = cov[k].abs();
            (k == 1 || a >= cov[k - 1].abs()) && (k == max_lag || a >= cov[k + 1].abs())
        })
        .collect();
    let (rate, r_squared) = log_linear_fit(&lags, &cov);
    let (raw_rate, raw_r_squared) = log_linear_fit(&above, &cov);
    Ok(Correlation {
        c: cov,
        rate,
        r_squared,
        lags,
        raw_rate,
        raw_r_squared,
        noise_floor: floor,
    })
}

fn log_linear_fit(lags: &[usize], cov: &[f64]) -> (f64, f64) {
    if lags.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let xs: Vec<f64> = lags.iter().map(|&k| k as f64).collect();
    let ys: Vec<f64> = lags.iter().map(|&k| cov[k].abs().ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (-slope, r2)
}

/// Iterates `ensemble` random regular points for `transient` steps and keeps
/// the next `keep` images of each survivor. Task `i` draws from stream `i`
/// of the seeded generator, so the result does not depend on scheduling.
pub fn attractor_sample(
    map: &BilliardMap,
    ensemble: usize,
    transient: usize,
    keep: usize,
    seed: u64,
) -> Vec<PhasePoint> {
    let per: Vec<Vec<PhasePoint>> = (0..ensemble)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let x = PhasePoint::new(rng.gen_range(0.0..1.0), rng.gen_range(-FRAC_PI_2..FRAC_PI_2));
            let Ok(mut c) = map.locate(x) else { return Vec::new() };
            for _ in 0..transient {
                if map.advance(&mut c).is_err() {
                    return Vec::new();
                }
            }
            let mut out = Vec::with_capacity(keep);
            for _ in 0..keep {
                if map.advance(&mut c).is_err() {
                    break;
                }
                out.push(map.phase_point(&c));
            }
            out
        })
        .collect();
    per.concat()
}

/// `max_{a ∈ from} min_{b ∈ to} |a − b|`, with `s` on the circle.
pub fn directed_distance(from: &[PhasePoint], to: &[PhasePoint]) -> f64 {
    from.par_iter()
        .map(|a| to.iter().map(|b| a.dist(b)).fold(f64::INFINITY, f64::min))
        .reduce(|| 0.0, f64::max)
}

/// Fraction of `points` whose `s` lies within `tol` of one of `targets`.
pub fn fraction_near_s(points: &[PhasePoint], targets: &[f64], tol: f64) -> f64 {
    let near = points
        .iter()
        .filter(|p| targets.iter().any(|&t| circle_diff(p.s, t).abs() < tol))
        .count();
    near as f64 / points.len().max(1) as f64
}
