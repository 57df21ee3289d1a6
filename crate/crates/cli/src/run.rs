//! Subcommand implementations. Each returns a JSON summary and writes its
//! CSV artifacts into the output directory.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use polybill_core::ergodic::{
    self, autocorrelation, find_ergodic_components, find_periodic_orbits, ScanParams,
};
use polybill_core::expansion::{growth_experiment, n_step_expansion, random_h_curves};
use polybill_core::reflection::validate_law;
use polybill_core::singular_set::{branching_bound, branching_number, Arrangement};
use polybill_core::{BilliardMap, Observable, ObservableSet, PhasePoint, Polygon};

use crate::config::ExperimentConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Validation(_) => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Validate,
    Orbit,
    Singular,
    Branching,
    Expansion,
    Growth,
    Srb,
    Periodic,
    Correlations,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Orbit => "orbit",
            Command::Singular => "singular",
            Command::Branching => "branching",
            Command::Expansion => "expansion",
            Command::Growth => "growth",
            Command::Srb => "srb",
            Command::Periodic => "periodic",
            Command::Correlations => "correlations",
        }
    }
}

fn numeric(e: impl std::fmt::Display) -> CliError {
    CliError::Numeric(e.to_string())
}

fn csv_file(out: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(out.join(name))?))
}

/// Polygon and law checks shared by every subcommand.
fn build_map(cfg: &ExperimentConfig) -> Result<(BilliardMap, Value), CliError> {
    let polygon = Polygon::from_pairs(&cfg.polygon).map_err(|e| CliError::Validation(format!("polygon: {e}")))?;
    let law = cfg
        .law
        .build()
        .map_err(|e| CliError::Validation(format!("law: {e}")))?;
    let report = validate_law(&law, cfg.validate.law_grid);
    if !report.ok {
        let list: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
        return Err(CliError::Validation(format!("law: {}", list.join("; "))));
    }
    let parallel = polygon.has_parallel_facing_sides();
    let mut warnings = Vec::new();
    if parallel {
        warnings.push("polygon has parallel facing sides: hyperbolicity hypotheses NOT met".to_string());
    }
    let info = json!({
        "sides": polygon.side_count(),
        "parallel_facing": parallel,
        "hypotheses_met": !parallel,
        "law": law.family_tag(),
        "lambda": law.lambda(),
        "law_report": report,
        "warnings": warnings,
    });
    Ok((BilliardMap::new(polygon, law), info))
}

pub fn run(cmd: Command, cfg: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    cfg.check().map_err(|(path, msg)| CliError::Config { path, msg })?;
    let (map, info) = build_map(cfg)?;
    fs::create_dir_all(out)?;
    let result = match cmd {
        Command::Validate => json!({}),
        Command::Orbit => orbit(&map, cfg, out)?,
        Command::Singular => singular(&map, cfg, out)?,
        Command::Branching => branching(&map, cfg)?,
        Command::Expansion => expansion_cmd(&map, cfg, out)?,
        Command::Growth => growth(&map, cfg, out)?,
        Command::Srb => srb(&map, cfg, out)?,
        Command::Periodic => periodic(&map, cfg, out)?,
        Command::Correlations => correlations(&map, cfg, out)?,
    };
    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "command": cmd.name(),
        "seed": cfg.seed,
        "validation": info,
        "result": result,
    }))
}

fn orbit(map: &BilliardMap, cfg: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let [s, theta] = cfg.orbit.x0;
    let o = map.orbit(PhasePoint::new(s, theta), cfg.orbit.steps);
    o.write_csv(csv_file(out, "orbit.csv")?)?;
    Ok(json!({
        "steps": o.steps(),
        "terminated": o.terminated,
        "final": o.points.last(),
        "artifacts": ["orbit.csv"],
    }))
}

fn singular(map: &BilliardMap, cfg: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let arr = Arrangement::build(map, cfg.singular.order);
    arr.write_csv(csv_file(out, "singular.csv")?)?;
    let per_gen: Vec<usize> = (0..cfg.singular.order).map(|g| arr.generation(g).count()).collect();
    Ok(json!({
        "order": cfg.singular.order,
        "curves": arr.curves.len(),
        "curves_per_generation": per_gen,
        "nodes": arr.node_count(),
        "all_strictly_decreasing": arr.all_strictly_decreasing(),
        "boundary_margin": arr.boundary_margin(0),
        "artifacts": ["singular.csv"],
    }))
}

fn branching(map: &BilliardMap, cfg: &ExperimentConfig) -> Result<Value, CliError> {
    let reports: Vec<_> = (1..=cfg.branching.max_order).map(|n| branching_number(map, n)).collect();
    let b1 = reports.first().map_or(0, |r| r.b_n);
    let rows: Vec<Value> = reports
        .iter()
        .map(|r| {
            json!({
                "n": r.order,
                "b_n": r.b_n,
                "bound": branching_bound(b1, r.order),
                "candidates": r.candidates,
                "witness": r.witness,
            })
        })
        .collect();
    let holds = reports.iter().all(|r| r.b_n <= branching_bound(b1, r.order));
    Ok(json!({ "orders": rows, "bound_holds": holds }))
}

#[derive(Serialize)]
struct ComponentRow {
    n: usize,
    curve: usize,
    worst_case: bool,
    curve_theta: f64,
    curve_start: f64,
    component_start: f64,
    component_length: f64,
    alpha_n: f64,
}

fn expansion_cmd(map: &BilliardMap, cfg: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let c = &cfg.expansion;
    let mut rows = Vec::new();
    let mut found = None;
    let mut wr = csv::Writer::from_writer(csv_file(out, "expansion_components.csv")?);
    for n in 1..=c.max_n {
        let r = n_step_expansion(map, n, c.delta, c.samples, cfg.seed);
        for (id, e) in r.component_table.iter().enumerate() {
            for (g, a) in &e.components {
                wr.serialize(ComponentRow {
                    n,
                    curve: id,
                    worst_case: e.worst_case,
                    curve_theta: e.curve.theta,
                    curve_start: e.curve.start,
                    component_start: g.start,
                    component_length: g.length,
                    alpha_n: *a,
                })?;
            }
        }
        rows.push(json!({
            "n": n,
            "beta_hat": r.beta_hat,
            "success": r.success,
            "A_n": r.a_n,
            "worst_curve": r.worst_curve,
            "sampled_curves": r.sampled_curves,
            "worst_case_curves": r.worst_case_curves,
        }));
        if r.success {
            found = Some(n);
            break;
        }
    }
    wr.flush()?;
    Ok(json!({
        "delta": c.delta,
        "samples": c.samples,
        "orders": rows,
        "smallest_n": found,
        "success": found.is_some(),
        "artifacts": ["expansion_components.csv"],
    }))
}

fn growth(map: &BilliardMap, cfg: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let g = &cfg.growth;
    let curves = random_h_curves(map, g.curves, g.min_length, g.max_length, cfg.seed);
    let rep = growth_experiment(map, &curves, g.r_max, &g.eps).map_err(numeric)?;
    rep.write_csv(csv_file(out, "growth.csv")?)?;
    Ok(json!({
        "curves": curves.len(),
        "r_max": g.r_max,
        "eps": g.eps,
        "fit": rep.fit,
        "artifacts": ["growth.csv"],
    }))
}

#[derive(Serialize)]
struct ComponentTableRow {
    id: usize,
    basin_fraction: f64,
    chi_u: f64,
    chi_s: f64,
    log_det_average: f64,
    rep_s: f64,
    rep_theta: f64,
}

fn srb(map: &BilliardMap, cfg: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let c = &cfg.srb;
    let params = ScanParams {
        grid_s: c.grid[0],
        grid_theta: c.grid[1],
        n: c.n,
        burn_in: c.burn_in,
        convergence_tol: c.convergence_tol,
        cluster_tol: c.cluster_tol,
        min_cluster_share: c.min_cluster_share,
        sample_len: c.sample_len,
    };
    let obs = ObservableSet::standard(map.polygon().side_count());
    let scan = find_ergodic_components(map, &obs, &params).map_err(numeric)?;
    scan.write_basin_csv(csv_file(out, "basin.csv")?)?;
    let mut wr = csv::Writer::from_writer(csv_file(out, "components.csv")?);
    let mut artifacts = vec!["basin.csv".to_string(), "components.csv".to_string()];
    for comp in &scan.components {
        wr.serialize(ComponentTableRow {
            id: comp.id,
            basin_fraction: comp.basin_fraction,
            chi_u: comp.lyapunov.chi_u,
            chi_s: comp.lyapunov.chi_s,
            log_det_average: comp.lyapunov.log_det_average,
            rep_s: comp.representative.s,
            rep_theta: comp.representative.theta,
        })?;
        let name = format!("attractor_{}.csv", comp.id);
        ergodic::write_points_csv(&comp.attractor_sample, csv_file(out, &name)?)?;
        artifacts.push(name);
    }
    wr.flush()?;
    let comps: Vec<Value> = scan
        .components
        .iter()
        .map(|c| {
            json!({
                "id": c.id,
                "mean_vector": c.mean_vector,
                "basin_fraction": c.basin_fraction,
                "lyapunov": c.lyapunov,
                "representative": c.representative,
            })
        })
        .collect();
    Ok(json!({
        "observables": scan.observables,
        "components": comps,
        "component_count": scan.components.len(),
        "unassigned_fraction": scan.unassigned_fraction,
        "non_converged_fraction": scan.non_converged_fraction,
        "cluster_tol": scan.cluster_tol,
        "median_gap": scan.median_gap,
        "artifacts": artifacts,
    }))
}

#[derive(Serialize)]
struct PeriodicRow {
    orbit: usize,
    period: usize,
    itinerary: String,
    k: usize,
    s: f64,
    theta: f64,
}

fn periodic(map: &BilliardMap, cfg: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let orbits = find_periodic_orbits(map, cfg.periodic.max_period).map_err(numeric)?;
    let mut wr = csv::Writer::from_writer(csv_file(out, "periodic.csv")?);
    for (i, o) in orbits.iter().enumerate() {
        for (k, p) in o.points.iter().enumerate() {
            wr.serialize(PeriodicRow {
                orbit: i,
                period: o.points.len(),
                itinerary: o.itinerary.to_string(),
                k,
                s: p.s,
                theta: p.theta,
            })?;
        }
    }
    wr.flush()?;
    let rows: Vec<Value> = orbits
        .iter()
        .map(|o| {
            json!({
                "itinerary": o.itinerary.to_string(),
                "period": o.points.len(),
                "theta_multiplier": o.theta_multiplier,
                "s_multiplier": o.s_multiplier,
                "chi_u": o.chi_u,
                "chi_s": o.chi_s,
                "residual": o.residual,
                "iterations": o.iterations,
            })
        })
        .collect();
    Ok(json!({
        "max_period": cfg.periodic.max_period,
        "count": orbits.len(),
        "orbits": rows,
        "artifacts": ["periodic.csv"],
    }))
}

#[derive(Serialize)]
struct LagRow {
    lag: usize,
    c: f64,
}

fn correlations(map: &BilliardMap, cfg: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let c = &cfg.correlations;
    let x0 = match c.x0 {
        Some([s, t]) => PhasePoint::new(s, t),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            PhasePoint::new(rng.gen_range(0.0..1.0), rng.gen_range(-1.0..1.0))
        }
    };
    let r = autocorrelation(map, x0, Observable::Side(c.side), c.n, c.max_lag, c.burn_in).map_err(numeric)?;
    let mut wr = csv::Writer::from_writer(csv_file(out, "correlations.csv")?);
    for (lag, &v) in r.c.iter().enumerate() {
        wr.serialize(LagRow { lag, c: v })?;
    }
    wr.flush()?;
    Ok(json!({
        "x0": x0,
        "observable": Observable::Side(c.side).name(),
        "rate": r.rate,
        "r_squared": r.r_squared,
        "lags": r.lags,
        "raw_rate": r.raw_rate,
        "raw_r_squared": r.raw_r_squared,
        "noise_floor": r.noise_floor,
        "artifacts": ["correlations.csv"],
    }))
}

