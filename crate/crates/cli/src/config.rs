//! Experiment configuration. One JSON file per experiment; every section
//! has documented defaults and unknown keys are rejected.

use serde::{Deserialize, Serialize};

use polybill_core::LawSpec;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Counter-clockwise or clockwise vertex list.
    pub polygon: Vec<[f64; 2]>,
    pub law: LawSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub validate: ValidateConfig,
    #[serde(default)]
    pub orbit: OrbitConfig,
    #[serde(default)]
    pub singular: SingularConfig,
    #[serde(default)]
    pub branching: BranchingConfig,
    #[serde(default)]
    pub expansion: ExpansionConfig,
    #[serde(default)]
    pub growth: GrowthConfig,
    #[serde(default)]
    pub srb: SrbConfig,
    #[serde(default)]
    pub periodic: PeriodicConfig,
    #[serde(default)]
    pub correlations: CorrelationConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    /// Sample count for the reflection-law checks.
    pub law_grid: usize,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self { law_grid: 4001 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrbitConfig {
    /// Initial point `[s, θ]`.
    pub x0: [f64; 2],
    pub steps: usize,
}

impl Default for OrbitConfig {
    fn default() -> Self {
        Self {
            x0: [0.123, 0.3],
            steps: 1000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SingularConfig {
    pub order: usize,
}

impl Default for SingularConfig {
    fn default() -> Self {
        Self { order: 3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BranchingConfig {
    pub max_order: usize,
}

impl Default for BranchingConfig {
    fn default() -> Self {
        Self { max_order: 5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionConfig {
    /// Orders tried are `1..=max_n`; the search stops at the first success.
    pub max_n: usize,
    pub delta: f64,
    pub samples: usize,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self {
            max_n: 12,
            delta: 1e-4,
            samples: 1000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowthConfig {
    pub curves: usize,
    pub r_max: usize,
    pub eps: Vec<f64>,
    pub min_length: f64,
    pub max_length: f64,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        Self {
            curves: 100,
            r_max: 20,
            eps: vec![1e-2, 3e-3, 1e-3, 3e-4, 1e-4],
            min_length: 1e-3,
            max_length: 1e-1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrbConfig {
    /// Grid resolution `[s, θ]`.
    pub grid: [usize; 2],
    pub n: usize,
    pub burn_in: usize,
    pub convergence_tol: f64,
    /// Defaults to ten times the median split-sample gap.
    pub cluster_tol: Option<f64>,
    pub min_cluster_share: f64,
    pub sample_len: usize,
}

impl Default for SrbConfig {
    fn default() -> Self {
        let p = polybill_core::ergodic::ScanParams::default();
        Self {
            grid: [p.grid_s, p.grid_theta],
            n: p.n,
            burn_in: p.burn_in,
            convergence_tol: p.convergence_tol,
            cluster_tol: p.cluster_tol,
            min_cluster_share: p.min_cluster_share,
            sample_len: p.sample_len,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeriodicConfig {
    pub max_period: usize,
}

impl Default for PeriodicConfig {
    fn default() -> Self {
        Self { max_period: 8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelationConfig {
    /// Index of the side whose indicator is correlated.
    pub side: usize,
    pub n: usize,
    pub max_lag: usize,
    pub burn_in: usize,
    /// Start point; drawn from the seed when absent.
    pub x0: Option<[f64; 2]>,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self {
            side: 0,
            n: 10_000_000,
            max_lag: 30,
            burn_in: 1000,
            x0: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses JSON, reporting the path of the offending key on failure.
    pub fn from_json(text: &str) -> Result<Self, (String, String)> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| (e.path().to_string(), e.inner().to_string()))
    }

    /// Positivity of every tolerance and size.
    pub fn check(&self) -> Result<(), (String, String)> {
        let bad = |path: &str, msg: &str| Err((path.to_string(), msg.to_string()));
        if !(self.expansion.delta > 0.0) {
            return bad("expansion.delta", "must be positive");
        }
        if self.growth.eps.is_empty() || self.growth.eps.iter().any(|e| !(*e > 0.0)) {
            return bad("growth.eps", "must be a non-empty list of positive radii");
        }
        if !(self.growth.min_length > 0.0 && self.growth.min_length <= self.growth.max_length && self.growth.max_length < 1.0) {
            return bad("growth", "need 0 < min_length ≤ max_length < 1");
        }
        if !(self.srb.convergence_tol > 0.0) {
            return bad("srb.convergence_tol", "must be positive");
        }
        if self.srb.cluster_tol.is_some_and(|t| !(t > 0.0)) {
            return bad("srb.cluster_tol", "must be positive");
        }
        if self.srb.grid.contains(&0) {
            return bad("srb.grid", "must be positive");
        }
        if self.srb.n < 2 * self.srb.burn_in || self.srb.n <= self.srb.burn_in {
            return bad("srb.n", "need n ≥ 2·burn_in");
        }
        if self.periodic.max_period < 2 {
            return bad("periodic.max_period", "must be at least 2");
        }
        if self.correlations.side >= self.polygon.len() {
            return bad("correlations.side", "no such side");
        }
        if self.orbit.x0[1].abs() >= std::f64::consts::FRAC_PI_2 {
            return bad("orbit.x0", "need |θ| < π/2");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ExperimentConfig::from_json(r#"{"polygon": [[0,0],[1,0],[0,1]], "law": {"type": "linear", "sigma": 0.5}}"#).unwrap();
        assert_eq!(c.expansion.max_n, 12);
        assert_eq!(c.srb.grid, [100, 100]);
        assert!(c.check().is_ok());
    }

    #[test]
    fn unknown_key_reports_path() {
        let (path, _) = ExperimentConfig::from_json(
            r#"{"polygon": [[0,0],[1,0],[0,1]], "law": {"type": "linear", "sigma": 0.5}, "srb": {"grdi": [1, 1]}}"#,
        )
        .unwrap_err();
        assert_eq!(path, "srb.grdi");
        // The tagged law enum is buffered before dispatch, so paths stop at `law`.
        let (path, msg) = ExperimentConfig::from_json(
            r#"{"polygon": [[0,0],[1,0],[0,1]], "law": {"type": "linear", "sigma": "x"}}"#,
        )
        .unwrap_err();
        assert_eq!(path, "law");
        assert!(msg.contains("f64"), "{msg}");
    }
}
