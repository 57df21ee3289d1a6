//! Contracting reflection laws.
//!
//! A law `f` acts on the outgoing angle measured from the inward normal. The
//! standing assumptions are: `f` is an embedding of `[-π/2, π/2]` into
//! itself, `f(0) = 0`, `f' > 0` on the open interval and `sup |f'| < 1`.
//! Laws are checked numerically when built; [`validate_law`] reports which
//! assumption fails and where.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type AngleFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Step of the central difference used when a law has no closed-form derivative.
pub const FD_STEP: f64 = 1e-6;

/// Grid used to estimate `sup |f'|` for custom laws.
const LAMBDA_GRID: usize = 4097;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LawError {
    #[error("value {value} outside admissible range {lo}..{hi}")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("reflection law violates standing assumptions: {0}")]
    Invalid(String),
    #[error("unknown custom law family `{0}`")]
    UnknownFamily(String),
    #[error("law family `{family}` expects {expected} parameters, got {got}")]
    BadParams {
        family: String,
        expected: usize,
        got: usize,
    },
}

#[derive(Clone)]
enum LawKind {
    Linear { sigma: f64 },
    Custom { eval: AngleFn, deriv: Option<AngleFn> },
}

#[derive(Clone)]
pub struct ReflectionLaw {
    kind: LawKind,
    lambda: f64,
    image: (f64, f64),
    family_tag: String,
}

impl fmt::Debug for ReflectionLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReflectionLaw")
            .field("family", &self.family_tag)
            .field("lambda", &self.lambda)
            .finish()
    }
}

/// Serializable description of a law, as accepted in experiment configs.
///
/// `{"type":"linear","sigma":0.5}` is `f(θ) = σθ`. Custom families use
/// `{"type":"custom","family":NAME,"params":[...]}` with
///
/// * `scaled_sine`, params `[a]`: `f(θ) = a·sin θ`
/// * `odd_cubic`, params `[a, b]`: `f(θ) = aθ + bθ³`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    Linear { sigma: f64 },
    Custom { family: String, params: Vec<f64> },
}

impl LawSpec {
    pub fn build(&self) -> Result<ReflectionLaw, LawError> {
        match self {
            LawSpec::Linear { sigma } => linear_law(*sigma),
            LawSpec::Custom { family, params } => {
                let expect = |n: usize| {
                    if params.len() == n {
                        Ok(())
                    } else {
                        Err(LawError::BadParams {
                            family: family.clone(),
                            expected: n,
                            got: params.len(),
                        })
                    }
                };
                match family.as_str() {
                    "scaled_sine" => {
                        expect(1)?;
                        let a = params[0];
                        ReflectionLaw::custom(
                            format!("scaled_sine(a={a})"),
                            Arc::new(move |t: f64| a * t.sin()),
                            Some(Arc::new(move |t: f64| a * t.cos())),
                        )
                    }
                    "odd_cubic" => {
                        expect(2)?;
                        let (a, b) = (params[0], params[1]);
                        ReflectionLaw::custom(
                            format!("odd_cubic(a={a},b={b})"),
                            Arc::new(move |t: f64| a * t + b * t * t * t),
                            Some(Arc::new(move |t: f64| a + 3.0 * b * t * t)),
                        )
                    }
                    other => Err(LawError::UnknownFamily(other.to_string())),
                }
            }
        }
    }
}

/// `f(θ) = σθ` with `0 < σ < 1`.
pub fn linear_law(sigma: f64) -> Result<ReflectionLaw, LawError> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(LawError::OutOfRange {
            value: sigma,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(ReflectionLaw {
        kind: LawKind::Linear { sigma },
        lambda: sigma,
        image: (-sigma * FRAC_PI_2, sigma * FRAC_PI_2),
        family_tag: format!("linear(sigma={sigma})"),
    })
}

impl ReflectionLaw {
    /// Custom law validated against the standing assumptions.
    pub fn custom(
        tag: impl Into<String>,
        eval: AngleFn,
        deriv: Option<AngleFn>,
    ) -> Result<Self, LawError> {
        let law = Self::custom_unchecked(tag, eval, deriv);
        let report = validate_law(&law, 1024);
        match report.violations.first() {
            None => Ok(law),
            Some(v) => Err(LawError::Invalid(v.to_string())),
        }
    }

    /// Custom law without validation; used to inspect failing candidates.
    pub fn custom_unchecked(tag: impl Into<String>, eval: AngleFn, deriv: Option<AngleFn>) -> Self {
        let mut law = Self {
            kind: LawKind::Custom { eval, deriv },
            lambda: f64::NAN,
            image: (0.0, 0.0),
            family_tag: tag.into(),
        };
        law.lambda = (0..LAMBDA_GRID)
            .map(|i| -FRAC_PI_2 + std::f64::consts::PI * i as f64 / (LAMBDA_GRID - 1) as f64)
            .map(|t| law.deriv(t).abs())
            .fold(0.0, f64::max);
        let (a, b) = (law.eval(-FRAC_PI_2), law.eval(FRAC_PI_2));
        law.image = (a.min(b), a.max(b));
        law
    }

    #[inline]
    pub fn eval(&self, theta: f64) -> f64 {
        match &self.kind {
            LawKind::Linear { sigma } => sigma * theta,
            LawKind::Custom { eval, .. } => eval(theta),
        }
    }

    #[inline]
    pub fn deriv(&self, theta: f64) -> f64 {
        match &self.kind {
            LawKind::Linear { sigma } => *sigma,
            LawKind::Custom {
                deriv: Some(d), ..
            } => d(theta),
            LawKind::Custom { eval, deriv: None } => {
                (eval(theta + FD_STEP) - eval(theta - FD_STEP)) / (2.0 * FD_STEP)
            }
        }
    }

    /// Contraction factor `λ(f) = sup |f'|` (exact for the linear family,
    /// grid estimate otherwise).
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn family_tag(&self) -> &str {
        &self.family_tag
    }

    /// `Some(σ)` for the linear family.
    pub fn linear_sigma(&self) -> Option<f64> {
        match self.kind {
            LawKind::Linear { sigma } => Some(sigma),
            LawKind::Custom { .. } => None,
        }
    }

    /// True when the derivative is a finite-difference estimate.
    pub fn uses_finite_difference(&self) -> bool {
        matches!(self.kind, LawKind::Custom { deriv: None, .. })
    }

    /// Image interval `f([-π/2, π/2])`.
    pub fn image(&self) -> (f64, f64) {
        self.image
    }

    /// Half-width of the smallest symmetric interval containing the image.
    pub fn image_half_width(&self) -> f64 {
        self.image.0.abs().max(self.image.1.abs())
    }

    /// Solves `f(θ) = phi` to a residual below 1e-13.
    pub fn inverse_eval(&self, phi: f64) -> Result<f64, LawError> {
        let (lo, hi) = self.image;
        if !(phi >= lo && phi <= hi) {
            return Err(LawError::OutOfRange { value: phi, lo, hi });
        }
        if let LawKind::Linear { sigma } = self.kind {
            return Ok(phi / sigma);
        }
        if phi == 0.0 && self.eval(0.0) == 0.0 {
            return Ok(0.0);
        }
        // Safeguarded Newton on the bracket [-π/2, π/2].
        let (mut a, mut b) = (-FRAC_PI_2, FRAC_PI_2);
        let mut x = phi / self.lambda.max(1e-3);
        x = x.clamp(a, b);
        for _ in 0..200 {
            let r = self.eval(x) - phi;
            if r.abs() < 1e-14 {
                return Ok(x);
            }
            if r > 0.0 {
                b = x;
            } else {
                a = x;
            }
            let d = self.deriv(x);
            let mut next = x - r / d;
            if !(next > a && next < b) || !next.is_finite() {
                next = 0.5 * (a + b);
            }
            if (next - x).abs() < 1e-17 {
                return Ok(next);
            }
            x = next;
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    NonzeroAtOrigin,
    NonPositiveDerivative,
    ImageOutOfRange,
    NotContracting,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawViolation {
    pub kind: ViolationKind,
    pub theta: f64,
    pub value: f64,
}

impl fmt::Display for LawViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            ViolationKind::NonzeroAtOrigin => "f(0) != 0",
            ViolationKind::NonPositiveDerivative => "f' not > 0",
            ViolationKind::ImageOutOfRange => "|f| >= pi/2",
            ViolationKind::NotContracting => "sup |f'| >= 1",
        };
        write!(f, "{what} at theta={} (value {})", self.theta, self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawReport {
    pub ok: bool,
    pub violations: Vec<LawViolation>,
    pub lambda_estimate: f64,
    pub finite_difference_derivative: bool,
}

/// Samples `f` and `f'` on a uniform grid over `[-π/2, π/2]` (plus `θ = 0`)
/// and reports every failed standing assumption, first occurrence per kind.
pub fn validate_law(law: &ReflectionLaw, grid_size: usize) -> LawReport {
    let grid_size = grid_size.max(16);
    let mut thetas: Vec<f64> = (0..grid_size)
        .map(|i| -FRAC_PI_2 + std::f64::consts::PI * i as f64 / (grid_size - 1) as f64)
        .collect();
    thetas.push(0.0);
    thetas.sort_by(f64::total_cmp);

    let mut violations: Vec<LawViolation> = Vec::new();
    let mut push = |v: LawViolation| {
        if !violations.iter().any(|w| w.kind == v.kind) {
            violations.push(v);
        }
    };

    let f0 = law.eval(0.0);
    if f0 != 0.0 {
        push(LawViolation {
            kind: ViolationKind::NonzeroAtOrigin,
            theta: 0.0,
            value: f0,
        });
    }
    let mut sup = 0.0f64;
    let mut sup_at = 0.0;
    for &t in &thetas {
        let v = law.eval(t);
        let d = law.deriv(t);
        let interior = t.abs() < FRAC_PI_2;
        if interior && !(d > 0.0) {
            push(LawViolation {
                kind: ViolationKind::NonPositiveDerivative,
                theta: t,
                value: d,
            });
        }
        if !(v.abs() < FRAC_PI_2) {
            push(LawViolation {
                kind: ViolationKind::ImageOutOfRange,
                theta: t,
                value: v,
            });
        }
        if d.abs() > sup || d.is_nan() {
            sup = d.abs();
            sup_at = t;
        }
    }
    if !(sup < 1.0) {
        push(LawViolation {
            kind: ViolationKind::NotContracting,
            theta: sup_at,
            value: sup,
        });
    }
    LawReport {
        ok: violations.is_empty(),
        violations,
        lambda_estimate: sup,
        finite_difference_derivative: law.uses_finite_difference(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn linear_basics() {
        let f = linear_law(0.5).unwrap();
        assert_eq!(f.eval(FRAC_PI_4), FRAC_PI_4 / 2.0);
        assert_eq!(f.lambda(), 0.5);
        assert!(matches!(linear_law(1.0), Err(LawError::OutOfRange { .. })));
        assert!(linear_law(0.0).is_err());
        assert!(validate_law(&linear_law(0.7).unwrap(), 64).ok);
    }

    #[test]
    fn sine_is_not_contracting() {
        let f = ReflectionLaw::custom_unchecked("sin", Arc::new(f64::sin), Some(Arc::new(f64::cos)));
        let r = validate_law(&f, 64);
        assert!(!r.ok);
        assert!(r
            .violations
            .iter()
            .any(|v| v.kind == ViolationKind::NotContracting && v.value >= 1.0));
    }

    #[test]
    fn flat_cubic_has_zero_derivative_at_origin() {
        let f = ReflectionLaw::custom_unchecked(
            "cubic",
            Arc::new(|t: f64| 0.5 * t * t * t),
            Some(Arc::new(|t: f64| 1.5 * t * t)),
        );
        let r = validate_law(&f, 16);
        let v = r
            .violations
            .iter()
            .find(|v| v.kind == ViolationKind::NonPositiveDerivative)
            .expect("derivative violation");
        assert_eq!(v.theta, 0.0);
        assert!(ReflectionLaw::custom(
            "cubic",
            Arc::new(|t: f64| 0.5 * t * t * t),
            Some(Arc::new(|t: f64| 1.5 * t * t))
        )
        .is_err());
    }

    #[test]
    fn finite_difference_fallback() {
        let f = ReflectionLaw::custom("fd", Arc::new(|t: f64| 0.6 * t.sin()), None).unwrap();
        assert!(f.uses_finite_difference());
        assert!(validate_law(&f, 32).finite_difference_derivative);
        assert!((f.deriv(0.3) - 0.6 * 0.3f64.cos()).abs() < 1e-9);
        assert!((f.lambda() - 0.6).abs() < 1e-9);
    }

    #[test]
    fn inverse_examples() {
        let f = linear_law(0.5).unwrap();
        assert_eq!(f.inverse_eval(0.2).unwrap(), 0.4);
        assert_eq!(f.inverse_eval(0.0).unwrap(), 0.0);
        assert!(matches!(f.inverse_eval(0.8), Err(LawError::OutOfRange { .. })));
    }

    #[test]
    fn inverse_custom_round_trip() {
        let f = LawSpec::Custom {
            family: "odd_cubic".into(),
            params: vec![0.3, 0.05],
        }
        .build()
        .unwrap();
        for i in 0..200 {
            let phi = f.image().0 + (f.image().1 - f.image().0) * (i as f64 + 0.5) / 200.0;
            let t = f.inverse_eval(phi).unwrap();
            assert!((f.eval(t) - phi).abs() < 1e-13);
        }
    }

    #[test]
    fn spec_parsing() {
        let s: LawSpec = serde_json::from_str(r#"{"type":"linear","sigma":0.5}"#).unwrap();
        assert_eq!(s, LawSpec::Linear { sigma: 0.5 });
        let c: LawSpec =
            serde_json::from_str(r#"{"type":"custom","family":"scaled_sine","params":[0.8]}"#)
                .unwrap();
        let law = c.build().unwrap();
        assert!((law.lambda() - 0.8).abs() < 1e-12);
        let bad = LawSpec::Custom {
            family: "nope".into(),
            params: vec![],
        };
        assert!(matches!(bad.build(), Err(LawError::UnknownFamily(_))));
        assert!(LawSpec::Linear { sigma: 1.2 }.build().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn linear_round_trip(sigma in 0.05f64..0.95, theta in -FRAC_PI_2..FRAC_PI_2) {
                let f = linear_law(sigma).unwrap();
                let back = f.inverse_eval(f.eval(theta)).unwrap();
                prop_assert!((back - theta).abs() < 1e-12);
                prop_assert!(f.eval(theta).abs() <= sigma * theta.abs() + 1e-15);
            }

            #[test]
            fn sine_round_trip(theta in -1.5f64..1.5) {
                let f = LawSpec::Custom { family: "scaled_sine".into(), params: vec![0.7] }
                    .build()
                    .unwrap();
                let back = f.inverse_eval(f.eval(theta)).unwrap();
                prop_assert!((back - theta).abs() < 1e-12);
            }
        }
    }
}
