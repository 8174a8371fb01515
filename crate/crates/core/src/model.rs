//! Process specifications: the coefficient functions of the equation below
//! together with the Lévy measure of the upward jumps.
//!
//! A specification describes the nonnegative solution of
//!
//! ```text
//! X_t = x + ∫ γ₀(X_s) ds + ∫ sqrt(γ₁(X_s)) dB_s
//!         + ∫∫∫_{u ≤ γ₂(X_{s-})} z Ñ(ds, dz, du)
//! ```
//!
//! where `Ñ` is a compensated Poisson random measure with intensity
//! `ds ν(dz) du` on `(0, ∞)³`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, spec, Error, Result};
use crate::quad;

/// Upper end of the state window used for evaluation and integral cut-offs.
pub const DEFAULT_X_CAP: f64 = 1e6;

/// Absolute tolerance for integrability quadrature.
pub const QUAD_ABS_TOL: f64 = 1e-9;

/// A coefficient `x ↦ γ(x)` on `[0, ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateFunction {
    Zero,
    Linear { slope: f64 },
    /// `coefficient · x^exponent`
    PowerLaw { coefficient: f64, exponent: f64 },
    /// `-(c/2) x²`
    LogisticDrift { c: f64 },
    /// `Σ coefficients[k] · x^k`
    Polynomial { coefficients: Vec<f64> },
    /// Linear interpolation between `(x, value)` nodes, constant past the last node.
    Tabulated { points: Vec<(f64, f64)> },
}

impl RateFunction {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            RateFunction::Zero => 0.0,
            RateFunction::Linear { slope } => slope * x,
            RateFunction::PowerLaw { coefficient, exponent } => {
                if *exponent == 1.0 {
                    coefficient * x
                } else if *exponent == 2.0 {
                    coefficient * x * x
                } else {
                    coefficient * x.powf(*exponent)
                }
            }
            RateFunction::LogisticDrift { c } => -0.5 * c * x * x,
            RateFunction::Polynomial { coefficients } => {
                coefficients.iter().rev().fold(0.0, |acc, a| acc * x + a)
            }
            RateFunction::Tabulated { points } => {
                let k = points.partition_point(|p| p.0 <= x);
                if k == 0 {
                    points[0].1
                } else if k == points.len() {
                    points[k - 1].1
                } else {
                    let (x0, y0) = points[k - 1];
                    let (x1, y1) = points[k];
                    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
                }
            }
        }
    }

    /// Parameter sanity. Coefficients must be finite with nonnegative
    /// exponents; tabulation nodes start at 0 and strictly increase.
    pub fn check(&self) -> Result<()> {
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                spec(format!("{what} must be finite, got {v}"))
            }
        };
        match self {
            RateFunction::Zero => Ok(()),
            RateFunction::Linear { slope } => finite(*slope, "slope"),
            RateFunction::PowerLaw { coefficient, exponent } => {
                finite(*coefficient, "coefficient")?;
                finite(*exponent, "exponent")?;
                if *exponent < 0.0 {
                    return spec(format!("power-law exponent must be >= 0, got {exponent}"));
                }
                Ok(())
            }
            RateFunction::LogisticDrift { c } => finite(*c, "logistic c"),
            RateFunction::Polynomial { coefficients } => {
                coefficients.iter().try_for_each(|a| finite(*a, "polynomial coefficient"))
            }
            RateFunction::Tabulated { points } => {
                if points.len() < 2 {
                    return spec("tabulated rate function needs at least two nodes");
                }
                if points[0].0 != 0.0 {
                    return spec("tabulated rate function must start at x = 0");
                }
                for (x, y) in points {
                    finite(*x, "tabulated abscissa")?;
                    finite(*y, "tabulated value")?;
                }
                if points.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return spec("tabulated abscissae must be strictly increasing");
                }
                Ok(())
            }
        }
    }

    /// Largest abscissa on which the function is genuinely specified.
    pub fn coverage(&self) -> f64 {
        match self {
            RateFunction::Tabulated { points } => points.last().map_or(0.0, |p| p.0),
            _ => f64::INFINITY,
        }
    }

    /// True when the function is `x ↦ x` by construction.
    pub fn is_identity(&self) -> bool {
        match self {
            RateFunction::Linear { slope } => *slope == 1.0,
            RateFunction::PowerLaw { coefficient, exponent } => *coefficient == 1.0 && *exponent == 1.0,
            RateFunction::Polynomial { coefficients } => {
                coefficients.len() >= 2
                    && coefficients[0] == 0.0
                    && coefficients[1] == 1.0
                    && coefficients[2..].iter().all(|a| *a == 0.0)
            }
            _ => false,
        }
    }

    /// `λ · γ`.
    pub fn scaled(&self, lambda: f64) -> RateFunction {
        match self {
            RateFunction::Zero => RateFunction::Zero,
            RateFunction::Linear { slope } => RateFunction::Linear { slope: lambda * slope },
            RateFunction::PowerLaw { coefficient, exponent } => RateFunction::PowerLaw {
                coefficient: lambda * coefficient,
                exponent: *exponent,
            },
            RateFunction::LogisticDrift { c } => RateFunction::LogisticDrift { c: lambda * c },
            RateFunction::Polynomial { coefficients } => RateFunction::Polynomial {
                coefficients: coefficients.iter().map(|a| lambda * a).collect(),
            },
            RateFunction::Tabulated { points } => RateFunction::Tabulated {
                points: points.iter().map(|(x, y)| (*x, lambda * y)).collect(),
            },
        }
    }

    /// Nondecreasing on all of `[0, ∞)` as far as the family alone can tell;
    /// families without a closed-form answer defer to the grid check.
    fn family_nondecreasing(&self) -> bool {
        match self {
            RateFunction::Linear { slope } => *slope >= 0.0,
            RateFunction::PowerLaw { coefficient, exponent } => *coefficient >= 0.0 || *exponent == 0.0,
            RateFunction::LogisticDrift { c } => *c <= 0.0,
            RateFunction::Polynomial { coefficients } => {
                // eventually nondecreasing iff the leading nonzero coefficient is positive
                coefficients.iter().rev().find(|a| **a != 0.0).is_none_or(|a| *a > 0.0)
            }
            RateFunction::Zero | RateFunction::Tabulated { .. } => true,
        }
    }

    /// Power-law families with exponent in `(0, 1)` are not Lipschitz at 0.
    fn singular_at_zero(&self) -> bool {
        matches!(self, RateFunction::PowerLaw { coefficient, exponent }
            if *coefficient != 0.0 && *exponent > 0.0 && *exponent < 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub size: f64,
    pub rate: f64,
}

/// Lévy measure `ν` of the upward jumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LevyMeasure {
    None,
    /// `ν(dz) = c_α z^{-1-α} dz` on `(0, ∞)`, `α ∈ (1, 2)`.
    Stable { alpha: f64, c_alpha: f64 },
    /// The stable density restricted to `(0, z_max]`, `α ∈ (0, 2)`.
    TruncatedStable { alpha: f64, c_alpha: f64, z_max: f64 },
    FiniteAtoms { atoms: Vec<Atom> },
}

impl LevyMeasure {
    pub fn check(&self) -> Result<()> {
        match self {
            LevyMeasure::None => Ok(()),
            LevyMeasure::Stable { alpha, c_alpha } => {
                if !(*alpha > 1.0 && *alpha < 2.0) {
                    return spec(format!("stable index must lie in (1, 2), got {alpha}"));
                }
                if !(*c_alpha > 0.0 && c_alpha.is_finite()) {
                    return spec(format!("c_alpha must be positive, got {c_alpha}"));
                }
                Ok(())
            }
            LevyMeasure::TruncatedStable { alpha, c_alpha, z_max } => {
                if !(*alpha > 0.0 && *alpha < 2.0) {
                    return spec(format!("truncated stable index must lie in (0, 2), got {alpha}"));
                }
                if !(*c_alpha > 0.0 && c_alpha.is_finite()) {
                    return spec(format!("c_alpha must be positive, got {c_alpha}"));
                }
                if !(*z_max > 0.0 && z_max.is_finite()) {
                    return spec(format!("z_max must be positive and finite, got {z_max}"));
                }
                Ok(())
            }
            LevyMeasure::FiniteAtoms { atoms } => {
                for a in atoms {
                    if !(a.size > 0.0 && a.size.is_finite()) {
                        return spec(format!("atom sizes must be positive (no negative jumps), got {}", a.size));
                    }
                    if !(a.rate > 0.0 && a.rate.is_finite()) {
                        return spec(format!("atom rates must be positive, got {}", a.rate));
                    }
                }
                Ok(())
            }
        }
    }

    /// `ν([ε, ∞))`.
    pub fn tail_mass(&self, eps: f64) -> Result<f64> {
        check_eps(eps)?;
        Ok(match self {
            LevyMeasure::None => 0.0,
            LevyMeasure::Stable { alpha, c_alpha } => c_alpha * eps.powf(-alpha) / alpha,
            LevyMeasure::TruncatedStable { alpha, c_alpha, z_max } => {
                if eps > *z_max {
                    0.0
                } else {
                    c_alpha * (eps.powf(-alpha) - z_max.powf(-alpha)) / alpha
                }
            }
            LevyMeasure::FiniteAtoms { atoms } => {
                atoms.iter().filter(|a| a.size >= eps).map(|a| a.rate).sum()
            }
        })
    }

    /// `(∫_{[ε,∞)} z ν(dz), ∫_{(0,ε)} z² ν(dz))`: the compensator mass of the
    /// simulated jumps and the variance rate of the omitted ones.
    pub fn partial_moments(&self, eps: f64) -> Result<(f64, f64)> {
        check_eps(eps)?;
        Ok(match self {
            LevyMeasure::None => (0.0, 0.0),
            LevyMeasure::Stable { alpha, c_alpha } => (
                c_alpha * eps.powf(1.0 - alpha) / (alpha - 1.0),
                c_alpha * eps.powf(2.0 - alpha) / (2.0 - alpha),
            ),
            LevyMeasure::TruncatedStable { alpha, c_alpha, z_max } => {
                let m1 = if eps >= *z_max {
                    0.0
                } else if (*alpha - 1.0).abs() < 1e-12 {
                    c_alpha * (z_max / eps).ln()
                } else {
                    c_alpha * (eps.powf(1.0 - alpha) - z_max.powf(1.0 - alpha)) / (alpha - 1.0)
                };
                let v = c_alpha * eps.min(*z_max).powf(2.0 - alpha) / (2.0 - alpha);
                (m1, v)
            }
            LevyMeasure::FiniteAtoms { atoms } => atoms.iter().fold((0.0, 0.0), |(m1, v), a| {
                if a.size >= eps {
                    (m1 + a.size * a.rate, v)
                } else {
                    (m1, v + a.size * a.size * a.rate)
                }
            }),
        })
    }

    /// `∫ (z ∧ z²) ν(dz)`; closed form for the stable family, quadrature for
    /// the truncated one.
    pub fn integrability(&self) -> f64 {
        match self {
            LevyMeasure::None => 0.0,
            LevyMeasure::Stable { alpha, c_alpha } => c_alpha * (1.0 / (2.0 - alpha) + 1.0 / (alpha - 1.0)),
            LevyMeasure::TruncatedStable { alpha, c_alpha, z_max } => {
                let density = |z: f64| c_alpha * z.powf(-1.0 - alpha);
                let small = quad::integrate(|z| z * z * density(z), 0.0, z_max.min(1.0), QUAD_ABS_TOL);
                let large = if *z_max > 1.0 {
                    quad::integrate(|z| z * density(z), 1.0, *z_max, QUAD_ABS_TOL).value
                } else {
                    0.0
                };
                small.value + large
            }
            LevyMeasure::FiniteAtoms { atoms } => {
                atoms.iter().map(|a| a.size.min(a.size * a.size) * a.rate).sum()
            }
        }
    }

    /// Sampler for the normalized restriction of `ν` to `[ε, ∞)`.
    pub fn jump_sampler(&self, eps: f64) -> Result<JumpSampler> {
        check_eps(eps)?;
        Ok(match self {
            LevyMeasure::None => JumpSampler::Empty,
            LevyMeasure::Stable { alpha, .. } => JumpSampler::Pareto { eps, inv_alpha: 1.0 / alpha },
            LevyMeasure::TruncatedStable { alpha, z_max, .. } => {
                if eps > *z_max {
                    JumpSampler::Empty
                } else {
                    let lo = eps.powf(-alpha);
                    JumpSampler::TruncatedPareto {
                        lo,
                        span: lo - z_max.powf(-alpha),
                        inv_alpha: 1.0 / alpha,
                    }
                }
            }
            LevyMeasure::FiniteAtoms { atoms } => {
                let kept: Vec<&Atom> = atoms.iter().filter(|a| a.size >= eps).collect();
                if kept.is_empty() {
                    JumpSampler::Empty
                } else {
                    let mut acc = 0.0;
                    let cumulative = kept
                        .iter()
                        .map(|a| {
                            acc += a.rate;
                            acc
                        })
                        .collect();
                    JumpSampler::Atoms {
                        cumulative,
                        sizes: kept.iter().map(|a| a.size).collect(),
                    }
                }
            }
        })
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        domain(format!("cutoff eps must be positive and finite, got {eps}"))
    }
}

/// `ν([ε, ∞))`.
pub fn nu_tail_mass(nu: &LevyMeasure, eps: f64) -> Result<f64> {
    nu.tail_mass(eps)
}

/// `(m1, v) = (∫_{[ε,∞)} z ν(dz), ∫_{(0,ε)} z² ν(dz))`.
pub fn nu_partial_moments(nu: &LevyMeasure, eps: f64) -> Result<(f64, f64)> {
    nu.partial_moments(eps)
}

/// Draws jump sizes from `ν` restricted to `[ε, ∞)` and normalized.
#[derive(Debug, Clone)]
pub enum JumpSampler {
    Empty,
    Pareto { eps: f64, inv_alpha: f64 },
    TruncatedPareto { lo: f64, span: f64, inv_alpha: f64 },
    Atoms { cumulative: Vec<f64>, sizes: Vec<f64> },
}

impl JumpSampler {
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            JumpSampler::Empty => 0.0,
            JumpSampler::Pareto { eps, inv_alpha } => {
                let u: f64 = 1.0 - rng.random::<f64>();
                eps * u.powf(-inv_alpha)
            }
            JumpSampler::TruncatedPareto { lo, span, inv_alpha } => {
                let u: f64 = rng.random::<f64>();
                (lo - u * span).powf(-inv_alpha)
            }
            JumpSampler::Atoms { cumulative, sizes } => {
                let total = *cumulative.last().expect("non-empty atoms");
                let target = rng.random::<f64>() * total;
                let k = cumulative.partition_point(|c| *c <= target).min(sizes.len() - 1);
                sizes[k]
            }
        }
    }
}

/// The coefficient set `(γ₀, γ₁, γ₂, ν)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSpec {
    pub gamma0: RateFunction,
    pub gamma1: RateFunction,
    pub gamma2: RateFunction,
    pub nu: LevyMeasure,
}

impl ProcessSpec {
    pub fn check(&self) -> Result<()> {
        for (name, f) in [("gamma0", &self.gamma0), ("gamma1", &self.gamma1), ("gamma2", &self.gamma2)] {
            f.check().map_err(|e| Error::Spec(format!("{name}: {e}")))?;
        }
        self.nu.check().map_err(|e| Error::Spec(format!("nu: {e}")))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: ProcessSpec = serde_json::from_str(s)?;
        spec.check()?;
        Ok(spec)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// 0 is absorbing when every coefficient vanishes there.
    pub fn zero_is_absorbing(&self) -> bool {
        self.gamma0.eval(0.0) == 0.0 && self.gamma1.eval(0.0) == 0.0 && self.gamma2.eval(0.0) == 0.0
    }

    /// `γ₀ = -(c/2)x²`, `γ₁ = γ₂ = x`.
    pub fn logistic_csbp(c: f64, nu: LevyMeasure) -> Self {
        ProcessSpec {
            gamma0: RateFunction::LogisticDrift { c },
            gamma1: RateFunction::Linear { slope: 1.0 },
            gamma2: RateFunction::Linear { slope: 1.0 },
            nu,
        }
    }

    /// `γ₀ = -(c/2)x²` and nothing else.
    pub fn logistic_drift_only(c: f64) -> Self {
        ProcessSpec {
            gamma0: RateFunction::LogisticDrift { c },
            gamma1: RateFunction::Zero,
            gamma2: RateFunction::Zero,
            nu: LevyMeasure::None,
        }
    }

    pub fn null() -> Self {
        ProcessSpec {
            gamma0: RateFunction::Zero,
            gamma1: RateFunction::Zero,
            gamma2: RateFunction::Zero,
            nu: LevyMeasure::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub integrability_ok: bool,
    pub integrability_value: f64,
    /// Largest difference quotient of `γ₀` over grid pairs `x < y`.
    pub one_sided_lipschitz_theta: Option<f64>,
    pub gamma2_monotone: bool,
    pub warnings: Vec<String>,
    pub grid: Vec<f64>,
}

impl ValidationReport {
    /// The one-sided Lipschitz constant to use in mean-gap bounds. A grid
    /// maximum below zero still only certifies `θ = 0` on `[0, ∞)`.
    pub fn theta_certificate(&self) -> Option<f64> {
        self.one_sided_lipschitz_theta.map(|t| t.max(0.0))
    }
}

/// Checks the structural hypotheses of `spec` on `grid`.
pub fn validate(spec: &ProcessSpec, grid: &[f64]) -> Result<ValidationReport> {
    if grid.is_empty() {
        return domain("validation grid is empty");
    }
    if grid.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return domain("validation grid must contain finite nonnegative points");
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return domain("validation grid must be strictly increasing");
    }
    spec.check()?;
    let x_hi = *grid.last().unwrap();
    for (name, f) in [("gamma0", &spec.gamma0), ("gamma1", &spec.gamma1), ("gamma2", &spec.gamma2)] {
        if f.coverage() < x_hi {
            return spec_err(format!("{name}: tabulation ends at {} but the grid reaches {x_hi}", f.coverage()));
        }
    }

    let mut warnings = Vec::new();
    let mut g0 = Vec::with_capacity(grid.len());
    let mut g2 = Vec::with_capacity(grid.len());
    for &x in grid {
        let (a, b, c) = (spec.gamma0.eval(x), spec.gamma1.eval(x), spec.gamma2.eval(x));
        if !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return spec_err(format!("rate function is not evaluable at x = {x}"));
        }
        if b < 0.0 {
            return spec_err(format!("gamma1({x}) = {b} is negative"));
        }
        if c < 0.0 {
            return spec_err(format!("gamma2({x}) = {c} is negative"));
        }
        g0.push(a);
        g2.push(c);
    }

    let theta = if grid.len() < 2 {
        warnings.push("one-sided Lipschitz constant needs at least two grid points".into());
        None
    } else if spec.gamma0.singular_at_zero() {
        warnings.push("gamma0 has unbounded slope at 0; no one-sided Lipschitz constant".into());
        None
    } else {
        let mut best = f64::NEG_INFINITY;
        for i in 0..grid.len() {
            for j in i + 1..grid.len() {
                best = best.max((g0[j] - g0[i]) / (grid[j] - grid[i]));
            }
        }
        best.is_finite().then_some(best)
    };

    let gamma2_monotone = g2.windows(2).all(|w| w[1] >= w[0]) && spec.gamma2.family_nondecreasing();
    if !gamma2_monotone {
        warnings.push("gamma2 is not nondecreasing; the comparison property is not certified".into());
    }

    for (name, f) in [("gamma0", &spec.gamma0), ("gamma1", &spec.gamma1), ("gamma2", &spec.gamma2)] {
        if f.singular_at_zero() {
            warnings.push(format!("{name} is not locally Lipschitz at 0; pathwise uniqueness is not certified"));
        }
    }

    let integrability_value = spec.nu.integrability();
    let integrability_ok = integrability_value.is_finite();
    if !integrability_ok {
        warnings.push("∫(z∧z²)ν(dz) is infinite; non-explosion is not guaranteed".into());
    }

    Ok(ValidationReport {
        integrability_ok,
        integrability_value,
        one_sided_lipschitz_theta: theta,
        gamma2_monotone,
        warnings,
        grid: grid.to_vec(),
    })
}

fn spec_err<T>(msg: String) -> Result<T> {
    Err(Error::Spec(msg))
}

/// `{0, 1, …, n}`.
pub fn integer_grid(n: usize) -> Vec<f64> {
    (0..=n).map(|k| k as f64).collect()
}

/// `n` points from `lo` to `hi` with constant ratio.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && lo > 0.0 && hi > lo);
    let ratio = hi / lo;
    (0..n)
        .map(|k| if k == n - 1 { hi } else { lo * ratio.powf(k as f64 / (n - 1) as f64) })
        .collect()
}
