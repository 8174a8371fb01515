//! Sufficient conditions for `∞` to be an instantaneous entrance boundary.
//!
//! Two criteria are implemented. The competition integral applies to
//! branching-type specs (`γ₁(x) = γ₂(x) = x`) and asks for
//! `∫_b^∞ dx/|γ₀(x)| < ∞`. The stable-power criterion applies to pure-jump
//! specs with `ν` stable of index `α` and `γ₂(x) = c·x^{r₂}`, and asks for
//! `r₂ > α`. Neither condition is necessary, so the verdict is two-valued.

use serde::{Deserialize, Serialize};

use crate::model::{LevyMeasure, ProcessSpec, RateFunction, ValidationReport};
use crate::quad;

/// `γ₀` must stay below `-NEGATIVITY_MARGIN` from `b` on.
pub const NEGATIVITY_MARGIN: f64 = 1e-9;
/// Upper end of the numerical part of the competition integral.
pub const QUAD_UPPER: f64 = 1e6;
/// Relative accuracy requested from the quadrature route.
const QUAD_REL_TOL: f64 = 1e-10;
/// Envelope exponents at most `1 + ENVELOPE_MARGIN` count as divergent.
const ENVELOPE_MARGIN: f64 = 1e-6;
/// Sign checks of `γ₀` between `b` and `QUAD_UPPER` use this many points.
const SIGN_CHECK_POINTS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Entrance,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    CompetitionIntegral,
    StablePower,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub verdict: Verdict,
    pub criterion_used: Criterion,
    /// `∫_b^∞ dx/|γ₀(x)|` when finite.
    pub integral_value: Option<f64>,
    pub b_used: Option<f64>,
    pub details: Vec<String>,
}

impl BoundaryReport {
    fn inconclusive(criterion_used: Criterion, details: Vec<String>) -> Self {
        BoundaryReport { verdict: Verdict::Inconclusive, criterion_used, integral_value: None, b_used: None, details }
    }
}

/// How `∫_b^∞ dx/|γ₀(x)|` was evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CompetitionIntegral {
    Finite { value: f64, closed_form: bool },
    Infinite,
}

/// Smallest grid point from which every later grid value of `γ₀` is below
/// `-NEGATIVITY_MARGIN`.
pub fn negativity_threshold(gamma0: &RateFunction, grid: &[f64]) -> Option<f64> {
    let mut b = None;
    for &x in grid.iter().rev() {
        if gamma0.eval(x) < -NEGATIVITY_MARGIN && x > 0.0 {
            b = Some(x);
        } else {
            break;
        }
    }
    b
}

/// Closed form for the families that have one.
pub fn competition_integral_closed_form(gamma0: &RateFunction, b: f64) -> Option<CompetitionIntegral> {
    match gamma0 {
        RateFunction::LogisticDrift { c } if *c > 0.0 => {
            Some(CompetitionIntegral::Finite { value: 2.0 / (c * b), closed_form: true })
        }
        RateFunction::PowerLaw { coefficient, exponent } if *coefficient < 0.0 => Some(if *exponent > 1.0 {
            CompetitionIntegral::Finite {
                value: b.powf(1.0 - exponent) / (coefficient.abs() * (exponent - 1.0)),
                closed_form: true,
            }
        } else {
            CompetitionIntegral::Infinite
        }),
        RateFunction::Linear { slope } if *slope < 0.0 => Some(CompetitionIntegral::Infinite),
        _ => None,
    }
}

/// Quadrature up to `QUAD_UPPER` plus a power-envelope tail. The envelope
/// `|γ₀(x)| ≈ C x^p` is fitted at `QUAD_UPPER/2` and `QUAD_UPPER`; the
/// integral is declared infinite when `p ≤ 1` or `γ₀` fails to stay negative.
pub fn competition_integral_quadrature(gamma0: &RateFunction, b: f64) -> CompetitionIntegral {
    if !(b > 0.0 && b < QUAD_UPPER) {
        return CompetitionIntegral::Infinite;
    }
    let ratio = (QUAD_UPPER / b).powf(1.0 / (SIGN_CHECK_POINTS - 1) as f64);
    let mut x = b;
    for _ in 0..SIGN_CHECK_POINTS {
        let g = gamma0.eval(x.min(QUAD_UPPER));
        if !(g < -NEGATIVITY_MARGIN) {
            return CompetitionIntegral::Infinite;
        }
        x *= ratio;
    }
    let half = gamma0.eval(0.5 * QUAD_UPPER).abs();
    let top = gamma0.eval(QUAD_UPPER).abs();
    let p = (top / half).log2();
    if !(p > 1.0 + ENVELOPE_MARGIN) {
        return CompetitionIntegral::Infinite;
    }
    let tail = QUAD_UPPER / (top * (p - 1.0));
    let f = |x: f64| 1.0 / gamma0.eval(x).abs();
    let rough = quad::integrate_compactified(f, b, QUAD_UPPER, 1e-6).value;
    let body = quad::integrate_compactified(f, b, QUAD_UPPER, QUAD_REL_TOL * rough.max(f64::MIN_POSITIVE)).value;
    CompetitionIntegral::Finite { value: body + tail, closed_form: false }
}

fn stable_power(spec: &ProcessSpec, report: &ValidationReport) -> Option<BoundaryReport> {
    let (alpha, r2) = match (&spec.gamma0, &spec.gamma1, &spec.gamma2, &spec.nu) {
        (
            RateFunction::Zero,
            RateFunction::Zero,
            RateFunction::PowerLaw { coefficient, exponent },
            LevyMeasure::Stable { alpha, .. },
        ) if *coefficient > 0.0 => (*alpha, *exponent),
        _ => return None,
    };
    let mut details = vec![format!("pure-jump stable spec: alpha = {alpha}, r2 = {r2}")];
    if !report.integrability_ok {
        details.push("∫(z∧z²)ν(dz) is infinite; criterion hypotheses fail".into());
        return Some(BoundaryReport::inconclusive(Criterion::StablePower, details));
    }
    let verdict = if r2 > alpha {
        details.push("r2 > alpha: jump activity outgrows the stable index".into());
        Verdict::Entrance
    } else {
        details.push("r2 <= alpha: sufficient condition not met".into());
        Verdict::Inconclusive
    };
    Some(BoundaryReport { verdict, criterion_used: Criterion::StablePower, integral_value: None, b_used: None, details })
}

fn competition(spec: &ProcessSpec, report: &ValidationReport) -> BoundaryReport {
    let mut unmet = Vec::new();
    if !spec.gamma1.is_identity() {
        unmet.push("gamma1 is not x ↦ x".to_string());
    }
    if !spec.gamma2.is_identity() {
        unmet.push("gamma2 is not x ↦ x".to_string());
    }
    if spec.gamma0.eval(0.0) != 0.0 {
        unmet.push(format!("gamma0(0) = {} is not 0", spec.gamma0.eval(0.0)));
    }
    if report.one_sided_lipschitz_theta.is_none() {
        unmet.push("no one-sided Lipschitz constant for gamma0".to_string());
    }
    if !report.integrability_ok {
        unmet.push("∫(z∧z²)ν(dz) is infinite".to_string());
    }
    if !unmet.is_empty() {
        return BoundaryReport::inconclusive(Criterion::None, unmet);
    }
    let Some(b) = negativity_threshold(&spec.gamma0, &report.grid) else {
        return BoundaryReport::inconclusive(
            Criterion::CompetitionIntegral,
            vec!["gamma0 is not eventually negative on the validation grid".into()],
        );
    };
    let integral = competition_integral_closed_form(&spec.gamma0, b)
        .unwrap_or_else(|| competition_integral_quadrature(&spec.gamma0, b));
    match integral {
        CompetitionIntegral::Finite { value, closed_form } => BoundaryReport {
            verdict: Verdict::Entrance,
            criterion_used: Criterion::CompetitionIntegral,
            integral_value: Some(value),
            b_used: Some(b),
            details: vec![format!(
                "∫_b^∞ dx/|gamma0| = {value} at b = {b} ({})",
                if closed_form { "closed form" } else { "quadrature with power-envelope tail" }
            )],
        },
        CompetitionIntegral::Infinite => BoundaryReport {
            b_used: Some(b),
            ..BoundaryReport::inconclusive(
                Criterion::CompetitionIntegral,
                vec![format!("∫_b^∞ dx/|gamma0| diverges at b = {b}")],
            )
        },
    }
}

/// Applies whichever criterion matches the shape of `spec`. Outside both
/// criteria's hypotheses the verdict is `Inconclusive` with the reasons.
pub fn classify(spec: &ProcessSpec, report: &ValidationReport) -> BoundaryReport {
    stable_power(spec, report).unwrap_or_else(|| competition(spec, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{integer_grid, validate};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn stable() -> LevyMeasure {
        LevyMeasure::Stable { alpha: 1.5, c_alpha: 1.0 }
    }

    fn run(spec: &ProcessSpec) -> BoundaryReport {
        classify(spec, &validate(spec, &integer_grid(100)).unwrap())
    }

    fn branching(gamma0: RateFunction) -> ProcessSpec {
        ProcessSpec { gamma0, ..ProcessSpec::logistic_csbp(1.0, stable()) }
    }

    fn stable_power_spec(r2: f64) -> ProcessSpec {
        ProcessSpec {
            gamma0: RateFunction::Zero,
            gamma1: RateFunction::Zero,
            gamma2: RateFunction::PowerLaw { coefficient: 1.0, exponent: r2 },
            nu: stable(),
        }
    }

    #[test]
    fn logistic_is_entrance() {
        let r = run(&ProcessSpec::logistic_csbp(1.0, stable()));
        assert_eq!(r.verdict, Verdict::Entrance);
        assert_eq!(r.criterion_used, Criterion::CompetitionIntegral);
        assert_eq!(r.b_used, Some(1.0));
        assert_eq!(r.integral_value, Some(2.0));
    }

    #[test]
    fn logistic_integral_scales_with_c() {
        let r = run(&ProcessSpec::logistic_csbp(4.0, stable()));
        assert_eq!(r.integral_value, Some(0.5));
    }

    #[test]
    fn linear_drift_inconclusive() {
        let r = run(&branching(RateFunction::Linear { slope: -2.0 }));
        assert_eq!(r.verdict, Verdict::Inconclusive);
        assert_eq!(r.criterion_used, Criterion::CompetitionIntegral);
        assert_eq!(r.integral_value, None);
    }

    #[test]
    fn stable_power_branch() {
        let r = run(&stable_power_spec(2.0));
        assert_eq!((r.verdict, r.criterion_used), (Verdict::Entrance, Criterion::StablePower));
        let r = run(&stable_power_spec(1.2));
        assert_eq!((r.verdict, r.criterion_used), (Verdict::Inconclusive, Criterion::StablePower));
        let r = run(&stable_power_spec(1.5));
        assert_eq!(r.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn outside_hypotheses_refuses() {
        let spec = ProcessSpec { gamma1: RateFunction::Linear { slope: 2.0 }, ..ProcessSpec::logistic_csbp(1.0, stable()) };
        let r = run(&spec);
        assert_eq!((r.verdict, r.criterion_used), (Verdict::Inconclusive, Criterion::None));
        assert!(!r.details.is_empty());
        let r = run(&ProcessSpec::null());
        assert_eq!((r.verdict, r.criterion_used), (Verdict::Inconclusive, Criterion::None));
        let r = run(&ProcessSpec::logistic_drift_only(1.0));
        assert_eq!(r.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn drift_positive_near_zero_picks_later_b() {
        // γ₀(x) = x - x², negative from x > 1
        let r = run(&branching(RateFunction::Polynomial { coefficients: vec![0.0, 1.0, -1.0] }));
        assert_eq!(r.verdict, Verdict::Entrance);
        assert_eq!(r.b_used, Some(2.0));
        // ∫_2^∞ dx/(x² - x) = ln 2
        assert_relative_eq!(r.integral_value.unwrap(), 2f64.ln(), max_relative = 1e-6);
    }

    #[test]
    fn tabulated_constant_tail_diverges() {
        let g0 = RateFunction::Tabulated { points: vec![(0.0, 0.0), (1.0, -1.0), (1e7, -5.0)] };
        assert_eq!(competition_integral_quadrature(&g0, 1.0), CompetitionIntegral::Infinite);
    }

    #[test]
    fn quadrature_rejects_sign_change() {
        // negative on [1, 9), positive past 10
        let g0 = RateFunction::Polynomial { coefficients: vec![10.0, -11.0, 1.0] };
        assert_eq!(competition_integral_quadrature(&g0, 1.5), CompetitionIntegral::Infinite);
    }

    #[test]
    fn quadrature_matches_closed_form_for_power_laws() {
        for (a, p, b) in [(-0.5, 2.0, 1.0), (-3.0, 1.5, 2.0), (-1.0, 1.1, 5.0), (-2.0, 3.0, 0.5)] {
            let g0 = RateFunction::PowerLaw { coefficient: a, exponent: p };
            let exact = match competition_integral_closed_form(&g0, b).unwrap() {
                CompetitionIntegral::Finite { value, .. } => value,
                CompetitionIntegral::Infinite => panic!(),
            };
            match competition_integral_quadrature(&g0, b) {
                CompetitionIntegral::Finite { value, closed_form } => {
                    assert!(!closed_form);
                    assert_relative_eq!(value, exact, max_relative = 1e-6);
                }
                CompetitionIntegral::Infinite => panic!("exponent {p} judged divergent"),
            }
        }
        let g0 = RateFunction::PowerLaw { coefficient: -1.0, exponent: 1.0 };
        assert_eq!(competition_integral_quadrature(&g0, 1.0), CompetitionIntegral::Infinite);
    }

    proptest! {
        #[test]
        fn scale_covariance(lambda in 0.01f64..100.0, c in 0.1f64..10.0) {
            let base = run(&ProcessSpec::logistic_csbp(c, stable()));
            let spec = branching(RateFunction::LogisticDrift { c }.scaled(lambda));
            let scaled = run(&spec);
            prop_assert_eq!(base.verdict, scaled.verdict);
            let ratio = base.integral_value.unwrap() / scaled.integral_value.unwrap();
            prop_assert!((ratio / lambda - 1.0).abs() < 1e-12);
        }

        #[test]
        fn scale_covariance_quadrature(lambda in 0.1f64..10.0) {
            let g0 = RateFunction::Polynomial { coefficients: vec![0.0, 0.0, -0.5, -0.1] };
            let base = run(&branching(g0.clone()));
            let scaled = run(&branching(g0.scaled(lambda)));
            prop_assert_eq!(base.verdict, Verdict::Entrance);
            prop_assert_eq!(scaled.verdict, Verdict::Entrance);
            let ratio = base.integral_value.unwrap() / scaled.integral_value.unwrap();
            prop_assert!((ratio / lambda - 1.0).abs() < 1e-6);
        }

        #[test]
        fn linear_never_entrance(slope in -10.0f64..10.0) {
            let r = run(&branching(RateFunction::Linear { slope }));
            prop_assert_eq!(r.verdict, Verdict::Inconclusive);
        }
    }
}
