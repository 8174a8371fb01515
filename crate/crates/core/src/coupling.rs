//! The flow `x ↦ X^{(x)}` on one noise realization.
//!
//! Every member path sees the same Brownian increments and the same jump
//! marks `(s, z, u)`; each applies its own thinning test `u ≤ γ₂(own state)`.
//! With `γ₂` nondecreasing a higher path accepts every mark a lower one
//! accepts, which is what keeps the flow ordered.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{ProcessSpec, ValidationReport};
use crate::parallel::par_collect;
use crate::simulate::{run_lockstep, OrderViolation, Path, Scheme, SimConfig};
use crate::stats::MeanSe;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowEnsemble {
    pub realization: u64,
    pub initial_values: Vec<f64>,
    /// One path per initial value, all on the same time grid.
    pub paths: Vec<Path>,
    /// Adjacent pairs found out of order, counted over every step.
    pub order_violations: u64,
    /// The first few violations in time order.
    pub violations: Vec<OrderViolation>,
}

impl FlowEnsemble {
    /// Pairs `(lower, upper)` of members whose passage times below `b` are
    /// out of order by more than `tolerance`.
    pub fn crossing_order_violations(&self, b: f64, tolerance: f64) -> Vec<(usize, usize)> {
        let times: Vec<Option<f64>> = self.paths.iter().map(|p| p.crossing_time(b)).collect();
        let mut bad = Vec::new();
        for i in 0..times.len() {
            for j in i + 1..times.len() {
                match (times[i], times[j]) {
                    (Some(lo), Some(hi)) if hi < lo - tolerance => bad.push((i, j)),
                    // the higher start crossed, the lower one never did
                    (None, Some(_)) => bad.push((i, j)),
                    _ => {}
                }
            }
        }
        bad
    }
}

fn check_flow_inputs(report: &ValidationReport, initial_values: &[f64], config: &SimConfig) -> Result<()> {
    if !report.gamma2_monotone {
        return Err(Error::Precondition(
            "gamma2 is not certified nondecreasing; the coupled flow need not be ordered".into(),
        ));
    }
    if initial_values.is_empty() {
        return domain("flow needs at least one initial value");
    }
    if initial_values.windows(2).any(|w| w[1] < w[0]) {
        return domain("initial values must be increasing");
    }
    if let Some(x) = initial_values.iter().find(|x| !(**x >= 0.0 && **x < config.x_cap)) {
        return domain(format!("initial value {x} outside [0, x_cap)"));
    }
    config.check()
}

/// One realization of the coupled flow.
pub fn simulate_flow(
    spec: &ProcessSpec,
    report: &ValidationReport,
    initial_values: &[f64],
    config: &SimConfig,
    realization: u64,
) -> Result<FlowEnsemble> {
    check_flow_inputs(report, initial_values, config)?;
    let scheme = Scheme::for_config(spec, config)?;
    Ok(flow_realization(&scheme, initial_values, config, realization))
}

fn flow_realization(scheme: &Scheme<'_>, initial_values: &[f64], config: &SimConfig, realization: u64) -> FlowEnsemble {
    let run = run_lockstep(scheme, initial_values, config, realization);
    FlowEnsemble {
        realization,
        initial_values: initial_values.to_vec(),
        paths: run.paths,
        order_violations: run.violation_count,
        violations: run.violations,
    }
}

/// Realizations `0..n_realizations` of the coupled flow, in index order.
pub fn simulate_flows(
    spec: &ProcessSpec,
    report: &ValidationReport,
    initial_values: &[f64],
    config: &SimConfig,
    n_realizations: usize,
) -> Result<Vec<FlowEnsemble>> {
    check_flow_inputs(report, initial_values, config)?;
    if n_realizations == 0 {
        return domain("need at least one realization");
    }
    let scheme = Scheme::for_config(spec, config)?;
    par_collect(n_realizations, config.workers, |r| flow_realization(&scheme, initial_values, config, r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GronwallCheck {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    /// Realizations with both members still defined at `t`.
    pub n: usize,
    /// Mean coupled gap `E|X_t^{(y)} − X_t^{(x)}|`.
    pub lhs_mean: f64,
    pub lhs_se: f64,
    pub theta: f64,
    /// `e^{θt}(y − x)`
    pub rhs: f64,
    pub pass: bool,
}

/// Mean coupled gap at `t` against the bound `e^{θt}(y − x)`, with `θ` the
/// one-sided Lipschitz certificate from `report`. Passes when
/// `lhs_mean − 3·SE ≤ rhs`.
pub fn gronwall_check(
    spec: &ProcessSpec,
    report: &ValidationReport,
    x: f64,
    y: f64,
    t: f64,
    n_realizations: usize,
    config: &SimConfig,
) -> Result<GronwallCheck> {
    if x > y {
        return domain(format!("need x <= y, got x = {x}, y = {y}"));
    }
    if !(t > 0.0 && t.is_finite()) {
        return domain(format!("t must be positive, got {t}"));
    }
    let theta = report
        .theta_certificate()
        .ok_or_else(|| Error::Precondition("no one-sided Lipschitz constant certified for gamma0".into()))?;
    let cfg = SimConfig {
        t_max: t,
        observation_times: vec![t],
        thresholds: Vec::new(),
        stop_on_crossing: false,
        record_stride: u64::MAX,
        ..config.clone()
    };
    let flows = simulate_flows(spec, report, &[x, y], &cfg, n_realizations)?;
    let gaps: Vec<f64> = flows
        .iter()
        .filter_map(|f| match (f.paths[0].observation(t), f.paths[1].observation(t)) {
            (Some(a), Some(b)) => Some((b - a).abs()),
            _ => None,
        })
        .collect();
    let stats = MeanSe::of(gaps.iter().copied())
        .ok_or_else(|| Error::Domain("every realization was stopped before t".into()))?;
    let rhs = (theta * t).exp() * (y - x);
    let lhs_se = stats.se_or_zero();
    Ok(GronwallCheck {
        x,
        y,
        t,
        n: stats.n,
        lhs_mean: stats.mean,
        lhs_se,
        theta,
        rhs,
        pass: stats.mean - 3.0 * lhs_se <= rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{integer_grid, validate, LevyMeasure, RateFunction};
    use crate::simulate::simulate_path;
    use approx::assert_relative_eq;

    fn csbp() -> ProcessSpec {
        ProcessSpec::logistic_csbp(1.0, LevyMeasure::Stable { alpha: 1.5, c_alpha: 1.0 })
    }

    fn report(spec: &ProcessSpec) -> ValidationReport {
        validate(spec, &integer_grid(100)).unwrap()
    }

    #[test]
    fn duplicate_starts_identical_paths() {
        let spec = csbp();
        let cfg = SimConfig { dt: 1e-2, adaptive: true, seed: 4, ..SimConfig::default() };
        let f = simulate_flow(&spec, &report(&spec), &[7.0, 7.0], &cfg, 0).unwrap();
        assert_eq!(f.paths[0].values, f.paths[1].values);
        assert_eq!(f.paths[0].times, f.paths[1].times);
    }

    #[test]
    fn deterministic_logistic_ordered_and_contracting() {
        let spec = ProcessSpec::logistic_drift_only(1.0);
        let cfg = SimConfig { dt: 1e-3, t_max: 2.0, ..SimConfig::default() };
        let f = simulate_flow(&spec, &report(&spec), &[10.0, 100.0], &cfg, 0).unwrap();
        assert_eq!(f.order_violations, 0);
        let gaps: Vec<f64> = f.paths[1].values.iter().zip(&f.paths[0].values).map(|(b, a)| b - a).collect();
        assert!(gaps.iter().all(|g| *g >= 0.0));
        assert!(gaps.windows(2).all(|w| w[1] <= w[0]));
        // x(t) = x0 / (1 + x0 t / 2), so at t = 2 the gap is 100/101 - 10/11
        let exact = 100.0 / 101.0 - 10.0 / 11.0;
        assert!((gaps.last().unwrap() - exact).abs() < 5e-3);
    }

    #[test]
    fn fixed_step_member_equals_solo_path() {
        // with a fixed step the clock is shared anyway, and marks below γ₂(own
        // state) do not depend on the dominating level
        let spec = csbp();
        let cfg = SimConfig { dt: 1e-2, seed: 11, ..SimConfig::default() };
        let f = simulate_flow(&spec, &report(&spec), &[3.0, 9.0], &cfg, 5).unwrap();
        let solo = simulate_path(&spec, 3.0, &cfg, 5).unwrap();
        assert_eq!(f.paths[0].values, solo.values);
    }

    #[test]
    fn csbp_flow_stays_ordered() {
        let spec = csbp();
        let cfg = SimConfig {
            dt: 1e-2,
            adaptive: true,
            seed: 21,
            t_max: 1.0,
            thresholds: vec![5.0],
            record_stride: 1,
            ..SimConfig::default()
        };
        for r in 0..30 {
            let f = simulate_flow(&spec, &report(&spec), &[10.0, 20.0, 40.0, 80.0], &cfg, r).unwrap();
            assert_eq!(f.order_violations, 0, "realization {r}: {:?}", f.violations);
            assert!(f.crossing_order_violations(5.0, cfg.dt).is_empty());
        }
    }

    #[test]
    fn flow_requires_monotone_gamma2() {
        let spec = ProcessSpec {
            gamma2: RateFunction::Tabulated { points: vec![(0.0, 2.0), (100.0, 1.0)] },
            ..ProcessSpec::null()
        };
        let rep = report(&spec);
        let err = simulate_flow(&spec, &rep, &[1.0, 2.0], &SimConfig::default(), 0);
        assert!(matches!(err, Err(Error::Precondition(_))));
    }

    #[test]
    fn flow_rejects_unsorted_starts() {
        let spec = csbp();
        assert!(simulate_flow(&spec, &report(&spec), &[2.0, 1.0], &SimConfig::default(), 0).is_err());
    }

    #[test]
    fn gronwall_linear_equality() {
        let s = 0.3;
        let spec = ProcessSpec { gamma0: RateFunction::Linear { slope: s }, ..ProcessSpec::null() };
        let rep = report(&spec);
        let cfg = SimConfig { dt: 1e-5, ..SimConfig::default() };
        let g = gronwall_check(&spec, &rep, 1.0, 3.0, 1.0, 4, &cfg).unwrap();
        assert_relative_eq!(g.theta, s, max_relative = 1e-12);
        assert_relative_eq!(g.rhs, 2.0 * s.exp(), max_relative = 1e-12);
        assert_relative_eq!(g.lhs_mean, g.rhs, max_relative = 1e-5);
        assert_eq!(g.lhs_se, 0.0);
        assert!(g.pass);
    }

    #[test]
    fn gronwall_equal_starts() {
        let spec = csbp();
        let cfg = SimConfig { dt: 1e-2, adaptive: true, ..SimConfig::default() };
        let g = gronwall_check(&spec, &report(&spec), 5.0, 5.0, 1.0, 20, &cfg).unwrap();
        assert_eq!(g.lhs_mean, 0.0);
        assert_eq!(g.rhs, 0.0);
        assert!(g.pass);
    }

    #[test]
    fn gronwall_needs_theta() {
        let spec = ProcessSpec {
            gamma0: RateFunction::PowerLaw { coefficient: 1.0, exponent: 0.5 },
            ..ProcessSpec::null()
        };
        let rep = report(&spec);
        let err = gronwall_check(&spec, &rep, 1.0, 2.0, 1.0, 2, &SimConfig::default());
        assert!(matches!(err, Err(Error::Precondition(_))));
    }
}
