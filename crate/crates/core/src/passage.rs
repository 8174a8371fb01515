//! First-passage times `T_b = inf{t ≥ 0 : X_t < b}`.
//!
//! Means are taken over the paths that crossed before the horizon; the
//! censored fraction is always reported next to them and never folded in.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::model::ProcessSpec;
use crate::simulate::{simulate_ensemble, SimConfig};
use crate::stats::{joint_se, ols_slope, quantile, MeanSe};

/// Two-sided 95% normal quantile, used for the tail-fit slack.
const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpMoment {
    pub theta: f64,
    /// Sample mean of `e^{θ T_b}`, censored paths contributing `e^{θ t_max}`.
    pub estimate: f64,
    pub se: Option<f64>,
    /// Some paths were censored, so `estimate` is only a lower bound.
    pub divergent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageEstimate {
    pub b: f64,
    pub x0: f64,
    pub n_paths: usize,
    pub n_crossed: usize,
    /// Mean of `T_b` over crossed paths; absent when none crossed.
    pub mean: Option<f64>,
    pub se: Option<f64>,
    pub censored_fraction: f64,
    pub t_max: f64,
    /// Empirical `P(T_b ≤ t)` at each distinct crossing time, closed at `t_max`.
    pub cdf: Vec<CdfPoint>,
    pub exp_moment: Option<ExpMoment>,
    /// Passage times of the crossed paths, in path order.
    #[serde(skip)]
    pub samples: Vec<f64>,
}

impl PassageEstimate {
    pub fn cdf_at(&self, t: f64) -> f64 {
        let k = self.cdf.partition_point(|c| c.t <= t);
        if k == 0 {
            0.0
        } else {
            self.cdf[k - 1].p
        }
    }

    /// Empirical quantile of the uncensored passage times.
    pub fn quantile(&self, q: f64) -> Option<f64> {
        quantile(&self.samples, q)
    }
}

pub(crate) fn passage_config(config: &SimConfig, thresholds: Vec<f64>) -> SimConfig {
    SimConfig {
        thresholds,
        stop_on_crossing: true,
        observation_times: Vec::new(),
        record_stride: u64::MAX,
        ..config.clone()
    }
}

/// Builds the estimate from per-path passage times (`None` = censored).
pub fn summarize_passage(x0: f64, b: f64, t_max: f64, times: &[Option<f64>]) -> PassageEstimate {
    let samples: Vec<f64> = times.iter().flatten().copied().collect();
    let n = times.len();
    let stats = MeanSe::of(samples.iter().copied());
    let censored_fraction = if n == 0 { 0.0 } else { 1.0 - samples.len() as f64 / n as f64 };
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let mut cdf: Vec<CdfPoint> = Vec::new();
    for (k, &t) in sorted.iter().enumerate() {
        let p = (k + 1) as f64 / n as f64;
        match cdf.last_mut() {
            Some(last) if last.t == t => last.p = p,
            _ => cdf.push(CdfPoint { t, p }),
        }
    }
    if cdf.last().is_none_or(|c| c.t < t_max) {
        cdf.push(CdfPoint { t: t_max, p: 1.0 - censored_fraction });
    }
    PassageEstimate {
        b,
        x0,
        n_paths: n,
        n_crossed: samples.len(),
        mean: stats.map(|s| s.mean),
        se: stats.map(|s| s.se.unwrap_or(0.0)),
        censored_fraction,
        t_max,
        cdf,
        exp_moment: None,
        samples,
    }
}

fn check_thresholds(x0: f64, b: f64, config: &SimConfig) -> Result<()> {
    if !(b > 0.0) {
        return domain(format!("threshold must be positive, got {b}"));
    }
    if b >= x0 {
        return domain(format!("threshold b = {b} must lie below the start x0 = {x0} (T_b would be 0)"));
    }
    if x0 > config.x_cap {
        return domain(format!("start {x0} exceeds x_cap = {}", config.x_cap));
    }
    Ok(())
}

/// Passage times below `b` from `x0` for paths `0..n_paths`.
pub fn passage_times(spec: &ProcessSpec, x0: f64, b: f64, config: &SimConfig, n_paths: usize) -> Result<Vec<Option<f64>>> {
    check_thresholds(x0, b, config)?;
    let ens = simulate_ensemble(spec, x0, &passage_config(config, vec![b]), n_paths)?;
    Ok(ens.crossing_times(b))
}

/// Monte Carlo law of `T_b` from `x0`.
pub fn estimate_passage(spec: &ProcessSpec, x0: f64, b: f64, config: &SimConfig, n_paths: usize) -> Result<PassageEstimate> {
    let times = passage_times(spec, x0, b, config, n_paths)?;
    Ok(summarize_passage(x0, b, config.t_max, &times))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovDecomposition {
    pub x: f64,
    pub x_mid: f64,
    pub b: f64,
    /// `Ê_x(T_b)`
    pub lhs: Option<f64>,
    pub lhs_se: f64,
    /// `Ê_x(T_{x_mid}) + Ê_{x_mid}(T_b)`
    pub rhs: Option<f64>,
    pub rhs_se: f64,
    pub z_score: Option<f64>,
    /// Some leg had more than 5% censoring.
    pub inconclusive: bool,
    pub censored_fractions: [f64; 3],
}

/// Checks `E_x(T_b) = E_x(T_{x_mid}) + E_{x_mid}(T_b)` with three independent
/// ensembles. With no negative jumps the path sits exactly at `x_mid` when it
/// first passes below it, so the strong Markov property splits the passage.
///
/// When every leg is deterministic (zero standard error) the sides are
/// compared at the time resolution `dt`: `z = 0` if they agree within it.
pub fn markov_decomposition_check(
    spec: &ProcessSpec,
    x: f64,
    x_mid: f64,
    b: f64,
    config: &SimConfig,
    n_paths: usize,
) -> Result<MarkovDecomposition> {
    if !(b < x_mid && x_mid < x) {
        return domain(format!("need b < x_mid < x, got b = {b}, x_mid = {x_mid}, x = {x}"));
    }
    let whole = estimate_passage(spec, x, b, &config.with_stream(1), n_paths)?;
    let upper = estimate_passage(spec, x, x_mid, &config.with_stream(2), n_paths)?;
    let lower = estimate_passage(spec, x_mid, b, &config.with_stream(3), n_paths)?;
    let se = |e: &PassageEstimate| e.se.unwrap_or(0.0);
    let lhs = whole.mean;
    let rhs = upper.mean.zip(lower.mean).map(|(a, c)| a + c);
    let rhs_se = joint_se(se(&upper), se(&lower));
    let lhs_se = se(&whole);
    let z_score = lhs.zip(rhs).map(|(l, r)| {
        let d = l - r;
        let s = joint_se(lhs_se, rhs_se);
        if s > 0.0 {
            d / s
        } else if d.abs() <= config.dt {
            0.0
        } else {
            d.signum() * f64::INFINITY
        }
    });
    let censored_fractions = [whole.censored_fraction, upper.censored_fraction, lower.censored_fraction];
    Ok(MarkovDecomposition {
        x,
        x_mid,
        b,
        lhs,
        lhs_se,
        rhs,
        rhs_se,
        z_score,
        inconclusive: censored_fractions.iter().any(|c| *c > 0.05),
        censored_fractions,
    })
}

/// `E_{x0}(e^{θ T_b})`. Censored paths enter as `e^{θ t_max}`, making the
/// estimate a lower bound, and set the divergence flag.
pub fn estimate_exp_moment(
    spec: &ProcessSpec,
    x0: f64,
    b: f64,
    theta: f64,
    config: &SimConfig,
    n_paths: usize,
) -> Result<PassageEstimate> {
    if !(theta > 0.0 && theta.is_finite()) {
        return domain(format!("theta must be positive, got {theta}"));
    }
    let times = passage_times(spec, x0, b, config, n_paths)?;
    let mut est = summarize_passage(x0, b, config.t_max, &times);
    let values: Vec<f64> = times.iter().map(|t| (theta * t.unwrap_or(config.t_max)).exp()).collect();
    let stats = MeanSe::of(values.iter().copied()).expect("n_paths >= 1");
    est.exp_moment = Some(ExpMoment {
        theta,
        estimate: stats.mean,
        se: stats.se,
        divergent: est.n_crossed < est.n_paths,
    });
    Ok(est)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub n: u32,
    /// `P̂(T_b > n · t_unit)`
    pub p: f64,
    /// `p^{1/n}`
    pub alpha_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub t_unit: f64,
    pub tail: Vec<TailPoint>,
    /// Least-squares slope of `ln p` against `n` over the positive points.
    pub slope: Option<f64>,
    /// `ln p₁` and its 95% slack `1.96 · sqrt((1 − p₁)/(N p₁))`.
    pub log_alpha1: Option<f64>,
    pub slack: Option<f64>,
    /// `slope ≤ ln p₁ + slack`, i.e. the tail decays at least geometrically
    /// at the one-period rate.
    pub consistent: Option<bool>,
    /// Every path crossed before `t_unit`.
    pub degenerate: bool,
}

/// Geometric-tail diagnostic: the Markov property at multiples of `t_unit`
/// gives `P(T_b > n t) ≤ P(T_b > t)^n` when the start is the worst case.
pub fn tail_geometric_fit(
    spec: &ProcessSpec,
    x0: f64,
    b: f64,
    t_unit: f64,
    n_max: u32,
    config: &SimConfig,
    n_paths: usize,
) -> Result<TailFit> {
    if !(t_unit > 0.0) {
        return domain(format!("t_unit must be positive, got {t_unit}"));
    }
    if n_max < 3 {
        return domain(format!("n_max must be at least 3, got {n_max}"));
    }
    if config.t_max < n_max as f64 * t_unit {
        return domain(format!(
            "horizon t_max = {} does not reach n_max · t_unit = {}",
            config.t_max,
            n_max as f64 * t_unit
        ));
    }
    let times = passage_times(spec, x0, b, config, n_paths)?;
    Ok(fit_tail(&times, t_unit, n_max))
}

pub(crate) fn fit_tail(times: &[Option<f64>], t_unit: f64, n_max: u32) -> TailFit {
    let total = times.len() as f64;
    let tail: Vec<TailPoint> = (1..=n_max)
        .map(|n| {
            let level = n as f64 * t_unit;
            let survivors = times.iter().filter(|t| t.is_none_or(|t| t > level)).count();
            let p = survivors as f64 / total;
            TailPoint { n, p, alpha_hat: p.powf(1.0 / n as f64) }
        })
        .collect();
    let points: Vec<(f64, f64)> = tail.iter().filter(|p| p.p > 0.0).map(|p| (p.n as f64, p.p.ln())).collect();
    let slope = ols_slope(&points);
    let p1 = tail[0].p;
    let degenerate = p1 == 0.0;
    let (log_alpha1, slack) = if degenerate {
        (None, None)
    } else {
        (Some(p1.ln()), Some(Z95 * ((1.0 - p1) / (total * p1)).sqrt()))
    };
    let consistent = match (slope, log_alpha1, slack) {
        (Some(s), Some(l), Some(k)) => Some(s <= l + k),
        _ => None,
    };
    TailFit { t_unit, tail, slope, log_alpha1, slack, consistent, degenerate }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::model::LevyMeasure;
    use crate::simulate::simulate_ensemble;
    use approx::assert_relative_eq;

    /// Passage time of `x(t) = x0 / (1 + x0 t / 2)` below `b`.
    fn logistic_passage(x0: f64, b: f64) -> f64 {
        2.0 * (1.0 / b - 1.0 / x0)
    }

    fn ode_config() -> SimConfig {
        SimConfig { dt: 1e-4, t_max: 3.0, adaptive: true, ..SimConfig::default() }
    }

    #[test]
    fn deterministic_passage() {
        let spec = ProcessSpec::logistic_drift_only(1.0);
        let est = estimate_passage(&spec, 100.0, 2.0, &ode_config(), 4).unwrap();
        assert_relative_eq!(logistic_passage(100.0, 2.0), 0.98, max_relative = 1e-12);
        assert!((est.mean.unwrap() - 0.98).abs() < 1e-4);
        assert_eq!(est.censored_fraction, 0.0);
        assert_eq!(est.se, Some(0.0));
        assert_eq!(est.cdf_at(0.97), 0.0);
        assert_eq!(est.cdf_at(1.0), 1.0);
    }

    #[test]
    fn passage_from_far_away() {
        let spec = ProcessSpec::logistic_drift_only(1.0);
        let est = estimate_passage(&spec, 1e5, 2.0, &ode_config(), 1).unwrap();
        assert!((est.mean.unwrap() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn constant_path_is_censored() {
        let cfg = SimConfig { dt: 0.01, t_max: 1.0, ..SimConfig::default() };
        let est = estimate_passage(&ProcessSpec::null(), 10.0, 2.0, &cfg, 5).unwrap();
        assert_eq!(est.censored_fraction, 1.0);
        assert_eq!(est.mean, None);
        assert_eq!(est.cdf, vec![CdfPoint { t: 1.0, p: 0.0 }]);
    }

    #[test]
    fn threshold_above_start_rejected() {
        let spec = ProcessSpec::logistic_drift_only(1.0);
        assert!(matches!(estimate_passage(&spec, 2.0, 2.0, &ode_config(), 1), Err(Error::Domain(_))));
        assert!(matches!(estimate_passage(&spec, 2.0, 3.0, &ode_config(), 1), Err(Error::Domain(_))));
    }

    #[test]
    fn cdf_is_a_distribution_function() {
        let spec = ProcessSpec::logistic_csbp(1.0, LevyMeasure::Stable { alpha: 1.5, c_alpha: 1.0 });
        let cfg = SimConfig { dt: 1e-2, adaptive: true, t_max: 0.5, seed: 8, ..SimConfig::default() };
        let est = estimate_passage(&spec, 50.0, 4.0, &cfg, 300).unwrap();
        assert!(est.cdf.windows(2).all(|w| w[0].t < w[1].t && w[0].p <= w[1].p));
        assert!(est.cdf.iter().all(|c| (0.0..=1.0).contains(&c.p)));
        assert_relative_eq!(est.cdf_at(cfg.t_max), 1.0 - est.censored_fraction, max_relative = 1e-12);
    }

    #[test]
    fn cdf_matches_ensemble_crossings() {
        let spec = ProcessSpec::logistic_csbp(1.0, LevyMeasure::Stable { alpha: 1.5, c_alpha: 1.0 });
        let cfg = SimConfig { dt: 1e-2, adaptive: true, t_max: 1.0, seed: 2, ..SimConfig::default() };
        let est = estimate_passage(&spec, 30.0, 3.0, &cfg, 200).unwrap();
        let ens = simulate_ensemble(&spec, 30.0, &passage_config(&cfg, vec![3.0]), 200).unwrap();
        for t in [0.1, 0.3, 0.5, 0.9] {
            let direct = ens.crossing_times(3.0).iter().filter(|c| c.is_some_and(|c| c <= t)).count() as f64 / 200.0;
            assert_eq!(est.cdf_at(t), direct);
        }
    }

    #[test]
    fn markov_decomposition_deterministic() {
        let spec = ProcessSpec::logistic_drift_only(1.0);
        let m = markov_decomposition_check(&spec, 100.0, 10.0, 2.0, &ode_config(), 2).unwrap();
        // 2(1/10 - 1/100) + 2(1/2 - 1/10) = 0.18 + 0.8
        assert!((m.lhs.unwrap() - 0.98).abs() < 1e-4);
        assert!((m.rhs.unwrap() - 0.98).abs() < 1e-4);
        assert_eq!(m.z_score, Some(0.0));
        assert!(!m.inconclusive);
    }

    #[test]
    fn markov_decomposition_degenerate_thresholds() {
        let spec = ProcessSpec::logistic_drift_only(1.0);
        let m = markov_decomposition_check(&spec, 2.0 + 2e-9, 2.0 + 1e-9, 2.0, &ode_config(), 1).unwrap();
        assert!(m.lhs.unwrap() < 1e-6 && m.rhs.unwrap() < 1e-6);
    }

    #[test]
    fn markov_decomposition_order_checked() {
        let spec = ProcessSpec::logistic_drift_only(1.0);
        assert!(markov_decomposition_check(&spec, 10.0, 20.0, 2.0, &ode_config(), 1).is_err());
    }

    #[test]
    fn exp_moment_deterministic() {
        let spec = ProcessSpec::logistic_drift_only(1.0);
        let est = estimate_exp_moment(&spec, 1e5, 2.0, 1.0, &ode_config(), 1).unwrap();
        let m = est.exp_moment.unwrap();
        assert!((m.estimate - 1f64.exp()).abs() < 1e-2);
        assert!(!m.divergent);
        let small = estimate_exp_moment(&spec, 1e5, 2.0, 1e-9, &ode_config(), 1).unwrap();
        assert!((small.exp_moment.unwrap().estimate - 1.0).abs() < 1e-8);
        assert!(estimate_exp_moment(&spec, 1e5, 2.0, 0.0, &ode_config(), 1).is_err());
    }

    #[test]
    fn exp_moment_flags_censoring() {
        let cfg = SimConfig { dt: 0.1, t_max: 2.0, ..SimConfig::default() };
        let est = estimate_exp_moment(&ProcessSpec::null(), 5.0, 1.0, 1.0, &cfg, 3).unwrap();
        let m = est.exp_moment.unwrap();
        assert!(m.divergent);
        assert_relative_eq!(m.estimate, 2f64.exp(), max_relative = 1e-12);
    }

    #[test]
    fn tail_fit_point_mass_is_degenerate() {
        let spec = ProcessSpec::logistic_drift_only(1.0);
        let cfg = SimConfig { t_max: 5.0, ..ode_config() };
        let fit = tail_geometric_fit(&spec, 100.0, 2.0, 1.0, 3, &cfg, 2).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.tail.len(), 3);
        assert!(fit.tail.iter().all(|p| p.p == 0.0));
    }

    #[test]
    fn tail_fit_geometric_input() {
        // 1000 samples with P(T > n) = 2^{-n} exactly at the integers
        let mut times = Vec::new();
        for k in 0..1024u32 {
            // k-th sample has T in (n-1, n] where P(T > n) = 2^{-n}
            let n = (1024.0 / (1024 - k) as f64).log2().floor() + 1.0;
            times.push(Some(n - 0.5));
        }
        let fit = fit_tail(&times, 1.0, 5);
        for p in &fit.tail {
            assert_relative_eq!(p.p, 0.5f64.powi(p.n as i32), max_relative = 1e-12);
            assert_relative_eq!(p.alpha_hat, 0.5, max_relative = 1e-12);
        }
        assert_relative_eq!(fit.slope.unwrap(), -(2f64.ln()), max_relative = 1e-12);
        assert_eq!(fit.consistent, Some(true));
    }

    #[test]
    fn tail_fit_requires_horizon() {
        let spec = ProcessSpec::logistic_drift_only(1.0);
        let cfg = SimConfig { t_max: 2.0, ..ode_config() };
        assert!(tail_geometric_fit(&spec, 100.0, 2.0, 1.0, 3, &cfg, 1).is_err());
        assert!(tail_geometric_fit(&spec, 100.0, 2.0, 1.0, 2, &cfg, 1).is_err());
    }
}
