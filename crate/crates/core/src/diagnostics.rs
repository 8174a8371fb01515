//! Empirical tests of the entrance limits.
//!
//! A start at infinity is never simulated. Each diagnostic runs a coupled
//! flow over a geometric grid of large starts and checks whether the
//! estimate stabilizes along the grid. Sharing the noise across starts makes
//! differences between neighbouring starts far less noisy than the
//! estimates themselves.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::model::ProcessSpec;
use crate::parallel::par_collect;
use crate::simulate::{run_lockstep, Path, Scheme, SimConfig};
use crate::stats::{joint_se, ks_critical_value, ks_two_sample, MeanSe};

/// Cells with more censoring than this are left out of plateau detection.
pub const PLATEAU_CENSORING_LIMIT: f64 = 0.2;
/// Unbounded moments with more censoring than this are inconclusive.
pub const MOMENT_CENSORING_LIMIT: f64 = 0.05;
/// Plateau tolerance relative to the limit.
pub const PLATEAU_REL_TOL: f64 = 0.02;
/// Plateau tolerance in joint standard errors.
pub const PLATEAU_SE_FACTOR: f64 = 3.0;
/// Level of the two-sample KS reference threshold.
pub const KS_ALPHA: f64 = 0.05;
/// Slack applied to the KS threshold for the final grid cell.
pub const KS_SLACK: f64 = 1.5;

/// Bounded continuous functions on `[0, ∞]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    /// `e^{-x}`
    ExpNeg,
    /// `e^{-λx}`
    ExpNegScaled { lambda: f64 },
    /// `1 / (1 + x)`
    BoundedRational,
}

impl TestFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            TestFunction::ExpNeg => (-x).exp(),
            TestFunction::ExpNegScaled { lambda } => (-lambda * x).exp(),
            TestFunction::BoundedRational => 1.0 / (1.0 + x),
        }
    }

    /// Value at `∞`, used for paths stopped at the state cap.
    pub fn at_infinity(&self) -> f64 {
        0.0
    }

    fn check(&self) -> Result<()> {
        match self {
            TestFunction::ExpNegScaled { lambda } if !(*lambda > 0.0 && lambda.is_finite()) => {
                domain(format!("lambda must be positive, got {lambda}"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    /// Estimate at the largest usable start.
    pub limit: Option<f64>,
    pub limit_se: Option<f64>,
    pub detected: bool,
}

/// Plateau rule: among the last three usable entries (`Some((value, se))`),
/// every pairwise difference is below
/// `max(3 · joint SE, 2% · |limit|)`, the limit being the last entry.
pub fn detect_plateau(entries: &[Option<(f64, f64)>]) -> Plateau {
    let usable: Vec<(f64, f64)> = entries.iter().flatten().copied().collect();
    let Some(&(limit, limit_se)) = usable.last() else {
        return Plateau { limit: None, limit_se: None, detected: false };
    };
    if usable.len() < 3 {
        return Plateau { limit: Some(limit), limit_se: Some(limit_se), detected: false };
    }
    let tail = &usable[usable.len() - 3..];
    let mut detected = true;
    for i in 0..3 {
        for j in i + 1..3 {
            let tol = (PLATEAU_SE_FACTOR * joint_se(tail[i].1, tail[j].1)).max(PLATEAU_REL_TOL * limit.abs());
            if !((tail[i].0 - tail[j].0).abs() < tol) {
                detected = false;
            }
        }
    }
    Plateau { limit: Some(limit), limit_se: Some(limit_se), detected }
}

fn check_grid(name: &str, grid: &[f64], config: &SimConfig) -> Result<()> {
    if grid.is_empty() {
        return domain(format!("{name} is empty"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return domain(format!("{name} must be strictly increasing"));
    }
    if let Some(x) = grid.iter().find(|x| !(**x > 0.0 && **x < config.x_cap)) {
        return domain(format!("{name} entry {x} outside (0, x_cap)"));
    }
    Ok(())
}

/// Realizations `0..n` of the flow started from every point of `x_grid`.
/// Only the estimates' noise is shared; each member has the law of a single
/// path, whether or not the flow is ordered.
fn coupled_paths(spec: &ProcessSpec, x_grid: &[f64], config: &SimConfig, n: usize) -> Result<Vec<Vec<Path>>> {
    if n == 0 {
        return domain("need at least one path");
    }
    config.check()?;
    let scheme = Scheme::for_config(spec, config)?;
    par_collect(n, config.workers, |r| run_lockstep(&scheme, x_grid, config, r).paths)
}

fn quiet(config: &SimConfig) -> SimConfig {
    SimConfig { record_stride: u64::MAX, ..config.clone() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnPlateau {
    pub b: f64,
    #[serde(flatten)]
    pub plateau: Plateau,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntranceProfile {
    pub b_grid: Vec<f64>,
    pub x_grid: Vec<f64>,
    pub t: f64,
    pub n_paths: usize,
    /// `P̂_x(T_b ≤ t)`, rows by `x`, columns by `b`.
    pub p_matrix: Vec<Vec<f64>>,
    /// `Ê_x(T_b)` over crossed paths.
    pub mean_matrix: Vec<Vec<Option<f64>>>,
    pub se_matrix: Vec<Vec<Option<f64>>>,
    /// `Ê_x(T_b ∧ t_max)` over all paths, a lower bound for `E_x(T_b)`
    /// that stays defined under censoring.
    pub restricted_mean_matrix: Vec<Vec<f64>>,
    /// Fraction of paths not below `b` by `t_max`.
    pub censored_matrix: Vec<Vec<f64>>,
    /// Censoring above the plateau limit; excluded from plateau detection.
    pub flagged: Vec<Vec<bool>>,
    pub plateau: Vec<ColumnPlateau>,
}

impl EntranceProfile {
    /// Plateau limits strictly decrease in `b`.
    pub fn limits_decreasing(&self) -> bool {
        let limits: Vec<Option<f64>> = self.plateau.iter().map(|c| c.plateau.limit).collect();
        limits.iter().all(Option::is_some) && limits.windows(2).all(|w| w[1].unwrap() < w[0].unwrap())
    }

    pub fn all_plateaus(&self) -> bool {
        self.plateau.iter().all(|c| c.plateau.detected)
    }
}

/// Passage probabilities `P̂_x(T_b ≤ t)` and means `Ê_x(T_b)` over a grid of
/// starts and thresholds, with a plateau verdict per threshold. Passage times
/// are tracked up to `config.t_max`, which must be at least `t`.
pub fn entrance_profile(
    spec: &ProcessSpec,
    b_grid: &[f64],
    x_grid: &[f64],
    t: f64,
    config: &SimConfig,
    n_paths: usize,
) -> Result<EntranceProfile> {
    check_grid("x_grid", x_grid, config)?;
    check_grid("b_grid", b_grid, config)?;
    if x_grid[0] <= *b_grid.last().unwrap() {
        return domain("every start must lie above every threshold");
    }
    if !(t > 0.0 && t <= config.t_max) {
        return domain(format!("t = {t} must lie in (0, t_max = {}]", config.t_max));
    }
    let cfg = SimConfig {
        thresholds: b_grid.to_vec(),
        stop_on_crossing: true,
        observation_times: Vec::new(),
        ..quiet(config)
    };
    let runs = coupled_paths(spec, x_grid, &cfg, n_paths)?;
    let n = n_paths as f64;
    let (nx, nb) = (x_grid.len(), b_grid.len());
    let mut p_matrix = vec![vec![0.0; nb]; nx];
    let mut mean_matrix = vec![vec![None; nb]; nx];
    let mut se_matrix = vec![vec![None; nb]; nx];
    let mut restricted_mean_matrix = vec![vec![0.0; nb]; nx];
    let mut censored_matrix = vec![vec![0.0; nb]; nx];
    let mut flagged = vec![vec![false; nb]; nx];
    for i in 0..nx {
        for k in 0..nb {
            let times: Vec<Option<f64>> = runs.iter().map(|r| r[i].crossings[k].time).collect();
            let crossed: Vec<f64> = times.iter().flatten().copied().collect();
            p_matrix[i][k] = crossed.iter().filter(|s| **s <= t).count() as f64 / n;
            let stats = MeanSe::of(crossed.iter().copied());
            mean_matrix[i][k] = stats.map(|s| s.mean);
            se_matrix[i][k] = stats.map(|s| s.se_or_zero());
            restricted_mean_matrix[i][k] = times.iter().map(|s| s.unwrap_or(config.t_max)).sum::<f64>() / n;
            censored_matrix[i][k] = 1.0 - crossed.len() as f64 / n;
            flagged[i][k] = censored_matrix[i][k] > PLATEAU_CENSORING_LIMIT;
        }
    }
    let plateau = (0..nb)
        .map(|k| {
            let column: Vec<Option<(f64, f64)>> = (0..nx)
                .map(|i| if flagged[i][k] { None } else { mean_matrix[i][k].zip(se_matrix[i][k]) })
                .collect();
            ColumnPlateau { b: b_grid[k], plateau: detect_plateau(&column) }
        })
        .collect();
    Ok(EntranceProfile {
        b_grid: b_grid.to_vec(),
        x_grid: x_grid.to_vec(),
        t,
        n_paths,
        p_matrix,
        mean_matrix,
        se_matrix,
        restricted_mean_matrix,
        censored_matrix,
        flagged,
        plateau,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CauchyPoint {
    pub x: f64,
    /// `P̂_t f(x)`
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CauchyDiff {
    pub x_lo: f64,
    pub x_hi: f64,
    /// `|P̂_t f(x_hi) − P̂_t f(x_lo)|`
    pub diff: f64,
    /// Standard error as if the two estimates were independent.
    pub joint_se: f64,
    /// Standard error of the per-realization differences.
    pub paired_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemigroupCauchy {
    pub t: f64,
    pub f: TestFunction,
    pub points: Vec<CauchyPoint>,
    /// Consecutive grid pairs.
    pub diffs: Vec<CauchyDiff>,
    /// The last (up to) three differences strictly decrease, zeros allowed to repeat.
    pub tail_decreasing: bool,
    /// The last difference is below 3 joint SE.
    pub last_within_noise: bool,
}

/// `P̂_t f(x)` along `x_grid` and the consecutive differences. At `t = 0`
/// the values are `f(x)` exactly and nothing is simulated.
pub fn semigroup_cauchy(
    spec: &ProcessSpec,
    f: TestFunction,
    t: f64,
    x_grid: &[f64],
    config: &SimConfig,
    n_paths: usize,
) -> Result<SemigroupCauchy> {
    f.check()?;
    check_grid("x_grid", x_grid, config)?;
    if !(t >= 0.0 && t.is_finite()) {
        return domain(format!("t must be nonnegative, got {t}"));
    }
    let samples: Vec<Vec<f64>> = if t == 0.0 {
        vec![x_grid.iter().map(|x| f.eval(*x)).collect()]
    } else {
        let cfg = SimConfig {
            t_max: t,
            observation_times: vec![t],
            thresholds: Vec::new(),
            stop_on_crossing: false,
            ..quiet(config)
        };
        coupled_paths(spec, x_grid, &cfg, n_paths)?
            .iter()
            .map(|r| r.iter().map(|p| p.observation(t).map_or(f.at_infinity(), |x| f.eval(x))).collect())
            .collect()
    };
    let points: Vec<CauchyPoint> = x_grid
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let s = MeanSe::of(samples.iter().map(|r| r[i])).expect("at least one realization");
            CauchyPoint { x, value: s.mean, se: s.se_or_zero() }
        })
        .collect();
    let diffs: Vec<CauchyDiff> = (1..x_grid.len())
        .map(|i| {
            let paired = MeanSe::of(samples.iter().map(|r| r[i] - r[i - 1])).expect("at least one realization");
            CauchyDiff {
                x_lo: x_grid[i - 1],
                x_hi: x_grid[i],
                diff: (points[i].value - points[i - 1].value).abs(),
                joint_se: joint_se(points[i].se, points[i - 1].se),
                paired_se: paired.se_or_zero(),
            }
        })
        .collect();
    let tail = &diffs[diffs.len().saturating_sub(3)..];
    let tail_decreasing = tail.len() >= 2 && tail.windows(2).all(|w| w[1].diff < w[0].diff || w[1].diff == 0.0);
    let last_within_noise = diffs
        .last()
        .is_some_and(|d| d.diff < PLATEAU_SE_FACTOR * d.joint_se || d.diff == 0.0);
    Ok(SemigroupCauchy { t, f, points, diffs, tail_decreasing, last_within_noise })
}

/// `h(T_b)` for the moment diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MomentFunction {
    /// `s ↦ s^exponent`, exponent in `{1, 2, 3}`.
    Power { exponent: u32 },
    Bounded { function: TestFunction },
}

impl MomentFunction {
    fn eval(&self, s: f64) -> f64 {
        match self {
            MomentFunction::Power { exponent } => s.powi(*exponent as i32),
            MomentFunction::Bounded { function } => function.eval(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub x: f64,
    /// `Ê_x h(T_b)` over crossed paths.
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub censored_fraction: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentConvergence {
    pub h: MomentFunction,
    pub b: f64,
    pub rows: Vec<MomentRow>,
    pub plateau: Plateau,
    /// An unbounded `h` met censoring above the moment limit.
    pub inconclusive: bool,
}

/// `Ê_x h(T_b)` along `x_grid` with the plateau rule of `entrance_profile`.
pub fn moment_convergence(
    spec: &ProcessSpec,
    h: MomentFunction,
    b: f64,
    x_grid: &[f64],
    config: &SimConfig,
    n_paths: usize,
) -> Result<MomentConvergence> {
    match h {
        MomentFunction::Power { exponent } if !(1..=3).contains(&exponent) => {
            return domain(format!("power exponent must be 1, 2 or 3, got {exponent}"));
        }
        MomentFunction::Bounded { function } => function.check()?,
        _ => {}
    }
    check_grid("x_grid", x_grid, config)?;
    if !(b > 0.0 && b < x_grid[0]) {
        return domain(format!("threshold {b} must lie in (0, min x_grid)"));
    }
    let cfg = SimConfig {
        thresholds: vec![b],
        stop_on_crossing: true,
        observation_times: Vec::new(),
        ..quiet(config)
    };
    let runs = coupled_paths(spec, x_grid, &cfg, n_paths)?;
    let unbounded = matches!(h, MomentFunction::Power { .. });
    let rows: Vec<MomentRow> = x_grid
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let crossed: Vec<f64> = runs.iter().filter_map(|r| r[i].crossings[0].time).collect();
            let stats = MeanSe::of(crossed.iter().map(|s| h.eval(*s)));
            let censored_fraction = 1.0 - crossed.len() as f64 / n_paths as f64;
            MomentRow {
                x,
                estimate: stats.map(|s| s.mean),
                se: stats.map(|s| s.se_or_zero()),
                censored_fraction,
                flagged: censored_fraction > PLATEAU_CENSORING_LIMIT,
            }
        })
        .collect();
    let column: Vec<Option<(f64, f64)>> =
        rows.iter().map(|r| if r.flagged { None } else { r.estimate.zip(r.se) }).collect();
    let inconclusive = unbounded && rows.iter().any(|r| r.censored_fraction > MOMENT_CENSORING_LIMIT);
    Ok(MomentConvergence { h, b, rows, plateau: detect_plateau(&column), inconclusive })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FddCell {
    pub x: f64,
    pub time: f64,
    /// Two-sample KS statistic between `e^{-X_t}` from `x` and from `x_ref`.
    pub ks: f64,
    /// `|Ê e^{-X_t^{(x)}} − Ê e^{-X_t^{(x_ref)}}|`, the compactified distance of the means.
    pub rho_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FddConvergence {
    pub times: Vec<f64>,
    pub x_grid: Vec<f64>,
    pub x_ref: f64,
    pub n_paths: usize,
    /// Rows by `x`, columns by time.
    pub cells: Vec<Vec<FddCell>>,
    /// 95% two-sample KS threshold at this sample size.
    pub critical_value: f64,
    /// Per time: the KS statistic falls along the grid by more than the
    /// threshold overall and never rises by more than it between neighbours.
    pub decreasing_trend: Vec<bool>,
    /// Per time: the final cell is below `1.5 ×` the threshold.
    pub final_within: Vec<bool>,
}

/// Marginal laws of `X_t^{(x)}` against those of a far start `x_ref`, after
/// mapping states through `e^{-x}` (a path stopped at the cap maps to 0).
/// The grid members share one noise stream; the reference uses another.
pub fn fdd_convergence(
    spec: &ProcessSpec,
    times: &[f64],
    x_grid: &[f64],
    x_ref: f64,
    config: &SimConfig,
    n_paths: usize,
) -> Result<FddConvergence> {
    check_grid("x_grid", x_grid, config)?;
    check_grid("times", times, &SimConfig { x_cap: f64::INFINITY, ..config.clone() })?;
    if !(x_ref > *x_grid.last().unwrap() && x_ref < config.x_cap) {
        return domain(format!("x_ref = {x_ref} must exceed the grid and stay below x_cap"));
    }
    if *times.last().unwrap() > config.t_max {
        return domain("observation times must not exceed t_max");
    }
    let cfg = SimConfig {
        observation_times: times.to_vec(),
        thresholds: Vec::new(),
        stop_on_crossing: false,
        t_max: *times.last().unwrap(),
        ..quiet(config)
    };
    let rho = |p: &Path, t: f64| p.observation(t).map_or(0.0, |x| (-x).exp());
    let grid_runs = coupled_paths(spec, x_grid, &cfg.with_stream(1), n_paths)?;
    let ref_runs = coupled_paths(spec, &[x_ref], &cfg.with_stream(2), n_paths)?;
    let reference: Vec<Vec<f64>> =
        times.iter().map(|&t| ref_runs.iter().map(|r| rho(&r[0], t)).collect()).collect();
    let cells: Vec<Vec<FddCell>> = x_grid
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            times
                .iter()
                .enumerate()
                .map(|(k, &time)| {
                    let sample: Vec<f64> = grid_runs.iter().map(|r| rho(&r[i], time)).collect();
                    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
                    FddCell {
                        x,
                        time,
                        ks: ks_two_sample(&sample, &reference[k]),
                        rho_distance: (mean(&sample) - mean(&reference[k])).abs(),
                    }
                })
                .collect()
        })
        .collect();
    let critical_value = ks_critical_value(KS_ALPHA, n_paths, n_paths);
    let column = |k: usize| cells.iter().map(|row| row[k].ks).collect::<Vec<f64>>();
    let decreasing_trend = (0..times.len())
        .map(|k| {
            let ks = column(k);
            ks.len() >= 2
                && ks[0] - ks[ks.len() - 1] > critical_value
                && ks.windows(2).all(|w| w[1] - w[0] <= critical_value)
        })
        .collect();
    let final_within = (0..times.len())
        .map(|k| *column(k).last().unwrap() < KS_SLACK * critical_value)
        .collect();
    Ok(FddConvergence {
        times: times.to_vec(),
        x_grid: x_grid.to_vec(),
        x_ref,
        n_paths,
        cells,
        critical_value,
        decreasing_trend,
        final_within,
    })
}
