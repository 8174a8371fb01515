//! Euler scheme with exact thinning of the large jumps.
//!
//! One step from state `x` over `h` is
//!
//! ```text
//! x' = max(0, x + [γ₀(x) − γ₂(x) m1(ε)] h + sqrt(γ₁(x) h) ξ
//!             + Σ_{marks with u ≤ γ₂(x)} z
//!             + 1{gaussian} sqrt(γ₂(x) v(ε) h) ξ')
//! ```
//!
//! Jump marks `(s, z, u)` with `z ≥ ε` are drawn from the Poisson measure
//! `ds ν(dz) du` restricted to the step, in increasing order of `u`, up to
//! the dominating level `u_max`. Because the marks below any level do not
//! depend on where generation stopped, paths that share a step's noise see the
//! same marks and differ only in how many they accept.
//!
//! Several starting points can be advanced in lockstep on one noise
//! realization; a single path is the one-member case.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{JumpSampler, ProcessSpec, RateFunction, DEFAULT_X_CAP};
use crate::parallel::par_collect;
use crate::rng::{CounterRng, Substream};
use crate::stats::MeanSe;

/// Relative tolerance used to snap the clock onto observation times.
const TIME_SNAP: f64 = 1e-12;

/// Ordering slack for the coupled flow.
pub const ORDER_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmallJumpMode {
    /// Compensated jumps below `ε` are discarded.
    Drop,
    /// Compensated jumps below `ε` are replaced by a Gaussian of matching variance.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Base step.
    pub dt: f64,
    /// Small-jump cutoff.
    pub eps: f64,
    /// Horizon.
    pub t_max: f64,
    /// A path reaching this level is stopped and flagged.
    pub x_cap: f64,
    pub small_jump_mode: SmallJumpMode,
    /// Shrink the step where the drift is fast relative to the state.
    pub adaptive: bool,
    /// Smallest adaptive step as a fraction of `dt`.
    pub min_step_fraction: f64,
    pub seed: u64,
    /// Keep every `record_stride`-th step in `Path::times`/`values`.
    pub record_stride: u64,
    /// Levels whose first downward passage is recorded.
    pub thresholds: Vec<f64>,
    /// Times at which the state is recorded exactly (the step is clipped to land on them).
    pub observation_times: Vec<f64>,
    /// Stop once every threshold has been passed.
    pub stop_on_crossing: bool,
    /// Worker threads; `None` uses the global pool. Never affects results.
    #[serde(skip)]
    pub workers: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            eps: 0.1,
            t_max: 1.0,
            x_cap: DEFAULT_X_CAP,
            small_jump_mode: SmallJumpMode::Gaussian,
            adaptive: false,
            min_step_fraction: 1e-6,
            seed: 0,
            record_stride: 1,
            thresholds: Vec::new(),
            observation_times: Vec::new(),
            stop_on_crossing: false,
            workers: None,
        }
    }
}

impl SimConfig {
    pub fn check(&self) -> Result<()> {
        let pos = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                domain(format!("{name} must be positive and finite, got {v}"))
            }
        };
        pos(self.dt, "dt")?;
        pos(self.eps, "eps")?;
        pos(self.x_cap, "x_cap")?;
        if !(self.t_max >= 0.0 && self.t_max.is_finite()) {
            return domain(format!("t_max must be nonnegative and finite, got {}", self.t_max));
        }
        if !(self.min_step_fraction > 0.0 && self.min_step_fraction <= 1.0) {
            return domain("min_step_fraction must lie in (0, 1]");
        }
        if self.record_stride == 0 {
            return domain("record_stride must be positive");
        }
        for b in &self.thresholds {
            pos(*b, "threshold")?;
        }
        if self.observation_times.windows(2).any(|w| w[1] <= w[0]) {
            return domain("observation times must be strictly increasing");
        }
        if let Some(t) = self.observation_times.iter().find(|t| !(**t >= 0.0 && **t <= self.t_max)) {
            return domain(format!("observation time {t} outside [0, t_max]"));
        }
        if let Some(0) = self.workers {
            return domain("worker count must be positive");
        }
        Ok(())
    }

    /// Same configuration with a seed derived from `tag`, for estimators that
    /// need noise independent of another run.
    pub fn with_stream(&self, tag: u64) -> SimConfig {
        SimConfig { seed: crate::rng::derive_seed(self.seed, tag), ..self.clone() }
    }

    fn check_start(&self, x0: f64) -> Result<()> {
        if !(x0 >= 0.0 && x0 < self.x_cap) {
            return domain(format!("initial value {x0} must lie in [0, x_cap = {})", self.x_cap));
        }
        Ok(())
    }
}

/// One jump mark `(s, z, u)`: it lands at offset `s` with size `z` when `u ≤ γ₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpMark {
    pub s: f64,
    pub z: f64,
    pub u: f64,
}

/// The noise driving one step: the Brownian increment, the jump marks with
/// `u ≤ u_max` sorted by `u`, and the small-jump Gaussian.
#[derive(Debug, Clone, Default)]
pub struct DrivingNoise {
    pub xi: f64,
    pub xi_small: f64,
    pub marks: Vec<JumpMark>,
    /// `prefix[k]` = sum of the first `k` mark sizes.
    prefix: Vec<f64>,
}

impl DrivingNoise {
    /// Noise built from explicit values; marks are sorted by `u`.
    pub fn from_parts(xi: f64, xi_small: f64, mut marks: Vec<JumpMark>) -> Self {
        marks.sort_by(|a, b| a.u.total_cmp(&b.u));
        let mut noise = DrivingNoise { xi, xi_small, marks, prefix: Vec::new() };
        noise.rebuild_prefix();
        noise
    }

    fn rebuild_prefix(&mut self) {
        self.prefix.clear();
        self.prefix.push(0.0);
        let mut acc = 0.0;
        for m in &self.marks {
            acc += m.z;
            self.prefix.push(acc);
        }
    }

    /// Total size of the marks accepted at intensity `level`.
    #[inline]
    pub fn accepted_jumps(&self, level: f64) -> f64 {
        let k = self.marks.partition_point(|m| m.u <= level);
        self.prefix[k]
    }
}

/// Per-step result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub value: f64,
    /// The raw update was negative and was clamped to 0.
    pub clamped: bool,
}

/// A specification bound to a cutoff: the compensator, the small-jump
/// variance and the sampler for the simulated jumps.
#[derive(Debug, Clone)]
pub struct Scheme<'a> {
    pub spec: &'a ProcessSpec,
    pub eps: f64,
    pub mode: SmallJumpMode,
    /// `∫_{[ε,∞)} z ν(dz)`
    pub m1: f64,
    /// `∫_{(0,ε)} z² ν(dz)`
    pub v: f64,
    /// `ν([ε, ∞))`
    pub tail_mass: f64,
    sampler: JumpSampler,
    has_diffusion: bool,
    has_jumps: bool,
    has_small_gaussian: bool,
}

impl<'a> Scheme<'a> {
    pub fn new(spec: &'a ProcessSpec, eps: f64, mode: SmallJumpMode) -> Result<Self> {
        spec.check()?;
        let tail_mass = spec.nu.tail_mass(eps)?;
        let (m1, v) = spec.nu.partial_moments(eps)?;
        let modulated = !matches!(spec.gamma2, RateFunction::Zero);
        Ok(Scheme {
            spec,
            eps,
            mode,
            m1,
            v,
            tail_mass,
            sampler: spec.nu.jump_sampler(eps)?,
            has_diffusion: !matches!(spec.gamma1, RateFunction::Zero),
            has_jumps: modulated && tail_mass > 0.0,
            has_small_gaussian: modulated && mode == SmallJumpMode::Gaussian && v > 0.0,
        })
    }

    pub fn for_config(spec: &'a ProcessSpec, config: &SimConfig) -> Result<Self> {
        Self::new(spec, config.eps, config.small_jump_mode)
    }

    /// Euler step from `x` over `h` with the given noise.
    #[inline]
    pub fn step(&self, x: f64, h: f64, noise: &DrivingNoise) -> Result<StepOutcome> {
        let spec = self.spec;
        let g2 = spec.gamma2.eval(x);
        let mut y = x + (spec.gamma0.eval(x) - g2 * self.m1) * h;
        if self.has_diffusion {
            y += (spec.gamma1.eval(x).max(0.0) * h).sqrt() * noise.xi;
        }
        if self.has_jumps {
            y += noise.accepted_jumps(g2);
        }
        if self.has_small_gaussian {
            y += (g2.max(0.0) * self.v * h).sqrt() * noise.xi_small;
        }
        if !y.is_finite() {
            return Err(Error::Overflow { last_state: x });
        }
        Ok(if y < 0.0 {
            StepOutcome { value: 0.0, clamped: true }
        } else {
            StepOutcome { value: y, clamped: false }
        })
    }

    /// `dt · min(1, x / (|γ₀(x)| + γ₂(x) m1 + sqrt(γ₁(x)) + 1))`, floored at
    /// `dt · min_fraction`.
    #[inline]
    pub fn adaptive_dt(&self, x: f64, dt: f64, min_fraction: f64) -> f64 {
        let spec = self.spec;
        let speed = spec.gamma0.eval(x).abs()
            + spec.gamma2.eval(x) * self.m1
            + spec.gamma1.eval(x).max(0.0).sqrt()
            + 1.0;
        dt * (x / speed).clamp(min_fraction, 1.0)
    }

    /// Fills `noise` for step `step` of path `path_index`, with jump marks up
    /// to intensity level `u_max`.
    pub fn draw_noise(&self, seed: u64, path_index: u64, step: u64, h: f64, u_max: f64, noise: &mut DrivingNoise) {
        noise.xi = if self.has_diffusion {
            StandardNormal.sample(&mut CounterRng::new(seed, path_index, step, Substream::Brownian))
        } else {
            0.0
        };
        noise.xi_small = if self.has_small_gaussian {
            StandardNormal.sample(&mut CounterRng::new(seed, path_index, step, Substream::SmallJumps))
        } else {
            0.0
        };
        noise.marks.clear();
        if self.has_jumps && u_max > 0.0 && h > 0.0 {
            let mut rng = CounterRng::new(seed, path_index, step, Substream::JumpMarks);
            let rate = h * self.tail_mass;
            let mut u = 0.0;
            loop {
                let gap: f64 = Exp1.sample(&mut rng);
                u += gap / rate;
                if u > u_max {
                    break;
                }
                let s = rng.random::<f64>() * h;
                let z = self.sampler.sample(&mut rng);
                noise.marks.push(JumpMark { s, z, u });
            }
        }
        noise.rebuild_prefix();
    }
}

/// `step` as a free function over a scheme.
pub fn step(scheme: &Scheme<'_>, x: f64, dt_eff: f64, noise: &DrivingNoise) -> Result<StepOutcome> {
    scheme.step(x, dt_eff, noise)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub threshold: f64,
    /// First time the path is strictly below `threshold`, interpolated within the step.
    pub time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    /// Absent when the path stopped before `time`.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub x0: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub hit_zero_at: Option<f64>,
    pub capped_at: Option<f64>,
    pub crossings: Vec<Crossing>,
    pub observations: Vec<Observation>,
    pub steps: u64,
    pub clamped_steps: u64,
}

impl Path {
    pub fn crossing_time(&self, b: f64) -> Option<f64> {
        self.crossings.iter().find(|c| c.threshold == b).and_then(|c| c.time)
    }

    pub fn observation(&self, t: f64) -> Option<f64> {
        self.observations.iter().find(|o| o.time == t).and_then(|o| o.value)
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("paths always hold the initial sample")
    }
}

/// A pair of adjacent coupled paths found out of order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderViolation {
    pub time: f64,
    pub lower_index: usize,
    pub gap: f64,
}

/// Output of a lockstep run.
#[derive(Debug, Clone)]
pub(crate) struct Lockstep {
    pub paths: Vec<Path>,
    pub violations: Vec<OrderViolation>,
    pub violation_count: u64,
}

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Active,
    Absorbed,
    Stopped,
}

const MAX_STORED_VIOLATIONS: usize = 64;

/// Advances every start in `x0s` on the noise of `path_index`, with a common
/// clock. Adaptive steps use the smallest step any active member asks for; the
/// jump marks are drawn up to the largest `γ₂` among active members.
pub(crate) fn run_lockstep(scheme: &Scheme<'_>, x0s: &[f64], config: &SimConfig, path_index: u64) -> Lockstep {
    let spec = scheme.spec;
    let n = x0s.len();
    let absorbing = spec.zero_is_absorbing();
    let mut states = x0s.to_vec();
    let mut status = vec![Status::Active; n];
    let mut paths: Vec<Path> = x0s
        .iter()
        .map(|&x0| Path {
            x0,
            times: vec![0.0],
            values: vec![x0],
            hit_zero_at: (x0 == 0.0).then_some(0.0),
            capped_at: None,
            crossings: config
                .thresholds
                .iter()
                .map(|&b| Crossing { threshold: b, time: (x0 < b).then_some(0.0) })
                .collect(),
            observations: config
                .observation_times
                .iter()
                .map(|&time| Observation { time, value: (time == 0.0).then_some(x0) })
                .collect(),
            steps: 0,
            clamped_steps: 0,
        })
        .collect();
    for (i, s) in status.iter_mut().enumerate() {
        if absorbing && states[i] == 0.0 {
            *s = Status::Absorbed;
        }
    }
    let obs_times = &config.observation_times;
    let mut next_obs = obs_times.partition_point(|t| *t <= 0.0);
    let mut violations = Vec::new();
    let mut violation_count = 0u64;
    let mut noise = DrivingNoise::default();
    let mut t = 0.0;
    let mut step: u64 = 0;
    let mut last_recorded_step = 0u64;

    let all_crossed = |paths: &[Path]| paths.iter().all(|p| p.crossings.iter().all(|c| c.time.is_some()));

    while t < config.t_max {
        if status.iter().all(|s| *s != Status::Active) {
            break;
        }
        if config.stop_on_crossing && !config.thresholds.is_empty() && all_crossed(&paths) {
            break;
        }
        let mut h = if config.adaptive {
            states
                .iter()
                .zip(&status)
                .filter(|(_, s)| **s == Status::Active)
                .map(|(x, _)| scheme.adaptive_dt(*x, config.dt, config.min_step_fraction))
                .fold(f64::INFINITY, f64::min)
        } else {
            config.dt
        };
        let target = obs_times.get(next_obs).copied().unwrap_or(config.t_max).min(config.t_max);
        let mut t_next = t + h;
        if t_next >= target - TIME_SNAP * target.max(1.0) {
            h = target - t;
            t_next = target;
        }
        let u_max = states
            .iter()
            .zip(&status)
            .filter(|(_, s)| **s == Status::Active)
            .map(|(x, _)| spec.gamma2.eval(*x))
            .fold(0.0, f64::max);
        scheme.draw_noise(config.seed, path_index, step, h, u_max, &mut noise);

        for i in 0..n {
            if status[i] != Status::Active {
                continue;
            }
            let x = states[i];
            let path = &mut paths[i];
            path.steps += 1;
            let mut y = match scheme.step(x, h, &noise) {
                Ok(out) => {
                    path.clamped_steps += out.clamped as u64;
                    out.value
                }
                Err(_) => {
                    path.capped_at = Some(t_next);
                    status[i] = Status::Stopped;
                    continue;
                }
            };
            if y > config.x_cap {
                y = config.x_cap;
                path.capped_at = Some(t_next);
                status[i] = Status::Stopped;
            }
            for c in path.crossings.iter_mut() {
                if c.time.is_none() && y < c.threshold {
                    c.time = Some(t + h * (x - c.threshold) / (x - y));
                }
            }
            if y == 0.0 {
                if path.hit_zero_at.is_none() {
                    path.hit_zero_at = Some(t_next);
                }
                if absorbing {
                    status[i] = Status::Absorbed;
                }
            }
            states[i] = y;
        }
        for i in 1..n {
            let gap = states[i - 1] - states[i];
            if gap > ORDER_TOLERANCE && x0s[i - 1] <= x0s[i] {
                violation_count += 1;
                if violations.len() < MAX_STORED_VIOLATIONS {
                    violations.push(OrderViolation { time: t_next, lower_index: i - 1, gap });
                }
            }
        }

        t = t_next;
        step += 1;
        while next_obs < obs_times.len() && obs_times[next_obs] <= t {
            for (p, (&x, s)) in paths.iter_mut().zip(states.iter().zip(&status)) {
                if *s != Status::Stopped {
                    p.observations[next_obs].value = Some(x);
                }
            }
            next_obs += 1;
        }
        let capped_now = status.iter().zip(&paths).any(|(s, p)| *s == Status::Stopped && p.capped_at == Some(t));
        if step.is_multiple_of(config.record_stride) || capped_now {
            for (p, &x) in paths.iter_mut().zip(&states) {
                p.times.push(t);
                p.values.push(x);
            }
            last_recorded_step = step;
        }
    }
    if last_recorded_step != step {
        for (p, &x) in paths.iter_mut().zip(&states) {
            p.times.push(t);
            p.values.push(x);
        }
    }
    // an absorbed member stays at 0 through any later observation
    for (p, s) in paths.iter_mut().zip(&status) {
        if *s == Status::Absorbed {
            for o in p.observations.iter_mut().filter(|o| o.time > t) {
                o.value = Some(0.0);
            }
        }
    }
    Lockstep { paths, violations, violation_count }
}

/// Simulates one path from `x0` with the noise of `path_index`.
pub fn simulate_path(spec: &ProcessSpec, x0: f64, config: &SimConfig, path_index: u64) -> Result<Path> {
    config.check()?;
    config.check_start(x0)?;
    let scheme = Scheme::for_config(spec, config)?;
    Ok(run_lockstep(&scheme, &[x0], config, path_index).paths.pop().expect("one member"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub time: f64,
    /// Paths with a value at `time`.
    pub n: usize,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingRow {
    pub threshold: f64,
    pub n_paths: usize,
    pub n_crossed: usize,
    pub censored_fraction: f64,
    /// Mean passage time over the paths that crossed.
    pub mean: Option<f64>,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub moments: Vec<MomentRow>,
    pub crossings: Vec<CrossingRow>,
    pub capped_paths: usize,
    pub zero_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub x0: f64,
    pub seed: u64,
    pub paths: Vec<Path>,
    pub summary: EnsembleSummary,
}

impl PathEnsemble {
    pub fn crossing_times(&self, b: f64) -> Vec<Option<f64>> {
        self.paths.iter().map(|p| p.crossing_time(b)).collect()
    }

    pub fn observations_at(&self, t: f64) -> Vec<f64> {
        self.paths.iter().filter_map(|p| p.observation(t)).collect()
    }
}

pub(crate) fn crossing_row(threshold: f64, times: &[Option<f64>]) -> CrossingRow {
    let crossed: Vec<f64> = times.iter().flatten().copied().collect();
    let stats = MeanSe::of(crossed.iter().copied());
    CrossingRow {
        threshold,
        n_paths: times.len(),
        n_crossed: crossed.len(),
        censored_fraction: if times.is_empty() { 0.0 } else { 1.0 - crossed.len() as f64 / times.len() as f64 },
        mean: stats.map(|s| s.mean),
        se: stats.and_then(|s| s.se),
    }
}

pub(crate) fn summarize(paths: &[Path], config: &SimConfig) -> EnsembleSummary {
    let moments = config
        .observation_times
        .iter()
        .enumerate()
        .map(|(k, &time)| {
            let stats = MeanSe::of(paths.iter().filter_map(|p| p.observations[k].value));
            MomentRow {
                time,
                n: stats.map_or(0, |s| s.n),
                mean: stats.map(|s| s.mean),
                variance: stats.and_then(|s| s.variance()),
            }
        })
        .collect();
    let crossings = config
        .thresholds
        .iter()
        .enumerate()
        .map(|(k, &b)| crossing_row(b, &paths.iter().map(|p| p.crossings[k].time).collect::<Vec<_>>()))
        .collect();
    EnsembleSummary {
        moments,
        crossings,
        capped_paths: paths.iter().filter(|p| p.capped_at.is_some()).count(),
        zero_hits: paths.iter().filter(|p| p.hit_zero_at.is_some()).count(),
    }
}

/// `n_paths` independent paths from `x0` with path indices `0..n_paths`.
/// The result depends only on the inputs, never on the worker count.
pub fn simulate_ensemble(spec: &ProcessSpec, x0: f64, config: &SimConfig, n_paths: usize) -> Result<PathEnsemble> {
    if n_paths == 0 {
        return domain("ensemble needs at least one path");
    }
    config.check()?;
    config.check_start(x0)?;
    let scheme = Scheme::for_config(spec, config)?;
    let paths = par_collect(n_paths, config.workers, |i| {
        run_lockstep(&scheme, &[x0], config, i).paths.pop().expect("one member")
    })?;
    let summary = summarize(&paths, config);
    Ok(PathEnsemble { x0, seed: config.seed, paths, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Atom, LevyMeasure};
    use approx::assert_relative_eq;

    fn deterministic_noise() -> DrivingNoise {
        DrivingNoise::from_parts(0.0, 0.0, vec![])
    }

    #[test]
    fn step_null_dynamics() {
        let spec = ProcessSpec::null();
        let scheme = Scheme::new(&spec, 0.1, SmallJumpMode::Gaussian).unwrap();
        for h in [1e-6, 0.1, 10.0] {
            assert_eq!(scheme.step(5.0, h, &deterministic_noise()).unwrap().value, 5.0);
        }
    }

    #[test]
    fn step_logistic_euler() {
        let spec = ProcessSpec::logistic_drift_only(1.0);
        let scheme = Scheme::new(&spec, 0.1, SmallJumpMode::Drop).unwrap();
        let y = scheme.step(10.0, 1e-3, &deterministic_noise()).unwrap().value;
        assert_relative_eq!(y, 9.95, max_relative = 1e-14);
    }

    #[test]
    fn step_thinning_and_compensator() {
        let spec = ProcessSpec {
            gamma2: RateFunction::Linear { slope: 1.0 },
            nu: LevyMeasure::FiniteAtoms { atoms: vec![Atom { size: 1.0, rate: 2.0 }] },
            ..ProcessSpec::null()
        };
        let scheme = Scheme::new(&spec, 0.5, SmallJumpMode::Drop).unwrap();
        assert_eq!(scheme.m1, 2.0);
        let dt = 1e-2;
        let accepted = DrivingNoise::from_parts(0.0, 0.0, vec![JumpMark { s: 0.004, z: 1.0, u: 2.5 }]);
        // u = 2.5 ≤ γ₂(3) = 3: accepted
        let y = scheme.step(3.0, dt, &accepted).unwrap().value;
        assert_relative_eq!(y, 3.0 - 3.0 * 2.0 * dt + 1.0, max_relative = 1e-14);
        // the same mark is rejected from x = 2
        let y = scheme.step(2.0, dt, &accepted).unwrap().value;
        assert_relative_eq!(y, 2.0 - 2.0 * 2.0 * dt, max_relative = 1e-14);
    }

    #[test]
    fn step_clamps_at_zero() {
        let spec = ProcessSpec::logistic_drift_only(1.0);
        let scheme = Scheme::new(&spec, 0.1, SmallJumpMode::Drop).unwrap();
        let out = scheme.step(10.0, 1.0, &deterministic_noise()).unwrap();
        assert_eq!(out, StepOutcome { value: 0.0, clamped: true });
    }

    #[test]
    fn step_overflow_reports_last_state() {
        let spec = ProcessSpec {
            gamma0: RateFunction::PowerLaw { coefficient: 1.0, exponent: 400.0 },
            ..ProcessSpec::null()
        };
        let scheme = Scheme::new(&spec, 0.1, SmallJumpMode::Drop).unwrap();
        match scheme.step(10.0, 1.0, &deterministic_noise()) {
            Err(Error::Overflow { last_state }) => assert_eq!(last_state, 10.0),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn empty_horizon_single_sample() {
        let spec = ProcessSpec::logistic_csbp(1.0, LevyMeasure::Stable { alpha: 1.5, c_alpha: 1.0 });
        let cfg = SimConfig { t_max: 0.0, ..SimConfig::default() };
        let p = simulate_path(&spec, 3.0, &cfg, 0).unwrap();
        assert_eq!(p.times, vec![0.0]);
        assert_eq!(p.values, vec![3.0]);
    }

    #[test]
    fn logistic_ode_closed_form() {
        let spec = ProcessSpec::logistic_drift_only(1.0);
        let cfg = SimConfig { dt: 1e-4, t_max: 1.0, ..SimConfig::default() };
        let p = simulate_path(&spec, 100.0, &cfg, 0).unwrap();
        let err = p
            .times
            .iter()
            .zip(&p.values)
            .map(|(t, x)| {
                let exact = 100.0 / (1.0 + 50.0 * t);
                (x - exact).abs() / exact
            })
            .fold(0.0, f64::max);
        assert!(err < 1e-2, "sup relative error {err}");
        assert_relative_eq!(p.end_time(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn crossing_interpolation_matches_closed_form() {
        // x(t) = x0 / (1 + x0 t / 2) passes b at 2(1/b - 1/x0)
        let spec = ProcessSpec::logistic_drift_only(1.0);
        let cfg = SimConfig {
            dt: 1e-4,
            t_max: 2.0,
            adaptive: true,
            thresholds: vec![2.0, 5.0],
            stop_on_crossing: true,
            record_stride: 1_000_000,
            ..SimConfig::default()
        };
        let p = simulate_path(&spec, 100.0, &cfg, 0).unwrap();
        assert!((p.crossing_time(2.0).unwrap() - 0.98).abs() < 1e-4);
        assert!((p.crossing_time(5.0).unwrap() - 0.38).abs() < 1e-4);
        // stopped right after the last crossing
        assert!(p.end_time() < 0.99);
    }

    #[test]
    fn start_below_threshold_crosses_at_zero() {
        let spec = ProcessSpec::null();
        let cfg = SimConfig { thresholds: vec![5.0], ..SimConfig::default() };
        assert_eq!(simulate_path(&spec, 1.0, &cfg, 0).unwrap().crossing_time(5.0), Some(0.0));
    }

    #[test]
    fn observations_land_exactly() {
        let spec = ProcessSpec::logistic_drift_only(1.0);
        let cfg = SimConfig {
            dt: 0.3,
            t_max: 1.0,
            observation_times: vec![0.0, 0.25, 0.5],
            ..SimConfig::default()
        };
        let p = simulate_path(&spec, 1.0, &cfg, 0).unwrap();
        assert_eq!(p.observation(0.0), Some(1.0));
        assert!(p.times.contains(&0.25) && p.times.contains(&0.5));
        assert_eq!(p.end_time(), 1.0);
        // Euler over [0, 0.25] in one step
        assert_relative_eq!(p.observation(0.25).unwrap(), 1.0 - 0.125, max_relative = 1e-14);
    }

    #[test]
    fn cap_stops_path() {
        let spec = ProcessSpec { gamma0: RateFunction::Linear { slope: 5.0 }, ..ProcessSpec::null() };
        let cfg = SimConfig { dt: 1e-2, t_max: 10.0, x_cap: 100.0, observation_times: vec![9.0], ..SimConfig::default() };
        let p = simulate_path(&spec, 1.0, &cfg, 0).unwrap();
        let tc = p.capped_at.expect("capped");
        // Euler: 1.05^n = 100 at n ≈ 94.4
        assert!(tc > 0.9 && tc < 0.96, "capped at {tc}");
        assert!(p.values.iter().all(|v| *v <= 100.0));
        assert_eq!(*p.values.last().unwrap(), 100.0);
        assert_eq!(p.observation(9.0), None);
    }

    #[test]
    fn absorbed_at_zero() {
        let spec = ProcessSpec { gamma0: RateFunction::Linear { slope: -1.0 }, ..ProcessSpec::null() };
        let cfg = SimConfig { dt: 2.0, t_max: 10.0, observation_times: vec![8.0], ..SimConfig::default() };
        let p = simulate_path(&spec, 1.0, &cfg, 0).unwrap();
        assert_eq!(p.hit_zero_at, Some(2.0));
        assert_eq!(p.observation(8.0), Some(0.0));
        assert_eq!(p.end_time(), 2.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let spec = ProcessSpec::null();
        let cfg = SimConfig::default();
        assert!(simulate_path(&spec, cfg.x_cap, &cfg, 0).is_err());
        assert!(simulate_path(&spec, -1.0, &cfg, 0).is_err());
        assert!(simulate_path(&spec, 1.0, &SimConfig { dt: 0.0, ..cfg.clone() }, 0).is_err());
        assert!(simulate_ensemble(&spec, 1.0, &cfg, 0).is_err());
    }

    #[test]
    fn singleton_ensemble_is_path_zero() {
        let spec = ProcessSpec::logistic_csbp(1.0, LevyMeasure::Stable { alpha: 1.5, c_alpha: 1.0 });
        let cfg = SimConfig { dt: 1e-2, seed: 9, ..SimConfig::default() };
        let e = simulate_ensemble(&spec, 4.0, &cfg, 1).unwrap();
        assert_eq!(e.paths[0], simulate_path(&spec, 4.0, &cfg, 0).unwrap());
    }

    #[test]
    fn null_ensemble_constant() {
        let cfg = SimConfig { dt: 0.05, observation_times: vec![0.5, 1.0], ..SimConfig::default() };
        let e = simulate_ensemble(&ProcessSpec::null(), 7.0, &cfg, 100).unwrap();
        assert!(e.paths.iter().all(|p| p.values.iter().all(|v| *v == 7.0)));
        assert_eq!(e.summary.moments[1].mean, Some(7.0));
        assert_eq!(e.summary.moments[1].variance, Some(0.0));
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let spec = ProcessSpec::logistic_csbp(1.0, LevyMeasure::Stable { alpha: 1.5, c_alpha: 1.0 });
        let cfg = SimConfig { dt: 1e-2, seed: 3, adaptive: true, thresholds: vec![2.0], ..SimConfig::default() };
        let one = simulate_ensemble(&spec, 20.0, &SimConfig { workers: Some(1), ..cfg.clone() }, 64).unwrap();
        let many = simulate_ensemble(&spec, 20.0, &SimConfig { workers: Some(8), ..cfg }, 64).unwrap();
        assert_eq!(
            serde_json::to_vec(&one).unwrap(),
            serde_json::to_vec(&many).unwrap()
        );
    }

    #[test]
    fn accepted_jumps_at_least_eps() {
        let spec = ProcessSpec::logistic_csbp(1.0, LevyMeasure::Stable { alpha: 1.5, c_alpha: 1.0 });
        let scheme = Scheme::new(&spec, 0.2, SmallJumpMode::Drop).unwrap();
        let mut noise = DrivingNoise::default();
        let mut total = 0usize;
        for step in 0..500 {
            scheme.draw_noise(1, 0, step, 0.05, 30.0, &mut noise);
            assert!(noise.marks.windows(2).all(|w| w[0].u <= w[1].u));
            assert!(noise.marks.iter().all(|m| m.z >= 0.2 && m.u <= 30.0 && m.s >= 0.0 && m.s <= 0.05));
            total += noise.marks.len();
        }
        // E count = 500 · h · u_max · ν([ε,∞)) = 500 · 0.05 · 30 · 0.2^{-1.5}/1.5
        let expect = 500.0 * 0.05 * 30.0 * 0.2f64.powf(-1.5) / 1.5;
        assert!((total as f64 - expect).abs() < 4.0 * expect.sqrt(), "{total} vs {expect}");
    }

    #[test]
    fn marks_independent_of_dominating_level() {
        let spec = ProcessSpec::logistic_csbp(1.0, LevyMeasure::Stable { alpha: 1.5, c_alpha: 1.0 });
        let scheme = Scheme::new(&spec, 0.1, SmallJumpMode::Gaussian).unwrap();
        let (mut lo, mut hi) = (DrivingNoise::default(), DrivingNoise::default());
        scheme.draw_noise(5, 2, 17, 0.01, 10.0, &mut lo);
        scheme.draw_noise(5, 2, 17, 0.01, 50.0, &mut hi);
        assert_eq!(lo.marks[..], hi.marks[..lo.marks.len()]);
        assert_eq!(lo.xi, hi.xi);
        assert_eq!(lo.accepted_jumps(10.0), hi.accepted_jumps(10.0));
    }
}
