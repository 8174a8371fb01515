//! Experiment configuration: one JSON file per run, plus dotted-path flag
//! overrides applied on top (`--sim.dt 1e-4`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use entrance_core::diagnostics::{MomentFunction, TestFunction};
use entrance_core::model::{geometric_grid, integer_grid};
use entrance_core::{ProcessSpec, SimConfig};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "ENTRANCE_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "out";

/// A list of points, or a rule generating one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Points(Vec<f64>),
    Rule(GridRule),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridRule {
    /// `{0, 1, …, n}`
    Integer { n: usize },
    /// `n` points from `lo` to `hi` with constant ratio.
    Geometric { lo: f64, hi: f64, n: usize },
}

impl Grid {
    pub fn resolve(&self, name: &str) -> Result<Vec<f64>, ConfigError> {
        let points = match self {
            Grid::Points(p) => p.clone(),
            Grid::Rule(GridRule::Integer { n }) => integer_grid(*n),
            Grid::Rule(GridRule::Geometric { lo, hi, n }) => {
                if !(*n >= 2 && *lo > 0.0 && hi > lo && hi.is_finite()) {
                    return Err(ConfigError(format!("{name}: geometric grid needs n >= 2 and 0 < lo < hi")));
                }
                geometric_grid(*lo, *hi, *n)
            }
        };
        if points.is_empty() {
            return Err(ConfigError(format!("{name} is empty")));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(ConfigError(format!("{name} has a non-finite entry")));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ConfigError(format!("{name} must be strictly increasing")));
        }
        Ok(points)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    pub x0: f64,
    pub n_paths: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GronwallBlock {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub n_realizations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowBlock {
    pub initial_values: Vec<f64>,
    pub n_realizations: usize,
    /// Also check that passage times below this level come out ordered.
    #[serde(default)]
    pub crossing_threshold: Option<f64>,
    #[serde(default)]
    pub gronwall: Option<GronwallBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailBlock {
    pub t_unit: f64,
    pub n_max: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassageBlock {
    pub x0: f64,
    pub b: f64,
    pub n_paths: usize,
    /// Runs the Markov decomposition through this intermediate level.
    #[serde(default)]
    pub x_mid: Option<f64>,
    /// Estimates `E(e^{θ T_b})`.
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub tail: Option<TailBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileBlock {
    pub b_grid: Grid,
    pub x_grid: Grid,
    pub t: f64,
    pub n_paths: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CauchyBlock {
    pub f: TestFunction,
    pub t: f64,
    pub x_grid: Grid,
    pub n_paths: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentBlock {
    pub h: MomentFunction,
    pub b: f64,
    pub x_grid: Grid,
    pub n_paths: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FddBlock {
    pub times: Vec<f64>,
    pub x_grid: Grid,
    pub x_ref: f64,
    pub n_paths: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseBlock {
    #[serde(default)]
    pub entrance_profile: Option<ProfileBlock>,
    #[serde(default)]
    pub semigroup_cauchy: Option<CauchyBlock>,
    #[serde(default)]
    pub moment_convergence: Option<MomentBlock>,
    #[serde(default)]
    pub fdd: Option<FddBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub spec: Option<ProcessSpec>,
    /// Spec file, relative to the config file.
    #[serde(default)]
    pub spec_file: Option<PathBuf>,
    #[serde(default)]
    pub sim: SimConfig,
    /// Grid for the structural checks; defaults to `{0, …, 100}`.
    #[serde(default)]
    pub validation_grid: Option<Grid>,
    #[serde(default)]
    pub simulate: Option<SimulateBlock>,
    #[serde(default)]
    pub flow: Option<FlowBlock>,
    #[serde(default)]
    pub passage: Option<PassageBlock>,
    #[serde(default)]
    pub diagnose: Option<DiagnoseBlock>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// A configuration error, reported with exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Parses an override value as JSON, falling back to a bare string.
fn override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `value` at the dotted `path`, creating objects along the way.
pub fn apply_override(root: &mut Value, path: &str, raw: &str) -> Result<(), ConfigError> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError(format!("malformed override path `{path}`")));
    }
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let map = node
            .as_object_mut()
            .ok_or_else(|| ConfigError(format!("override `{path}`: `{key}` is not inside an object")))?;
        node = map.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let map = node
        .as_object_mut()
        .ok_or_else(|| ConfigError(format!("override `{path}`: parent is not an object")))?;
    map.insert(keys[keys.len() - 1].to_string(), override_value(raw));
    Ok(())
}

/// A loaded configuration with the spec resolved.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub spec: ProcessSpec,
    /// The merged configuration as JSON, echoed into the manifest.
    pub echo: Value,
    /// Whether a seed was given in the file or by flag.
    pub seed_given: bool,
}

fn field_error(path: &Path, err: serde_path_to_error::Error<serde_json::Error>, text: &str) -> ConfigError {
    let field = err.path().to_string();
    let inner = err.into_inner();
    // the merged value has no positions; re-parse the file text to locate the error
    let position = serde_json::from_str::<ExperimentConfig>(text)
        .err()
        .filter(|e| e.line() > 0)
        .map(|e| format!(" (line {}, column {})", e.line(), e.column()))
        .unwrap_or_default();
    ConfigError(format!("{}: field `{field}`: {inner}{position}", path.display()))
}

/// Reads `path`, applies `overrides` in order, and resolves the spec. A file
/// holding only a process spec is accepted as a config with that spec.
pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Loaded, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_str(&text).map_err(|e| {
        ConfigError(format!("{}: invalid JSON at line {}, column {}: {e}", path.display(), e.line(), e.column()))
    })?;
    if value.get("gamma0").is_some() {
        value = serde_json::json!({ "spec": value });
    }
    if !value.is_object() {
        return Err(ConfigError(format!("{}: top level must be an object", path.display())));
    }
    for (key, raw) in overrides {
        apply_override(&mut value, key, raw)?;
    }
    let seed_given = value.pointer("/sim/seed").is_some();
    let config: ExperimentConfig =
        serde_path_to_error::deserialize(value.clone()).map_err(|e| field_error(path, e, &text))?;
    let spec = match (&config.spec, &config.spec_file) {
        (Some(s), None) => s.clone(),
        (None, Some(file)) => {
            let full = path.parent().unwrap_or(Path::new(".")).join(file);
            ProcessSpec::from_path(&full).map_err(|e| ConfigError(format!("{}: {e}", full.display())))?
        }
        (Some(_), Some(_)) => return Err(ConfigError("give either `spec` or `spec_file`, not both".into())),
        (None, None) => return Err(ConfigError("config has no `spec` or `spec_file`".into())),
    };
    Ok(Loaded { config, spec, echo: value, seed_given })
}

/// Output directory: flag, then config, then environment, then `out`.
pub fn output_dir(flag: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}
