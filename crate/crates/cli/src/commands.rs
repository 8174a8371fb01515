use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};

use entrance_core::coupling::{gronwall_check, simulate_flows};
use entrance_core::diagnostics::{entrance_profile, fdd_convergence, moment_convergence, semigroup_cauchy};
use entrance_core::model::{integer_grid, validate, ValidationReport};
use entrance_core::output::{
    cauchy_rows, moment_rows, profile_column_rows, write_cdf_csv, write_fdd_csv, write_flow_csv, write_json,
    write_passage_table_csv, write_paths_csv, write_plot_data, write_profile_csv,
};
use entrance_core::passage::{estimate_exp_moment, estimate_passage, markov_decomposition_check, tail_geometric_fit};
use entrance_core::{classify, simulate_ensemble, Error};

use crate::config::{output_dir, ConfigError, Loaded};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    Simulate,
    Flow,
    Passage,
    Classify,
    Diagnose,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Simulate => "simulate",
            Command::Flow => "flow",
            Command::Passage => "passage",
            Command::Classify => "classify",
            Command::Diagnose => "diagnose",
        }
    }

    /// Commands that draw random numbers and so need an explicit seed.
    pub fn needs_seed(self) -> bool {
        matches!(self, Command::Simulate | Command::Flow | Command::Passage | Command::Diagnose)
    }
}

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 1;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError { code: EXIT_VALIDATION, message: e.0 }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Overflow { .. } => EXIT_NUMERICAL,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => EXIT_IO,
            Error::Spec(_) | Error::Domain(_) | Error::Precondition(_) => EXIT_VALIDATION,
        };
        CliError { code, message: e.to_string() }
    }
}

fn invalid(message: impl Into<String>) -> CliError {
    CliError { code: EXIT_VALIDATION, message: message.into() }
}

/// Files written so far, recorded in the manifest.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }
}

fn report_for(loaded: &Loaded) -> Result<ValidationReport, CliError> {
    let grid = match &loaded.config.validation_grid {
        Some(g) => g.resolve("validation_grid")?,
        None => integer_grid(100),
    };
    Ok(validate(&loaded.spec, &grid)?)
}

/// Runs `command` and writes its result files plus `manifest.json`.
pub fn run(
    command: Command,
    config_path: &Path,
    loaded: Loaded,
    output_flag: Option<&Path>,
    workers: Option<usize>,
) -> Result<(), CliError> {
    if command.needs_seed() && !loaded.seed_given {
        return Err(invalid("a seed is required: pass --seed or set sim.seed in the config"));
    }
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
    let mut sim = loaded.config.sim.clone();
    sim.workers = workers;
    sim.check()?;
    let report = report_for(&loaded)?;
    let dir = output_dir(output_flag, &loaded.config);
    std::fs::create_dir_all(&dir).map_err(|e| CliError { code: EXIT_IO, message: format!("{}: {e}", dir.display()) })?;
    let mut out = Outputs { dir, files: Vec::new() };
    let spec = &loaded.spec;
    let cfg = &loaded.config;

    let summary: Value = match command {
        Command::Validate => {
            write_json(&out.path("validation_report.json"), &report)?;
            json!({
                "integrability_ok": report.integrability_ok,
                "theta": report.one_sided_lipschitz_theta,
                "gamma2_monotone": report.gamma2_monotone,
                "warnings": report.warnings,
            })
        }
        Command::Classify => {
            let boundary = classify(spec, &report);
            write_json(&out.path("boundary.json"), &boundary)?;
            json!({ "verdict": boundary.verdict, "criterion_used": boundary.criterion_used,
                    "integral_value": boundary.integral_value, "b_used": boundary.b_used })
        }
        Command::Simulate => {
            let block = cfg.simulate.as_ref().ok_or_else(|| invalid("config has no `simulate` block"))?;
            let ens = simulate_ensemble(spec, block.x0, &sim, block.n_paths)?;
            write_paths_csv(&out.path("paths.csv"), &ens.paths)?;
            write_json(
                &out.path("summary.json"),
                &json!({ "x0": ens.x0, "seed": ens.seed, "n_paths": ens.paths.len(), "summary": ens.summary }),
            )?;
            let rows: Vec<(f64, Option<f64>, f64)> = ens
                .summary
                .moments
                .iter()
                .map(|m| (m.time, m.mean, m.variance.map_or(0.0, |v| (v / m.n as f64).sqrt())))
                .collect();
            write_plot_data(&out.path("moments.dat"), "time mean se", &rows)?;
            json!({ "capped_paths": ens.summary.capped_paths, "zero_hits": ens.summary.zero_hits,
                    "crossings": ens.summary.crossings })
        }
        Command::Flow => {
            let block = cfg.flow.as_ref().ok_or_else(|| invalid("config has no `flow` block"))?;
            let flows = simulate_flows(spec, &report, &block.initial_values, &sim, block.n_realizations)?;
            write_flow_csv(&out.path("flow.csv"), &flows)?;
            let total: u64 = flows.iter().map(|f| f.order_violations).sum();
            let first: Vec<Value> = flows
                .iter()
                .filter(|f| f.order_violations > 0)
                .take(16)
                .map(|f| json!({ "realization": f.realization, "count": f.order_violations, "violations": f.violations }))
                .collect();
            let crossing = block.crossing_threshold.map(|b| {
                flows
                    .iter()
                    .map(|f| f.crossing_order_violations(b, sim.dt).len())
                    .sum::<usize>()
            });
            let violations = json!({
                "order_violations": total,
                "realizations_with_violations": flows.iter().filter(|f| f.order_violations > 0).count(),
                "crossing_order_violations": crossing,
                "first": first,
            });
            write_json(&out.path("violations.json"), &violations)?;
            let gronwall = match &block.gronwall {
                Some(g) => {
                    let check = gronwall_check(spec, &report, g.x, g.y, g.t, g.n_realizations, &sim)?;
                    write_json(&out.path("gronwall.json"), &check)?;
                    Some(check)
                }
                None => None,
            };
            json!({ "order_violations": total, "crossing_order_violations": crossing,
                    "gronwall_pass": gronwall.map(|g| g.pass) })
        }
        Command::Passage => {
            let block = cfg.passage.as_ref().ok_or_else(|| invalid("config has no `passage` block"))?;
            let est = match block.theta {
                Some(theta) => estimate_exp_moment(spec, block.x0, block.b, theta, &sim, block.n_paths)?,
                None => estimate_passage(spec, block.x0, block.b, &sim, block.n_paths)?,
            };
            write_passage_table_csv(&out.path("passage.csv"), std::slice::from_ref(&est))?;
            write_cdf_csv(&out.path("cdf.csv"), &est)?;
            write_json(&out.path("passage.json"), &est)?;
            let markov = match block.x_mid {
                Some(x_mid) => {
                    let m = markov_decomposition_check(spec, block.x0, x_mid, block.b, &sim, block.n_paths)?;
                    write_json(&out.path("markov.json"), &m)?;
                    Some(m)
                }
                None => None,
            };
            if let Some(tail) = &block.tail {
                let fit = tail_geometric_fit(spec, block.x0, block.b, tail.t_unit, tail.n_max, &sim, block.n_paths)?;
                write_json(&out.path("tail_fit.json"), &fit)?;
            }
            json!({ "mean": est.mean, "se": est.se, "censored_fraction": est.censored_fraction,
                    "exp_moment": est.exp_moment, "markov_z_score": markov.and_then(|m| m.z_score) })
        }
        Command::Diagnose => diagnose(&loaded, &sim, &mut out)?,
    };

    let manifest = json!({
        "command": command.name(),
        "config_path": config_path.display().to_string(),
        "inputs": loaded.echo,
        "seed": sim.seed,
        "versions": { "entrance-cli": env!("CARGO_PKG_VERSION"), "entrance-core": entrance_core::VERSION },
        "outputs": out.files,
        "summary": summary,
        "timing": { "started_unix_seconds": started_unix, "wall_time_seconds": started.elapsed().as_secs_f64() },
    });
    let manifest_path = out.dir.join("manifest.json");
    write_json(&manifest_path, &manifest)?;
    println!("{}", serde_json::to_string_pretty(&json!({ "command": command.name(), "summary": manifest["summary"] }))
        .expect("serializable"));
    Ok(())
}

#[derive(Serialize, Default)]
struct Bundle {
    #[serde(skip_serializing_if = "Option::is_none")]
    entrance_profile: Option<entrance_core::EntranceProfile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    semigroup_cauchy: Option<entrance_core::SemigroupCauchy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    moment_convergence: Option<entrance_core::diagnostics::MomentConvergence>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fdd: Option<entrance_core::FddConvergence>,
}

fn diagnose(loaded: &Loaded, sim: &entrance_core::SimConfig, out: &mut Outputs) -> Result<Value, CliError> {
    let spec = &loaded.spec;
    let block = loaded.config.diagnose.as_ref().ok_or_else(|| invalid("config has no `diagnose` block"))?;
    // every grid is resolved before anything is simulated
    let profile_grids = match &block.entrance_profile {
        Some(p) => Some((p.b_grid.resolve("entrance_profile.b_grid")?, p.x_grid.resolve("entrance_profile.x_grid")?)),
        None => None,
    };
    let cauchy_grid = block.semigroup_cauchy.as_ref().map(|c| c.x_grid.resolve("semigroup_cauchy.x_grid")).transpose()?;
    let moment_grid =
        block.moment_convergence.as_ref().map(|m| m.x_grid.resolve("moment_convergence.x_grid")).transpose()?;
    let fdd_grid = block.fdd.as_ref().map(|f| f.x_grid.resolve("fdd.x_grid")).transpose()?;
    if profile_grids.is_none() && cauchy_grid.is_none() && moment_grid.is_none() && fdd_grid.is_none() {
        return Err(invalid("`diagnose` block requests no diagnostic"));
    }

    let mut bundle = Bundle::default();
    let mut verdicts = serde_json::Map::new();
    if let (Some(p), Some((b_grid, x_grid))) = (&block.entrance_profile, profile_grids) {
        let prof = entrance_profile(spec, &b_grid, &x_grid, p.t, sim, p.n_paths)?;
        write_profile_csv(&out.path("entrance_profile.csv"), &prof)?;
        for (k, b) in prof.b_grid.iter().enumerate() {
            let name = format!("entrance_profile_b{b}.dat");
            write_plot_data(&out.path(&name), &format!("mean passage time below {b} against start"), &profile_column_rows(&prof, k))?;
        }
        verdicts.insert(
            "entrance_profile".into(),
            json!({ "all_plateaus": prof.all_plateaus(), "limits_decreasing": prof.limits_decreasing(),
                    "plateau": prof.plateau }),
        );
        bundle.entrance_profile = Some(prof);
    }
    if let (Some(c), Some(grid)) = (&block.semigroup_cauchy, cauchy_grid) {
        let res = semigroup_cauchy(spec, c.f, c.t, &grid, sim, c.n_paths)?;
        write_plot_data(&out.path("semigroup_cauchy.dat"), "P_t f against start", &cauchy_rows(&res))?;
        verdicts.insert(
            "semigroup_cauchy".into(),
            json!({ "tail_decreasing": res.tail_decreasing, "last_within_noise": res.last_within_noise }),
        );
        bundle.semigroup_cauchy = Some(res);
    }
    if let (Some(m), Some(grid)) = (&block.moment_convergence, moment_grid) {
        let res = moment_convergence(spec, m.h, m.b, &grid, sim, m.n_paths)?;
        write_plot_data(&out.path("moment_convergence.dat"), "E h(T_b) against start", &moment_rows(&res))?;
        verdicts.insert("moment_convergence".into(), json!({ "plateau": res.plateau, "inconclusive": res.inconclusive }));
        bundle.moment_convergence = Some(res);
    }
    if let (Some(f), Some(grid)) = (&block.fdd, fdd_grid) {
        let res = fdd_convergence(spec, &f.times, &grid, f.x_ref, sim, f.n_paths)?;
        write_fdd_csv(&out.path("fdd.csv"), &res)?;
        verdicts.insert(
            "fdd".into(),
            json!({ "decreasing_trend": res.decreasing_trend, "final_within": res.final_within,
                    "critical_value": res.critical_value }),
        );
        bundle.fdd = Some(res);
    }
    write_json(&out.path("diagnostics.json"), &bundle)?;
    Ok(Value::Object(verdicts))
}
