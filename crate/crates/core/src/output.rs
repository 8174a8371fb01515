//! Result files. Tables go to CSV and summaries to JSON; plot data is plain
//! whitespace-separated columns.
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! results always produce identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path as FsPath;

use serde::Serialize;

use crate::coupling::FlowEnsemble;
use crate::diagnostics::{EntranceProfile, FddConvergence, MomentConvergence, SemigroupCauchy};
use crate::error::Result;
use crate::passage::PassageEstimate;
use crate::simulate::Path;

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn csv_writer(path: &FsPath) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &FsPath, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// `path_index,time,value` for every recorded point.
pub fn write_paths_csv(path: &FsPath, paths: &[Path]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["path_index", "time", "value"])?;
    for (i, p) in paths.iter().enumerate() {
        for (t, x) in p.times.iter().zip(&p.values) {
            w.write_record([i.to_string(), t.to_string(), x.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `realization,initial_value,time,value` for every flow member.
pub fn write_flow_csv(path: &FsPath, flows: &[FlowEnsemble]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["realization", "initial_value", "time", "value"])?;
    for f in flows {
        for p in &f.paths {
            for (t, x) in p.times.iter().zip(&p.values) {
                w.write_record([f.realization.to_string(), p.x0.to_string(), t.to_string(), x.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `x0,b,n,mean,se,censored_fraction`, one row per estimate; absent means are empty fields.
pub fn write_passage_table_csv(path: &FsPath, estimates: &[PassageEstimate]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["x0", "b", "n", "mean", "se", "censored_fraction"])?;
    for e in estimates {
        w.write_record([
            e.x0.to_string(),
            e.b.to_string(),
            e.n_paths.to_string(),
            opt(e.mean),
            opt(e.se),
            e.censored_fraction.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `t,p`
pub fn write_cdf_csv(path: &FsPath, estimate: &PassageEstimate) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["t", "p"])?;
    for c in &estimate.cdf {
        w.write_record([c.t.to_string(), c.p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `x,b,p,mean,se,restricted_mean,censored_fraction,flagged`, one row per cell.
pub fn write_profile_csv(path: &FsPath, profile: &EntranceProfile) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["x", "b", "p", "mean", "se", "restricted_mean", "censored_fraction", "flagged"])?;
    for (i, x) in profile.x_grid.iter().enumerate() {
        for (k, b) in profile.b_grid.iter().enumerate() {
            w.write_record([
                x.to_string(),
                b.to_string(),
                profile.p_matrix[i][k].to_string(),
                opt(profile.mean_matrix[i][k]),
                opt(profile.se_matrix[i][k]),
                profile.restricted_mean_matrix[i][k].to_string(),
                profile.censored_matrix[i][k].to_string(),
                profile.flagged[i][k].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `x,time,ks,rho_distance`, one row per cell.
pub fn write_fdd_csv(path: &FsPath, fdd: &FddConvergence) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["x", "time", "ks", "rho_distance"])?;
    for c in fdd.cells.iter().flatten() {
        w.write_record([c.x.to_string(), c.time.to_string(), c.ks.to_string(), c.rho_distance.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Gnuplot data: a comment header, then `x value se` rows. Rows with no
/// value are skipped.
pub fn write_plot_data(path: &FsPath, title: &str, rows: &[(f64, Option<f64>, f64)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# {title}")?;
    writeln!(w, "# x value se")?;
    for (x, v, se) in rows {
        if let Some(v) = v {
            writeln!(w, "{x} {v} {se}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Plot rows of one profile column: `x, Ê_x(T_b), SE`.
pub fn profile_column_rows(profile: &EntranceProfile, k: usize) -> Vec<(f64, Option<f64>, f64)> {
    profile
        .x_grid
        .iter()
        .enumerate()
        .map(|(i, &x)| (x, profile.mean_matrix[i][k], profile.se_matrix[i][k].unwrap_or(0.0)))
        .collect()
}

pub fn cauchy_rows(c: &SemigroupCauchy) -> Vec<(f64, Option<f64>, f64)> {
    c.points.iter().map(|p| (p.x, Some(p.value), p.se)).collect()
}

pub fn moment_rows(m: &MomentConvergence) -> Vec<(f64, Option<f64>, f64)> {
    m.rows.iter().map(|r| (r.x, r.estimate, r.se.unwrap_or(0.0))).collect()
}
