//! Files written by the driver.
//!
//! * `iterations.csv`: `iter,phase,dofs,h_max,m,Z,normZp,qmc_term,fem_term,est,realized_err,valid,seconds`;
//!   empty fields mark estimator parts that failed their validity guard.
//! * `summary.txt`: `key = value` lines.
//! * `plot.script`: a gnuplot script drawing estimated and realized error per
//!   iteration, split by phase.
//! * `control.csv` (`vertex,value`) and `optimizer.csv` (`iter,objective,residual`)
//!   for control runs, `samples.csv` for inversion runs on request.
//! * `fem_convergence.csv`, `qmc_convergence.csv` from the convergence suites.

use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::adaptive::{IterationRow, Phase, RunOutcome};
use super::config::ProblemKind;
use super::reference::ReferenceResult;
use crate::error::{Error, Result};

fn csv_error(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Serializes rows with a header line.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

pub fn from_csv<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().map(|r| r.map_err(csv_error)).collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    std::fs::write(path, to_csv(rows)?)?;
    Ok(())
}

/// Header of `iterations.csv`.
pub const ITERATION_HEADER: &str = "iter,phase,dofs,h_max,m,Z,normZp,qmc_term,fem_term,est,realized_err,valid,seconds";

#[derive(Serialize)]
struct ControlValue {
    vertex: usize,
    value: f64,
}

#[derive(Serialize)]
struct OptimizerStep {
    iter: usize,
    objective: f64,
    residual: f64,
}

#[derive(Serialize)]
struct SampleRow {
    index: usize,
    theta: f64,
    misfit: f64,
    eta: Option<f64>,
    zeta: Option<f64>,
    zeta_prime: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "invalid".to_string(), |x| x.to_string())
}

/// `key = value` summary of a run.
pub fn summary(outcome: &RunOutcome, reference: Option<&ReferenceResult>) -> String {
    let mut s = String::new();
    let r = &outcome.report;
    let kind = match outcome.kind {
        ProblemKind::Bip => "bip",
        ProblemKind::Ocp => "ocp",
    };
    let _ = writeln!(s, "problem = {kind}");
    let _ = writeln!(s, "status = {:?}", outcome.status);
    let _ = writeln!(s, "exit_code = {}", outcome.status.exit_code());
    let _ = writeln!(s, "iterations = {}", outcome.rows.len());
    let _ = writeln!(s, "mesh_level = {}", outcome.mesh_level);
    let _ = writeln!(s, "dofs = {}", outcome.dofs);
    let _ = writeln!(s, "m = {}", outcome.m);
    if outcome.ratio.len() == 1 {
        let _ = writeln!(s, "ratio = {}", outcome.ratio[0]);
    } else {
        let _ = writeln!(s, "ratio_l2_norm = {}", outcome.rows.last().map_or(0.0, |row| row.norm_zp / row.z));
    }
    let _ = writeln!(s, "qmc_term = {}", opt(r.qmc_term));
    let _ = writeln!(s, "fem_term = {}", opt(r.fem_term));
    let _ = writeln!(s, "est = {}", opt(r.est()));
    if let Some(c) = &outcome.control {
        let _ = writeln!(s, "optimizer_converged = {}", c.converged);
        let _ = writeln!(s, "optimizer_iterations = {}", c.iterations);
        let _ = writeln!(s, "optimizer_residual = {}", c.residual);
        let _ = writeln!(s, "objective = {}", c.evaluation.j);
    }
    if let Some(reference) = reference {
        let _ = writeln!(s, "reference_ratio = {}", reference.ratio);
        let _ = writeln!(s, "reference_std_error = {}", reference.std_error);
        if outcome.ratio.len() == 1 {
            let _ = writeln!(s, "realized_error = {}", (outcome.ratio[0] - reference.ratio).abs());
        }
    }
    s
}

/// Reference summary lines, also used by the `reference` subcommand.
pub fn reference_summary(r: &ReferenceResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "ratio = {}", r.ratio);
    let _ = writeln!(s, "std_error = {}", r.std_error);
    let _ = writeln!(s, "z = {}", r.z);
    let _ = writeln!(s, "zp = {}", r.zp);
    for l in &r.levels {
        let _ = writeln!(s, "level {} dofs = {} samples = {} z = {} zp = {}", l.level, l.dofs, l.samples, l.z, l.zp);
    }
    s
}

/// Gnuplot script for `iterations.csv` in the same directory.
pub fn plot_script(rows: &[IterationRow]) -> String {
    let split = rows.iter().position(|r| r.phase == Phase::Qmc).unwrap_or(rows.len());
    let has_realized = rows.iter().any(|r| r.realized_err.is_some());
    let mut s = String::from(
        "# gnuplot script; run `gnuplot plot.script` next to iterations.csv\n\
         set datafile separator ','\n\
         set datafile missing ''\n\
         set terminal pngcairo size 900,600\n\
         set output 'errors.png'\n\
         set logscale y\n\
         set xlabel 'iteration'\n\
         set ylabel 'error'\n\
         set key outside right\n",
    );
    let _ = writeln!(s, "set arrow from {split}-0.5, graph 0 to {split}-0.5, graph 1 nohead dt 3");
    let mut plots = vec![
        "'iterations.csv' every ::1 using 1:(stringcolumn(2) eq 'fem' ? $9 : 1/0) with linespoints dt 2 pt 6 title 'FE estimator (fem phase)'".to_string(),
        "'iterations.csv' every ::1 using 1:(stringcolumn(2) eq 'qmc' ? $8 : 1/0) with linespoints dt 2 pt 8 title 'QMC estimator (qmc phase)'".to_string(),
        "'iterations.csv' every ::1 using 1:10 with linespoints pt 3 title 'EST'".to_string(),
    ];
    if has_realized {
        plots.push("'iterations.csv' every ::1 using 1:11 with linespoints pt 12 title 'realized error'".to_string());
    }
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    s
}

/// Writes every run artifact into `dir`.
pub fn write_run(dir: &Path, outcome: &RunOutcome, reference: Option<&ReferenceResult>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_csv(&dir.join("iterations.csv"), &outcome.rows)?;
    std::fs::write(dir.join("summary.txt"), summary(outcome, reference))?;
    std::fs::write(dir.join("plot.script"), plot_script(&outcome.rows))?;
    if let Some(c) = &outcome.control {
        let values: Vec<ControlValue> = c.f.iter().enumerate().map(|(vertex, &value)| ControlValue { vertex, value }).collect();
        write_csv(&dir.join("control.csv"), &values)?;
        let steps: Vec<OptimizerStep> = c
            .history
            .iter()
            .enumerate()
            .map(|(iter, &(objective, residual))| OptimizerStep { iter, objective, residual })
            .collect();
        write_csv(&dir.join("optimizer.csv"), &steps)?;
    }
    if !outcome.samples.is_empty() {
        let rows: Vec<SampleRow> = outcome
            .samples
            .iter()
            .enumerate()
            .map(|(index, s)| SampleRow {
                index,
                theta: s.theta(),
                misfit: s.misfit,
                eta: s.eta.map(|e| e.value),
                zeta: s.zeta.map(|z| z.zeta()),
                zeta_prime: s.log_zeta_prime.exp(),
            })
            .collect();
        write_csv(&dir.join("samples.csv"), &rows)?;
    }
    Ok(())
}
