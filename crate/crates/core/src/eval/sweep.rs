//! Budget × seed grids of pipeline runs and their trade-off tables.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::eval::config::RunConfig;
use crate::eval::pipeline::{load_data, prepare, run_prepared, Prepared, RunOutput, TestMetrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub budget: f64,
    pub seed: u64,
    pub t: usize,
    pub beta: f64,
    /// True objective over the finite support when known, else the test error.
    pub risk: f64,
    pub test_risk: f64,
    pub rejection_rate: Option<f64>,
    pub ks_max: Option<f64>,
    pub churn: Option<f64>,
    pub set_size: Option<f64>,
    /// True `√Σ(𝒞ⱼ)₊²` when known, else the plug-in value.
    pub violation: f64,
    pub lp_value: Option<f64>,
    pub lambda_norm: f64,
    pub grad_map_norm: f64,
    pub delta_l: Option<f64>,
    pub delta_c: Option<f64>,
    pub violation_bound: f64,
    pub risk_gap_bound: f64,
    pub violation_ok: Option<bool>,
    pub risk_ok: Option<bool>,
}

impl SweepRow {
    fn from_output(budget: f64, seed: u64, out: &RunOutput) -> Self {
        let r = &out.report;
        let c = &out.certificate;
        let (rejection_rate, ks_max, churn, set_size) = match &r.test {
            TestMetrics::Classifier(e) => (
                e.rejection_rate,
                e.ks_unfairness.as_ref().and_then(|v| v.iter().flatten().copied().reduce(f64::max)),
                e.churn,
                None,
            ),
            TestMetrics::Sets(s) => (None, None, s.churn, Some(s.size)),
        };
        SweepRow {
            budget,
            seed,
            t: out.params.t,
            beta: out.params.beta.get(),
            risk: r.true_objective.unwrap_or_else(|| r.test.risk()),
            test_risk: r.test.risk(),
            rejection_rate,
            ks_max,
            churn,
            set_size,
            violation: r.true_violation.unwrap_or(r.plug_in_violation),
            lp_value: r.lp_value,
            lambda_norm: c.lambda_norm,
            grad_map_norm: c.grad_map_norm,
            delta_l: c.delta_l,
            delta_c: c.delta_c,
            violation_bound: c.violation_bound,
            risk_gap_bound: c.risk_gap_bound,
            violation_ok: out.check.as_ref().map(|k| k.violation_ok),
            risk_ok: out.check.as_ref().map(|k| k.risk_ok),
        }
    }
}

/// A cell that failed, with its error message.
#[derive(Debug, Clone, PartialEq)]
pub struct FailedCell {
    pub budget: f64,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    /// Successful cells in grid order (budgets outer, seeds inner).
    pub rows: Vec<SweepRow>,
    pub failures: Vec<FailedCell>,
}

/// Run every `(budget, seed)` cell of the config's grid; `seeds` overrides
/// the configured seed list. Cells run in parallel; failures are collected
/// rather than aborting the grid.
pub fn sweep(cfg: &RunConfig, seeds: Option<&[u64]>) -> Result<SweepOutcome> {
    cfg.validate()?;
    let grid = cfg.sweep.as_ref().ok_or_else(|| invalid("sweep", "config has no [sweep] table"))?;
    if grid.budgets.is_empty() {
        return Err(invalid("sweep.budgets", "grid is empty"));
    }
    let seeds: Vec<u64> = seeds.map_or_else(|| grid.seeds.clone(), <[u64]>::to_vec);
    let data = load_data(cfg)?;
    let prepared: Vec<std::result::Result<Prepared, String>> =
        seeds.par_iter().map(|&s| prepare(cfg, &data, s).map_err(|e| e.to_string())).collect();
    let family = cfg.problem.family;
    let cells: Vec<(f64, usize)> = grid.budgets.iter().flat_map(|&b| (0..seeds.len()).map(move |i| (b, i))).collect();
    let results: Vec<std::result::Result<SweepRow, FailedCell>> = cells
        .par_iter()
        .map(|&(b, i)| {
            let fail = |error: String| FailedCell { budget: b, seed: seeds[i], error };
            let prep = prepared[i].as_ref().map_err(|e| fail(e.clone()))?;
            let params = family.with_budget(&cfg.problem.params, b);
            run_prepared(cfg, &data, prep, &params).map(|o| SweepRow::from_output(b, seeds[i], &o)).map_err(|e| fail(e.to_string()))
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(f) => failures.push(f),
        }
    }
    Ok(SweepOutcome { rows, failures })
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

fn fmt_bool(v: Option<bool>) -> String {
    v.map(|b| b.to_string()).unwrap_or_default()
}

pub const SWEEP_COLUMNS: [&str; 21] = [
    "budget",
    "seed",
    "T",
    "beta",
    "risk",
    "test_risk",
    "rejection_rate",
    "ks_max",
    "churn",
    "set_size",
    "violation",
    "lp_value",
    "lambda_norm",
    "grad_map_norm",
    "delta_L",
    "delta_C",
    "violation_bound",
    "risk_gap_bound",
    "violation_ok",
    "risk_ok",
    "plug_in_only",
];

/// Floats are written with 17 significant digits; missing values are empty.
pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_COLUMNS)?;
    for r in rows {
        w.write_record([
            fmt_f(r.budget),
            r.seed.to_string(),
            r.t.to_string(),
            fmt_f(r.beta),
            fmt_f(r.risk),
            fmt_f(r.test_risk),
            fmt_opt(r.rejection_rate),
            fmt_opt(r.ks_max),
            fmt_opt(r.churn),
            fmt_opt(r.set_size),
            fmt_f(r.violation),
            fmt_opt(r.lp_value),
            fmt_f(r.lambda_norm),
            fmt_f(r.grad_map_norm),
            fmt_opt(r.delta_l),
            fmt_opt(r.delta_c),
            fmt_f(r.violation_bound),
            fmt_f(r.risk_gap_bound),
            fmt_bool(r.violation_ok),
            fmt_bool(r.risk_ok),
            r.delta_l.is_none().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-budget aggregate over seeds, in first-appearance order of budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub budget: f64,
    pub cells: usize,
    pub risk_mean: f64,
    /// Sample standard deviation (zero for a single cell).
    pub risk_std: f64,
    pub violation_max: f64,
    pub all_certified: Option<bool>,
}

pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut budgets: Vec<f64> = Vec::new();
    for r in rows {
        if !budgets.iter().any(|&b| b == r.budget) {
            budgets.push(r.budget);
        }
    }
    budgets
        .into_iter()
        .map(|b| {
            let cell: Vec<&SweepRow> = rows.iter().filter(|r| r.budget == b).collect();
            let n = cell.len() as f64;
            let mean = cell.iter().map(|r| r.risk).sum::<f64>() / n;
            let var = if cell.len() > 1 { cell.iter().map(|r| (r.risk - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            let checks: Option<Vec<bool>> = cell.iter().map(|r| Some(r.violation_ok? && r.risk_ok?)).collect();
            SummaryRow {
                budget: b,
                cells: cell.len(),
                risk_mean: mean,
                risk_std: var.sqrt(),
                violation_max: cell.iter().map(|r| r.violation).fold(0.0, f64::max),
                all_certified: checks.map(|c| c.iter().all(|&x| x)),
            }
        })
        .collect()
}

pub fn write_summary_csv<W: std::io::Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["budget", "cells", "risk_mean", "risk_std", "violation_max", "all_certified"])?;
    for r in rows {
        w.write_record([
            fmt_f(r.budget),
            r.cells.to_string(),
            fmt_f(r.risk_mean),
            fmt_f(r.risk_std),
            fmt_f(r.violation_max),
            fmt_bool(r.all_certified),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Write `sweep.csv` and `summary.csv` into `dir`; errors after writing if any
/// cell failed, naming the failed cells.
pub fn write_sweep_outputs(outcome: &SweepOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_sweep_csv(&outcome.rows, std::fs::File::create(dir.join("sweep.csv"))?)?;
    write_summary_csv(&summarize(&outcome.rows), std::fs::File::create(dir.join("summary.csv"))?)?;
    if outcome.failures.is_empty() {
        return Ok(());
    }
    let msg = outcome
        .failures
        .iter()
        .map(|f| format!("budget {} seed {}: {}", f.budget, f.seed, f.error))
        .collect::<Vec<_>>()
        .join("; ");
    Err(Error::Domain(format!("{} sweep cell(s) failed: {msg}", outcome.failures.len())))
}

/// `(2^{-i})_{i}`, the demographic-parity slack grid.
pub fn dyadic_grid(exponents: &[f64]) -> Vec<f64> {
    exponents.iter().map(|&i| 2f64.powf(-i)).collect()
}

/// Rejection budgets used for the standard trade-off table.
pub const REJECTION_GRID: [f64; 5] = [0.2, 0.1, 0.05, 0.025, 0.0125];
