use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use copt_core::eval::pipeline::{run, write_artifacts};
use copt_core::eval::sweep::{summarize, sweep, write_sweep_outputs};
use copt_core::eval::RunConfig;
use copt_core::oracle::{oracle_report, DEFAULT_CHECK_BETAS};
use copt_core::{Error, FiniteInstance};

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const DEFAULT_OUT: &str = "copt-out";

#[derive(Parser)]
#[command(name = "copt", version, about = "Constrained post-processing of class-probability estimates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (overrides `output` in the config).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Top-level seed; for `sweep`, runs only this seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Passes over the unlabeled pool (experimental: passes beyond the first reuse samples).
    #[arg(long, value_name = "N")]
    passes: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit, optimize, certify and evaluate one configuration.
    Run(RunArgs),
    /// Run the budget × seed grid of the config's [sweep] table.
    Sweep(RunArgs),
    /// Solve a finite instance exactly and check its optimal structure.
    Oracle {
        /// Instance JSON.
        #[arg(long, value_name = "PATH")]
        instance: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Temperatures for the smoothed-solution checks.
        #[arg(long = "beta", value_name = "B")]
        betas: Vec<f64>,
    },
    /// Parse and validate a configuration without running it.
    ValidateConfig {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidParameter { .. } => EXIT_CONFIG,
        Error::Infeasible => EXIT_INFEASIBLE,
        _ => EXIT_RUNTIME,
    }
}

fn load(args: &RunArgs) -> Result<(RunConfig, PathBuf), Error> {
    let mut cfg = RunConfig::read(&args.config)?;
    if let Some(p) = args.passes {
        cfg.optimizer.passes = p;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let out = args.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    Ok((cfg, out))
}

fn cmd_run(args: &RunArgs) -> Result<(), Error> {
    let (cfg, out_dir) = load(args)?;
    let out = run(&cfg)?;
    write_artifacts(&out, &out_dir)?;
    let c = &out.certificate;
    println!("T = {}  beta = {:.6}  lambda = {:?}", out.params.t, out.params.beta.get(), out.result.lambda_hat.as_slice());
    println!("grad_map_norm = {:.6e}  violation_bound = {:.6e}  risk_gap_bound = {:.6e}", c.grad_map_norm, c.violation_bound, c.risk_gap_bound);
    if let Some(chk) = &out.check {
        println!(
            "true violation = {:.6e} ({})  true risk = {:.6} vs bound {:.6} ({})",
            chk.measured_violation,
            if chk.violation_ok { "certified" } else { "VIOLATED" },
            chk.measured_risk,
            chk.risk_bound.unwrap_or(f64::NAN),
            if chk.risk_ok { "certified" } else { "VIOLATED" },
        );
    } else {
        println!("plug-in certificate only (no true oracles)");
    }
    println!("artifacts written to {}", out_dir.display());
    Ok(())
}

fn cmd_sweep(args: &RunArgs) -> Result<(), Error> {
    let (cfg, out_dir) = load(args)?;
    let seeds = args.seed.map(|s| vec![s]);
    let outcome = sweep(&cfg, seeds.as_deref())?;
    let written = write_sweep_outputs(&outcome, &out_dir);
    for s in summarize(&outcome.rows) {
        println!("budget {:<10} cells {:<3} risk {:.6} ± {:.6}  max violation {:.3e}", s.budget, s.cells, s.risk_mean, s.risk_std, s.violation_max);
    }
    println!("tables written to {}", out_dir.display());
    written
}

fn cmd_oracle(instance: &Path, out: Option<&Path>, betas: &[f64]) -> Result<(), Error> {
    let inst = FiniteInstance::read(instance)?;
    let betas = if betas.is_empty() { DEFAULT_CHECK_BETAS.to_vec() } else { betas.to_vec() };
    let report = oracle_report(&inst, &betas)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("oracle.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    println!("lp_value = {:.12}", report.solution.lp_value);
    println!("lambda_star = {:?}", report.solution.lambda_star.as_slice());
    println!("structure checks: {}", if report.validation.ok { "ok" } else { "FAILED" });
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Oracle { instance, out, betas } => cmd_oracle(instance, out.as_deref(), betas),
        Command::ValidateConfig { config } => RunConfig::read(config).map(|_| println!("{}: ok", config.display())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
