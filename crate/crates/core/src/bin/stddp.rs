use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use stddp::backward::Scheme;
use stddp::config::ExperimentConfig;
use stddp::io::write_outputs;
use stddp::verify::{run_checks, Fault};
use stddp::StddpError;

#[derive(Parser)]
#[command(name = "stddp", version, about = "Optimal control of 1D PDEs by spatio-temporal DDP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the experiment described by a TOML config and write CSV outputs.
    Run {
        config: PathBuf,
        /// Overrides `output.dir`; defaults to `stddp-out/<config stem>`.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Overrides `solver.scheme`.
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
        /// Reserved: the solver is deterministic and ignores it.
        #[arg(long)]
        seed: Option<u64>,
        /// Suppress the per-iteration log.
        #[arg(long, short)]
        quiet: bool,
    },
    /// Run the oracle checks and report pass/fail per check.
    Verify {
        /// Only the fast subset.
        #[arg(long)]
        quick: bool,
        /// Plant a sign error in the LQR reference (self-test of the suite).
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Euler,
    Rk2,
    SemiImplicit,
    Discrete,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Euler => Scheme::ExplicitEuler,
            SchemeArg::Rk2 => Scheme::Rk2,
            SchemeArg::SemiImplicit => Scheme::SemiImplicit,
            SchemeArg::Discrete => Scheme::ExactDiscrete,
        }
    }
}

fn exit_code(e: &StddpError) -> u8 {
    match e {
        StddpError::Config(_) => 2,
        e if e.is_divergence() => 3,
        _ => 1,
    }
}

fn default_output(config: &Path) -> PathBuf {
    let stem = config.file_stem().map(|s| s.to_os_string()).unwrap_or_else(|| "run".into());
    Path::new("stddp-out").join(stem)
}

fn run(config: &Path, output_dir: Option<PathBuf>, scheme: Option<SchemeArg>, quiet: bool) -> Result<(), StddpError> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = scheme {
        cfg.solver.scheme = s.into();
        cfg.validate()?;
    }
    let dir = output_dir
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| default_output(config));
    cfg.output.dir = Some(dir.clone());
    let ex = cfg.build()?;

    let start = Instant::now();
    let mut log = |r: &stddp::solver::IterationRecord| {
        if !quiet {
            eprintln!(
                "round {:>2} iter {:>3}  J = {:<22} state = {:<22} control = {:<22} |dU| = {:.3e}  gamma = {}",
                r.round, r.iter, r.cost, r.state_cost, r.control_cost, r.step_norm, r.gamma
            );
        }
    };
    let sol = ex.solve_with(&mut log)?;
    let elapsed = start.elapsed().as_secs_f64();
    write_outputs(&dir, &cfg, ex.model.grid(), &ex.time, &sol)?;

    let iters = sol.history.iter().filter(|r| r.iter > 0).count();
    println!("converged: {}", sol.converged);
    println!("iterations: {iters}");
    println!("initial cost: {}", sol.initial_cost);
    println!("final cost: {} (state {}, control {})", sol.cost.total(), sol.cost.state, sol.cost.control);
    println!("terminal on-mask RMS deviation: {}", ex.spec.masked_rms(sol.states.terminal()));
    println!("wall time: {elapsed:.2} s ({:.3} s per iteration)", elapsed / iters.max(1) as f64);
    println!("outputs: {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            output_dir,
            scheme,
            seed: _,
            quiet,
        } => match run(&config, output_dir, scheme, quiet) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(exit_code(&e))
            }
        },
        Command::Verify { quick, inject_fault } => {
            let fault = if inject_fault { Fault::FlipLqrInputSign } else { Fault::None };
            let results = run_checks(quick, fault);
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            if results.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
