//! `qvi`: drivers for the extremal-solution solvers. Exit status is 0 when
//! every asserted check passes, 1 when one fails, 2 on configuration errors
//! and 3 on solver failures. A `summary.json` is written in every case where
//! the output directory is known.

// `!(x > 0)` style guards are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use qvi_core::extremal::Branch;

use config::RunConfig;
use error::CliError;
use output::{OutDir, Outcome, Summary, SCHEMA};

#[derive(Parser, Debug)]
#[command(
    name = "qvi",
    version,
    about = "Extremal solutions of obstacle-type quasi-variational inequalities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration; every key has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Interior nodes.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// First penalty parameter of the halving schedule.
    #[arg(long, global = true)]
    rho0: Option<f64>,
    /// Length of the halving schedule.
    #[arg(long, global = true)]
    rho_steps: Option<usize>,
    #[arg(long, global = true, value_enum)]
    branch: Option<BranchArg>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Obstacle VI `S(f, φ)` by the active-set method.
    SolveVi,
    /// Penalized equation `T_ρ(f, φ)` by damped Newton.
    SolvePen,
    /// Extremal solution of one branch by monotone iteration.
    Extremal,
    /// Penalized extremal solutions along a decreasing ρ schedule.
    RhoSweep,
    /// Directional derivative against difference quotients.
    DiffCheck,
    /// Sampled Lipschitz ratios against the contraction bound.
    LipschitzProbe,
    /// Optimal control by projected gradient with ρ continuation.
    Control,
    /// Stationarity certificate at a given or optimized control.
    Certify,
    /// Thermoforming example with explicit extremal solutions.
    Thermoform,
    /// Randomized order comparisons and penalty samples.
    Proptest,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum BranchArg {
    Min,
    Max,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::SolveVi => "solve-vi",
            Command::SolvePen => "solve-pen",
            Command::Extremal => "extremal",
            Command::RhoSweep => "rho-sweep",
            Command::DiffCheck => "diff-check",
            Command::LipschitzProbe => "lipschitz-probe",
            Command::Control => "control",
            Command::Certify => "certify",
            Command::Thermoform => "thermoform",
            Command::Proptest => "proptest",
        }
    }

    fn exercises(self) -> &'static str {
        match self {
            Command::SolveVi => "obstacle variational inequality S(f, phi) by a primal-dual active-set method",
            Command::SolvePen => "penalized equation T_rho(f, phi) by damped Newton, bounded below by S(f, phi)",
            Command::Extremal => "monotone fixed-point iteration to the largest or smallest QVI solution",
            Command::RhoSweep => "convergence of penalized extremal solutions to the QVI extremal solution as rho decreases",
            Command::DiffCheck => "directional derivative of the extremal solution map against difference quotients",
            Command::LipschitzProbe => "Lipschitz bound C/(1-c) of the extremal maps against sampled difference ratios",
            Command::Control => "projected-gradient minimization of the reduced objective over a box of controls",
            Command::Certify => "C-stationarity system and Bouligand condition at a computed control",
            Command::Thermoform => "explicit extremal solutions m = 0 and M = sin(pi x) of the thermoforming example",
            Command::Proptest => "order comparisons of the solution maps in data and rho, and the penalty sandwich",
        }
    }

    fn run(self, cfg: &RunConfig, out: &mut OutDir) -> Result<Outcome, CliError> {
        match self {
            Command::SolveVi => commands::solve_vi(cfg, out),
            Command::SolvePen => commands::solve_pen(cfg, out),
            Command::Extremal => commands::extremal(cfg, out),
            Command::RhoSweep => commands::rho_sweep(cfg, out),
            Command::DiffCheck => commands::diff_check(cfg, out),
            Command::LipschitzProbe => commands::lipschitz(cfg, out),
            Command::Control => commands::control(cfg, out),
            Command::Certify => commands::certify(cfg, out),
            Command::Thermoform => commands::thermoform(cfg, out),
            Command::Proptest => commands::proptest(cfg, out),
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(n) = cli.n {
        cfg.n = n;
    }
    if cli.rho0.is_some() || cli.rho_steps.is_some() {
        cfg.rho.schedule = None;
    }
    if let Some(r) = cli.rho0 {
        cfg.rho.rho0 = r;
    }
    if let Some(k) = cli.rho_steps {
        cfg.rho.steps = k;
    }
    if let Some(b) = cli.branch {
        cfg.branch = match b {
            BranchArg::Min => Branch::Min,
            BranchArg::Max => Branch::Max,
        };
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = cli.command;
    let (cfg, loaded) = match load_config(&cli) {
        Ok(c) => (c, Ok(())),
        Err(e) => {
            let mut c = RunConfig::default();
            if let Some(o) = &cli.out {
                c.out = o.clone();
            }
            (c, Err(e))
        }
    };
    let mut out = match OutDir::create(&cfg.out) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(loaded.err().map_or(e.exit_code(), |c| c.exit_code()) as u8);
        }
    };
    let result = loaded.and_then(|_| cmd.run(&cfg, &mut out));
    let (outcome, error) = match result {
        Ok(o) => (o, None),
        Err(e) => (Outcome::default(), Some(e)),
    };
    let pass = error.is_none() && outcome.checks.iter().all(|c| c.pass);
    for c in &outcome.checks {
        println!(
            "{} {}: {:e} {} {:e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.relation,
            c.tolerance
        );
    }
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(e) = &error {
        eprintln!("{e}");
    }
    let mut outputs = out.written().to_vec();
    outputs.push("summary.json".into());
    let summary = Summary {
        schema: SCHEMA,
        command: cmd.name().into(),
        exercises: cmd.exercises(),
        pass,
        checks: outcome.checks,
        results: outcome.results,
        outputs,
        warnings: outcome.warnings,
        error: error.clone(),
        config: cfg,
    };
    if let Err(e) = out.json("summary.json", &summary) {
        eprintln!("{e}");
        return ExitCode::from(3);
    }
    println!("{}: {}", cmd.name(), if pass { "pass" } else { "fail" });
    ExitCode::from(match error {
        Some(e) => e.exit_code() as u8,
        None if pass => 0,
        None => 1,
    })
}
