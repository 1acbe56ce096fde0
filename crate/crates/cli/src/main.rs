use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use lqrflow::experiments::{self, io, Comparison, Variant};
use lqrflow::{pli, ExperimentError, PliError, ScalarProblem, Verdict};

#[derive(Parser)]
#[command(name = "lqrflow", version, about = "Gradient flows for standard and factored LQR policy optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the flow described by a TOML config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate one of the benchmark experiments.
    Reproduce {
        #[arg(value_enum)]
        experiment: Experiment,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = experiments::DEFAULT_SEED)]
        seed: u64,
        /// Scale of the initial gain for `fig3`.
        #[arg(long, default_value_t = experiments::DEFAULT_SADDLE_SCALE)]
        k0_scale: f64,
        /// Scalar problem for `scalar`.
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        a: f64,
        #[arg(long, default_value_t = 3.0)]
        q: f64,
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        /// Initial gain for `scalar`; defaults to 1000·k*.
        #[arg(long)]
        k0: Option<f64>,
    },
    /// Monte Carlo check of the gradient inequality on K_gamma.
    VerifyPli {
        #[arg(long, allow_negative_numbers = true)]
        a: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        r: f64,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        kappa: usize,
        /// Also write the certificate to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify a trajectory CSV as GECS-like or GLECS-like.
    Profile {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        gap_floor: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Fig2a,
    Fig2b,
    Fig3,
    Scalar,
}

/// Failure class, mapped to the process exit code.
enum Failure {
    Check(String),
    Usage(String),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Check(m) => Failure::Check(m),
            ExperimentError::Pli(PliError::Violation(v)) => Failure::Check(v.to_string()),
            ExperimentError::Pli(e @ PliError::TrajectoryTooShort { .. }) => Failure::Check(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Usage(e.to_string()))?;
    // a closed pipe (e.g. `| head`) is not an error worth reporting
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(())
}

fn verdict_of(leg: &experiments::LegResult) -> Option<Verdict> {
    leg.summary.profile.as_ref().map(|p| p.verdict)
}

fn report(c: &Comparison) {
    for leg in [&c.standard, &c.factored] {
        let s = &leg.summary;
        println!(
            "{}: final gap {:.6e} at t = {}, {:?}, profile {}",
            s.label,
            s.final_gap,
            s.t_end_reached,
            s.terminal_status,
            s.profile.as_ref().map_or("unavailable".to_string(), |p| p.verdict.to_string()),
        );
    }
}

fn check_comparison(c: &Comparison) -> Result<(), Failure> {
    let mut problems = Vec::new();
    if verdict_of(&c.standard) != Some(Verdict::GlecsLike) {
        problems.push("standard run is not GLECS-like");
    }
    if verdict_of(&c.factored) != Some(Verdict::GecsLike) {
        problems.push("factored run is not GECS-like");
    }
    if c.factored.summary.final_gap > c.standard.summary.final_gap {
        problems.push("factored final gap exceeds the standard one");
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(problems.join("; ")))
    }
}

fn reproduce(
    experiment: Experiment,
    out: &Path,
    seed: u64,
    k0_scale: f64,
    scalar: (f64, f64, f64, Option<f64>),
) -> Result<(), Failure> {
    match experiment {
        Experiment::Fig2a | Experiment::Fig2b => {
            let variant = if matches!(experiment, Experiment::Fig2a) {
                Variant::Stable
            } else {
                Variant::Unstable
            };
            let c = experiments::run_fig_comparison(variant, Some(out), seed)?;
            report(&c);
            check_comparison(&c)
        }
        Experiment::Fig3 => {
            let c = experiments::run_saddle(Some(out), k0_scale, seed)?;
            report(&c);
            let t_mid = 0.5 * experiments::SADDLE_HORIZON;
            let (gs, gf) = (c.standard.trajectory.gap_at(t_mid), c.factored.trajectory.gap_at(t_mid));
            println!("gap at t = {t_mid}: standard {gs:.6e}, factored {gf:.6e}");
            if gf > gs {
                Ok(())
            } else {
                Err(Failure::Check("factored run is not slower at mid-horizon".into()))
            }
        }
        Experiment::Scalar => {
            let (a, q, r, k0) = scalar;
            let p = ScalarProblem::new(a, q, r).map_err(|e| Failure::Usage(e.to_string()))?;
            let k0 = k0.unwrap_or(1e3 * p.k_star());
            let demo = experiments::run_scalar_demo(&p, k0, Some(out))?;
            for leg in &demo.legs {
                let s = &leg.summary;
                println!(
                    "{}: final gap {:.6e} at t = {}, profile {}",
                    s.label,
                    s.final_gap,
                    s.t_end_reached,
                    s.profile.as_ref().map_or("unavailable".to_string(), |p| p.verdict.to_string()),
                );
            }
            println!("rate table: {} rows", demo.table.len());
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = experiments::load_config(&config)?;
            let leg = experiments::simulate(&cfg, Some(&out))?;
            let s = &leg.summary;
            println!(
                "final gap {:.6e} at t = {}, {:?}, profile {}",
                s.final_gap,
                s.t_end_reached,
                s.terminal_status,
                s.profile.as_ref().map_or("unavailable".to_string(), |p| p.verdict.to_string()),
            );
            Ok(())
        }
        Command::Reproduce {
            experiment,
            out,
            seed,
            k0_scale,
            a,
            q,
            r,
            k0,
        } => reproduce(experiment, &out, seed, k0_scale, (a, q, r, k0)),
        Command::VerifyPli {
            a,
            q,
            r,
            gamma,
            samples,
            seed,
            kappa,
            out,
        } => {
            let p = ScalarProblem::new(a, q, r).map_err(|e| Failure::Usage(e.to_string()))?;
            let mut plan = pli::SamplingPlan::for_problem(&p, gamma);
            plan.kappa = kappa;
            match pli::verify_gpli_with_plan(&p, gamma, samples, seed, &plan) {
                Ok(cert) => {
                    print_json(&cert)?;
                    if let Some(path) = out {
                        io::write_json(&cert, &path)?;
                    }
                    Ok(())
                }
                Err(PliError::Violation(v)) => {
                    print_json(&v)?;
                    Err(Failure::Check(v.to_string()))
                }
                Err(e) => Err(Failure::Usage(e.to_string())),
            }
        }
        Command::Profile { input, gap_floor } => {
            let table = io::read_trajectory_csv(&input)?;
            let fit = pli::classify_series(&table.t, &table.gap, gap_floor).map_err(ExperimentError::from)?;
            print_json(&fit)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(m)) => {
            eprintln!("check failed: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
