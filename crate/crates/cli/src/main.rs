//! `tenseg`: simulate tensegrity structures and emit trajectory, residual
//! and linearization files.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use tenseg::builtins::Builtin;
use tenseg::integrator::Method;
use tenseg_cli::{run, run_batch, MaterialChoice, ModelSource, RunConfig, RunError};

#[derive(Parser, Debug)]
#[command(
    name = "tenseg",
    about = "Tensegrity dynamics: drift-free simulation of bar-and-string structures",
    after_help = "Exit codes: 0 success, 2 configuration error, 3 numerical failure."
)]
struct Cli {
    /// Built-in model: tbar, arm or ball.
    #[arg(long, conflicts_with = "model_file")]
    model: Option<String>,

    /// Structure definition file (see the repository README for the schema).
    #[arg(long)]
    model_file: Option<PathBuf>,

    /// Simulation duration in seconds.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,

    /// Relative integration tolerance.
    #[arg(long, default_value_t = 1e-10)]
    rtol: f64,

    /// Absolute integration tolerance.
    #[arg(long, default_value_t = 1e-10)]
    atol: f64,

    /// Correction threshold for the constraint norm and energy residual.
    #[arg(long, default_value_t = 1e-10)]
    gamma: f64,

    /// Disable the geometric (position/velocity) correction.
    #[arg(long)]
    no_geometric_correction: bool,

    /// Disable the energy correction.
    #[arg(long)]
    no_energy_correction: bool,

    /// Use the compressible-bar formulation.
    #[arg(long)]
    compressible: bool,

    /// Bar material for --compressible: hdpe, aluminium or custom
    /// (custom reads the `[compressible]` block of the model file).
    #[arg(long, default_value = "aluminium")]
    material: String,

    /// Integration method: dp54 or trapezoidal. Defaults to dp54, or
    /// trapezoidal for --compressible runs.
    #[arg(long)]
    method: Option<String>,

    /// Fixed step size for the trapezoidal method, seconds.
    #[arg(long)]
    step: Option<f64>,

    /// Export the state-space linearization about the initial state.
    #[arg(long)]
    linearize: bool,

    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Seed for the velocity perturbation noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Perturb initial velocities uniformly in [-eps, eps] (m/s).
    #[arg(long, default_value_t = 0.0)]
    perturb: f64,

    /// Record every n-th accepted step.
    #[arg(long, default_value_t = 1)]
    record_every: usize,

    /// Disable the built-in benchmark forcing profile.
    #[arg(long)]
    no_forcing: bool,

    /// Override the structure's damping coefficient (N s/m).
    #[arg(long)]
    damping: Option<f64>,

    /// Batch manifest: each non-comment line holds arguments for one run;
    /// runs are distributed over worker threads.
    #[arg(long, conflicts_with_all = ["model", "model_file"])]
    batch: Option<PathBuf>,

    /// Worker threads for --batch.
    #[arg(long, default_value_t = 4)]
    threads: usize,
}

fn to_config(cli: Cli) -> Result<RunConfig, RunError> {
    let source = match (&cli.model, &cli.model_file) {
        (Some(name), None) => {
            let builtin = Builtin::from_name(name).ok_or_else(|| {
                RunError::Config(format!("unknown model `{name}` (tbar, arm, ball)"))
            })?;
            ModelSource::Builtin(builtin)
        }
        (None, Some(path)) => ModelSource::File(path.clone()),
        _ => {
            return Err(RunError::Config(
                "exactly one of --model or --model-file is required".into(),
            ))
        }
    };
    let mut config = RunConfig::new(source);
    config.duration = cli.duration;
    config.rel_tol = cli.rtol;
    config.abs_tol = cli.atol;
    config.gamma = cli.gamma;
    config.geometric_correction = !cli.no_geometric_correction;
    config.energy_correction = !cli.no_energy_correction;
    config.compressible = cli.compressible;
    config.material = match cli.material.as_str() {
        "hdpe" => MaterialChoice::Hdpe,
        "aluminium" | "aluminum" => MaterialChoice::Aluminium,
        "custom" => MaterialChoice::FromFile,
        other => {
            return Err(RunError::Config(format!(
                "unknown material `{other}` (hdpe, aluminium, custom)"
            )))
        }
    };
    config.method = match cli.method.as_deref() {
        None => None,
        Some("dp54") => Some(Method::Dp54),
        Some("trapezoidal") => Some(Method::ImplicitTrapezoidal),
        Some(other) => {
            return Err(RunError::Config(format!(
                "unknown method `{other}` (dp54, trapezoidal)"
            )))
        }
    };
    config.fixed_step = cli.step;
    config.linearize = cli.linearize;
    config.out_dir = cli.out;
    config.seed = cli.seed;
    config.perturb = cli.perturb;
    config.record_every = cli.record_every;
    config.forcing = !cli.no_forcing;
    config.damping_override = cli.damping;
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if let Some(manifest) = cli.batch.clone() {
        return run_batch_main(&cli, &manifest);
    }

    let config = match to_config(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(&config) {
        Ok(summary) => {
            println!(
                "done: t = {:.6} s, {} accepted steps",
                summary.final_time, summary.accepted_steps
            );
            println!(
                "max constraint norm {:.3e}, max energy residual {:.3e}",
                summary.max_constraint_norm, summary.max_energy_residual
            );
            println!(
                "wrote {} and {}",
                summary.trajectory_path.display(),
                summary.residuals_path.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run_batch_main(cli: &Cli, manifest: &PathBuf) -> ExitCode {
    let text = match std::fs::read_to_string(manifest) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read batch manifest: {e}");
            return ExitCode::from(2);
        }
    };
    let mut configs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let run_number = configs.len() + 1;
        // Each manifest line is parsed like a command line (no quoting).
        let args = std::iter::once("tenseg").chain(line.split_whitespace());
        let sub = match Cli::try_parse_from(args) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("batch line {}: {e}", idx + 1);
                return ExitCode::from(2);
            }
        };
        let mut config = match to_config(sub) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("batch line {}: {e}", idx + 1);
                return ExitCode::from(e.exit_code() as u8);
            }
        };
        // Nest default output directories so runs do not collide.
        config.out_dir = cli.out.join(format!("run{run_number:03}"));
        configs.push(config);
    }

    let results = run_batch(configs, cli.threads);
    let mut worst = 0;
    for (index, outcome) in &results {
        match outcome {
            Ok(summary) => println!(
                "run {:03}: ok ({} steps, max |R| {:.3e})",
                index + 1,
                summary.accepted_steps,
                summary.max_constraint_norm
            ),
            Err(e) => {
                eprintln!("run {:03}: {e}", index + 1);
                worst = worst.max(e.exit_code());
            }
        }
    }
    ExitCode::from(worst as u8)
}
