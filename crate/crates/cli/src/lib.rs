//! Run configuration, output files and the simulation driver behind the
//! `tenseg` command-line tool.
//!
//! Outputs are CSV with commented headers naming columns and units:
//!
//! - `trajectory.csv`: one row per recorded step: `t`, the coordinates
//!   (node-major, meters), the velocities (m/s), and the accumulated
//!   non-conservative work `W_f` (J). Values carry full round-trip
//!   precision, so a re-read trajectory reproduces the stored residuals.
//! - `residuals.csv`: `t`, the constraint 2-norm, the per-bar squared
//!   length residuals `| |b_k|^2 - l_k^2 |` (rigid runs), the work-energy
//!   residual `E - E0 - W_f`, and the correction iteration count.
//! - `linearization_*.txt` (with `--linearize`): dense matrices in the
//!   plain-text format of `tenseg::linearization::matrix_to_text`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use tenseg::builtins::Builtin;
use tenseg::compressible::{self, CompressibleSystem, Material};
use tenseg::correction::CorrectionSettings;
use tenseg::integrator::{self, IntegratorSettings, Method, RigidSystem, Trajectory};
use tenseg::linearization::{self, matrix_to_text, OperatingPoint};
use tenseg::modelfile;
use tenseg::rigid;
use tenseg::state::{ForceInputs, SystemState};
use tenseg::topology::{build_structure, AssembledModel, TensegrityStructure};

#[derive(Debug)]
pub enum RunError {
    Config(String),
    Io(std::io::Error),
    Numerical(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(msg) => write!(f, "configuration error: {msg}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
            RunError::Numerical(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

impl RunError {
    /// 2 for configuration errors, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Io(_) => 2,
            RunError::Numerical(_) => 3,
        }
    }
}

/// Which structure a run simulates.
#[derive(Debug, Clone)]
pub enum ModelSource {
    Builtin(Builtin),
    File(PathBuf),
}

/// Bar material selection for `--compressible`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaterialChoice {
    Hdpe,
    Aluminium,
    /// Take the `[compressible]` block from the model file.
    FromFile,
}

/// One simulation run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub source: ModelSource,
    pub duration: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub gamma: f64,
    pub geometric_correction: bool,
    pub energy_correction: bool,
    pub compressible: bool,
    pub material: MaterialChoice,
    pub method: Option<Method>,
    pub fixed_step: Option<f64>,
    pub linearize: bool,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Uniform velocity perturbation magnitude applied at t = 0.
    pub perturb: f64,
    pub record_every: usize,
    /// Apply the builtin benchmark forcing profile (ignored for files).
    pub forcing: bool,
    pub damping_override: Option<f64>,
}

impl RunConfig {
    pub fn new(source: ModelSource) -> Self {
        Self {
            source,
            duration: 10.0,
            rel_tol: 1e-10,
            abs_tol: 1e-10,
            gamma: 1e-10,
            geometric_correction: true,
            energy_correction: true,
            compressible: false,
            material: MaterialChoice::Aluminium,
            method: None,
            fixed_step: None,
            linearize: false,
            out_dir: PathBuf::from("out"),
            seed: 0,
            perturb: 0.0,
            record_every: 1,
            forcing: true,
            damping_override: None,
        }
    }

    fn validate(&self) -> Result<(), RunError> {
        if !(self.duration > 0.0) {
            return Err(RunError::Config("duration must be positive".into()));
        }
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0 && self.gamma > 0.0) {
            return Err(RunError::Config(
                "rtol, atol and gamma must be positive".into(),
            ));
        }
        if self.record_every == 0 {
            return Err(RunError::Config("record-every must be at least 1".into()));
        }
        Ok(())
    }
}

/// What `run` produced, for logging and tests.
#[derive(Debug)]
pub struct RunSummary {
    pub trajectory_path: PathBuf,
    pub residuals_path: PathBuf,
    pub accepted_steps: usize,
    pub max_constraint_norm: f64,
    pub max_energy_residual: f64,
    pub final_time: f64,
}

struct PreparedModel {
    model: Arc<AssembledModel<f64>>,
    inputs: ForceInputs<f64>,
    bar_material: Option<Material<f64>>,
    name: String,
}

fn prepare(config: &RunConfig) -> Result<PreparedModel, RunError> {
    let (mut structure, inputs, file_material, name): (
        TensegrityStructure<f64>,
        ForceInputs<f64>,
        Option<Material<f64>>,
        String,
    ) = match &config.source {
        ModelSource::Builtin(b) => {
            let inputs = if config.forcing {
                b.inputs()
            } else {
                ForceInputs::free()
            };
            (b.structure(), inputs, None, b.name().to_string())
        }
        ModelSource::File(path) => {
            let text = std::fs::read_to_string(path)?;
            let parsed = modelfile::parse_structure(&text)
                .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "model".into());
            (
                parsed.structure,
                ForceInputs::free(),
                parsed.bar_material,
                name,
            )
        }
    };

    if let Some(c) = config.damping_override {
        structure.damping_coefficient = c;
    }

    let bar_material = if config.compressible {
        let material = match config.material {
            MaterialChoice::Hdpe => Material::hdpe(),
            MaterialChoice::Aluminium => Material::aluminium(),
            MaterialChoice::FromFile => file_material.ok_or_else(|| {
                RunError::Config(
                    "material custom requires a [compressible] block in the model file".into(),
                )
            })?,
        };
        structure = compressible::with_bar_material(&structure, &material);
        Some(material)
    } else {
        None
    };

    let model = build_structure(structure)
        .map_err(|e| RunError::Config(format!("invalid structure: {e}")))?;
    Ok(PreparedModel {
        model: Arc::new(model),
        inputs,
        bar_material,
        name,
    })
}

/// Deterministic uniform noise in [-1, 1) (xorshift64*), used for the
/// seeded perturbation studies.
pub struct NoiseSource {
    state: u64,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self {
            state: seed.wrapping_mul(2685821657736338717).max(1),
        }
    }

    pub fn next_uniform(&mut self) -> f64 {
        self.state ^= self.state << 13;
        self.state ^= self.state >> 7;
        self.state ^= self.state << 17;
        (self.state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }
}

fn initial_state(config: &RunConfig, model: &AssembledModel<f64>) -> SystemState<f64> {
    let mut state = SystemState::at_rest(model);
    if config.perturb != 0.0 {
        let mut noise = NoiseSource::new(config.seed);
        for v in state.qdot.iter_mut() {
            *v = config.perturb * noise.next_uniform();
        }
        // Keep boundary-constrained coordinates at rest.
        for &node in &model.structure.fixed_nodes {
            for r in 0..3 {
                state.qdot[3 * node + r] = 0.0;
            }
        }
        for &(node, axis) in &model.structure.pinned_coords {
            state.qdot[3 * node + axis.index()] = 0.0;
        }
    }
    state
}

fn integrator_settings(config: &RunConfig, prepared: &PreparedModel) -> IntegratorSettings<f64> {
    let mut settings = IntegratorSettings::default();
    settings.rel_tol = config.rel_tol;
    settings.abs_tol = config.abs_tol;
    settings.correction = CorrectionSettings {
        gamma: config.gamma,
        max_iterations: 10,
        energy_correction_enabled: config.energy_correction,
        geometric_correction_enabled: config.geometric_correction,
    };
    settings.record_stride = config.record_every;
    settings.method = config.method.unwrap_or(if config.compressible {
        Method::ImplicitTrapezoidal
    } else {
        Method::Dp54
    });
    settings.fixed_step = config.fixed_step.unwrap_or({
        // Stiffer (metallic) bars need the smaller default step.
        match prepared.bar_material {
            Some(m) if m.youngs_modulus >= 1e10 => 1e-5,
            _ => 1e-4,
        }
    });
    settings
}

/// Runs one simulation and writes the output files.
pub fn run(config: &RunConfig) -> Result<RunSummary, RunError> {
    config.validate()?;
    let prepared = prepare(config)?;
    let model = prepared.model.as_ref();
    let settings = integrator_settings(config, &prepared);
    let state0 = initial_state(config, model);

    std::fs::create_dir_all(&config.out_dir)?;

    if config.linearize {
        write_linearization(config, &prepared)?;
    }

    let outcome = if config.compressible {
        let material = prepared.bar_material.as_ref().expect("material prepared");
        let props = compressible::props_from_material(model, material);
        let system = CompressibleSystem::new(model, &props, &prepared.inputs);
        integrator::simulate(&system, &state0, &settings, config.duration)
    } else {
        let system = RigidSystem::new(model, &prepared.inputs);
        integrator::simulate(&system, &state0, &settings, config.duration)
    };

    let trajectory_path = config.out_dir.join("trajectory.csv");
    let residuals_path = config.out_dir.join("residuals.csv");
    let trajectory = match outcome {
        Ok(t) => t,
        Err(failure) => {
            // Dump what we have: the partial files and the last good state.
            if !failure.partial.points.is_empty() {
                write_trajectory(&trajectory_path, &prepared.name, model, &failure.partial)?;
                write_residuals(&residuals_path, &prepared.name, model, &failure.partial)?;
                let last = failure.partial.last_state();
                let mut dump = format!(
                    "# last good state before failure\n# {}\nt = {:.17e}\nW_f = {:.17e}\n",
                    failure.error, last.t, last.w_f
                );
                dump.push_str("q =");
                for v in last.q.iter() {
                    dump.push_str(&format!(" {v:.17e}"));
                }
                dump.push_str("\nqdot =");
                for v in last.qdot.iter() {
                    dump.push_str(&format!(" {v:.17e}"));
                }
                dump.push('\n');
                std::fs::write(config.out_dir.join("failure.txt"), dump)?;
            }
            return Err(RunError::Numerical(failure.error.to_string()));
        }
    };
    write_trajectory(&trajectory_path, &prepared.name, model, &trajectory)?;
    write_residuals(&residuals_path, &prepared.name, model, &trajectory)?;

    Ok(RunSummary {
        trajectory_path,
        residuals_path,
        accepted_steps: trajectory.accepted_steps,
        max_constraint_norm: trajectory.max_constraint_norm,
        max_energy_residual: trajectory.max_energy_residual,
        final_time: trajectory.last_state().t,
    })
}

fn write_linearization(config: &RunConfig, prepared: &PreparedModel) -> Result<(), RunError> {
    let model = prepared.model.as_ref();
    if config.compressible {
        let material = prepared.bar_material.as_ref().expect("material prepared");
        let props = compressible::props_from_material(model, material);
        let sigma = rigid::string_force_densities(model, &model.q0)
            .map_err(|e| RunError::Numerical(e.to_string()))?;
        let psi = compressible::bar_force_densities(model, &props, &model.q0)
            .map_err(|e| RunError::Numerical(e.to_string()))?;
        let f0 = nalgebra::DVector::zeros(model.dim());
        let lin = compressible::linearize_compressible(model, &props, &model.q0, &sigma, &psi, &f0)
            .map_err(|e| RunError::Numerical(format!("compressible linearization failed: {e}")))?;
        write_text(
            &config.out_dir.join("linearization_a.txt"),
            &matrix_to_text("A (compressible)", &lin.a),
        )?;
        write_text(
            &config.out_dir.join("linearization_b_u.txt"),
            &matrix_to_text("B_u over [sigma; psi]", &lin.b_u),
        )?;
        write_text(
            &config.out_dir.join("linearization_b_f.txt"),
            &matrix_to_text("B_f (compressible)", &lin.b_f),
        )?;
    } else {
        let op = OperatingPoint::rest(model).map_err(|e| RunError::Numerical(e.to_string()))?;
        let lin = linearization::linearize_rigid(model, &op)
            .map_err(|e| RunError::Numerical(e.to_string()))?;
        write_text(
            &config.out_dir.join("linearization_a.txt"),
            &matrix_to_text("A", &lin.a),
        )?;
        write_text(
            &config.out_dir.join("linearization_b_sigma.txt"),
            &matrix_to_text("B_sigma", &lin.b_sigma),
        )?;
        write_text(
            &config.out_dir.join("linearization_b_f.txt"),
            &matrix_to_text("B_f", &lin.b_f),
        )?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), RunError> {
    std::fs::write(path, text)?;
    Ok(())
}

fn axis_name(r: usize) -> char {
    match r {
        0 => 'x',
        1 => 'y',
        _ => 'z',
    }
}

fn write_trajectory(
    path: &Path,
    name: &str,
    model: &AssembledModel<f64>,
    trajectory: &Trajectory<f64>,
) -> Result<(), RunError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n = model.structure.nodes.len();
    writeln!(out, "# tenseg trajectory for model `{name}`")?;
    writeln!(
        out,
        "# units: t in s, coordinates in m, velocities in m/s, W_f in J"
    )?;
    writeln!(out, "# node indices are 1-based")?;
    let mut header = vec!["t".to_string()];
    for i in 0..n {
        for r in 0..3 {
            header.push(format!("n{}_{}", i + 1, axis_name(r)));
        }
    }
    for i in 0..n {
        for r in 0..3 {
            header.push(format!("v{}_{}", i + 1, axis_name(r)));
        }
    }
    header.push("W_f".to_string());
    writeln!(out, "{}", header.join(","))?;
    for point in &trajectory.points {
        let s = &point.state;
        let mut row = Vec::with_capacity(6 * n + 2);
        row.push(format!("{:.17e}", s.t));
        row.extend(s.q.iter().map(|v| format!("{v:.17e}")));
        row.extend(s.qdot.iter().map(|v| format!("{v:.17e}")));
        row.push(format!("{:.17e}", s.w_f));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

fn write_residuals(
    path: &Path,
    name: &str,
    model: &AssembledModel<f64>,
    trajectory: &Trajectory<f64>,
) -> Result<(), RunError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let with_bars = trajectory
        .points
        .first()
        .map(|p| !p.bar_residuals.is_empty())
        .unwrap_or(false);
    writeln!(out, "# tenseg residual series for model `{name}`")?;
    writeln!(
        out,
        "# constraint_norm is |R|_2; bar residuals are | |b_k|^2 - l_k^2 | in m^2;"
    )?;
    writeln!(out, "# energy_residual is E - E0 - W_f in J")?;
    let mut header = vec!["t".to_string(), "constraint_norm".to_string()];
    if with_bars {
        for k in 0..model.num_bars() {
            header.push(format!("bar{}_sq_residual", k + 1));
        }
    }
    header.push("energy_residual".to_string());
    header.push("correction_iterations".to_string());
    writeln!(out, "{}", header.join(","))?;
    for point in &trajectory.points {
        let mut row = vec![
            format!("{:.17e}", point.state.t),
            format!("{:.17e}", point.constraint_norm),
        ];
        if with_bars {
            row.extend(point.bar_residuals.iter().map(|v| format!("{v:.17e}")));
        }
        row.push(format!("{:.17e}", point.energy_residual));
        row.push(format!("{}", point.report.iterations));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads back a trajectory CSV into states (for round-trip checks).
pub fn read_trajectory(path: &Path) -> Result<Vec<SystemState<f64>>, RunError> {
    let text = std::fs::read_to_string(path)?;
    let mut states = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with('t') || line.trim().is_empty() {
            continue;
        }
        let values: Result<Vec<f64>, _> = line.split(',').map(|tok| tok.parse::<f64>()).collect();
        let values = values.map_err(|e| RunError::Config(format!("bad trajectory row: {e}")))?;
        let dim = (values.len() - 2) / 2;
        let q = nalgebra::DVector::from_iterator(dim, values[1..1 + dim].iter().cloned());
        let qdot =
            nalgebra::DVector::from_iterator(dim, values[1 + dim..1 + 2 * dim].iter().cloned());
        states.push(SystemState::new(
            values[0],
            q,
            qdot,
            values[values.len() - 1],
        ));
    }
    Ok(states)
}

/// Runs a batch of configs across worker threads. Each run builds its
/// (immutable, thread-safe) model and writes into its own output
/// directory.
pub fn run_batch(
    configs: Vec<RunConfig>,
    threads: usize,
) -> Vec<(usize, Result<RunSummary, RunError>)> {
    let jobs: Vec<(usize, RunConfig)> = configs.into_iter().enumerate().collect();
    let jobs = Arc::new(std::sync::Mutex::new(jobs));
    let results = Arc::new(std::sync::Mutex::new(Vec::new()));
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1) {
            let jobs = Arc::clone(&jobs);
            let results = Arc::clone(&results);
            scope.spawn(move || loop {
                let job = jobs.lock().expect("jobs lock").pop();
                match job {
                    Some((index, config)) => {
                        let outcome = run(&config);
                        results.lock().expect("results lock").push((index, outcome));
                    }
                    None => break,
                }
            });
        }
    });
    let mut out = Arc::try_unwrap(results)
        .expect("threads joined")
        .into_inner()
        .expect("results lock");
    out.sort_by_key(|(i, _)| *i);
    out
}
