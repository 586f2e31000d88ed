//! Command-line front end.
//!
//! Every command writes a JSON envelope carrying a schema tag, the config it
//! ran with, the seed and the data; the wall-clock time sits in its own
//! `generated_at` field. Exit codes: 0 success, 1 failed check or solver
//! failure, 2 configuration error.

use crate::checks::{
    complex_laplacian_min_eigenvalue, integration_by_parts, laplacian_consistency, linearization_check,
    volume_invariance, CheckResult,
};
use crate::error::{Error, Result};
use crate::estimates::{apriori_report, DiameterOptions, EstimateOptions, EstimateReport};
use crate::functionals::{
    identity_inputs_from, sample_identity_inputs, verify_functional_identities, CheckKind, FunctionalReport,
};
use crate::ma_solver::{
    continuity_solve, uniqueness_experiment, ContinuityFamily, Equation, SolverOptions, UniquenessReport,
};
use crate::model::{build_model, metric_state, ModelConfig, SymmetryMode, TransverseModel};
use crate::sampling::{random_potential, seeded_rng, DEFAULT_MARGIN};
use crate::spectral::{
    basic_spectrum, hamiltonian_fields, HamiltonianFieldRecord, SpectrumSummary, DETECTOR_COUNT, KERNEL_THRESHOLD,
};
use clap::{Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const OUT_DIR_ENV: &str = "SASAKI_LAB_OUT_DIR";
const SCHEMA_PREFIX: &str = "sasaki-lab";

/// Experiment configuration file: the model keys plus optional tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub band_limit: usize,
    #[serde(default = "default_fiber_length")]
    pub fiber_length: f64,
    #[serde(default)]
    pub symmetry_mode: SymmetryMode,
    #[serde(default)]
    pub perturbation: Vec<(usize, i64, f64)>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub solver: SolverOverrides,
    #[serde(default)]
    pub diameter: DiameterOptions,
}

fn default_fiber_length() -> f64 {
    2.0 * std::f64::consts::PI
}

/// Solver keys accepted in the `[solver]` table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub initial_step: Option<f64>,
    pub min_step: Option<f64>,
    pub max_step: Option<f64>,
    pub shrink: Option<f64>,
    pub grow: Option<f64>,
    pub project_near_kernel: Option<bool>,
    pub kernel_threshold: Option<f64>,
    pub t_nodes: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            band_limit: self.band_limit,
            fiber_length: self.fiber_length,
            symmetry_mode: self.symmetry_mode,
            perturbation: self.perturbation.clone(),
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        let mut o = SolverOptions::default();
        let s = &self.solver;
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = s.$f.clone() { o.$f = v; })* };
        }
        set!(
            tolerance,
            max_iterations,
            initial_step,
            min_step,
            max_step,
            shrink,
            grow,
            project_near_kernel,
            kernel_threshold,
            t_nodes
        );
        o
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema: String,
    pub module: String,
    pub operation: String,
    pub config: ExperimentConfig,
    pub seed: Option<u64>,
    pub data: T,
    pub generated_at: u64,
}

fn envelope<T>(
    kind: &str,
    module: &str,
    operation: &str,
    config: &ExperimentConfig,
    seed: Option<u64>,
    data: T,
) -> Envelope<T> {
    let generated_at =
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    Envelope {
        schema: format!("{SCHEMA_PREFIX}/{kind}/v1"),
        module: module.into(),
        operation: operation.into(),
        config: config.clone(),
        seed,
        data,
        generated_at,
    }
}

#[derive(Parser, Debug)]
#[command(name = "sasaki-lab", version, about = "Continuity-method lab on the Hopf Sasakian model")]
struct Cli {
    /// Output directory for default file names (overrides the environment).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the model and write its node fields.
    Model {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the continuity method.
    Solve {
        #[arg(long, default_value = "s2")]
        eqn: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        t_final: Option<f64>,
        /// Uniform output spacing in t.
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also run the uniqueness experiment with these seeds (even mode).
        #[arg(long, value_delimiter = ',')]
        uniqueness_seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the functional identities on random samples.
    Functionals {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// A priori estimate report for a solved family.
    Estimates {
        #[arg(long)]
        family: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        diameter_samples: Option<usize>,
        #[arg(long)]
        diameter_neighbors: Option<usize>,
        #[arg(long)]
        no_diameter: bool,
    },
    /// Weighted Laplacian spectrum and Hamiltonian field detection.
    Spectrum {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 12)]
        count: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full invariant suite; nonzero exit on any failure.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        skip_solve: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge earlier outputs into one status line per check.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `argv` (including the program name), runs and returns the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let code = exit_code(&e);
            let record = serde_json::json!({ "error": error_kind(&e), "message": e.to_string(), "exit_code": code });
            eprintln!("{record}");
            code
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::BackgroundNotPositive { .. } | Error::OddPerturbation { .. } => 2,
        _ => 1,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::BackgroundNotPositive { .. } => "background_not_positive",
        Error::OddPerturbation { .. } => "odd_perturbation",
        Error::NewtonDivergence { .. } => "newton_divergence",
        Error::PositivityLost { .. } => "positivity_lost",
        Error::SingularOperator { .. } => "singular_operator",
        Error::Io(_) => "io",
        _ => "runtime",
    }
}

fn out_dir(cli_dir: &Option<PathBuf>) -> PathBuf {
    cli_dir.clone().or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("."))
}

fn resolve(dir: &Path, explicit: &Option<PathBuf>, default: &str) -> Result<PathBuf> {
    let path = explicit.clone().unwrap_or_else(|| dir.join(default));
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(path)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn csv_path(json: &Path) -> PathBuf {
    json.with_extension("csv")
}

fn load(config: &Path) -> Result<(ExperimentConfig, Arc<TransverseModel>)> {
    let cfg = ExperimentConfig::from_file(config)?;
    let model = build_model(cfg.model_config())?;
    Ok((cfg, model))
}

fn dispatch(cli: Cli) -> Result<bool> {
    let dir = out_dir(&cli.out_dir);
    match cli.command {
        Command::Model { config, out } => cmd_model(&config, &resolve(&dir, &out, "model.json")?),
        Command::Solve { eqn, config, t_final, dt, seed, uniqueness_seeds, out } => {
            let eqn: Equation = eqn.parse().map_err(|_| Error::Config(format!("unknown equation {eqn:?}")))?;
            cmd_solve(eqn, &config, t_final, dt, seed, &uniqueness_seeds, &resolve(&dir, &out, "family.json")?)
        }
        Command::Functionals { config, samples, seed, out } => {
            cmd_functionals(&config, samples, seed, &resolve(&dir, &out, "functionals.json")?)
        }
        Command::Estimates { family, out, diameter_samples, diameter_neighbors, no_diameter } => cmd_estimates(
            &family,
            diameter_samples,
            diameter_neighbors,
            no_diameter,
            &resolve(&dir, &out, "report.json")?,
        ),
        Command::Spectrum { config, count, out } => {
            cmd_spectrum(&config, count, &resolve(&dir, &out, "spectrum.json")?)
        }
        Command::Verify { config, samples, seed, skip_solve, out } => {
            cmd_verify(&config, samples, seed, skip_solve, &resolve(&dir, &out, "verify.json")?)
        }
        Command::Report { inputs, out } => cmd_report(&inputs, out.as_deref()),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelSummary {
    pub band_limit: usize,
    pub n_modes: usize,
    pub n_nodes: usize,
    pub volume: f64,
    pub min_background_density: f64,
    pub ricci_closed_form_gap: f64,
    pub ricci_ddbar_residual: f64,
    pub ricci_normalization_residual: f64,
    pub class_residual: f64,
}

fn model_summary(model: &TransverseModel) -> ModelSummary {
    let r = model.ricci_report();
    ModelSummary {
        band_limit: model.band_limit(),
        n_modes: model.grid().n_modes(),
        n_nodes: model.grid().n_nodes(),
        volume: model.volume(),
        min_background_density: model.background_density().iter().copied().fold(f64::INFINITY, f64::min),
        ricci_closed_form_gap: r.closed_form_gap,
        ricci_ddbar_residual: r.ddbar_residual,
        ricci_normalization_residual: r.normalization_residual,
        class_residual: r.class_residual,
    }
}

fn cmd_model(config: &Path, out: &Path) -> Result<bool> {
    let (cfg, model) = load(config)?;
    write_json(out, &envelope("model", "model", "build_model", &cfg, cfg.seed, model_summary(&model)))?;
    let mut w = csv::Writer::from_path(csv_path(out))?;
    w.write_record(["node", "theta", "phi", "weight", "density", "psi", "h"])?;
    let grid = model.grid();
    let weights = model.node_weights();
    for (i, weight) in weights.iter().enumerate() {
        let (theta, phi) = grid.node_angles(i);
        w.write_record([
            i.to_string(),
            theta.to_string(),
            phi.to_string(),
            weight.to_string(),
            model.background_density()[i].to_string(),
            model.background_potential().values()[i].to_string(),
            model.ricci_potential().values()[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(true)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SolveOutput {
    pub options: SolverOptions,
    pub family: ContinuityFamily,
    pub final_curvature_residual: Option<f64>,
    /// `max_t |V(u_t) - V| / V` over the family states.
    pub volume_max_relative_error: f64,
    /// Functional identities evaluated on consecutive family states.
    pub functionals: Option<FunctionalReport>,
    pub uniqueness: Option<UniquenessReport>,
}

fn curvature_residual(family: &ContinuityFamily) -> Option<f64> {
    let st = family.last_state()?;
    let target = st.model().m() as f64 * st.model().einstein_constant();
    let s = st.scalar_curvature_values().ok()?;
    Some(s.iter().fold(0.0f64, |a, v| a.max((v - target).abs())))
}

fn cmd_solve(
    eqn: Equation,
    config: &Path,
    t_final: Option<f64>,
    dt: Option<f64>,
    seed: Option<u64>,
    uniqueness_seeds: &[u64],
    out: &Path,
) -> Result<bool> {
    let (cfg, model) = load(config)?;
    let mut opts = cfg.solver_options();
    if let Some(dt) = dt {
        if !(dt > 0.0 && dt <= 1.0) {
            return Err(Error::Config(format!("dt must lie in (0, 1], got {dt}")));
        }
        opts = opts.with_step(dt);
    }
    if let Some(t) = t_final {
        opts.t_final = t;
    }
    opts.seed = seed.or(cfg.seed);
    opts.validate().map_err(|e| Error::Config(e.to_string()))?;
    let family = continuity_solve(&model, eqn, &opts)?;
    let uniqueness = if uniqueness_seeds.is_empty() {
        None
    } else {
        let mut o = opts.clone();
        o.seed = None;
        Some(uniqueness_experiment(&model, eqn, uniqueness_seeds, &o)?)
    };
    let ok = family.reached_target
        && uniqueness
            .as_ref()
            .is_none_or(|u| u.max_pairwise < 1e-7 && u.backward.as_ref().is_some_and(|b| b.endpoint_distance < 1e-7));
    let mut w = csv::Writer::from_path(csv_path(out))?;
    w.write_record(["t", "residual", "L", "M", "I", "J", "min_singular_value", "newton_iterations"])?;
    for n in &family.nodes {
        w.write_record([
            n.t.to_string(),
            n.residual_norm.to_string(),
            n.traces.l.to_string(),
            n.traces.m.to_string(),
            n.traces.i.to_string(),
            n.traces.j.to_string(),
            n.min_singular_value.map_or(String::new(), |v| v.to_string()),
            n.newton_iterations.to_string(),
        ])?;
    }
    w.flush()?;
    let volume_max_relative_error =
        family.states.iter().fold(0.0f64, |a, st| a.max((st.volume() - model.volume()).abs() / model.volume()));
    let potentials: Vec<_> = family.states.iter().map(|st| st.potential().clone()).collect();
    let functionals = if potentials.len() >= 3 {
        let seed = opts.seed.unwrap_or(0);
        Some(verify_functional_identities(&model, &identity_inputs_from(&model, &potentials, seed), seed)?)
    } else {
        None
    };
    let ok = ok && volume_max_relative_error < 1e-8 && functionals.as_ref().is_none_or(|f| f.all_pass);
    let data = SolveOutput {
        final_curvature_residual: curvature_residual(&family),
        volume_max_relative_error,
        functionals,
        options: opts.clone(),
        family,
        uniqueness,
    };
    write_json(out, &envelope("family", "ma_solver", "continuity_solve", &cfg, opts.seed, data))?;
    Ok(ok)
}

fn cmd_functionals(config: &Path, samples: usize, seed: Option<u64>, out: &Path) -> Result<bool> {
    let (cfg, model) = load(config)?;
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let inputs = sample_identity_inputs(&model, samples, seed);
    let report = verify_functional_identities(&model, &inputs, seed)?;
    let mut w = csv::Writer::from_path(csv_path(out))?;
    w.write_record(["sample", "identity", "kind", "value", "tolerance", "pass"])?;
    for r in &report.records {
        let kind = match r.kind {
            CheckKind::Residual => "residual",
            CheckKind::Margin => "margin",
        };
        w.write_record([
            r.sample.to_string(),
            r.identity.clone(),
            kind.into(),
            r.value.to_string(),
            r.tolerance.to_string(),
            r.pass.to_string(),
        ])?;
    }
    w.flush()?;
    let ok = report.all_pass;
    write_json(out, &envelope("functionals", "functionals", "verify_functional_identities", &cfg, Some(seed), report))?;
    Ok(ok)
}

fn cmd_estimates(
    family_path: &Path,
    samples: Option<usize>,
    neighbors: Option<usize>,
    no_diameter: bool,
    out: &Path,
) -> Result<bool> {
    let env: Envelope<SolveOutput> = read_json(family_path)?;
    let model = build_model(env.config.model_config())?;
    let mut family = env.data.family;
    family.restore_states(&model)?;
    let mut diam = env.config.diameter.clone();
    if let Some(s) = samples {
        diam.samples = s;
    }
    if let Some(k) = neighbors {
        diam.neighbors = k;
    }
    let options = EstimateOptions { diameter: (!no_diameter).then_some(diam) };
    let report = apriori_report(&family, &options)?;
    let mut w = csv::Writer::from_path(csv_path(out))?;
    w.write_record([
        "t",
        "osc",
        "I",
        "J",
        "M",
        "dM_dt",
        "dM_dt_predicted",
        "oscillation_slack",
        "t_osc",
        "l_minus_u_at_x_t",
    ])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in &report.records {
        w.write_record([
            r.t.to_string(),
            r.osc.to_string(),
            r.i.to_string(),
            r.j.to_string(),
            r.m.to_string(),
            opt(r.dm_dt),
            opt(r.dm_dt_predicted),
            opt(r.oscillation_slack),
            r.t_osc.to_string(),
            r.l_minus_u_at_x_t.to_string(),
        ])?;
    }
    w.flush()?;
    let ok =
        report.monotone_pass && report.oscillation_pass && report.x_t_pass && report.l_gap_pass && report.rescaled_pass;
    write_json(out, &envelope("estimates", "estimates", "apriori_report", &env.config, env.seed, report))?;
    Ok(ok)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SpectrumOutput {
    pub spectrum: SpectrumSummary,
    pub kernel_count: usize,
    pub fields: Vec<HamiltonianFieldRecord>,
    pub detector_error: Option<String>,
}

fn cmd_spectrum(config: &Path, count: usize, out: &Path) -> Result<bool> {
    let (cfg, model) = load(config)?;
    let state = metric_state(&model, model.zero())?;
    let n = count.max(DETECTOR_COUNT).min(model.grid().n_modes());
    let full = basic_spectrum(&state, n)?;
    let target = model.einstein_constant();
    let kernel_count = full.eigenvalues.iter().filter(|v| (*v - target).abs() < KERNEL_THRESHOLD).count();
    let (fields, detector_error) = match hamiltonian_fields(&full) {
        Ok(f) => (f, None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    let shown = basic_spectrum(&state, count.min(model.grid().n_modes()))?;
    let mut w = csv::Writer::from_path(csv_path(out))?;
    w.write_record(["index", "eigenvalue"])?;
    for (i, v) in shown.eigenvalues.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    let ok = full.lower_bound_holds()
        && detector_error.is_none()
        && fields.len() == kernel_count
        && fields.iter().all(|f| f.passes());
    let data = SpectrumOutput { spectrum: SpectrumSummary::from(&shown), kernel_count, fields, detector_error };
    write_json(out, &envelope("spectrum", "spectral", "basic_spectrum", &cfg, cfg.seed, data))?;
    Ok(ok)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerifyOutput {
    pub checks: Vec<CheckResult>,
    pub functionals: FunctionalReport,
    pub estimates: Option<EstimateReport>,
    pub all_pass: bool,
}

/// Runs the invariant suite for one model.
pub fn run_verification(
    model: &Arc<TransverseModel>,
    opts: &SolverOptions,
    samples: usize,
    seed: u64,
    solve: bool,
) -> Result<VerifyOutput> {
    let mut checks = Vec::new();
    let n = samples.max(1);
    checks.push(CheckResult::below("volume_invariance", volume_invariance(model, n, seed)?, 1e-8, "relative"));
    checks.push(CheckResult::below(
        "laplacian_consistency",
        laplacian_consistency(model, n, seed + 1)?,
        1e-8,
        "de Rham vs 2x complex",
    ));
    checks.push(CheckResult::below(
        "integration_by_parts",
        integration_by_parts(model, n, seed + 2)?,
        1e-8,
        "relative",
    ));
    let bg = metric_state(model, model.zero())?;
    checks.push(CheckResult::at_least(
        "laplacian_nonnegative",
        complex_laplacian_min_eigenvalue(&bg)?,
        -1e-10,
        "min eigenvalue",
    ));
    let r = model.ricci_report();
    checks.push(CheckResult::below("ricci_potential_dual_route", r.closed_form_gap, 1e-8, "Poisson vs closed form"));
    checks.push(CheckResult::below("ricci_potential_ddbar", r.ddbar_residual, 1e-8, "max norm"));
    checks.push(CheckResult::below(
        "ricci_potential_normalization",
        r.normalization_residual,
        1e-10,
        "exponential mean",
    ));

    let inputs = sample_identity_inputs(model, n, seed);
    let functionals = verify_functional_identities(model, &inputs, seed)?;
    for id in functionals.identities() {
        let pass = functionals.records.iter().filter(|r| r.identity == id).all(|r| r.pass);
        let worst = functionals.worst(&id).unwrap_or(f64::NAN);
        let tol = functionals.records.iter().find(|r| r.identity == id).map_or(0.0, |r| r.tolerance);
        checks.push(CheckResult {
            name: format!("functional_{id}"),
            value: worst,
            tolerance: tol,
            pass,
            detail: String::new(),
        });
    }
    if let Some(d) = &functionals.derivative_check {
        checks.push(CheckResult::below(
            "functional_gap_derivative",
            d.error,
            d.tolerance,
            "finite difference vs integral",
        ));
    }

    let count = DETECTOR_COUNT.min(model.grid().n_modes());
    let spec = basic_spectrum(&bg, count)?;
    checks.push(CheckResult::at_least(
        "spectrum_lower_bound",
        spec.lambda_1,
        model.einstein_constant() - 1e-6,
        "first nonzero eigenvalue",
    ));
    let target = model.einstein_constant();
    let kernel = spec.eigenvalues.iter().filter(|v| (*v - target).abs() < KERNEL_THRESHOLD).count();
    match hamiltonian_fields(&spec) {
        Ok(fields) => {
            let ok = fields.len() == kernel && fields.iter().all(|f| f.passes());
            checks.push(CheckResult {
                name: "hamiltonian_detector".into(),
                value: fields.len() as f64,
                tolerance: kernel as f64,
                pass: ok,
                detail: "records vs kernel dimension".into(),
            });
        }
        Err(e) => checks.push(CheckResult {
            name: "hamiltonian_detector".into(),
            value: f64::NAN,
            tolerance: 0.0,
            pass: false,
            detail: e.to_string(),
        }),
    }

    let mut rng = seeded_rng(seed + 3);
    let u = random_potential(model, &mut rng, DEFAULT_MARGIN).scaled(0.1);
    let delta = random_potential(model, &mut rng, DEFAULT_MARGIN);
    let st = metric_state(model, u)?;
    for eqn in [Equation::S1, Equation::S2] {
        let c = linearization_check(&st, 0.5, eqn, &delta)?;
        checks.push(CheckResult::at_least(
            &format!("linearization_slope_{eqn:?}").to_lowercase(),
            c.slope,
            0.9,
            "log-log slope",
        ));
    }

    let mut estimates = None;
    if solve {
        let family = continuity_solve(model, Equation::S2, opts)?;
        checks.push(CheckResult {
            name: "continuity_reaches_target".into(),
            value: family.nodes.last().map_or(0.0, |n| n.t),
            tolerance: opts.t_final,
            pass: family.reached_target,
            detail: family.stop_reason.clone().unwrap_or_default(),
        });
        if let Some(res) = curvature_residual(&family).filter(|_| family.reached_target && opts.t_final == 1.0) {
            checks.push(CheckResult::below("final_curvature_residual", res, 1e-5, "max |s - m(2m+2)|"));
        }
        if family.len() >= crate::estimates::MIN_FAMILY_NODES {
            let rep = apriori_report(&family, &EstimateOptions::default())?;
            checks.push(CheckResult::below("m_monotonicity", rep.max_dm_dt, 1e-8, "max dM/dt"));
            checks.push(CheckResult {
                name: "oscillation_bound".into(),
                value: rep.fitted_c,
                tolerance: 0.0,
                pass: rep.oscillation_pass,
                detail: "fitted C".into(),
            });
            checks.push(CheckResult {
                name: "x_t_exists".into(),
                value: 0.0,
                tolerance: 0.0,
                pass: rep.x_t_pass,
                detail: String::new(),
            });
            checks.push(CheckResult {
                name: "l_gap_within_osc".into(),
                value: 0.0,
                tolerance: 0.0,
                pass: rep.l_gap_pass,
                detail: String::new(),
            });
            checks.push(CheckResult {
                name: "rescaled_family".into(),
                value: 0.0,
                tolerance: 0.0,
                pass: rep.rescaled_pass,
                detail: String::new(),
            });
            estimates = Some(rep);
        }
    }
    let all_pass = checks.iter().all(|c| c.pass);
    Ok(VerifyOutput { checks, functionals, estimates, all_pass })
}

fn cmd_verify(config: &Path, samples: usize, seed: Option<u64>, skip_solve: bool, out: &Path) -> Result<bool> {
    let (cfg, model) = load(config)?;
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let opts = cfg.solver_options();
    let result = run_verification(&model, &opts, samples, seed, !skip_solve)?;
    for c in &result.checks {
        println!(
            "{:<34} {:<4} value={:.3e} tol={:.1e} {}",
            c.name,
            if c.pass { "PASS" } else { "FAIL" },
            c.value,
            c.tolerance,
            c.detail
        );
    }
    let ok = result.all_pass;
    write_json(out, &envelope("verify", "cli", "verify", &cfg, Some(seed), result))?;
    Ok(ok)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Missing,
}

/// One line of the merged report.
#[derive(Clone, Debug)]
pub struct ReportLine {
    pub label: &'static str,
    pub status: Status,
    pub detail: String,
}

const LABELS: [&str; 10] = [
    "volume invariance",
    "L/M cocycle, translation, path independence",
    "I/J identities and inequality chain",
    "weighted spectrum lower bound",
    "M monotonicity along the family",
    "Green kernel lower bound",
    "rescaled family volume, Ricci, diameter",
    "oscillation bound",
    "C0 chain constituents",
    "uniqueness along the path",
];

fn status(pass: bool) -> Status {
    if pass {
        Status::Pass
    } else {
        Status::Fail
    }
}

fn get_bool(v: &Value, ptr: &str) -> Option<bool> {
    v.pointer(ptr).and_then(Value::as_bool)
}

fn get_f64(v: &Value, ptr: &str) -> Option<f64> {
    v.pointer(ptr).and_then(Value::as_f64)
}

fn records_pass(records: &[Value], prefixes: &[&str]) -> (bool, usize) {
    let sel: Vec<&Value> = records
        .iter()
        .filter(|r| r["identity"].as_str().is_some_and(|id| prefixes.iter().any(|p| id.starts_with(p))))
        .collect();
    (sel.iter().all(|r| r["pass"].as_bool() == Some(true)), sel.len())
}

/// Builds the merged status lines from parsed output envelopes.
pub fn merge_reports(docs: &[Value]) -> Vec<ReportLine> {
    let mut lines: Vec<ReportLine> =
        LABELS.iter().map(|l| ReportLine { label: l, status: Status::Missing, detail: String::new() }).collect();
    let mut set = |i: usize, pass: bool, detail: String| {
        // a failure from any input wins
        if lines[i].status != Status::Fail {
            lines[i].status = status(pass);
            lines[i].detail = detail;
        }
    };
    for doc in docs {
        let schema = doc["schema"].as_str().unwrap_or("");
        let data = &doc["data"];
        let functional_lines = |fr: &Value, set: &mut dyn FnMut(usize, bool, String)| {
            if let Some(records) = fr["records"].as_array() {
                let (p1, n1) = records_pass(records, &["l_", "m_"]);
                set(1, p1, format!("{n1} records"));
                let (mut p2, n2) = records_pass(records, &["i_", "j_", "chain_"]);
                if let Some(d) = fr.get("derivative_check").filter(|d| !d.is_null()) {
                    p2 &= d["pass"].as_bool() == Some(true);
                }
                set(2, p2, format!("{n2} records"));
            }
        };
        match schema {
            s if s.ends_with("/functionals/v1") => functional_lines(data, &mut set),
            s if s.ends_with("/verify/v1") => {
                if let Some(checks) = data["checks"].as_array() {
                    if let Some(c) = checks.iter().find(|c| c["name"] == "volume_invariance") {
                        set(0, c["pass"].as_bool() == Some(true), format!("max rel err {}", c["value"]));
                    }
                    if let Some(c) = checks.iter().find(|c| c["name"] == "spectrum_lower_bound") {
                        set(3, c["pass"].as_bool() == Some(true), format!("lambda_1 = {}", c["value"]));
                    }
                }
                functional_lines(&data["functionals"], &mut set);
            }
            s if s.ends_with("/spectrum/v1") => {
                let pass =
                    get_bool(data, "/spectrum/lower_bound_holds").unwrap_or(false) && data["detector_error"].is_null();
                set(3, pass, format!("lambda_1 = {}", get_f64(data, "/spectrum/lambda_1").unwrap_or(f64::NAN)));
            }
            s if s.ends_with("/estimates/v1") => {
                set(4, get_bool(data, "/monotone_pass").unwrap_or(false), format!("max dM/dt = {}", data["max_dm_dt"]));
                let k = get_f64(data, "/green_k").unwrap_or(f64::NAN);
                set(5, k.is_finite() && k >= 0.0, format!("K = {k}"));
                set(6, get_bool(data, "/rescaled_pass").unwrap_or(false), String::new());
                set(
                    7,
                    get_bool(data, "/oscillation_pass").unwrap_or(false),
                    format!("fitted C = {}", data["fitted_c"]),
                );
                let c0 = get_bool(data, "/x_t_pass").unwrap_or(false) && get_bool(data, "/l_gap_pass").unwrap_or(false);
                set(8, c0, format!("max t*osc = {}", data["t_osc_max"]));
            }
            s if s.ends_with("/family/v1") => {
                if let Some(v) = get_f64(data, "/volume_max_relative_error") {
                    set(0, v < 1e-8, format!("max rel err {v:.2e} over family states"));
                }
                if data["functionals"].is_object() {
                    functional_lines(&data["functionals"], &mut set);
                }
                if let Some(u) = data.get("uniqueness").filter(|u| !u.is_null()) {
                    let pairwise = get_f64(u, "/max_pairwise").unwrap_or(f64::NAN);
                    let back = get_f64(u, "/backward/endpoint_distance").unwrap_or(f64::NAN);
                    set(9, pairwise < 1e-7 && back < 1e-7, format!("pairwise {pairwise:.2e}, backward {back:.2e}"));
                }
            }
            _ => {}
        }
    }
    lines
}

fn cmd_report(inputs: &[PathBuf], out: Option<&Path>) -> Result<bool> {
    let docs: Vec<Value> = inputs.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
    let lines = merge_reports(&docs);
    let mut text = String::new();
    for l in &lines {
        let s = match l.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Missing => "MISSING",
        };
        text.push_str(&format!("{:<46} {:<7} {}\n", l.label, s, l.detail));
    }
    print!("{text}");
    if let Some(path) = out {
        std::fs::write(path, &text)?;
    }
    Ok(lines.iter().all(|l| l.status != Status::Fail))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_config_rejects_unknown_keys() {
        assert!(ExperimentConfig::from_toml_str("band_limit = 16\n[solver]\ntolerance = 1e-9\n").is_ok());
        assert!(ExperimentConfig::from_toml_str("band_limit = 16\n[solver]\ntol = 1e-9\n").is_err());
        assert!(ExperimentConfig::from_toml_str("band_limit = 16\ncolour = 1\n").is_err());
    }

    #[test]
    fn solver_overrides_apply() {
        let cfg = ExperimentConfig::from_toml_str("band_limit = 16\n[solver]\nmax_iterations = 7\n").unwrap();
        assert_eq!(cfg.solver_options().max_iterations, 7);
        assert_eq!(cfg.solver_options().tolerance, 1e-10);
    }

    #[test]
    fn missing_inputs_are_reported_missing() {
        let lines = merge_reports(&[]);
        assert_eq!(lines.len(), 10);
        assert!(lines.iter().all(|l| l.status == Status::Missing));
    }

    #[test]
    fn bad_config_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.toml");
        std::fs::write(&cfg, "band_limit = 16\nnope = 3\n").unwrap();
        let code = run_command(["sasaki-lab", "model", "--config", cfg.to_str().unwrap()]);
        assert_eq!(code, 2);
    }
}
