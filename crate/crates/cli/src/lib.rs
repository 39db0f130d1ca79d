//! Command-line front end: every subcommand reads a JSON job file, runs one
//! experiment and writes its artifacts to an output directory.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure,
//! 3 failed hypothesis validation.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use constrained_hj::fixed_point::{Lab, TraitPath, DEFAULT_BALL_RADIUS};
use constrained_hj::harness::{build_report, limit_reference, sweep_runs, SweepConfig};
use constrained_hj::io::{
    field_plot_rows, output_root, read_json, write_json, write_plot_data, write_snapshot, write_text, InitRef,
    ModelRef,
};
use constrained_hj::parabolic::{run_parabolic, EpsConfig};
use constrained_hj::{
    hj_residual, integrate_oracle, solve_limit, Error, ErrorKind, GridSpec, LimitConfig, Result, Scheme,
    TimeDifferencing, TraitBox,
};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "chj", version, about = "Constrained Hamilton-Jacobi solvers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// output directory (default: $CHJ_OUT_DIR/<subcommand>, else ./out/<subcommand>)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// also write gnuplot-ready two-column data files
    #[arg(long, global = true)]
    pub emit_plot_data: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check the structural hypotheses of a model (and optionally of initial data)
    ValidateModel {
        model: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
        /// lower corner of the probe box (default theta - 3)
        #[arg(long, num_args = 1.., allow_negative_numbers = true)]
        box_lo: Option<Vec<f64>>,
        /// upper corner of the probe box (default theta + 3)
        #[arg(long, num_args = 1.., allow_negative_numbers = true)]
        box_hi: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
    },
    /// Integrate the exact quadratic reduction
    SolveOracle {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Solve the constrained limit problem on a grid
    SolveLimit {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Solve the parabolic problem at one mutation scale
    SolveParabolic {
        #[arg(long)]
        config: PathBuf,
        /// overrides the `eps` of the config
        #[arg(long)]
        eps: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Picard iteration and contraction factors of the trait-path map
    FixedPoint {
        #[arg(long)]
        config: PathBuf,
        /// single window length, overriding the config list
        #[arg(long)]
        delta: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Lipschitz ratios of the resource-to-solution map
    LipschitzProbe {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep over mutation scales against the limit
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::ValidateModel { .. } => "validate-model",
            Command::SolveOracle { .. } => "solve-oracle",
            Command::SolveLimit { .. } => "solve-limit",
            Command::SolveParabolic { .. } => "solve-parabolic",
            Command::FixedPoint { .. } => "fixed-point",
            Command::LipschitzProbe { .. } => "lipschitz-probe",
            Command::Sweep { .. } => "sweep",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::ValidateModel { common, .. }
            | Command::SolveOracle { common, .. }
            | Command::SolveLimit { common, .. }
            | Command::SolveParabolic { common, .. }
            | Command::FixedPoint { common, .. }
            | Command::LipschitzProbe { common, .. }
            | Command::Sweep { common, .. } => common,
        }
    }
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => 1,
        ErrorKind::Numerical => 2,
        ErrorKind::Hypothesis => 3,
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Errors are reported on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli.command) {
        Ok(dir) => {
            println!("artifacts written to {}", dir.display());
            0
        }
        Err(e) => {
            match &e {
                Error::InvariantViolation { name, .. } => eprintln!("error: invariant `{name}` failed: {e}"),
                _ => eprintln!("error: {e}"),
            }
            exit_code(e.kind())
        }
    }
}

fn out_dir(cmd: &Command) -> PathBuf {
    match &cmd.common().out {
        Some(p) => p.clone(),
        None => output_root(None).join(cmd.name()),
    }
}

fn base_of(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn dispatch(cmd: &Command) -> Result<PathBuf> {
    let out = out_dir(cmd);
    let plots = cmd.common().emit_plot_data;
    match cmd {
        Command::ValidateModel {
            model,
            init,
            box_lo,
            box_hi,
            ..
        } => validate_model(model, init.as_deref(), box_lo.clone(), box_hi.clone(), &out)?,
        Command::SolveOracle { config, .. } => solve_oracle(config, &out, plots)?,
        Command::SolveLimit { config, .. } => solve_limit_cmd(config, &out, plots)?,
        Command::SolveParabolic { config, eps, .. } => solve_parabolic(config, *eps, &out, plots)?,
        Command::FixedPoint { config, delta, .. } => fixed_point(config, *delta, &out, plots)?,
        Command::LipschitzProbe { config, .. } => lipschitz_probe(config, &out, plots)?,
        Command::Sweep { config, .. } => sweep_cmd(config, &out, plots)?,
    }
    Ok(out)
}

#[derive(Serialize)]
struct ValidationOutput<'a> {
    report: &'a constrained_hj::HypothesisReport,
    initial_data: Option<String>,
}

fn validate_model(
    model_path: &Path,
    init_path: Option<&Path>,
    box_lo: Option<Vec<f64>>,
    box_hi: Option<Vec<f64>>,
    out: &Path,
) -> Result<()> {
    let model: constrained_hj::RateModel = read_json(model_path)?;
    let theta: Vec<f64> = model.theta().iter().copied().collect();
    let probe = TraitBox::new(
        box_lo.unwrap_or_else(|| theta.iter().map(|t| t - 3.0).collect()),
        box_hi.unwrap_or_else(|| theta.iter().map(|t| t + 3.0).collect()),
    )?;
    let i_max = model.i_max();
    let report = model.validate_hypotheses(&probe, (0.0, if i_max.is_finite() { i_max } else { 1.0 }));
    let init_status = init_path.map(|p| {
        InitRef::Path(p.to_path_buf())
            .load(&model, Path::new(""))
            .map(|_| ())
    });
    let init_error = match &init_status {
        Some(Err(e)) => Some(e.to_string()),
        _ => None,
    };
    write_json(
        &out.join("hypotheses.json"),
        &ValidationOutput {
            report: &report,
            initial_data: init_path.map(|_| init_error.clone().unwrap_or_else(|| "admissible".into())),
        },
    )?;
    report.require_admissible()?;
    if let Some(Err(e)) = init_status {
        return Err(e);
    }
    Ok(())
}

fn one() -> usize {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OracleJob {
    model: ModelRef,
    init: InitRef,
    #[serde(rename = "T")]
    t_end: f64,
    dt: f64,
    #[serde(default = "one")]
    sample_every: usize,
    /// grid on which the HJ residual of the trajectory is measured
    #[serde(default)]
    residual_grid: Option<GridSpec>,
}

#[derive(Serialize)]
struct OracleSummary {
    t_end: f64,
    m: Vec<f64>,
    a: Vec<f64>,
    resource: f64,
    hj_residual: Option<f64>,
}

fn solve_oracle(config: &Path, out: &Path, plots: bool) -> Result<()> {
    let job: OracleJob = read_json(config)?;
    let base = base_of(config);
    let model = job.model.load(&base)?;
    let init = job.init.load(&model, &base)?;
    let run = integrate_oracle(&model, &init, job.t_end, job.dt, job.sample_every)?;
    write_text(&out.join("trajectory.csv"), &run.record.to_csv())?;
    let last = run.history.last().expect("history includes t = 0");
    let residual = match &job.residual_grid {
        Some(grid) => Some(hj_residual(&model, &run.history, grid, TimeDifferencing::Fourth)?),
        None => None,
    };
    write_json(
        &out.join("summary.json"),
        &OracleSummary {
            t_end: last.t,
            m: last.m.iter().copied().collect(),
            a: last.a.iter().copied().collect(),
            resource: last.resource,
            hj_residual: residual,
        },
    )?;
    if plots {
        write_trajectory_plots(out, &run.record)?;
    }
    Ok(())
}

fn write_trajectory_plots(out: &Path, record: &constrained_hj::TrajectoryRecord) -> Result<()> {
    let dir = out.join("plot");
    write_plot_data(&dir.join("resource.dat"), "t I", record.samples.iter().map(|s| (s.t, s.resource)))?;
    for k in 0..record.dim() {
        write_plot_data(
            &dir.join(format!("xbar_{}.dat", k + 1)),
            &format!("t xbar_{}", k + 1),
            record.samples.iter().map(|s| (s.t, s.xbar[k])),
        )?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct LimitJob {
    model: ModelRef,
    init: InitRef,
    #[serde(flatten)]
    run: LimitConfig,
}

fn solve_limit_cmd(config: &Path, out: &Path, plots: bool) -> Result<()> {
    let job: LimitJob = read_json(config)?;
    let base = base_of(config);
    let model = job.model.load(&base)?;
    let init = job.init.load(&model, &base)?;
    let run = solve_limit(&model, &init, &job.run)?;
    write_text(&out.join("trajectory.csv"), &run.record.to_csv())?;
    write_json(&out.join("diagnostics.json"), &run.diagnostics)?;
    write_json(&out.join("projections.json"), &run.record.projections)?;
    for field in &run.record.snapshots {
        let stem = format!("u_t{}", field.t);
        write_snapshot(&out.join("snapshots"), &stem, "u", field)?;
        if plots {
            if let Some(rows) = field_plot_rows(field) {
                write_plot_data(&out.join("plot").join(format!("{stem}.dat")), "x u", rows)?;
            }
        }
    }
    if plots {
        write_trajectory_plots(out, &run.record)?;
    }
    run.check_invariants()
}

#[derive(Deserialize)]
struct ParabolicJob {
    model: ModelRef,
    init: InitRef,
    #[serde(flatten)]
    run: serde_json::Map<String, serde_json::Value>,
}

fn solve_parabolic(config: &Path, eps: Option<f64>, out: &Path, plots: bool) -> Result<()> {
    let job: ParabolicJob = read_json(config)?;
    let base = base_of(config);
    let model = job.model.load(&base)?;
    let init = job.init.load(&model, &base)?;
    let mut raw = job.run;
    if let Some(eps) = eps {
        raw.insert("eps".into(), serde_json::json!(eps));
    }
    let cfg: EpsConfig = serde_json::from_value(serde_json::Value::Object(raw))
        .map_err(|e| Error::Config(format!("{}: {e}", config.display())))?;
    let run = run_parabolic(&model, &init, &cfg)?;
    write_eps_artifacts(out, &run, plots)
}

fn write_eps_artifacts(dir: &Path, run: &constrained_hj::parabolic::EpsRunResult, plots: bool) -> Result<()> {
    write_text(&dir.join("samples.csv"), &run.to_csv())?;
    write_json(&dir.join("meta.json"), &run.meta())?;
    write_json(&dir.join("sandwich.json"), &run.sandwich)?;
    for (quantity, fields) in [("u_eps", &run.potential_snapshots), ("n_eps", &run.density_snapshots)] {
        for field in fields {
            let stem = format!("{quantity}_t{}", field.t);
            write_snapshot(&dir.join("snapshots"), &stem, quantity, field)?;
            if plots {
                if let Some(rows) = field_plot_rows(field) {
                    write_plot_data(&dir.join("plot").join(format!("{stem}.dat")), &format!("x {quantity}"), rows)?;
                }
            }
        }
    }
    if plots {
        write_plot_data(
            &dir.join("plot").join("resource.dat"),
            "t I_eps",
            run.samples.iter().map(|s| (s.t, s.resource)),
        )?;
    }
    Ok(())
}

fn default_deltas() -> Vec<f64> {
    vec![0.025, 0.05, 0.1]
}
fn default_steps() -> usize {
    100
}
fn default_pairs() -> usize {
    20
}
fn default_radius() -> f64 {
    DEFAULT_BALL_RADIUS
}
fn default_k_max() -> usize {
    50
}
fn default_tol() -> f64 {
    1e-10
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FixedPointJob {
    model: ModelRef,
    init: InitRef,
    grid: GridSpec,
    #[serde(default = "default_deltas")]
    deltas: Vec<f64>,
    /// time steps per window
    #[serde(default = "default_steps")]
    steps: usize,
    #[serde(default = "default_pairs")]
    pairs: usize,
    #[serde(default = "default_radius")]
    radius: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_k_max")]
    k_max: usize,
    #[serde(default = "default_tol")]
    tol: f64,
    #[serde(default)]
    scheme: Scheme,
}

#[derive(Serialize)]
struct PicardSummary {
    delta: f64,
    converged: bool,
    iterations: usize,
    distances: Vec<f64>,
    ratios: Vec<f64>,
    end_point: Vec<f64>,
}

fn fixed_point(config: &Path, delta: Option<f64>, out: &Path, plots: bool) -> Result<()> {
    let mut job: FixedPointJob = read_json(config)?;
    if let Some(d) = delta {
        job.deltas = vec![d];
    }
    let base = base_of(config);
    let model = job.model.load(&base)?;
    let init = job.init.load(&model, &base)?;
    let mut lab = Lab::new(&model, &init, job.grid.clone())?;
    lab.scheme = job.scheme;
    let study = lab.contraction_study(&job.deltas, job.steps, job.pairs, job.radius, job.seed)?;
    write_json(&out.join("contraction.json"), &study)?;
    let mut picard = Vec::new();
    for &delta in &job.deltas {
        let start = TraitPath::constant(lab.anchor(), delta, delta / job.steps as f64)?;
        let run = lab.iterate_phi(&start, job.k_max, job.tol, job.radius)?;
        picard.push(PicardSummary {
            delta,
            converged: run.converged,
            iterations: run.distances.len(),
            ratios: run.ratios(),
            distances: run.distances,
            end_point: run.path.values.last().cloned().unwrap_or_default(),
        });
    }
    write_json(&out.join("picard.json"), &picard)?;
    if plots {
        write_plot_data(
            &out.join("plot").join("contraction.dat"),
            "delta max_factor",
            study.per_delta.iter().map(|p| (p.delta, p.max_factor)),
        )?;
    }
    Ok(())
}

fn default_probe_deltas() -> Vec<f64> {
    vec![0.1, 0.05, 0.025]
}
fn default_probe_pairs() -> usize {
    5
}
fn default_stride() -> usize {
    10
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LipschitzJob {
    model: ModelRef,
    init: InitRef,
    grid: GridSpec,
    #[serde(default = "default_probe_deltas")]
    deltas: Vec<f64>,
    #[serde(default = "default_steps")]
    steps: usize,
    #[serde(default = "default_probe_pairs")]
    pairs: usize,
    #[serde(default = "default_radius")]
    radius: f64,
    #[serde(default)]
    seed: u64,
    /// output stride of the characteristics solver
    #[serde(default = "default_stride")]
    transport_stride: usize,
    #[serde(default)]
    scheme: Scheme,
}

fn lipschitz_probe(config: &Path, out: &Path, plots: bool) -> Result<()> {
    let job: LipschitzJob = read_json(config)?;
    let base = base_of(config);
    let model = job.model.load(&base)?;
    let init = job.init.load(&model, &base)?;
    let mut lab = Lab::new(&model, &init, job.grid.clone())?;
    lab.scheme = job.scheme;
    let study = lab.lipschitz_study(&job.deltas, job.steps, job.pairs, job.radius, job.seed)?;
    write_json(&out.join("lipschitz.json"), &study)?;
    let largest = job.deltas.iter().copied().fold(0.0, f64::max);
    let mut checks = Vec::new();
    for (i1, i2) in lab.random_resource_pairs(largest, job.steps, job.pairs, job.radius, job.seed)? {
        checks.push(lab.transport_check(&i1, &i2, job.transport_stride)?);
    }
    write_json(&out.join("transport.json"), &checks)?;
    if plots {
        for (j, row) in study.ratios.iter().enumerate() {
            write_plot_data(
                &out.join("plot").join(format!("ratio_pair{j}.dat")),
                "delta ratio",
                study.deltas.iter().copied().zip(row.iter().copied()),
            )?;
        }
    }
    if let Some(bad) = checks.iter().find(|c| !c.passed()) {
        return Err(Error::InvariantViolation {
            name: "transport_agreement".into(),
            detail: format!(
                "characteristics and direct difference differ by {:e} > {:e}",
                bad.agreement.max_error, bad.tolerance
            ),
        });
    }
    Ok(())
}

#[derive(Deserialize)]
struct SweepJob {
    model: ModelRef,
    init: InitRef,
    #[serde(flatten)]
    sweep: SweepConfig,
}

fn sweep_cmd(config: &Path, out: &Path, plots: bool) -> Result<()> {
    let job: SweepJob = read_json(config)?;
    let base = base_of(config);
    let model = job.model.load(&base)?;
    let init = job.init.load(&model, &base)?;
    let cfg = job.sweep;
    let (reference, agreement) = limit_reference(&model, &init, &cfg)?;
    write_text(&out.join("limit.csv"), &reference.record(&model).to_csv())?;
    let mut runs = Vec::new();
    let mut failure = None;
    for (eps, result) in cfg.eps.iter().zip(sweep_runs(&model, &init, &cfg)?) {
        match result {
            Ok(run) => {
                write_eps_artifacts(&out.join(format!("eps_{eps}")), &run, plots)?;
                runs.push(run);
            }
            Err(e) => {
                eprintln!("run at eps = {eps} failed: {e}");
                failure.get_or_insert(e);
            }
        }
    }
    if let Some(e) = failure {
        return Err(e);
    }
    let report = build_report(&model, &init, &cfg, &runs, &reference, agreement)?;
    write_json(&out.join("sweep_report.json"), &report)?;
    if plots {
        for &t in &cfg.t_star {
            let at_t: Vec<_> = report.entries.iter().filter(|e| e.t == t).collect();
            write_plot_data(
                &out.join("plot").join(format!("resource_error_t{t}.dat")),
                "eps |I_eps - I|",
                at_t.iter().map(|e| (e.eps, e.resource_error.abs())),
            )?;
            write_plot_data(
                &out.join("plot").join(format!("field_error_t{t}.dat")),
                "eps field_error",
                at_t.iter().map(|e| (e.eps, e.field_error)),
            )?;
        }
    }
    Ok(())
}
