//! Sweeps over the mutation scale `eps`, compared against the limit
//! problem, and moment checks of the concentrating density.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed_point::least_squares_slope;
use crate::grid::{GridField, GridSpec};
use crate::hj::{solve_limit, LimitConfig, LimitRun, Scheme};
use crate::initial::InitialData;
use crate::oracle::{integrate_oracle, reduce, QuadraticAnsatz};
use crate::parabolic::{hopf_cole_shift, run_parabolic, EpsConfig, EpsRunMeta, EpsRunResult, Form, DEFAULT_BOX};
use crate::rate_model::RateModel;
use crate::trajectory::TrajectoryRecord;

/// Default ladder of mutation scales.
pub const DEFAULT_LADDER: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];

/// Largest allowed gap between the oracle and the grid limit solver.
pub const REFERENCE_AGREEMENT_TOL: f64 = 5e-4;

/// Settings of an `eps` sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default = "default_ladder")]
    pub eps: Vec<f64>,
    #[serde(default = "default_t_star")]
    pub t_star: Vec<f64>,
    /// half-width of the box around `xbar(t*)` where `u_eps` is compared
    #[serde(default = "default_probe")]
    pub probe_halfwidth: f64,
    #[serde(default)]
    pub box_lo: Option<Vec<f64>>,
    #[serde(default)]
    pub box_hi: Option<Vec<f64>>,
    #[serde(default = "default_sample_interval")]
    pub sample_interval: f64,
    #[serde(default)]
    pub form: Form,
    /// grid of the limit solver (per axis node count and step)
    #[serde(default = "default_limit_n")]
    pub limit_n: usize,
    #[serde(default = "default_limit_dt")]
    pub limit_dt: f64,
    #[serde(default = "default_oracle_dt")]
    pub oracle_dt: f64,
    /// run the ladder concurrently (ignored without the `parallel` feature)
    #[serde(default = "yes")]
    pub parallel: bool,
}

fn default_ladder() -> Vec<f64> {
    DEFAULT_LADDER.to_vec()
}
fn default_t_star() -> Vec<f64> {
    vec![1.0]
}
fn default_probe() -> f64 {
    1.0
}
fn default_sample_interval() -> f64 {
    0.1
}
fn default_limit_n() -> usize {
    1801
}
fn default_limit_dt() -> f64 {
    2e-4
}
fn default_oracle_dt() -> f64 {
    1e-4
}
fn yes() -> bool {
    true
}

impl Default for SweepConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl SweepConfig {
    pub fn t_end(&self) -> f64 {
        self.t_star.iter().copied().fold(0.0, f64::max)
    }

    fn validate(&self) -> Result<()> {
        if self.eps.len() < 4 {
            return Err(Error::Config(format!("a sweep needs at least 4 eps values, got {}", self.eps.len())));
        }
        if self.eps.windows(2).any(|w| !(w[1] < w[0])) || self.eps.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::Config("the eps ladder must be positive and strictly decreasing".into()));
        }
        if self.t_star.is_empty() || self.t_star.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("t_star must list positive times".into()));
        }
        Ok(())
    }

    /// Per-run settings derived from the sweep settings.
    pub fn eps_config(&self, eps: f64) -> EpsConfig {
        let mut cfg = EpsConfig::new(eps, self.t_end());
        cfg.box_lo = self.box_lo.clone();
        cfg.box_hi = self.box_hi.clone();
        cfg.sample_interval = self.sample_interval;
        cfg.snapshot_times = self.t_star.clone();
        cfg.form = self.form;
        cfg
    }

    fn limit_grid(&self, dim: usize) -> Result<GridSpec> {
        let lo = self.box_lo.clone().unwrap_or_else(|| vec![DEFAULT_BOX.0; dim]);
        let hi = self.box_hi.clone().unwrap_or_else(|| vec![DEFAULT_BOX.1; dim]);
        GridSpec::new(lo, hi, vec![self.limit_n; dim])
    }
}

/// The `eps -> 0` limit the sweep compares against.
#[derive(Debug, Clone)]
pub enum LimitReference {
    /// exact quadratic reduction, one state per oracle step
    Oracle { dt: f64, history: Vec<QuadraticAnsatz> },
    /// grid solution with snapshots at the comparison times
    Grid(LimitRun),
}

/// Peak, resource and (callable) profile of the limit at one time.
pub struct LimitState<'a> {
    pub xbar: Vec<f64>,
    pub resource: f64,
    profile: Profile<'a>,
}

enum Profile<'a> {
    Quadratic(&'a QuadraticAnsatz),
    Field(&'a GridField),
}

impl LimitState<'_> {
    pub fn u(&self, x: &[f64]) -> f64 {
        match &self.profile {
            Profile::Quadratic(q) => q.eval(x),
            Profile::Field(f) => f.interpolate(x),
        }
    }
}

impl LimitReference {
    pub fn kind(&self) -> &'static str {
        match self {
            LimitReference::Oracle { .. } => "oracle",
            LimitReference::Grid(_) => "grid",
        }
    }

    pub fn state(&self, t: f64) -> Result<LimitState<'_>> {
        let missing = || Error::Internal(format!("limit reference has no state at t = {t}"));
        match self {
            LimitReference::Oracle { dt, history } => {
                let k = (t / dt).round() as usize;
                let q = history.get(k).filter(|q| (q.t - t).abs() < 1e-9).ok_or_else(missing)?;
                Ok(LimitState {
                    xbar: q.m.iter().copied().collect(),
                    resource: q.resource,
                    profile: Profile::Quadratic(q),
                })
            }
            LimitReference::Grid(run) => {
                let s = run.record.samples.iter().find(|s| (s.t - t).abs() < 1e-9).ok_or_else(missing)?;
                let f = run.record.snapshots.iter().find(|f| (f.t - t).abs() < 1e-9).ok_or_else(missing)?;
                Ok(LimitState {
                    xbar: s.xbar.clone(),
                    resource: s.resource,
                    profile: Profile::Field(f),
                })
            }
        }
    }

    /// Trajectory record of the reference (samples only).
    pub fn record(&self, model: &RateModel) -> TrajectoryRecord {
        match self {
            LimitReference::Oracle { history, .. } => TrajectoryRecord {
                samples: history
                    .iter()
                    .map(|q| {
                        let x: Vec<f64> = q.m.iter().copied().collect();
                        crate::trajectory::TrajectorySample {
                            t: q.t,
                            curvature: crate::trajectory::upper_triangle(&q.a),
                            resource: q.resource,
                            rho: q.resource / model.psi().eval(&x),
                            constraint_residual: 0.0,
                            r_residual: model.rate(&x, q.resource).abs(),
                            xbar: x,
                        }
                    })
                    .collect(),
                ..Default::default()
            },
            LimitReference::Grid(run) => TrajectoryRecord {
                samples: run.record.samples.clone(),
                ..Default::default()
            },
        }
    }
}

/// Oracle versus grid limit solver at the comparison times.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReferenceAgreement {
    pub max_peak_gap: f64,
    pub max_resource_gap: f64,
    pub passed: bool,
}

/// Builds the limit reference. When the quadratic reduction applies, the
/// grid solver is run as well and both must agree before any `eps`
/// comparison is made.
pub fn limit_reference(
    model: &RateModel,
    init: &InitialData,
    cfg: &SweepConfig,
) -> Result<(LimitReference, Option<ReferenceAgreement>)> {
    let t_end = cfg.t_end();
    let mut limit_cfg = LimitConfig::new(cfg.limit_grid(model.dim())?, cfg.limit_dt, t_end);
    limit_cfg.snapshot_times = cfg.t_star.clone();
    limit_cfg.scheme = Scheme::LaxFriedrichsEno2;
    let grid_run = solve_limit(model, init, &limit_cfg)?;
    if reduce(model, init).is_err() {
        return Ok((LimitReference::Grid(grid_run), None));
    }
    let oracle = integrate_oracle(model, init, t_end, cfg.oracle_dt, usize::MAX)?;
    let reference = LimitReference::Oracle {
        dt: cfg.oracle_dt,
        history: oracle.history,
    };
    let grid_ref = LimitReference::Grid(grid_run);
    let mut agreement = ReferenceAgreement {
        max_peak_gap: 0.0,
        max_resource_gap: 0.0,
        passed: true,
    };
    for &t in &cfg.t_star {
        let a = reference.state(t)?;
        let b = grid_ref.state(t)?;
        agreement.max_peak_gap = agreement.max_peak_gap.max(distance(&a.xbar, &b.xbar));
        agreement.max_resource_gap = agreement.max_resource_gap.max((a.resource - b.resource).abs());
    }
    agreement.passed = agreement.max_peak_gap <= REFERENCE_AGREEMENT_TOL
        && agreement.max_resource_gap <= REFERENCE_AGREEMENT_TOL;
    if !agreement.passed {
        return Err(Error::invariant(
            "limit_reference_agreement",
            format!(
                "oracle and grid limit differ by {:e} (peak) and {:e} (resource)",
                agreement.max_peak_gap, agreement.max_resource_gap
            ),
        ));
    }
    Ok((reference, Some(agreement)))
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Mass and moments of `n_eps` at one time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub eps: f64,
    pub t: f64,
    /// `int n`
    pub mass: f64,
    /// `I(t) / psi(xbar(t))`
    pub limit_mass: f64,
    pub mass_gap: f64,
    pub mean: Vec<f64>,
    pub mean_gap: f64,
    /// `int |x - mean|^2 n / int n`
    pub second_moment: f64,
    /// `I_eps(t)` recorded by the run
    pub resource: f64,
}

/// Moments of the density snapshot of `run` at `t` against the limit.
pub fn concentration_check(
    model: &RateModel,
    run: &EpsRunResult,
    limit: &TrajectoryRecord,
    t: f64,
) -> Result<ConcentrationReport> {
    let density = run
        .density_at(t)
        .ok_or_else(|| Error::InvalidArgument(format!("run at eps = {} has no snapshot at t = {t}", run.eps)))?;
    let sample = run
        .at(t)
        .ok_or_else(|| Error::InvalidArgument(format!("run at eps = {} has no sample at t = {t}", run.eps)))?;
    let reference = limit
        .samples
        .iter()
        .find(|s| (s.t - t).abs() < 1e-9)
        .ok_or_else(|| Error::InvalidArgument(format!("limit record has no sample at t = {t}")))?;
    let spec = &density.spec;
    let weights = spec.simpson_weights();
    let points = spec.points();
    let mass: f64 = density.values.iter().zip(&weights).map(|(n, w)| n * w).sum();
    let d = spec.dim();
    let mean: Vec<f64> = (0..d)
        .map(|k| {
            density
                .values
                .iter()
                .zip(&weights)
                .zip(&points)
                .map(|((n, w), x)| x[k] * n * w)
                .sum::<f64>()
                / mass
        })
        .collect();
    let second_moment = density
        .values
        .iter()
        .zip(&weights)
        .zip(&points)
        .map(|((n, w), x)| {
            let r2: f64 = x.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum();
            r2 * n * w
        })
        .sum::<f64>()
        / mass;
    let limit_mass = reference.resource / model.psi().eval(&reference.xbar);
    Ok(ConcentrationReport {
        eps: run.eps,
        t,
        mass,
        limit_mass,
        mass_gap: (mass - limit_mass).abs(),
        mean_gap: distance(&mean, &reference.xbar),
        mean,
        second_moment,
        resource: sample.resource,
    })
}

/// Errors of one run against the limit at one comparison time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepEntry {
    pub eps: f64,
    pub t: f64,
    pub resource_eps: f64,
    pub resource_limit: f64,
    /// `I_eps - I`, signed
    pub resource_error: f64,
    pub xbar_eps: Vec<f64>,
    pub xbar_limit: Vec<f64>,
    /// `|x_eps - xbar|`
    pub peak_error: f64,
    /// sup of `|u_eps - eps log(r / eps^{d/2}) - u|` on the probe box
    pub field_error: f64,
}

/// Regression of one error quantity against `eps`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlopeFit {
    pub quantity: String,
    pub t: f64,
    /// least-squares slope of `log |error|` against `log eps`
    pub loglog_slope: f64,
    pub r_squared: f64,
}

/// First-order coefficient of `I_eps - I` fitted on the largest and on the
/// smallest three `eps`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientStability {
    pub t: f64,
    pub first_three: f64,
    pub last_three: f64,
    /// `|first - last| / max(|first|, |last|)`
    pub relative_change: f64,
}

/// Aggregated result of an `eps` sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub eps: Vec<f64>,
    pub t_star: Vec<f64>,
    pub reference: String,
    pub reference_agreement: Option<ReferenceAgreement>,
    pub entries: Vec<SweepEntry>,
    pub fits: Vec<SlopeFit>,
    pub resource_coefficient: Vec<CoefficientStability>,
    /// per `t*`, whether the field error decreases strictly along the ladder
    pub field_error_monotone: Vec<bool>,
    pub concentration: Vec<ConcentrationReport>,
    /// per `t*`, `second_moment(eps_k) / second_moment(eps_{k+1})`
    pub second_moment_ratios: Vec<Vec<f64>>,
    pub runs: Vec<EpsRunMeta>,
}

impl SweepReport {
    pub fn fit(&self, quantity: &str, t: f64) -> Option<&SlopeFit> {
        self.fits.iter().find(|f| f.quantity == quantity && (f.t - t).abs() < 1e-12)
    }

    pub fn entry(&self, eps: f64, t: f64) -> Option<&SweepEntry> {
        self.entries.iter().find(|e| e.eps == eps && (e.t - t).abs() < 1e-12)
    }
}

/// `(slope, r^2)` of `log y` against `log x`; NaN if any value is not
/// positive.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return (f64::NAN, f64::NAN);
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let slope = least_squares_slope(&lx, &ly);
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let ss_tot: f64 = ly.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(a, b)| (b - (my + slope * (a - mx))).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (slope, r2)
}

/// Least-squares coefficient `c` of `y = c x`.
pub fn coefficient_through_origin(x: &[f64], y: &[f64]) -> f64 {
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    sxy / sxx
}

/// Runs the parabolic problem for every `eps` of the ladder, in ladder
/// order. Failed runs are returned as errors next to the completed ones.
pub fn sweep_runs(model: &RateModel, init: &InitialData, cfg: &SweepConfig) -> Result<Vec<Result<EpsRunResult>>> {
    cfg.validate()?;
    let one = |eps: &f64| run_parabolic(model, init, &cfg.eps_config(*eps));
    #[cfg(feature = "parallel")]
    if cfg.parallel {
        return Ok(cfg.eps.par_iter().map(one).collect());
    }
    Ok(cfg.eps.iter().map(one).collect())
}

/// Compares completed runs with the limit and fits the expansions.
pub fn build_report(
    model: &RateModel,
    init: &InitialData,
    cfg: &SweepConfig,
    runs: &[EpsRunResult],
    reference: &LimitReference,
    agreement: Option<ReferenceAgreement>,
) -> Result<SweepReport> {
    let limit_record = reference.record(model);
    let mut entries = Vec::new();
    let mut concentration = Vec::new();
    for run in runs {
        let shift = hopf_cole_shift(init, run.eps);
        for &t in &cfg.t_star {
            let limit = reference.state(t)?;
            let sample = run
                .at(t)
                .ok_or_else(|| Error::Internal(format!("run at eps = {} has no sample at t = {t}", run.eps)))?;
            let field = run
                .potential_at(t)
                .ok_or_else(|| Error::Internal(format!("run at eps = {} has no snapshot at t = {t}", run.eps)))?;
            let mut x = vec![0.0; field.dim()];
            let mut field_error = 0.0_f64;
            for (f, &u) in field.values.iter().enumerate() {
                field.spec.point(f, &mut x);
                let inside = x
                    .iter()
                    .zip(&limit.xbar)
                    .all(|(a, b)| (a - b).abs() <= cfg.probe_halfwidth);
                if inside {
                    field_error = field_error.max((u - shift - limit.u(&x)).abs());
                }
            }
            let xbar_eps = sample.xbar(run.dim()).to_vec();
            entries.push(SweepEntry {
                eps: run.eps,
                t,
                resource_eps: sample.resource,
                resource_limit: limit.resource,
                resource_error: sample.resource - limit.resource,
                peak_error: distance(&xbar_eps, &limit.xbar),
                xbar_eps,
                xbar_limit: limit.xbar.clone(),
                field_error,
            });
            concentration.push(concentration_check(model, run, &limit_record, t)?);
        }
    }

    let eps: Vec<f64> = runs.iter().map(|r| r.eps).collect();
    let mut fits = Vec::new();
    let mut resource_coefficient = Vec::new();
    let mut field_error_monotone = Vec::new();
    let mut second_moment_ratios = Vec::new();
    for &t in &cfg.t_star {
        let at_t: Vec<&SweepEntry> = entries.iter().filter(|e| (e.t - t).abs() < 1e-12).collect();
        for (name, values) in [
            ("resource", at_t.iter().map(|e| e.resource_error.abs()).collect::<Vec<_>>()),
            ("peak", at_t.iter().map(|e| e.peak_error).collect()),
            ("field", at_t.iter().map(|e| e.field_error).collect()),
        ] {
            let (slope, r2) = loglog_fit(&eps, &values);
            fits.push(SlopeFit {
                quantity: name.to_string(),
                t,
                loglog_slope: slope,
                r_squared: r2,
            });
        }
        let signed: Vec<f64> = at_t.iter().map(|e| e.resource_error).collect();
        let k = eps.len();
        let first = coefficient_through_origin(&eps[..3], &signed[..3]);
        let last = coefficient_through_origin(&eps[k - 3..], &signed[k - 3..]);
        resource_coefficient.push(CoefficientStability {
            t,
            first_three: first,
            last_three: last,
            relative_change: (first - last).abs() / first.abs().max(last.abs()),
        });
        field_error_monotone.push(at_t.windows(2).all(|w| w[1].field_error < w[0].field_error));
        let moments: Vec<f64> = concentration
            .iter()
            .filter(|c| (c.t - t).abs() < 1e-12)
            .map(|c| c.second_moment)
            .collect();
        second_moment_ratios.push(moments.windows(2).map(|w| w[0] / w[1]).collect());
    }
    Ok(SweepReport {
        eps,
        t_star: cfg.t_star.clone(),
        reference: reference.kind().to_string(),
        reference_agreement: agreement,
        entries,
        fits,
        resource_coefficient,
        field_error_monotone,
        concentration,
        second_moment_ratios,
        runs: runs.iter().map(|r| r.meta()).collect(),
    })
}

/// Complete sweep: limit reference, ladder runs and report.
pub struct SweepOutcome {
    pub report: SweepReport,
    pub runs: Vec<EpsRunResult>,
    pub reference: LimitReference,
}

pub fn sweep(model: &RateModel, init: &InitialData, cfg: &SweepConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let (reference, agreement) = limit_reference(model, init, cfg)?;
    let runs = sweep_runs(model, init, cfg)?.into_iter().collect::<Result<Vec<_>>>()?;
    let report = build_report(model, init, cfg, &runs, &reference, agreement)?;
    Ok(SweepOutcome {
        report,
        runs,
        reference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loglog_fit_recovers_power_laws() {
        let x = [0.1, 0.05, 0.025, 0.0125];
        let y: Vec<f64> = x.iter().map(|e| 3.0 * e * e).collect();
        let (s, r2) = loglog_fit(&x, &y);
        assert!((s - 2.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
        assert!(loglog_fit(&x, &[1.0, 0.0, 1.0, 1.0]).0.is_nan());
        assert!((coefficient_through_origin(&x, &x.map(|e| -1.5 * e)) + 1.5).abs() < 1e-12);
    }

    #[test]
    fn ladder_validation() {
        let mut cfg = SweepConfig::default();
        assert_eq!(cfg.eps, DEFAULT_LADDER.to_vec());
        cfg.eps = vec![0.1, 0.05, 0.05, 0.01];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.eps = vec![0.1, 0.05, 0.025];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn concentration_of_a_gaussian_density() {
        let model = RateModel::canonical_1d();
        let init = InitialData::quadratic(&model, &[0.0], nalgebra::DMatrix::from_element(1, 1, 1.0)).unwrap();
        let mut cfg = EpsConfig::new(0.05, 0.2);
        cfg.snapshot_times = vec![0.2];
        let run = run_parabolic(&model, &init, &cfg).unwrap();
        let limit = integrate_oracle(&model, &init, 0.2, 1e-3, 1).unwrap();
        let report = concentration_check(&model, &run, &limit.record, 0.2).unwrap();
        // psi = 1: the zeroth moment is the recorded resource itself
        assert_eq!(report.mass, report.resource);
        let a = limit.history.last().unwrap().a[(0, 0)];
        assert!((report.second_moment - 0.05 / (2.0 * a)).abs() < 1e-4);
    }
}
