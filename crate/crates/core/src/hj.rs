//! Grid solver for the constrained Hamilton-Jacobi problem.
//!
//! `u` is advanced by `u_t = |grad u|^2 + R(x, I)`; the peak `xbar` follows
//! `xbar' = (-D^2 u(xbar))^{-1} grad_x R(xbar, I)` and `I` is recovered from
//! `R(xbar, I) = 0`. The constraint `max u = 0` is only monitored, and a
//! projection is applied when the drift exceeds a threshold.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{argmax_u, GridField, GridSpec};
use crate::initial::{InitialData, SandwichReport};
use crate::rate_model::{RateModel, TOL_ROOT};
use crate::trajectory::{upper_triangle, ProjectionEvent, TrajectoryRecord, TrajectorySample};

/// Added to twice the largest slope in the step-size bound
/// `dt <= h / (2 max|grad u| + CFL_SAFETY)`.
pub const CFL_SAFETY: f64 = 1.0;

/// Default drift of `max u` tolerated before projecting.
pub const DEFAULT_PROJ_THRESHOLD: f64 = 1e-3;

/// Discretization of `|grad u|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Local Lax-Friedrichs flux on second-order one-sided slopes.
    #[default]
    LaxFriedrichsEno2,
    /// Local Lax-Friedrichs flux on first-order one-sided slopes.
    LaxFriedrichs,
    /// Centered slopes, no numerical dissipation.
    Central,
}

#[inline]
fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// Fills `line[2..n+2]` from the field and two quadratic-extrapolation ghost
/// cells on each side.
#[inline]
fn fill_ghosts(line: &mut [f64]) {
    let n = line.len();
    line[1] = 3.0 * line[2] - 3.0 * line[3] + line[4];
    line[0] = 3.0 * line[1] - 3.0 * line[2] + line[3];
    line[n - 2] = 3.0 * line[n - 3] - 3.0 * line[n - 4] + line[n - 5];
    line[n - 1] = 3.0 * line[n - 2] - 3.0 * line[n - 3] + line[n - 4];
}

/// Spatial operator `|grad u|^2 + R(x, I)` on a fixed grid, with the
/// selection term cached per node.
#[derive(Debug, Clone)]
pub(crate) struct HjOperator {
    spec: GridSpec,
    scheme: Scheme,
    quad: Vec<f64>,
    line: Vec<f64>,
}

impl HjOperator {
    pub(crate) fn new(model: &RateModel, spec: &GridSpec, scheme: Scheme) -> Self {
        let quad = spec.points().iter().map(|x| model.selection_quad(x)).collect();
        let longest = spec.n.iter().copied().max().unwrap_or(0);
        HjOperator {
            spec: spec.clone(),
            scheme,
            quad,
            line: vec![0.0; longest + 4],
        }
    }

    /// Numerical `|grad u|^2` into `out`. Returns the CFL rate `nu`: a step
    /// is stable when `dt * nu <= 1`.
    pub(crate) fn hamiltonian(&mut self, values: &[f64], out: &mut [f64]) -> f64 {
        out.iter_mut().for_each(|v| *v = 0.0);
        let d = self.spec.dim();
        let mut speed = vec![0.0; values.len()];
        for k in 0..d {
            let n = self.spec.n[k];
            let stride = self.spec.stride(k);
            let h = self.spec.h(k);
            let lines = values.len() / n;
            for l in 0..lines {
                // first node of the line: for axis 0 walk over the trailing
                // index, for axis 1 over whole rows
                let start = if k + 1 == d { l * n } else { l };
                let line = &mut self.line[..n + 4];
                for i in 0..n {
                    line[i + 2] = values[start + i * stride];
                }
                fill_ghosts(line);
                for i in 0..n {
                    let j = i + 2;
                    let (pm, pp) = match self.scheme {
                        Scheme::LaxFriedrichsEno2 => {
                            let d2m = line[j] - 2.0 * line[j - 1] + line[j - 2];
                            let d2c = line[j + 1] - 2.0 * line[j] + line[j - 1];
                            let d2p = line[j + 2] - 2.0 * line[j + 1] + line[j];
                            (
                                (line[j] - line[j - 1] + 0.5 * minmod(d2m, d2c)) / h,
                                (line[j + 1] - line[j] - 0.5 * minmod(d2c, d2p)) / h,
                            )
                        }
                        Scheme::LaxFriedrichs => ((line[j] - line[j - 1]) / h, (line[j + 1] - line[j]) / h),
                        Scheme::Central => {
                            let p = (line[j + 1] - line[j - 1]) / (2.0 * h);
                            (p, p)
                        }
                    };
                    let alpha = 2.0 * pm.abs().max(pp.abs());
                    let mean = 0.5 * (pm + pp);
                    let f = start + i * stride;
                    out[f] += match self.scheme {
                        Scheme::Central => mean * mean,
                        _ => mean * mean + 0.5 * alpha * (pp - pm),
                    };
                    speed[f] += (alpha + CFL_SAFETY) / h;
                }
            }
        }
        speed.into_iter().fold(0.0, f64::max)
    }

    /// `|grad u|^2 + R(x, I)` into `out`; returns the CFL rate.
    pub(crate) fn rhs(&mut self, model: &RateModel, values: &[f64], resource: f64, out: &mut [f64]) -> f64 {
        let nu = self.hamiltonian(values, out);
        for (o, &q) in out.iter_mut().zip(&self.quad) {
            *o += model.rate_from_quad(q, resource);
        }
        nu
    }

    /// One SSP-RK3 step. `resource(stage, values)` supplies `I` at the
    /// stage times `t`, `t + dt`, `t + dt/2` (stage 0, 1, 2). The CFL bound
    /// is checked on the input field only.
    pub(crate) fn step<F>(&mut self, model: &RateModel, values: &mut [f64], dt: f64, mut resource: F) -> Result<()>
    where
        F: FnMut(usize, &[f64]) -> Result<f64>,
    {
        let len = values.len();
        let mut l = vec![0.0; len];
        let i0 = resource(0, values)?;
        let nu = self.rhs(model, values, i0, &mut l);
        if dt * nu > 1.0 {
            return Err(Error::StepRejected {
                dt,
                suggested_dt: 0.9 / nu,
            });
        }
        let u1: Vec<f64> = values.iter().zip(&l).map(|(u, r)| u + dt * r).collect();
        let i1 = resource(1, &u1)?;
        self.rhs(model, &u1, i1, &mut l);
        let u2: Vec<f64> = (0..len)
            .map(|f| 0.75 * values[f] + 0.25 * (u1[f] + dt * l[f]))
            .collect();
        let i2 = resource(2, &u2)?;
        self.rhs(model, &u2, i2, &mut l);
        for f in 0..len {
            values[f] = values[f] / 3.0 + 2.0 / 3.0 * (u2[f] + dt * l[f]);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationFailure {
                t: f64::NAN,
                reason: "non-finite value after HJ step".into(),
            });
        }
        Ok(())
    }
}

/// Largest stable step for `field` under the CFL bound.
pub fn max_stable_dt(field: &GridField, scheme: Scheme) -> f64 {
    let mut op = HjOperator {
        spec: field.spec.clone(),
        scheme,
        quad: vec![0.0; field.values.len()],
        line: vec![0.0; field.spec.n.iter().copied().max().unwrap_or(0) + 4],
    };
    let mut out = vec![0.0; field.values.len()];
    1.0 / op.hamiltonian(&field.values, &mut out)
}

/// Advances `u` by one step with a fixed resource level.
pub fn step_u(field: &GridField, model: &RateModel, resource: f64, dt: f64, scheme: Scheme) -> Result<GridField> {
    step_u_staged(field, model, [resource; 3], dt, scheme)
}

/// Advances `u` by one step with resource levels at `t`, `t + dt`, `t + dt/2`.
pub fn step_u_staged(
    field: &GridField,
    model: &RateModel,
    resources: [f64; 3],
    dt: f64,
    scheme: Scheme,
) -> Result<GridField> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    if field.dim() != model.dim() {
        return Err(Error::Config("field and model dimensions differ".into()));
    }
    let i_max = model.i_max();
    for &i in &resources {
        if !(i > 0.0 && i <= i_max * (1.0 + 1e-12)) {
            return Err(Error::InvalidArgument(format!("resource {i} outside (0, {i_max}]")));
        }
    }
    let mut op = HjOperator::new(model, &field.spec, scheme);
    let mut values = field.values.clone();
    op.step(model, &mut values, dt, |stage, _| Ok(resources[stage]))?;
    Ok(GridField {
        spec: field.spec.clone(),
        values,
        t: field.t + dt,
    })
}

/// Settings of a limit-problem run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitConfig {
    pub grid: GridSpec,
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    #[serde(default = "one")]
    pub sample_every: usize,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default = "default_proj")]
    pub proj_threshold: f64,
    #[serde(default)]
    pub scheme: Scheme,
}

fn one() -> usize {
    1
}

fn default_proj() -> f64 {
    DEFAULT_PROJ_THRESHOLD
}

impl LimitConfig {
    pub fn new(grid: GridSpec, dt: f64, t_end: f64) -> Self {
        LimitConfig {
            grid,
            dt,
            t_end,
            sample_every: 1,
            snapshot_times: Vec::new(),
            proj_threshold: DEFAULT_PROJ_THRESHOLD,
            scheme: Scheme::default(),
        }
    }

    pub(crate) fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.t_end >= 0.0 && self.dt.is_finite() && self.t_end.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need dt > 0 and T >= 0, got dt = {}, T = {}",
                self.dt, self.t_end
            )));
        }
        let steps = (self.t_end / self.dt).round() as usize;
        if ((steps as f64) * self.dt - self.t_end).abs() > 1e-9 * self.t_end.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "T = {} is not a multiple of dt = {}",
                self.t_end, self.dt
            )));
        }
        Ok(steps)
    }
}

/// Run-level invariant diagnostics of [`solve_limit`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LimitDiagnostics {
    pub h: f64,
    pub dt: f64,
    pub steps: usize,
    /// largest `|max u|` over all steps, before any projection
    pub max_constraint_residual: f64,
    pub max_r_residual: f64,
    pub max_resource_decrease: f64,
    /// largest value of `u` on the boundary nodes
    pub boundary_max: f64,
    pub sandwich: Vec<SandwichReport>,
}

/// Output of [`solve_limit`].
#[derive(Debug, Clone)]
pub struct LimitRun {
    pub record: TrajectoryRecord,
    pub diagnostics: LimitDiagnostics,
}

/// Tolerance of the sandwich checks.
pub const SANDWICH_TOL: f64 = 1e-6;

impl LimitRun {
    /// Checks the run-level invariants: the algebraic constraint to root
    /// tolerance, `|max u| <= 10 (h^2 + dt)`, `I` non-decreasing within
    /// `1e-8` per sample and both sandwiches.
    pub fn check_invariants(&self) -> Result<()> {
        let d = &self.diagnostics;
        if d.max_r_residual > TOL_ROOT {
            return Err(Error::invariant(
                "equivalence",
                format!("|R(xbar, I)| reached {:e}", d.max_r_residual),
            ));
        }
        let allowed = 10.0 * (d.h * d.h + d.dt);
        if d.max_constraint_residual > allowed {
            return Err(Error::invariant(
                "equivalence",
                format!("|max u| reached {:e} > {allowed:e}", d.max_constraint_residual),
            ));
        }
        if d.max_resource_decrease > 1e-8 {
            return Err(Error::invariant(
                "resource_monotonicity",
                format!("I decreased by {:e} between samples", d.max_resource_decrease),
            ));
        }
        if let Some(bad) = d.sandwich.iter().find(|s| !s.holds(SANDWICH_TOL)) {
            return Err(Error::invariant(
                "concavity_sandwich",
                format!(
                    "at t = {}: quadratic margin {:e}, hessian margin {:e}",
                    bad.t, bad.quadratic_margin, bad.hessian_margin
                ),
            ));
        }
        Ok(())
    }
}

/// `(-H)^{-1} g`; fails unless `H` is negative definite.
fn trait_velocity(hess: &DMatrix<f64>, grad: &DVector<f64>, x: &[f64]) -> Result<DVector<f64>> {
    let neg = -hess;
    let chol = neg.cholesky().ok_or_else(|| Error::IntegrationFailure {
        t: f64::NAN,
        reason: format!("Hessian of u is not negative definite at {x:?}"),
    })?;
    Ok(chol.solve(grad))
}

fn add_scaled(x: &[f64], s: f64, v: &DVector<f64>) -> Vec<f64> {
    x.iter().zip(v.iter()).map(|(a, b)| a + s * b).collect()
}

/// Solves the constrained problem on `[0, T]`.
pub fn solve_limit(model: &RateModel, init: &InitialData, cfg: &LimitConfig) -> Result<LimitRun> {
    let steps = cfg.steps()?;
    if cfg.grid.dim() != model.dim() {
        return Err(Error::Config("grid and model dimensions differ".into()));
    }
    let trait_box = cfg.grid.bounds();
    let bounds = model.bounds(&trait_box, (0.0, model.i_max()));
    let centre: Vec<f64> = model.theta().iter().copied().collect();

    let mut field = init.sample(&cfg.grid)?;
    let mut op = HjOperator::new(model, &cfg.grid, cfg.scheme);
    let mut x = init.xbar0.clone();
    let mut resource = model.solve_i_for_zero(&x)?;

    let mut record = TrajectoryRecord::default();
    let mut diag = LimitDiagnostics {
        h: cfg.grid.h_min(),
        dt: cfg.dt,
        steps,
        ..Default::default()
    };
    let boundary_max = |f: &GridField| {
        (0..f.values.len())
            .filter(|&i| f.spec.is_boundary(i))
            .map(|i| f.values[i])
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let snapshot_steps: Vec<usize> = cfg
        .snapshot_times
        .iter()
        .map(|&t| ((t / cfg.dt).round() as usize).min(steps))
        .collect();
    let sample_every = cfg.sample_every.max(1);
    diag.boundary_max = boundary_max(&field);

    for n in 0..=steps {
        let t = n as f64 * cfg.dt;
        field.t = t;
        let (_, peak) = argmax_u(&field)?;
        diag.max_constraint_residual = diag.max_constraint_residual.max(peak.abs());
        if peak.abs() > cfg.proj_threshold {
            field.values.iter_mut().for_each(|v| *v -= peak);
            record.projections.push(ProjectionEvent { t, shift: peak });
        }
        let hess = field.hessian_at(&x).map_err(|e| match e {
            Error::OutOfDomain { x } => Error::PeakEscapedDomain { x },
            other => other,
        })?;
        let r_res = model.rate(&x, resource).abs();
        diag.max_r_residual = diag.max_r_residual.max(r_res);

        if n % sample_every == 0 || n == steps {
            let curvature = upper_triangle(&(&hess * -0.5));
            record.samples.push(TrajectorySample {
                t,
                xbar: x.clone(),
                curvature,
                resource,
                rho: resource / model.psi().eval(&x),
                constraint_residual: peak.abs(),
                r_residual: r_res,
            });
            diag.sandwich.push(init.sandwich.check(&field, &centre, &bounds, 0.0));
        }
        if snapshot_steps.contains(&n) {
            record.snapshots.push(field.clone());
        }
        if n == steps {
            break;
        }

        // Heun predictor for the trait, then u with matching stage resources
        let k1 = trait_velocity(&hess, &model.grad_x(&x, resource), &x)?;
        let x_pred = add_scaled(&x, cfg.dt, &k1);
        let i_pred = model.solve_i_for_zero(&x_pred)?;
        let x_mid = add_scaled(&x, 0.5 * cfg.dt, &k1);
        let i_mid = model.solve_i_for_zero(&x_mid)?;
        let stages = [resource, i_pred, i_mid];
        op.step(model, &mut field.values, cfg.dt, |s, _| Ok(stages[s]))
            .map_err(|e| match e {
                Error::IntegrationFailure { reason, .. } => Error::IntegrationFailure { t, reason },
                other => other,
            })?;
        field.t = t + cfg.dt;
        let hess_pred = field.hessian_at(&x_pred).map_err(|e| match e {
            Error::OutOfDomain { x } => Error::PeakEscapedDomain { x },
            other => other,
        })?;
        let k2 = trait_velocity(&hess_pred, &model.grad_x(&x_pred, i_pred), &x_pred)?;
        x = x
            .iter()
            .enumerate()
            .map(|(k, &xi)| xi + 0.5 * cfg.dt * (k1[k] + k2[k]))
            .collect();
        if !trait_box.contains(&x) {
            return Err(Error::PeakEscapedDomain { x });
        }
        resource = model.solve_i_for_zero(&x)?;
        diag.boundary_max = diag.boundary_max.max(boundary_max(&field));
    }
    diag.max_resource_decrease = record.max_resource_decrease();
    Ok(LimitRun {
        record,
        diagnostics: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::integrate_oracle;

    fn canonical_init(m0: f64, a0: f64) -> InitialData {
        InitialData::quadratic(&RateModel::canonical_1d(), &[m0], DMatrix::from_element(1, 1, a0)).unwrap()
    }

    #[test]
    fn ghosts_extend_quadratics_exactly() {
        let mut line: Vec<f64> = (0..12).map(|i| ((i as f64) - 2.0).powi(2) * 0.3 - 1.0).collect();
        let expect = line.clone();
        for v in [0, 1, 10, 11] {
            line[v] = f64::NAN;
        }
        fill_ghosts(&mut line);
        for (a, b) in line.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stationary_quadratic_is_preserved() {
        let model = RateModel::canonical_1d();
        let spec = GridSpec::line(-4.0, 5.0, 181).unwrap();
        let field = GridField::from_fn(spec, 0.0, |x| -0.5 * (x[0] - 0.5).powi(2));
        let next = step_u(&field, &model, 1.0, 1e-3, Scheme::LaxFriedrichsEno2).unwrap();
        let change = next
            .values
            .iter()
            .zip(&field.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(change <= 1e-8, "change {change}");
    }

    #[test]
    fn hopf_lax_single_step() {
        let zero = RateModel::scalar(0.0, 0.0, 0.0, 0.0).unwrap();
        let spec = GridSpec::line(-3.0, 3.0, 301).unwrap();
        let field = GridField::from_fn(spec, 0.0, |x| -x[0] * x[0]);
        let dt = 1e-3;
        for scheme in [Scheme::LaxFriedrichsEno2, Scheme::Central] {
            let next = step_u(&field, &zero, 0.5, dt, scheme).unwrap();
            for (x, v) in next.spec.points().iter().zip(&next.values) {
                let exact = -x[0] * x[0] / (1.0 + 4.0 * dt);
                assert!((v - exact).abs() <= 1e-6, "{scheme:?} at {x:?}: {v} vs {exact}");
            }
        }
    }

    #[test]
    fn first_order_flux_is_dissipative_but_close() {
        let zero = RateModel::scalar(0.0, 0.0, 0.0, 0.0).unwrap();
        let spec = GridSpec::line(-3.0, 3.0, 301).unwrap();
        let field = GridField::from_fn(spec, 0.0, |x| -x[0] * x[0]);
        let next = step_u(&field, &zero, 0.5, 1e-3, Scheme::LaxFriedrichs).unwrap();
        let mid = next.nearest_node(&[0.0]);
        // dissipation pulls the peak down by about alpha h |u_xx| dt / 2
        assert!(next.values[mid] < 0.0 && next.values[mid] > -1e-4);
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let model = RateModel::canonical_1d();
        let spec = GridSpec::line(-3.0, 3.0, 601).unwrap();
        let h = spec.h(0);
        let field = GridField::from_fn(spec, 0.0, |x| -x[0] * x[0]);
        match step_u(&field, &model, 0.75, 10.0 * h, Scheme::default()) {
            Err(Error::StepRejected { suggested_dt, .. }) => {
                assert!(suggested_dt < 10.0 * h);
                assert!(step_u(&field, &model, 0.75, suggested_dt, Scheme::default()).is_ok());
            }
            other => panic!("expected rejection, got {other:?}"),
        }
        assert!((max_stable_dt(&field, Scheme::default()) - h / 13.0).abs() < 1e-12);
    }

    #[test]
    fn two_dimensional_step_is_exact_on_quadratics() {
        let zero = RateModel::new(
            0.0,
            DMatrix::zeros(2, 2),
            DVector::zeros(2),
            0.0,
            crate::Psi::Const { value: 1.0 },
        )
        .unwrap();
        let spec = GridSpec::uniform(&[-2.0, -2.0], &[2.0, 2.0], 81).unwrap();
        let field = GridField::from_fn(spec, 0.0, |x| -x[0] * x[0] - 0.5 * x[1] * x[1]);
        let dt = 1e-3;
        let next = step_u(&field, &zero, 0.5, dt, Scheme::default()).unwrap();
        for (x, v) in next.spec.points().iter().zip(&next.values) {
            let exact = -x[0] * x[0] / (1.0 + 4.0 * dt) - 0.5 * x[1] * x[1] / (1.0 + 2.0 * dt);
            assert!((v - exact).abs() <= 1e-8);
        }
    }

    #[test]
    fn stationary_run_stays_put() {
        let model = RateModel::canonical_1d();
        let init = canonical_init(0.5, 0.5);
        let mut cfg = LimitConfig::new(GridSpec::line(-4.0, 5.0, 181).unwrap(), 1e-3, 5.0);
        cfg.sample_every = 100;
        let run = solve_limit(&model, &init, &cfg).unwrap();
        for s in &run.record.samples {
            assert!((s.xbar[0] - 0.5).abs() <= 1e-6);
            assert!((s.resource - 1.0).abs() <= 1e-6);
        }
        run.check_invariants().unwrap();
    }

    fn endpoint_error(n: usize, dt: f64) -> f64 {
        let model = RateModel::canonical_1d();
        let init = canonical_init(0.0, 1.0);
        let mut cfg = LimitConfig::new(GridSpec::line(-4.0, 5.0, n).unwrap(), dt, 2.0);
        cfg.sample_every = usize::MAX;
        let run = solve_limit(&model, &init, &cfg).unwrap();
        assert!(run.record.projections.is_empty());
        run.check_invariants().unwrap();
        let oracle = integrate_oracle(&model, &init, 2.0, 1e-4, 20000).unwrap();
        let (a, b) = (run.record.last().unwrap(), oracle.record.last().unwrap());
        (a.xbar[0] - b.xbar[0]).abs().max((a.resource - b.resource).abs())
    }

    #[test]
    fn grid_convergence_against_oracle() {
        let coarse = endpoint_error(226, 1.25e-3);
        let fine = endpoint_error(451, 6.25e-4);
        assert!(coarse / fine >= 3.0, "coarse {coarse}, fine {fine}");
        assert!(fine < 1e-4);
    }

    #[test]
    fn peak_leaving_the_box_is_reported() {
        let model = RateModel::canonical_1d();
        let init = canonical_init(0.0, 1.0);
        let cfg = LimitConfig::new(GridSpec::line(-4.0, 0.2, 85).unwrap(), 1e-3, 2.0);
        assert!(matches!(solve_limit(&model, &init, &cfg), Err(Error::PeakEscapedDomain { .. })));
    }
}
