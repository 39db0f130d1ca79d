//! The selection-mutation model at mutation scale `eps`:
//!
//! ```text
//! n_t - eps Lap n = n R(x, I) / eps,   I(t) = int psi n dx,
//! ```
//!
//! and its Hopf-Cole form `u = eps log n`,
//! `u_t = eps Lap u + |grad u|^2 + R(x, I)`.
//!
//! The density form uses Strang splitting of an exact exponential reaction
//! step around an implicit heat step with reflecting walls. The potential
//! form reuses the limit solver's flux for `|grad u|^2 + R` and treats
//! `eps Lap u` implicitly, so it stays free of the `1/eps` stiffness and of
//! underflow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{argmax_u, GridField, GridSpec};
use crate::hj::{HjOperator, Scheme};
use crate::initial::{InitialData, SandwichReport};
use crate::rate_model::RateModel;

/// At or below this `eps` only the potential form is evolved as primary.
pub const POTENTIAL_FORM_THRESHOLD: f64 = 0.0125;

/// Safety factor of the reaction step bound `dt <= safety * eps / max|R|`.
pub const REACTION_SAFETY: f64 = 0.25;

/// Boundary-to-peak density ratio above which a mass-leak event is counted.
pub const LEAK_RATIO: f64 = 1e-12;

/// Tolerance of the sandwich diagnostics.
pub const SANDWICH_TOL: f64 = 1e-6;

/// Which unknown carries the reported series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    /// density above [`POTENTIAL_FORM_THRESHOLD`], potential otherwise
    #[default]
    Auto,
    Density,
    Potential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Closure {
    /// zero flux through the walls
    Reflecting,
    /// ghost values from the quadratic through the three edge nodes
    Quadratic,
}

/// Thomas algorithm; `sub[0]` and `sup[n-1]` are ignored. Overwrites `rhs`.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64], scratch: &mut [f64]) {
    let n = diag.len();
    scratch[0] = sup[0] / diag[0];
    rhs[0] /= diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * scratch[i - 1];
        scratch[i] = if i + 1 < n { sup[i] / m } else { 0.0 };
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

/// Implicit heat step `w_t = coef Lap w` over `tau`, axis by axis.
/// Crank-Nicolson when `coef tau / h^2 <= 1`, backward Euler otherwise.
fn diffuse(spec: &GridSpec, values: &mut [f64], coef: f64, tau: f64, closure: Closure) {
    let d = spec.dim();
    for k in 0..d {
        let n = spec.n[k];
        let stride = spec.stride(k);
        let lambda = coef * tau / spec.h(k).powi(2);
        let theta = if lambda <= 1.0 { 0.5 } else { 1.0 };
        let (ti, te) = (theta * lambda, (1.0 - theta) * lambda);
        let mut sub = vec![-ti; n];
        let mut diag = vec![1.0 + 2.0 * ti; n];
        let mut sup = vec![-ti; n];
        let mut rhs = vec![0.0; n];
        let mut line = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        match closure {
            Closure::Reflecting => {
                sup[0] = -2.0 * ti;
                sub[n - 1] = -2.0 * ti;
            }
            Closure::Quadratic => {
                // row 0 minus row 1 keeps the system tridiagonal
                diag[0] = 1.0;
                sup[0] = -1.0;
                diag[n - 1] = 1.0;
                sub[n - 1] = -1.0;
            }
        }
        let lines = values.len() / n;
        for l in 0..lines {
            let start = if k + 1 == d { l * n } else { l };
            for i in 0..n {
                line[i] = values[start + i * stride];
            }
            for i in 1..n - 1 {
                rhs[i] = line[i] + te * (line[i - 1] - 2.0 * line[i] + line[i + 1]);
            }
            match closure {
                Closure::Reflecting => {
                    rhs[0] = line[0] + te * 2.0 * (line[1] - line[0]);
                    rhs[n - 1] = line[n - 1] + te * 2.0 * (line[n - 2] - line[n - 1]);
                }
                Closure::Quadratic => {
                    rhs[0] = line[0] - line[1];
                    rhs[n - 1] = line[n - 1] - line[n - 2];
                }
            }
            solve_tridiagonal(&sub, &diag, &sup, &mut rhs, &mut scratch);
            for i in 0..n {
                values[start + i * stride] = rhs[i];
            }
        }
    }
}

/// Quadrature weights times `psi` at the nodes, and the plain weights.
#[derive(Debug, Clone)]
struct Quadrature {
    weights: Vec<f64>,
    psi_weights: Vec<f64>,
}

impl Quadrature {
    fn new(model: &RateModel, spec: &GridSpec) -> Self {
        let weights = spec.simpson_weights();
        let psi_weights = spec
            .points()
            .iter()
            .zip(&weights)
            .map(|(x, w)| w * model.psi().eval(x))
            .collect();
        Quadrature { weights, psi_weights }
    }

    fn resource_of_density(&self, n: &[f64]) -> f64 {
        n.iter().zip(&self.psi_weights).map(|(a, w)| a * w).sum()
    }

    fn mass_of_density(&self, n: &[f64]) -> f64 {
        n.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }

    /// `int psi exp(u / eps)`, summed over the same nodal densities that
    /// [`density_of_potential`] produces.
    fn resource_of_potential(&self, u: &[f64], eps: f64) -> f64 {
        u.iter().zip(&self.psi_weights).map(|(v, w)| (v / eps).exp() * w).sum()
    }

    fn mass_of_potential(&self, u: &[f64], eps: f64) -> f64 {
        u.iter().zip(&self.weights).map(|(v, w)| (v / eps).exp() * w).sum()
    }
}

/// `exp(u / eps)` nodewise.
pub fn density_of_potential(u: &GridField, eps: f64) -> GridField {
    GridField {
        spec: u.spec.clone(),
        values: u.values.iter().map(|v| (v / eps).exp()).collect(),
        t: u.t,
    }
}

/// Reaction step `n <- n exp(tau R(x, I) / eps)` with `I` the trapezoid
/// average of its values before and after an Euler predictor.
fn react(model: &RateModel, quad: &[f64], q: &Quadrature, n: &mut [f64], eps: f64, tau: f64) {
    let i0 = q.resource_of_density(n);
    let growth = |i: f64, f: usize| (tau * model.rate_from_quad(quad[f], i) / eps).exp();
    let i1: f64 = n
        .iter()
        .enumerate()
        .map(|(f, v)| v * growth(i0, f) * q.psi_weights[f])
        .sum();
    let mid = 0.5 * (i0 + i1);
    for (f, v) in n.iter_mut().enumerate() {
        *v *= growth(mid, f);
    }
}

/// State of the density form on a fixed grid.
#[derive(Debug, Clone)]
struct DensityStepper {
    spec: GridSpec,
    quad: Vec<f64>,
    q: Quadrature,
}

impl DensityStepper {
    fn new(model: &RateModel, spec: &GridSpec) -> Self {
        DensityStepper {
            spec: spec.clone(),
            quad: spec.points().iter().map(|x| model.selection_quad(x)).collect(),
            q: Quadrature::new(model, spec),
        }
    }

    fn step(&self, model: &RateModel, n: &mut [f64], eps: f64, dt: f64) -> Result<()> {
        react(model, &self.quad, &self.q, n, eps, 0.5 * dt);
        diffuse(&self.spec, n, eps, dt, Closure::Reflecting);
        react(model, &self.quad, &self.q, n, eps, 0.5 * dt);
        if let Some(bad) = n.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Internal(format!("density step produced {bad}")));
        }
        Ok(())
    }
}

/// State of the potential form on a fixed grid.
#[derive(Debug, Clone)]
struct PotentialStepper {
    spec: GridSpec,
    op: HjOperator,
    q: Quadrature,
}

impl PotentialStepper {
    fn new(model: &RateModel, spec: &GridSpec) -> Self {
        PotentialStepper {
            spec: spec.clone(),
            op: HjOperator::new(model, spec, Scheme::LaxFriedrichsEno2),
            q: Quadrature::new(model, spec),
        }
    }

    fn step(&mut self, model: &RateModel, u: &mut [f64], eps: f64, dt: f64) -> Result<()> {
        diffuse(&self.spec, u, eps, 0.5 * dt, Closure::Quadratic);
        let q = &self.q;
        self.op
            .step(model, u, dt, |_, values| Ok(q.resource_of_potential(values, eps)))?;
        diffuse(&self.spec, u, eps, 0.5 * dt, Closure::Quadratic);
        Ok(())
    }
}

/// One step of the density form.
pub fn step_parabolic(n: &GridField, model: &RateModel, eps: f64, dt: f64) -> Result<GridField> {
    check_eps_dt(eps, dt)?;
    if n.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument("density must be finite and nonnegative".into()));
    }
    let stepper = DensityStepper::new(model, &n.spec);
    let mut values = n.values.clone();
    stepper.step(model, &mut values, eps, dt)?;
    Ok(GridField {
        spec: n.spec.clone(),
        values,
        t: n.t + dt,
    })
}

/// One step of the potential form `u = eps log n`.
pub fn step_potential(u: &GridField, model: &RateModel, eps: f64, dt: f64) -> Result<GridField> {
    check_eps_dt(eps, dt)?;
    let mut stepper = PotentialStepper::new(model, &u.spec);
    let mut values = u.values.clone();
    stepper.step(model, &mut values, eps, dt)?;
    Ok(GridField {
        spec: u.spec.clone(),
        values,
        t: u.t + dt,
    })
}

fn check_eps_dt(eps: f64, dt: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite() && dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("need eps > 0 and dt > 0, got {eps}, {dt}")));
    }
    Ok(())
}

/// Initial density and potential.
#[derive(Debug, Clone)]
pub struct InitialState {
    pub density: GridField,
    pub potential: GridField,
    /// `int psi n` at `t = 0`
    pub resource: f64,
}

/// `n0 = (r / eps^{d/2}) exp(u0 / eps)` and `u_eps0 = u0 + eps log(r / eps^{d/2})`.
pub fn init_n0(model: &RateModel, init: &InitialData, eps: f64, spec: &GridSpec) -> Result<InitialState> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let u0 = init.sample(spec)?;
    let shift = hopf_cole_shift(init, eps);
    let potential = GridField {
        spec: spec.clone(),
        values: u0.values.iter().map(|u| u + shift).collect(),
        t: 0.0,
    };
    let density = GridField {
        spec: spec.clone(),
        values: potential.values.iter().map(|u| (u / eps).exp()).collect(),
        t: 0.0,
    };
    let resource = Quadrature::new(model, spec).resource_of_potential(&potential.values, eps);
    let i_max = model.i_max();
    if !(resource > 0.0 && resource < i_max) {
        return Err(Error::InadmissibleInitialMass { mass: resource, i_max });
    }
    Ok(InitialState {
        density,
        potential,
        resource,
    })
}

/// `eps log(r / eps^{d/2})`
pub fn hopf_cole_shift(init: &InitialData, eps: f64) -> f64 {
    eps * (init.r / eps.powf(0.5 * init.dim() as f64)).ln()
}

/// Settings of a run at one `eps`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsConfig {
    pub eps: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    /// explicit grid; if absent, `box_lo`/`box_hi` with `h <= sqrt(eps)/10`
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub box_lo: Option<Vec<f64>>,
    #[serde(default)]
    pub box_hi: Option<Vec<f64>>,
    /// explicit step; if absent, the reaction and CFL bounds
    #[serde(default)]
    pub dt: Option<f64>,
    /// samples are recorded at multiples of this interval
    #[serde(default = "default_sample_interval")]
    pub sample_interval: f64,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default)]
    pub form: Form,
}

fn default_sample_interval() -> f64 {
    0.1
}

/// Default trait box of the parabolic runs and the sweeps.
pub const DEFAULT_BOX: (f64, f64) = (-4.0, 5.0);

impl EpsConfig {
    pub fn new(eps: f64, t_end: f64) -> Self {
        EpsConfig {
            eps,
            t_end,
            grid: None,
            box_lo: None,
            box_hi: None,
            dt: None,
            sample_interval: default_sample_interval(),
            snapshot_times: Vec::new(),
            form: Form::Auto,
        }
    }

    /// The run grid: explicit, or the box refined to `h <= sqrt(eps)/10`.
    pub fn resolve_grid(&self, dim: usize) -> Result<GridSpec> {
        if let Some(g) = &self.grid {
            return Ok(g.clone());
        }
        let lo = self.box_lo.clone().unwrap_or_else(|| vec![DEFAULT_BOX.0; dim]);
        let hi = self.box_hi.clone().unwrap_or_else(|| vec![DEFAULT_BOX.1; dim]);
        if lo.len() != dim || hi.len() != dim {
            return Err(Error::Config("box dimension differs from the model".into()));
        }
        let h_max = self.eps.sqrt() / 10.0;
        let n = (0..dim)
            .map(|k| ((hi[k] - lo[k]) / h_max).ceil() as usize + 1)
            .collect();
        GridSpec::new(lo, hi, n)
    }

    /// The run step: explicit, or the smaller of the reaction bound and the
    /// CFL bound of the initial potential, shrunk to divide
    /// `sample_interval` evenly.
    pub fn resolve_dt(&self, model: &RateModel, start: &GridField) -> Result<f64> {
        if let Some(dt) = self.dt {
            return Ok(dt);
        }
        let i_hi = if model.i_max().is_finite() { model.i_max() } else { 1.0 };
        let max_rate = start
            .spec
            .points()
            .iter()
            .map(|x| model.rate(x, 0.0).abs().max(model.rate(x, i_hi).abs()))
            .fold(0.0, f64::max);
        let reaction = if max_rate > 0.0 {
            REACTION_SAFETY * self.eps / max_rate
        } else {
            f64::INFINITY
        };
        let bound = reaction.min(0.5 * crate::hj::max_stable_dt(start, Scheme::LaxFriedrichsEno2));
        let per_sample = (self.sample_interval / bound).ceil().max(1.0);
        Ok(self.sample_interval / per_sample)
    }
}

/// One recorded time level of a parabolic run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsSample {
    pub t: f64,
    /// `I_eps = int psi n`
    pub resource: f64,
    /// peak of `u_eps`
    pub xbar: [f64; 2],
    /// `int n`
    pub mass: f64,
    /// `int psi n`; the same number as `resource`
    pub psi_mass: f64,
}

impl EpsSample {
    pub fn xbar(&self, dim: usize) -> &[f64] {
        &self.xbar[..dim]
    }
}

/// Gap between the density and potential forms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub max_resource_gap: f64,
    pub max_peak_gap: f64,
}

/// Output of [`run_parabolic`].
#[derive(Debug, Clone)]
pub struct EpsRunResult {
    pub eps: f64,
    pub primary: Form,
    pub grid: GridSpec,
    pub dt: f64,
    pub samples: Vec<EpsSample>,
    /// `u_eps` from the potential form at the snapshot times
    pub potential_snapshots: Vec<GridField>,
    /// density of the primary form at the snapshot times
    pub density_snapshots: Vec<GridField>,
    pub sandwich: Vec<SandwichReport>,
    /// `min_t I_eps`
    pub i_min: f64,
    /// `max(0, sup_t I_eps - I_M) / eps^2`
    pub c_fit: f64,
    pub mass_leak_events: usize,
    pub max_boundary_ratio: f64,
    pub cross_check: Option<CrossCheck>,
}

/// Run-level metadata written next to the artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsRunMeta {
    pub eps: f64,
    pub primary: Form,
    pub h: Vec<f64>,
    pub dt: f64,
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    pub i_min: f64,
    pub c_fit: f64,
    pub mass_leak_events: usize,
    pub max_boundary_ratio: f64,
    pub cross_check: Option<CrossCheck>,
    pub sandwich_holds: bool,
}

impl EpsRunResult {
    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn at(&self, t: f64) -> Option<&EpsSample> {
        self.samples.iter().find(|s| (s.t - t).abs() < 1e-9)
    }

    pub fn potential_at(&self, t: f64) -> Option<&GridField> {
        self.potential_snapshots.iter().find(|f| (f.t - t).abs() < 1e-9)
    }

    pub fn density_at(&self, t: f64) -> Option<&GridField> {
        self.density_snapshots.iter().find(|f| (f.t - t).abs() < 1e-9)
    }

    pub fn sandwich_holds(&self) -> bool {
        self.sandwich.iter().all(|s| s.holds(SANDWICH_TOL))
    }

    pub fn meta(&self) -> EpsRunMeta {
        EpsRunMeta {
            eps: self.eps,
            primary: self.primary,
            h: (0..self.dim()).map(|k| self.grid.h(k)).collect(),
            dt: self.dt,
            box_lo: self.grid.lo.clone(),
            box_hi: self.grid.hi.clone(),
            i_min: self.i_min,
            c_fit: self.c_fit,
            mass_leak_events: self.mass_leak_events,
            max_boundary_ratio: self.max_boundary_ratio,
            cross_check: self.cross_check,
            sandwich_holds: self.sandwich_holds(),
        }
    }

    /// CSV with columns `t, I_eps, x_1..x_d, mass, psi_mass`.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let d = self.dim();
        let mut out = String::from("t,I_eps");
        for k in 1..=d {
            let _ = write!(out, ",x_{k}");
        }
        out.push_str(",mass,psi_mass\n");
        for s in &self.samples {
            let _ = write!(out, "{},{}", s.t, s.resource);
            for x in s.xbar(d) {
                let _ = write!(out, ",{x}");
            }
            let _ = writeln!(out, ",{},{}", s.mass, s.psi_mass);
        }
        out
    }
}

fn peak_of(field: &GridField) -> Result<[f64; 2]> {
    let (x, _) = argmax_u(field)?;
    let mut out = [0.0; 2];
    out[..x.len()].copy_from_slice(&x);
    Ok(out)
}

fn log_density(n: &GridField, eps: f64) -> GridField {
    GridField {
        spec: n.spec.clone(),
        values: n.values.iter().map(|v| eps * v.ln()).collect(),
        t: n.t,
    }
}

fn boundary_ratio_of_potential(u: &GridField, eps: f64) -> f64 {
    let top = u.max_value();
    let edge = (0..u.values.len())
        .filter(|&f| u.spec.is_boundary(f))
        .map(|f| u.values[f])
        .fold(f64::NEG_INFINITY, f64::max);
    ((edge - top) / eps).exp()
}

/// Solves the model at one `eps` on `[0, T]`.
pub fn run_parabolic(model: &RateModel, init: &InitialData, cfg: &EpsConfig) -> Result<EpsRunResult> {
    let eps = cfg.eps;
    let grid = cfg.resolve_grid(model.dim())?;
    let start = init_n0(model, init, eps, &grid)?;
    let dt = cfg.resolve_dt(model, &start.potential)?;
    check_eps_dt(eps, dt)?;
    let steps = (cfg.t_end / dt).round() as usize;
    if ((steps as f64) * dt - cfg.t_end).abs() > 1e-9 * cfg.t_end.max(1.0) {
        return Err(Error::InvalidArgument(format!("T = {} is not a multiple of dt = {dt}", cfg.t_end)));
    }
    let sample_every = ((cfg.sample_interval / dt).round() as usize).max(1);
    let snapshot_steps: Vec<usize> = cfg
        .snapshot_times
        .iter()
        .map(|&t| ((t / dt).round() as usize).min(steps))
        .collect();

    let run_density = match cfg.form {
        Form::Auto => eps > POTENTIAL_FORM_THRESHOLD,
        Form::Density => true,
        Form::Potential => false,
    };
    let primary = if run_density { Form::Density } else { Form::Potential };

    let bounds = model.bounds(&grid.bounds(), (0.0, model.i_max()));
    let sandwich = init.sandwich.shifted(hopf_cole_shift(init, eps));
    let centre: Vec<f64> = model.theta().iter().copied().collect();
    let quadrature = Quadrature::new(model, &grid);
    let mut potential_stepper = PotentialStepper::new(model, &grid);
    let density_stepper = DensityStepper::new(model, &grid);

    let mut u = start.potential;
    let mut n = start.density;

    let mut result = EpsRunResult {
        eps,
        primary,
        grid: grid.clone(),
        dt,
        samples: Vec::new(),
        potential_snapshots: Vec::new(),
        density_snapshots: Vec::new(),
        sandwich: Vec::new(),
        i_min: f64::INFINITY,
        c_fit: 0.0,
        mass_leak_events: 0,
        max_boundary_ratio: 0.0,
        cross_check: run_density.then(CrossCheck::default),
    };
    let i_max = model.i_max();
    let mut i_sup = f64::NEG_INFINITY;

    for step in 0..=steps {
        let t = step as f64 * dt;
        u.t = t;
        n.t = t;
        if step % sample_every == 0 || step == steps {
            let potential_resource = quadrature.resource_of_potential(&u.values, eps);
            let potential_peak = peak_of(&u)?;
            let sample = if run_density {
                let psi_mass = quadrature.resource_of_density(&n.values);
                let peak = peak_of(&log_density(&n, eps))?;
                let gap = result.cross_check.as_mut().expect("set for density runs");
                gap.max_resource_gap = gap.max_resource_gap.max((psi_mass - potential_resource).abs());
                let dx = (0..model.dim())
                    .map(|k| (peak[k] - potential_peak[k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                gap.max_peak_gap = gap.max_peak_gap.max(dx);
                EpsSample {
                    t,
                    resource: psi_mass,
                    xbar: peak,
                    mass: quadrature.mass_of_density(&n.values),
                    psi_mass,
                }
            } else {
                EpsSample {
                    t,
                    resource: potential_resource,
                    xbar: potential_peak,
                    mass: quadrature.mass_of_potential(&u.values, eps),
                    psi_mass: potential_resource,
                }
            };
            if !(sample.resource > 0.0 && sample.resource.is_finite()) {
                return Err(Error::invariant(
                    "resource_bounds",
                    format!("I_eps = {} at t = {t}", sample.resource),
                ));
            }
            result.i_min = result.i_min.min(sample.resource);
            i_sup = i_sup.max(sample.resource);
            result.samples.push(sample);
            result.sandwich.push(sandwich.check(&u, &centre, &bounds, eps));
            let ratio = boundary_ratio_of_potential(&u, eps);
            result.max_boundary_ratio = result.max_boundary_ratio.max(ratio);
            if ratio > LEAK_RATIO {
                result.mass_leak_events += 1;
            }
        }
        if snapshot_steps.contains(&step) {
            result.potential_snapshots.push(u.clone());
            result.density_snapshots.push(if run_density {
                n.clone()
            } else {
                density_of_potential(&u, eps)
            });
        }
        if step == steps {
            break;
        }
        potential_stepper.step(model, &mut u.values, eps, dt).map_err(|e| match e {
            Error::IntegrationFailure { reason, .. } => Error::IntegrationFailure { t, reason },
            other => other,
        })?;
        if run_density {
            density_stepper.step(model, &mut n.values, eps, dt)?;
        }
    }
    result.c_fit = if i_max.is_finite() {
        (i_sup - i_max).max(0.0) / (eps * eps)
    } else {
        0.0
    };
    Ok(result)
}
