//! Exact reduction of the constrained problem for quadratic data.
//!
//! Substituting `u(t, x) = -(x - m)^T A (x - m)` into
//! `u_t = |grad u|^2 + R(x, I)` with the canonical rate and matching powers
//! of `y = x - m` gives
//!
//! ```text
//! order 0:  0 = a - (m - theta)^T B (m - theta) - c I
//! order 1:  dm/dt = -A^{-1} B (m - theta)
//! order 2:  dA/dt = B - 4 A^2
//! ```
//!
//! `max u = u(m) = 0` holds identically, so the constraint fixes `I`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::initial::InitialData;
use crate::ode::{dopri5, rk4_step};
use crate::rate_model::RateModel;
use crate::trajectory::{upper_triangle, TrajectoryRecord, TrajectorySample};

/// State of the quadratic ansatz at time `t`, with the resource level that
/// accompanies it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticAnsatz {
    pub t: f64,
    pub m: DVector<f64>,
    pub a: DMatrix<f64>,
    pub resource: f64,
}

impl QuadraticAnsatz {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = self.m.len();
        let mut q = 0.0;
        for i in 0..d {
            for j in 0..d {
                q += (x[i] - self.m[i]) * self.a[(i, j)] * (x[j] - self.m[j]);
            }
        }
        -q
    }

    /// `|grad u|^2 = 4 |A (x - m)|^2`
    pub fn grad_norm_sq(&self, x: &[f64]) -> f64 {
        let y = DVector::from_iterator(self.m.len(), x.iter().zip(self.m.iter()).map(|(a, b)| a - b));
        4.0 * (&self.a * y).norm_squared()
    }
}

/// Right-hand side of the reduced system.
#[derive(Debug, Clone)]
pub struct AnsatzOde {
    model: RateModel,
}

impl AnsatzOde {
    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// `(dm/dt, dA/dt)`; fails if `A` is singular.
    pub fn rhs(&self, m: &DVector<f64>, a: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let b = self.model.b();
        let shift = m - self.model.theta();
        let dm = a
            .clone()
            .lu()
            .solve(&(b * shift))
            .ok_or_else(|| Error::IntegrationFailure {
                t: f64::NAN,
                reason: "curvature matrix became singular".into(),
            })?;
        let da = b - (a * a) * 4.0;
        Ok((-dm, da))
    }

    /// `I = (a - (m - theta)^T B (m - theta)) / c`
    pub fn resource(&self, m: &DVector<f64>) -> f64 {
        (self.model.a() - self.model.selection_quad(m.as_slice())) / self.model.c()
    }

    fn pack(m: &DVector<f64>, a: &DMatrix<f64>) -> Vec<f64> {
        m.iter().chain(a.iter()).copied().collect()
    }

    fn unpack(&self, y: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim();
        let m = DVector::from_column_slice(&y[..d]);
        let a = DMatrix::from_column_slice(d, d, &y[d..]);
        (m, a)
    }

    fn flat_rhs(&self, y: &[f64]) -> Vec<f64> {
        let (m, a) = self.unpack(y);
        match self.rhs(&m, &a) {
            Ok((dm, da)) => Self::pack(&dm, &da),
            Err(_) => vec![f64::NAN; y.len()],
        }
    }
}

/// Builds the reduced system; requires the canonical family and exactly
/// quadratic `u0`.
pub fn reduce(model: &RateModel, init: &InitialData) -> Result<AnsatzOde> {
    if !model.is_canonical() {
        return Err(Error::OracleInapplicable(format!(
            "resource-dependent curvature (kappa = {})",
            model.kappa()
        )));
    }
    if !(model.c() > 0.0) {
        return Err(Error::OracleInapplicable("c must be positive".into()));
    }
    if init.quadratic_form().is_none() {
        return Err(Error::OracleInapplicable("u0 is not an exact quadratic".into()));
    }
    if init.dim() != model.dim() {
        return Err(Error::Config("initial data and model dimensions differ".into()));
    }
    Ok(AnsatzOde { model: model.clone() })
}

/// History plus the trajectory record derived from it.
#[derive(Debug, Clone)]
pub struct OracleRun {
    pub history: Vec<QuadraticAnsatz>,
    pub record: TrajectoryRecord,
}

fn symmetrize(a: &mut DMatrix<f64>) {
    let s = (&*a + a.transpose()) * 0.5;
    *a = s;
}

fn sample_of(ode: &AnsatzOde, model: &RateModel, state: &QuadraticAnsatz) -> Result<TrajectorySample> {
    let x = state.m.as_slice();
    // cross-check the closed form against the generic root solve
    let solved = model.solve_i_for_zero(x)?;
    if (solved - state.resource).abs() > 1e-10 {
        return Err(Error::Internal(format!(
            "closed-form resource {} disagrees with root solve {solved}",
            state.resource
        )));
    }
    let _ = ode;
    Ok(TrajectorySample {
        t: state.t,
        xbar: x.to_vec(),
        curvature: upper_triangle(&state.a),
        resource: state.resource,
        rho: state.resource / model.psi().eval(x),
        constraint_residual: state.eval(x).abs(),
        r_residual: model.rate(x, state.resource).abs(),
    })
}

fn check_spd(a: &DMatrix<f64>, t: f64) -> Result<()> {
    if a.iter().any(|v| !v.is_finite()) || a.clone().cholesky().is_none() {
        return Err(Error::IntegrationFailure {
            t,
            reason: "curvature matrix lost positive definiteness".into(),
        });
    }
    Ok(())
}

/// Fixed-step RK4 integration of `(m, A)` on `[0, t_end]`. Every step is kept
/// in `history`; the record is sampled every `sample_every` steps (and at the
/// final time).
pub fn integrate_oracle(
    model: &RateModel,
    init: &InitialData,
    t_end: f64,
    dt: f64,
    sample_every: usize,
) -> Result<OracleRun> {
    if !(dt > 0.0 && t_end >= 0.0) {
        return Err(Error::InvalidArgument(format!("need dt > 0 and T >= 0, got {dt}, {t_end}")));
    }
    let ode = reduce(model, init)?;
    let (m0, a0) = init.quadratic_form().expect("checked by reduce");
    let steps = (t_end / dt).round() as usize;
    if ((steps as f64) * dt - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(Error::InvalidArgument(format!("T = {t_end} is not a multiple of dt = {dt}")));
    }
    let sample_every = sample_every.max(1);
    let f = |_t: f64, y: &[f64]| ode.flat_rhs(y);
    let mut y = AnsatzOde::pack(m0, a0);
    let mut history = Vec::with_capacity(steps + 1);
    let mut record = TrajectoryRecord::default();
    for k in 0..=steps {
        let t = k as f64 * dt;
        let (m, mut a) = ode.unpack(&y);
        symmetrize(&mut a);
        check_spd(&a, t)?;
        let state = QuadraticAnsatz {
            t,
            resource: ode.resource(&m),
            m,
            a,
        };
        if k % sample_every == 0 || k == steps {
            record.samples.push(sample_of(&ode, model, &state)?);
        }
        y = AnsatzOde::pack(&state.m, &state.a);
        history.push(state);
        if k < steps {
            y = rk4_step(&f, t, &y, dt);
        }
    }
    Ok(OracleRun { history, record })
}

/// Adaptive reference integration evaluated at `sample_times`.
pub fn integrate_oracle_adaptive(
    model: &RateModel,
    init: &InitialData,
    sample_times: &[f64],
    tol: f64,
) -> Result<OracleRun> {
    let ode = reduce(model, init)?;
    let (m0, a0) = init.quadratic_form().expect("checked by reduce");
    let f = |_t: f64, y: &[f64]| ode.flat_rhs(y);
    let states = dopri5(&f, 0.0, &AnsatzOde::pack(m0, a0), sample_times, tol)?;
    let mut history = Vec::with_capacity(states.len());
    let mut record = TrajectoryRecord::default();
    for (&t, y) in sample_times.iter().zip(states) {
        let (m, mut a) = ode.unpack(&y);
        symmetrize(&mut a);
        check_spd(&a, t)?;
        let state = QuadraticAnsatz {
            t,
            resource: ode.resource(&m),
            m,
            a,
        };
        record.samples.push(sample_of(&ode, model, &state)?);
        history.push(state);
    }
    Ok(OracleRun { history, record })
}

/// Order of the finite-difference time derivative in [`hj_residual`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TimeDifferencing {
    Second,
    #[default]
    Fourth,
}

fn time_derivative(values: &[f64], k: usize, dt: f64, order: TimeDifferencing) -> f64 {
    let n = values.len();
    let u = |i: usize| values[i];
    match order {
        TimeDifferencing::Second => {
            if k == 0 {
                (-3.0 * u(0) + 4.0 * u(1) - u(2)) / (2.0 * dt)
            } else if k == n - 1 {
                (3.0 * u(k) - 4.0 * u(k - 1) + u(k - 2)) / (2.0 * dt)
            } else {
                (u(k + 1) - u(k - 1)) / (2.0 * dt)
            }
        }
        TimeDifferencing::Fourth => {
            if k >= 2 && k + 2 < n {
                (-u(k + 2) + 8.0 * u(k + 1) - 8.0 * u(k - 1) + u(k - 2)) / (12.0 * dt)
            } else if k < 2 {
                // one-sided five-point stencils at the start
                let s = |i: usize| u(i);
                if k == 0 {
                    (-25.0 * s(0) + 48.0 * s(1) - 36.0 * s(2) + 16.0 * s(3) - 3.0 * s(4)) / (12.0 * dt)
                } else {
                    (-3.0 * s(0) - 10.0 * s(1) + 18.0 * s(2) - 6.0 * s(3) + s(4)) / (12.0 * dt)
                }
            } else {
                let s = |i: usize| u(n - 1 - i);
                let back = if k == n - 1 {
                    (-25.0 * s(0) + 48.0 * s(1) - 36.0 * s(2) + 16.0 * s(3) - 3.0 * s(4)) / (12.0 * dt)
                } else {
                    (-3.0 * s(0) - 10.0 * s(1) + 18.0 * s(2) - 6.0 * s(3) + s(4)) / (12.0 * dt)
                };
                -back
            }
        }
    }
}

/// Largest pointwise residual `|u_t - |grad u|^2 - R(x, I(t))|` of an ansatz
/// history over the nodes of `grid` and all recorded times. Spatial
/// derivatives are analytic; `u_t` is differenced in time (uniform spacing).
pub fn hj_residual(
    model: &RateModel,
    history: &[QuadraticAnsatz],
    grid: &GridSpec,
    order: TimeDifferencing,
) -> Result<f64> {
    let needed = match order {
        TimeDifferencing::Second => 3,
        TimeDifferencing::Fourth => 5,
    };
    if history.len() < needed {
        return Err(Error::InvalidArgument(format!(
            "history needs at least {needed} time levels, got {}",
            history.len()
        )));
    }
    if grid.dim() != model.dim() {
        return Err(Error::Config("residual grid dimension differs from the model".into()));
    }
    let dt = history[1].t - history[0].t;
    let uniform = history
        .windows(2)
        .all(|w| ((w[1].t - w[0].t) - dt).abs() <= 1e-9 * dt.max(1e-300));
    if !(dt > 0.0) || !uniform {
        return Err(Error::InvalidArgument("history must be uniformly spaced in time".into()));
    }
    let mut worst = 0.0_f64;
    let mut values = vec![0.0; history.len()];
    for x in grid.points() {
        for (v, state) in values.iter_mut().zip(history) {
            *v = state.eval(&x);
        }
        for (k, state) in history.iter().enumerate() {
            let ut = time_derivative(&values, k, dt, order);
            let res = ut - state.grad_norm_sq(&x) - model.rate(&x, state.resource);
            worst = worst.max(res.abs());
        }
    }
    Ok(worst)
}
