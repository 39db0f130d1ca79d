//! The path map behind uniqueness: a candidate trait path `x` fixes
//! `I` through `R(x, I) = 0`, `I` drives an unconstrained HJ solve `v`, and
//! `y' = (-D^2 v(t, x(t)))^{-1} grad_x R(x(t), I(t))` with `y(0) = x0`
//! defines the image `y = Phi(x)`. The solution of the constrained problem
//! is the fixed point of `Phi` on short windows `[0, delta]`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridField, GridSpec};
use crate::hj::{HjOperator, Scheme};
use crate::initial::InitialData;
use crate::rate_model::RateModel;
use crate::transport::{solve_transport_characteristics, TransportAgreement};

/// Default radius of the ball around `x0` that iterates must stay in.
pub const DEFAULT_BALL_RADIUS: f64 = 0.2;

/// Trait values on the uniform grid `t_k = k dt`, `k = 0..=K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitPath {
    pub dt: f64,
    pub values: Vec<Vec<f64>>,
}

/// Resource values on the uniform grid `t_k = k dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourcePath {
    pub dt: f64,
    pub values: Vec<f64>,
}

fn check_time_grid(dt: f64, len: usize) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) || len < 2 {
        return Err(Error::InvalidArgument(format!(
            "paths need dt > 0 and at least two samples (dt = {dt}, {len} samples)"
        )));
    }
    Ok(())
}

impl TraitPath {
    pub fn new(dt: f64, values: Vec<Vec<f64>>) -> Result<Self> {
        check_time_grid(dt, values.len())?;
        let d = values[0].len();
        if values.iter().any(|x| x.len() != d || x.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument("trait path values must be finite vectors of one length".into()));
        }
        Ok(TraitPath { dt, values })
    }

    pub fn constant(x0: &[f64], delta: f64, dt: f64) -> Result<Self> {
        let steps = steps_for(delta, dt)?;
        Self::new(dt, vec![x0.to_vec(); steps + 1])
    }

    /// Samples `f(t)` on `[0, delta]`.
    pub fn from_fn(delta: f64, dt: f64, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let steps = steps_for(delta, dt)?;
        Self::new(dt, (0..=steps).map(|k| f(k as f64 * dt)).collect())
    }

    pub fn delta(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.dt
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// `max_k |x(t_k) - y(t_k)|` (Euclidean in trait space).
    pub fn distance(&self, other: &TraitPath) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// `max_k |x(t_k) - centre|`.
    pub fn radius_about(&self, centre: &[f64]) -> f64 {
        self.values
            .iter()
            .map(|a| a.iter().zip(centre).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

impl ResourcePath {
    pub fn new(dt: f64, values: Vec<f64>) -> Result<Self> {
        check_time_grid(dt, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("resource path values must be finite".into()));
        }
        Ok(ResourcePath { dt, values })
    }

    pub fn from_fn(delta: f64, dt: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let steps = steps_for(delta, dt)?;
        Self::new(dt, (0..=steps).map(|k| f(k as f64 * dt)).collect())
    }

    pub fn delta(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.dt
    }

    pub fn sup_distance(&self, other: &ResourcePath) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn steps_for(delta: f64, dt: f64) -> Result<usize> {
    if !(delta > 0.0 && dt > 0.0) {
        return Err(Error::InvalidArgument(format!("need delta > 0 and dt > 0, got {delta}, {dt}")));
    }
    let steps = (delta / dt).round() as usize;
    if steps == 0 || ((steps as f64) * dt - delta).abs() > 1e-9 * delta {
        return Err(Error::InvalidArgument(format!("delta = {delta} is not a multiple of dt = {dt}")));
    }
    Ok(steps)
}

/// `I(t_k)` solving `R(x(t_k), I) = 0` along the path.
pub fn path_to_resource(model: &RateModel, path: &TraitPath) -> Result<ResourcePath> {
    let mut values = Vec::with_capacity(path.values.len());
    for (k, x) in path.values.iter().enumerate() {
        let i = model.solve_i_for_zero(x).map_err(|e| match e {
            Error::NoPositiveRoot { x, r0 } => Error::PathNotViable {
                t: k as f64 * path.dt,
                x,
                r0,
            },
            other => other,
        })?;
        values.push(i);
    }
    ResourcePath::new(path.dt, values)
}

/// Result of a Picard iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PicardRun {
    pub path: TraitPath,
    /// `|x^{k+1} - x^k|_inf` for every performed iteration
    pub distances: Vec<f64>,
    pub converged: bool,
}

impl PicardRun {
    /// Ratios of consecutive iterate distances.
    pub fn ratios(&self) -> Vec<f64> {
        self.distances
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .collect()
    }
}

/// Discrete `W^{2,inf}` norm of a space-time field.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct W2InfNorm {
    pub sup: f64,
    pub grad: f64,
    pub hess: f64,
}

impl W2InfNorm {
    pub fn total(&self) -> f64 {
        self.sup.max(self.grad).max(self.hess)
    }
}

/// Sup of `|r|`, `|grad r|` and `|D^2 r|` (largest entry) over all time
/// levels and the nodes at least two cells from the edge, with centered
/// differences.
pub fn w2inf_norm(history: &[GridField]) -> W2InfNorm {
    let mut norm = W2InfNorm::default();
    for field in history {
        let spec = &field.spec;
        let u = &field.values;
        let d = spec.dim();
        for f in spec.interior(2) {
            norm.sup = norm.sup.max(u[f].abs());
            let mut g2 = 0.0;
            for k in 0..d {
                let s = spec.stride(k);
                let h = spec.h(k);
                g2 += ((u[f + s] - u[f - s]) / (2.0 * h)).powi(2);
                let dkk = (u[f + s] - 2.0 * u[f] + u[f - s]) / (h * h);
                norm.hess = norm.hess.max(dkk.abs());
            }
            norm.grad = norm.grad.max(g2.sqrt());
            if d == 2 {
                let (s0, s1) = (spec.stride(0), spec.stride(1));
                let mixed = (u[f + s0 + s1] - u[f + s0 - s1] - u[f - s0 + s1] + u[f - s0 - s1])
                    / (4.0 * spec.h(0) * spec.h(1));
                norm.hess = norm.hess.max(mixed.abs());
            }
        }
    }
    norm
}

/// Output of [`Lab::lipschitz_probe`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LipschitzProbe {
    pub delta: f64,
    pub resource_gap: f64,
    pub norm: W2InfNorm,
    /// `|V(I1) - V(I2)|_{W^{2,inf}} / (|I1 - I2|_inf delta)`
    pub ratio: f64,
}

/// Contraction measured for one window length.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaContraction {
    pub delta: f64,
    /// `|Phi(x) - Phi(y)|_inf / |x - y|_inf` per random pair
    pub factors: Vec<f64>,
    pub max_factor: f64,
    pub mean_factor: f64,
}

/// Contraction factors over several window lengths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractionReport {
    pub per_delta: Vec<DeltaContraction>,
    /// least-squares slope of the mean factor against `delta`
    pub slope: f64,
    /// mean factor over the prediction `mean(delta_ref) * delta / delta_ref`,
    /// with `delta_ref` the middle window
    pub linearity_ratios: Vec<f64>,
}

/// Shared setting of the fixed-point experiments: model, initial data,
/// grid and flux. The HJ time step equals the path time step.
#[derive(Debug, Clone)]
pub struct Lab<'a> {
    pub model: &'a RateModel,
    pub init: &'a InitialData,
    pub grid: GridSpec,
    pub scheme: Scheme,
}

impl<'a> Lab<'a> {
    pub fn new(model: &'a RateModel, init: &'a InitialData, grid: GridSpec) -> Result<Self> {
        if grid.dim() != model.dim() || init.dim() != model.dim() {
            return Err(Error::Config("grid, initial data and model dimensions differ".into()));
        }
        Ok(Lab {
            model,
            init,
            grid,
            scheme: Scheme::default(),
        })
    }

    pub fn anchor(&self) -> &[f64] {
        &self.init.xbar0
    }

    /// `v(t_k, .)` for `v_t = |grad v|^2 + R(x, I(t))`, `v(0) = u0`. The
    /// resource is interpolated linearly between path samples at the
    /// Runge-Kutta stage times.
    pub fn solve_v(&self, resource: &ResourcePath) -> Result<Vec<GridField>> {
        let i_max = self.model.i_max();
        if let Some(bad) = resource.values.iter().find(|&&i| !(0.0..=i_max * (1.0 + 1e-12)).contains(&i)) {
            return Err(Error::InvalidArgument(format!("resource {bad} outside [0, {i_max}]")));
        }
        let mut op = HjOperator::new(self.model, &self.grid, self.scheme);
        let mut field = self.init.sample(&self.grid)?;
        let mut history = Vec::with_capacity(resource.values.len());
        history.push(field.clone());
        let dt = resource.dt;
        for w in resource.values.windows(2) {
            let stages = [w[0], w[1], 0.5 * (w[0] + w[1])];
            op.step(self.model, &mut field.values, dt, |s, _| Ok(stages[s]))?;
            field.t += dt;
            history.push(field.clone());
        }
        Ok(history)
    }

    /// `Phi(x)`, with the Hessian of `v` taken along the input path.
    pub fn apply_phi(&self, path: &TraitPath) -> Result<TraitPath> {
        if path.dim() != self.model.dim() {
            return Err(Error::InvalidArgument("path dimension differs from the model".into()));
        }
        let resource = path_to_resource(self.model, path)?;
        let history = self.solve_v(&resource)?;
        let velocity = |k: usize| -> Result<DVector<f64>> {
            let x = &path.values[k];
            let hess = history[k].hessian_at(x)?;
            let grad = self.model.grad_x(x, resource.values[k]);
            (-hess)
                .cholesky()
                .map(|c| c.solve(&grad))
                .ok_or_else(|| Error::IntegrationFailure {
                    t: k as f64 * path.dt,
                    reason: format!("D^2 v is not negative definite at {x:?}"),
                })
        };
        // the right-hand side only depends on t, so Heun reduces to the
        // trapezoid rule
        let mut y = self.anchor().to_vec();
        let mut out = Vec::with_capacity(path.values.len());
        out.push(y.clone());
        let mut prev = velocity(0)?;
        for k in 1..path.values.len() {
            let next = velocity(k)?;
            for (j, yj) in y.iter_mut().enumerate() {
                *yj += 0.5 * path.dt * (prev[j] + next[j]);
            }
            out.push(y.clone());
            prev = next;
        }
        TraitPath::new(path.dt, out)
    }

    /// Picard iteration `x^{k+1} = Phi(x^k)` until the sup distance drops
    /// to `tol` or `k_max` iterations are spent. Fails as soon as an
    /// iterate leaves the ball of radius `radius` around the anchor.
    pub fn iterate_phi(&self, start: &TraitPath, k_max: usize, tol: f64, radius: f64) -> Result<PicardRun> {
        let mut current = start.clone();
        let mut distances = Vec::new();
        for k in 0..k_max {
            let next = self.apply_phi(&current)?;
            let escape = next.radius_about(self.anchor());
            if escape > radius {
                return Err(Error::BallEscape {
                    iteration: k + 1,
                    radius,
                    distance: escape,
                });
            }
            let dist = next.distance(&current);
            distances.push(dist);
            current = next;
            if dist <= tol {
                return Ok(PicardRun {
                    path: current,
                    distances,
                    converged: true,
                });
            }
        }
        Ok(PicardRun {
            path: current,
            distances,
            converged: false,
        })
    }

    /// `|Phi(x) - Phi(y)|_inf / |x - y|_inf`.
    pub fn contraction_factor(&self, x: &TraitPath, y: &TraitPath) -> Result<f64> {
        let gap = x.distance(y);
        if !(gap > 0.0) {
            return Err(Error::DivisionGuard("identical trait paths".into()));
        }
        Ok(self.apply_phi(x)?.distance(&self.apply_phi(y)?) / gap)
    }

    /// Ratio of `|V(I1) - V(I2)|_{W^{2,inf}}` to `|I1 - I2|_inf delta`.
    pub fn lipschitz_probe(&self, i1: &ResourcePath, i2: &ResourcePath) -> Result<LipschitzProbe> {
        if i1.values.len() != i2.values.len() || i1.dt != i2.dt {
            return Err(Error::InvalidArgument("resource paths live on different time grids".into()));
        }
        let gap = i1.sup_distance(i2);
        if !(gap > 0.0) {
            return Err(Error::DivisionGuard("identical resource paths".into()));
        }
        let v1 = self.solve_v(i1)?;
        let v2 = self.solve_v(i2)?;
        let diff: Vec<GridField> = v1
            .iter()
            .zip(&v2)
            .map(|(a, b)| GridField {
                spec: a.spec.clone(),
                values: a.values.iter().zip(&b.values).map(|(p, q)| p - q).collect(),
                t: a.t,
            })
            .collect();
        let norm = w2inf_norm(&diff);
        let delta = i1.delta();
        Ok(LipschitzProbe {
            delta,
            resource_gap: gap,
            norm,
            ratio: norm.total() / (gap * delta),
        })
    }

    /// Contraction factors on `pairs` random path pairs in the ball, for
    /// each window in `deltas`. Paths are drawn in the rescaled time
    /// `s = t / delta`, so the same shapes are reused across windows.
    pub fn contraction_study(
        &self,
        deltas: &[f64],
        steps: usize,
        pairs: usize,
        radius: f64,
        seed: u64,
    ) -> Result<ContractionReport> {
        if deltas.is_empty() || pairs == 0 || steps == 0 {
            return Err(Error::InvalidArgument("need windows, pairs and steps".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes: Vec<(PathShape, PathShape)> = (0..pairs)
            .map(|_| (PathShape::random(&mut rng, self.model.dim(), radius), PathShape::random(&mut rng, self.model.dim(), radius)))
            .collect();
        let mut per_delta = Vec::with_capacity(deltas.len());
        for &delta in deltas {
            let dt = delta / steps as f64;
            let mut factors = Vec::with_capacity(pairs);
            for (a, b) in &shapes {
                let x = a.path(self.anchor(), delta, dt)?;
                let y = b.path(self.anchor(), delta, dt)?;
                factors.push(self.contraction_factor(&x, &y)?);
            }
            let max_factor = factors.iter().copied().fold(0.0, f64::max);
            let mean_factor = factors.iter().sum::<f64>() / factors.len() as f64;
            per_delta.push(DeltaContraction {
                delta,
                factors,
                max_factor,
                mean_factor,
            });
        }
        let slope = least_squares_slope(
            &per_delta.iter().map(|p| p.delta).collect::<Vec<_>>(),
            &per_delta.iter().map(|p| p.mean_factor).collect::<Vec<_>>(),
        );
        let reference = &per_delta[per_delta.len() / 2];
        let linearity_ratios = per_delta
            .iter()
            .map(|p| p.mean_factor / (reference.mean_factor * p.delta / reference.delta))
            .collect();
        Ok(ContractionReport {
            per_delta,
            slope,
            linearity_ratios,
        })
    }
}

/// Lipschitz ratios of `V` for random resource-path pairs over several
/// windows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LipschitzStudy {
    pub deltas: Vec<f64>,
    /// `ratios[pair][window]`
    pub ratios: Vec<Vec<f64>>,
    /// per pair, the largest ratio between consecutive windows (at least 1)
    pub halving_spread: Vec<f64>,
}

impl LipschitzStudy {
    pub fn max_spread(&self) -> f64 {
        self.halving_spread.iter().copied().fold(1.0, f64::max)
    }
}

/// `r = v1 - v2` along characteristics against the direct difference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransportCheck {
    pub agreement: TransportAgreement,
    pub clip_events: usize,
    /// `10 (h^2 + dt)`
    pub tolerance: f64,
}

impl TransportCheck {
    pub fn passed(&self) -> bool {
        self.agreement.compared_nodes > 0 && self.agreement.max_error <= self.tolerance
    }
}

impl Lab<'_> {
    /// Resource paths of random trait paths in the ball, reused across
    /// windows through the rescaled time.
    pub fn random_resource_pairs(
        &self,
        delta: f64,
        steps: usize,
        pairs: usize,
        radius: f64,
        seed: u64,
    ) -> Result<Vec<(ResourcePath, ResourcePath)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dt = delta / steps.max(1) as f64;
        (0..pairs)
            .map(|_| {
                let a = PathShape::random(&mut rng, self.model.dim(), radius);
                let b = PathShape::random(&mut rng, self.model.dim(), radius);
                Ok((
                    path_to_resource(self.model, &a.path(self.anchor(), delta, dt)?)?,
                    path_to_resource(self.model, &b.path(self.anchor(), delta, dt)?)?,
                ))
            })
            .collect()
    }

    pub fn lipschitz_study(
        &self,
        deltas: &[f64],
        steps: usize,
        pairs: usize,
        radius: f64,
        seed: u64,
    ) -> Result<LipschitzStudy> {
        if deltas.is_empty() || pairs == 0 || steps == 0 {
            return Err(Error::InvalidArgument("need windows, pairs and steps".into()));
        }
        let mut ratios = vec![Vec::with_capacity(deltas.len()); pairs];
        for &delta in deltas {
            let paths = self.random_resource_pairs(delta, steps, pairs, radius, seed)?;
            for (row, (i1, i2)) in ratios.iter_mut().zip(&paths) {
                row.push(self.lipschitz_probe(i1, i2)?.ratio);
            }
        }
        let halving_spread = ratios
            .iter()
            .map(|row| {
                row.windows(2)
                    .map(|w| (w[0] / w[1]).max(w[1] / w[0]))
                    .fold(1.0, f64::max)
            })
            .collect();
        Ok(LipschitzStudy {
            deltas: deltas.to_vec(),
            ratios,
            halving_spread,
        })
    }

    /// Solves the transport problem for `v1 - v2` along characteristics and
    /// compares it with the difference of the two HJ solutions.
    pub fn transport_check(&self, i1: &ResourcePath, i2: &ResourcePath, stride: usize) -> Result<TransportCheck> {
        let v1 = self.solve_v(i1)?;
        let v2 = self.solve_v(i2)?;
        let points = self.grid.points();
        let source: Vec<GridField> = i1
            .values
            .iter()
            .zip(&i2.values)
            .zip(&v1)
            .map(|((&a, &b), level)| GridField {
                spec: self.grid.clone(),
                values: points.iter().map(|x| self.model.rate(x, a) - self.model.rate(x, b)).collect(),
                t: level.t,
            })
            .collect();
        let run = solve_transport_characteristics(&v1, &v2, &source, i1.dt, stride)?;
        let direct: Vec<GridField> = v1
            .iter()
            .zip(&v2)
            .map(|(a, b)| GridField {
                spec: a.spec.clone(),
                values: a.values.iter().zip(&b.values).map(|(p, q)| p - q).collect(),
                t: a.t,
            })
            .collect();
        let h = self.grid.h_min();
        Ok(TransportCheck {
            agreement: run.agreement(&direct, stride),
            clip_events: run.clip_events,
            tolerance: 10.0 * (h * h + i1.dt),
        })
    }
}

/// Ordinary least-squares slope of `y` against `x` (0 when degenerate).
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Random path shape `x0 + sum_j c_j sin(j pi s / 2)` in the rescaled time
/// `s in [0, 1]`, scaled to stay inside the ball.
#[derive(Debug, Clone)]
pub struct PathShape {
    coeffs: Vec<[f64; 3]>,
}

impl PathShape {
    pub fn random(rng: &mut impl Rng, dim: usize, radius: f64) -> Self {
        let mut coeffs: Vec<[f64; 3]> = (0..dim)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let raw = PathShape { coeffs: coeffs.clone() };
        let size = (0..=200)
            .map(|k| raw.offset(k as f64 / 200.0).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let target = radius * rng.gen_range(0.2..0.9);
        let scale = if size > 0.0 { target / size } else { 0.0 };
        for c in &mut coeffs {
            for v in c.iter_mut() {
                *v *= scale;
            }
        }
        PathShape { coeffs }
    }

    fn offset(&self, s: f64) -> Vec<f64> {
        self.coeffs
            .iter()
            .map(|c| {
                c.iter()
                    .enumerate()
                    .map(|(j, cj)| cj * ((j + 1) as f64 * std::f64::consts::FRAC_PI_2 * s).sin())
                    .sum()
            })
            .collect()
    }

    pub fn path(&self, anchor: &[f64], delta: f64, dt: f64) -> Result<TraitPath> {
        TraitPath::from_fn(delta, dt, |t| {
            self.offset(t / delta)
                .iter()
                .zip(anchor)
                .map(|(o, a)| a + o)
                .collect()
        })
    }
}
