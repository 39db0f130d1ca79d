//! Uniform tensor grids in one or two trait dimensions and the stencil
//! operations the solvers share: peak location, Hessians, gradients and
//! quadrature.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[lo, hi]` in trait space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl TraitBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::Config("box bounds must have equal nonzero length".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h)) {
            return Err(Error::Config(format!("empty or non-finite box {lo:?}..{hi:?}")));
        }
        Ok(TraitBox { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().enumerate().all(|(k, v)| *v >= self.lo[k] && *v <= self.hi[k])
    }
}

/// Grid layout: `n[k]` nodes on `[lo[k], hi[k]]`, axis 0 varies slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n: Vec<usize>,
}

impl GridSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, n: Vec<usize>) -> Result<Self> {
        TraitBox::new(lo.clone(), hi.clone())?;
        let d = lo.len();
        if !(1..=2).contains(&d) {
            return Err(Error::Config(format!("grids support d = 1 or 2, got {d}")));
        }
        if n.len() != d || n.iter().any(|&k| k < 5) {
            return Err(Error::Config(format!("need at least 5 nodes per axis, got {n:?}")));
        }
        Ok(GridSpec { lo, hi, n })
    }

    pub fn uniform(lo: &[f64], hi: &[f64], n: usize) -> Result<Self> {
        Self::new(lo.to_vec(), hi.to_vec(), vec![n; lo.len()])
    }

    pub fn line(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(vec![lo], vec![hi], vec![n])
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn h(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.n[axis] - 1) as f64
    }

    pub fn h_min(&self) -> f64 {
        (0..self.dim()).map(|k| self.h(k)).fold(f64::INFINITY, f64::min)
    }

    pub fn bounds(&self) -> TraitBox {
        TraitBox {
            lo: self.lo.clone(),
            hi: self.hi.clone(),
        }
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.n[axis + 1..].iter().product()
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        // anchored at both ends so the last node is exactly hi
        if i + 1 == self.n[axis] {
            self.hi[axis]
        } else {
            self.lo[axis] + i as f64 * self.h(axis)
        }
    }

    pub fn multi_index(&self, flat: usize) -> [usize; 2] {
        match self.dim() {
            1 => [flat, 0],
            _ => [flat / self.n[1], flat % self.n[1]],
        }
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        match self.dim() {
            1 => idx[0],
            _ => idx[0] * self.n[1] + idx[1],
        }
    }

    /// Node coordinates of `flat` into `x`.
    pub fn point(&self, flat: usize, x: &mut [f64]) {
        let idx = self.multi_index(flat);
        for (k, xk) in x.iter_mut().enumerate() {
            *xk = self.coord(k, idx[k]);
        }
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut x = vec![0.0; self.dim()];
        (0..self.len())
            .map(|f| {
                self.point(f, &mut x);
                x.clone()
            })
            .collect()
    }

    pub fn is_boundary(&self, flat: usize) -> bool {
        let idx = self.multi_index(flat);
        (0..self.dim()).any(|k| idx[k] == 0 || idx[k] + 1 == self.n[k])
    }

    /// Interior nodes at least `layer` nodes from every edge.
    pub fn interior(&self, layer: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&f| {
            let idx = self.multi_index(f);
            (0..self.dim()).all(|k| idx[k] >= layer && idx[k] + layer < self.n[k])
        })
    }

    /// Composite Simpson weights (3/8 rule on the last panel for an even
    /// node count), tensorised over axes.
    pub fn simpson_weights(&self) -> Vec<f64> {
        let axes: Vec<Vec<f64>> = (0..self.dim()).map(|k| simpson_1d(self.n[k], self.h(k))).collect();
        self.tensor(&axes)
    }

    /// Trapezoid weights; the reflecting heat step conserves exactly this sum.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let axes: Vec<Vec<f64>> = (0..self.dim())
            .map(|k| {
                let mut w = vec![self.h(k); self.n[k]];
                w[0] *= 0.5;
                w[self.n[k] - 1] *= 0.5;
                w
            })
            .collect();
        self.tensor(&axes)
    }

    fn tensor(&self, axes: &[Vec<f64>]) -> Vec<f64> {
        (0..self.len())
            .map(|f| {
                let idx = self.multi_index(f);
                (0..self.dim()).map(|k| axes[k][idx[k]]).product()
            })
            .collect()
    }

    /// Index of the node nearest to `x` along `axis` (clamped).
    fn nearest(&self, axis: usize, x: f64) -> usize {
        let s = ((x - self.lo[axis]) / self.h(axis)).round();
        s.clamp(0.0, (self.n[axis] - 1) as f64) as usize
    }
}

fn simpson_1d(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; n];
    let simpson_end = if n % 2 == 1 { n - 1 } else { n - 4 };
    let mut i = 0;
    while i < simpson_end {
        w[i] += h / 3.0;
        w[i + 1] += 4.0 * h / 3.0;
        w[i + 2] += h / 3.0;
        i += 2;
    }
    if n.is_multiple_of(2) {
        let s = n - 4;
        for (k, c) in [1.0, 3.0, 3.0, 1.0].iter().enumerate() {
            w[s + k] += 3.0 * h / 8.0 * c;
        }
    }
    w
}

/// Scalar field sampled on a [`GridSpec`] at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub t: f64,
}

impl GridField {
    pub fn from_fn(spec: GridSpec, t: f64, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut x = vec![0.0; spec.dim()];
        let values = (0..spec.len())
            .map(|i| {
                spec.point(i, &mut x);
                f(&x)
            })
            .collect();
        GridField { spec, values, t }
    }

    pub fn new(spec: GridSpec, values: Vec<f64>, t: f64) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::InvalidArgument(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                spec.len()
            )));
        }
        Ok(GridField { spec, values, t })
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the largest value; ties resolve to the smallest flat index.
    pub fn argmax_node(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn integrate(&self, weights: &[f64]) -> f64 {
        self.values.iter().zip(weights).map(|(v, w)| v * w).sum()
    }

    /// `(min, max)` of the axis-wise second differences over interior nodes.
    pub fn second_difference_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for k in 0..self.dim() {
            let s = self.spec.stride(k);
            let h2 = self.spec.h(k).powi(2);
            for f in 0..self.spec.len() {
                let idx = self.spec.multi_index(f)[k];
                if idx == 0 || idx + 1 == self.spec.n[k] {
                    continue;
                }
                let d2 = (self.values[f + s] - 2.0 * self.values[f] + self.values[f - s]) / h2;
                lo = lo.min(d2);
                hi = hi.max(d2);
            }
        }
        (lo, hi)
    }

    fn node_hessian(&self, f: usize) -> DMatrix<f64> {
        let d = self.dim();
        let u = &self.values;
        let mut hess = DMatrix::zeros(d, d);
        for k in 0..d {
            let s = self.spec.stride(k);
            hess[(k, k)] = (u[f + s] - 2.0 * u[f] + u[f - s]) / self.spec.h(k).powi(2);
        }
        if d == 2 {
            let (s0, s1) = (self.spec.stride(0), self.spec.stride(1));
            let mixed = (u[f + s0 + s1] - u[f + s0 - s1] - u[f - s0 + s1] + u[f - s0 - s1])
                / (4.0 * self.spec.h(0) * self.spec.h(1));
            hess[(0, 1)] = mixed;
            hess[(1, 0)] = mixed;
        }
        hess
    }

    /// Hessian at an arbitrary point: centered second differences at the
    /// 3^d nodes around the nearest node, then quadratic Lagrange
    /// interpolation to `x`. Needs two nodes of margin on every side.
    pub fn hessian_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.dim();
        if x.len() != d || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad evaluation point {x:?}")));
        }
        let mut centre = [0usize; 2];
        let mut weights = [[0.0; 3]; 2];
        for k in 0..d {
            let h = self.spec.h(k);
            let s = (x[k] - self.spec.lo[k]) / h;
            let j = s.round();
            if j < 2.0 || j > (self.spec.n[k] - 3) as f64 {
                return Err(Error::OutOfDomain { x: x.to_vec() });
            }
            centre[k] = j as usize;
            weights[k] = lagrange3(s - j);
        }
        let mut out = DMatrix::zeros(d, d);
        match d {
            1 => {
                for (a, w) in weights[0].iter().enumerate() {
                    out += self.node_hessian(centre[0] + a - 1) * *w;
                }
            }
            _ => {
                for (a, wa) in weights[0].iter().enumerate() {
                    for (b, wb) in weights[1].iter().enumerate() {
                        let f = self.spec.flat(&[centre[0] + a - 1, centre[1] + b - 1]);
                        out += self.node_hessian(f) * (wa * wb);
                    }
                }
            }
        }
        Ok((&out + out.transpose()) * 0.5)
    }

    /// Per-axis nodal gradients: centered inside, second-order one-sided on
    /// the edges.
    pub fn nodal_gradient(&self) -> Vec<Vec<f64>> {
        let u = &self.values;
        (0..self.dim())
            .map(|k| {
                let s = self.spec.stride(k);
                let h = self.spec.h(k);
                let n = self.spec.n[k];
                (0..self.spec.len())
                    .map(|f| {
                        let i = self.spec.multi_index(f)[k];
                        if i == 0 {
                            (-3.0 * u[f] + 4.0 * u[f + s] - u[f + 2 * s]) / (2.0 * h)
                        } else if i + 1 == n {
                            (3.0 * u[f] - 4.0 * u[f - s] + u[f - 2 * s]) / (2.0 * h)
                        } else {
                            (u[f + s] - u[f - s]) / (2.0 * h)
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Located peak of a strictly concave field, refined by a local quadratic
    /// fit on the 3^d stencil. Errors if the grid maximum is on the boundary.
    pub fn argmax(&self) -> Result<(Vec<f64>, f64)> {
        argmax_u(self)
    }

    /// `values` interpolated multilinearly at `x`; outside the box the
    /// boundary cell is extended linearly.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        interpolate_multilinear(&self.spec, &self.values, x)
    }

    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let idx: Vec<usize> = (0..self.dim()).map(|k| self.spec.nearest(k, x[k])).collect();
        self.spec.flat(&idx)
    }
}

fn lagrange3(s: f64) -> [f64; 3] {
    // nodes at -1, 0, 1
    [0.5 * s * (s - 1.0), 1.0 - s * s, 0.5 * s * (s + 1.0)]
}

pub(crate) fn cell_coord(spec: &GridSpec, axis: usize, x: f64) -> (usize, f64) {
    let h = spec.h(axis);
    let s = (x - spec.lo[axis]) / h;
    let i = (s.floor().max(0.0) as usize).min(spec.n[axis] - 2);
    (i, s - i as f64)
}

pub(crate) fn interpolate_multilinear(spec: &GridSpec, values: &[f64], x: &[f64]) -> f64 {
    match spec.dim() {
        1 => {
            let (i, w) = cell_coord(spec, 0, x[0]);
            values[i] * (1.0 - w) + values[i + 1] * w
        }
        _ => {
            let (i, wi) = cell_coord(spec, 0, x[0]);
            let (j, wj) = cell_coord(spec, 1, x[1]);
            let n1 = spec.n[1];
            let v = |a: usize, b: usize| values[a * n1 + b];
            (1.0 - wi) * ((1.0 - wj) * v(i, j) + wj * v(i, j + 1))
                + wi * ((1.0 - wj) * v(i + 1, j) + wj * v(i + 1, j + 1))
        }
    }
}

/// Peak location and value of a strictly concave field.
///
/// The grid maximum is refined by the vertex of the quadratic through the
/// 3^d stencil around it, which is exact when the field is a quadratic.
pub fn argmax_u(field: &GridField) -> Result<(Vec<f64>, f64)> {
    let spec = &field.spec;
    let best = field.argmax_node();
    let mut x0 = vec![0.0; spec.dim()];
    spec.point(best, &mut x0);
    if spec.is_boundary(best) {
        return Err(Error::PeakEscapedDomain { x: x0 });
    }
    let u = &field.values;
    let d = spec.dim();
    let mut grad = nalgebra::DVector::zeros(d);
    for k in 0..d {
        let s = spec.stride(k);
        grad[k] = (u[best + s] - u[best - s]) / (2.0 * spec.h(k));
    }
    let hess = field.node_hessian(best);
    let step = match hess.clone().cholesky_neg() {
        Some(step) => -(step * &grad),
        None => return Ok((x0, u[best])),
    };
    let value = u[best] + 0.5 * grad.dot(&step);
    let x = x0.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
    Ok((x, value))
}

/// `H^{-1}` for a negative definite `H`, via Cholesky of `-H`.
trait NegCholesky {
    fn cholesky_neg(self) -> Option<DMatrix<f64>>;
}

impl NegCholesky for DMatrix<f64> {
    fn cholesky_neg(self) -> Option<DMatrix<f64>> {
        let neg = -self;
        neg.cholesky().map(|c| -c.inverse())
    }
}
