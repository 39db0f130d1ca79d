//! Reproduction rate `R(x, I)`, competition weight `psi(x)` and the
//! structural hypotheses the solvers rely on.
//!
//! Two families are supported:
//!
//! ```text
//! R(x, I) = a - (1 + kappa I) (x - theta)^T B (x - theta) - c I
//! ```
//!
//! With `kappa = 0` this is the canonical family used by the quadratic
//! oracle. `kappa > 0` makes the trait curvature depend on the resource
//! level, so the mixed derivative bound `K3` is nonzero.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TraitBox;
use crate::root::newton_bisect;

/// Absolute tolerance on `|R(x, I)|` for the resource root solve.
pub const TOL_ROOT: f64 = 1e-12;

const PROBE_SEED: u64 = 0x5eed_0001;
const HESSIAN_PROBES: usize = 1000;

/// Competition weight. `Poly` is a polynomial in `|x|^2` with a positive
/// constant term and nonnegative higher coefficients, which keeps it smooth
/// and strictly positive in any dimension: `psi(x) = sum_k c_k |x|^(2k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Psi {
    Const { value: f64 },
    Poly { coeffs: Vec<f64> },
}

impl Psi {
    fn validate(&self) -> Result<()> {
        match self {
            Psi::Const { value } if !(value.is_finite() && *value > 0.0) => Err(Error::Config(
                format!("constant psi must be positive, got {value}"),
            )),
            Psi::Poly { coeffs } => {
                if coeffs.is_empty() || !(coeffs[0] > 0.0) {
                    return Err(Error::Config(
                        "psi polynomial needs a positive constant coefficient".into(),
                    ));
                }
                if coeffs.iter().any(|c| !c.is_finite() || *c < 0.0) {
                    return Err(Error::Config(
                        "psi polynomial coefficients must be finite and nonnegative".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Psi::Const { value } => *value,
            Psi::Poly { coeffs } => {
                let s: f64 = x.iter().map(|v| v * v).sum();
                coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
            }
        }
    }

    pub fn is_const(&self) -> bool {
        matches!(self, Psi::Const { .. })
    }
}

/// On-disk representation of a model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDoc {
    pub a: f64,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub c: f64,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default = "default_psi")]
    pub psi: Psi,
}

fn default_psi() -> Psi {
    Psi::Const { value: 1.0 }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ModelDoc", into = "ModelDoc")]
pub struct RateModel {
    a: f64,
    b: DMatrix<f64>,
    theta: DVector<f64>,
    c: f64,
    kappa: f64,
    psi: Psi,
}

impl TryFrom<ModelDoc> for RateModel {
    type Error = Error;

    fn try_from(doc: ModelDoc) -> Result<Self> {
        let d = doc.theta.len();
        if doc.b.len() != d || doc.b.iter().any(|row| row.len() != d) {
            return Err(Error::Config(format!(
                "B must be {d}x{d} to match theta"
            )));
        }
        let b = DMatrix::from_fn(d, d, |i, j| doc.b[i][j]);
        RateModel::with_kappa(doc.a, b, DVector::from_vec(doc.theta), doc.c, doc.kappa, doc.psi)
    }
}

impl From<RateModel> for ModelDoc {
    fn from(m: RateModel) -> Self {
        let d = m.dim();
        ModelDoc {
            a: m.a,
            b: (0..d).map(|i| (0..d).map(|j| m.b[(i, j)]).collect()).collect(),
            theta: m.theta.iter().copied().collect(),
            c: m.c,
            kappa: m.kappa,
            psi: m.psi,
        }
    }
}

impl RateModel {
    /// Canonical family (`kappa = 0`).
    pub fn new(a: f64, b: DMatrix<f64>, theta: DVector<f64>, c: f64, psi: Psi) -> Result<Self> {
        Self::with_kappa(a, b, theta, c, 0.0, psi)
    }

    pub fn with_kappa(
        a: f64,
        b: DMatrix<f64>,
        theta: DVector<f64>,
        c: f64,
        kappa: f64,
        psi: Psi,
    ) -> Result<Self> {
        let d = theta.len();
        if d == 0 {
            return Err(Error::Config("trait dimension must be at least 1".into()));
        }
        if b.nrows() != d || b.ncols() != d {
            return Err(Error::Config(format!("B must be {d}x{d}")));
        }
        let finite = a.is_finite()
            && c.is_finite()
            && kappa.is_finite()
            && b.iter().all(|v| v.is_finite())
            && theta.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("model parameters must be finite".into()));
        }
        let asym = (&b - b.transpose()).amax();
        if asym > 1e-12 * b.amax().max(1.0) {
            return Err(Error::Config(format!("B is not symmetric (max asymmetry {asym:e})")));
        }
        if kappa < 0.0 {
            return Err(Error::Config(format!("kappa must be nonnegative, got {kappa}")));
        }
        psi.validate()?;
        Ok(RateModel {
            a,
            b,
            theta,
            c,
            kappa,
            psi,
        })
    }

    /// One-dimensional canonical model with `psi = 1`.
    pub fn scalar(a: f64, b: f64, theta: f64, c: f64) -> Result<Self> {
        Self::new(
            a,
            DMatrix::from_element(1, 1, b),
            DVector::from_element(1, theta),
            c,
            Psi::Const { value: 1.0 },
        )
    }

    /// `a = 1, B = 1, theta = 0.5, c = 1`, `psi = 1`.
    pub fn canonical_1d() -> Self {
        Self::scalar(1.0, 1.0, 0.5, 1.0).expect("canonical model is valid")
    }

    pub fn with_psi(mut self, psi: Psi) -> Result<Self> {
        psi.validate()?;
        self.psi = psi;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }
    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    pub fn psi(&self) -> &Psi {
        &self.psi
    }

    /// `kappa == 0`: Hessian in x does not depend on I.
    pub fn is_canonical(&self) -> bool {
        self.kappa == 0.0
    }

    /// `(x - theta)^T B (x - theta)`.
    #[inline]
    pub(crate) fn selection_quad(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut q = 0.0;
        for (i, xi) in x.iter().enumerate().take(d) {
            let yi = xi - self.theta[i];
            for (j, xj) in x.iter().enumerate().take(d) {
                q += yi * self.b[(i, j)] * (xj - self.theta[j]);
            }
        }
        q
    }

    /// Unchecked evaluation for inner loops.
    #[inline]
    pub(crate) fn rate(&self, x: &[f64], resource: f64) -> f64 {
        self.rate_from_quad(self.selection_quad(x), resource)
    }

    /// `R` given a precomputed `selection_quad` value.
    #[inline]
    pub(crate) fn rate_from_quad(&self, quad: f64, resource: f64) -> f64 {
        self.a - (1.0 + self.kappa * resource) * quad - self.c * resource
    }

    fn check_point(&self, x: &[f64], resource: f64) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "trait vector has length {}, model dimension is {}",
                x.len(),
                self.dim()
            )));
        }
        if !resource.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite input x = {x:?}, I = {resource}"
            )));
        }
        Ok(())
    }

    pub fn eval_r(&self, x: &[f64], resource: f64) -> Result<f64> {
        self.check_point(x, resource)?;
        Ok(self.rate(x, resource))
    }

    pub fn eval_grad_x_r(&self, x: &[f64], resource: f64) -> Result<DVector<f64>> {
        self.check_point(x, resource)?;
        Ok(self.grad_x(x, resource))
    }

    pub(crate) fn grad_x(&self, x: &[f64], resource: f64) -> DVector<f64> {
        let y = DVector::from_iterator(self.dim(), x.iter().zip(self.theta.iter()).map(|(a, b)| a - b));
        (&self.b * y) * (-2.0 * (1.0 + self.kappa * resource))
    }

    pub fn eval_hess_x_r(&self, x: &[f64], resource: f64) -> Result<DMatrix<f64>> {
        self.check_point(x, resource)?;
        Ok(self.hess_x(resource))
    }

    pub(crate) fn hess_x(&self, resource: f64) -> DMatrix<f64> {
        &self.b * (-2.0 * (1.0 + self.kappa * resource))
    }

    pub fn eval_d_i_r(&self, x: &[f64], resource: f64) -> Result<f64> {
        self.check_point(x, resource)?;
        Ok(-self.kappa * self.selection_quad(x) - self.c)
    }

    pub fn eval_psi(&self, x: &[f64]) -> Result<f64> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite trait {x:?}")));
        }
        Ok(self.psi.eval(x))
    }

    /// Resource level at which the best trait stops growing, `max_x R(x, I_M) = 0`.
    /// Infinite when `c <= 0` (no such level).
    pub fn i_max(&self) -> f64 {
        if self.c > 0.0 {
            self.a / self.c
        } else {
            f64::INFINITY
        }
    }

    /// Unique `I` in `(0, I_M]` with `R(x, I) = 0`.
    pub fn solve_i_for_zero(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x, 0.0)?;
        let r0 = self.rate(x, 0.0);
        if r0 <= 0.0 {
            return Err(Error::NoPositiveRoot { x: x.to_vec(), r0 });
        }
        let q = self.selection_quad(x);
        let slope = -(self.kappa * q + self.c);
        if slope >= 0.0 {
            return Err(Error::HypothesisViolation(format!(
                "dR/dI = {slope} is not negative at x = {x:?}"
            )));
        }
        // R is affine in I, so R(x, hi) < 0 with hi = r0 / |slope|, plus margin.
        let hi = (r0 / -slope) * (1.0 + 1e-6) + 1e-12;
        newton_bisect(|i| (self.rate(x, i), slope), 0.0, hi, TOL_ROOT, 200)
    }

    /// Evaluates the structural hypotheses on `probe_box x i_range`.
    pub fn validate_hypotheses(&self, probe_box: &TraitBox, i_range: (f64, f64)) -> HypothesisReport {
        HypothesisReport::build(self, probe_box, i_range)
    }
}

/// One entry of the hypothesis report.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HypothesisCheck {
    pub name: String,
    pub value: f64,
    pub satisfied: bool,
    pub note: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Violation {
    pub check: String,
    pub x: Vec<f64>,
    pub resource: f64,
    pub amount: f64,
}

/// Derived hypothesis constants with a pass/fail flag per constant.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HypothesisReport {
    pub checks: Vec<HypothesisCheck>,
    pub probe_box: TraitBox,
    pub i_range: (f64, f64),
    pub worst_violation: Option<Violation>,
    pub admissible: bool,
}

/// Constants of the hypothesis block, as derived for a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBounds {
    /// `R <= K0_upper - K1_lower |x - theta|^2`
    pub k0_upper: f64,
    /// lower curvature constant: `D^2 R <= -2 K1_lower`
    pub k1_lower: f64,
    /// upper curvature constant: `D^2 R >= -2 K1_upper`
    pub k1_upper: f64,
    /// `dR/dI <= -K2_lower`
    pub k2_lower: f64,
    /// `dR/dI >= -K2_upper`
    pub k2_upper: f64,
    pub k3: f64,
    pub i_max: f64,
}

impl RateModel {
    /// Closed-form constants over `probe_box x i_range` for this family.
    pub fn bounds(&self, probe_box: &TraitBox, i_range: (f64, f64)) -> RateBounds {
        let eig = SymmetricEigen::new(self.b.clone()).eigenvalues;
        let lmin = eig.min();
        let lmax = eig.max();
        let f_lo = 1.0 + self.kappa * i_range.0;
        let f_hi = 1.0 + self.kappa * i_range.1;
        let q_max = box_corners(probe_box)
            .iter()
            .map(|x| self.selection_quad(x))
            .fold(0.0_f64, f64::max);
        // |d2R/dI dx_i| = 2 kappa |(B y)_i|, |d3R/dI dx_i dx_j| = 2 kappa |B_ij|
        let by_max = box_corners(probe_box)
            .iter()
            .map(|x| {
                let y = DVector::from_iterator(
                    self.dim(),
                    x.iter().zip(self.theta.iter()).map(|(a, b)| a - b),
                );
                (&self.b * y).amax()
            })
            .fold(0.0_f64, f64::max);
        RateBounds {
            k0_upper: self.a,
            k1_lower: lmin * f_lo.min(f_hi),
            k1_upper: lmax * f_lo.max(f_hi),
            // q >= 0 and kappa >= 0
            k2_lower: self.c,
            k2_upper: self.c + self.kappa * q_max,
            k3: 2.0 * self.kappa * (by_max + self.b.amax()),
            i_max: self.i_max(),
        }
    }
}

fn box_corners(b: &TraitBox) -> Vec<Vec<f64>> {
    let d = b.dim();
    (0..1usize << d)
        .map(|mask| {
            (0..d)
                .map(|k| if mask >> k & 1 == 1 { b.hi[k] } else { b.lo[k] })
                .collect()
        })
        .collect()
}

impl HypothesisReport {
    fn build(model: &RateModel, probe_box: &TraitBox, i_range: (f64, f64)) -> Self {
        let bounds = model.bounds(probe_box, i_range);
        let d = model.dim();
        let mut checks = Vec::new();
        let mut worst: Option<Violation> = None;
        let mut note_violation = |check: &str, x: &[f64], resource: f64, amount: f64| {
            if amount > 0.0 && worst.as_ref().is_none_or(|w| amount > w.amount) {
                worst = Some(Violation {
                    check: check.to_string(),
                    x: x.to_vec(),
                    resource,
                    amount,
                });
            }
        };

        let mut push = |name: &str, value: f64, satisfied: bool, note: &str| {
            checks.push(HypothesisCheck {
                name: name.to_string(),
                value,
                satisfied,
                note: note.to_string(),
            })
        };

        let dims_ok = probe_box.dim() == d;
        push(
            "dimension",
            d as f64,
            dims_ok,
            "probe box dimension matches the model",
        );

        push(
            "K1_lower",
            bounds.k1_lower,
            bounds.k1_lower > 0.0,
            "strict concavity: D2R <= -2 K1_lower < 0",
        );
        push(
            "K1_upper",
            bounds.k1_upper,
            bounds.k1_upper.is_finite() && bounds.k1_upper >= bounds.k1_lower,
            "D2R >= -2 K1_upper",
        );
        push("K0_upper", bounds.k0_upper, bounds.k0_upper.is_finite(), "R <= K0 - K1_lower |x - theta|^2");
        push(
            "K2_lower",
            bounds.k2_lower,
            bounds.k2_lower > 0.0,
            "monotone competition: dR/dI <= -K2_lower < 0",
        );
        push(
            "K2_upper",
            bounds.k2_upper,
            bounds.k2_upper.is_finite() && bounds.k2_upper >= bounds.k2_lower,
            "dR/dI >= -K2_upper",
        );
        push(
            "K3",
            bounds.k3,
            bounds.k3.is_finite(),
            "mixed derivatives in (I, x); zero for the canonical family",
        );

        let theta = model.theta.as_slice();
        let i_m = bounds.i_max;
        let i_m_ok = model.a > 0.0
            && i_m.is_finite()
            && dims_ok
            && probe_box.contains(theta)
            && model.rate(theta, i_m).abs() <= 1e-12 * model.a.abs().max(1.0);
        push(
            "I_M",
            i_m,
            i_m_ok,
            "max_x R(x, I_M) = 0, attained at theta inside the probe box",
        );

        if !dims_ok {
            return HypothesisReport {
                checks,
                probe_box: probe_box.clone(),
                i_range,
                worst_violation: None,
                admissible: false,
            };
        }

        // Random probes: Hessian sandwich and psi positivity.
        let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
        let mut hess_violation = 0.0_f64;
        let mut psi_min = f64::INFINITY;
        for _ in 0..HESSIAN_PROBES {
            let x: Vec<f64> = (0..d)
                .map(|k| rng.gen_range(probe_box.lo[k]..=probe_box.hi[k]))
                .collect();
            let resource = rng.gen_range(i_range.0..=i_range.1);
            let eig = SymmetricEigen::new(model.hess_x(resource)).eigenvalues;
            let over = eig.max() + 2.0 * bounds.k1_lower;
            let under = -2.0 * bounds.k1_upper - eig.min();
            // a nonnegative eigenvalue is a concavity failure even when the
            // sandwich constants absorb it
            let amount = over.max(under).max(eig.max());
            if amount > 1e-12 {
                hess_violation = hess_violation.max(amount);
                note_violation("hessian_sandwich", &x, resource, amount);
            }
            psi_min = psi_min.min(model.psi.eval(&x));
        }
        for x in box_corners(probe_box) {
            psi_min = psi_min.min(model.psi.eval(&x));
        }
        let hess_ok = hess_violation == 0.0 && bounds.k1_lower > 0.0;
        push(
            "hessian_sandwich",
            hess_violation,
            hess_ok,
            "eigenvalues of D2R in [-2 K1_upper, -2 K1_lower] on 1000 random probes",
        );
        push("psi_min", psi_min, psi_min > 0.0, "psi bounded below by a positive constant");

        // Quadratic sandwich on a lattice of the box, I in [lo, min(hi, I_M)].
        let mut quad_violation = 0.0_f64;
        let i_hi = if i_m.is_finite() { i_range.1.min(i_m) } else { i_range.1 };
        let per_axis = if d == 1 { 201 } else { 41 };
        let resources: Vec<f64> = (0..=10)
            .map(|k| i_range.0 + (i_hi - i_range.0) * k as f64 / 10.0)
            .collect();
        for x in lattice(probe_box, per_axis) {
            let y2: f64 = x.iter().zip(theta).map(|(a, b)| (a - b) * (a - b)).sum();
            for &resource in &resources {
                let r = model.rate(&x, resource);
                let upper = bounds.k0_upper - bounds.k1_lower * y2;
                let lower = -bounds.k1_upper * y2;
                let tol = 1e-12 * (1.0 + r.abs());
                let amount = (r - upper).max(lower - r);
                if amount > tol {
                    quad_violation = quad_violation.max(amount);
                    note_violation("quadratic_sandwich", &x, resource, amount);
                }
            }
        }
        push(
            "quadratic_sandwich",
            quad_violation,
            quad_violation == 0.0,
            "-K1_upper |x-theta|^2 <= R <= K0 - K1_lower |x-theta|^2 for I in [0, I_M]",
        );

        let admissible = checks.iter().all(|c| c.satisfied);
        HypothesisReport {
            checks,
            probe_box: probe_box.clone(),
            i_range,
            worst_violation: worst,
            admissible,
        }
    }

    pub fn check(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.satisfied)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn require_admissible(&self) -> Result<()> {
        if self.admissible {
            Ok(())
        } else {
            Err(Error::HypothesisViolation(format!(
                "failed checks: {}",
                self.failures().join(", ")
            )))
        }
    }
}

fn lattice(b: &TraitBox, per_axis: usize) -> Vec<Vec<f64>> {
    let d = b.dim();
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut flat| {
            let mut x = vec![0.0; d];
            for k in (0..d).rev() {
                let i = flat % per_axis;
                flat /= per_axis;
                x[k] = b.lo[k] + (b.hi[k] - b.lo[k]) * i as f64 / (per_axis - 1) as f64;
            }
            x
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn canonical() -> RateModel {
        RateModel::canonical_1d()
    }

    fn probe() -> TraitBox {
        TraitBox::new(vec![-3.0], vec![3.0]).unwrap()
    }

    #[test]
    fn rate_examples() {
        let m = canonical();
        assert_eq!(m.eval_r(&[0.5], 1.0).unwrap(), 0.0);
        assert!((m.eval_r(&[0.0], 0.75).unwrap()).abs() < 1e-15);
        assert!((m.eval_r(&[0.0], 0.0).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn derivative_examples() {
        let m = canonical();
        assert_eq!(m.eval_grad_x_r(&[0.5], 0.3).unwrap()[0], 0.0);
        assert_eq!(m.eval_grad_x_r(&[0.0], 0.3).unwrap()[0], 1.0);
        assert_eq!(m.eval_d_i_r(&[1.7], 0.2).unwrap(), -1.0);
        assert_eq!(m.eval_hess_x_r(&[1.7], 0.2).unwrap()[(0, 0)], -2.0);
    }

    #[test]
    fn non_finite_input_rejected() {
        let m = canonical();
        assert!(matches!(m.eval_r(&[f64::NAN], 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(m.eval_r(&[0.0], f64::INFINITY), Err(Error::InvalidArgument(_))));
        assert!(matches!(m.eval_grad_x_r(&[0.0, 1.0], 0.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn resource_root_examples() {
        let m = canonical();
        assert!((m.solve_i_for_zero(&[0.0]).unwrap() - 0.75).abs() < 1e-14);
        assert!((m.solve_i_for_zero(&[0.5]).unwrap() - 1.0).abs() < 1e-14);
        let m2 = RateModel::scalar(1.0, 1.0, 0.5, 2.0).unwrap();
        assert!((m2.solve_i_for_zero(&[0.0]).unwrap() - 0.375).abs() < 1e-14);
    }

    #[test]
    fn resource_root_outside_viable_region() {
        let m = canonical();
        // R(x, 0) = 1 - (2 - 0.5)^2 < 0
        assert!(matches!(m.solve_i_for_zero(&[2.0]), Err(Error::NoPositiveRoot { .. })));
    }

    #[test]
    fn psi_examples() {
        let m = canonical();
        assert_eq!(m.eval_psi(&[3.0]).unwrap(), 1.0);
        let m = m
            .with_psi(Psi::Poly {
                coeffs: vec![1.0, 1.0],
            })
            .unwrap();
        assert_eq!(m.eval_psi(&[2.0]).unwrap(), 5.0);
        assert_eq!(m.eval_psi(&[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn non_positive_psi_rejected_at_load() {
        let doc = r#"{"a":1,"B":[[1]],"theta":[0.5],"c":1,"psi":{"kind":"const","value":0}}"#;
        assert!(serde_json::from_str::<RateModel>(doc).is_err());
        let doc = r#"{"a":1,"B":[[1]],"theta":[0.5],"c":1,"psi":{"kind":"poly","coeffs":[1,-1]}}"#;
        assert!(serde_json::from_str::<RateModel>(doc).is_err());
    }

    #[test]
    fn json_round_trip() {
        let doc = r#"{"a":1,"B":[[1]],"theta":[0.5],"c":1,"psi":{"kind":"poly","coeffs":[1,1]}}"#;
        let m: RateModel = serde_json::from_str(doc).unwrap();
        let again: RateModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(again.eval_r(&[0.1], 0.2).unwrap(), m.eval_r(&[0.1], 0.2).unwrap());
        assert_eq!(again.psi(), m.psi());
    }

    #[test]
    fn canonical_model_is_admissible() {
        let report = canonical().validate_hypotheses(&probe(), (0.0, 1.0));
        assert!(report.admissible, "{:?}", report.failures());
        assert_eq!(report.check("K3").unwrap().value, 0.0);
        assert!(report.worst_violation.is_none());
    }

    #[test]
    fn zero_competition_fails_monotonicity() {
        let m = RateModel::scalar(1.0, 1.0, 0.5, 0.0).unwrap();
        let report = m.validate_hypotheses(&probe(), (0.0, 1.0));
        assert!(!report.admissible);
        assert!(!report.check("K2_lower").unwrap().satisfied);
    }

    #[test]
    fn indefinite_selection_fails_concavity() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        let m = RateModel::new(1.0, b, DVector::from_vec(vec![0.0, 0.0]), 1.0, Psi::Const { value: 1.0 })
            .unwrap();
        let pbox = TraitBox::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
        let report = m.validate_hypotheses(&pbox, (0.0, 1.0));
        assert!(!report.check("K1_lower").unwrap().satisfied);
        assert!(!report.check("hessian_sandwich").unwrap().satisfied);
        assert!(report.worst_violation.is_some());
    }

    #[test]
    fn resource_dependent_curvature_has_nonzero_k3() {
        let m = RateModel::with_kappa(
            1.0,
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 0.5),
            1.0,
            0.2,
            Psi::Const { value: 1.0 },
        )
        .unwrap();
        let report = m.validate_hypotheses(&probe(), (0.0, 1.0));
        assert!(report.admissible, "{:?}", report.failures());
        let k3 = report.check("K3").unwrap().value;
        // 2 kappa (|B y|max + |B|) with |y| <= 3.5
        assert!((k3 - 2.0 * 0.2 * (3.5 + 1.0)).abs() < 1e-12);
        assert!((m.solve_i_for_zero(&[0.0]).unwrap() - 0.75 / 1.05).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rate_strictly_decreasing_in_resource(x in -3.0f64..3.0, i in 0.0f64..1.0, di in 1e-6f64..0.5) {
            let m = canonical();
            prop_assert!(m.eval_r(&[x], i + di).unwrap() < m.eval_r(&[x], i).unwrap());
        }

        #[test]
        fn root_round_trip(x in -0.45f64..1.45, kappa in 0.0f64..0.5) {
            let m = RateModel::with_kappa(1.0, DMatrix::from_element(1, 1, 1.0),
                DVector::from_element(1, 0.5), 1.0, kappa, Psi::Const { value: 1.0 }).unwrap();
            let i = m.solve_i_for_zero(&[x]).unwrap();
            prop_assert!(i > 0.0 && i <= m.i_max() + 1e-12);
            prop_assert!(m.eval_r(&[x], i).unwrap().abs() <= TOL_ROOT);
        }

        #[test]
        fn quadratic_sandwich_holds(x in -3.0f64..3.0, y in -3.0f64..3.0, frac in 0.0f64..1.0) {
            let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
            let m = RateModel::new(1.5, b, DVector::from_vec(vec![0.2, -0.1]), 0.8,
                Psi::Const { value: 1.0 }).unwrap();
            let pbox = TraitBox::new(vec![-3.0, -3.0], vec![3.0, 3.0]).unwrap();
            let k = m.bounds(&pbox, (0.0, m.i_max()));
            let i = frac * m.i_max();
            let y2 = (x - 0.2).powi(2) + (y + 0.1).powi(2);
            let r = m.eval_r(&[x, y], i).unwrap();
            prop_assert!(r <= k.k0_upper - k.k1_lower * y2 + 1e-12);
            prop_assert!(r >= -k.k1_upper * y2 - 1e-12);
        }
    }
}
