//! Initial data `u0`, the matching resource level and the quadratic /
//! Hessian sandwich constants that the solutions must respect.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridField, GridSpec, TraitBox};
use crate::rate_model::{RateBounds, RateModel};

/// Tolerance on `max u0 = 0`.
pub const MAX_U0_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum U0Doc {
    /// `u0(x) = offset - (x - m0)^T A0 (x - m0)`
    Quadratic {
        m0: Vec<f64>,
        #[serde(rename = "A0")]
        a0: Vec<Vec<f64>>,
        #[serde(default)]
        offset: f64,
    },
    Tabulated {
        lo: Vec<f64>,
        hi: Vec<f64>,
        n: Vec<usize>,
        values: Vec<f64>,
    },
}

/// On-disk initial condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitDoc {
    pub u0: U0Doc,
    #[serde(rename = "I0", default, skip_serializing_if = "Option::is_none")]
    pub i0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
}

#[derive(Debug, Clone)]
pub enum InitialProfile {
    Quadratic { m0: DVector<f64>, a0: DMatrix<f64> },
    Tabulated(GridField),
}

/// Quadratic sandwich `-L0_lower - L1_lower |y|^2 <= u <= L0_upper - L1_upper |y|^2`
/// with `y = x - centre`, and Hessian sandwich
/// `-2 L1_lower <= D^2 u <= -2 L1_upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    pub lower_l0: f64,
    pub lower_l1: f64,
    pub upper_l0: f64,
    pub upper_l1: f64,
}

/// Outcome of checking a field against the time-dependent sandwiches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub t: f64,
    /// smallest of `upper - u` and `u - lower` over the nodes
    pub quadratic_margin: f64,
    /// smallest distance of the axis second differences to the Hessian bounds
    pub hessian_margin: f64,
    pub d2_min: f64,
    pub d2_max: f64,
}

impl SandwichReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.quadratic_margin >= -tol && self.hessian_margin >= -tol
    }
}

impl Sandwich {
    /// Adds a constant to the sandwiched function (e.g. the Hopf-Cole
    /// prefactor shift `eps log(r / eps^{d/2})`).
    pub fn shifted(mut self, delta: f64) -> Self {
        if delta > 0.0 {
            self.upper_l0 += delta;
        } else {
            self.lower_l0 -= delta;
        }
        self
    }

    /// Checks `field` at time `field.t` against the sandwiches propagated by
    /// the viscous equation with diffusion `eps` (`eps = 0` for the limit).
    ///
    /// Upper: `L0_upper - L1_upper |y|^2 + (K0 + 2 d eps L1_upper) t`.
    /// Lower: `-L0_lower - L1_lower |y|^2 - 2 d eps L1_lower t`.
    /// Hessian: `[-2 (L1_lower + K1_upper t), -2 L1_upper]`.
    pub fn check(&self, field: &GridField, centre: &[f64], rate: &RateBounds, eps: f64) -> SandwichReport {
        let t = field.t;
        let d = field.dim() as f64;
        let grow_up = (rate.k0_upper + 2.0 * d * eps * self.upper_l1) * t;
        let grow_down = 2.0 * d * eps * self.lower_l1 * t;
        let mut x = vec![0.0; field.dim()];
        let mut margin = f64::INFINITY;
        for (f, &u) in field.values.iter().enumerate() {
            field.spec.point(f, &mut x);
            let y2: f64 = x.iter().zip(centre).map(|(a, b)| (a - b) * (a - b)).sum();
            let upper = self.upper_l0 - self.upper_l1 * y2 + grow_up;
            let lower = -self.lower_l0 - self.lower_l1 * y2 - grow_down;
            margin = margin.min(upper - u).min(u - lower);
        }
        let (d2_min, d2_max) = field.second_difference_range();
        let hess_lo = -2.0 * (self.lower_l1 + rate.k1_upper * t);
        let hess_hi = -2.0 * self.upper_l1;
        SandwichReport {
            t,
            quadratic_margin: margin,
            hessian_margin: (d2_min - hess_lo).min(hess_hi - d2_max),
            d2_min,
            d2_max,
        }
    }
}

/// Validated initial data: `u0` with `max u0 = 0`, the peak `xbar0`, the
/// resource level `I0` solving `R(xbar0, I0) = 0`, and the Hopf-Cole mass
/// prefactor `r` used by the parabolic model.
#[derive(Debug, Clone)]
pub struct InitialData {
    pub profile: InitialProfile,
    pub xbar0: Vec<f64>,
    pub i0: f64,
    pub r: f64,
    pub sandwich: Sandwich,
}

fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let e = SymmetricEigen::new(m.clone()).eigenvalues;
    (e.min(), e.max())
}

impl InitialData {
    /// Quadratic `u0 = -(x - m0)^T A0 (x - m0)`; `I0` and `r` derived.
    pub fn quadratic(model: &RateModel, m0: &[f64], a0: DMatrix<f64>) -> Result<Self> {
        let d = m0.len();
        let doc = InitDoc {
            u0: U0Doc::Quadratic {
                m0: m0.to_vec(),
                a0: (0..d).map(|i| (0..d).map(|j| a0[(i, j)]).collect()).collect(),
                offset: 0.0,
            },
            i0: None,
            r: None,
        };
        Self::from_doc(model, doc)
    }

    pub fn from_doc(model: &RateModel, doc: InitDoc) -> Result<Self> {
        let d = model.dim();
        let theta: Vec<f64> = model.theta().iter().copied().collect();
        let (profile, xbar0, sandwich, mass_factor) = match doc.u0 {
            U0Doc::Quadratic { m0, a0, offset } => {
                if m0.len() != d || a0.len() != d || a0.iter().any(|r| r.len() != d) {
                    return Err(Error::Config(format!("u0 must be {d}-dimensional")));
                }
                if offset.abs() > MAX_U0_TOL {
                    return Err(Error::InadmissibleInitialData(format!(
                        "max u0 = {offset}, must be 0"
                    )));
                }
                let a0 = DMatrix::from_fn(d, d, |i, j| a0[i][j]);
                if (&a0 - a0.transpose()).amax() > 1e-12 * a0.amax().max(1.0) {
                    return Err(Error::Config("A0 must be symmetric".into()));
                }
                let (lmin, lmax) = eigen_range(&a0);
                if !(lmin > 0.0) {
                    return Err(Error::InadmissibleInitialData(format!(
                        "A0 must be positive definite (smallest eigenvalue {lmin})"
                    )));
                }
                let probe = TraitBox::new(
                    theta.iter().map(|t| t - 1.0).collect(),
                    theta.iter().map(|t| t + 1.0).collect(),
                )?;
                let rate = model.bounds(&probe, (0.0, model.i_max().min(1e300)));
                let s2: f64 = m0.iter().zip(&theta).map(|(a, b)| (a - b) * (a - b)).sum();
                let upper_l1 = 0.5 * lmin.min(0.5 * rate.k1_lower.max(0.0).sqrt());
                let lower_l1 = 2.0 * lmax.max(0.5 * rate.k1_upper.max(0.0).sqrt());
                let sandwich = Sandwich {
                    upper_l0: lmin * s2,
                    upper_l1,
                    lower_l0: 2.0 * lmax * s2,
                    lower_l1,
                };
                let det = a0.determinant();
                let mass_factor = det.sqrt() / std::f64::consts::PI.powf(d as f64 / 2.0);
                let m0v = DVector::from_vec(m0.clone());
                (InitialProfile::Quadratic { m0: m0v, a0 }, m0, sandwich, Some(mass_factor))
            }
            U0Doc::Tabulated { lo, hi, n, values } => {
                let spec = GridSpec::new(lo, hi, n)?;
                if spec.dim() != d {
                    return Err(Error::Config(format!("tabulated u0 must be {d}-dimensional")));
                }
                let field = GridField::new(spec, values, 0.0)?;
                let (xbar0, peak) = field.argmax()?;
                if peak.abs() > 1e-9 || field.max_value() > 1e-9 {
                    return Err(Error::InadmissibleInitialData(format!(
                        "max u0 = {peak}, must be 0"
                    )));
                }
                let (d2_min, d2_max) = field.second_difference_range();
                if !(d2_max < 0.0) {
                    return Err(Error::InadmissibleInitialData(
                        "tabulated u0 is not strictly concave".into(),
                    ));
                }
                let upper_l1 = -0.5 * d2_max;
                let lower_l1 = -0.5 * d2_min;
                let mut upper_l0 = 0.0_f64;
                let mut lower_l0 = 0.0_f64;
                let mut x = vec![0.0; d];
                for (f, &u) in field.values.iter().enumerate() {
                    field.spec.point(f, &mut x);
                    let y2: f64 = x.iter().zip(&theta).map(|(a, b)| (a - b) * (a - b)).sum();
                    upper_l0 = upper_l0.max(u + upper_l1 * y2);
                    lower_l0 = lower_l0.max(-u - lower_l1 * y2);
                }
                let sandwich = Sandwich {
                    upper_l0,
                    upper_l1,
                    lower_l0,
                    lower_l1,
                };
                (InitialProfile::Tabulated(field), xbar0, sandwich, None)
            }
        };

        let i0_solved = model.solve_i_for_zero(&xbar0)?;
        let i0 = match doc.i0 {
            Some(i0) => {
                let res = model.eval_r(&xbar0, i0)?;
                if res.abs() > 1e-9 {
                    return Err(Error::InadmissibleInitialData(format!(
                        "R(xbar0, I0) = {res}, must vanish"
                    )));
                }
                i0
            }
            None => i0_solved,
        };
        if !(i0 > 0.0) {
            return Err(Error::InadmissibleInitialData(format!("I0 = {i0} must be positive")));
        }
        let r = match (doc.r, mass_factor) {
            (Some(r), _) => r,
            // eps -> 0 limit of the psi-weighted Gaussian mass equals I0
            (None, Some(f)) => i0 * f / model.psi().eval(&xbar0),
            (None, None) => {
                return Err(Error::Config("tabulated u0 needs an explicit r".into()));
            }
        };
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InadmissibleInitialData(format!("r = {r} must be positive")));
        }
        Ok(InitialData {
            profile,
            xbar0,
            i0,
            r,
            sandwich,
        })
    }

    /// `(m0, A0)` when `u0` is exactly quadratic.
    pub fn quadratic_form(&self) -> Option<(&DVector<f64>, &DMatrix<f64>)> {
        match &self.profile {
            InitialProfile::Quadratic { m0, a0 } => Some((m0, a0)),
            InitialProfile::Tabulated(_) => None,
        }
    }

    pub fn dim(&self) -> usize {
        self.xbar0.len()
    }

    pub fn eval_u0(&self, x: &[f64]) -> f64 {
        match &self.profile {
            InitialProfile::Quadratic { m0, a0 } => {
                let d = m0.len();
                let mut q = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        q += (x[i] - m0[i]) * a0[(i, j)] * (x[j] - m0[j]);
                    }
                }
                -q
            }
            InitialProfile::Tabulated(field) => field.interpolate(x),
        }
    }

    /// `u0` sampled on `spec`.
    pub fn sample(&self, spec: &GridSpec) -> Result<GridField> {
        if spec.dim() != self.dim() {
            return Err(Error::Config("grid dimension differs from u0".into()));
        }
        if let InitialProfile::Tabulated(field) = &self.profile {
            if field.spec == *spec {
                return Ok(field.clone());
            }
            let inside = (0..spec.dim())
                .all(|k| spec.lo[k] >= field.spec.lo[k] - 1e-12 && spec.hi[k] <= field.spec.hi[k] + 1e-12);
            if !inside {
                return Err(Error::Config("run grid exceeds the tabulated u0 box".into()));
            }
        }
        Ok(GridField::from_fn(spec.clone(), 0.0, |x| self.eval_u0(x)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canonical_init() -> InitialData {
        InitialData::quadratic(&RateModel::canonical_1d(), &[0.0], DMatrix::from_element(1, 1, 1.0)).unwrap()
    }

    #[test]
    fn derived_resource_and_prefactor() {
        let init = canonical_init();
        assert!((init.i0 - 0.75).abs() < 1e-14);
        // psi = 1, A0 = 1: r = I0 / sqrt(pi)
        assert!((init.r - 0.75 / std::f64::consts::PI.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn shifted_maximum_is_rejected() {
        let model = RateModel::canonical_1d();
        let doc: InitDoc = serde_json::from_str(
            r#"{"u0":{"kind":"quadratic","m0":[0.0],"A0":[[1.0]],"offset":-0.1}}"#,
        )
        .unwrap();
        let err = InitialData::from_doc(&model, doc).unwrap_err();
        assert!(matches!(err, Error::InadmissibleInitialData(_)));
    }

    #[test]
    fn inconsistent_resource_is_rejected() {
        let model = RateModel::canonical_1d();
        let doc: InitDoc =
            serde_json::from_str(r#"{"u0":{"kind":"quadratic","m0":[0.0],"A0":[[1.0]]},"I0":0.5}"#).unwrap();
        assert!(InitialData::from_doc(&model, doc).is_err());
    }

    #[test]
    fn sandwich_contains_u0() {
        let model = RateModel::canonical_1d();
        let init = canonical_init();
        let spec = GridSpec::line(-4.0, 5.0, 901).unwrap();
        let field = init.sample(&spec).unwrap();
        let rate = model.bounds(&spec.bounds(), (0.0, 1.0));
        let report = init.sandwich.check(&field, &[0.5], &rate, 0.0);
        assert!(report.holds(1e-12), "{report:?}");
        // Hessian of -x^2 is -2, inside [-2 L1_lower, -2 L1_upper]
        assert!((report.d2_min + 2.0).abs() < 1e-9 && (report.d2_max + 2.0).abs() < 1e-9);
    }

    #[test]
    fn tabulated_profile_round_trips_through_quadratic_values() {
        let model = RateModel::canonical_1d();
        let spec = GridSpec::line(-4.0, 5.0, 181).unwrap();
        let values: Vec<f64> = spec.points().iter().map(|x| -(x[0] - 0.2).powi(2)).collect();
        let doc = InitDoc {
            u0: U0Doc::Tabulated {
                lo: spec.lo.clone(),
                hi: spec.hi.clone(),
                n: spec.n.clone(),
                values,
            },
            i0: None,
            r: Some(0.4),
        };
        let init = InitialData::from_doc(&model, doc).unwrap();
        assert!((init.xbar0[0] - 0.2).abs() < 1e-10);
        assert!((init.i0 - (1.0 - 0.09)).abs() < 1e-9);
        let field = init.sample(&spec).unwrap();
        let rate = model.bounds(&spec.bounds(), (0.0, 1.0));
        assert!(init.sandwich.check(&field, &[0.5], &rate, 0.0).holds(1e-12));
    }
}
