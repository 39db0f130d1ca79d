//! For the canonical family and Gaussian initial density, the parabolic
//! problem keeps the form `u_eps = -A (x - m)^2 + beta(t)` with the same
//! `(m, A)` dynamics as the limit and
//! `beta' = a - B (m - theta)^2 - c I_eps - 2 eps A`,
//! `I_eps = exp(beta / eps) sqrt(pi eps / A)` (psi = 1, d = 1).

use constrained_hj::parabolic::{hopf_cole_shift, run_parabolic, EpsConfig, Form};
use constrained_hj::{InitialData, RateModel};
use nalgebra::DMatrix;

struct Gaussian {
    m: f64,
    a: f64,
    beta: f64,
}

fn resource(s: &Gaussian, eps: f64) -> f64 {
    (s.beta / eps).exp() * (std::f64::consts::PI * eps / s.a).sqrt()
}

fn rhs(s: &Gaussian, eps: f64) -> [f64; 3] {
    // a = B = c = 1, theta = 0.5
    let i = resource(s, eps);
    [
        -(s.m - 0.5) / s.a,
        1.0 - 4.0 * s.a * s.a,
        1.0 - (s.m - 0.5).powi(2) - i - 2.0 * eps * s.a,
    ]
}

/// RK4 reference for `I_eps` at the requested times (multiples of `dt`).
fn reference(eps: f64, beta0: f64, times: &[f64]) -> Vec<(f64, f64, f64)> {
    let dt = 1e-4;
    let mut s = Gaussian { m: 0.0, a: 1.0, beta: beta0 };
    let mut out = Vec::new();
    let mut t = 0.0;
    for &target in times {
        while t < target - 1e-12 {
            let add = |s: &Gaussian, k: [f64; 3], h: f64| Gaussian {
                m: s.m + h * k[0],
                a: s.a + h * k[1],
                beta: s.beta + h * k[2],
            };
            let k1 = rhs(&s, eps);
            let k2 = rhs(&add(&s, k1, dt / 2.0), eps);
            let k3 = rhs(&add(&s, k2, dt / 2.0), eps);
            let k4 = rhs(&add(&s, k3, dt), eps);
            let k = [0, 1, 2].map(|j| (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) / 6.0);
            s = add(&s, k, dt);
            t += dt;
        }
        out.push((target, resource(&s, eps), s.m));
    }
    out
}

fn check(eps: f64, form: Form, tol_i: f64, tol_x: f64) {
    let model = RateModel::canonical_1d();
    let init = InitialData::quadratic(&model, &[0.0], DMatrix::from_element(1, 1, 1.0)).unwrap();
    let mut cfg = EpsConfig::new(eps, 1.0);
    cfg.form = form;
    let run = run_parabolic(&model, &init, &cfg).unwrap();
    let times = [0.2, 0.5, 1.0];
    for (t, i_ref, m_ref) in reference(eps, hopf_cole_shift(&init, eps), &times) {
        let s = run.at(t).unwrap();
        assert!(
            (s.resource - i_ref).abs() <= tol_i,
            "eps {eps} {form:?} t {t}: I {} vs {i_ref}",
            s.resource
        );
        assert!(
            (s.xbar[0] - m_ref).abs() <= tol_x,
            "eps {eps} {form:?} t {t}: x {} vs {m_ref}",
            s.xbar[0]
        );
    }
}

#[test]
fn potential_form_matches_gaussian_oracle() {
    for eps in [0.1, 0.05, 0.025, 0.0125] {
        check(eps, Form::Potential, 1e-6, 1e-6);
    }
}

#[test]
fn density_form_matches_gaussian_oracle() {
    for eps in [0.1, 0.05] {
        check(eps, Form::Density, 1e-4, 5e-4);
    }
}

#[test]
fn initial_mass_is_the_gaussian_integral() {
    let model = RateModel::canonical_1d();
    let init = InitialData::quadratic(&model, &[0.0], DMatrix::from_element(1, 1, 1.0)).unwrap();
    for eps in [0.1, 0.0125] {
        let run = run_parabolic(&model, &init, &EpsConfig::new(eps, 0.1)).unwrap();
        let expected = resource(&Gaussian { m: 0.0, a: 1.0, beta: hopf_cole_shift(&init, eps) }, eps);
        assert!((run.samples[0].resource - expected).abs() < 1e-12);
        assert!((expected - init.r * std::f64::consts::PI.sqrt()).abs() < 1e-12);
    }
}
