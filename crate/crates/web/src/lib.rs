//! Browser bindings for the demo page in `www/`. Every export returns a
//! JSON string that the page parses with `JSON.parse`.

use constrained_hj::fixed_point::{Lab, DEFAULT_BALL_RADIUS};
use constrained_hj::oracle::integrate_oracle;
use constrained_hj::parabolic::{run_parabolic, EpsConfig};
use constrained_hj::{GridSpec, InitialData, Psi, RateModel, Result};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn model(a: f64, b: f64, theta: f64, c: f64) -> Result<RateModel> {
    RateModel::new(
        a,
        DMatrix::from_element(1, 1, b),
        DVector::from_element(1, theta),
        c,
        Psi::Const { value: 1.0 },
    )
}

fn init(model: &RateModel, m0: f64, a0: f64) -> Result<InitialData> {
    InitialData::quadratic(model, &[m0], DMatrix::from_element(1, 1, a0))
}

#[derive(Debug, Serialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub xbar: Vec<f64>,
    pub resource: Vec<f64>,
    pub curvature: Vec<f64>,
    pub i_max: f64,
}

/// `(xbar, I, A)` of the quadratic reduction on `[0, t_end]`, 400 samples.
pub fn trajectory(a: f64, b: f64, theta: f64, c: f64, m0: f64, a0: f64, t_end: f64) -> Result<Trajectory> {
    let model = model(a, b, theta, c)?;
    let init = init(&model, m0, a0)?;
    let dt = (t_end / 4000.0).min(1e-2);
    let steps = (t_end / dt).round() as usize;
    let run = integrate_oracle(&model, &init, steps as f64 * dt, dt, (steps / 400).max(1))?;
    let s = &run.record.samples;
    Ok(Trajectory {
        t: s.iter().map(|s| s.t).collect(),
        xbar: s.iter().map(|s| s.xbar[0]).collect(),
        resource: s.iter().map(|s| s.resource).collect(),
        curvature: s.iter().map(|s| s.curvature[0]).collect(),
        i_max: model.i_max(),
    })
}

#[derive(Debug, Serialize)]
pub struct DensityProfile {
    pub eps: f64,
    pub t: f64,
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    pub resource: f64,
    pub xbar: f64,
    /// peak and resource of the `eps -> 0` limit at the same time
    pub limit_xbar: f64,
    pub limit_resource: f64,
}

/// Density `n_eps(t, .)` of the canonical model started from
/// `u0 = -(x - m0)^2`.
pub fn density_profile(eps: f64, t: f64, m0: f64) -> Result<DensityProfile> {
    let model = RateModel::canonical_1d();
    let init = init(&model, m0, 1.0)?;
    let t = (t / 0.05).round().max(1.0) * 0.05;
    let mut cfg = EpsConfig::new(eps, t);
    cfg.sample_interval = 0.05;
    cfg.snapshot_times = vec![t];
    let run = run_parabolic(&model, &init, &cfg)?;
    let field = run.density_at(t).expect("snapshot at the final time");
    let sample = run.at(t).expect("sample at the final time");
    let limit = integrate_oracle(&model, &init, t, 1e-3, usize::MAX)?;
    let last = limit.record.samples.last().expect("final sample");
    Ok(DensityProfile {
        eps,
        t,
        x: (0..field.spec.len()).map(|i| field.spec.coord(0, i)).collect(),
        density: field.values.clone(),
        resource: sample.resource,
        xbar: sample.xbar[0],
        limit_xbar: last.xbar[0],
        limit_resource: last.resource,
    })
}

#[derive(Debug, Serialize)]
pub struct ContractionCurve {
    pub delta: Vec<f64>,
    pub max_factor: Vec<f64>,
    pub mean_factor: Vec<f64>,
    pub slope: f64,
}

/// Contraction factors over random path pairs in the ball of radius 0.2,
/// for `count` window lengths evenly spaced up to `delta_max`.
pub fn contraction_curve(delta_max: f64, count: usize, pairs: usize, seed: u64) -> Result<ContractionCurve> {
    let model = RateModel::canonical_1d();
    let init = init(&model, 0.0, 1.0)?;
    let lab = Lab::new(&model, &init, GridSpec::line(-3.5, 4.0, 301)?)?;
    let count = count.clamp(2, 12);
    let deltas: Vec<f64> = (1..=count).map(|k| delta_max * k as f64 / count as f64).collect();
    let report = lab.contraction_study(&deltas, 100, pairs.clamp(1, 40), DEFAULT_BALL_RADIUS, seed)?;
    Ok(ContractionCurve {
        delta: deltas,
        max_factor: report.per_delta.iter().map(|p| p.max_factor).collect(),
        mean_factor: report.per_delta.iter().map(|p| p.mean_factor).collect(),
        slope: report.slope,
    })
}

fn to_js<T: Serialize>(value: Result<T>) -> std::result::Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = oracleTrajectory)]
#[allow(clippy::too_many_arguments)]
pub fn oracle_trajectory(
    a: f64,
    b: f64,
    theta: f64,
    c: f64,
    m0: f64,
    a0: f64,
    t_end: f64,
) -> std::result::Result<String, JsError> {
    to_js(trajectory(a, b, theta, c, m0, a0, t_end))
}

#[wasm_bindgen(js_name = densityProfile)]
pub fn density_profile_js(eps: f64, t: f64, m0: f64) -> std::result::Result<String, JsError> {
    to_js(density_profile(eps, t, m0))
}

#[wasm_bindgen(js_name = contractionCurve)]
pub fn contraction_curve_js(
    delta_max: f64,
    count: usize,
    pairs: usize,
    seed: u32,
) -> std::result::Result<String, JsError> {
    to_js(contraction_curve(delta_max, count, pairs, u64::from(seed)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_approaches_the_optimum() {
        let tr = trajectory(1.0, 1.0, 0.5, 1.0, 0.0, 1.0, 10.0).unwrap();
        assert!((tr.xbar.last().unwrap() - 0.5).abs() < 1e-4);
        assert!(tr.resource.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!(tr.t.len() >= 300);
    }

    #[test]
    fn density_concentrates_near_the_limit_peak() {
        let p = density_profile(0.05, 1.0, 0.0).unwrap();
        assert_eq!(p.x.len(), p.density.len());
        assert!((p.xbar - p.limit_xbar).abs() < 1e-3);
        assert!(p.resource < p.limit_resource);
    }

    #[test]
    fn contraction_grows_with_the_window() {
        let c = contraction_curve(0.1, 3, 4, 1).unwrap();
        assert_eq!(c.delta.len(), 3);
        assert!(c.slope > 0.0 && c.max_factor.iter().all(|f| *f < 1.0));
    }

    #[test]
    fn errors_reach_the_caller() {
        assert!(trajectory(1.0, -1.0, 0.5, 1.0, 0.0, 1.0, 1.0).is_err());
    }
}
