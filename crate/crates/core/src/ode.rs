//! Explicit Runge-Kutta steppers for small smooth systems.

use crate::error::{Error, Result};

/// Classic fourth-order Runge-Kutta step.
pub fn rk4_step<F>(f: &F, t: f64, y: &[f64], dt: f64) -> Vec<f64>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, k)| x + s * k).collect() };
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * dt, &axpy(y, 0.5 * dt, &k1));
    let k3 = f(t + 0.5 * dt, &axpy(y, 0.5 * dt, &k2));
    let k4 = f(t + dt, &axpy(y, dt, &k3));
    (0..y.len())
        .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

// Dormand-Prince 5(4) tableau
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive Dormand-Prince integration that lands exactly on each of the
/// increasing `sample_times` (all `>= t0`). Mixed absolute/relative error
/// control with tolerance `tol`.
pub fn dopri5<F>(f: &F, t0: f64, y0: &[f64], sample_times: &[f64], tol: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    let n = y0.len();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut h = 1e-3;
    let mut out = Vec::with_capacity(sample_times.len());
    let mut k = vec![vec![0.0; n]; 7];
    let mut steps = 0usize;
    for &target in sample_times {
        if target < t - 1e-15 {
            return Err(Error::InvalidArgument("sample times must increase".into()));
        }
        while t < target {
            steps += 1;
            if steps > 10_000_000 {
                return Err(Error::IntegrationFailure {
                    t,
                    reason: "step budget exhausted".into(),
                });
            }
            let last = t + h >= target;
            let step = if last { target - t } else { h };
            for s in 0..7 {
                let ys: Vec<f64> = (0..n)
                    .map(|i| y[i] + step * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>())
                    .collect();
                k[s] = f(t + C[s] * step, &ys);
            }
            let y5: Vec<f64> = (0..n)
                .map(|i| y[i] + step * (0..7).map(|s| B5[s] * k[s][i]).sum::<f64>())
                .collect();
            let err = ((0..n)
                .map(|i| {
                    let e = step * (0..7).map(|s| (B5[s] - B4[s]) * k[s][i]).sum::<f64>();
                    let scale = tol * (1.0 + y[i].abs().max(y5[i].abs()));
                    (e / scale).powi(2)
                })
                .sum::<f64>()
                / n as f64)
                .sqrt();
            if !err.is_finite() {
                return Err(Error::IntegrationFailure {
                    t,
                    reason: "non-finite error estimate".into(),
                });
            }
            if err <= 1.0 {
                t = if last { target } else { t + step };
                y = y5;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if !last || err > 1.0 {
                h = step * factor;
            }
            if h < 1e-14 {
                return Err(Error::IntegrationFailure {
                    t,
                    reason: "step size underflow".into(),
                });
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_fourth_order_on_exponential() {
        let f = |_t: f64, y: &[f64]| vec![-y[0]];
        let err = |dt: f64| {
            let mut y = vec![1.0];
            let steps = (1.0 / dt).round() as usize;
            for k in 0..steps {
                y = rk4_step(&f, k as f64 * dt, &y, dt);
            }
            (y[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn dopri_hits_samples_accurately() {
        let f = |_t: f64, y: &[f64]| vec![y[1], -y[0]];
        let times = [0.5, 1.0, 3.0, 10.0];
        let out = dopri5(&f, 0.0, &[0.0, 1.0], &times, 1e-11).unwrap();
        for (t, y) in times.iter().zip(out) {
            assert!((y[0] - t.sin()).abs() < 1e-9, "t = {t}");
        }
    }
}
