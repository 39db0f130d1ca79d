//! Difference of two HJ solutions computed along characteristics.
//!
//! For `v1`, `v2` solving `v_t = |grad v|^2 + R(x, I_i(t))` from the same
//! data, `r = v1 - v2` solves the linear transport problem
//! `r_t - (grad v1 + grad v2) . grad r = S`, `r(0) = 0`, with
//! `S = R(x, I1) - R(x, I2)`. Along `gamma' = -(grad v1 + grad v2)(t, gamma)`
//! the derivative of `r(t, gamma(t))` is `S(t, gamma(t))`, so `r(t_k, x)` is
//! the integral of `S` along the characteristic that ends at `(t_k, x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{interpolate_multilinear, GridField, GridSpec};

/// Output of [`solve_transport_characteristics`].
#[derive(Debug, Clone)]
pub struct TransportRun {
    /// `r` at every `stride`-th time level (always including 0 and the last)
    pub history: Vec<GridField>,
    /// number of characteristic points clamped back into the box
    pub clip_events: usize,
    /// per output level, the nodes whose characteristic was clamped
    pub clipped_nodes: Vec<Vec<bool>>,
}

/// Agreement between the characteristic `r` and a directly computed one.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TransportAgreement {
    /// sup over all levels and unclipped nodes
    pub max_error: f64,
    pub compared_nodes: usize,
}

fn summed_gradients(v1: &GridField, v2: &GridField) -> Vec<Vec<f64>> {
    v1.nodal_gradient()
        .into_iter()
        .zip(v2.nodal_gradient())
        .map(|(a, b)| a.iter().zip(&b).map(|(p, q)| p + q).collect())
        .collect()
}

fn clamp_into(spec: &GridSpec, x: &mut [f64]) -> bool {
    let mut clipped = false;
    for (k, xk) in x.iter_mut().enumerate() {
        if *xk < spec.lo[k] {
            *xk = spec.lo[k];
            clipped = true;
        } else if *xk > spec.hi[k] {
            *xk = spec.hi[k];
            clipped = true;
        }
    }
    clipped
}

/// Integrates `S` backward along characteristics from every node at every
/// `stride`-th level. All histories share one grid and the uniform time
/// step `dt`. Characteristics use Heun steps aligned with the stored
/// levels and multilinear interpolation in space; the source integral uses
/// the trapezoid rule.
pub fn solve_transport_characteristics(
    v1: &[GridField],
    v2: &[GridField],
    source: &[GridField],
    dt: f64,
    stride: usize,
) -> Result<TransportRun> {
    let levels = v1.len();
    if levels < 2 || v2.len() != levels || source.len() != levels {
        return Err(Error::InvalidArgument("histories must have equal length of at least 2".into()));
    }
    let spec = &v1[0].spec;
    if [v2, source].iter().any(|h| h.iter().any(|f| f.spec != *spec)) || v1.iter().any(|f| f.spec != *spec) {
        return Err(Error::InvalidArgument("histories must share one grid".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let stride = stride.max(1);
    let d = spec.dim();
    let speed: Vec<Vec<Vec<f64>>> = v1.iter().zip(v2).map(|(a, b)| summed_gradients(a, b)).collect();
    let velocity = |k: usize, x: &[f64]| -> Vec<f64> {
        (0..d)
            .map(|axis| interpolate_multilinear(spec, &speed[k][axis], x))
            .collect()
    };
    let src = |k: usize, x: &[f64]| interpolate_multilinear(spec, &source[k].values, x);

    let mut outputs: Vec<usize> = (0..levels).step_by(stride).collect();
    if *outputs.last().expect("non-empty") != levels - 1 {
        outputs.push(levels - 1);
    }
    let nodes = spec.points();
    let mut history = Vec::with_capacity(outputs.len());
    let mut clipped_nodes = Vec::with_capacity(outputs.len());
    let mut clip_events = 0;
    for &level in &outputs {
        let mut values = vec![0.0; nodes.len()];
        let mut clipped = vec![false; nodes.len()];
        for (f, node) in nodes.iter().enumerate() {
            let mut x = node.clone();
            let mut integral = 0.0;
            let mut s_here = src(level, &x);
            for k in (1..=level).rev() {
                // gamma(t - dt) = gamma(t) + dt (grad v1 + grad v2)
                let g0 = velocity(k, &x);
                let mut pred: Vec<f64> = x.iter().zip(&g0).map(|(a, g)| a + dt * g).collect();
                if clamp_into(spec, &mut pred) {
                    clip_events += 1;
                    clipped[f] = true;
                }
                let g1 = velocity(k - 1, &pred);
                for j in 0..d {
                    x[j] += 0.5 * dt * (g0[j] + g1[j]);
                }
                if clamp_into(spec, &mut x) {
                    clip_events += 1;
                    clipped[f] = true;
                }
                let s_back = src(k - 1, &x);
                integral += 0.5 * dt * (s_here + s_back);
                s_here = s_back;
            }
            values[f] = integral;
        }
        history.push(GridField {
            spec: spec.clone(),
            values,
            t: v1[level].t,
        });
        clipped_nodes.push(clipped);
    }
    Ok(TransportRun {
        history,
        clip_events,
        clipped_nodes,
    })
}

impl TransportRun {
    /// Sup distance to `v1 - v2` over the output levels and the nodes whose
    /// characteristics stayed inside the box. `direct[k]` must hold the
    /// direct difference at the `k`-th stored level of the full history;
    /// `stride` is the one used to build the run.
    pub fn agreement(&self, direct: &[GridField], stride: usize) -> TransportAgreement {
        let stride = stride.max(1);
        let mut max_error = 0.0_f64;
        let mut compared_nodes = 0;
        for (j, (field, clipped)) in self.history.iter().zip(&self.clipped_nodes).enumerate() {
            let level = (j * stride).min(direct.len() - 1);
            for (f, (&r, &c)) in field.values.iter().zip(clipped).enumerate() {
                if !c {
                    max_error = max_error.max((r - direct[level].values[f]).abs());
                    compared_nodes += 1;
                }
            }
        }
        TransportAgreement {
            max_error,
            compared_nodes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_history(spec: &GridSpec, levels: usize, dt: f64, f: impl Fn(f64, &[f64]) -> f64) -> Vec<GridField> {
        (0..levels)
            .map(|k| {
                let t = k as f64 * dt;
                GridField::from_fn(spec.clone(), t, |x| f(t, x))
            })
            .collect()
    }

    #[test]
    fn zero_source_gives_zero() {
        let spec = GridSpec::line(-2.0, 2.0, 41).unwrap();
        let v = constant_history(&spec, 11, 0.01, |_, x| -x[0] * x[0]);
        let s = constant_history(&spec, 11, 0.01, |_, _| 0.0);
        let run = solve_transport_characteristics(&v, &v, &s, 0.01, 1).unwrap();
        assert!(run.history.iter().all(|f| f.values.iter().all(|&r| r == 0.0)));
    }

    #[test]
    fn x_free_source_integrates_in_time() {
        let spec = GridSpec::line(-2.0, 2.0, 41).unwrap();
        let dt = 0.01;
        let v = constant_history(&spec, 21, dt, |_, x| -x[0] * x[0]);
        let s = constant_history(&spec, 21, dt, |t, _| 0.3 + t);
        let run = solve_transport_characteristics(&v, &v, &s, dt, 5).unwrap();
        assert_eq!(run.history.len(), 5);
        for field in &run.history {
            let exact = 0.3 * field.t + 0.5 * field.t * field.t;
            assert!(field.values.iter().all(|r| (r - exact).abs() < 1e-12));
        }
    }

    #[test]
    fn linear_transport_with_constant_speed() {
        // v1 + v2 has gradient 1, so characteristics move left at unit speed
        // and r(t, x) = int_0^t S(s, x + (t - s)) ds with S = x
        let spec = GridSpec::line(-3.0, 3.0, 121).unwrap();
        let dt = 0.01;
        let v = constant_history(&spec, 51, dt, |_, x| 0.5 * x[0]);
        let s = constant_history(&spec, 51, dt, |_, x| x[0]);
        let run = solve_transport_characteristics(&v, &v, &s, dt, 10).unwrap();
        let last = run.history.last().unwrap();
        let t = last.t;
        for (f, x) in spec.points().iter().enumerate() {
            if run.clipped_nodes.last().unwrap()[f] {
                continue;
            }
            let exact = x[0] * t + 0.5 * t * t;
            assert!((last.values[f] - exact).abs() < 1e-10);
        }
        assert!(run.clip_events > 0);
    }
}
