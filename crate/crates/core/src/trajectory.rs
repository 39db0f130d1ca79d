use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::grid::GridField;

/// One recorded time level of a limit-problem run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    /// dominant trait `xbar(t)`
    pub xbar: Vec<f64>,
    /// `-D^2 u / 2` at the peak, upper triangle row-major
    pub curvature: Vec<f64>,
    pub resource: f64,
    /// mass of the limiting Dirac, `I / psi(xbar)`
    pub rho: f64,
    /// `|max_x u(t, .)|`
    pub constraint_residual: f64,
    /// `|R(xbar, I)|`
    pub r_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionEvent {
    pub t: f64,
    pub shift: f64,
}

/// Time series produced by the oracle and the grid solver.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryRecord {
    pub samples: Vec<TrajectorySample>,
    pub snapshots: Vec<GridField>,
    pub projections: Vec<ProjectionEvent>,
}

impl TrajectoryRecord {
    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.xbar.len())
    }

    pub fn last(&self) -> Option<&TrajectorySample> {
        self.samples.last()
    }

    /// Sample whose time is closest to `t`.
    pub fn at(&self, t: f64) -> Option<&TrajectorySample> {
        self.samples
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
    }

    /// Largest decrease of `I` between consecutive samples (0 when monotone).
    pub fn max_resource_decrease(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| w[0].resource - w[1].resource)
            .fold(0.0, f64::max)
    }

    /// CSV with columns `t, m_1..m_d, A_ij (i <= j), I, rho, constraint_residual`.
    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut out = String::from("t");
        for i in 1..=d {
            let _ = write!(out, ",m_{i}");
        }
        for i in 1..=d {
            for j in i..=d {
                let _ = write!(out, ",A_{i}{j}");
            }
        }
        out.push_str(",I,rho,constraint_residual\n");
        for s in &self.samples {
            let _ = write!(out, "{}", s.t);
            for v in s.xbar.iter().chain(&s.curvature) {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{},{},{}", s.resource, s.rho, s.constraint_residual);
        }
        out
    }

    /// Parses the CSV written by [`TrajectoryRecord::to_csv`].
    pub fn from_csv(text: &str) -> crate::Result<Self> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| crate::Error::Config("empty trajectory CSV".into()))?
            .split(',')
            .collect();
        let d = header.iter().filter(|h| h.starts_with("m_")).count();
        let n_curv = d * (d + 1) / 2;
        if header.len() != 1 + d + n_curv + 3 {
            return Err(crate::Error::Config("unexpected trajectory CSV header".into()));
        }
        let mut samples = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let v: Vec<f64> = line
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| crate::Error::Config(format!("bad CSV value: {e}")))?;
            if v.len() != header.len() {
                return Err(crate::Error::Config("ragged trajectory CSV".into()));
            }
            samples.push(TrajectorySample {
                t: v[0],
                xbar: v[1..1 + d].to_vec(),
                curvature: v[1 + d..1 + d + n_curv].to_vec(),
                resource: v[1 + d + n_curv],
                rho: v[2 + d + n_curv],
                constraint_residual: v[3 + d + n_curv],
                r_residual: f64::NAN,
            });
        }
        Ok(TrajectoryRecord {
            samples,
            ..Default::default()
        })
    }
}

/// Upper triangle of a symmetric matrix, row-major.
pub(crate) fn upper_triangle(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in i..d {
            out.push(m[(i, j)]);
        }
    }
    out
}
