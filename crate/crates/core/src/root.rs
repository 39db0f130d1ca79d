//! Safeguarded Newton iteration for monotone scalar equations.

use crate::error::{Error, Result};

/// Finds a root of `f` in the bracket `[lo, hi]` where `f(lo)` and `f(hi)`
/// have opposite signs (or one of them vanishes).
///
/// `f` returns the value and the derivative. A Newton step is taken whenever
/// it lands strictly inside the current bracket and shrinks the residual;
/// otherwise the bracket is bisected. Converges when `|f| <= tol`.
pub fn newton_bisect<F>(f: F, mut lo: f64, mut hi: f64, tol: f64, max_iter: usize) -> Result<f64>
where
    F: Fn(f64) -> (f64, f64),
{
    let (mut f_lo, _) = f(lo);
    let (f_hi, _) = f(hi);
    if f_lo.abs() <= tol {
        return Ok(lo);
    }
    if f_hi.abs() <= tol {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::InvalidArgument(format!(
            "root not bracketed: f({lo}) = {f_lo}, f({hi}) = {f_hi}"
        )));
    }

    let mut x = 0.5 * (lo + hi);
    let mut last = f64::INFINITY;
    for _ in 0..max_iter {
        let (fx, dfx) = f(x);
        if !fx.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite residual at {x}")));
        }
        if fx.abs() <= tol {
            return Ok(x);
        }
        if fx.signum() == f_lo.signum() {
            lo = x;
            f_lo = fx;
        } else {
            hi = x;
        }
        let newton = if dfx != 0.0 { x - fx / dfx } else { f64::NAN };
        x = if newton > lo && newton < hi && fx.abs() < 0.5 * last {
            newton
        } else {
            0.5 * (lo + hi)
        };
        last = fx.abs();
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            let (fx, _) = f(x);
            if fx.abs() <= tol {
                return Ok(x);
            }
            return Err(Error::RootNotConverged {
                iterations: max_iter,
                residual: fx.abs(),
            });
        }
    }
    let (fx, _) = f(x);
    Err(Error::RootNotConverged {
        iterations: max_iter,
        residual: fx.abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_root_in_one_newton_step() {
        let root = newton_bisect(|x| (0.75 - x, -1.0), 0.0, 2.0, 1e-14, 50).unwrap();
        assert!((root - 0.75).abs() < 1e-14);
    }

    #[test]
    fn nonlinear_root() {
        let root = newton_bisect(|x| (x * x - 2.0, 2.0 * x), 0.0, 3.0, 1e-13, 100).unwrap();
        assert!((root - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn unbracketed_is_rejected() {
        assert!(newton_bisect(|x| (x * x + 1.0, 2.0 * x), -1.0, 1.0, 1e-12, 50).is_err());
    }

    #[test]
    fn flat_derivative_falls_back_to_bisection() {
        // derivative reported as zero everywhere
        let root = newton_bisect(|x| (x.powi(3) - 0.125, 0.0), 0.0, 1.0, 1e-13, 200).unwrap();
        assert!((root - 0.5).abs() < 1e-9);
    }
}
