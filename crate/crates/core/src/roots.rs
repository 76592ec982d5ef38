//! Bracketed scalar root finding.

use crate::error::{Error, Result};

/// Finds a root of `f` in `[lo, hi]` where `f(lo)` and `f(hi)` have opposite
/// signs. Bisection steps alternate with Illinois-modified secant steps, so
/// the bracket always shrinks and convergence is superlinear near a simple
/// root. Stops when the bracket width is below `x_tol * |x|` (relative).
pub fn bracketed<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    x_tol: f64,
) -> Result<f64> {
    let mut flo = f(lo);
    let mut fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() || !flo.is_finite() || !fhi.is_finite() {
        return Err(Error::Bracketing(format!(
            "no sign change on [{lo:e}, {hi:e}]: f = ({flo:e}, {fhi:e})"
        )));
    }
    let mut side = 0i8;
    for iter in 0..300 {
        let width = (hi - lo).abs();
        let scale = lo.abs().max(hi.abs()).max(1e-300);
        if width <= x_tol * scale {
            break;
        }
        let x = if iter % 3 == 2 {
            0.5 * (lo + hi)
        } else {
            let s = hi - fhi * (hi - lo) / (fhi - flo);
            if s.is_finite() && s > lo.min(hi) && s < lo.max(hi) {
                s
            } else {
                0.5 * (lo + hi)
            }
        };
        let fx = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx.signum() == fhi.signum() {
            hi = x;
            fhi = fx;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        } else {
            lo = x;
            flo = fx;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        }
    }
    Ok(lo - flo * (hi - lo) / (fhi - flo))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_cubic_root() {
        let r = bracketed(|x| x * x * x - 2.0, 0.0, 3.0, 1e-14).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-13);
    }

    #[test]
    fn rejects_missing_bracket() {
        assert!(bracketed(|x| x * x + 1.0, -1.0, 1.0, 1e-12).is_err());
    }

    #[test]
    fn tiny_scale_roots() {
        let r = bracketed(|x| x - 3e-9, 1e-10, 1e-8, 1e-12).unwrap();
        assert!((r / 3e-9 - 1.0).abs() < 1e-10);
    }
}
