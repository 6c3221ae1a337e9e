//! Gauss–Legendre rules and an adaptive bisection integrator built on them.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;

use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 120;

/// Cached 16-point Gauss–Legendre rule.
pub fn gl16() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(16).unwrap()))
}

/// Cached 8-point Gauss–Legendre rule.
pub fn gl8() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(8).unwrap()))
}

/// Fixed 16-point rule on `[a, b]`.
#[inline]
pub fn fixed<F: FnMut(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
    gl16().integrate(a, b, f)
}

/// Integrates `f` over `[a, b]` by recursive bisection, comparing the
/// 16-point rule on an interval with the sum over its two halves.
///
/// Stops when the difference is below `max(abs_tol, rel_tol * |estimate|)`
/// on every leaf; the tolerance is split between halves as the recursion
/// deepens.
pub fn adaptive<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Numerical(format!("non-finite integration limits [{a}, {b}]")));
    }
    let whole = fixed(a, b, &mut f);
    let tol = abs_tol.max(rel_tol * whole.abs());
    let v = recurse(&mut f, a, b, whole, tol, 0)?;
    if !v.is_finite() {
        return Err(Error::Numerical("quadrature produced a non-finite value".into()));
    }
    Ok(v)
}

fn recurse<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> Result<f64> {
    let m = 0.5 * (a + b);
    let left = fixed(a, m, &mut *f);
    let right = fixed(m, b, &mut *f);
    let sum = left + right;
    if (sum - whole).abs() <= tol || (b - a) <= 4.0 * f64::EPSILON * a.abs().max(b.abs()) {
        return Ok(sum);
    }
    if depth >= MAX_DEPTH {
        return Err(Error::Numerical(format!("adaptive quadrature did not converge on [{a}, {b}]")));
    }
    let half = 0.5 * tol;
    Ok(recurse(f, a, m, left, half, depth + 1)? + recurse(f, m, b, right, half, depth + 1)?)
}
