//! The deterministic reserve flow `V_x(t)` between claims, solving
//! `R'(t) = v(R(t))` with `R(0) = x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PremiumRateSpec, RateKind, RiskModel};

const NEWTON_MAX_ITER: usize = 60;
const DEFAULT_REL_TOL: f64 = 1e-10;

/// How the flow is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum FlowMethod {
    /// Exact piecewise-linear solution for constant and tabulated rates.
    Analytic,
    /// Newton solve of the separable implicit equation (constant and
    /// inverse rates).
    ImplicitSeparable,
    /// Adaptive classical Runge–Kutta with step doubling.
    RungeKutta {
        /// Largest step; defaults to `min(t, 0.01 x + 0.01)`.
        #[serde(default)]
        h_max: Option<f64>,
        #[serde(default = "default_rel_tol")]
        rel_tol: f64,
    },
}

fn default_rel_tol() -> f64 {
    DEFAULT_REL_TOL
}

impl FlowMethod {
    pub fn runge_kutta() -> Self {
        FlowMethod::RungeKutta { h_max: None, rel_tol: DEFAULT_REL_TOL }
    }
}

/// A premium rate bundled with the method used to integrate it.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolver {
    rate: PremiumRateSpec,
    method: FlowMethod,
}

impl FlowSolver {
    pub fn new(rate: PremiumRateSpec, method: FlowMethod) -> Result<Self> {
        rate.validate()?;
        let supported = match (&method, &rate.kind) {
            (FlowMethod::Analytic, RateKind::Constant { .. } | RateKind::Tabulated { .. }) => true,
            (FlowMethod::ImplicitSeparable, RateKind::Constant { .. } | RateKind::CriticalInverse { .. }) => true,
            (FlowMethod::RungeKutta { h_max, rel_tol }, _) => {
                if !(*rel_tol > 0.0) || h_max.is_some_and(|h| !(h > 0.0)) {
                    return Err(Error::InvalidParameter("Runge-Kutta needs rel_tol > 0 and h_max > 0".into()));
                }
                true
            }
            _ => false,
        };
        if !supported {
            return Err(Error::InvalidParameter(format!(
                "flow method {method:?} is not available for the {} rate",
                rate.family_name()
            )));
        }
        Ok(Self { rate, method })
    }

    /// The most accurate method the rate family admits.
    pub fn for_rate(rate: PremiumRateSpec) -> Self {
        let method = match rate.kind {
            RateKind::Constant { .. } | RateKind::Tabulated { .. } => FlowMethod::Analytic,
            RateKind::CriticalInverse { .. } => FlowMethod::ImplicitSeparable,
            RateKind::CriticalPower { .. } => FlowMethod::runge_kutta(),
        };
        Self { rate, method }
    }

    pub fn rate(&self) -> &PremiumRateSpec {
        &self.rate
    }

    pub fn method(&self) -> FlowMethod {
        self.method
    }

    /// `V_x(t)`.
    pub fn flow(&self, x: f64, t: f64) -> Result<f64> {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(Error::InvalidParameter(format!("flow start level must be finite and >= 0, got {x}")));
        }
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::InvalidParameter(format!("flow time must be finite and >= 0, got {t}")));
        }
        Ok(self.advance(x, t))
    }

    /// `V_x(t)` without argument checks; used on the sampling hot path.
    #[inline]
    pub(crate) fn advance(&self, x: f64, t: f64) -> f64 {
        if t == 0.0 {
            return x;
        }
        match (&self.method, &self.rate.kind) {
            (_, RateKind::Constant { v }) => x + v * t,
            (FlowMethod::Analytic, RateKind::Tabulated { breakpoints }) => tabulated_flow(breakpoints, x, t),
            (FlowMethod::ImplicitSeparable, &RateKind::CriticalInverse { v_c, theta, z_min }) => {
                inverse_flow(v_c, theta, z_min, x, t).unwrap_or_else(|| self.runge_kutta(x, t, None, DEFAULT_REL_TOL))
            }
            (&FlowMethod::RungeKutta { h_max, rel_tol }, _) => self.runge_kutta(x, t, h_max, rel_tol),
            _ => self.runge_kutta(x, t, None, DEFAULT_REL_TOL),
        }
    }

    fn runge_kutta(&self, x: f64, t: f64, h_max: Option<f64>, rel_tol: f64) -> f64 {
        // Below the floor level the critical families have a constant rate.
        let (z, t) = match self.rate.critical_params() {
            Some((_, _, _, z_min)) if x < z_min => {
                let v0 = self.rate.evaluate(x);
                let t_floor = (z_min - x) / v0;
                if t <= t_floor {
                    return x + v0 * t;
                }
                (z_min, t - t_floor)
            }
            _ => (x, t),
        };
        let h_max = h_max.unwrap_or_else(|| t.min(0.01 * z + 0.01));
        rk4_adaptive(|y| self.rate.evaluate(y), z, t, h_max, rel_tol)
    }
}

fn tabulated_flow(breakpoints: &[(f64, f64)], mut z: f64, mut t: f64) -> f64 {
    loop {
        let i = breakpoints.partition_point(|&(level, _)| level <= z);
        let r = breakpoints[i.saturating_sub(1)].1;
        if r == 0.0 {
            return z;
        }
        match breakpoints.get(i) {
            Some(&(next, _)) if (next - z) < r * t => {
                t -= (next - z) / r;
                z = next;
            }
            _ => return z + r * t,
        }
    }
}

/// Flow for `v(z) = v_c + θ/max(z, z_min)`.
///
/// Above the floor, `∫_x^V u/(v_c u + θ) du = t`. Writing `V = x + d`, the
/// map `d ↦ d/v_c − (θ/v_c²)·ln(1 + v_c d/(v_c x + θ)) − t` is increasing and
/// convex, so Newton started from the upper bound `d = t·v(x)` decreases
/// monotonically to the root.
fn inverse_flow(v_c: f64, theta: f64, z_min: f64, mut x: f64, mut t: f64) -> Option<f64> {
    if x < z_min {
        let v0 = v_c + theta / z_min;
        let t_floor = (z_min - x) / v0;
        if t <= t_floor {
            return Some(x + v0 * t);
        }
        x = z_min;
        t -= t_floor;
    }
    let a = v_c * x + theta;
    let k = theta / (v_c * v_c);
    let mut d = t * (v_c + theta / x);
    for _ in 0..NEWTON_MAX_ITER {
        let f = d / v_c - k * (v_c * d / a).ln_1p() - t;
        let y = x + d;
        let fp = y / (v_c * y + theta);
        let step = f / fp;
        d -= step;
        // Quadratic convergence: once the step is below 1e-9·d the remaining
        // error is far below rounding.
        if step.abs() <= 1e-9 * d.abs() || step == 0.0 {
            return (d.is_finite() && d >= 0.0).then_some(x + d);
        }
    }
    None
}

/// Adaptive RK4 with step doubling and Richardson correction.
///
/// The local error target is `rel_tol` times the increment over the step,
/// so the global error is at most about `rel_tol` times the total increment.
pub(crate) fn rk4_adaptive<F: Fn(f64) -> f64>(f: F, z0: f64, t: f64, h_max: f64, rel_tol: f64) -> f64 {
    let rk4 = |z: f64, h: f64| {
        let k1 = f(z);
        let k2 = f(z + 0.5 * h * k1);
        let k3 = f(z + 0.5 * h * k2);
        let k4 = f(z + h * k3);
        z + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    };
    let mut z = z0;
    let mut remaining = t;
    let mut h = h_max.min(t);
    let h_min = t * 1e-12;
    while remaining > 0.0 {
        h = h.min(remaining);
        let full = rk4(z, h);
        let mid = rk4(z, 0.5 * h);
        let two = rk4(mid, 0.5 * h);
        let err = (two - full).abs() / 15.0;
        let tol = rel_tol * (two - z).abs() + 1e-15 * z.abs().max(1.0);
        if err <= tol || h <= h_min {
            z = two + (two - full) / 15.0;
            remaining -= h;
            let grow = if err == 0.0 { 4.0 } else { (0.9 * (tol / err).powf(0.2)).min(4.0) };
            h = (h * grow).min(h_max);
        } else {
            h *= (0.9 * (tol / err).powf(0.2)).max(0.1);
        }
    }
    z
}

/// Bracket for `V_x(t) − x` from the decreasing sandwich
/// `v_±(z) = v_c + θ/max(z, z_min)^α ± p(z)`: the lower end is
/// `t·v_−(x + t·v_+(x))` and the upper end is `t·v_+(x)`.
pub fn flow_increment_bounds(model: &RiskModel, x: f64, t: f64) -> Result<(f64, f64)> {
    let rate = model.rate();
    let (v_c, theta, alpha, z_min) =
        rate.critical_params().ok_or(Error::UnsupportedRate(rate.family_name()))?;
    if !(x >= 0.0 && t >= 0.0) {
        return Err(Error::InvalidParameter("flow bounds need x >= 0 and t >= 0".into()));
    }
    let lead = |z: f64| v_c + theta / z.max(z_min).powf(alpha);
    let p = |z: f64| rate.envelope.eval(z);
    let v_plus = |z: f64| lead(z) + p(z);
    let v_minus = |z: f64| (lead(z) - p(z)).max(0.0);
    let upper = t * v_plus(x);
    let lower = t * v_minus(x + upper);
    Ok((lower, upper))
}
