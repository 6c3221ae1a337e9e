//! Exact ruin-probability oracle for exponential claims and exponential
//! inter-claim times, and the asymptotic shapes of the two critical regimes.
//!
//! With claim rate `μ` and arrival rate `λ`,
//! `ψ(x) ∝ I(x) = ∫_x^∞ (1/v(y)) exp{−μy + λ∫_0^y dz/v(z)} dy`.
//! Ratios `I(x)/I(x_ref)` are free of the normalising constant.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Distribution, PremiumRateSpec, RateKind, RiskModel};
use crate::montecarlo::RuinEstimate;
use crate::quadrature;

/// Growth factor of the outer integration cells.
const CELL_RATIO: f64 = 1.25;
const MAX_CELLS: usize = 5000;
/// Stop once the tail uncertainty is below this fraction of the integral.
const TAIL_REL: f64 = 1e-11;
const CELL_REL_TOL: f64 = 1e-12;

/// Exponential claims and arrivals together with the premium rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpExpParams {
    pub lambda: f64,
    pub mu: f64,
    pub rate: PremiumRateSpec,
}

impl ExpExpParams {
    pub fn new(lambda: f64, mu: f64, rate: PremiumRateSpec) -> Result<Self> {
        if !(lambda > 0.0 && mu > 0.0 && lambda.is_finite() && mu.is_finite()) {
            return Err(Error::InvalidParameter("lambda and mu must be positive".into()));
        }
        rate.validate()?;
        if let Some((v_c, ..)) = rate.critical_params() {
            let expected = lambda / mu;
            if (v_c - expected).abs() > 1e-9 * expected {
                return Err(Error::InvalidParameter(format!("v_c = {v_c} must equal lambda/mu = {expected}")));
            }
        }
        if rate.v_inf() <= 0.0 {
            return Err(Error::InvalidParameter("the closed form needs a strictly positive rate".into()));
        }
        Ok(Self { lambda, mu, rate })
    }

    /// Parameters of a model whose claims and inter-claim times are both
    /// exponential.
    pub fn from_model(model: &RiskModel) -> Result<Self> {
        match (model.claims().xi(), model.claims().tau()) {
            (&Distribution::Exponential { rate: mu }, &Distribution::Exponential { rate: lambda }) => {
                Self::new(lambda, mu, model.rate().clone())
            }
            _ => Err(Error::InvalidParameter("the closed form needs exponential claims and inter-claim times".into())),
        }
    }
}

/// Exponent `A(y) = −μy + λ∫_0^y dz/v(z)` in a cancellation-free form.
enum Exponent<'a> {
    Constant { v: f64, slope: f64 },
    /// `v_c + θ/max(z, z_min)^α`; `α = 1` uses the closed-form logarithm.
    Critical { v_c: f64, theta: f64, alpha: f64, z_min: f64, below: f64, lam: f64 },
    Tabulated { bps: &'a [(f64, f64)], phi: Vec<f64>, lam: f64, mu: f64 },
}

impl<'a> Exponent<'a> {
    fn new(p: &'a ExpExpParams) -> Result<Self> {
        let (lam, mu) = (p.lambda, p.mu);
        Ok(match &p.rate.kind {
            RateKind::Constant { v } => Exponent::Constant { v: *v, slope: lam / v - mu },
            &RateKind::CriticalInverse { v_c, theta, z_min } => {
                Exponent::Critical { v_c, theta, alpha: 1.0, z_min, below: lam / (v_c + theta / z_min) - mu, lam }
            }
            &RateKind::CriticalPower { v_c, theta, alpha, z_min } => Exponent::Critical {
                v_c,
                theta,
                alpha,
                z_min,
                below: lam / (v_c + theta / z_min.powf(alpha)) - mu,
                lam,
            },
            RateKind::Tabulated { breakpoints } => {
                if breakpoints.iter().any(|b| b.1 <= 0.0) {
                    return Err(Error::InvalidParameter("the closed form needs strictly positive rates".into()));
                }
                // phi[i] = ∫_0^{level_i} dz/v for levels at or above 0
                let mut phi = Vec::with_capacity(breakpoints.len());
                let mut acc = 0.0;
                let mut z = 0.0f64;
                let mut r = breakpoints[0].1;
                for &(level, rate) in breakpoints.iter() {
                    if level > z {
                        acc += (level - z) / r;
                        z = level;
                    }
                    phi.push(acc);
                    r = rate;
                }
                Exponent::Tabulated { bps: breakpoints, phi, lam, mu }
            }
        })
    }

    /// Levels where the integrand has a kink.
    fn kinks(&self) -> Vec<f64> {
        match self {
            Exponent::Constant { .. } => vec![],
            Exponent::Critical { z_min, .. } => vec![*z_min],
            Exponent::Tabulated { bps, .. } => bps.iter().map(|b| b.0).filter(|l| *l > 0.0).collect(),
        }
    }

    /// `∫_{y0}^{y} dz / (v_c z^α + θ)` for `z_min ≤ y0 ≤ y`.
    fn power_piece(v_c: f64, theta: f64, alpha: f64, y0: f64, y: f64, long: bool) -> f64 {
        let f = |z: f64| 1.0 / (v_c * z.powf(alpha) + theta);
        if long {
            quadrature::adaptive(f, y0, y, 1e-14, 0.0).unwrap_or_else(|_| quadrature::fixed(y0, y, f))
        } else {
            quadrature::fixed(y0, y, f)
        }
    }

    /// `A(y) − A(y0)` for `0 ≤ y0 ≤ y`. `long` selects adaptive quadrature
    /// for wide intervals in the power family.
    fn delta(&self, y0: f64, y: f64, long: bool) -> f64 {
        match *self {
            Exponent::Constant { slope, .. } => slope * (y - y0),
            Exponent::Critical { v_c, theta, alpha, z_min, below, lam } => {
                let mut total = 0.0;
                let mut a = y0;
                if a < z_min {
                    let b = y.min(z_min);
                    total += below * (b - a);
                    a = b;
                }
                if y > a {
                    // With v_c = λ/μ the linear terms cancel exactly and
                    // 1/v(z) − 1/v_c = −θ / (v_c (v_c z^α + θ)).
                    total -= if alpha == 1.0 {
                        lam * theta / (v_c * v_c) * (v_c * (y - a) / (v_c * a + theta)).ln_1p()
                    } else {
                        lam * theta / v_c * Self::power_piece(v_c, theta, alpha, a, y, long)
                    };
                }
                total
            }
            Exponent::Tabulated { .. } => self.tabulated_a(y) - self.tabulated_a(y0),
        }
    }

    fn tabulated_a(&self, y: f64) -> f64 {
        let Exponent::Tabulated { bps, phi, lam, mu } = self else { unreachable!() };
        let i = bps.partition_point(|&(level, _)| level <= y);
        let phi_y = if i == 0 {
            y / bps[0].1
        } else {
            let (level, rate) = bps[i - 1];
            phi[i - 1] + (y - level.max(0.0)) / rate
        };
        -mu * y + lam * phi_y
    }

    fn rate(&self, p: &ExpExpParams, y: f64) -> f64 {
        match self {
            Exponent::Constant { v, .. } => *v,
            _ => p.rate.evaluate(y),
        }
    }

    /// Bracket `[lo, hi]` for `∫_Y^∞ (1/v) e^{A(y) − A(Y)} dy`, or `None`
    /// when the bracket is unavailable at this `Y`.
    fn tail(&self, p: &ExpExpParams, y_big: f64) -> Option<(f64, f64)> {
        match *self {
            Exponent::Constant { v, slope } => (slope < 0.0).then(|| {
                let t = 1.0 / (v * -slope);
                (t, t)
            }),
            Exponent::Tabulated { bps, .. } => {
                let v = bps.last().unwrap().1;
                let slope = p.lambda / v - p.mu;
                (slope < 0.0).then(|| {
                    let t = 1.0 / (v * -slope);
                    (t, t)
                })
            }
            Exponent::Critical { v_c, theta, alpha, lam, .. } => {
                let v_y = p.rate.evaluate(y_big);
                let k_hi = lam * theta / (v_y * v_c);
                let k_lo = lam * theta / (v_c * v_c);
                let s = y_big.powf(1.0 - alpha);
                if k_hi * s <= alpha {
                    return None;
                }
                let hi = y_big / (k_hi * s - alpha) / v_c;
                let lo = if alpha == 1.0 { y_big / (k_lo - 1.0) } else { y_big.powf(alpha) / k_lo } / v_y;
                Some((lo.min(hi), hi))
            }
        }
    }

    fn diverges(&self, p: &ExpExpParams) -> bool {
        match *self {
            Exponent::Constant { slope, .. } => slope >= 0.0,
            Exponent::Tabulated { bps, .. } => p.lambda / bps.last().unwrap().1 - p.mu >= 0.0,
            Exponent::Critical { v_c, theta, alpha, lam, .. } => alpha == 1.0 && lam * theta / (v_c * v_c) <= 1.0,
        }
    }
}

/// `ln I(x)`.
pub fn log_unnormalized_psi(params: &ExpExpParams, x: f64) -> Result<f64> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::InvalidParameter(format!("level must be finite and >= 0, got {x}")));
    }
    let e = Exponent::new(params)?;
    if e.diverges(params) {
        return Err(Error::Recurrent);
    }
    let a_x = e.delta(0.0, x, true);
    let kinks = e.kinks();
    let mut sum = 0.0;
    let mut left = x;
    let mut a_left = 0.0; // A(left) − A(x)
    for _ in 0..MAX_CELLS {
        let mut right = (left * CELL_RATIO).max(left + 0.5);
        if let Some(&k) = kinks.iter().find(|&&k| k > left && k < right) {
            right = k;
        }
        let abs_tol = 1e-15 * sum;
        let cell = quadrature::adaptive(
            |y| (a_left + e.delta(left, y, false)).exp() / e.rate(params, y),
            left,
            right,
            CELL_REL_TOL,
            abs_tol,
        )?;
        sum += cell;
        a_left += e.delta(left, right, false);
        left = right;
        if kinks.iter().any(|&k| k >= left) {
            continue;
        }
        // Divergence was ruled out above; a missing bracket only means the
        // bound is not yet valid this close in.
        let Some((lo, hi)) = e.tail(params, left) else { continue };
        let w = a_left.exp();
        if w == 0.0 || 0.5 * (hi - lo) * w <= TAIL_REL * sum {
            sum += 0.5 * (lo + hi) * w;
            if !(sum > 0.0 && sum.is_finite()) {
                return Err(Error::Numerical(format!("outer integral is {sum} at x = {x}")));
            }
            return Ok(a_x + sum.ln());
        }
    }
    Err(Error::Numerical(format!("outer integral did not converge within {MAX_CELLS} cells")))
}

/// `I(x)`.
pub fn unnormalized_psi(params: &ExpExpParams, x: f64) -> Result<f64> {
    log_unnormalized_psi(params, x).map(f64::exp)
}

/// `I(x)/I(x_ref) = ψ(x)/ψ(x_ref)`.
pub fn psi_ratio(params: &ExpExpParams, x: f64, x_ref: f64) -> Result<f64> {
    if x == x_ref {
        log_unnormalized_psi(params, x)?;
        return Ok(1.0);
    }
    Ok((log_unnormalized_psi(params, x)? - log_unnormalized_psi(params, x_ref)?).exp())
}

/// `(1/v(y)) e^{A(y)}`, the integrand of `I`; `I'(y)` is its negative.
pub fn integrand(params: &ExpExpParams, y: f64) -> Result<f64> {
    let e = Exponent::new(params)?;
    Ok(e.delta(0.0, y, true).exp() / e.rate(params, y))
}

/// Absolute ruin probability `λI(x) / (1 + λI(0))`.
///
/// This is the standard normalisation for exponential claims with a
/// level-dependent rate. It reduces to `(λ/(μv)) e^{−(μ−λ/v)x}` for a
/// constant rate `v`.
pub fn exact_psi(params: &ExpExpParams, x: f64) -> Result<f64> {
    let li0 = params.lambda * unnormalized_psi(params, 0.0)?;
    let lix = (params.lambda.ln() + log_unnormalized_psi(params, x)?).exp();
    Ok(lix / (1.0 + li0))
}

/// Absolute curve anchored to one Monte Carlo estimate:
/// `p̂(x_a) · ψ(x)/ψ(x_a)`.
pub fn anchored_psi(params: &ExpExpParams, x: f64, anchor: &RuinEstimate) -> Result<f64> {
    Ok(anchor.p_hat * psi_ratio(params, x, anchor.x)?)
}

/// Leading-order decay of `ψ` for exponential claims.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum AsymptoticShape {
    /// `ψ(x) ≍ x^{−power}`.
    Power { power: f64 },
    /// `ψ(x) ≍ x^{prefactor_exponent} exp{−c2 · x^{stretch_exponent}}`.
    Stretched { prefactor_exponent: f64, stretch_exponent: f64, c2: f64, log_corrected: bool },
}

pub fn asymptotic_shape(model: &RiskModel) -> Result<AsymptoticShape> {
    let p = ExpExpParams::from_model(model)?;
    let (lam, mu) = (p.lambda, p.mu);
    match p.rate.kind {
        RateKind::CriticalInverse { theta, .. } => {
            let power = theta * mu * mu / lam - 1.0;
            if power <= 0.0 {
                return Err(Error::NotTransient(power));
            }
            Ok(AsymptoticShape::Power { power })
        }
        RateKind::CriticalPower { theta, alpha, .. } => {
            let inv = 1.0 / alpha;
            Ok(AsymptoticShape::Stretched {
                prefactor_exponent: alpha,
                stretch_exponent: 1.0 - alpha,
                c2: theta * mu * mu / (lam * (1.0 - alpha)),
                log_corrected: (inv - inv.round()).abs() < 1e-12,
            })
        }
        _ => Err(Error::UnsupportedRate(p.rate.family_name())),
    }
}
