//! Premium-rate functions, claim distributions and the combined risk model.
//!
//! The reserve grows at rate `v(R(t))` between claims and drops by the claim
//! size at each claim epoch. Claims `ξ` and inter-claim times `τ` are
//! independent; the critical rate `v_c = Eξ/Eτ` balances mean income and
//! mean outflow.

use rand::Rng;
use rand_distr::{Distribution as _, Exp1};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::flow::{FlowMethod, FlowSolver};

/// Relative tolerance used when matching a rate's limit against `Eξ/Eτ`.
const CRITICAL_MATCH_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Distributions
// ---------------------------------------------------------------------------

/// Law of a non-negative random variable (claim size or inter-claim time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    Exponential { rate: f64 },
    Gamma { shape: f64, rate: f64 },
    /// Tail `P{X > x} = (1 + x/scale)^-(2 + beta)`.
    #[serde(alias = "pareto")]
    ParetoType { beta: f64, scale: f64 },
    Deterministic { value: f64 },
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        let ok = |cond: bool, msg: &str| {
            if cond {
                Ok(())
            } else {
                Err(Error::InvalidParameter(msg.to_string()))
            }
        };
        match *self {
            Distribution::Exponential { rate } => ok(rate.is_finite() && rate > 0.0, "exponential rate must be positive"),
            Distribution::Gamma { shape, rate } => ok(
                shape.is_finite() && shape > 0.0 && rate.is_finite() && rate > 0.0,
                "gamma shape and rate must be positive",
            ),
            Distribution::ParetoType { beta, scale } => ok(
                beta.is_finite() && beta > 0.0 && scale.is_finite() && scale > 0.0,
                "pareto beta and scale must be positive",
            ),
            Distribution::Deterministic { value } => {
                ok(value.is_finite() && value > 0.0, "deterministic value must be positive")
            }
        }
    }

    fn tail_exponent(&self) -> Option<f64> {
        match *self {
            Distribution::ParetoType { beta, .. } => Some(2.0 + beta),
            _ => None,
        }
    }

    /// `E X^k`, or `None` when the moment is infinite.
    pub fn moment(&self, k: u32) -> Option<f64> {
        if k == 0 {
            return Some(1.0);
        }
        match *self {
            Distribution::Exponential { rate } => Some((1..=k).map(f64::from).product::<f64>() / rate.powi(k as i32)),
            Distribution::Gamma { shape, rate } => {
                Some((0..k).map(|i| shape + f64::from(i)).product::<f64>() / rate.powi(k as i32))
            }
            Distribution::ParetoType { beta, scale } => {
                let a = 2.0 + beta;
                if f64::from(k) >= a {
                    return None;
                }
                let mut m = scale.powi(k as i32);
                for i in 1..=k {
                    m *= f64::from(i) / (a - f64::from(i));
                }
                Some(m)
            }
            Distribution::Deterministic { value } => Some(value.powi(k as i32)),
        }
    }

    /// Whether `E X^order` is finite for a real order.
    pub fn has_moment(&self, order: f64) -> bool {
        match self.tail_exponent() {
            Some(a) => order < a,
            None => true,
        }
    }

    pub fn mean(&self) -> Option<f64> {
        self.moment(1)
    }

    pub fn variance(&self) -> Option<f64> {
        let m1 = self.moment(1)?;
        let m2 = self.moment(2)?;
        Some((m2 - m1 * m1).max(0.0))
    }

    /// Survival function `P{X > x}`.
    pub fn tail(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        match *self {
            Distribution::Exponential { rate } => (-rate * x).exp(),
            Distribution::Gamma { shape, rate } => gamma_ur(shape, rate * x),
            Distribution::ParetoType { beta, scale } => (1.0 + x / scale).powf(-(2.0 + beta)),
            Distribution::Deterministic { value } => {
                if x < value {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Distribution function `P{X <= x}`.
    pub fn cdf(&self, x: f64) -> f64 {
        1.0 - self.tail(x)
    }

    /// True when the support is bounded above.
    pub fn is_bounded(&self) -> bool {
        matches!(self, Distribution::Deterministic { .. })
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self, Distribution::Deterministic { .. })
    }

    fn sampler(&self) -> Sampler {
        match *self {
            Distribution::Exponential { rate } => Sampler::Exp { inv_rate: 1.0 / rate },
            Distribution::Gamma { shape, rate } => {
                Sampler::Gamma(rand_distr::Gamma::new(shape, 1.0 / rate).expect("validated gamma parameters"))
            }
            Distribution::ParetoType { beta, scale } => Sampler::Pareto { scale, neg_inv_a: -1.0 / (2.0 + beta) },
            Distribution::Deterministic { value } => Sampler::Const(value),
        }
    }
}

#[derive(Debug, Clone)]
enum Sampler {
    Exp { inv_rate: f64 },
    Gamma(rand_distr::Gamma<f64>),
    Pareto { scale: f64, neg_inv_a: f64 },
    Const(f64),
}

impl Sampler {
    #[inline]
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Exp { inv_rate } => {
                let e: f64 = Exp1.sample(rng);
                e * inv_rate
            }
            Sampler::Gamma(g) => g.sample(rng),
            Sampler::Pareto { scale, neg_inv_a } => {
                // 1 - U lies in (0, 1]
                let u: f64 = 1.0 - rng.random::<f64>();
                scale * (u.powf(*neg_inv_a) - 1.0)
            }
            Sampler::Const(v) => *v,
        }
    }
}

// ---------------------------------------------------------------------------
// Claims
// ---------------------------------------------------------------------------

/// Independent claim size `ξ` and inter-claim time `τ`.
#[derive(Debug, Clone)]
pub struct ClaimModel {
    xi: Distribution,
    tau: Distribution,
    xi_sampler: Sampler,
    tau_sampler: Sampler,
}

impl PartialEq for ClaimModel {
    fn eq(&self, other: &Self) -> bool {
        self.xi == other.xi && self.tau == other.tau
    }
}

impl ClaimModel {
    pub fn new(xi: Distribution, tau: Distribution) -> Result<Self> {
        xi.validate()?;
        tau.validate()?;
        if tau.mean().is_none() {
            return Err(Error::InvalidParameter("inter-claim time must have finite mean".into()));
        }
        Ok(Self { xi_sampler: xi.sampler(), tau_sampler: tau.sampler(), xi, tau })
    }

    /// Exponential inter-claim times with rate `lambda` and exponential
    /// claims with rate `mu`.
    pub fn exp_exp(lambda: f64, mu: f64) -> Result<Self> {
        Self::new(Distribution::Exponential { rate: mu }, Distribution::Exponential { rate: lambda })
    }

    pub fn xi(&self) -> &Distribution {
        &self.xi
    }

    pub fn tau(&self) -> &Distribution {
        &self.tau
    }

    #[inline]
    pub fn sample_xi<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.xi_sampler.sample(rng)
    }

    #[inline]
    pub fn sample_tau<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.tau_sampler.sample(rng)
    }
}

/// `Eξ/Eτ`, the premium rate at which the mean income balances the mean claim.
pub fn critical_rate(claims: &ClaimModel) -> Result<f64> {
    let e_tau = claims.tau.mean().unwrap_or(f64::INFINITY);
    if !(e_tau > 0.0 && e_tau.is_finite()) {
        return Err(Error::InvalidParameter("E tau must lie in (0, inf)".into()));
    }
    let e_xi = claims.xi.mean().ok_or(Error::HeavyMeanClaim)?;
    Ok(e_xi / e_tau)
}

// ---------------------------------------------------------------------------
// Premium rate
// ---------------------------------------------------------------------------

/// Shape of the premium rate `v(z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateKind {
    Constant {
        v: f64,
    },
    /// `v(z) = v_c + θ / max(z, z_min)`.
    CriticalInverse {
        v_c: f64,
        theta: f64,
        #[serde(default = "default_z_min")]
        z_min: f64,
    },
    /// `v(z) = v_c + θ / max(z, z_min)^α`.
    CriticalPower {
        v_c: f64,
        theta: f64,
        alpha: f64,
        #[serde(default = "default_z_min")]
        z_min: f64,
    },
    /// Piecewise-constant: the rate of the last breakpoint at or below `z`,
    /// the first rate below the first breakpoint.
    Tabulated { breakpoints: Vec<(f64, f64)> },
}

fn default_z_min() -> f64 {
    1.0
}

/// Bound `p(z)` on `|v(z) - v_c - θ/z^α|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeviationEnvelope {
    /// The parametric families match their leading term exactly above `z_min`.
    #[default]
    Zero,
    /// `p(z) = scale * max(z, 1)^-exponent`.
    Power { scale: f64, exponent: f64 },
}

impl DeviationEnvelope {
    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            DeviationEnvelope::Zero => 0.0,
            DeviationEnvelope::Power { scale, exponent } => scale * z.max(1.0).powf(-exponent),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            DeviationEnvelope::Zero => Ok(()),
            DeviationEnvelope::Power { scale, exponent } if scale >= 0.0 && exponent > 1.0 => Ok(()),
            DeviationEnvelope::Power { .. } => Err(Error::InvalidParameter(
                "deviation envelope needs scale >= 0 and exponent > 1".into(),
            )),
        }
    }
}

/// Premium rate function together with its deviation envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PremiumRateSpec {
    #[serde(flatten)]
    pub kind: RateKind,
    #[serde(default)]
    pub envelope: DeviationEnvelope,
}

impl From<RateKind> for PremiumRateSpec {
    fn from(kind: RateKind) -> Self {
        Self { kind, envelope: DeviationEnvelope::Zero }
    }
}

impl PremiumRateSpec {
    pub fn constant(v: f64) -> Self {
        RateKind::Constant { v }.into()
    }

    pub fn critical_inverse(v_c: f64, theta: f64, z_min: f64) -> Self {
        RateKind::CriticalInverse { v_c, theta, z_min }.into()
    }

    pub fn critical_power(v_c: f64, theta: f64, alpha: f64, z_min: f64) -> Self {
        RateKind::CriticalPower { v_c, theta, alpha, z_min }.into()
    }

    pub fn tabulated(breakpoints: Vec<(f64, f64)>) -> Self {
        RateKind::Tabulated { breakpoints }.into()
    }

    pub fn validate(&self) -> Result<()> {
        self.envelope.validate()?;
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        match &self.kind {
            RateKind::Constant { v } => {
                if !(v.is_finite() && *v >= 0.0) {
                    return bad("constant rate must be finite and non-negative");
                }
            }
            RateKind::CriticalInverse { v_c, theta, z_min } => {
                if !(*v_c > 0.0 && *theta > 0.0 && *z_min > 0.0 && v_c.is_finite() && theta.is_finite()) {
                    return bad("critical inverse rate needs v_c > 0, theta > 0, z_min > 0");
                }
            }
            RateKind::CriticalPower { v_c, theta, alpha, z_min } => {
                if !(*v_c > 0.0 && *theta > 0.0 && *z_min > 0.0 && v_c.is_finite() && theta.is_finite()) {
                    return bad("critical power rate needs v_c > 0, theta > 0, z_min > 0");
                }
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return bad("critical power exponent alpha must lie in (0, 1)");
                }
            }
            RateKind::Tabulated { breakpoints } => {
                if breakpoints.is_empty() {
                    return bad("tabulated rate needs at least one breakpoint");
                }
                if breakpoints.windows(2).any(|w| !(w[0].0 < w[1].0)) {
                    return bad("tabulated breakpoints must be strictly increasing in level");
                }
                if breakpoints.iter().any(|&(l, r)| !(l.is_finite() && r.is_finite() && r >= 0.0)) {
                    return bad("tabulated rates must be finite and non-negative");
                }
            }
        }
        Ok(())
    }

    pub fn family_name(&self) -> &'static str {
        match self.kind {
            RateKind::Constant { .. } => "constant",
            RateKind::CriticalInverse { .. } => "critical_inverse",
            RateKind::CriticalPower { .. } => "critical_power",
            RateKind::Tabulated { .. } => "tabulated",
        }
    }

    /// `v(z)`.
    #[inline]
    pub fn evaluate(&self, z: f64) -> f64 {
        match &self.kind {
            RateKind::Constant { v } => *v,
            RateKind::CriticalInverse { v_c, theta, z_min } => v_c + theta / z.max(*z_min),
            RateKind::CriticalPower { v_c, theta, alpha, z_min } => v_c + theta / z.max(*z_min).powf(*alpha),
            RateKind::Tabulated { breakpoints } => {
                let i = breakpoints.partition_point(|&(level, _)| level <= z);
                breakpoints[i.saturating_sub(1)].1
            }
        }
    }

    /// `sup_z v(z)`.
    pub fn v_bar(&self) -> f64 {
        match &self.kind {
            RateKind::Constant { v } => *v,
            RateKind::CriticalInverse { v_c, theta, z_min } => v_c + theta / z_min,
            RateKind::CriticalPower { v_c, theta, alpha, z_min } => v_c + theta / z_min.powf(*alpha),
            RateKind::Tabulated { breakpoints } => breakpoints.iter().map(|b| b.1).fold(0.0, f64::max),
        }
    }

    /// `inf_z v(z)`.
    pub fn v_inf(&self) -> f64 {
        match &self.kind {
            RateKind::Constant { v } => *v,
            RateKind::CriticalInverse { v_c, .. } | RateKind::CriticalPower { v_c, .. } => *v_c,
            RateKind::Tabulated { breakpoints } => breakpoints.iter().map(|b| b.1).fold(f64::INFINITY, f64::min),
        }
    }

    /// `(v_c, θ, α, z_min)` for the critical families.
    pub fn critical_params(&self) -> Option<(f64, f64, f64, f64)> {
        match self.kind {
            RateKind::CriticalInverse { v_c, theta, z_min } => Some((v_c, theta, 1.0, z_min)),
            RateKind::CriticalPower { v_c, theta, alpha, z_min } => Some((v_c, theta, alpha, z_min)),
            _ => None,
        }
    }

    pub fn is_critical(&self) -> bool {
        self.critical_params().is_some()
    }

    /// Limit of `v(z)` as `z → ∞`.
    pub fn limit(&self) -> f64 {
        match &self.kind {
            RateKind::Constant { v } => *v,
            RateKind::CriticalInverse { v_c, .. } | RateKind::CriticalPower { v_c, .. } => *v_c,
            RateKind::Tabulated { breakpoints } => breakpoints.last().map(|b| b.1).unwrap_or(0.0),
        }
    }
}

// ---------------------------------------------------------------------------
// Risk model
// ---------------------------------------------------------------------------

/// Premium rate plus claims, with the constants every bound depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskModel {
    rate: PremiumRateSpec,
    claims: ClaimModel,
    flow: FlowSolver,
    v_c: f64,
    v_bar: f64,
}

/// Constants derived from a model with finite second moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedConstants {
    pub v_c: f64,
    pub v_bar: f64,
    /// `Var ξ + v_c² Var τ`.
    pub b: f64,
    /// `θ Eτ`, for critical families.
    pub mu_drift: Option<f64>,
    /// `2θEτ/b - 1`, for the inverse family.
    pub rho: Option<f64>,
    /// `2θEτ/b`, for critical families.
    pub r1: Option<f64>,
    /// `b / (2Eτ)`: the value of `θ` separating recurrence from transience.
    pub threshold: f64,
}

impl RiskModel {
    pub fn new(rate: PremiumRateSpec, claims: ClaimModel) -> Result<Self> {
        rate.validate()?;
        let v_c = critical_rate(&claims)?;
        if let Some((rate_vc, ..)) = rate.critical_params() {
            if (rate_vc - v_c).abs() > CRITICAL_MATCH_TOL * v_c.max(1.0) {
                return Err(Error::InvalidParameter(format!(
                    "rate limit v_c = {rate_vc} does not match E xi / E tau = {v_c}"
                )));
            }
        }
        if claims.xi.is_bounded() {
            log::warn!("bounded claim sizes: positivity of the ruin probability is not guaranteed");
        }
        let v_bar = rate.v_bar();
        let flow = FlowSolver::for_rate(rate.clone());
        Ok(Self { rate, claims, flow, v_c, v_bar })
    }

    /// Replaces the default flow method.
    pub fn with_flow_method(mut self, method: FlowMethod) -> Result<Self> {
        self.flow = FlowSolver::new(self.rate.clone(), method)?;
        Ok(self)
    }

    pub fn flow_solver(&self) -> &FlowSolver {
        &self.flow
    }

    /// Exponential claims (rate `mu`) and inter-claim times (rate `lambda`)
    /// with `v(z) = λ/μ + θ/max(z, 1)`.
    pub fn exp_exp_inverse(lambda: f64, mu: f64, theta: f64) -> Result<Self> {
        Self::new(PremiumRateSpec::critical_inverse(lambda / mu, theta, 1.0), ClaimModel::exp_exp(lambda, mu)?)
    }

    pub fn rate(&self) -> &PremiumRateSpec {
        &self.rate
    }

    pub fn claims(&self) -> &ClaimModel {
        &self.claims
    }

    pub fn v_c(&self) -> f64 {
        self.v_c
    }

    pub fn v_bar(&self) -> f64 {
        self.v_bar
    }

    pub fn mean_tau(&self) -> f64 {
        self.claims.tau.mean().expect("validated at construction")
    }

    /// `Var ξ + v_c² Var τ`.
    pub fn jump_variance(&self) -> Result<f64> {
        let var_xi = self.claims.xi.variance();
        let var_tau = self.claims.tau.variance();
        match (var_xi, var_tau) {
            (Some(vx), Some(vt)) => Ok(vx + self.v_c * self.v_c * vt),
            (None, None) => Err(Error::InfiniteSecondMoment("xi and tau".into())),
            (None, _) => Err(Error::InfiniteSecondMoment("xi".into())),
            (_, None) => Err(Error::InfiniteSecondMoment("tau".into())),
        }
    }

    pub fn derived_constants(&self) -> Result<DerivedConstants> {
        let b = self.jump_variance()?;
        let e_tau = self.mean_tau();
        let threshold = b / (2.0 * e_tau);
        let (mu_drift, rho, r1) = match self.rate.critical_params() {
            Some((_, theta, alpha, _)) => {
                let r1 = 2.0 * theta * e_tau / b;
                let rho = if alpha == 1.0 { Some(r1 - 1.0) } else { None };
                (Some(theta * e_tau), rho, Some(r1))
            }
            None => (None, None, None),
        };
        Ok(DerivedConstants { v_c: self.v_c, v_bar: self.v_bar, b, mu_drift, rho, r1, threshold })
    }

    /// `E[τ^j (v_c τ − ξ)^m]`, expanded binomially over the independent
    /// `ξ` and `τ`.
    pub fn mixed_moment(&self, j: u32, m: u32) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..=m {
            let e_tau = self
                .claims
                .tau
                .moment(j + i)
                .ok_or(Error::MissingMoment { which: "tau", order: j + i })?;
            let e_xi = self
                .claims
                .xi
                .moment(m - i)
                .ok_or(Error::MissingMoment { which: "xi", order: m - i })?;
            let sign = (-1f64).powi((m - i) as i32);
            total += binomial(m, i) * self.v_c.powi(i as i32) * sign * e_tau * e_xi;
        }
        Ok(total)
    }

    /// `ρ = 2θEτ/b - 1` for the inverse family.
    pub fn rho(&self) -> Result<f64> {
        self.derived_constants()?.rho.ok_or(Error::UnsupportedRate(self.rate.family_name()))
    }
}

/// Binomial coefficient as a float.
pub fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}
