//! Monte Carlo estimates of ruin probabilities, decay exponents and the
//! Γ-limit diagnostic for transient chains.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{Beta, ContinuousCDF, Gamma};

use crate::chain::{run_path, Caps, PathOutcome, SurvivalReason};
use crate::error::{Error, Result};
use crate::model::RiskModel;
use crate::rng::RngStream;

const Z95: f64 = 1.96;

/// Ruin frequency at one initial level, with censoring counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RuinEstimate {
    pub x: f64,
    pub p_hat: f64,
    /// Normal-approximation 95% half-width.
    pub half_width: f64,
    pub n_paths: u64,
    pub n_ruined: u64,
    pub censored_cap: u64,
    pub censored_horizon: u64,
    /// Frequency counting horizon-censored paths as ruined.
    pub p_hat_pessimistic: f64,
}

impl RuinEstimate {
    pub fn from_counts(x: f64, n_paths: u64, n_ruined: u64, censored_cap: u64, censored_horizon: u64) -> Self {
        assert!(n_paths >= 1 && n_ruined + censored_cap + censored_horizon == n_paths);
        let n = n_paths as f64;
        let p_hat = n_ruined as f64 / n;
        Self {
            x,
            p_hat,
            half_width: Z95 * (p_hat * (1.0 - p_hat) / n).sqrt(),
            n_paths,
            n_ruined,
            censored_cap,
            censored_horizon,
            p_hat_pessimistic: (n_ruined + censored_horizon) as f64 / n,
        }
    }

    /// Standard error of `p_hat`.
    pub fn std_error(&self) -> f64 {
        self.half_width / Z95
    }

    /// Pools two estimates at the same level from disjoint streams.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.x != other.x {
            return Err(Error::InvalidParameter("cannot merge estimates at different levels".into()));
        }
        Ok(Self::from_counts(
            self.x,
            self.n_paths + other.n_paths,
            self.n_ruined + other.n_ruined,
            self.censored_cap + other.censored_cap,
            self.censored_horizon + other.censored_horizon,
        ))
    }

    /// Exact Clopper–Pearson interval at the given confidence level.
    pub fn clopper_pearson(&self, confidence: f64) -> (f64, f64) {
        let alpha = 1.0 - confidence;
        let (k, n) = (self.n_ruined as f64, self.n_paths as f64);
        let lo = if self.n_ruined == 0 {
            0.0
        } else {
            Beta::new(k, n - k + 1.0).expect("valid beta").inverse_cdf(alpha / 2.0)
        };
        let hi = if self.n_ruined == self.n_paths {
            1.0
        } else {
            Beta::new(k + 1.0, n - k).expect("valid beta").inverse_cdf(1.0 - alpha / 2.0)
        };
        (lo, hi)
    }
}

fn tally(x: f64, outcomes: impl Iterator<Item = PathOutcome>) -> RuinEstimate {
    let (mut n, mut ruined, mut cap, mut horizon) = (0, 0, 0, 0);
    for o in outcomes {
        n += 1;
        match o {
            PathOutcome::Ruined { .. } => ruined += 1,
            PathOutcome::Survived { reason: SurvivalReason::HitCap, .. } => cap += 1,
            PathOutcome::Survived { reason: SurvivalReason::HorizonExhausted, .. } => horizon += 1,
        }
    }
    RuinEstimate::from_counts(x, n, ruined, cap, horizon)
}

/// Simulates paths on the given stream ids and tallies the outcomes.
pub fn estimate_ruin_streams(
    model: &RiskModel,
    x: f64,
    streams: std::ops::Range<u64>,
    caps: Caps,
    seed: u64,
) -> Result<RuinEstimate> {
    if streams.is_empty() {
        return Err(Error::InvalidParameter("need at least one path".into()));
    }
    if !(x >= 0.0 && x.is_finite()) || caps.max_steps < 1 {
        return Err(Error::InvalidParameter("need x >= 0 and max_steps >= 1".into()));
    }
    let outcomes: Vec<PathOutcome> = streams
        .into_par_iter()
        .map(|id| {
            let mut rng = RngStream::new(seed, id);
            run_path(model, x, caps, &mut rng, |_| ()).0
        })
        .collect();
    Ok(tally(x, outcomes.into_iter()))
}

/// `ψ̂(x)` from `n_paths` paths on streams `0..n_paths`.
pub fn estimate_ruin(model: &RiskModel, x: f64, n_paths: u64, caps: Caps, seed: u64) -> Result<RuinEstimate> {
    estimate_ruin_streams(model, x, 0..n_paths, caps, seed)
}

/// Estimates on a grid, level `i` using streams `i·n_paths..(i+1)·n_paths`.
///
/// `caps = None` applies [`Caps::default_for`] at each level.
pub fn ruin_curve(
    model: &RiskModel,
    xs: &[f64],
    n_paths: u64,
    caps: Option<Caps>,
    seed: u64,
) -> Result<Vec<RuinEstimate>> {
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let start = i as u64 * n_paths;
            estimate_ruin_streams(model, x, start..start + n_paths, caps.unwrap_or_else(|| Caps::default_for(x)), seed)
        })
        .collect()
}

/// Fitted power-law decay `ψ(x) ≈ C (1+x)^{-ρ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub rho_hat: f64,
    pub stderr: f64,
    pub n_points: usize,
}

/// Weighted least squares of `ln p̂` on `ln(1+x)`.
///
/// The weight of a point is the inverse of the delta-method variance of
/// `ln p̂`, `(half_width / (1.96 p̂))²`. Points with `p̂ = 0` are dropped; at
/// least four must remain.
pub fn decay_exponent_fit(curve: &[RuinEstimate]) -> Result<DecayFit> {
    let pts: Vec<&RuinEstimate> = curve.iter().filter(|e| e.p_hat > 0.0).collect();
    if pts.is_empty() {
        return Err(Error::NoRuinObserved);
    }
    if pts.len() < 4 {
        return Err(Error::Precondition(format!("decay fit needs 4 levels with ruin observed, got {}", pts.len())));
    }
    let var: Vec<f64> = pts.iter().map(|e| (e.half_width / (Z95 * e.p_hat)).powi(2)).collect();
    let floor = var.iter().cloned().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor * 1e-3 } else { 1.0 };
    let w: Vec<f64> = var.iter().map(|v| 1.0 / v.max(floor)).collect();
    let s: Vec<f64> = pts.iter().map(|e| e.x.ln_1p()).collect();
    let y: Vec<f64> = pts.iter().map(|e| e.p_hat.ln()).collect();
    let sw: f64 = w.iter().sum();
    let s_bar = w.iter().zip(&s).map(|(w, s)| w * s).sum::<f64>() / sw;
    let y_bar = w.iter().zip(&y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(&s).map(|(w, s)| w * (s - s_bar).powi(2)).sum();
    let sxy: f64 = w.iter().zip(&s).zip(&y).map(|((w, s), y)| w * (s - s_bar) * (y - y_bar)).sum();
    if sxx <= 0.0 {
        return Err(Error::Precondition("decay fit needs at least two distinct levels".into()));
    }
    Ok(DecayFit { rho_hat: -sxy / sxx, stderr: (1.0 / sxx).sqrt(), n_points: pts.len() })
}

/// Result of the `R_n²/n` diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaLimitReport {
    pub n_steps: u64,
    pub n_survivors: u64,
    pub n_attempted: u64,
    pub mean: f64,
    pub mean_stderr: f64,
    pub variance: f64,
    /// `2μ + b`.
    pub reference_mean: f64,
    /// `(2μ + b)·2b`.
    pub reference_variance: f64,
    pub gamma_shape: f64,
    pub gamma_scale: f64,
    /// `(probability, empirical quantile, reference quantile)`.
    pub quantiles: Vec<(f64, f64, f64)>,
}

/// Runs paths from `x0 = 1` for `n` steps and compares `R_n²/n` over the
/// first `n_paths` surviving stream ids with the Γ law of mean `2μ + b`
/// and variance `(2μ + b)·2b`.
pub fn gamma_limit_test(model: &RiskModel, n: u64, n_paths: u64, seed: u64) -> Result<GammaLimitReport> {
    let dc = model.derived_constants()?;
    if !(dc.b > 0.0) {
        return Err(Error::Precondition("the Gamma limit needs b > 0 (non-degenerate claims)".into()));
    }
    let rho = dc.rho.ok_or(Error::UnsupportedRate(model.rate().family_name()))?;
    if !(rho > 0.0) {
        return Err(Error::NotTransient(rho));
    }
    if n < 1 || n_paths < 2 {
        return Err(Error::InvalidParameter("need n >= 1 and at least 2 paths".into()));
    }
    let mu = dc.mu_drift.expect("critical family");
    let caps = Caps::new(n, f64::INFINITY);
    let mut values: Vec<f64> = Vec::with_capacity(n_paths as usize);
    let mut next = 0u64;
    let mut attempted = 0u64;
    while (values.len() as u64) < n_paths {
        let want = n_paths - values.len() as u64;
        let chunk = (want + want / 2).max(16);
        let finals: Vec<Option<f64>> = (next..next + chunk)
            .into_par_iter()
            .map(|id| {
                let mut rng = RngStream::new(seed, id);
                match run_path(model, 1.0, caps, &mut rng, |_| ()) {
                    (PathOutcome::Ruined { .. }, _) => None,
                    (_, r) => Some(r),
                }
            })
            .collect();
        for (offset, r) in finals.into_iter().enumerate() {
            if values.len() as u64 == n_paths {
                break;
            }
            attempted = next + offset as u64 + 1;
            if let Some(r) = r {
                values.push(r * r / n as f64);
            }
        }
        next += chunk;
        if next > 1000 * n_paths.max(1000) {
            return Err(Error::Numerical("almost every path is ruined".into()));
        }
    }
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let reference_mean = 2.0 * mu + dc.b;
    let shape = reference_mean / (2.0 * dc.b);
    let scale = 2.0 * dc.b;
    let law = Gamma::new(shape, 1.0 / scale).map_err(|e| Error::Numerical(e.to_string()))?;
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let quantiles = [0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99]
        .iter()
        .map(|&p| {
            let idx = ((p * m).ceil() as usize).clamp(1, sorted.len()) - 1;
            (p, sorted[idx], law.inverse_cdf(p))
        })
        .collect();
    Ok(GammaLimitReport {
        n_steps: n,
        n_survivors: values.len() as u64,
        n_attempted: attempted,
        mean,
        mean_stderr: (variance / m).sqrt(),
        variance,
        reference_mean,
        reference_variance: reference_mean * 2.0 * dc.b,
        gamma_shape: shape,
        gamma_scale: scale,
        quantiles,
    })
}
