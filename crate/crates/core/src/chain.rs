//! The embedded chain `R_n = R(T_n)` observed at claim epochs.
//!
//! Between claims the reserve follows the flow; at a claim it drops by the
//! claim size. The jump from level `x` is `ξ(x) = V_x(τ) − x − ξ`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RiskModel;
use crate::rng::RngStream;

/// Draws per random stream in batch estimators.
pub(crate) const DRAW_BATCH: u64 = 1 << 16;

/// Censoring limits for a simulated path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Caps {
    pub max_steps: u64,
    pub level_cap: f64,
}

impl Caps {
    pub fn new(max_steps: u64, level_cap: f64) -> Self {
        Self { max_steps, level_cap }
    }

    /// `level_cap = max(100 x, 10⁴)` and `max_steps = 10⁶`.
    pub fn default_for(x: f64) -> Self {
        Self { max_steps: 1_000_000, level_cap: (100.0 * x).max(1e4) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurvivalReason {
    HitCap,
    HorizonExhausted,
}

/// How a simulated path ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathOutcome {
    Ruined { step: u64 },
    Survived { reason: SurvivalReason, steps: u64 },
}

impl PathOutcome {
    pub fn is_ruined(&self) -> bool {
        matches!(self, PathOutcome::Ruined { .. })
    }

    pub fn steps(&self) -> u64 {
        match *self {
            PathOutcome::Ruined { step } => step,
            PathOutcome::Survived { steps, .. } => steps,
        }
    }
}

/// Whether a path keeps every visited level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Recording {
    Full,
    /// Keep only the initial level.
    #[default]
    Streaming,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainPath {
    /// `R_0, R_1, …`; only `R_0` in streaming mode.
    pub states: Vec<f64>,
    pub final_level: f64,
    pub outcome: PathOutcome,
}

/// Components of one jump draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpDraw {
    pub tau: f64,
    pub xi: f64,
    /// `V_x(τ) − x`.
    pub gain: f64,
}

impl JumpDraw {
    #[inline]
    pub fn jump(&self) -> f64 {
        self.gain - self.xi
    }
}

/// Draws `τ` then `ξ` and returns the flow gain alongside them.
#[inline]
pub fn sample_jump_parts<R: Rng + ?Sized>(model: &RiskModel, x: f64, rng: &mut R) -> JumpDraw {
    let tau = model.claims().sample_tau(rng);
    let xi = model.claims().sample_xi(rng);
    let gain = model.flow_solver().advance(x, tau) - x;
    JumpDraw { tau, xi, gain }
}

/// One draw of `ξ(x) = V_x(τ) − x − ξ`.
#[inline]
pub fn sample_jump<R: Rng + ?Sized>(model: &RiskModel, x: f64, rng: &mut R) -> f64 {
    sample_jump_parts(model, x, rng).jump()
}

/// Iterates the chain until ruin, the level cap or the step horizon.
pub fn simulate_path<R: Rng + ?Sized>(
    model: &RiskModel,
    x0: f64,
    caps: Caps,
    rng: &mut R,
    recording: Recording,
) -> Result<ChainPath> {
    if !(x0 >= 0.0 && x0.is_finite()) {
        return Err(Error::InvalidParameter(format!("initial reserve must be finite and >= 0, got {x0}")));
    }
    if caps.max_steps < 1 {
        return Err(Error::InvalidParameter("max_steps must be at least 1".into()));
    }
    let mut states = vec![x0];
    let keep = recording == Recording::Full;
    let (outcome, final_level) = run_path(model, x0, caps, rng, |r| {
        if keep {
            states.push(r)
        }
    });
    Ok(ChainPath { states, final_level, outcome })
}

/// Allocation-free path loop; `visit` sees every level after `R_0`.
#[inline]
pub(crate) fn run_path<R: Rng + ?Sized, F: FnMut(f64)>(
    model: &RiskModel,
    x0: f64,
    caps: Caps,
    rng: &mut R,
    mut visit: F,
) -> (PathOutcome, f64) {
    let mut r = x0;
    if r > caps.level_cap {
        return (PathOutcome::Survived { reason: SurvivalReason::HitCap, steps: 0 }, r);
    }
    for step in 1..=caps.max_steps {
        r += sample_jump(model, r, rng);
        visit(r);
        if r < 0.0 {
            return (PathOutcome::Ruined { step }, r);
        }
        if r > caps.level_cap {
            return (PathOutcome::Survived { reason: SurvivalReason::HitCap, steps: step }, r);
        }
    }
    (PathOutcome::Survived { reason: SurvivalReason::HorizonExhausted, steps: caps.max_steps }, r)
}

/// Monte Carlo estimate of one jump moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub order: u32,
    /// Control-variate estimate of `E ξ(x)^k`.
    pub mean: f64,
    pub std_error: f64,
    /// Plain sample mean of `ξ(x)^k`.
    pub plain_mean: f64,
    pub plain_std_error: f64,
}

/// Per-batch sums for the moment estimators.
#[derive(Debug, Clone, Default)]
struct MomentSums {
    n: f64,
    y: Vec<f64>,
    yy: Vec<f64>,
    c: Vec<f64>,
    cc: Vec<f64>,
    yc: Vec<f64>,
}

impl MomentSums {
    fn new(k: usize) -> Self {
        Self { n: 0.0, y: vec![0.0; k], yy: vec![0.0; k], c: vec![0.0; k], cc: vec![0.0; k], yc: vec![0.0; k] }
    }

    fn add(&mut self, other: &Self) {
        self.n += other.n;
        for (a, b) in [
            (&mut self.y, &other.y),
            (&mut self.yy, &other.yy),
            (&mut self.c, &other.c),
            (&mut self.cc, &other.cc),
            (&mut self.yc, &other.yc),
        ] {
            a.iter_mut().zip(b).for_each(|(s, o)| *s += o);
        }
    }
}

/// Estimates `m_k(x) = E ξ(x)^k` for `k = 1..=k_max` from `n_draws` jumps.
///
/// Each power is paired with the control variate `(v_c τ − ξ)^k`, whose mean
/// is known exactly whenever the needed moments are finite. The jump differs
/// from `v_c τ − ξ` only by the small flow excess, so the control removes
/// almost all of the variance at high levels. Orders whose control mean is
/// unavailable fall back to the plain sample mean.
pub fn jump_moment_estimates(
    model: &RiskModel,
    x: f64,
    k_max: u32,
    n_draws: u64,
    seed: u64,
) -> Result<Vec<MomentEstimate>> {
    if n_draws < 1000 {
        return Err(Error::Precondition("jump_moment_estimates needs at least 1000 draws".into()));
    }
    if !(x >= 0.0) || k_max == 0 {
        return Err(Error::InvalidParameter("need x >= 0 and k_max >= 1".into()));
    }
    let k = k_max as usize;
    let v_c = model.v_c();
    let n_batches = n_draws.div_ceil(DRAW_BATCH);
    let partial: Vec<MomentSums> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = RngStream::new(seed, b);
            let count = DRAW_BATCH.min(n_draws - b * DRAW_BATCH);
            let mut s = MomentSums::new(k);
            for _ in 0..count {
                let d = sample_jump_parts(model, x, &mut rng);
                let y1 = d.jump();
                let c1 = v_c * d.tau - d.xi;
                let (mut y, mut c) = (1.0, 1.0);
                for i in 0..k {
                    y *= y1;
                    c *= c1;
                    s.y[i] += y;
                    s.yy[i] += y * y;
                    s.c[i] += c;
                    s.cc[i] += c * c;
                    s.yc[i] += y * c;
                }
            }
            s.n = count as f64;
            s
        })
        .collect();
    let mut tot = MomentSums::new(k);
    partial.iter().for_each(|p| tot.add(p));

    let n = tot.n;
    (0..k)
        .map(|i| {
            let order = i as u32 + 1;
            let my = tot.y[i] / n;
            let var_y = (tot.yy[i] / n - my * my).max(0.0) * n / (n - 1.0);
            let plain_se = (var_y / n).sqrt();
            let control_mean = model.mixed_moment(0, order).ok();
            let (mean, se) = match control_mean {
                Some(ec) => {
                    let mc = tot.c[i] / n;
                    let var_c = (tot.cc[i] / n - mc * mc).max(0.0);
                    let cov = tot.yc[i] / n - my * mc;
                    if var_c > 0.0 {
                        let beta = cov / var_c;
                        let resid = (var_y * (n - 1.0) / n - beta * beta * var_c).max(0.0);
                        (my - beta * (mc - ec), (resid / (n - 2.0)).sqrt())
                    } else {
                        (my, plain_se)
                    }
                }
                None => (my, plain_se),
            };
            MomentEstimate { order, mean, std_error: se, plain_mean: my, plain_std_error: plain_se }
        })
        .map(Ok)
        .collect()
}
