//! Regularly varying claims: Karamata integrals, the `x² P{ξ > x}` envelope,
//! the truncated chain and the big-jump lower bound.

use rayon::prelude::*;
use serde::Serialize;

use crate::chain::{run_path, sample_jump_parts, Caps, DRAW_BATCH};
use crate::error::{Error, Result};
use crate::model::{ClaimModel, Distribution, RateKind, RiskModel};
use crate::montecarlo::{estimate_ruin_streams, RuinEstimate};
use crate::quadrature;
use crate::rng::RngStream;

/// Proposals per step before the truncated chain gives up.
const MAX_PROPOSALS: u32 = 1000;
/// Paths per parallel work unit in the truncated chain.
const PATH_CHUNK: u64 = 256;
/// Stream offsets keeping the sub-experiments of one call disjoint.
const STREAM_BLOCK: u64 = 1 << 40;

/// `∫_x^∞ y P{ξ > y} dy`.
///
/// Closed form for Pareto-type tails `(1 + y/s)^{−(2+β)}`; adaptive
/// quadrature otherwise.
pub fn karamata_integral(claims: &ClaimModel, x: f64) -> Result<f64> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::InvalidParameter(format!("x must be finite and >= 0, got {x}")));
    }
    let xi = claims.xi();
    match *xi {
        Distribution::ParetoType { beta, scale } => {
            if !(beta > 0.0) {
                return Err(Error::InvalidParameter("karamata_integral needs beta > 0".into()));
            }
            let a = 2.0 + beta;
            let u0 = 1.0 + x / scale;
            Ok(scale * scale * (u0.powf(2.0 - a) / (a - 2.0) - u0.powf(1.0 - a) / (a - 1.0)))
        }
        _ => {
            if !xi.has_moment(2.0) {
                return Err(Error::InvalidParameter("karamata_integral needs a finite second moment".into()));
            }
            let f = |y: f64| y * xi.tail(y);
            let mut total = 0.0;
            let mut a = x;
            let mut width = x.max(1.0);
            loop {
                let piece = quadrature::adaptive(f, a, a + width, 1e-12, 0.0)?;
                total += piece;
                a += width;
                width *= 2.0;
                if piece <= 1e-15 * total || xi.tail(a) == 0.0 {
                    return Ok(total);
                }
            }
        }
    }
}

/// `x² P{ξ > x}`.
pub fn heavy_shape(claims: &ClaimModel, x: f64) -> f64 {
    x * x * claims.xi().tail(x)
}

/// Decay exponent of `ψ` in the light-tail picture: `ρ` for inverse rates,
/// infinite for power rates (stretched-exponential decay).
fn light_exponent(model: &RiskModel) -> Result<f64> {
    match model.rate().kind {
        RateKind::CriticalInverse { .. } => model.rho(),
        RateKind::CriticalPower { .. } => Ok(f64::INFINITY),
        _ => Err(Error::UnsupportedRate(model.rate().family_name())),
    }
}

/// Checks Pareto-type claims with `β < ρ` and returns `β`.
fn heavy_precondition(model: &RiskModel) -> Result<f64> {
    let Distribution::ParetoType { beta, .. } = *model.claims().xi() else {
        return Err(Error::Precondition("heavy regime needs Pareto-type claims".into()));
    };
    if beta >= light_exponent(model)? {
        return Err(Error::LightTail);
    }
    Ok(beta)
}

/// Anchors for the envelope constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeavyCalibration {
    pub anchors: Vec<RuinEstimate>,
}

/// Estimates `ψ` at the anchor levels on disjoint streams.
pub fn calibrate_heavy(
    model: &RiskModel,
    anchors: &[f64],
    n_paths: u64,
    caps: Caps,
    seed: u64,
) -> Result<HeavyCalibration> {
    heavy_precondition(model)?;
    if anchors.len() < 2 {
        return Err(Error::InvalidParameter("need two anchor levels".into()));
    }
    let anchors = anchors
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let first = i as u64 * n_paths;
            estimate_ruin_streams(model, x, first..first + n_paths, caps, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HeavyCalibration { anchors })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeavyEnvelope {
    pub x: f64,
    pub lower: f64,
    pub upper: f64,
    /// `x² P{ξ > x}`.
    pub shape: f64,
    pub c_lower: f64,
    pub c_upper: f64,
}

/// `(Ĉ₁ x² tail(x), Ĉ₂ x² tail(x))` with the constants taken from the
/// anchors' confidence limits.
pub fn heavy_envelope(model: &RiskModel, x: f64, calibration: &HeavyCalibration) -> Result<HeavyEnvelope> {
    heavy_precondition(model)?;
    let claims = model.claims();
    let mut c_lower = f64::INFINITY;
    let mut c_upper: f64 = 0.0;
    for a in &calibration.anchors {
        let s = heavy_shape(claims, a.x);
        c_lower = c_lower.min(((a.p_hat - a.half_width) / s).max(0.0));
        c_upper = c_upper.max((a.p_hat + a.half_width) / s);
    }
    if c_upper == 0.0 {
        return Err(Error::NoRuinObserved);
    }
    let shape = heavy_shape(claims, x);
    Ok(HeavyEnvelope { x, lower: c_lower * shape, upper: c_upper * shape, shape, c_lower, c_upper })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeftTailRow {
    pub x: f64,
    pub y: f64,
    /// `P̂{ξ(x) < −y}`.
    pub prob: f64,
    /// `P̂{ξ(x) < −y} / P{ξ > y}`.
    pub ratio: f64,
    pub std_error: f64,
}

/// `P{ξ(x) < −y} = E[P{ξ > y + W}]` with `W` the flow gain over `τ`.
///
/// Averaging the tail over `W` instead of counting events keeps the
/// relative error bounded for large `y`.
pub fn left_tail_check(model: &RiskModel, x: f64, ys: &[f64], n_draws: u64, seed: u64) -> Result<Vec<LeftTailRow>> {
    if n_draws < 2 {
        return Err(Error::InvalidParameter("need at least two draws".into()));
    }
    if ys.iter().any(|y| !(*y >= 0.0)) {
        return Err(Error::InvalidParameter("tail levels must be >= 0".into()));
    }
    let xi = model.claims().xi();
    let sums = batch_sums(model, x, ys.len(), n_draws, seed, |gain, out| {
        for (o, &y) in out.iter_mut().zip(ys) {
            let t = xi.tail(y + gain);
            o.0 += t;
            o.1 += t * t;
        }
    });
    let n = n_draws as f64;
    Ok(ys
        .iter()
        .zip(sums)
        .map(|(&y, (s, ss))| {
            let mean = s / n;
            let var = (ss / n - mean * mean).max(0.0);
            let tail = xi.tail(y);
            let se = (var / (n - 1.0)).sqrt();
            LeftTailRow { x, y, prob: mean, ratio: mean / tail, std_error: se / tail }
        })
        .collect())
}

/// Per-target `(Σ, Σ²)` of a statistic of the flow gain at level `x`.
fn batch_sums<F>(model: &RiskModel, x: f64, n_targets: usize, n_draws: u64, seed: u64, f: F) -> Vec<(f64, f64)>
where
    F: Fn(f64, &mut [(f64, f64)]) + Sync,
{
    let n_batches = n_draws.div_ceil(DRAW_BATCH);
    let parts: Vec<Vec<(f64, f64)>> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = RngStream::new(seed, b);
            let mut out = vec![(0.0, 0.0); n_targets];
            for _ in 0..DRAW_BATCH.min(n_draws - b * DRAW_BATCH) {
                let d = sample_jump_parts(model, x, &mut rng);
                f(d.gain, &mut out);
            }
            out
        })
        .collect();
    let mut total = vec![(0.0, 0.0); n_targets];
    for p in parts {
        for (t, v) in total.iter_mut().zip(p) {
            t.0 += v.0;
            t.1 += v.1;
        }
    }
    total
}

/// `1 − g(y) = P{ξ(y) < −y/2}` by the same tail averaging.
fn big_jump_prob(model: &RiskModel, y: f64, n_draws: u64, seed: u64) -> f64 {
    let xi = model.claims().xi();
    let (s, _) = batch_sums(model, y, 1, n_draws, seed, |gain, out| out[0].0 += xi.tail(0.5 * y + gain))[0];
    s / n_draws as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncatedChainStats {
    /// `(y, ĝ(y))` with `g(y) = P{ξ(y) ≥ −y/2}`.
    pub g_table: Vec<(f64, f64)>,
    /// `(y, Ĥ̃_x(0, y])`, expected visits of the truncated chain.
    pub renewal_mass: Vec<(f64, f64)>,
    /// Ruin frequency of the truncated chain. Jumps are at least `−R/2`, so
    /// the chain stays above `R_0/2^n > 0` and this is always zero.
    pub psi_tilde_hat: f64,
    pub n_paths: u64,
    /// Paths stopped by the step horizon rather than the level cap.
    pub censored_horizon: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncatedReport {
    pub x: f64,
    pub stats: TruncatedChainStats,
    pub psi_hat: RuinEstimate,
    /// `Σ_grid (1 − ĝ(y)) ΔĤ̃_x(y)`.
    pub big_jump_term: f64,
    /// `ψ̃̂ + big_jump_term + 3σ − ψ̂`; non-negative when the decomposition
    /// inequality is consistent with the data.
    pub slack: f64,
}

impl TruncatedReport {
    pub fn holds(&self) -> bool {
        self.slack >= 0.0
    }
}

/// Draws `ξ(y)` conditioned on `ξ(y) ≥ −y/2` by rejection.
pub fn sample_truncated_jump<R: rand::Rng + ?Sized>(model: &RiskModel, y: f64, rng: &mut R) -> Result<f64> {
    for _ in 0..MAX_PROPOSALS {
        let j = sample_jump_parts(model, y, rng).jump();
        if j >= -0.5 * y {
            return Ok(j);
        }
    }
    Err(Error::LowAcceptance(y))
}

/// Log-spaced grid from `min(1, x/2)` to the level cap, four points per
/// doubling.
fn level_grid(x: f64, cap: f64) -> Vec<f64> {
    let mut g = Vec::new();
    let mut y = (0.5 * x).min(1.0);
    while y < cap {
        g.push(y);
        y *= 2f64.powf(0.25);
    }
    g.push(cap);
    g
}

/// Simulates the truncated chain, tabulates `ĝ` and `Ĥ̃_x`, and checks the
/// decomposition `ψ(x) ≤ ψ̃(x) + Σ (1 − g(y)) H̃_x(dy)`.
///
/// Each bin of the occupation measure is charged `1 − ĝ` at its lower edge.
pub fn truncated_diagnostics(model: &RiskModel, x: f64, n_paths: u64, caps: Caps, seed: u64) -> Result<TruncatedReport> {
    heavy_precondition(model)?;
    if !(x >= 1.0 && x.is_finite()) {
        return Err(Error::InvalidParameter("truncated_diagnostics needs x >= 1".into()));
    }
    if n_paths < 2 || caps.max_steps < 1 {
        return Err(Error::InvalidParameter("need n_paths >= 2 and max_steps >= 1".into()));
    }
    let grid = level_grid(x, caps.level_cap);
    let n_bins = grid.len();
    let bin_of = |r: f64| grid.partition_point(|&g| g < r).min(n_bins - 1);

    let n_chunks = n_paths.div_ceil(PATH_CHUNK);
    let parts: Vec<Result<(Vec<u64>, u64)>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut counts = vec![0u64; n_bins];
            let mut horizon = 0u64;
            for id in c * PATH_CHUNK..((c + 1) * PATH_CHUNK).min(n_paths) {
                let mut rng = RngStream::new(seed, id);
                let mut r = x;
                let mut capped = false;
                for _ in 0..caps.max_steps {
                    if r > caps.level_cap {
                        capped = true;
                        break;
                    }
                    counts[bin_of(r)] += 1;
                    r += sample_truncated_jump(model, r, &mut rng)?;
                }
                if !capped && r <= caps.level_cap {
                    horizon += 1;
                }
            }
            Ok((counts, horizon))
        })
        .collect();
    let mut counts = vec![0u64; n_bins];
    let mut censored_horizon = 0;
    for p in parts {
        let (c, h) = p?;
        for (t, v) in counts.iter_mut().zip(c) {
            *t += v;
        }
        censored_horizon += h;
    }

    let n = n_paths as f64;
    let g_draws = 1 << 16;
    let mut g_table = Vec::with_capacity(n_bins);
    let mut renewal_mass = Vec::with_capacity(n_bins);
    let mut big_jump_term = 0.0;
    let mut cum = 0.0;
    for (i, &y) in grid.iter().enumerate() {
        let lower_edge = if i == 0 { 0.0 } else { grid[i - 1] };
        let q = big_jump_prob(model, lower_edge, g_draws, seed ^ (STREAM_BLOCK + i as u64));
        let mass = counts[i] as f64 / n;
        cum += mass;
        big_jump_term += q * mass;
        g_table.push((y, 1.0 - big_jump_prob(model, y, g_draws, seed ^ (2 * STREAM_BLOCK + i as u64))));
        renewal_mass.push((y, cum));
    }

    let psi_hat = estimate_ruin_streams(model, x, STREAM_BLOCK..STREAM_BLOCK + n_paths, caps, seed)?;
    let psi_tilde_hat = 0.0;
    let slack = psi_tilde_hat + big_jump_term + 3.0 * psi_hat.std_error() - psi_hat.p_hat;
    Ok(TruncatedReport {
        x,
        stats: TruncatedChainStats { g_table, renewal_mass, psi_tilde_hat, n_paths, censored_horizon },
        psi_hat,
        big_jump_term,
        slack,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LowerBoundProbe {
    pub x: f64,
    pub delta: f64,
    /// `N = ⌈δx²⌉`.
    pub n_steps: u64,
    /// `P̂_x{R_k ∈ [x/2, 2x] for all k ≤ N}`.
    pub confinement: f64,
    pub confinement_se: f64,
    /// `P̂{ξ(2x) < −2x}`.
    pub c_hat: f64,
    /// `confinement · N · ĉ`.
    pub lower_estimate: f64,
}

/// Lower bound from a single big jump while the chain is confined to
/// `[x/2, 2x]`: each of the first `N` steps ruins with probability at least
/// `inf_{y ∈ [x/2, 2x]} P{ξ(y) < −y}`, estimated at `y = 2x`.
pub fn lower_bound_probe(model: &RiskModel, x: f64, delta: f64, n_paths: u64, seed: u64) -> Result<LowerBoundProbe> {
    heavy_precondition(model)?;
    if !(x > 0.0 && delta > 0.0 && x.is_finite() && delta.is_finite()) || n_paths < 2 {
        return Err(Error::InvalidParameter("need x > 0, delta > 0 and n_paths >= 2".into()));
    }
    let n_steps = (delta * x * x).ceil().max(1.0) as u64;
    let (lo, hi) = (0.5 * x, 2.0 * x);
    let confined: Vec<bool> = (0..n_paths)
        .into_par_iter()
        .map(|id| {
            let mut rng = RngStream::new(seed, id);
            let mut inside = true;
            run_path(model, x, Caps::new(n_steps, f64::INFINITY), &mut rng, |r| {
                inside &= (lo..=hi).contains(&r);
            });
            inside
        })
        .collect();
    let k = confined.iter().filter(|c| **c).count() as f64;
    let n = n_paths as f64;
    let confinement = k / n;
    let confinement_se = (confinement * (1.0 - confinement) / n).sqrt();
    let xi = model.claims().xi();
    let (s, _) = batch_sums(model, hi, 1, 1 << 16, seed ^ STREAM_BLOCK, |gain, out| out[0].0 += xi.tail(hi + gain))[0];
    let c_hat = s / f64::from(1 << 16);
    Ok(LowerBoundProbe {
        x,
        delta,
        n_steps,
        confinement,
        confinement_se,
        c_hat,
        lower_estimate: confinement * n_steps as f64 * c_hat,
    })
}
