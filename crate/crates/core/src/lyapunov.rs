//! Lyapunov test functions, bound envelopes and the transience classifier.
//!
//! A profile is built from a decreasing drift target `q`, its integral
//! `Q(x) = ∫_0^x q` and `U(x) = ∫_x^∞ e^{−Q}`. Perturbing `q` by a small
//! integrable envelope `p` gives `q_± = q ± p` and the matching `U_±`, with
//! `U_+ ≤ U ≤ U_−`. Along the chain `U_−` is a supermartingale and `U_+` a
//! submartingale above some level `x̂`, which turns hitting probabilities of
//! low levels into two-sided bounds on `ψ`.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{sample_jump_parts, Caps, DRAW_BATCH};
use crate::error::{Error, Result};
use crate::model::{binomial, RateKind, RiskModel};
use crate::montecarlo::{estimate_ruin_streams, RuinEstimate};
use crate::quadrature;
use crate::rng::RngStream;

/// Linear knots on `[0, 1]`.
const UNIT_KNOTS: usize = 32;
/// Geometric knot ratio above 1.
const KNOT_RATIO: f64 = 1.01;
/// Upper end of the knot table.
const X_MAX: f64 = 1e9;
/// Stream-id stride between grid levels in batch estimators.
const LEVEL_STRIDE: u64 = 1 << 32;

/// `p(x) = min(q(x), κ x^{−η})` for `x ≥ 1` and `p(1)` below.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeSpec {
    pub kappa: f64,
    pub eta: f64,
}

impl EnvelopeSpec {
    pub const DEFAULT_KAPPA: f64 = 6.0;

    /// Default for the inverse family: `κ = 6`, `η = 3/2`.
    pub fn inverse_default() -> Self {
        Self { kappa: Self::DEFAULT_KAPPA, eta: 1.5 }
    }

    /// Default for the power family: `η = min(3/2, (1 + αγ)/2)`.
    pub fn power_default(alpha: f64, gamma: u32) -> Self {
        Self { kappa: Self::DEFAULT_KAPPA, eta: 1.5f64.min((1.0 + alpha * f64::from(gamma)) / 2.0) }
    }

    fn validate(&self) -> Result<()> {
        if self.kappa > 0.0 && self.eta > 1.0 && self.kappa.is_finite() && self.eta.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter("envelope needs kappa > 0 and eta > 1".into()))
        }
    }
}

/// The unperturbed drift target `q`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftTarget {
    /// `q(x) = (ρ+1) min(1, 1/x)`.
    Inverse { rho: f64 },
    /// `q(x) = Σ_j r_j (b_shift + x)^{−αj}`.
    Power { alpha: f64, r: Vec<f64>, b_shift: f64 },
}

impl DriftTarget {
    pub fn q(&self, x: f64) -> f64 {
        let x = x.max(0.0);
        match self {
            DriftTarget::Inverse { rho } => (rho + 1.0) * if x <= 1.0 { 1.0 } else { 1.0 / x },
            DriftTarget::Power { alpha, r, b_shift } => {
                let u = (b_shift + x).powf(-alpha);
                let mut uj = 1.0;
                r.iter().fold(0.0, |acc, rj| {
                    uj *= u;
                    acc + rj * uj
                })
            }
        }
    }

    /// `Q(x) = ∫_0^x q`, with `Q(x) = 0` for `x ≤ 0`.
    pub fn big_q(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self {
            DriftTarget::Inverse { rho } => {
                if x <= 1.0 {
                    (rho + 1.0) * x
                } else {
                    (rho + 1.0) * (1.0 + x.ln())
                }
            }
            DriftTarget::Power { alpha, r, b_shift } => r
                .iter()
                .enumerate()
                .map(|(i, rj)| {
                    let e = 1.0 - alpha * (i + 1) as f64;
                    if e.abs() < 1e-12 {
                        rj * (x / b_shift).ln_1p()
                    } else {
                        rj * ((b_shift + x).powf(e) - b_shift.powf(e)) / e
                    }
                })
                .sum(),
        }
    }
}

/// Which of the three test functions to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `q − p`, giving the largest `U`.
    Minus,
    Center,
    /// `q + p`.
    Plus,
}

impl Branch {
    fn sign(self) -> f64 {
        match self {
            Branch::Minus => -1.0,
            Branch::Center => 0.0,
            Branch::Plus => 1.0,
        }
    }

    fn index(self) -> usize {
        match self {
            Branch::Minus => 0,
            Branch::Center => 1,
            Branch::Plus => 2,
        }
    }
}

/// Piece of `[1, ∞)` on which `p` follows one of its two branches.
#[derive(Debug, Clone, PartialEq)]
struct PSegment {
    start: f64,
    /// `p = q` on this piece; otherwise `p = κ x^{−η}`.
    follows_q: bool,
    p_start: f64,
}

/// Series data of the power-rate regime.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerCase {
    pub alpha: f64,
    pub gamma: u32,
    pub r: Vec<f64>,
    pub b_shift: f64,
    pub log_corrected: bool,
    /// Coefficients of `u^1 … u^{γ−1}` after solving; all should vanish.
    pub residuals: Vec<f64>,
}

/// Test functions `q, Q, U` and their perturbations, tabulated for fast
/// evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovProfile {
    target: DriftTarget,
    envelope: EnvelopeSpec,
    rho: Option<f64>,
    c_p: f64,
    x_hat: Option<f64>,
    power_case: Option<PowerCase>,
    p_unit: f64,
    segments: Vec<PSegment>,
    knots: Vec<f64>,
    /// `U_s` at each knot, indexed by [`Branch::index`].
    u_tab: [Vec<f64>; 3],
}

impl LyapunovProfile {
    fn build(target: DriftTarget, envelope: EnvelopeSpec, rho: Option<f64>, power_case: Option<PowerCase>) -> Result<Self> {
        envelope.validate()?;
        let EnvelopeSpec { kappa, eta } = envelope;
        let h = |t: f64| target.q(t) - kappa * t.powf(-eta);

        let mut knots: Vec<f64> = (0..=UNIT_KNOTS).map(|i| i as f64 / UNIT_KNOTS as f64).collect();
        let mut t = 1.0;
        while t < X_MAX {
            t *= KNOT_RATIO;
            knots.push(t.min(X_MAX));
        }

        // Crossings of q and κx^{−η} above 1, located by bisection.
        let mut crossings = Vec::new();
        for w in knots.windows(2).filter(|w| w[0] >= 1.0) {
            let (mut a, mut b) = (w[0], w[1]);
            let (ha, hb) = (h(a), h(b));
            if (ha <= 0.0) != (hb <= 0.0) {
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if (h(m) <= 0.0) == (ha <= 0.0) {
                        a = m
                    } else {
                        b = m
                    }
                }
                crossings.push(0.5 * (a + b));
            }
        }
        let p_unit = target.q(1.0).min(kappa);
        let mut segments = Vec::new();
        let mut p_acc = p_unit;
        let mut start = 1.0;
        let mut follows_q = h(1.0) <= 0.0;
        for &c in &crossings {
            segments.push(PSegment { start, follows_q, p_start: p_acc });
            p_acc += segment_integral(&target, envelope, follows_q, start, c);
            start = c;
            follows_q = !follows_q;
        }
        segments.push(PSegment { start, follows_q, p_start: p_acc });
        if follows_q {
            return Err(Error::InvalidParameter("the envelope does not fall below q: its integral diverges".into()));
        }
        let c_p = p_acc + kappa * start.powf(1.0 - eta) / (eta - 1.0);

        knots.extend(crossings.iter().copied());
        knots.sort_by(f64::total_cmp);
        knots.dedup();

        let mut profile = Self {
            target,
            envelope,
            rho,
            c_p,
            x_hat: None,
            power_case,
            p_unit,
            segments,
            knots,
            u_tab: [Vec::new(), Vec::new(), Vec::new()],
        };
        for branch in [Branch::Minus, Branch::Center, Branch::Plus] {
            let n = profile.knots.len();
            let mut tab = vec![0.0; n];
            tab[n - 1] = profile.far_tail(branch, profile.knots[n - 1]);
            for i in (0..n - 1).rev() {
                let (a, b) = (profile.knots[i], profile.knots[i + 1]);
                tab[i] = tab[i + 1] + quadrature::gl8().integrate(a, b, |y| (-profile.big_q_branch(branch, y)).exp());
            }
            profile.u_tab[branch.index()] = tab;
        }
        Ok(profile)
    }

    pub fn target(&self) -> &DriftTarget {
        &self.target
    }

    pub fn envelope(&self) -> EnvelopeSpec {
        self.envelope
    }

    pub fn rho(&self) -> Option<f64> {
        self.rho
    }

    /// `C_p = ∫_0^∞ p`.
    pub fn c_p(&self) -> f64 {
        self.c_p
    }

    pub fn x_hat(&self) -> Option<f64> {
        self.x_hat
    }

    pub fn set_x_hat(&mut self, x_hat: Option<f64>) {
        self.x_hat = x_hat;
    }

    pub fn power_case(&self) -> Option<&PowerCase> {
        self.power_case.as_ref()
    }

    pub fn q(&self, x: f64) -> f64 {
        self.target.q(x)
    }

    pub fn big_q(&self, x: f64) -> f64 {
        self.target.big_q(x)
    }

    /// Envelope `p(x)`.
    pub fn p(&self, x: f64) -> f64 {
        if x <= 1.0 {
            return self.p_unit;
        }
        let EnvelopeSpec { kappa, eta } = self.envelope;
        self.target.q(x).min(kappa * x.powf(-eta))
    }

    /// `P(x) = ∫_0^x p`.
    pub fn big_p(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x <= 1.0 {
            return self.p_unit * x;
        }
        let i = self.segments.partition_point(|s| s.start <= x) - 1;
        let s = &self.segments[i];
        s.p_start + segment_integral(&self.target, self.envelope, s.follows_q, s.start, x)
    }

    pub fn q_branch(&self, branch: Branch, x: f64) -> f64 {
        self.q(x) + branch.sign() * self.p(x)
    }

    pub fn big_q_branch(&self, branch: Branch, x: f64) -> f64 {
        self.big_q(x) + branch.sign() * self.big_p(x)
    }

    /// `U_s(x) = ∫_x^∞ e^{−Q_s}`, constant for `x ≤ 0`.
    pub fn u(&self, branch: Branch, x: f64) -> f64 {
        let x = x.max(0.0);
        let tab = &self.u_tab[branch.index()];
        let n = self.knots.len();
        if x >= self.knots[n - 1] {
            return self.far_tail(branch, x);
        }
        let i = self.knots.partition_point(|&k| k <= x);
        let right = self.knots[i];
        tab[i] + quadrature::gl8().integrate(x, right, |y| (-self.big_q_branch(branch, y)).exp())
    }

    /// `U_s'(x) = −e^{−Q_s(x)}`.
    pub fn u_prime(&self, branch: Branch, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        -(-self.big_q_branch(branch, x)).exp()
    }

    /// `U_s''(x) = q_s(x) e^{−Q_s(x)}`.
    pub fn u_second(&self, branch: Branch, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        self.q_branch(branch, x) * (-self.big_q_branch(branch, x)).exp()
    }

    /// Tail beyond the table, `e^{−Q_s(X)} X / (X q_s(X) − 1)`; exact for
    /// the inverse target when `p` is neglected.
    fn far_tail(&self, branch: Branch, x: f64) -> f64 {
        let xq = x * self.q_branch(branch, x);
        (-self.big_q_branch(branch, x)).exp() * x / (xq - 1.0).max(1e-300)
    }
}

fn segment_integral(target: &DriftTarget, env: EnvelopeSpec, follows_q: bool, a: f64, b: f64) -> f64 {
    if follows_q {
        target.big_q(b) - target.big_q(a)
    } else {
        env.kappa * (a.powf(1.0 - env.eta) - b.powf(1.0 - env.eta)) / (env.eta - 1.0)
    }
}

/// Profile for `v(z) = v_c + θ/max(z, z_min)` with `q(x) = (ρ+1)min(1, 1/x)`.
pub fn build_profile_inverse(model: &RiskModel, envelope: Option<EnvelopeSpec>) -> Result<LyapunovProfile> {
    let rho = model.rho()?;
    if !(rho > 0.0) {
        return Err(Error::NotTransient(rho));
    }
    LyapunovProfile::build(
        DriftTarget::Inverse { rho },
        envelope.unwrap_or_else(EnvelopeSpec::inverse_default),
        Some(rho),
        None,
    )
}

/// Profile for `v(z) = v_c + θ/max(z, z_min)^α` with the series target.
pub fn build_profile_power(model: &RiskModel, envelope: Option<EnvelopeSpec>) -> Result<LyapunovProfile> {
    let RateKind::CriticalPower { theta, alpha, .. } = model.rate().kind else {
        return Err(Error::UnsupportedRate(model.rate().family_name()));
    };
    let rc = r_coefficients(model, theta, alpha)?;
    let env = envelope.unwrap_or_else(|| EnvelopeSpec::power_default(alpha, rc.gamma));
    let target = DriftTarget::Power { alpha, r: rc.r.clone(), b_shift: rc.b_shift };
    LyapunovProfile::build(
        target,
        env,
        None,
        Some(PowerCase {
            alpha,
            gamma: rc.gamma,
            r: rc.r,
            b_shift: rc.b_shift,
            log_corrected: rc.log_corrected,
            residuals: rc.residuals,
        }),
    )
}

/// Builds the profile matching the model's rate family.
pub fn build_profile(model: &RiskModel, envelope: Option<EnvelopeSpec>) -> Result<LyapunovProfile> {
    match model.rate().kind {
        RateKind::CriticalInverse { .. } => build_profile_inverse(model, envelope),
        RateKind::CriticalPower { .. } => build_profile_power(model, envelope),
        _ => Err(Error::UnsupportedRate(model.rate().family_name())),
    }
}

// ---------------------------------------------------------------------------
// Drift check
// ---------------------------------------------------------------------------

/// Estimated drift of `U_−` and `U_+` at one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftLevel {
    pub x: f64,
    pub drift_minus: f64,
    pub se_minus: f64,
    pub drift_plus: f64,
    pub se_plus: f64,
    /// `drift / (p(x) e^{−Q_−(x)})`.
    pub ratio_minus: f64,
    /// `drift / (p(x) e^{−Q_+(x)})`.
    pub ratio_plus: f64,
}

impl DriftLevel {
    /// `U_−` drift at most −3σ and `U_+` drift at least +3σ.
    pub fn signs_hold(&self) -> bool {
        self.drift_minus + 3.0 * self.se_minus <= 0.0 && self.drift_plus - 3.0 * self.se_plus >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub levels: Vec<DriftLevel>,
    /// Smallest grid level from which every level satisfies both signs.
    pub x_hat: Option<f64>,
}

#[derive(Debug, Clone, Default)]
struct CvSums {
    n: f64,
    y: f64,
    yy: f64,
    z: f64,
    zz: f64,
    yz: f64,
}

impl CvSums {
    fn push(&mut self, y: f64, z: f64) {
        self.n += 1.0;
        self.y += y;
        self.yy += y * y;
        self.z += z;
        self.zz += z * z;
        self.yz += y * z;
    }

    fn add(&mut self, o: &Self) {
        self.n += o.n;
        self.y += o.y;
        self.yy += o.yy;
        self.z += o.z;
        self.zz += o.zz;
        self.yz += o.yz;
    }

    /// Regression-adjusted mean for a zero-mean control, and its standard
    /// error.
    fn estimate(&self) -> (f64, f64) {
        let n = self.n;
        let my = self.y / n;
        let mz = self.z / n;
        let vy = (self.yy / n - my * my).max(0.0);
        let vz = (self.zz / n - mz * mz).max(0.0);
        let cov = self.yz / n - my * mz;
        if vz > 0.0 {
            let beta = cov / vz;
            let resid = (vy - beta * beta * vz).max(0.0);
            (my - beta * mz, (resid / (n - 2.0)).sqrt())
        } else {
            (my, (vy / (n - 1.0)).sqrt())
        }
    }
}

/// Monte Carlo drift `E[U_±(x + ξ(x))] − U_±(x)` on a grid of levels.
///
/// Each estimate uses the control `U'(x)C + U''(x)(C² − b)/2` with
/// `C = v_c τ − ξ`, which has mean zero exactly and tracks the second-order
/// Taylor expansion of the increment.
pub fn drift_check(
    profile: &LyapunovProfile,
    model: &RiskModel,
    xs: &[f64],
    n_draws: u64,
    seed: u64,
) -> Result<DriftReport> {
    if n_draws < 10_000 {
        return Err(Error::Precondition("drift_check needs at least 10^4 draws per level".into()));
    }
    let b = model.mixed_moment(0, 2)?;
    let v_c = model.v_c();
    let n_batches = n_draws.div_ceil(DRAW_BATCH);
    let mut levels = Vec::with_capacity(xs.len());
    for (li, &x) in xs.iter().enumerate() {
        if !(x >= 0.0) {
            return Err(Error::InvalidParameter(format!("drift level must be >= 0, got {x}")));
        }
        let base = [Branch::Minus, Branch::Plus].map(|br| {
            (profile.u(br, x), profile.u_prime(br, x), 0.5 * profile.u_second(br, x))
        });
        let partial: Vec<[CvSums; 2]> = (0..n_batches)
            .into_par_iter()
            .map(|bi| {
                let mut rng = RngStream::new(seed, li as u64 * LEVEL_STRIDE + bi);
                let count = DRAW_BATCH.min(n_draws - bi * DRAW_BATCH);
                let mut sums = [CvSums::default(), CvSums::default()];
                for _ in 0..count {
                    let d = sample_jump_parts(model, x, &mut rng);
                    let y_next = x + d.jump();
                    let c = v_c * d.tau - d.xi;
                    for (k, br) in [Branch::Minus, Branch::Plus].into_iter().enumerate() {
                        let (u0, u1, u2) = base[k];
                        let y = profile.u(br, y_next) - u0;
                        let z = u1 * c + u2 * (c * c - b);
                        sums[k].push(y, z);
                    }
                }
                sums
            })
            .collect();
        let mut tot = [CvSums::default(), CvSums::default()];
        for p in &partial {
            tot[0].add(&p[0]);
            tot[1].add(&p[1]);
        }
        let (dm, sm) = tot[0].estimate();
        let (dp, sp) = tot[1].estimate();
        let px = profile.p(x);
        levels.push(DriftLevel {
            x,
            drift_minus: dm,
            se_minus: sm,
            drift_plus: dp,
            se_plus: sp,
            ratio_minus: dm / (px * (-profile.big_q_branch(Branch::Minus, x)).exp()),
            ratio_plus: dp / (px * (-profile.big_q_branch(Branch::Plus, x)).exp()),
        });
    }
    let mut order: Vec<usize> = (0..levels.len()).collect();
    order.sort_by(|&i, &j| levels[i].x.total_cmp(&levels[j].x));
    let mut x_hat = None;
    for &i in order.iter().rev() {
        if levels[i].signs_hold() {
            x_hat = Some(levels[i].x);
        } else {
            break;
        }
    }
    if x_hat.is_none() {
        log::warn!("drift_check: no grid level satisfies both drift signs");
    }
    Ok(DriftReport { levels, x_hat })
}

// ---------------------------------------------------------------------------
// Bound envelope
// ---------------------------------------------------------------------------

/// Two-sided bound on `ψ(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundEnvelope {
    pub x: f64,
    pub x_hat: f64,
    /// `δ · U_+(x)/U_+(0)`.
    pub lower: f64,
    /// `U_−(x)/U_−(x̂)`.
    pub upper: f64,
    pub delta: f64,
    /// `U_+(x)/U_+(0)`, the lower bound without `δ`.
    pub lower_shape: f64,
}

pub fn bound_envelope(profile: &LyapunovProfile, x: f64, delta: f64) -> Result<BoundEnvelope> {
    let x_hat = profile
        .x_hat
        .ok_or_else(|| Error::Precondition("x_hat is not set: run drift_check first".into()))?;
    if !(x > x_hat) {
        return Err(Error::Precondition(format!("bound_envelope needs x > x_hat = {x_hat}, got {x}")));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidParameter("delta must lie in [0, 1]".into()));
    }
    let upper = profile.u(Branch::Minus, x) / profile.u(Branch::Minus, x_hat);
    let lower_shape = profile.u(Branch::Plus, x) / profile.u(Branch::Plus, 0.0);
    Ok(BoundEnvelope { x, x_hat, lower: delta * lower_shape, upper, delta, lower_shape })
}

/// Monte Carlo `δ`: the smallest ruin frequency over starts in `(0, x̂]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaCalibration {
    pub delta: f64,
    pub starts: Vec<RuinEstimate>,
}

pub fn calibrate_delta(
    model: &RiskModel,
    x_hat: f64,
    n_paths: u64,
    caps: Caps,
    seed: u64,
) -> Result<DeltaCalibration> {
    if !(x_hat > 0.0) {
        return Err(Error::InvalidParameter("x_hat must be positive".into()));
    }
    let starts: Vec<RuinEstimate> = [0.25, 0.5, 0.75, 1.0]
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let first = i as u64 * n_paths;
            estimate_ruin_streams(model, f * x_hat, first..first + n_paths, caps, seed)
        })
        .collect::<Result<_>>()?;
    let delta = starts.iter().map(|e| e.p_hat).fold(f64::INFINITY, f64::min);
    if delta == 0.0 {
        return Err(Error::NoRuinObserved);
    }
    Ok(DeltaCalibration { delta, starts })
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Transient,
    Recurrent,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Classification {
    pub verdict: Verdict,
    pub family: &'static str,
    pub theta: Option<f64>,
    /// `b / (2Eτ)`.
    pub threshold: f64,
    pub rho: Option<f64>,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.verdict)?;
        match (self.theta, self.rho) {
            (Some(theta), Some(rho)) => {
                let rel = match self.verdict {
                    Verdict::Transient => ">",
                    Verdict::Recurrent => "<",
                    Verdict::Inconclusive => "=",
                };
                write!(f, " (theta={theta} {rel} threshold={}, rho={rho})", self.threshold)
            }
            (Some(theta), None) => write!(
                f,
                " (theta={theta}, {} rate decays slower than 1/z, threshold={})",
                self.family, self.threshold
            ),
            _ => write!(f, " ({} rate, threshold={})", self.family, self.threshold),
        }
    }
}

/// Transience test by comparing `θ` with `b/(2Eτ)`.
///
/// Inverse rates are transient above the threshold and recurrent below it;
/// values within a few ulps of it are inconclusive. Power rates exceed
/// `v_c + c/z` eventually for every `c`, so they are transient. Other
/// families are inconclusive.
pub fn classify(model: &RiskModel) -> Result<Classification> {
    let dc = model.derived_constants()?;
    let family = model.rate().family_name();
    let (verdict, theta) = match model.rate().kind {
        RateKind::CriticalInverse { theta, .. } => {
            let gap = theta - dc.threshold;
            let verdict = if gap.abs() <= 4.0 * f64::EPSILON * theta.abs().max(dc.threshold) {
                Verdict::Inconclusive
            } else if gap > 0.0 {
                Verdict::Transient
            } else {
                Verdict::Recurrent
            };
            (verdict, Some(theta))
        }
        RateKind::CriticalPower { theta, .. } => (Verdict::Transient, Some(theta)),
        _ => (Verdict::Inconclusive, None),
    };
    Ok(Classification { verdict, family, theta, threshold: dc.threshold, rho: dc.rho })
}

// ---------------------------------------------------------------------------
// Power-rate series
// ---------------------------------------------------------------------------

/// `γ = min{k ≥ 1 : αk > 1}`.
pub fn gamma_index(alpha: f64) -> Result<u32> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter("alpha must lie in (0, 1)".into()));
    }
    let mut k = 1u32;
    while alpha * f64::from(k) <= 1.0 + 1e-12 {
        k += 1;
    }
    Ok(k)
}

/// Table `a[k][j] = C(k,j) θ^j E[τ^j (v_c τ − ξ)^{k−j}]` for `0 ≤ j ≤ k ≤ γ`.
pub fn a_coefficients(model: &RiskModel, theta: f64, gamma: u32) -> Result<Vec<Vec<f64>>> {
    for (which, d) in [("xi", model.claims().xi()), ("tau", model.claims().tau())] {
        if d.moment(gamma + 1).is_none() {
            return Err(Error::MissingMoment { which, order: gamma + 1 });
        }
    }
    (0..=gamma)
        .map(|k| (0..=k).map(|j| Ok(binomial(k, j) * theta.powi(j as i32) * model.mixed_moment(j, k - j)?)).collect())
        .collect()
}

/// Truncated product of two polynomials in `u`.
fn poly_mul(a: &[f64], b: &[f64], deg: usize) -> Vec<f64> {
    let mut out = vec![0.0; deg + 1];
    for (i, ai) in a.iter().enumerate().take(deg + 1) {
        for (j, bj) in b.iter().enumerate().take(deg + 1 - i) {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// Coefficients of `u^0 … u^{γ−1}` in
/// `−m_1 + Σ_{j=2}^{γ} (−1)^j m_j q^{j−1} / j!` with `m_k = Σ_j a_{k,j} u^j`
/// and `q = Σ_i r_i u^i`.
pub fn q_moment_series(a: &[Vec<f64>], r: &[f64], gamma: u32) -> Vec<f64> {
    let deg = gamma as usize - 1;
    let mut q = vec![0.0; deg + 1];
    for (i, ri) in r.iter().enumerate().take(deg) {
        q[i + 1] = *ri;
    }
    let mut out = vec![0.0; deg + 1];
    for (l, c) in a[1].iter().enumerate().take(deg + 1) {
        out[l] -= c;
    }
    let mut q_pow = vec![1.0];
    let mut fact = 1.0;
    for (j, aj) in a.iter().enumerate().take(gamma as usize + 1).skip(2) {
        q_pow = poly_mul(&q_pow, &q, deg);
        fact *= j as f64;
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        for (o, t) in out.iter_mut().zip(poly_mul(aj, &q_pow, deg)) {
            *o += sign * t / fact;
        }
    }
    out
}

/// Series solution of the power-rate regime.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RCoefficients {
    pub gamma: u32,
    /// `r_1 … r_{γ−1}`.
    pub r: Vec<f64>,
    pub b_shift: f64,
    pub log_corrected: bool,
    pub residuals: Vec<f64>,
}

/// Solves for `r_1 … r_{γ−1}` so that the coefficients of `u^1 … u^{γ−1}`
/// vanish. The unknown `r_ℓ` enters the `u^ℓ` coefficient only through
/// `a_{2,0} r_ℓ / 2`, so the system is triangular.
pub fn r_coefficients(model: &RiskModel, theta: f64, alpha: f64) -> Result<RCoefficients> {
    let gamma = gamma_index(alpha)?;
    let a = a_coefficients(model, theta, gamma)?;
    let a20 = a[2][0];
    if !(a20 > 0.0) {
        return Err(Error::Precondition("a_{2,0} = b must be positive".into()));
    }
    let deg = gamma as usize - 1;
    let mut r = vec![0.0; deg];
    for l in 1..=deg {
        r[l - 1] = 0.0;
        let c = q_moment_series(&a, &r, gamma)[l];
        r[l - 1] = -2.0 * c / a20;
    }
    let residuals = q_moment_series(&a, &r, gamma)[1..].to_vec();
    let b_shift = 2.0 * smallest_monotone_shift(alpha, &r)?;
    let log_corrected = (alpha - 1.0 / f64::from(gamma - 1)).abs() < 1e-12;
    Ok(RCoefficients { gamma, r, b_shift, log_corrected, residuals })
}

/// Smallest integer `b ≥ 1` with `q(x) = Σ r_j (b+x)^{−αj}` non-increasing
/// on a verification grid of `[0, 10⁶]`.
fn smallest_monotone_shift(alpha: f64, r: &[f64]) -> Result<f64> {
    let mut grid = vec![0.0];
    let mut x = 1e-3;
    while x <= 1e6 {
        grid.push(x);
        x *= 1.05;
    }
    let decreasing = |b: f64| {
        grid.iter().all(|&x| {
            let u = (b + x).powf(-alpha);
            // −q'(x)·(b+x)/α = Σ j r_j u^j
            let mut uj = 1.0;
            let s: f64 = r
                .iter()
                .enumerate()
                .map(|(i, rj)| {
                    uj *= u;
                    (i + 1) as f64 * rj * uj
                })
                .sum();
            s >= 0.0
        })
    };
    let mut b = 1.0;
    while b <= 1e9 {
        if decreasing(b) {
            return Ok(b);
        }
        b += 1.0;
        if b > 1e4 {
            b *= 2.0;
        }
    }
    Err(Error::Numerical("no shift makes q decreasing".into()))
}

/// Shape of the power-regime bounds.
///
/// With `α = 1/(γ−1)` the last exponent vanishes and its term becomes the
/// power `x^{−r_{γ−1}}`: `x^α x^{−r_{γ−1}} exp{−Σ_{j<γ−1} r_j x^{1−αj}/(1−αj)}`.
/// Otherwise it is `x^α exp{−Σ_{j≤γ−1} r_j x^{1−αj}/(1−αj)}`.
pub fn power_case_shape(profile: &LyapunovProfile, x: f64) -> Result<f64> {
    let pc = profile
        .power_case
        .as_ref()
        .ok_or_else(|| Error::Precondition("profile has no power-case data".into()))?;
    Ok(power_shape(pc.alpha, &pc.r, pc.log_corrected, x))
}

/// See [`power_case_shape`].
pub fn power_shape(alpha: f64, r: &[f64], log_corrected: bool, x: f64) -> f64 {
    let n = r.len();
    let (stretch_terms, prefactor) = if log_corrected && n > 0 {
        (n - 1, x.powf(alpha - r[n - 1]))
    } else {
        (n, x.powf(alpha))
    };
    let exponent: f64 = r[..stretch_terms]
        .iter()
        .enumerate()
        .map(|(i, rj)| {
            let e = 1.0 - alpha * (i + 1) as f64;
            rj * x.powf(e) / e
        })
        .sum();
    prefactor * (-exponent).exp()
}
