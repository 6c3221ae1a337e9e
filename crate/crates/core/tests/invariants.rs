use levelrisk::chain::jump_moment_estimates;
use levelrisk::heavy_tail::{lower_bound_probe, sample_truncated_jump, truncated_diagnostics};
use levelrisk::lyapunov::{bound_envelope, build_profile_inverse, calibrate_delta, drift_check};
use levelrisk::montecarlo::{estimate_ruin, estimate_ruin_streams, ruin_curve};
use levelrisk::rng::RngStream;
use levelrisk::{quadrature, Caps, ClaimModel, Distribution, PremiumRateSpec, RiskModel};

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn heavy_model() -> RiskModel {
    let claims =
        ClaimModel::new(Distribution::ParetoType { beta: 1.0, scale: 1.0 }, Distribution::Exponential { rate: 1.0 })
            .unwrap();
    RiskModel::new(PremiumRateSpec::critical_inverse(0.5, 2.0, 1.0), claims).unwrap()
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let m = RiskModel::exp_exp_inverse(1.0, 1.0, 3.0).unwrap();
    let run = || {
        let curve = ruin_curve(&m, &[2.0, 4.0], 3000, Some(Caps::new(100_000, 60.0)), 8).unwrap();
        let moments = jump_moment_estimates(&m, 30.0, 3, 200_000, 8).unwrap();
        let profile = build_profile_inverse(&m, None).unwrap();
        let drift = drift_check(&profile, &m, &[5.0, 10.0], 150_000, 8).unwrap();
        (curve, moments, drift)
    };
    let one = in_pool(1, run);
    let three = in_pool(3, run);
    assert_eq!(one, three);
}

#[test]
fn disjoint_stream_ranges_merge_to_the_full_run() {
    let m = RiskModel::exp_exp_inverse(1.0, 1.0, 3.0).unwrap();
    let caps = Caps::new(100_000, 50.0);
    let whole = estimate_ruin(&m, 3.0, 2000, caps, 4).unwrap();
    let a = estimate_ruin_streams(&m, 3.0, 0..700, caps, 4).unwrap();
    let b = estimate_ruin_streams(&m, 3.0, 700..2000, caps, 4).unwrap();
    let merged = a.merge(&b).unwrap();
    assert_eq!(merged.n_ruined, whole.n_ruined);
    assert_eq!(merged.n_paths, whole.n_paths);
}

#[test]
fn bound_envelope_brackets_monte_carlo() {
    let m = RiskModel::exp_exp_inverse(1.0, 1.0, 3.0).unwrap();
    let mut profile = build_profile_inverse(&m, None).unwrap();
    let drift = drift_check(&profile, &m, &[5.0, 10.0, 20.0, 40.0], 100_000, 1).unwrap();
    let x_hat = drift.x_hat.expect("drift signs hold on the grid");
    assert!(x_hat <= 40.0);
    profile.set_x_hat(Some(x_hat));
    let delta = calibrate_delta(&m, x_hat, 2000, Caps::new(1_000_000, 200.0), 2).unwrap().delta;
    for (x, n) in [(50.0, 2000u64), (100.0, 6000)] {
        let env = bound_envelope(&profile, x, delta).unwrap();
        let est = estimate_ruin(&m, x, n, Caps::new(1_000_000, 2.5 * x), 3).unwrap();
        assert!(est.n_ruined > 0, "no ruin at {x}");
        assert!(env.lower <= est.p_hat && est.p_hat <= env.upper, "{env:?} vs {est:?}");
    }
}

/// Conditional CDF of `ξ(x)` given `ξ(x) ≥ −x/2`, by quadrature over the
/// exponential inter-claim time.
fn conditional_cdf(m: &RiskModel, x: f64, j: f64) -> f64 {
    let xi = m.claims().xi();
    let flow = m.flow_solver();
    let below = |level: f64| {
        quadrature::adaptive(
            |t| (-t).exp() * xi.tail(flow.flow(x, t).unwrap() - x - level),
            0.0,
            60.0,
            1e-10,
            1e-13,
        )
        .unwrap()
    };
    let cut = below(-0.5 * x);
    (below(j) - cut) / (1.0 - cut)
}

#[test]
fn truncated_jumps_follow_the_conditional_law() {
    let m = heavy_model();
    let x = 3.0;
    let n = 100_000;
    let mut rng = RngStream::new(12, 0);
    let mut draws: Vec<f64> = (0..n).map(|_| sample_truncated_jump(&m, x, &mut rng).unwrap()).collect();
    assert!(draws.iter().all(|j| *j >= -0.5 * x));
    draws.sort_by(f64::total_cmp);
    // KS distance evaluated at 500 empirical quantiles, both one-sided limits.
    let mut d: f64 = 0.0;
    for k in 0..500 {
        let i = (k * n / 500).min(n - 1);
        let f = conditional_cdf(&m, x, draws[i]);
        d = d.max((f - (i + 1) as f64 / n as f64).abs()).max((f - i as f64 / n as f64).abs());
    }
    let critical = 1.36 / (n as f64).sqrt();
    assert!(d < critical, "KS distance {d} >= {critical}");
}

#[test]
fn decomposition_holds_across_seeds() {
    let m = heavy_model();
    let runs = 20;
    let mut holds = 0;
    for seed in 0..runs {
        let rep = truncated_diagnostics(&m, 20.0, 300, Caps::new(1_000_000, 80.0), seed).unwrap();
        assert!(rep.stats.psi_tilde_hat <= rep.psi_hat.p_hat + 3.0 * rep.psi_hat.std_error());
        holds += u32::from(rep.holds());
    }
    assert!(f64::from(holds) >= 0.95 * runs as f64, "{holds} of {runs}");
}

#[test]
fn big_jump_lower_estimate_is_below_monte_carlo() {
    let m = heavy_model();
    let x = 50.0;
    let probe = lower_bound_probe(&m, x, 0.01, 4000, 6).unwrap();
    assert!(probe.confinement >= 0.2);
    let est = estimate_ruin(&m, x, 3000, Caps::new(1_000_000, 4.0 * x), 7).unwrap();
    assert!(probe.lower_estimate <= est.p_hat + 3.0 * est.std_error(), "{probe:?} vs {est:?}");
}
