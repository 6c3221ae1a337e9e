//! Benchmark fixtures shared by the criterion targets.

use levelrisk::{ClaimModel, Distribution, PremiumRateSpec, RiskModel};

/// Exponential claims and arrivals, `v(z) = 1 + 3/max(z, 1)`.
pub fn inverse_model() -> RiskModel {
    RiskModel::exp_exp_inverse(1.0, 1.0, 3.0).expect("valid model")
}

/// Exponential claims and arrivals, `v(z) = 1 + 2/max(z, 1)^{1/2}`.
pub fn power_model() -> RiskModel {
    RiskModel::new(
        PremiumRateSpec::critical_power(1.0, 2.0, 0.5, 1.0),
        ClaimModel::exp_exp(1.0, 1.0).expect("valid claims"),
    )
    .expect("valid model")
}

/// Pareto claims with tail `(1 + y)^{-3}` and `ρ = 3`.
pub fn heavy_model() -> RiskModel {
    let claims = ClaimModel::new(
        Distribution::ParetoType { beta: 1.0, scale: 1.0 },
        Distribution::Exponential { rate: 1.0 },
    )
    .expect("valid claims");
    RiskModel::new(PremiumRateSpec::critical_inverse(0.5, 2.0, 1.0), claims).expect("valid model")
}
