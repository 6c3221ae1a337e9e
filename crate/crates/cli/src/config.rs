use std::path::Path;

use levelrisk::lyapunov::EnvelopeSpec;
use levelrisk::{Caps, ClaimModel, Distribution, FlowMethod, PremiumRateSpec, RiskModel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub rate: PremiumRateSpec,
    pub claim_size: Distribution,
    pub inter_claim: Distribution,
    /// Flow integrator; the rate family picks one when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowMethod>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Initial reserves for curve, fit, validate-expexp, heavy and the
    /// drift grid of bounds. `simulate` uses the first entry.
    pub levels: Vec<f64>,
    pub n_paths: u64,
    pub max_steps: u64,
    /// Level at which a path counts as escaped; `max(100x, 10⁴)` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level_cap: Option<f64>,
    /// Draws per level in drift checks.
    pub n_draws: u64,
    /// Horizon `n` of the Γ-limit test.
    pub gamma_steps: u64,
    /// Levels at which `bounds` evaluates the envelope.
    pub bound_levels: Vec<f64>,
    /// Reachability constant of the lower envelope; calibrated by Monte
    /// Carlo when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub envelope: Option<EnvelopeSpec>,
    /// Calibration levels of the heavy-tail envelope; the first two
    /// `levels` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchors: Option<Vec<f64>>,
    /// Paths of the truncated chain in `heavy`.
    pub truncated_paths: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            levels: vec![5.0, 10.0, 20.0, 40.0],
            n_paths: 10_000,
            max_steps: 1_000_000,
            level_cap: None,
            n_draws: 1_000_000,
            gamma_steps: 10_000,
            bound_levels: vec![50.0, 100.0],
            delta: None,
            envelope: None,
            anchors: None,
            truncated_paths: 200,
        }
    }
}

impl RunConfig {
    pub fn caps_for(&self, x: f64) -> Caps {
        let default = Caps::default_for(x);
        Caps::new(self.max_steps, self.level_cap.unwrap_or(default.level_cap))
    }

    fn validate(&self) -> Result<(), String> {
        if self.levels.is_empty() {
            return Err("run.levels must not be empty".into());
        }
        if self.levels.iter().chain(&self.bound_levels).any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err("levels must be finite and >= 0".into());
        }
        if self.n_paths < 2 || self.max_steps < 1 || self.gamma_steps < 1 {
            return Err("need n_paths >= 2, max_steps >= 1 and gamma_steps >= 1".into());
        }
        if let Some(cap) = self.level_cap {
            if cap.is_nan() || cap <= 0.0 {
                return Err("run.level_cap must be positive".into());
            }
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        if text.trim().is_empty() {
            return Err("config file is empty".into());
        }
        let cfg: Self = serde_json::from_str(text).map_err(|e| format!("config: {e}"))?;
        cfg.run.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn build_model(&self) -> levelrisk::Result<RiskModel> {
        let m = &self.model;
        let claims = ClaimModel::new(m.claim_size.clone(), m.inter_claim.clone())?;
        let model = RiskModel::new(m.rate.clone(), claims)?;
        match m.flow {
            Some(method) => model.with_flow_method(method),
            None => Ok(model),
        }
    }

    /// Compact JSON of the resolved configuration.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
