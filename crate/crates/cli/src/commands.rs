use levelrisk::closed_form::{psi_ratio, ExpExpParams};
use levelrisk::heavy_tail::{calibrate_heavy, heavy_envelope, heavy_shape, karamata_integral, truncated_diagnostics};
use levelrisk::lyapunov::{
    bound_envelope, build_profile, calibrate_delta, classify, drift_check, Branch,
};
use levelrisk::montecarlo::{decay_exponent_fit, estimate_ruin_streams, gamma_limit_test};
use levelrisk::{Caps, RiskModel, RuinEstimate};

use crate::config::ExperimentConfig;
use crate::Command;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
}

impl From<levelrisk::Error> for CliError {
    fn from(e: levelrisk::Error) -> Self {
        if e.is_config_error() {
            CliError::Config(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

pub enum Output {
    Text(String),
    Table(Table),
}

pub struct Table {
    meta: Vec<(String, String)>,
    columns: &'static [&'static str],
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(columns: &'static [&'static str]) -> Self {
        Self { meta: Vec::new(), columns, rows: Vec::new() }
    }

    fn meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(cells);
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            s.push_str(&format!("# {k}: {v}\n"));
        }
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

const BLANK: String = String::new();

/// Stream blocks keeping the sub-experiments of one command apart.
const BLOCK: u64 = 1 << 40;

pub fn dispatch(cmd: Command, cfg: &ExperimentConfig, model: &RiskModel, seed: u64) -> Result<Output, CliError> {
    let out = match cmd {
        Command::Classify => return Ok(Output::Text(classify(model)?.to_string())),
        Command::Simulate => ruin_table(&curve(cfg, model, &cfg.run.levels[..1], seed)?),
        Command::Curve => ruin_table(&curve(cfg, model, &cfg.run.levels, seed)?),
        Command::Fit => fit(cfg, model, seed)?,
        Command::Bounds => bounds(cfg, model, seed)?,
        Command::GammaTest => gamma(cfg, model, seed)?,
        Command::Heavy => heavy(cfg, model, seed)?,
        Command::ValidateExpexp => validate(cfg, model, seed)?,
        Command::ProfileExport => profile_export(cfg, model)?,
    };
    Ok(Output::Table(out))
}

/// Level `i` uses streams `i·n_paths..(i+1)·n_paths`.
fn curve(cfg: &ExperimentConfig, model: &RiskModel, xs: &[f64], seed: u64) -> Result<Vec<RuinEstimate>, CliError> {
    let n = cfg.run.n_paths;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let first = i as u64 * n;
            Ok(estimate_ruin_streams(model, x, first..first + n, cfg.run.caps_for(x), seed)?)
        })
        .collect()
}

fn ruin_table(curve: &[RuinEstimate]) -> Table {
    let mut t = Table::new(&[
        "x",
        "p_hat",
        "half_width",
        "n_paths",
        "n_ruined",
        "censored_cap",
        "censored_horizon",
        "p_hat_pessimistic",
    ]);
    for e in curve {
        t.row(vec![
            num(e.x),
            num(e.p_hat),
            num(e.half_width),
            e.n_paths.to_string(),
            e.n_ruined.to_string(),
            e.censored_cap.to_string(),
            e.censored_horizon.to_string(),
            num(e.p_hat_pessimistic),
        ]);
    }
    t
}

fn fit(cfg: &ExperimentConfig, model: &RiskModel, seed: u64) -> Result<Table, CliError> {
    let c = curve(cfg, model, &cfg.run.levels, seed)?;
    let f = decay_exponent_fit(&c)?;
    let mut t = Table::new(&["rho_hat", "stderr", "n_points", "rho"]);
    let rho = model.derived_constants()?.rho.map(num).unwrap_or(BLANK);
    t.row(vec![num(f.rho_hat), num(f.stderr), f.n_points.to_string(), rho]);
    Ok(t)
}

fn bounds(cfg: &ExperimentConfig, model: &RiskModel, seed: u64) -> Result<Table, CliError> {
    let run = &cfg.run;
    let mut profile = build_profile(model, run.envelope)?;
    let drift = drift_check(&profile, model, &run.levels, run.n_draws, seed)?;
    let x_hat = drift
        .x_hat
        .ok_or_else(|| CliError::Numerical("no drift level satisfies both signs; raise n_draws or the grid".into()))?;
    profile.set_x_hat(Some(x_hat));
    let delta = match run.delta {
        Some(d) => d,
        None => calibrate_delta(model, x_hat, run.n_paths, run.caps_for(x_hat), seed.wrapping_add(1))?.delta,
    };
    let mut t = Table::new(&[
        "row",
        "x",
        "drift_minus",
        "se_minus",
        "drift_plus",
        "se_plus",
        "lower",
        "upper",
    ]);
    t.meta("x_hat", num(x_hat));
    t.meta("delta", num(delta));
    t.meta("c_p", num(profile.c_p()));
    for l in &drift.levels {
        t.row(vec![
            "drift".into(),
            num(l.x),
            num(l.drift_minus),
            num(l.se_minus),
            num(l.drift_plus),
            num(l.se_plus),
            BLANK,
            BLANK,
        ]);
    }
    for &x in &run.bound_levels {
        if x <= x_hat {
            log::warn!("bounds: skipping level {x} at or below x_hat = {x_hat}");
            continue;
        }
        let b = bound_envelope(&profile, x, delta)?;
        t.row(vec!["bound".into(), num(x), BLANK, BLANK, BLANK, BLANK, num(b.lower), num(b.upper)]);
    }
    Ok(t)
}

fn gamma(cfg: &ExperimentConfig, model: &RiskModel, seed: u64) -> Result<Table, CliError> {
    let r = gamma_limit_test(model, cfg.run.gamma_steps, cfg.run.n_paths, seed)?;
    let mut t = Table::new(&["statistic", "empirical", "reference"]);
    t.meta("n_steps", r.n_steps);
    t.meta("n_survivors", r.n_survivors);
    t.meta("n_attempted", r.n_attempted);
    t.row(vec!["mean".into(), num(r.mean), num(r.reference_mean)]);
    t.row(vec!["variance".into(), num(r.variance), num(r.reference_variance)]);
    for (p, emp, reference) in &r.quantiles {
        t.row(vec![format!("q{p}"), num(*emp), num(*reference)]);
    }
    Ok(t)
}

fn heavy(cfg: &ExperimentConfig, model: &RiskModel, seed: u64) -> Result<Table, CliError> {
    let run = &cfg.run;
    let anchors = run.anchors.clone().unwrap_or_else(|| run.levels.iter().take(2).copied().collect());
    let top = anchors.iter().copied().fold(0.0, f64::max);
    let cal = calibrate_heavy(model, &anchors, run.n_paths, run.caps_for(top), seed)?;
    let mut t = Table::new(&[
        "x",
        "psi_hat",
        "half_width",
        "psi_tilde_hat",
        "envelope_lo",
        "envelope_hi",
        "karamata",
        "x2_tail",
    ]);
    for (i, &x) in run.levels.iter().enumerate() {
        let first = BLOCK + i as u64 * run.n_paths;
        let psi = estimate_ruin_streams(model, x, first..first + run.n_paths, run.caps_for(x), seed)?;
        // The truncated chain never ruins; a short cap keeps the occupation
        // tables cheap.
        let trunc_caps = Caps::new(run.max_steps, 4.0 * x.max(1.0));
        let trunc = truncated_diagnostics(model, x.max(1.0), run.truncated_paths, trunc_caps, seed.wrapping_add(i as u64 + 1))?;
        let env = heavy_envelope(model, x, &cal)?;
        t.row(vec![
            num(x),
            num(psi.p_hat),
            num(psi.half_width),
            num(trunc.stats.psi_tilde_hat),
            num(env.lower),
            num(env.upper),
            num(karamata_integral(model.claims(), x)?),
            num(heavy_shape(model.claims(), x)),
        ]);
    }
    Ok(t)
}

fn validate(cfg: &ExperimentConfig, model: &RiskModel, seed: u64) -> Result<Table, CliError> {
    let params = ExpExpParams::from_model(model)?;
    let c = curve(cfg, model, &cfg.run.levels, seed)?;
    let reference = &c[0];
    if reference.n_ruined == 0 {
        return Err(levelrisk::Error::NoRuinObserved.into());
    }
    let mut t = Table::new(&["x", "mc_ratio", "closed_form_ratio", "z_score"]);
    t.meta("reference_level", num(reference.x));
    for e in &c {
        let (ratio, se) = ratio_with_error(e, reference);
        let exact = psi_ratio(&params, e.x, reference.x)?;
        let z = if se > 0.0 { (ratio - exact) / se } else { 0.0 };
        t.row(vec![num(e.x), num(ratio), num(exact), num(z)]);
    }
    Ok(t)
}

/// `ψ̂(x)/ψ̂(x₀)` and its delta-method standard error for independent
/// estimates; zero error when both are the same estimate.
pub fn ratio_with_error(e: &RuinEstimate, reference: &RuinEstimate) -> (f64, f64) {
    let ratio = e.p_hat / reference.p_hat;
    if std::ptr::eq(e, reference) || e == reference {
        return (ratio, 0.0);
    }
    let rel = |r: &RuinEstimate| if r.p_hat > 0.0 { r.std_error() / r.p_hat } else { 0.0 };
    let se = if e.p_hat > 0.0 {
        ratio * (rel(e).powi(2) + rel(reference).powi(2)).sqrt()
    } else {
        e.std_error().max(1.0 / e.n_paths as f64) / reference.p_hat
    };
    (ratio, se)
}

fn profile_export(cfg: &ExperimentConfig, model: &RiskModel) -> Result<Table, CliError> {
    let profile = build_profile(model, cfg.run.envelope)?;
    let mut t = Table::new(&["x", "q", "Q", "U", "U_plus", "U_minus"]);
    t.meta("c_p", num(profile.c_p()));
    for &x in &cfg.run.levels {
        t.row(vec![
            num(x),
            num(profile.q(x)),
            num(profile.big_q(x)),
            num(profile.u(Branch::Center, x)),
            num(profile.u(Branch::Plus, x)),
            num(profile.u(Branch::Minus, x)),
        ]);
    }
    Ok(t)
}
