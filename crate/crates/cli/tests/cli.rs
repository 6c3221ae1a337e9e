use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_levelrisk");

const INVERSE: &str = r#"{
  "model": {
    "rate": {"kind": "critical_inverse", "v_c": 1.0, "theta": 3.0},
    "claim_size": {"family": "exponential", "rate": 1.0},
    "inter_claim": {"family": "exponential", "rate": 1.0}
  },
  "run": {"levels": [2.0, 4.0, 8.0], "n_paths": 2000, "level_cap": 150.0}
}"#;

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn levelrisk(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn classify_reports_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "inv.json", INVERSE);
    let o = levelrisk(&["classify", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "Transient (theta=3 > threshold=1, rho=2)");

    let recurrent = write_config(dir.path(), "rec.json", &INVERSE.replace("\"theta\": 3.0", "\"theta\": 0.5"));
    let o = levelrisk(&["classify", "--config", recurrent.to_str().unwrap()]);
    assert!(stdout(&o).starts_with("Recurrent (theta=0.5 < threshold=1"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write_config(dir.path(), "empty.json", "");
    assert_eq!(levelrisk(&["curve", "--config", empty.to_str().unwrap()]).status.code(), Some(2));
    let bad = write_config(dir.path(), "bad.json", "{\"model\": 3}");
    assert_eq!(levelrisk(&["curve", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    let cfg = write_config(dir.path(), "inv.json", INVERSE);
    let o = levelrisk(&["curve", "--config", cfg.to_str().unwrap(), "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    // exp/Pareto claims have no exponential closed form
    let heavy = INVERSE
        .replace("\"v_c\": 1.0", "\"v_c\": 0.5")
        .replace("{\"family\": \"exponential\", \"rate\": 1.0},\n    \"inter", "{\"family\": \"pareto\", \"beta\": 1.0, \"scale\": 1.0},\n    \"inter");
    let heavy = write_config(dir.path(), "heavy.json", &heavy);
    assert_eq!(levelrisk(&["validate-expexp", "--config", heavy.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_3() {
    // Starting far above a tiny cap: every path escapes, so no ruin is
    // observed and the fit has nothing to work with.
    let dir = tempfile::tempdir().unwrap();
    let text = INVERSE.replace("\"level_cap\": 150.0", "\"level_cap\": 1.0").replace("[2.0, 4.0, 8.0]", "[2.0, 4.0, 8.0, 16.0]");
    let cfg = write_config(dir.path(), "cap.json", &text);
    assert_eq!(levelrisk(&["fit", "--config", cfg.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn csv_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "inv.json", INVERSE);
    let one = dir.path().join("one.csv");
    let many = dir.path().join("many.csv");
    for (threads, out) in [("1", &one), ("4", &many)] {
        let o = levelrisk(&["curve", "--config", cfg.to_str().unwrap(), "--seed", "11", "--threads", threads, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(&one).unwrap();
    assert_eq!(a, std::fs::read(&many).unwrap());
    let text = String::from_utf8(a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# levelrisk v"));
    assert_eq!(lines[1], "# command: curve");
    assert_eq!(lines[2], "# seed: 11");
    assert!(lines[3].starts_with("# config: {\"model\""));
    assert!(!text.contains("threads"));
    assert_eq!(lines[4], "x,p_hat,half_width,n_paths,n_ruined,censored_cap,censored_horizon,p_hat_pessimistic");
    assert_eq!(lines.len(), 8);
}

#[test]
fn seed_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "inv.json", INVERSE);
    let a = stdout(&levelrisk(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "1"]));
    let b = stdout(&levelrisk(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "2"]));
    assert_ne!(a, b);
    assert_eq!(a.lines().filter(|l| !l.starts_with('#')).count(), 2);
}

#[test]
fn validate_expexp_z_scores() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "inv.json", INVERSE);
    let o = levelrisk(&["validate-expexp", "--config", cfg.to_str().unwrap(), "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut rows = text.lines().skip_while(|l| l.starts_with('#'));
    assert_eq!(rows.next(), Some("x,mc_ratio,closed_form_ratio,z_score"));
    let mut n = 0;
    for r in rows {
        let z: f64 = r.split(',').nth(3).unwrap().parse().unwrap();
        assert!(z.abs() <= 3.0, "{r}");
        n += 1;
    }
    assert_eq!(n, 3);
}

#[test]
fn profile_export_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "inv.json", &INVERSE.replace("[2.0, 4.0, 8.0]", "[0.5, 4.0]"));
    let o = levelrisk(&["profile-export", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "x,q,Q,U,U_plus,U_minus");
    let cells: Vec<f64> = rows[2].split(',').map(|c| c.parse().unwrap()).collect();
    assert_eq!(cells[1], 0.75);
    assert!((cells[3] - (-3.0f64).exp() / 32.0).abs() < 1e-15);
    assert!(cells[4] < cells[3] && cells[3] < cells[5]);
}

#[test]
fn power_rate_profile_and_gamma_test() {
    let dir = tempfile::tempdir().unwrap();
    let power = INVERSE.replace(
        "\"kind\": \"critical_inverse\", \"v_c\": 1.0, \"theta\": 3.0",
        "\"kind\": \"critical_power\", \"v_c\": 1.0, \"theta\": 2.0, \"alpha\": 0.5",
    );
    let cfg = write_config(dir.path(), "pow.json", &power);
    let o = levelrisk(&["profile-export", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = levelrisk(&["classify", "--config", cfg.to_str().unwrap()]);
    assert!(stdout(&o).starts_with("Transient"));
    // the Γ limit needs the inverse family
    assert_eq!(levelrisk(&["gamma-test", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));

    let inv = write_config(dir.path(), "g.json", &INVERSE.replace("\"n_paths\": 2000", "\"n_paths\": 300, \"gamma_steps\": 400"));
    let o = levelrisk(&["gamma-test", "--config", inv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("\nmean,"));
}

#[test]
fn heavy_and_bounds_tables() {
    let dir = tempfile::tempdir().unwrap();
    let heavy = r#"{
      "model": {
        "rate": {"kind": "critical_inverse", "v_c": 0.5, "theta": 2.0},
        "claim_size": {"family": "pareto", "beta": 1.0, "scale": 1.0},
        "inter_claim": {"family": "exponential", "rate": 1.0}
      },
      "run": {"levels": [5.0, 10.0], "n_paths": 1000, "level_cap": 60.0, "truncated_paths": 20}
    }"#;
    let cfg = write_config(dir.path(), "heavy.json", heavy);
    let o = levelrisk(&["heavy", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("x,psi_hat,half_width,psi_tilde_hat,envelope_lo,envelope_hi,karamata,x2_tail\n"));

    let inv = write_config(
        dir.path(),
        "b.json",
        &INVERSE.replace("\"n_paths\": 2000", "\"n_paths\": 500, \"n_draws\": 20000, \"delta\": 0.05").replace("[2.0, 4.0, 8.0]", "[5.0, 10.0, 20.0]"),
    );
    let o = levelrisk(&["bounds", "--config", inv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("# x_hat: "));
    assert_eq!(text.lines().filter(|l| l.starts_with("bound,")).count(), 2);
}
