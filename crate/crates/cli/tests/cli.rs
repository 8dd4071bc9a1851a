use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_neural-td"));
    cmd.env_remove("NEURAL_TD_SEED");
    cmd
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_RUN: &str = r#"
algorithm = "projected_neural"
horizon = 200
record_every = 20
seed = 4

[env]
kind = "gridworld"
width = 3
height = 3
slip = 0.1
gamma = 0.9

[net]
depth = 2
width = 8
activation = "tanh"

[projection]
omega0 = 1.0

[step_size]
kind = "constant"
alpha = 0.05
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn verify_identities_passes_by_default() {
    let o = run(bin().arg("verify-identities").args(["--seeds", "20"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.lines().filter(|l| l.contains(" pass ")).count() >= 5, "{text}");
}

#[test]
fn verify_identities_fails_under_unattainable_tolerance() {
    let o = run(bin().arg("verify-identities").args(["--seeds", "3", "--tolerance", "1e-30"]));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("identity check failed: quadratic_identity"), "{}", stderr(&o));
}

#[test]
fn verify_identities_json_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(bin().arg("verify-identities").args(["--seeds", "5", "--json", "--out"]).arg(dir.path()));
    let b = run(bin().arg("verify-identities").args(["--seeds", "5", "--json"]));
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let value: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(value["suites"].as_array().unwrap().len(), 5);
    assert!(dir.path().join("report.json").exists() && dir.path().join("report.txt").exists());
}

#[test]
fn run_writes_one_row_per_twenty_steps() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin().arg("run").arg("--config").arg(config("run.toml")).arg("--out").arg(dir.path()));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next().unwrap(), "t,avg_bellman_error,n_error,d_error,dist_ratio,grad_diff,dist_to_star");
    assert_eq!(lines.count(), 100);
    assert!(dir.path().join("summary.json").exists());
    assert!(dir.path().join("checkpoint.json").exists());
}

#[test]
fn missing_gamma_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL_RUN.replace("gamma = 0.9\n", "");
    let cfg = write_config(dir.path(), "bad.toml", &text);
    let out = dir.path().join("out");
    let o = run(bin().arg("run").arg("--config").arg(&cfg).arg("--out").arg(&out));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gamma"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn unknown_flags_exit_with_two() {
    let o = run(bin().arg("run").arg("--bogus"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_precedence_is_flag_then_env_then_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", SMALL_RUN);
    let trace = |name: &str, flag: Option<&str>, env: Option<&str>| {
        let out = dir.path().join(name);
        let mut cmd = bin();
        cmd.arg("run").arg("--config").arg(&cfg).arg("--out").arg(&out);
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        if let Some(s) = env {
            cmd.env("NEURAL_TD_SEED", s);
        }
        let o = run(&mut cmd);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        std::fs::read_to_string(out.join("trace.csv")).unwrap()
    };
    let config_seed = trace("a", None, None);
    assert_eq!(trace("b", Some("4"), Some("9")), config_seed);
    assert_eq!(trace("c", None, Some("4")), config_seed);
    assert_ne!(trace("d", None, Some("9")), config_seed);
    assert_eq!(trace("e", Some("9"), None), trace("f", None, Some("9")));
}

#[test]
fn bad_seed_variable_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", SMALL_RUN);
    let o = run(bin()
        .arg("run")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .env("NEURAL_TD_SEED", "abc"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_fails_unless_allowed() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL_RUN
        .replace("algorithm = \"projected_neural\"", "algorithm = \"linear\"")
        .replace("[projection]\nomega0 = 1.0\n", "")
        .replace("alpha = 0.05", "alpha = 1e200");
    let cfg = write_config(dir.path(), "div.toml", &text);
    let o = run(bin().arg("run").arg("--config").arg(&cfg).arg("--out").arg(dir.path().join("a")));
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"), "{}", stderr(&o));
    let o = run(bin()
        .arg("run")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("b"))
        .arg("--allow-divergence"));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged at step"));
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn sweep_output_does_not_depend_on_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let body: String = SMALL_RUN
        .lines()
        .map(|l| {
            if let Some(section) = l.strip_prefix('[') {
                format!("[base.{section}")
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    let text = format!("seeds = 3\nwidths = [4, 8]\nradius_scalings = [\"constant\", \"inv_sqrt_width\"]\n\n[base]\n{body}");
    let cfg = write_config(dir.path(), "sweep.toml", &text);
    let go = |jobs: &str, name: &str| {
        let out = dir.path().join(name);
        let o = run(bin()
            .arg("sweep")
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .args(["--jobs", jobs]));
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        dir_contents(&out)
    };
    let one = go("1", "one");
    let eight = go("8", "eight");
    assert_eq!(one.len(), 4 * 3 + 1);
    assert_eq!(one, eight);
    let summary = String::from_utf8(one.iter().find(|(n, _)| n == "summary.csv").unwrap().1.clone()).unwrap();
    assert_eq!(summary.lines().count(), 5);
    assert_eq!(
        summary.lines().next().unwrap(),
        "cfg_cell,cfg_algorithm,cfg_env,cfg_depth,cfg_width,cfg_activation,cfg_horizon,cfg_record_every,\
         cfg_omega,cfg_radius_scaling,cfg_sampling,cfg_seeds,final_avg_bellman_error_mean,\
         final_avg_bellman_error_sd,time_avg_n_error_mean,time_avg_n_error_sd,final_n_error_mean,\
         final_dist_ratio_mean,final_grad_diff_mean,diverged_runs"
    );
}

#[test]
fn radius_compare_writes_paired_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", SMALL_RUN);
    let out = dir.path().join("out");
    let o = run(bin()
        .arg("radius-compare")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--widths", "4,8", "--seeds", "2"]));
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    let paired = std::fs::read_to_string(out.join("paired.csv")).unwrap();
    assert_eq!(paired.lines().count(), 5);
    assert_eq!(
        paired.lines().next().unwrap(),
        "cfg_width,seed,final_bellman_constant,final_bellman_scaled,final_dist_ratio_constant,\
         final_dist_ratio_scaled,min_grad_diff_constant"
    );
    assert!(out.join("checks.json").exists());
    assert!(out.join("w4_constant_seed000.csv").exists());
}

#[test]
fn theorem31_reports_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL_RUN}\n[target]\nrho = 0.5\n");
    let cfg = write_config(dir.path(), "run.toml", &text);
    let out = dir.path().join("out");
    let o = run(bin()
        .arg("theorem31")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--widths", "4,8", "--horizons", "100,400", "--seeds", "3"]));
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    let summary = std::fs::read_to_string(out.join("theorem31_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 9);
    assert_eq!(
        summary.lines().next().unwrap(),
        "cfg_width,cfg_horizon,cfg_sampling,cfg_seeds,time_avg_n_error_mean,time_avg_n_error_sd,\
         plateau_n_error_mean,plateau_n_error_sd"
    );
    assert!(stdout(&o).contains("markov within"));
}

#[test]
fn short_unprojected_run_fails_its_check() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("appendix_b.toml"))
        .unwrap()
        .replace("horizon = 100000", "horizon = 200")
        .replace("record_every = 1000", "record_every = 20");
    let cfg = write_config(dir.path(), "b.toml", &text);
    let out = dir.path().join("out");
    let o = run(bin()
        .arg("appendix-b")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--seeds", "4"]));
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("check failed"));
    let seeds = std::fs::read_to_string(out.join("seeds.csv")).unwrap();
    assert_eq!(seeds.lines().count(), 5);
    assert_eq!(
        seeds.lines().next().unwrap(),
        "seed,lambda,sigma_min,initial_dist_sq,final_dist_sq,max_dist_sq,diverged"
    );
    let curve = std::fs::read_to_string(out.join("mean_dist_sq.csv")).unwrap();
    assert_eq!(curve.lines().next().unwrap(), "t,mean_dist_sq");
    assert_eq!(curve.lines().count(), 11);
}

#[test]
fn probe_regularity_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin()
        .arg("probe-regularity")
        .arg("--out")
        .arg(dir.path())
        .args(["--depth", "1", "--widths", "8,16,32", "--trials", "5"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = std::fs::read_to_string(dir.path().join("probe.csv")).unwrap();
    assert!(table.starts_with("width,lipschitz_est,smoothness_est,probes"));
    assert_eq!(table.lines().count(), 4);
    assert!(stdout(&o).contains("slope"));
}

#[test]
fn relu_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin()
        .arg("probe-regularity")
        .arg("--out")
        .arg(dir.path())
        .args(["--activation", "relu"]));
    assert_eq!(o.status.code(), Some(2));
}
