use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_seqmt");

const SMALL: &str = r#"
seed = 3
trials = 400
J = 4

[budget]
mode = "gfwer"
k1 = 1
k2 = 1
alpha = 0.05
beta = 0.05

[[streams]]
kind = "gaussian_mean"
mu = 0.5
repeat = 4

[[procedures]]
rule = "leap"
thresholds = { b = 3.0 }

[[procedures]]
rule = "intersection"
thresholds = "analytic"

[[procedures]]
rule = "mnp"
n = 30

[[truths]]
signals = [1, 2]

[[truths]]
signals = []
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn seqmt(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(cwd).output().unwrap()
}

#[test]
fn run_writes_json_and_csv_with_reproducibility_fields() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{}\n[output]\njson = \"out/r.json\"\ncsv = \"out/r.csv\"\n", SMALL);
    let cfg = write_config(dir.path(), &text);
    let out = seqmt(&["run", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/r.json")).unwrap()).unwrap();
    let hash = json["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    assert_eq!(json["seed"], 3);
    let procs = json["procedures"].as_array().unwrap();
    assert_eq!(procs.len(), 3);
    for p in procs {
        for c in p["cells"].as_array().unwrap() {
            assert_eq!(
                c["trials"].as_u64().unwrap(),
                c["stopped"].as_u64().unwrap() + c["aborted"].as_u64().unwrap()
            );
        }
    }
    assert_eq!(procs[2]["cells"][0]["ess"], 30.0);
    let csv = std::fs::read_to_string(dir.path().join("out/r.csv")).unwrap();
    assert!(csv.starts_with(&format!("# config_hash={hash}\n# seed=3\n")));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 3 * 2);
}

#[test]
fn run_is_reproducible_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = seqmt(&["run", cfg.to_str().unwrap(), "--workers", "1"], dir.path());
    let b = seqmt(&["run", cfg.to_str().unwrap(), "--workers", "3"], dir.path());
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("seed = 3", "seed = 3\ncolour = \"red\""));
    assert_eq!(
        seqmt(&["run", cfg.to_str().unwrap()], dir.path()).status.code(),
        Some(2)
    );
    let cfg = write_config(dir.path(), &SMALL.replace("J = 4", "J = 5"));
    assert_eq!(
        seqmt(&["run", cfg.to_str().unwrap()], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(seqmt(&["run", "missing.toml"], dir.path()).status.code(), Some(2));
    assert_eq!(seqmt(&["figure", "7.7"], dir.path()).status.code(), Some(2));
}

#[test]
fn abort_breach_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &SMALL.replace("trials = 400", "trials = 400\nhorizon_cap = 2"),
    );
    let out = seqmt(&["run", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(4));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["abort_breach"], true);
}

#[test]
fn calibration_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL
        .replace("trials = 400", "trials = 100\nhorizon_cap = 1")
        .replace("thresholds = { b = 3.0 }", "thresholds = \"calibrated\"");
    let cfg = write_config(dir.path(), &text);
    let out = seqmt(&["calibrate", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn calibrate_and_bounds_print_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &SMALL.replace("thresholds = { b = 3.0 }", "thresholds = \"calibrated\""),
    );
    let out = seqmt(&["calibrate", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let reports = json["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 3);
    assert!(reports[0]["report"]["thresholds"]["b"].as_f64().unwrap() > 0.0);
    assert!(reports[2]["report"]["sample_size"].as_u64().unwrap() >= 1);

    let out = seqmt(&["bounds", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // Homogeneous bank, I = 1/8, k1 = k2 = 1: L_A = |log α| / I.
    let l = json["truths"][0]["L_A"].as_f64().unwrap();
    assert!((l - 8.0 * 0.05f64.ln().abs()).abs() < 1e-9);
    assert!(json["config_hash"].is_string() && json["seed"] == 3);
}

#[test]
fn figure_writes_panel_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqmt(
        &["figure", "A.2", "--scale", "0.01", "--seed", "5", "--out", "figs"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let a = std::fs::read_to_string(dir.path().join("figs/fig-A_2-a.csv")).unwrap();
    let mut lines = a.lines();
    assert!(lines.next().unwrap().starts_with("# figure=A.2"));
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert!(lines.next().unwrap().starts_with("# seed=5"));
    assert_eq!(lines.next().unwrap(), "x,series,y,y_ci_halfwidth");
    assert_eq!(lines.count(), 3);
    assert!(dir.path().join("figs/fig-A_2.json").exists());
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            seqmt::harness::Experiment::from_path(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 3);
}
