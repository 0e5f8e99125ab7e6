use std::path::Path;
use std::process::{Command, Output};

const BOX: &str = "[[7,13],[0.01,3],[30.01,30.295],[0.02,0.12]]";

fn tvgp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvgp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tvgp(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path) {
    std::fs::write(
        dir.join("exp.toml"),
        r#"
name = "cli"
output_dir = "run"
[simulator]
kind = "env"
[design]
train_n = 10
train_seed = 1
diag_n = 3
diag_seed = 2
sweeps = 20
[optimizer]
starts = 2
seed = 0
start_box = [0.05, 10.0]
bounds = [0.001, 100.0]
max_iter = 60
[diagnostics]
sample = 200
seed = 3
"#,
    )
    .unwrap();
}

#[test]
fn stagewise_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_config(d);
    ok(d, &["design", "--n", "10", "--seed", "1", "--box", BOX, "--sweeps", "20", "--out", "train.csv"]);
    ok(d, &["design", "--n", "3", "--seed", "2", "--box", BOX, "--sweeps", "20", "--set", "diagnostic", "--out", "diag.csv"]);
    let train = std::fs::read_to_string(d.join("train.csv")).unwrap();
    let diag = std::fs::read_to_string(d.join("diag.csv")).unwrap();
    assert_eq!(train.lines().next().unwrap(), "set,run_id,x1,x2,x3,x4,xs1,xs2,xs3,xs4");
    let joined: String = train.lines().chain(diag.lines().skip(1)).map(|l| format!("{l}\n")).collect();
    std::fs::write(d.join("design.csv"), joined).unwrap();

    ok(d, &["simulate", "env", "--design", "design.csv", "--out", "sims.csv"]);
    let sims = std::fs::read_to_string(d.join("sims.csv")).unwrap();
    assert_eq!(sims.lines().next().unwrap(), "set,run_id,i1,i2,s,t,y,f");
    assert_eq!(sims.lines().count(), 1 + 13 * 1500);

    for em in ["ope", "ppe"] {
        let out = format!("{em}.json");
        ok(d, &["fit", "--emulator", em, "--config", "exp.toml", "--design", "design.csv", "--sims", "sims.csv", "--out", &out]);
    }
    ok(d, &["predict", "--fit", "ope.json", "--fit", "ppe.json", "--design", "design.csv", "--out", "pred.csv"]);
    let report = ok(d, &["diagnose", "--predictions", "pred.csv", "--sims", "sims.csv", "--sample", "100", "--out-dir", "diag"]);
    assert!(report.contains("ope: MASPE") && report.contains("ppe: MASPE"), "{report}");
    assert!(d.join("diag/report.json").is_file() && d.join("diag/points.csv").is_file());

    let table = ok(d, &["compare", "diag/report.json", "diag/report.json", "--csv"]);
    assert!(table.starts_with("emulator,metric,report,value"));
}

#[test]
fn run_writes_artifacts_and_dry_run_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_config(d);
    let plan = ok(d, &["run", "--config", "exp.toml", "--dry-run"]);
    let plan: serde_json::Value = serde_json::from_str(&plan).unwrap();
    assert_eq!(plan["train_n"], 10);
    assert!(!d.join("run").exists());

    let text = ok(d, &["run", "--config", "exp.toml", "--out-dir", "elsewhere"]);
    assert!(text.contains("fit_ope"));
    assert!(d.join("elsewhere/manifest.json").is_file());
    assert!(!d.join("run").exists());

    let table = ok(d, &["compare", "elsewhere/report.json", "elsewhere/report.json"]);
    assert!(table.contains("MASPE"));
}

#[test]
fn bad_input_fails_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = tvgp(d, &["run", "--config", "missing.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.toml"));

    let out = tvgp(d, &["design", "--n", "5", "--box", "[[1, 0]]", "--out", "x.csv"]);
    assert!(!out.status.success());
    assert!(!d.join("x.csv").exists());

    let out = tvgp(d, &["fit", "--emulator", "gp", "--config", "c", "--design", "d", "--sims", "s", "--out", "o"]);
    assert!(!out.status.success());
}
