use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "system.bs_antennas=4",
    "--set",
    "system.ris_horizontal=2",
    "--set",
    "system.ris_vertical=2",
    "--set",
    "sounding.amp_levels=2",
    "--set",
    "gbdt.rounds=20",
    "--set",
    "rft.select=16",
];

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_starris-gl"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("STARRIS_GL_OUT")
        .output()
        .expect("binary runs")
}

fn small(extra: &[&str]) -> Vec<String> {
    SMALL.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn run_small(out: &Path, extra: &[&str]) -> Output {
    let args = small(extra);
    run(out, &args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn trained(dir: &Path) {
    let o = run_small(dir, &["gen-data", "--n", "30"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run_small(dir, &["train"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn selftest_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["selftest"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains(" 0 failed"));
}

#[test]
fn flops_table_at_default_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["flops"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("gl ")));
    assert!(text.lines().any(|l| l.starts_with("bcd ")));
    assert!(text.contains("0.1181") && text.contains("7.1600"));
    assert!(text.contains("convention:"));
    let ratio: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("ratio gl/bcd "))
        .and_then(|r| r.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(ratio < 0.1, "{ratio}");
    let written = std::fs::read_to_string(dir.path().join("flops.txt")).unwrap();
    assert!(written.starts_with("# manifest="));
}

#[test]
fn power_sweep_has_fifteen_rows_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let model = dir.path().join("model.bin");
    let model = model.to_str().unwrap();
    let sweep = ["sweep", "power", "10..50", "--model", model, "--n-eval", "2"];
    let o = run_small(dir.path(), &sweep);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv_path = dir.path().join("sweep-power.csv");
    let first = std::fs::read(&csv_path).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 15);

    let id = text.lines().next().unwrap().strip_prefix("# manifest=").unwrap();
    let manifest = dir.path().join(format!("sweep-{id}.manifest.json"));
    let json = std::fs::read_to_string(manifest).unwrap();
    assert!(json.contains("\"finished_unix\": "));

    let o = run_small(dir.path(), &sweep);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&csv_path).unwrap(), first);
}

#[test]
fn eval_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let csv = dir.path().join("eval.csv");
    assert!(run_small(dir.path(), &["eval", "--n-eval", "3"]).status.success());
    let first = std::fs::read(&csv).unwrap();
    assert!(run_small(dir.path(), &["eval", "--n-eval", "3"]).status.success());
    assert_eq!(std::fs::read(&csv).unwrap(), first);
}

#[test]
fn refuses_model_from_other_shape() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let o = run_small(dir.path(), &["--set", "system.bs_antennas=2", "eval", "--n-eval", "2"]);
    assert_eq!(o.status.code(), Some(11));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("\"error\":\"hash-mismatch\""), "{err}");
}

#[test]
fn unknown_config_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--set", "system.bs_antenas=4", "flops"]);
    assert_eq!(o.status.code(), Some(10));

    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[gbdt]\nrounds = 5\nlearning_rate = 0.1\nbogus = 1\n").unwrap();
    let o = run(dir.path(), &["--config", cfg.to_str().unwrap(), "flops"]);
    assert_eq!(o.status.code(), Some(10));
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_starris-gl"))
        .arg("flops")
        .env("STARRIS_GL_OUT", dir.path())
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("flops.txt").exists());
}
