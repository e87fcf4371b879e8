use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const EXPONENTIAL: &str = r#"id = "cli"

[market]
lambda = 0.3
sigma = 0.2
T = 1.0

[model]
kind = "exponential"
eta = 2.0

[numeric]
eps = 0.1
n_paths = 2000
n_steps = 100
seed = 11
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_losshedge"))
}

fn scenario(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn price_prints_frictionless_target() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), EXPONENTIAL);
    let out = dir.path().join("out");
    let o = run(&[
        "price",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let theta = stdout(&o)
        .lines()
        .find(|l| l.starts_with("theta"))
        .and_then(|l| l.split_whitespace().last())
        .unwrap()
        .parse::<f64>()
        .unwrap();
    assert!((theta - 0.75).abs() < 1e-12);
    let csv = std::fs::read_to_string(out.join("cli_price_11.csv")).unwrap();
    assert!(csv.starts_with("quantity,convention,eps,value\n"));
    assert!(csv.contains("prediction,section6,0.1,"));
}

#[test]
fn price_lists_both_conventions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), EXPONENTIAL);
    let o = run(&[
        "price",
        cfg.to_str().unwrap(),
        "--set",
        "numeric.h_constant_convention=both",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let h: Vec<f64> = stdout(&o)
        .lines()
        .filter(|l| l.starts_with("h "))
        .map(|l| l.split_whitespace().last().unwrap().parse().unwrap())
        .collect();
    assert_eq!(h.len(), 2);
    assert!((h[0] / h[1] - 2.0).abs() < 1e-12);
}

#[test]
fn power_price_at_maturity_has_zero_second_corrector() {
    let dir = tempfile::tempdir().unwrap();
    let text = EXPONENTIAL.replace(
        "kind = \"exponential\"\neta = 2.0",
        "kind = \"power\"\nbeta = 1.0\nkappa = 1.0",
    );
    let cfg = scenario(dir.path(), &text);
    let o = run(&[
        "price",
        cfg.to_str().unwrap(),
        "--set",
        "point.t0=1.0",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let u = stdout(&o)
        .lines()
        .find(|l| l.starts_with("u "))
        .unwrap()
        .to_string();
    assert_eq!(
        u.split_whitespace().last().unwrap().parse::<f64>().unwrap(),
        0.0
    );
}

#[test]
fn usage_and_config_errors_exit_with_two() {
    let o = run(&["bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));

    let dir = tempfile::tempdir().unwrap();
    let cut = &EXPONENTIAL[..EXPONENTIAL.find("sigma").unwrap()];
    let cfg = scenario(dir.path(), cut);
    let o = run(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sigma"), "{}", stderr(&o));

    let cfg = scenario(dir.path(), EXPONENTIAL);
    let o = run(&[
        "converge",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("eps_list"));

    let o = run(&[
        "simulate",
        cfg.to_str().unwrap(),
        "--set",
        "numeric.cushion=-1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cushion"));
}

#[test]
fn failed_flags_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), EXPONENTIAL);
    let o = run(&[
        "simulate",
        cfg.to_str().unwrap(),
        "--set",
        "numeric.cushion=0",
        "--set",
        "point.p0=-0.5",
        "--set",
        "point.x0=0",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    let text = stdout(&o);
    assert_eq!(o.status.code() == Some(0), !text.contains("FAIL"), "{text}");
}

fn report_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn simulate_is_deterministic_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), EXPONENTIAL);
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("out{threads}"));
        let o = run(&[
            "simulate",
            cfg.to_str().unwrap(),
            "--threads",
            threads,
            "--trace-paths",
            "2",
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
        outputs.push(report_bytes(&out));
    }
    assert_eq!(outputs[0].len(), 3);
    assert_eq!(outputs[0], outputs[1]);
    let (_, bytes) = outputs[0]
        .iter()
        .find(|(name, _)| name.ends_with(".json"))
        .unwrap();
    let json: serde_json::Value = serde_json::from_slice(bytes).unwrap();
    assert_eq!(json["config"]["scenario"]["n_paths"], 2000);
}
