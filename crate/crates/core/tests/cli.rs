use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn fishersim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fishersim")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn fisher_of_fair_coin() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("j.json");
    let o = fishersim(&["fisher", "--input", data("fair_coin.json").to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("J = 1\n"), "{}", stdout(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["fisher"], 1.0);
    assert_eq!(v["chain_total"], 1.0);
}

#[test]
fn identical_experiments_have_zero_distance() {
    let o = fishersim(&["deficiency", "distance", "--input", data("identical_experiments.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let json_end = text.rfind("}\n").unwrap() + 2;
    let v: serde_json::Value = serde_json::from_str(&text[..json_end]).unwrap();
    assert!(v["value"].as_f64().unwrap().abs() < 1e-12);
}

#[test]
fn counterexample_crosses_at_251() {
    let o = fishersim(&["channel", "counterexample", "--t", "0.5", "--n", "251"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("divergence = ")).unwrap();
    let d: f64 = line["divergence = ".len()..].parse().unwrap();
    assert!(d > 1e3, "{d}");
    let o = fishersim(&["channel", "counterexample", "--t", "0.5", "--n", "50"]);
    let line = stdout(&o).lines().find(|l| l.starts_with("divergence = ")).unwrap().to_string();
    let d: f64 = line["divergence = ".len()..].parse().unwrap();
    assert!((d - 200.0).abs() < 1e-9, "{d}");
}

#[test]
fn invalid_input_exits_1_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"k": 2, "probs": [0.5, 0.6], "weights": [0.1, -0.1]}"#).unwrap();
    let out = dir.path().join("out.json");
    let o = fishersim(&["fisher", "--input", bad.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    std::fs::write(&bad, "{ not json").unwrap();
    let o = fishersim(&["fisher", "--input", bad.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = fishersim(&["fisher", "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = fishersim(&["fisher", "--input", bad.to_str().unwrap(), "--seed", "0xZZ"]);
    assert_eq!(o.status.code(), Some(1));
    let left: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(left, vec![std::ffi::OsString::from("bad.json")]);
}

#[test]
fn numerical_failure_exits_2() {
    // Support 1 cannot reproduce a channel whose columns carry distinct tangents.
    let o = fishersim(&["channel", "g-max-search", "--input", data("channel.json").to_str().unwrap(), "--support", "1"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let o = fishersim(&["channel", "counterexample", "--t", "0.5", "--n", "2000"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn overhead_above_c_is_a_validation_error() {
    // Three outputs, so each letter pays a truncation overhead.
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("wide.json");
    let col = "[0.45, 0.1, 0.45]";
    let tcol = "[-0.1, 0.0, 0.1]";
    std::fs::write(&input, format!(r#"{{"in": 2, "out": 3, "cols": [{col}, {col}], "tcols": [{tcol}, {tcol}]}}"#)).unwrap();
    let o = fishersim(&["channel", "sim-plan", "--input", input.to_str().unwrap(), "--n", "64", "--eps", "0.05", "--c", "1e-6"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sweep_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("rate.csv");
    let summary = dir.path().join("rate.json");
    let o = fishersim(&[
        "sweep",
        "rate",
        "--family",
        "binary",
        "--input",
        data("binary.json").to_str().unwrap(),
        "--n-grid",
        "16,64,256,1024",
        "--output",
        csv.to_str().unwrap(),
        "--summary",
        summary.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("n,exact,certified,mc,ci_lo,ci_hi\n16,"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(v["within_certificate"], true);
    assert!(v["fit"]["slope"].as_f64().unwrap() < -0.45);
}

#[test]
fn seeds_accept_hex_and_decimal() {
    let run = |seed: &str| {
        stdout(&fishersim(&[
            "simulate",
            "binary",
            "--input",
            data("binary.json").to_str().unwrap(),
            "--n",
            "64",
            "--mode",
            "mc",
            "--samples",
            "2000",
            "--seed",
            seed,
        ]))
    };
    assert_eq!(run("0x5EED"), run("24301"));
    assert_ne!(run("0x5EED"), run("1"));
}
