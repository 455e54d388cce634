//! Runs every acceptance experiment and prints one PASS/FAIL line per
//! criterion. Exits non-zero when any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use fishersim::cli::{run_criterion, DEFAULT_SEED};

/// First `n` at which `(1/n)|ΔJ|` exceeds 10³ for `t = ½`, recorded on the
/// first run of the log-space evaluation.
const CROSSING_N: u64 = 251;

struct Check {
    criterion: u32,
    limit: Duration,
}

const CHECKS: [Check; 10] = [
    Check { criterion: 1, limit: Duration::from_secs(10) },
    Check { criterion: 2, limit: Duration::from_secs(10) },
    Check { criterion: 3, limit: Duration::from_secs(1) },
    Check { criterion: 4, limit: Duration::from_secs(30) },
    Check { criterion: 5, limit: Duration::from_secs(20) },
    Check { criterion: 6, limit: Duration::from_secs(5) },
    Check { criterion: 7, limit: Duration::from_secs(60) },
    Check { criterion: 8, limit: Duration::from_secs(60) },
    Check { criterion: 9, limit: Duration::from_secs(1) },
    Check { criterion: 10, limit: Duration::from_secs(30) },
];

fn summary(n: u32, r: &serde_json::Value) -> String {
    let g = |k: &str| r[k].to_string();
    match n {
        1 => format!("pairs {} max excess {}", g("pairs"), g("max_excess")),
        2 => format!(
            "additivity {} reduction {} round trip {}",
            g("max_additivity_error_per_n"),
            g("max_reduction_error"),
            g("max_round_trip_l1")
        ),
        3 => r["rows"]
            .as_array()
            .map(|rows| rows.iter().map(|x| format!("J(σ²={}) = {}", x["variance"], x["fisher"])).collect::<Vec<_>>().join(", "))
            .unwrap_or_default(),
        4 => format!("max tv/bound {}", g("max_ratio_to_bound")),
        5 => format!(
            "identity {} bernoulli {} variance gap {}",
            g("max_identity_residual"),
            g("bernoulli_uniform_sup_deviation"),
            g("variance_inequality_max_gap")
        ),
        6 => format!("max error {}", g("max_error")),
        7 => format!(
            "binary slope {} finite slope {}",
            r["binary"]["state"]["fit"]["slope"], r["finite"]["state"]["fit"]["slope"]
        ),
        8 => format!("grid {} order {}", g("g_min_matches_grid"), g("g_max_above_g_min")),
        9 => format!("crossing n {} l1 {}", g("crossing_n"), g("l1_at_crossing")),
        10 => format!("garbled {} grid gap {}", g("max_garbled_distance"), g("max_grid_gap")),
        _ => String::new(),
    }
}

fn run_binary(args: &[&str], out: &Path) -> Option<Vec<u8>> {
    let status = Command::new(env!("CARGO_BIN_EXE_fishersim"))
        .args(args)
        .arg("--output")
        .arg(out)
        .stdout(std::process::Stdio::null())
        .status()
        .ok()?;
    if !status.success() {
        return None;
    }
    std::fs::read(out).ok()
}

/// Each CLI experiment twice with the same seed, and once more on one and
/// on four threads; all artifacts must be byte-identical.
fn determinism() -> (bool, String) {
    let dir = tempfile::tempdir().expect("temp dir");
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let binary = data.join("binary.json");
    let binary = binary.to_str().unwrap();
    let channel = data.join("channel.json");
    let channel = channel.to_str().unwrap();
    let criteria: Vec<String> = (1..=10).map(|c| c.to_string()).collect();
    let mut runs: Vec<Vec<&str>> = criteria.iter().map(|c| vec!["experiment", "--criterion", c.as_str()]).collect();
    runs.push(vec!["simulate", "binary", "--input", binary, "--n", "256", "--mode", "both", "--samples", "20000"]);
    runs.push(vec![
        "sweep", "rate", "--family", "binary", "--input", binary, "--n-grid", "16,64,256,1024", "--mode", "both",
        "--samples", "20000",
    ]);
    runs.push(vec!["channel", "sim-plan", "--input", channel, "--n", "256"]);
    runs.push(vec!["channel", "g-max-search", "--input", channel]);
    runs.push(vec!["channel", "witness"]);
    let mut failures = Vec::new();
    for (i, args) in runs.iter().enumerate() {
        let out = |tag: &str| dir.path().join(format!("{i}-{tag}"));
        let a = run_binary(args, &out("a"));
        let b = run_binary(args, &out("b"));
        let mut t1 = args.clone();
        t1.extend(["--threads", "1"]);
        let mut t4 = args.clone();
        t4.extend(["--threads", "4"]);
        let c = run_binary(&t1, &out("t1"));
        let d = run_binary(&t4, &out("t4"));
        let same = a.is_some() && a == b && a == c && a == d;
        if !same {
            failures.push(args.join(" "));
        }
    }
    let detail = if failures.is_empty() {
        format!("{} invocations byte-identical across reruns and thread counts", runs.len())
    } else {
        format!("differs: {}", failures.join("; "))
    };
    (failures.is_empty(), detail)
}

fn main() {
    let mut all = true;
    for check in &CHECKS {
        let start = Instant::now();
        let result = run_criterion(check.criterion, DEFAULT_SEED);
        let elapsed = start.elapsed();
        let (mut passed, mut detail) = match &result {
            Ok((record, passed)) => (*passed, summary(check.criterion, record)),
            Err(e) => (false, format!("error: {e}")),
        };
        if let (9, Ok((record, _))) = (check.criterion, &result) {
            if record["crossing_n"].as_u64() != Some(CROSSING_N) {
                passed = false;
                detail.push_str(&format!(" (baseline {CROSSING_N})"));
            }
        }
        if elapsed > check.limit {
            passed = false;
            detail.push_str(&format!(" over the {:?} limit", check.limit));
        }
        all &= passed;
        println!(
            "criterion {}: {} {} ({:.2} s)",
            check.criterion,
            if passed { "PASS" } else { "FAIL" },
            detail,
            elapsed.as_secs_f64()
        );
    }
    let (passed, detail) = determinism();
    all &= passed;
    println!("criterion 11: {} {}", if passed { "PASS" } else { "FAIL" }, detail);
    if !all {
        std::process::exit(1);
    }
}
