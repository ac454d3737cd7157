use std::path::PathBuf;
use std::process::{Command, Output};

fn hepim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hepim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("hepim-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

/// Data lines of a CSV printed after the header comment.
fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn he_roundtrip_reports_ciphertext_size() {
    let o = hepim(&["he", "roundtrip", "--preset", "paper"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("ciphertext_bytes=110592"));
    let o = hepim(&["he", "roundtrip", "--preset", "desk"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("roundtrip: ok"));
}

#[test]
fn invalid_parameters_exit_with_usage_code() {
    let o = hepim(&["he", "roundtrip", "--n", "100"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("power of two"));
    assert_eq!(
        hepim(&["he", "roundtrip", "--preset", "nope"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(hepim(&["he", "frobnicate"]).status.code(), Some(2));
}

#[test]
fn keygen_is_deterministic_and_versioned() {
    let a = tmp("k1.json");
    let b = tmp("k2.json");
    for p in [&a, &b] {
        let o = hepim(&["--seed", "9", "he", "keygen", "--out", p.to_str().unwrap()]);
        assert!(o.status.success());
    }
    let ta = std::fs::read_to_string(&a).unwrap();
    assert_eq!(ta, std::fs::read_to_string(&b).unwrap());
    let doc: serde_json::Value = serde_json::from_str(&ta).unwrap();
    assert_eq!(doc["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(doc["data"]["secret"].as_array().unwrap().len(), 128);
}

#[test]
fn all_inference_modes_agree_on_toy_model() {
    let mut classes = Vec::new();
    for mode in ["plain", "functional", "grid"] {
        let o = hepim(&["svm", "infer", "--mode", mode]);
        assert!(o.status.success(), "{mode}: {}", stderr(&o));
        let out = stdout(&o);
        assert!(out.contains("classes 6/6, dot products 6/6"), "{out}");
        classes.push(
            out.lines()
                .filter(|l| l.starts_with("row "))
                .map(str::to_string)
                .collect::<Vec<_>>(),
        );
    }
    assert_eq!(classes[0], classes[1]);
    assert_eq!(classes[0], classes[2]);
    assert_eq!(classes[0].len(), 6);
}

#[test]
fn mismatched_input_dimension_is_rejected() {
    let p = tmp("bad.csv");
    std::fs::write(&p, "1.0,2.0,3.0\n").unwrap();
    let o = hepim(&[
        "svm",
        "infer",
        "--mode",
        "plain",
        "--input",
        p.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("dimension") || stderr(&o).contains("expected"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn full_size_grid_needs_opt_in() {
    let o = hepim(&["svm", "infer", "--mode", "grid", "--preset", "paper"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--allow-slow"));
}

#[test]
fn sweep_is_monotone_deterministic_and_balanced() {
    let args = [
        "--seed",
        "4",
        "sim",
        "sweep",
        "--benchmark",
        "adult",
        "--powers",
        "0.02,0.002,0.005",
    ];
    let a = hepim(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&hepim(&args)));
    let rows = csv_rows(&stdout(&a));
    assert_eq!(rows.len(), 6);
    for profile in ["modern", "projected"] {
        let lat: Vec<f64> = rows
            .iter()
            .filter(|r| r[1] == profile)
            .map(|r| r[2].parse().unwrap())
            .collect();
        assert_eq!(lat.len(), 3, "row-count parity");
        assert!(lat.windows(2).all(|w| w[1] <= w[0]), "{profile}: {lat:?}");
    }
}

#[test]
fn sweep_fuzz_reports_consistency() {
    let o = hepim(&[
        "sim",
        "sweep",
        "--benchmark",
        "desk",
        "--profile",
        "projected",
        "--powers",
        "0.002",
        "--interrupt-fuzz",
        "8",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("consistent: 8/8"), "{}", stderr(&o));
}

#[test]
fn sweep_file_output_has_config_header() {
    let p = tmp("sweep.csv");
    let o = hepim(&[
        "sim",
        "sweep",
        "--benchmark",
        "desk",
        "--powers",
        "0.01",
        "--out",
        p.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&p).unwrap();
    let first = text.lines().next().unwrap();
    assert!(
        first.starts_with("# hepim ") && first.contains("config-sha256="),
        "{first}"
    );
    assert!(text.lines().nth(1).unwrap().starts_with("power_w,profile,"));
}

#[test]
fn scenario_file_is_honoured() {
    let p = tmp("scenario.toml");
    std::fs::write(
        &p,
        "benchmark = \"adult\"\nprofiles = [\"projected\"]\npowers_w = [0.004]\n",
    )
    .unwrap();
    let o = hepim(&["sim", "sweep", "--scenario", p.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][1], "projected");
}

#[test]
fn table3_option_latencies() {
    let o = hepim(&["offload", "table3", "--format", "csv"]);
    assert!(o.status.success());
    let rows = csv_rows(&stdout(&o));
    let opt1: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    let want = [15_680.0, 11_220.0, 280.0];
    for (g, w) in opt1.iter().zip(want) {
        assert!((g - w).abs() < 1e-6, "{g} vs {w}");
    }
    let opt2: f64 = rows[0][3].parse().unwrap();
    assert!((opt2 - 450.0).abs() < 1e-9);
}

#[test]
fn polymult_projected_is_cheaper_and_checked() {
    let o = hepim(&["bench", "polymult", "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(stderr(&o).contains("functional check"));
    let rows = csv_rows(&out);
    let energy = |profile: &str, n: &str| -> f64 {
        rows.iter().find(|r| r[0] == n && r[3] == profile).unwrap()[5]
            .parse()
            .unwrap()
    };
    for n in ["1024", "4096"] {
        assert!(energy("projected", n) < energy("modern", n));
    }
}
