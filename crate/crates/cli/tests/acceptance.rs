//! End-to-end acceptance for the command-line tool: the full
//! simulate -> estimate -> iw -> magnitude -> cycle pipeline completes
//! quickly, emits schema-valid JSON, repeats byte-identically under the
//! same seed, and honors the 0/2/3 exit-code contract.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_cyclestudy")
}

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("cyclestudy_cli_acceptance").join(name);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const PIPELINE_CONFIG: &str = "\
[panel]
states = 12
districts_per_state = 8
years = 12
start_year = 1986

[effects]
path = -2:-0.02, -1:-0.03, 1:-0.04

[noise]
state_fe_sd = 0.05
period_fe_sd = 0.03
district_sd = 0.03
da_effect_sd = 0.15
idio_sd = 0.08

[population]
log_sd = 0.6

[run]
seed = 4242
";

fn run(args: &[&str]) -> std::process::Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn run_pipeline(root: &Path) {
    let config = root.join("sim.toml");
    std::fs::write(&config, PIPELINE_CONFIG).unwrap();
    let sim = root.join("sim");
    let est = root.join("est");
    let est_static = root.join("est_static");
    let iw = root.join("iw");
    let mag = root.join("mag");
    let cyc = root.join("cyc");
    run_ok(&["simulate", "--config", config.to_str().unwrap(), "--out", sim.to_str().unwrap()]);
    let panel = sim.join("panel.csv");
    run_ok(&[
        "estimate",
        "--input",
        panel.to_str().unwrap(),
        "--outcome",
        "admissions_per_1000",
        "--mode",
        "dynamic",
        "--out",
        est.to_str().unwrap(),
    ]);
    run_ok(&[
        "estimate",
        "--input",
        panel.to_str().unwrap(),
        "--outcome",
        "admissions_per_1000",
        "--mode",
        "static",
        "--log1p",
        "--out",
        est_static.to_str().unwrap(),
    ]);
    run_ok(&[
        "iw",
        "--input",
        panel.to_str().unwrap(),
        "--reps",
        "400",
        "--seed",
        "7",
        "--out",
        iw.to_str().unwrap(),
    ]);
    run_ok(&[
        "magnitude",
        "--from-panel",
        panel.to_str().unwrap(),
        "--outcome",
        "admissions_per_1000",
        "--out",
        mag.to_str().unwrap(),
    ]);
    run_ok(&[
        "cycle",
        "--input",
        panel.to_str().unwrap(),
        "--frequency",
        "annual",
        "--span",
        "0.9",
        "--out",
        cyc.to_str().unwrap(),
    ]);
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("missing {}: {e}", path.display()))
}

fn json_of(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&read(path)).unwrap_or_else(|e| panic!("bad JSON {}: {e}", path.display()))
}

/// Criterion 11: one config drives the whole pipeline in under a minute,
/// all documents are schema-valid, and repeated runs are byte-identical
/// outside the manifests' wall-time field.
#[test]
fn criterion_11_cli_end_to_end() {
    let root_a = workdir("run_a");
    let start = Instant::now();
    run_pipeline(&root_a);
    let elapsed = start.elapsed().as_secs_f64();

    // Schema checks.
    let est = json_of(&root_a.join("est/estimate.json"));
    assert!(est["n_obs"].is_u64());
    assert!(est["n_clusters"].is_u64());
    assert!(est["spec"].is_object());
    let coefs = est["coefficients"].as_array().unwrap();
    assert_eq!(coefs.len(), 4, "one row per relative time");
    for c in coefs {
        for key in ["k", "estimate", "se", "ci_low", "ci_high"] {
            assert!(c[key].is_number(), "coefficient field {key}");
        }
    }
    let zero = coefs.iter().find(|c| c["k"] == 0).unwrap();
    assert_eq!(zero["estimate"], 0.0);
    assert_eq!(zero["se"], 0.0);

    let est_static = json_of(&root_a.join("est_static/estimate.json"));
    assert_eq!(est_static["coefficients"].as_array().unwrap().len(), 1);
    assert!(est_static["spec"]["multiplicative_effect"].is_number());

    let iw = json_of(&root_a.join("iw/iw.json"));
    let reports = iw["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2, "one report per outcome column");
    for r in reports {
        for key in ["outcome", "vg", "se", "reps", "seed", "cells"] {
            assert!(!r[key].is_null(), "iw field {key}");
        }
        for cell in r["cells"].as_array().unwrap() {
            for key in ["cohort", "k", "estimate", "share"] {
                assert!(!cell[key].is_null(), "cell field {key}");
            }
        }
        // Shares sum to one at each relative time.
        let mut by_k: std::collections::BTreeMap<i64, f64> = Default::default();
        for cell in r["cells"].as_array().unwrap() {
            *by_k.entry(cell["k"].as_i64().unwrap()).or_insert(0.0) +=
                cell["share"].as_f64().unwrap();
        }
        for (k, total) in by_k {
            assert!((total - 1.0).abs() < 1e-9, "shares at k={k} sum to {total}");
        }
    }
    let table = String::from_utf8(read(&root_a.join("iw/table.txt"))).unwrap();
    assert!(table.contains("All Offenses"));

    let mag = json_of(&root_a.join("mag/magnitude.json"));
    for key in ["effect", "gamma_sq", "sd_units", "percentile", "clamped"] {
        assert!(!mag[key].is_null(), "magnitude field {key}");
    }
    assert!(mag["gamma_sq"].as_f64().unwrap() > 0.0);

    let cyc = json_of(&root_a.join("cyc/cycle.json"));
    for key in ["A", "phi", "se_A", "se_phi", "ssr"] {
        assert!(cyc.get(key).is_some(), "cycle field {key}");
    }
    let curve = String::from_utf8(read(&root_a.join("cyc/curve.csv"))).unwrap();
    assert!(curve.starts_with("k,loess,sinusoid\n"));
    assert_eq!(curve.lines().count(), 1 + 4);

    // Manifests exist and list their outputs.
    for dir in ["sim", "est", "est_static", "iw", "mag", "cyc"] {
        let manifest = json_of(&root_a.join(dir).join("manifest.json"));
        assert!(manifest["outputs"].as_array().unwrap().len() >= 1, "{dir} manifest outputs");
        assert!(manifest["tool_version"].is_string());
    }

    // Determinism: a second run is byte-identical outside manifests.
    let root_b = workdir("run_b");
    run_pipeline(&root_b);
    for rel in [
        "sim/panel.csv",
        "sim/truth.json",
        "est/estimate.json",
        "est/plot.csv",
        "est_static/estimate.json",
        "iw/iw.json",
        "iw/table.txt",
        "mag/magnitude.json",
        "cyc/cycle.json",
        "cyc/curve.csv",
    ] {
        assert_eq!(read(&root_a.join(rel)), read(&root_b.join(rel)), "{rel} differs across runs");
    }

    println!(
        "criterion 11 (cli end-to-end): PASS — pipeline in {elapsed:.1} s, schema-valid documents, byte-identical rerun"
    );
    assert!(elapsed < 60.0, "pipeline took {elapsed:.1} s");
}

#[test]
fn plot_csv_is_lossless_view_of_json() {
    let root = workdir("lossless");
    run_pipeline(&root);
    let est = json_of(&root.join("est/estimate.json"));
    let coefs = est["coefficients"].as_array().unwrap();
    let plot = String::from_utf8(read(&root.join("est/plot.csv"))).unwrap();
    let mut lines = plot.lines();
    assert_eq!(lines.next(), Some("k,estimate,se,ci_low,ci_high"));
    for (line, c) in lines.zip(coefs) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0].parse::<i64>().unwrap(), c["k"].as_i64().unwrap());
        for (i, key) in ["estimate", "se", "ci_low", "ci_high"].iter().enumerate() {
            let csv_value: f64 = fields[i + 1].parse().unwrap();
            let json_value = c[*key].as_f64().unwrap();
            assert_eq!(csv_value.to_bits(), json_value.to_bits(), "{key} differs");
        }
    }
}

#[test]
fn exit_codes_follow_the_contract() {
    // Missing input: 2.
    let out = run(&["estimate", "--input", "/nonexistent/panel.csv", "--out", "/tmp/x_est"]);
    assert_eq!(out.status.code(), Some(2));

    // Malformed config key: 2, message names the key.
    let root = workdir("badconfig");
    let config = root.join("bad.toml");
    std::fs::write(&config, "[noise]\nwobble = 3\n").unwrap();
    let out = run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        root.join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("wobble"), "stderr should name the key: {stderr}");

    // Undefined magnitude (zero signal variance): 3 with an explanation.
    let out = run(&["magnitude", "--effect", "0.1", "--gamma-sq", "0"]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("signal"), "stderr should explain: {stderr}");

    // Mapping mode works and prints the report.
    let out = run(&["magnitude", "--effect", "0.1528", "--gamma-sq", "0.0323"]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((doc["sd_units"].as_f64().unwrap() - 0.85).abs() < 1e-3);
    assert!((doc["percentile"].as_f64().unwrap() - 80.2).abs() < 0.1);
}

#[test]
fn estimate_rejects_inconsistent_flags() {
    let root = workdir("flags");
    let config = root.join("sim.toml");
    std::fs::write(&config, "[run]\nseed = 1\n[panel]\nstates = 2\ndistricts_per_state = 4\nyears = 8\n").unwrap();
    let sim = root.join("sim");
    run_ok(&["simulate", "--config", config.to_str().unwrap(), "--out", sim.to_str().unwrap()]);
    let panel = sim.join("panel.csv");

    let out = run(&[
        "estimate",
        "--input",
        panel.to_str().unwrap(),
        "--fe",
        "galaxy,year",
        "--out",
        root.join("e1").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&[
        "estimate",
        "--input",
        panel.to_str().unwrap(),
        "--cluster",
        "county",
        "--out",
        root.join("e2").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&[
        "cycle",
        "--input",
        panel.to_str().unwrap(),
        "--frequency",
        "monthly",
        "--out",
        root.join("c1").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "frequency mismatch is an input error");
}

#[test]
fn monthly_pipeline_round_trips_through_csv() {
    let root = workdir("monthly");
    let config = root.join("sim.toml");
    std::fs::write(
        &config,
        "[run]\nseed = 12\n[panel]\nstates = 4\ndistricts_per_state = 8\nyears = 8\nfrequency = monthly\n\
         [effects]\nsin_amplitude = 0.05\n[noise]\nidio_sd = 0.05\n",
    )
    .unwrap();
    let sim = root.join("sim");
    run_ok(&["simulate", "--config", config.to_str().unwrap(), "--out", sim.to_str().unwrap()]);
    let panel = sim.join("panel.csv");
    let header = String::from_utf8(read(&panel)).unwrap();
    assert!(header.lines().next().unwrap().contains(",month,"));

    let est = root.join("est");
    run_ok(&[
        "estimate",
        "--input",
        panel.to_str().unwrap(),
        "--outcome",
        "admissions_per_1000",
        "--out",
        est.to_str().unwrap(),
    ]);
    let doc = json_of(&est.join("estimate.json"));
    let coefs = doc["coefficients"].as_array().unwrap();
    assert_eq!(coefs.len(), 48, "full monthly cycle reported");
    let estimated = coefs
        .iter()
        .filter(|c| {
            let k = c["k"].as_i64().unwrap();
            (-19..=12).contains(&k)
        })
        .count();
    assert_eq!(estimated, 32);
    for c in coefs {
        let k = c["k"].as_i64().unwrap();
        if !(-19..=12).contains(&k) {
            assert_eq!(c["estimate"], 0.0, "omitted month k={k} normalized to zero");
        }
    }

    let cyc = root.join("cyc");
    run_ok(&[
        "cycle",
        "--input",
        panel.to_str().unwrap(),
        "--frequency",
        "monthly",
        "--span",
        "0.3",
        "--out",
        cyc.to_str().unwrap(),
    ]);
    let fit = json_of(&cyc.join("cycle.json"));
    assert_eq!(fit["period"], 48);
    // The fit runs on the level outcome, so the amplitude carries the
    // baseline rate scale: roughly baseline * A = 1.68 * 0.05.
    let amplitude = fit["A"].as_f64().unwrap();
    let expected = 1.68 * 0.05;
    assert!(
        (amplitude / expected - 1.0).abs() < 0.25,
        "amplitude {amplitude} vs level-scale expectation {expected}"
    );
}

#[test]
fn simulate_row_count_matches_config() {
    let root = workdir("rowcount");
    let config = root.join("sim.toml");
    std::fs::write(
        &config,
        "[run]\nseed = 3\n[panel]\nstates = 3\ndistricts_per_state = 4\nyears = 8\n",
    )
    .unwrap();
    let sim = root.join("sim");
    run_ok(&["simulate", "--config", config.to_str().unwrap(), "--out", sim.to_str().unwrap()]);
    let panel = String::from_utf8(read(&sim.join("panel.csv"))).unwrap();
    // Header plus counties x years.
    assert_eq!(panel.lines().count(), 1 + 3 * 4 * 8);
    assert!(sim.join("truth.json").exists());
    assert!(sim.join("manifest.json").exists());
}
