//! End-to-end runs of the `spinham` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use spinham::echo::EchoParams;
use spinham::zefoz::project_t2;

fn spinham(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinham"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_defaults_give_full_spiral() {
    let dir = tempfile::tempdir().unwrap();
    let out = spinham(dir.path(), &["simulate"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("dataset.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 201 * 32);
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["subcommand"], "simulate");
    assert_eq!(m["config"]["n_points"], 201);
    assert_eq!(m["config"]["b0_g"], 80.0);
    assert!(m["duration_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn single_point_sits_at_spiral_start() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(spinham(dir.path(), &["simulate", "--points", "1"]).status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("dataset.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 32);
    for r in rows {
        let f: Vec<&str> = r.split(',').collect();
        let b: Vec<f64> = f[2..5].iter().map(|s| s.parse().unwrap()).collect();
        assert!(b[0].abs() < 1e-9 && b[1].abs() < 1e-9 && (b[2] + 80.0).abs() < 1e-9, "{r}");
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = spinham(d.path(), &["simulate", "--noise", "9", "--seed", "7", "--points", "21"]);
        assert_eq!(out.status.code(), Some(0));
    }
    for f in ["dataset.csv", "dataset.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    // Replaying the manifest reproduces the outputs as well.
    let c = tempfile::tempdir().unwrap();
    let manifest = a.path().join("manifest.json");
    let out = spinham(c.path(), &["simulate", "--config", manifest.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        fs::read(a.path().join("dataset.csv")).unwrap(),
        fs::read(c.path().join("dataset.csv")).unwrap()
    );
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"simulate": {"n_points": 3, "noise_khz": 2.0, "seed": 5}}"#).unwrap();
    let out = spinham(dir.path(), &["simulate", "--config", cfg.to_str().unwrap(), "--seed", "11"]);
    assert_eq!(out.status.code(), Some(0));
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["config"]["n_points"], 3);
    assert_eq!(m["config"]["noise_khz"], 2.0);
    assert_eq!(m["config"]["seed"], 11);
    assert_eq!(m["seed"], 11);
}

#[test]
fn input_and_io_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad_model = dir.path().join("bad.json");
    fs::write(&bad_model, "{\"ground\": 1}").unwrap();
    let out = spinham(dir.path(), &["simulate", "--model", bad_model.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = spinham(dir.path(), &["tensors", "--model", bad_model.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = spinham(&blocker.join("sub"), &["tensors"]);
    assert_eq!(out.status.code(), Some(3));

    let out = spinham(dir.path(), &["fit", "--data", dir.path().join("missing.csv").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));

    let out = spinham(dir.path(), &["nonsense"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_rejects_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("empty.csv");
    fs::write(&data, "index,t,bx,by,bz,band,freq_mhz\n").unwrap();
    let out = spinham(dir.path(), &["fit", "--data", data.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no peaks"));
}

fn short_fit_config(dir: &Path) -> String {
    let cfg = dir.join("fit.json");
    fs::write(
        &cfg,
        r#"{"fit": {"anneal": {"max_evaluations": 3000, "steps_per_temperature": 50, "rms_ceiling_khz": 15.0}}}"#,
    )
    .unwrap();
    cfg.to_str().unwrap().to_string()
}

#[test]
fn fit_round_trip_reaches_noise_level() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    assert_eq!(spinham(&sim, &["simulate", "--points", "41", "--noise", "9", "--seed", "3"]).status.code(), Some(0));
    let data = sim.join("dataset.csv");
    let cfg = short_fit_config(dir.path());
    let fit = dir.path().join("fit");
    let out = spinham(&fit, &["fit", "--data", data.to_str().unwrap(), "--config", &cfg, "--strict"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&fit.join("fit_result.json"));
    let rms = r["rms_khz"].as_f64().unwrap();
    assert!((6.0..12.0).contains(&rms), "rms {rms}");
    assert_eq!(r["config"]["max_evaluations"], 3000);
    let cov = fs::read_to_string(fit.join("covariance.csv")).unwrap();
    assert_eq!(cov.lines().count(), 25);
    assert!(String::from_utf8_lossy(&out.stdout).contains("rms"));
}

#[test]
fn bad_start_is_flagged_and_strict_mode_fails() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    assert_eq!(spinham(&sim, &["simulate", "--points", "11"]).status.code(), Some(0));
    let data = sim.join("dataset.csv");

    let mut model: Value = serde_json::from_str(spinham::model::HamiltonianModel::bundled_json()).unwrap();
    for st in ["ground", "excited"] {
        let e = model[st]["e_mhz"].as_f64().unwrap();
        let d = model[st]["d_mhz"].as_f64().unwrap();
        model[st]["e_mhz"] = (e * 1.8).into();
        model[st]["d_mhz"] = (d * 0.4).into();
    }
    let init = dir.path().join("bad_init.json");
    fs::write(&init, serde_json::to_string_pretty(&model).unwrap()).unwrap();
    let cfg = dir.path().join("tiny.json");
    fs::write(&cfg, r#"{"fit": {"anneal": {"max_evaluations": 300, "steps_per_temperature": 20, "rms_ceiling_khz": 1.0}}}"#)
        .unwrap();
    let base = ["fit", "--data", data.to_str().unwrap(), "--init", init.to_str().unwrap(), "--config", cfg.to_str().unwrap()];

    let lax = dir.path().join("lax");
    let out = spinham(&lax, &base);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&lax.join("fit_result.json"));
    assert_eq!(r["converged"], false);
    assert!(!r["flags"].as_array().unwrap().is_empty());

    let strict = dir.path().join("strict");
    let mut args = base.to_vec();
    args.push("--strict");
    assert_eq!(spinham(&strict, &args).status.code(), Some(4));
    assert!(strict.join("fit_result.json").exists());
    assert!(strict.join("manifest.json").exists());
}

#[test]
fn zero_size_grid_is_empty_success() {
    let dir = tempfile::tempdir().unwrap();
    let out = spinham(dir.path(), &["zefoz", "--half-width", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("zefoz_candidates.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    let j = json(&dir.path().join("zefoz_candidates.json"));
    assert!(j["candidates"].as_array().unwrap().is_empty());
}

#[test]
fn delta_b_reaches_every_projection() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("grid.json");
    fs::write(
        &cfg,
        r#"{"zefoz": {"grid": {"lower_g": [230, 55, 315], "upper_g": [280, 105, 365], "step_g": [25, 25, 25]}}}"#,
    )
    .unwrap();
    let out = spinham(dir.path(), &["zefoz", "--config", cfg.to_str().unwrap(), "--delta-b", "0.08"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let j = json(&dir.path().join("zefoz_candidates.json"));
    assert_eq!(j["grid"]["delta_b_g"], 0.08);
    let cands = j["candidates"].as_array().unwrap();
    assert!(!cands.is_empty());
    for c in cands {
        let s1 = c["s1_norm"].as_f64().unwrap();
        let s2 = c["s2_scalar"].as_f64().unwrap();
        let t2 = c["projected_t2_s"].as_f64().unwrap();
        assert!((project_t2(s1, s2, 0.08).unwrap() - t2).abs() <= 1e-12 * t2);
    }
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["config"]["grid"]["delta_b_g"], 0.08);
    assert_eq!(m["config"]["grid"]["step_g"][0], 25.0);
}

fn write_trace(path: &Path, p: &EchoParams, noise: &[f64]) {
    let mut text = String::from("two_tau_ms,intensity\n");
    for (k, eps) in noise.iter().enumerate() {
        let t = 0.2 * 50f64.powf(k as f64 / 19.0);
        text.push_str(&format!("{t:.17e},{:.17e}\n", p.eval(t) * (1.0 + eps)));
    }
    fs::write(path, text).unwrap();
}

fn echo_params(dir: &Path, trace: &Path) -> Value {
    let out = spinham(dir, &["echo-fit", "--trace", trace.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    json(&dir.join("echo_fit.json"))["params"].clone()
}

#[test]
fn echo_fit_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let truth = EchoParams {
        i0: 1000.0,
        t2_ms: 2.6,
        n: 1.73,
        offset: 27.0,
    };
    let trace = dir.path().join("clean.csv");
    write_trace(&trace, &truth, &[0.0; 20]);
    let p = echo_params(&dir.path().join("clean"), &trace);
    for (k, want) in [("i0", 1000.0), ("t2_ms", 2.6), ("n", 1.73), ("offset", 27.0)] {
        let got = p[k].as_f64().unwrap();
        assert!(((got - want) / want).abs() < 1e-3, "{k}: {got}");
    }

    // Fixed 3% multiplicative pattern, alternating sign with varying size.
    let noise: Vec<f64> = (0..20).map(|k| 0.03 * if k % 2 == 0 { 1.0 } else { -1.0 } * ((k % 5) as f64 / 4.0)).collect();
    let noisy = dir.path().join("noisy.csv");
    write_trace(&noisy, &truth, &noise);
    let p = echo_params(&dir.path().join("noisy"), &noisy);
    assert!((p["t2_ms"].as_f64().unwrap() - 2.6).abs() < 0.1);

    let exp = dir.path().join("exp.csv");
    write_trace(&exp, &EchoParams { n: 1.0, ..truth }, &[0.0; 20]);
    let n = echo_params(&dir.path().join("exp"), &exp)["n"].as_f64().unwrap();
    assert!((1.0..=1.05).contains(&n), "n = {n}");
    let curve = fs::read_to_string(dir.path().join("exp").join("echo_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 21);
}

#[test]
fn echo_fit_rejects_short_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("short.csv");
    fs::write(&trace, "1,10\n2,5\n3,2\n").unwrap();
    let out = spinham(dir.path(), &["echo-fit", "--trace", trace.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tensors_are_written_with_fixed_decimals() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = spinham(d.path(), &["tensors", "--basis", "D1D2b"]);
        assert_eq!(out.status.code(), Some(0));
        assert!(String::from_utf8_lossy(&out.stdout).contains("D1D2b basis"));
    }
    let csv = fs::read_to_string(a.path().join("tensors.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(b.path().join("tensors.csv")).unwrap());
    assert_eq!(csv.lines().count(), 1 + 8 * 3);
    let first = csv.lines().nth(1).unwrap();
    assert!(first.starts_with("ground,1,M,kHz/G,D1D2b,1,"));
    assert!(first.rsplit(',').next().unwrap().split('.').nth(1).unwrap().len() == 6);
}

#[test]
fn fit_output_does_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    assert_eq!(spinham(&sim, &["simulate", "--points", "11", "--noise", "9"]).status.code(), Some(0));
    let data = sim.join("dataset.csv");
    let cfg = dir.path().join("fit.json");
    fs::write(&cfg, r#"{"fit": {"anneal": {"max_evaluations": 600, "steps_per_temperature": 30, "restarts": 2}}}"#).unwrap();
    let mut results = Vec::new();
    for threads in ["1", "3"] {
        let out_dir = dir.path().join(format!("t{threads}"));
        let args = ["fit", "--data", data.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--threads", threads];
        assert_eq!(spinham(&out_dir, &args).status.code(), Some(0));
        results.push(fs::read(out_dir.join("fit_result.json")).unwrap());
    }
    assert_eq!(results[0], results[1]);
}
