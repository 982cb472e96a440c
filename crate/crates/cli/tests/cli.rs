// Copyright 2026 cavmem contributors
// SPDX-License-Identifier: Apache-2.0

use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cavmem(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cavmem"))
        .args(args)
        .arg("--output-dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) -> Output {
    let o = cavmem(args, out);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

/// (t, A) rows of a trajectory CSV.
fn trajectory(path: &Path) -> Vec<(f64, f64, f64)> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap())
        })
        .collect()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn zero_pulse_gives_zero_trajectory_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["simulate", "--pulse", "zero"], tmp.path());
    let rows = trajectory(&tmp.path().join("trajectory.csv"));
    assert!(rows.len() > 2000);
    assert!(rows.iter().all(|r| r.1 == 0.0 && r.2 == 0.0));
    let m = manifest(tmp.path());
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert!(m["outputs"]["trajectory.csv"].is_string());
    assert_eq!(m["config"]["optimizer"]["seed"], 1);
}

#[test]
fn table_pulse_converges_in_dt() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["simulate", "--preset", "paper-case-a", "--pulse", "table1-ket0"], &a);
    ok(&["simulate", "--preset", "paper-case-a", "--pulse", "table1-ket0", "--dt", "0.025"], &b);
    let coarse = trajectory(&a.join("trajectory.csv"));
    let fine = trajectory(&b.join("trajectory.csv"));
    let peak = coarse.iter().map(|r| r.1.hypot(r.2)).fold(0.0, f64::max);
    assert!(peak > 0.0);
    // linear interpolation of the fine run onto the coarse times
    let mut j = 0;
    let mut worst: f64 = 0.0;
    for &(t, re, im) in &coarse {
        while j + 2 < fine.len() && fine[j + 1].0 < t {
            j += 1;
        }
        let (t0, r0, i0) = fine[j];
        let (t1, r1, i1) = fine[j + 1];
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        let d = (re - (r0 + w * (r1 - r0))).hypot(im - (i0 + w * (i1 - i0)));
        worst = worst.max(d);
    }
    assert!(worst / peak < 1e-4, "relative difference {}", worst / peak);
}

#[test]
fn bad_config_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "[numerics]\ndt = \"fast\"\n");
    let o = cavmem(&["simulate", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("numerics.dt"));

    let cfg = write(tmp.path(), "typo.toml", "[optimizer]\nrestart = 3\n");
    let o = cavmem(&["optimize", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("restart"));

    let o = cavmem(&["simulate", "--config", "/definitely/missing.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config"));

    let cfg = write(tmp.path(), "a.toml", "preset = \"paper-case-a\"\n");
    let o = cavmem(&["simulate", "--config", cfg.to_str().unwrap(), "--preset", "paper-case-b"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("preset"));
}

#[test]
fn optimize_is_reproducible_and_reports_efficiency() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&["optimize", "--restarts", "1", "--seed", "7"], d);
    }
    for f in ["coefficients.csv", "solution.json", "trajectory_ket0.csv", "trajectory_ket1.csv", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let m = manifest(&a);
    assert_eq!(m["config"]["optimizer"]["restarts"], 1);
    assert_eq!(m["config"]["optimizer"]["seed"], 7);
    assert!(m["optimizer"]["max_violation"].as_f64().unwrap() < 1e-6);
    let eff = m["optimizer"]["efficiency"].as_array().unwrap();
    assert_eq!(eff.len(), 2);
    assert!(eff.iter().all(|e| e["amplitude_ratio"].as_f64().unwrap() > 0.0));
}

#[test]
fn infeasible_optimization_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "inf.toml", "[optimizer]\nseparation = 1e-9\nrestarts = 1\n");
    let o = cavmem(&["optimize", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("feasible"));
}

#[test]
fn noiseless_retrieval_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ok(&["retrieve", "--coefficients", "paper", "--alpha", "1", "--beta", "0", "--noise", "0"], tmp.path());
    assert!(String::from_utf8_lossy(&o.stdout).contains("alpha_r"));
    let mut rdr = csv::Reader::from_path(tmp.path().join("retrieval.csv")).unwrap();
    let row = rdr.records().next().unwrap().unwrap();
    let eps_a: f64 = row[10].parse().unwrap();
    let eps_b: f64 = row[11].parse().unwrap();
    assert!(eps_a < 1e-9 && eps_b < 1e-9, "{eps_a} {eps_b}");
    let m = manifest(tmp.path());
    assert_eq!(m["noise"]["delta_eta"], 0.0);
    assert!(m["retrieval_cond"].as_f64().unwrap() < 1e8);
}

#[test]
fn identical_write_pulses_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let mut text = String::from("role,k,re,im,amp_scale\n");
    for role in ["xi0", "xi1"] {
        for k in 1..=5 {
            text += &format!("{role},{k},{},0.1,1.0\n", 0.2 * k as f64);
        }
    }
    for k in 1..=10 {
        text += &format!("zeta,{k},0.1,{},0.26\n", 0.01 * k as f64);
    }
    let p = write(tmp.path(), "same.csv", &text);
    let o = cavmem(&["retrieve", "--coefficients", p.to_str().unwrap(), "--alpha", "1", "--beta", "0"], tmp.path());
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn mismatched_table_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cavmem(&["retrieve", "--preset", "paper-case-a", "--coefficients", "/missing.csv"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = cavmem(&["retrieve", "--alpha", "1,2,3", "--coefficients", "paper"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpha"));
}

#[test]
fn noisy_sweeps_are_thread_count_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args = ["retrieve", "--coefficients", "paper", "--sweep", "fig3", "--noise-rel", "0.05", "--n", "20", "--seed", "3"];
    ok(&args, &a);
    let mut with_threads = args.to_vec();
    with_threads.extend(["--threads", "3"]);
    ok(&with_threads, &b);
    assert_eq!(std::fs::read(a.join("fig3.csv")).unwrap(), std::fs::read(b.join("fig3.csv")).unwrap());
    let rows = csv::Reader::from_path(a.join("fig3.csv")).unwrap().records().count();
    assert_eq!(rows, 42);
    assert_eq!(manifest(&a)["noise"]["n_realizations"], 20);
}

#[test]
fn noise_sweep_writes_a_fit() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["noise-sweep", "--coefficients", "paper", "--n", "10"], tmp.path());
    let rows = csv::Reader::from_path(tmp.path().join("noise_amplitudes.csv")).unwrap().records().count();
    assert_eq!(rows, 10);
    let m = manifest(tmp.path());
    assert_eq!(m["command"], "noise-sweep");
    assert!(m["fit"]["r_squared"].as_f64().unwrap() > 0.0);
}

#[test]
fn basis_writes_gram_tables() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["basis"], tmp.path());
    let n = csv::Reader::from_path(tmp.path().join("gram.csv")).unwrap().records().count();
    // four 15x15 matrices and the endpoint vector
    assert_eq!(n, 4 * 225 + 15);
    assert_eq!(manifest(tmp.path())["basis"]["n_read"], 10);
}

#[test]
fn reproduce_case_a_reads_back_the_sphere() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["reproduce", "case-a", "--restarts", "2"], tmp.path());
    let m = manifest(tmp.path());
    assert_eq!(m["config"]["preset"], "paper-case-a");
    assert!(m["max_eps"].as_f64().unwrap() < 1e-9);
    assert_eq!(csv::Reader::from_path(tmp.path().join("sphere.csv")).unwrap().records().count(), 21 * 41);
}
