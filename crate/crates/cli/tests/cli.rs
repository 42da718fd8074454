use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use skewshift::archive::{compare_archives, verify_archive};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_skewshift"));
    cmd.env_remove("SKEWSHIFT_THREADS");
    cmd
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn model() -> String {
    configs().join("default_model.json").display().to_string()
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

/// A config small enough for a debug build.
fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.json");
    let text = format!(
        r#"{{
  "model_path": "{}",
  "seed": 3,
  "run": {{ "n0": 4, "samples": 400, "continuity_grid": 8, "continuity_deltas": [1e-2, 1e-4] }}
}}"#,
        model()
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn lyapunov_writes_one_record_per_scale_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let outs: Vec<PathBuf> = (0..2).map(|k| tmp.path().join(format!("l{k}.jsonl"))).collect();
    for out in &outs {
        let o = run(bin().args(["lyapunov", "--model", &model(), "--E", "0", "--scales", "10,20,40", "--mc", "10000", "--seed", "7", "--out"]).arg(out));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read(&outs[0]).unwrap();
    assert_eq!(a, fs::read(&outs[1]).unwrap());
    let lines: Vec<Value> = String::from_utf8(a).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    for (line, n) in lines.iter().zip([10, 20, 40]) {
        assert_eq!(line["n"], n);
        assert_eq!(line["seed"], 7);
        for key in ["kind", "E", "value", "std_error", "sampler", "model_hash"] {
            assert!(line.get(key).is_some(), "missing {key}");
        }
    }
}

#[test]
fn thread_count_does_not_change_output() {
    let args = ["lyapunov", "--model", &model(), "--E", "-0.3", "--scales", "8,16", "--mc", "2000"];
    let one = run(bin().args(args).args(["--threads", "1"]));
    let three = run(bin().args(args).args(["--threads", "3"]));
    let env = run(bin().args(args).env("SKEWSHIFT_THREADS", "2"));
    assert!(one.status.success());
    assert_eq!(one.stdout, three.stdout);
    assert_eq!(one.stdout, env.stdout);
}

#[test]
fn environment_overrides_thread_flag() {
    let o = run(bin()
        .args(["diophantine", "--omega", "0.5", "--threads", "2"])
        .env("SKEWSHIFT_THREADS", "zero"));
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "usage");
}

#[test]
fn budget_refusal_exits_3() {
    let o = run(bin().args(["lyapunov", "--model", &model(), "--E", "0", "--scales", "10", "--mc", "1e12"]));
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["error"], "budget_exceeded");
    assert!(o.stdout.is_empty());
}

#[test]
fn validation_errors_exit_2_with_json() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let o = run(bin().args(["lyapunov", "--model"]).arg(&bad).args(["--E", "0", "--scales", "10"]));
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "json");

    let o = run(bin().args(["lyapunov", "--model", &model(), "--E", "0", "--scales", "10,x"]));
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["exit_code"], 2);

    let o = run(bin().args(["induction", "--model", &model(), "--E", "0", "--n", "10", "--N", "50"]));
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "invalid_input");

    let o = run(bin().args(["frobnicate"]));
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "usage");
}

#[test]
fn theorem_flag_refuses_constant_potential() {
    let free = configs().join("free_model.json");
    let o = run(bin().args(["lyapunov", "--theorem", "--model"]).arg(&free).args(["--E", "3", "--scales", "10"]));
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "admission");
    let o = run(bin().args(["lyapunov", "--model"]).arg(&free).args(["--E", "3", "--scales", "1000", "--grid", "2x2", "--kind", "plain"]));
    assert!(o.status.success());
    let rec: Value = serde_json::from_slice(&o.stdout).unwrap();
    let oracle = ((3.0 + 5f64.sqrt()) / 2.0).ln();
    assert!((rec["value"].as_f64().unwrap() - oracle).abs() < 2e-3);
}

#[test]
fn diophantine_golden_mean_passes() {
    let o = run(bin().args(["diophantine", "--omega", "0.6180339887", "--epsilon", "0.05", "--nmax", "10000"]));
    assert!(o.status.success());
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["passes"], true);
    assert_eq!(r["n_max"], 10000);
}

#[test]
fn avalanche_diagonal_demo_cancels() {
    let o = run(bin().args(["avalanche", "--demo", "diag", "--mu", "1e4", "--n", "100"]));
    assert!(o.status.success());
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(r["lhs"].as_f64().unwrap().abs() < 1e-10);
    assert_eq!(r["pass"], true);

    let o = run(bin().args(["avalanche", "--model", &model(), "--n", "20", "--blocks", "50", "--base", "0.3,0.7"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["hyp_norm"], true);
}

#[test]
fn deviation_and_continuity_emit_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("dev/report.json");
    let o = run(bin()
        .args(["deviation", "--model", &model(), "--E", "0", "--n", "20", "--threshold", "0.1", "--mc", "1000", "--out"])
        .arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r["samples"], 1000);

    let o = run(bin().args(["continuity", "--model", &model(), "--E", "0.1", "--N", "4", "--grid", "16x16", "--deltas", "1e-2,1e-12"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["violations"], 0);
}

#[test]
fn run_archive_replays_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tiny_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let o = run(bin().args(["run", "--config"]).arg(&config).arg("--out").arg(&a).args(["--threads", "1"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["lambda"], 1e6);
    let o = run(bin().args(["run", "--config"]).arg(&config).arg("--out").arg(&b).args(["--threads", "2"]));
    assert!(o.status.success());
    assert!(a.join("MANIFEST").is_file());
    assert!(verify_archive(&a).unwrap().is_empty());
    assert!(compare_archives(&a, &b).unwrap().is_empty());

    let embedded: Value = serde_json::from_str(&fs::read_to_string(a.join("config.json")).unwrap()).unwrap();
    assert_eq!(embedded["seed"], 3);
    assert_eq!(embedded["run"]["seed"], 3);
    assert!(embedded.get("threads").is_none());

    // refuses to overwrite
    let o = run(bin().args(["run", "--config"]).arg(&config).arg("--out").arg(&a));
    assert_eq!(o.status.code(), Some(2));

    let plots = tmp.path().join("plots");
    let o = run(bin().args(["plotdata", "--archive"]).arg(&a).arg("--out").arg(&plots));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let header = |f: &str| fs::read_to_string(plots.join(f)).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header("lyapunov_vs_n.csv"), "E,n,value,std_error,running_infimum,lower_bound");
    assert_eq!(header("deviation_vs_n.csv"), "E,n,threshold,measure,log10_measure,ci_lo,ci_hi");
    assert_eq!(
        header("continuity_loglog.csv"),
        "E,N,delta,diff,log10_delta,log10_diff,proxy_diff,log10_proxy_diff"
    );
    for svg in ["lyapunov_vs_n.svg", "deviation_vs_n.svg", "continuity_loglog.svg"] {
        let text = fs::read_to_string(plots.join(svg)).unwrap();
        assert!(text.starts_with("<svg") && text.contains("<circle"), "{svg}");
    }
}

#[test]
fn plotdata_on_empty_archive_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(bin().args(["plotdata", "--archive"]).arg(tmp.path()));
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr_json(&o)["message"].as_str().unwrap().to_string();
    for t in ["lyapunov.csv", "deviation.csv", "continuity.csv"] {
        assert!(msg.contains(t), "{msg}");
    }
}

#[test]
fn run_config_rejects_unknown_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("c.json");
    fs::write(&path, format!(r#"{{"model_path": "{}", "sead": 1}}"#, model())).unwrap();
    let o = run(bin().args(["run", "--config"]).arg(&path).arg("--out").arg(tmp.path().join("x")));
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "json");
}

/// The shipped smoke configuration end to end: run, then plot.
#[test]
fn smoke_config_runs_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let archive = tmp.path().join("smoke");
    let o = run(bin().args(["run", "--config"]).arg(configs().join("smoke.json")).arg("--out").arg(&archive));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["lower_bound_holds"], true);
    assert_eq!(summary["continuity_violations"], 0);
    let o = run(bin().args(["plotdata", "--archive"]).arg(&archive));
    assert!(o.status.success());
    let produced: Vec<String> = fs::read_dir(archive.join("plots"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(produced.iter().filter(|f| f.ends_with(".csv")).count(), 3);
    assert_eq!(produced.iter().filter(|f| f.ends_with(".svg")).count(), 3);
}
