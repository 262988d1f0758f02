use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn hca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hca"))
        .args(args)
        .env_remove("HCA_CONFIG")
        .output()
        .expect("spawn hca")
}

fn ok(args: &[&str]) -> Output {
    let o = hca(args);
    assert!(
        o.status.success(),
        "hca {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data").join(name)
}

fn simulate(dir: &Path) -> PathBuf {
    let sim = dir.join("sim");
    ok(&["simulate", "--samples", "1500", "--seed", "3", "--out", p(&sim)]);
    sim
}

#[test]
fn simulate_then_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path());
    assert!(sim.join("manifest.json").exists());
    assert!(sim.join("ground_truth.json").exists());

    let out = tmp.path().join("pipe");
    let o = ok(&["pipeline", p(&sim), "--seed", "1", "--out", p(&out)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("mic:"));
    for f in ["report.json", "solution.json", "r2.csv", "summary.txt", "graphs/domain1.dot"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let r = json(out.join("report.json"));
    assert_eq!(r["tool"], "hca");
    assert_eq!(r["command"], "pipeline");
    assert_eq!(r["seed"], 1);
    let mic = r["result"]["solution"]["mic"].as_f64().unwrap();
    assert!(mic < 0.05, "mic {mic}");
    let rec = r["result"]["latent_recovery"].as_array().unwrap();
    assert!(rec.iter().all(|v| v.as_f64().unwrap() > 0.9));
    let r2 = fs::read_to_string(out.join("r2.csv")).unwrap();
    assert!(r2.starts_with("factor,b1,"));
    assert!(fs::read_to_string(out.join("graphs/domain1.dot")).unwrap().starts_with("digraph"));
}

#[test]
fn pipeline_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path());
    let mut payloads = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        ok(&["pipeline", p(&sim), "--seed", "9", "--out", p(&out)]);
        let mut r = json(out.join("report.json"));
        r.as_object_mut().unwrap().remove("wall_clock_seconds");
        payloads.push(r);
    }
    assert_eq!(payloads[0], payloads[1]);
}

#[test]
fn missing_input_fails_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = hca(&["pipeline", p(&tmp.path().join("nope")), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hca pipeline"));
    assert!(!out.exists());
}

#[test]
fn invalid_config_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path());
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"pipeline": {"d0": 0}}"#).unwrap();
    let out = tmp.path().join("out");
    let o = hca(&["pipeline", p(&sim), "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn config_file_sections_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"simulate": {"domains": 2, "samples": 50, "seed": 4}}"#).unwrap();
    let out = tmp.path().join("sim");
    let o = Command::new(env!("CARGO_BIN_EXE_hca"))
        .args(["simulate", "--out", p(&out)])
        .env("HCA_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(o.status.success());
    let r = json(out.join("report.json"));
    assert_eq!(r["seed"], 4);
    assert_eq!(r["result"]["domains"].as_array().unwrap().len(), 2);
    assert_eq!(r["result"]["rows"][0], 50);
}

#[test]
fn ica_output_feeds_hca() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path());
    let ica = tmp.path().join("ica");
    ok(&["ica", p(&sim), "--out", p(&ica)]);
    let out = tmp.path().join("hca");
    ok(&["hca", p(&ica.join("unmixing.json")), "--out", p(&out)]);
    let sol = json(out.join("solution.json"));
    assert!(sol["mic"].as_f64().unwrap() < 0.05);
    assert!(out.join("graphs/domain4.dot").exists());
}

#[test]
fn pca_writes_distance_matrix() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path());
    let out = tmp.path().join("pca");
    ok(&["pca", p(&sim), "--rank", "3", "--out", p(&out)]);
    let csv = fs::read_to_string(out.join("distances.csv")).unwrap();
    assert!(csv.starts_with(",domain1,domain2,domain3,domain4"));
    assert_eq!(csv.lines().count(), 5);
    assert!(out.join("heatmap.json").exists());
}

#[test]
fn completion_experiment_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    ok(&["simulate", "--samples", "80", "--per-domain-mixing", "--seed", "5", "--out", p(&sim)]);
    let out = tmp.path().join("comp");
    ok(&[
        "complete", p(&sim), "--target", "domain1", "--pattern", "block", "--observed-cols", "0,1,2", "--p", "0.5",
        "--solver", "block", "--rank", "3", "--repeats", "3", "--out", p(&out),
    ]);
    let r = json(out.join("report.json"));
    assert_eq!(r["result"]["per_repeat"].as_array().unwrap().len(), 3);
    let mask = fs::read_to_string(out.join("mask.csv")).unwrap();
    assert_eq!(mask.lines().count(), 80);
}

#[test]
fn unknown_completion_target_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path());
    let o = hca(&["complete", p(&sim), "--target", "nope", "--out", p(&tmp.path().join("c"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ingest_golden_leaderboard() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ing");
    ok(&[
        "ingest",
        p(&fixture("leaderboard_small.csv")),
        "--treated-col",
        "Fine-tuned",
        "--out",
        p(&out),
    ]);
    let mut got = csv::Reader::from_path(out.join("attribution.csv")).unwrap();
    let mut want = csv::Reader::from_path(fixture("attribution_expected.csv")).unwrap();
    let got: Vec<Vec<String>> = got
        .records()
        .map(|r| r.unwrap().iter().take(3).map(String::from).collect())
        .collect();
    let want: Vec<Vec<String>> = want.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    assert_eq!(got, want);

    let r = json(out.join("report.json"));
    assert_eq!(r["result"]["dropped"].as_array().unwrap().len(), 1);
    assert_eq!(r["result"]["score_divisor"], 100.0);
    assert_eq!(r["result"]["unattributed"], 5);
    assert!(out.join("Gemma-2-9B.csv").exists());

    let sc = tmp.path().join("sc");
    // only the four Gemma rows have token counts: too few to fit
    let o = hca(&["scaling", p(&out.join("attribution.csv")), "--out", p(&sc)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("4 rows"));
    assert!(!sc.exists());
}

#[test]
fn scaling_recovers_sigmoid() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("sc.csv");
    let mut s = String::from("model,compute,treated,IFEval\n");
    for i in 0..120 {
        let u = i as f64 / 119.0;
        let lc = (21.0 + 4.0 * u) * 10f64.ln();
        let t = (i % 2) as f64;
        let y = 0.6 / (1.0 + (-1.2 * (lc - 1e23f64.ln())).exp()) + 0.1 + 0.05 * t;
        s.push_str(&format!("m{i},{:e},{t},{y}\n", lc.exp()));
    }
    s.push_str("no-compute,,1,0.5\n");
    fs::write(&path, s).unwrap();
    let out = tmp.path().join("out");
    ok(&["scaling", p(&path), "--out", p(&out)]);
    let r = json(out.join("report.json"));
    assert_eq!(r["result"]["rows_excluded"], 1);
    let fit = &r["result"]["fits"][0];
    assert!((fit["fit"]["k"].as_f64().unwrap() - 1.2).abs() < 1e-4);
    assert!((fit["ate"]["ate"].as_f64().unwrap() - 0.05).abs() < 1e-6);
    assert!(fit["ate"]["warning"].as_str().unwrap().contains("ignorability"));
    assert!(fs::read_to_string(out.join("sweep.csv")).unwrap().starts_with("benchmark,kind,compute,treated,y"));
}
