use std::path::Path;
use std::process::{Command, Output};

use ssm_influence::io::{read_report_csv, read_report_json, save_checkpoint, synth_model};
use ssm_influence::model::ModelConfig;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ssm-influence"));
    c.env_remove("SSM_INFLUENCE_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth(dir: &Path) -> String {
    let model = dir.join("model");
    let m = model.to_str().unwrap().to_string();
    let o = run(&["synth", "--out", &m, "--d-model", "16", "--n-layers", "4", "--d-state", "4"]);
    assert!(o.status.success(), "{o:?}");
    m
}

#[test]
fn analyze_prints_scores_and_layer_matrix() {
    let tmp = tempfile::tempdir().unwrap();
    let model = synth(tmp.path());
    let o = run(&["analyze", "--model", &model, "--ids", "1,2,3,4,5"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let token_lines = text.lines().filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit())).count();
    assert_eq!(token_lines, 5);
    let layer_lines: Vec<&str> = text.lines().filter(|l| l.starts_with("layer ")).collect();
    assert_eq!(layer_lines.len(), 4);
    assert!(layer_lines.iter().all(|l| l.split('\t').count() == 6));

    let o = run(&["analyze", "--model", &model, "--ids", "1,2,3,4,5", "--layers", "0..3"]);
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("layer ")).count(), 3);
}

#[test]
fn analyze_writes_parseable_files() {
    let tmp = tempfile::tempdir().unwrap();
    let model = synth(tmp.path());
    let manifest = Path::new(&model).join("prompts/layers.json");
    let out = tmp.path().join("a");
    for fmt in ["csv", "json"] {
        let o = run(&[
            "analyze", "--model", &model, "--manifest", manifest.to_str().unwrap(), "--out", out.to_str().unwrap(),
            "--format", fmt, "--max-new-tokens", "3", "--b-mode", "delta", "--convention", "standard",
        ]);
        assert!(o.status.success(), "{o:?}");
    }
    let csv = std::fs::read_to_string(out.join("analysis.csv")).unwrap();
    assert!(csv.starts_with("entry,category,token_index,token_id,generated,layer,score\n"));
    let docs: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("analysis.json")).unwrap()).unwrap();
    let first = &docs[0]["profile"];
    assert_eq!(first["scaling_mode"], "delta_scaled_b");
    assert_eq!(first["adjacency_convention"], "one_abar_at_j_eq_k_plus_1");
    assert_eq!(docs.as_array().unwrap().len(), 6);
}

#[test]
fn generate_is_seed_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let model = synth(tmp.path());
    let args = ["generate", "--model", &model, "--text", "The cat", "--max-new-tokens", "12", "--seed", "4"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["tokens"].as_array().unwrap().len(), 7 + 12);
}

#[test]
fn experiment_reports_parse_back() {
    let tmp = tempfile::tempdir().unwrap();
    let model = synth(tmp.path());
    let out = tmp.path().join("r");
    let o = run(&[
        "experiment", "perturbation", "--model", &model, "--out", out.to_str().unwrap(), "--runs", "2",
        "--max-new-tokens", "3",
    ]);
    assert!(o.status.success(), "{o:?}");
    let rows = read_report_csv(out.join("perturbation.csv")).unwrap();
    assert_eq!(rows.len(), 5 * 3);
    let o = run(&[
        "experiment", "temperature", "--model", &model, "--out", out.to_str().unwrap(), "--runs", "2",
        "--max-new-tokens", "3", "--format", "json",
    ]);
    assert!(o.status.success());
    let r = read_report_json(out.join("temperature.json")).unwrap();
    assert!(r.summary_value("all", "spearman_rho").is_some());
}

#[test]
fn threads_env_overrides_jobs() {
    let tmp = tempfile::tempdir().unwrap();
    let model = synth(tmp.path());
    let out = tmp.path().join("r");
    let args = [
        "experiment", "position", "--model", &model, "--out", out.to_str().unwrap(), "--runs", "1",
        "--max-new-tokens", "2", "--jobs", "3",
    ];
    let bad = bin().args(args).env("SSM_INFLUENCE_THREADS", "many").output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let good = bin().args(args).env("SSM_INFLUENCE_THREADS", "1").output().unwrap();
    assert!(good.status.success());
}

#[test]
fn input_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let model = synth(tmp.path());
    assert_eq!(run(&["analyze", "--model", "/nonexistent/model", "--ids", "1"]).status.code(), Some(1));
    assert_eq!(run(&["experiment", "bogus", "--model", &model, "--out", "x"]).status.code(), Some(1));
    assert_eq!(run(&["analyze", "--model", &model, "--ids", "1", "--frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["analyze", "--model", &model, "--ids", "999"]).status.code(), Some(1));
    assert_eq!(run(&["analyze", "--model", &model, "--ids", "1", "--layers", "9"]).status.code(), Some(1));
    assert_eq!(run(&["generate", "--model", &model, "--ids", "1", "--top-p", "0"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn numeric_failure_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ModelConfig::new(16, 1, 256);
    cfg.d_state = 4;
    let mut b = synth_model(&cfg, 0).unwrap();
    // Tied logits overflow f32 with embeddings this large.
    b.embedding.data.iter_mut().for_each(|v| *v = if *v >= 0.0 { 3e38 } else { -3e38 });
    save_checkpoint(&b, tmp.path()).unwrap();
    let o = run(&["analyze", "--model", tmp.path().to_str().unwrap(), "--ids", "1,2"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn verify_passes_and_detects_injected_fault() {
    let o = run(&["verify", "--cases", "10"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("cases=10 "));
    let o = run(&["verify", "--cases", "5", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("FAIL"));
    assert_eq!(run(&["verify", "--suite", "nope"]).status.code(), Some(1));
}
