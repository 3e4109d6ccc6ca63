use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cotfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cotfuse"))
        .args(args)
        .env_remove("COTFUSE_TEACHER_ENDPOINT")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/teacher")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small and fast: 12 questions, one epoch.
fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    std::fs::write(&path, "[run]\nepochs = 1\n[run.corpus]\nsynthetic = 12\n").unwrap();
    path
}

#[test]
fn help_lists_every_command() {
    let o = cotfuse(&["--help"]);
    assert!(o.status.success());
    for cmd in ["build-corpus", "train", "ablate", "analyze", "eval"] {
        assert!(stdout(&o).contains(cmd), "{cmd}");
    }
    let o = cotfuse(&["train", "--help"]);
    assert!(stdout(&o).contains("[default: full]"));
}

#[test]
fn unknown_config_keys_are_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[run]\nepochz = 2\n[run.fusion]\ngamma = 1.0\n").unwrap();
    let o = cotfuse(&["train", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("run.epochz"));
    assert!(stderr(&o).contains("run.fusion.gamma"));
}

#[test]
fn invalid_values_are_all_listed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[run.fusion]\nbeta = 3.0\n[run.student]\nnum_heads = 3\n").unwrap();
    let o = cotfuse(&["train", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("run.fusion.beta"));
    assert!(stderr(&o).contains("run.student.num_heads"));
}

#[test]
fn bad_mode_lists_the_valid_ones() {
    let o = cotfuse(&["train", "--mode", "greedy"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("single_perspective:<k>"), "{}", stderr(&o));
    let o = cotfuse(&["ablate", "--modes", "full,sideways"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fixed_uniform"));
    let o = cotfuse(&["ablate", "--modes", "full"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_inputs_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.jsonl");
    let o = cotfuse(&["train", "--corpus", s(&missing), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.jsonl"));
    let o = cotfuse(&["eval", "--checkpoint", s(&dir.path().join("x.ckpt"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("x.ckpt"));
}

#[test]
fn live_mode_needs_an_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures();
    let o = cotfuse(&["build-corpus", "--live", "--fixtures", s(&f), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("COTFUSE_TEACHER_ENDPOINT"));
}

#[test]
fn fixture_corpus_drops_the_planted_answers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("keep.toml");
    std::fs::write(&cfg, "[build]\nkeep_fraction_easy = 1.0\n").unwrap();
    let f = fixtures();
    let o = cotfuse(&["build-corpus", "--config", s(&cfg), "--fixtures", s(&f), "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("discarded: 32"), "{}", stdout(&o));
    let data = cotfuse_core::corpus::load_dataset(&dir.path().join("corpus.jsonl")).unwrap();
    assert_eq!(data.len(), 20);
    for sample in &data {
        assert_eq!(sample.num_perspectives(), sample.predictions.len());
        for p in sample.predictions.values() {
            assert!(cotfuse_core::corpus::answers_match(p, &sample.gold_answer));
        }
    }
    assert!(dir.path().join("resolved_config.toml").is_file());
}

#[test]
fn train_eval_and_echoed_config_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = dir.path().join("run");
    let o = cotfuse(&["train", "--config", s(&cfg), "--seed", "4", "--out", s(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["metrics.jsonl", "student.ckpt", "metanet.ckpt", "run_config.json", "resolved_config.toml"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    // the echoed config reproduces the run exactly
    let again = dir.path().join("again");
    let echoed = run.join("resolved_config.toml");
    let o = cotfuse(&["train", "--config", s(&echoed), "--out", s(&again)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(run.join("metrics.jsonl")).unwrap(),
        std::fs::read(again.join("metrics.jsonl")).unwrap()
    );

    let ev = dir.path().join("eval");
    let o = cotfuse(&["eval", "--checkpoint", s(&run), "--synthetic", "6", "--out", s(&ev)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("/6)"));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(ev.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["total"], 6);

    let o = cotfuse(&["eval", "--checkpoint", s(&run), "--synthetic", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ablate_writes_a_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("ab");
    let o = cotfuse(&["ablate", "--config", s(&cfg), "--modes", "full,reactive,single_perspective:2", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for sub in ["full", "reactive", "single_perspective_2"] {
        assert!(out.join(sub).join("metrics.jsonl").is_file(), "{sub}");
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["reference"], "full");
    assert_eq!(report["modes"].as_array().unwrap().len(), 3);
    assert_eq!(report["modes"][0]["volatility_ratio"], 1.0);
    let curves = std::fs::read_to_string(out.join("loss_curves.csv")).unwrap();
    assert!(curves.starts_with("mode,step,epoch,l_sft,l_cons,l_total\n"));
    assert_eq!(curves.lines().count(), 1 + 3 * 12);
}

#[test]
fn analyze_needs_two_compatible_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(cotfuse(&["train", "--config", s(&cfg), "--out", s(&a)]).status.success());
    let o = cotfuse(&["analyze", "--run", s(&a), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));

    let other = dir.path().join("other.toml");
    std::fs::write(&other, "[run]\nepochs = 1\n[run.corpus]\nsynthetic = 12\nsynthetic_seed = 9\n").unwrap();
    assert!(cotfuse(&["train", "--config", s(&other), "--out", s(&b)]).status.success());
    let o = cotfuse(&["analyze", "--run", s(&a), "--run", s(&b), "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("vocabulary"));
}
