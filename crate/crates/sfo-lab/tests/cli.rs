//! Black-box tests of the command-line surface: exit codes, strict config
//! handling, output layout, and input immutability.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_sfo-lab")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write(path: &Path, content: &str) {
    std::fs::write(path, content).unwrap();
}

/// Builds a tiny car dataset plus a pretrained checkpoint under `dir`.
fn tiny_car_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    let pre = dir.join("pre");
    let cfg = dir.join("pre.json");
    write(&cfg, "{\"iterations\": 20, \"hidden_widths\": [8]}");
    let out = run(&[
        "gen-data",
        "--preset",
        "toy-cars",
        "--seed",
        "5",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_of(&out));
    let out = run(&[
        "pretrain",
        "--data",
        data.to_str().unwrap(),
        "--seed",
        "5",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        pre.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_of(&out));
    (data, pre)
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["gen-data", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("never");

    let out = run(&["frobnicate"]);
    assert_eq!(code(&out), 1);

    let out = run(&[
        "train-sfo",
        "--data",
        "somewhere",
        "--seed",
        "1",
        "--out",
        missing.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr_of(&out).contains("--checkpoint"));
    assert!(!missing.exists(), "usage error must not create outputs");

    let out = run(&["pretrain", "--data", "somewhere", "--out", missing.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr_of(&out).contains("--seed"));
    assert!(!missing.exists());

    let out = run(&["gen-data", "--seed", "1", "--out", missing.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr_of(&out).contains("--preset"));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let (data, pre) = tiny_car_fixture(dir.path());

    // Unknown config key, named in the error.
    let bad = dir.path().join("bad.json");
    write(&bad, "{\"betaa\": 5}");
    let out = run(&[
        "pretrain",
        "--data",
        data.to_str().unwrap(),
        "--seed",
        "1",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("x1").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("betaa"));

    // Invalid value, named by key.
    let bad2 = dir.path().join("bad2.json");
    write(&bad2, "{\"beta\": -1}");
    let out = run(&[
        "train-sfo",
        "--checkpoint",
        pre.join("checkpoint.json").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--seed",
        "1",
        "--config",
        bad2.to_str().unwrap(),
        "--out",
        dir.path().join("x2").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr_of(&out).contains("beta"));

    // Unreadable input path.
    let out = run(&[
        "eval",
        "--checkpoint",
        dir.path().join("nope.json").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--seed",
        "1",
        "--out",
        dir.path().join("x3").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn happy_path_writes_manifest_and_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    let (data, pre) = tiny_car_fixture(dir.path());

    for name in ["checkpoint.json", "metrics.jsonl", "effective-config.json", "run-manifest.json"] {
        assert!(pre.join(name).exists(), "missing {name}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(pre.join("run-manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "pretrain");
    assert_eq!(manifest["seed"], 5);
    assert!(manifest["config_sha256"].as_str().unwrap().len() == 64);
    let outputs: Vec<String> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    assert!(outputs.iter().any(|o| o.ends_with("checkpoint.json")));
    assert!(outputs.iter().any(|o| o.ends_with("metrics.jsonl")));
    let inputs = manifest["input_sha256"].as_array().unwrap();
    assert_eq!(inputs.len(), 1);

    // The effective config file reloads as a valid config for the same run.
    let eff = pre.join("effective-config.json");
    let rerun = dir.path().join("pre2");
    let out = run(&[
        "pretrain",
        "--data",
        data.to_str().unwrap(),
        "--seed",
        "5",
        "--config",
        eff.to_str().unwrap(),
        "--out",
        rerun.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_of(&out));
    let a = std::fs::read(pre.join("checkpoint.json")).unwrap();
    let b = std::fs::read(rerun.join("checkpoint.json")).unwrap();
    assert_eq!(a, b, "effective config rerun must reproduce the checkpoint");
}

#[test]
fn inputs_are_never_mutated() {
    let dir = tempfile::tempdir().unwrap();
    let (data, pre) = tiny_car_fixture(dir.path());
    let snapshot = |root: &Path| -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(root)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        files
            .into_iter()
            .map(|p| (p.display().to_string(), std::fs::read(&p).unwrap()))
            .collect()
    };
    let data_before = snapshot(&data);
    let pre_before = snapshot(&pre);

    let out = run(&[
        "train-sfo",
        "--checkpoint",
        pre.join("checkpoint.json").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--seed",
        "9",
        "--config",
        dir.path().join("sfo.json").to_str().unwrap(),
        "--out",
        dir.path().join("sfo").to_str().unwrap(),
    ]);
    // Config file was not written yet: runtime error, still no mutation.
    assert_eq!(code(&out), 2);
    write(&dir.path().join("sfo.json"), "{\"iterations\": 5}");
    let out = run(&[
        "train-sfo",
        "--checkpoint",
        pre.join("checkpoint.json").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--seed",
        "9",
        "--config",
        dir.path().join("sfo.json").to_str().unwrap(),
        "--out",
        dir.path().join("sfo").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_of(&out));

    assert_eq!(snapshot(&data), data_before);
    assert_eq!(snapshot(&pre), pre_before);
}

#[test]
fn sampling_is_deterministic_and_stderr_only() {
    let dir = tempfile::tempdir().unwrap();
    let (data, pre) = tiny_car_fixture(dir.path());
    let cfg = dir.path().join("ev.json");
    write(
        &cfg,
        "{\"sampler\": {\"steps\": 6, \"guidance_scale\": 1.0, \"cond_dropout_p\": 0.1}}",
    );
    let sample_args = |out: &Path| {
        vec![
            "sample".to_string(),
            "--checkpoint".to_string(),
            pre.join("checkpoint.json").display().to_string(),
            "--data".to_string(),
            data.display().to_string(),
            "--seed".to_string(),
            "77".to_string(),
            "--n".to_string(),
            "4".to_string(),
            "--config".to_string(),
            cfg.display().to_string(),
            "--out".to_string(),
            out.display().to_string(),
        ]
    };
    let s1 = dir.path().join("s1");
    let s2 = dir.path().join("s2");
    let o1 = Command::new(bin()).args(sample_args(&s1)).output().unwrap();
    let o2 = Command::new(bin()).args(sample_args(&s2)).output().unwrap();
    assert_eq!(code(&o1), 0, "{}", stderr_of(&o1));
    assert_eq!(code(&o2), 0);
    // Machine output goes to files; stdout stays empty.
    assert!(o1.stdout.is_empty());
    assert!(!o1.stderr.is_empty());
    let a = std::fs::read(s1.join("samples.json")).unwrap();
    let b = std::fs::read(s2.join("samples.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn config_schema_prints_resolved_defaults() {
    let out = run(&["train-sfo", "--config-schema"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(value["stage"], "sfo");
    assert_eq!(value["beta"], 1000.0);
    assert_eq!(value["adapter_rank"], 16);
    assert_eq!(value["timestep"]["variant"], "logit_normal");
}

#[test]
fn threads_env_fallback_is_accepted() {
    let out = Command::new(bin())
        .env("SFO_LAB_THREADS", "2")
        .args(["train-sfo", "--config-schema"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let out = Command::new(bin())
        .env("SFO_LAB_THREADS", "not-a-number")
        .args(["train-sfo", "--config-schema"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 1, "bad env value is a usage error");
}
