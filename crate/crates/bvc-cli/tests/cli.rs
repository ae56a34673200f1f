use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bvc_cli::{parse_checks, Check, OUT_DIR_ENV};

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
}

fn bvc(args: &[&str]) -> Output {
    bvc_with_env(args, None)
}

fn bvc_with_env(args: &[&str], out_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bvc"));
    cmd.args(args).env_remove(OUT_DIR_ENV);
    if let Some(d) = out_dir {
        cmd.env(OUT_DIR_ENV, d);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stats_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn clean_scenario_passes_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = bvc(&[
        "run",
        bundled("clean.scenario").to_str().unwrap(),
        "--out",
        out,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let stats = stats_json(&dir.path().join("clean-seed1.stats.json"));
    assert_eq!(stats["b_restart"], 0);
    assert!(stats["checks"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["passed"] == true));
    assert_eq!(stats["checks"].as_array().unwrap().len(), Check::ALL.len());
}

#[test]
fn transient_scenario_recovers() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = bvc(&[
        "run",
        bundled("transient.scenario").to_str().unwrap(),
        "--out",
        out,
        "--steps",
        "20000",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let stats = stats_json(&dir.path().join("transient-seed7.stats.json"));
    assert!(stats["b_restart"].as_u64().unwrap() > 0);
    assert!(stats["last_restart_step"].as_u64().unwrap() < 10_000);
}

#[test]
fn malformed_scenario_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scenario");
    fs::write(&bad, "N = 4\nC = two\n").unwrap();
    assert_eq!(
        code(&bvc(&[
            "run",
            bad.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap()
        ])),
        2
    );
    let missing = dir.path().join("missing.scenario");
    assert_eq!(code(&bvc(&["run", missing.to_str().unwrap()])), 2);
    let clean = bundled("clean.scenario");
    assert_eq!(
        code(&bvc(&[
            "run",
            clean.to_str().unwrap(),
            "--checks",
            "nonsense"
        ])),
        2
    );
    assert_eq!(code(&bvc(&["frobnicate"])), 2);
}

#[test]
fn failed_check_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let scenario = bundled("transient.scenario");
    let o = bvc(&[
        "run",
        scenario.to_str().unwrap(),
        "--out",
        out,
        "--steps",
        "150",
        "--checks",
        "stabilized",
    ]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn replay_accepts_produced_traces_and_rejects_edits() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let scenario = bundled("transient.scenario");
    assert_eq!(
        code(&bvc(&[
            "run",
            scenario.to_str().unwrap(),
            "--out",
            out,
            "--steps",
            "3000",
            "--seed",
            "4",
            "--checks",
            "none"
        ])),
        0
    );
    let trace = dir.path().join("transient-seed4.trace.jsonl");
    assert_eq!(code(&bvc(&["replay", trace.to_str().unwrap()])), 0);

    let text = fs::read_to_string(&trace).unwrap();
    let edited = dir.path().join("edited.trace.jsonl");
    fs::write(
        &edited,
        text.replacen("\"kind\":\"send\"", "\"kind\":\"send\",\"note\":1", 1),
    )
    .unwrap();
    let o = bvc(&["replay", edited.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("diverges at line"));

    let truncated = dir.path().join("truncated.trace.jsonl");
    let keep: Vec<&str> = text.lines().take(50).collect();
    fs::write(&truncated, keep.join("\n") + "\n").unwrap();
    assert_eq!(code(&bvc(&["replay", truncated.to_str().unwrap()])), 1);

    let old = dir.path().join("old.trace.jsonl");
    fs::write(&old, text.replacen("\"version\":1", "\"version\":0", 1)).unwrap();
    assert_eq!(code(&bvc(&["replay", old.to_str().unwrap()])), 2);
}

#[test]
fn stats_reads_traces_and_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let scenario = bundled("clean.scenario");
    assert_eq!(
        code(&bvc(&[
            "run",
            scenario.to_str().unwrap(),
            "--out",
            out,
            "--steps",
            "2000"
        ])),
        0
    );
    let o = bvc(&[
        "stats",
        dir.path().join("clean-seed1.trace.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text
        .lines()
        .any(|l| l.starts_with("steps") && l.ends_with("2000")));
    assert!(text
        .lines()
        .any(|l| l.starts_with("b_restart") && l.ends_with(" 0")));

    let junk = dir.path().join("junk.jsonl");
    fs::write(&junk, "not json\n").unwrap();
    assert_eq!(code(&bvc(&["stats", junk.to_str().unwrap()])), 2);
}

#[test]
fn environment_sets_the_default_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = bundled("clean.scenario");
    let o = bvc_with_env(
        &["run", scenario.to_str().unwrap(), "--steps", "500"],
        Some(dir.path()),
    );
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("clean-seed1.trace.jsonl").exists());
    assert!(dir.path().join("clean-seed1.stats.json").exists());
}

#[test]
fn parallel_jobs_match_sequential_output() {
    let seq = tempfile::tempdir().unwrap();
    let par = tempfile::tempdir().unwrap();
    let clean = bundled("clean.scenario");
    let transient = bundled("transient.scenario");
    let args = |d: &Path, jobs: &str| {
        let o = bvc(&[
            "run",
            clean.to_str().unwrap(),
            transient.to_str().unwrap(),
            "--steps",
            "4000",
            "--jobs",
            jobs,
            "--out",
            d.to_str().unwrap(),
            "--checks",
            "none",
        ]);
        assert_eq!(code(&o), 0);
    };
    args(seq.path(), "1");
    args(par.path(), "2");
    for name in ["clean-seed1.trace.jsonl", "transient-seed7.trace.jsonl"] {
        assert_eq!(
            fs::read(seq.path().join(name)).unwrap(),
            fs::read(par.path().join(name)).unwrap()
        );
    }
}

#[test]
fn check_lists_expand() {
    assert_eq!(parse_checks(&["all"]).unwrap(), Check::ALL.to_vec());
    assert!(parse_checks(&["none"]).unwrap().is_empty());
    assert_eq!(
        parse_checks(&["merge, causal,merge"]).unwrap(),
        vec![Check::Causal, Check::Merge]
    );
    assert!(parse_checks(&["nope"]).is_err());
}
