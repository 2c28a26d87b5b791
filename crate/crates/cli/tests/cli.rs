use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn explreg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_explreg"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path) {
    let o = explreg(&["synth", "world", "--world-seed", "1"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.join("world/run.cfg").exists());
}

#[test]
fn stages_run_in_sequence() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let cfg = ["-c", "world/run.cfg"];
    for stage in ["parse", "match", "refine", "eval"] {
        let o = explreg(&[&cfg[..], &[stage]].concat(), dir.path());
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let out = dir.path().join("world/out");
    for f in [
        "rules.txt",
        "matches_strict.jsonl",
        "model.ckpt",
        "metrics.json",
        "metrics_source.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert!(out.join("heatmaps/u0000.html").exists());
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["target_f1"].is_number() && metrics["fprd"].is_number());
}

#[test]
fn global_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let o = explreg(
        &[
            "-c",
            "world/run.cfg",
            "--out",
            "elsewhere",
            "--preset",
            "C_strict-only",
            "--seed",
            "3",
            "--set",
            "train.max_epochs=2",
            "refine",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved = fs::read_to_string(dir.path().join("elsewhere/run.resolved.cfg")).unwrap();
    assert!(resolved.contains("preset = C_strict-only"), "{resolved}");
    assert!(resolved.contains("seed = 3"), "{resolved}");
    let log = fs::read_to_string(dir.path().join("elsewhere/train_log.jsonl")).unwrap();
    assert!(log.lines().all(|l| l.contains("\"run\":\"fine-tune (C)\"")));
}

#[test]
fn rejected_explanations_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let path = dir.path().join("world/explanations.txt");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("\nRule: bad\nReference: u0000\nX is 'muslims'. X is religion.\nLabel: hate.\nAttribution score of X should be increased.\n");
    fs::write(&path, text).unwrap();
    let o = explreg(&["-c", "world/run.cfg", "parse"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.lines().any(|l| l.starts_with("error\tbad\t")), "{err}");
    assert!(
        err.lines().any(|l| l.starts_with("error\trejected\t")),
        "{err}"
    );
    let diag = fs::read_to_string(dir.path().join("world/out/diagnostics.tsv")).unwrap();
    assert!(diag.starts_with("error\tbad\t"));
}

#[test]
fn user_errors_exit_one_with_a_parseable_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = explreg(&["parse"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error\tusage\t"));

    let o = explreg(&["-c", "missing.cfg", "pipeline"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error\tio\t"), "{}", stderr(&o));

    synth(dir.path());
    let o = explreg(
        &["-c", "world/run.cfg", "--set", "train.alpha=-1", "pipeline"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error\tconfig\t"), "{}", stderr(&o));

    let o = explreg(&["-c", "world/run.cfg", "eval"], dir.path());
    assert_eq!(o.status.code(), Some(1), "eval without a checkpoint");
}

#[test]
fn divergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let o = explreg(
        &[
            "-c",
            "world/run.cfg",
            "--set",
            "train.lr=1e300",
            "--set",
            "source.lr=1e300",
            "refine",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(
        stderr(&o).starts_with("error\tdiverged\t"),
        "{}",
        stderr(&o)
    );
}
