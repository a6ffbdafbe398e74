use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pkws(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pkws"))
        .args(args)
        .output()
        .expect("pkws runs")
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn synth(out: &Path, extra: &[&str]) -> Output {
    let out = out.to_string_lossy().into_owned();
    let mut args = vec![
        "synth",
        "--out",
        &out,
        "--speakers",
        "8",
        "--keywords",
        "3",
        "--utterances-per-pair",
        "1",
        "--stream-segments",
        "3",
    ];
    args.extend_from_slice(extra);
    pkws(&args)
}

#[test]
fn missing_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(synth(dir.path(), &[]).status.success());
    let manifest = dir.path().join("manifest.tsv");
    let missing = dir.path().join("nope.ckpt");
    let out = pkws(&[
        "tune-scm",
        "--checkpoint",
        &missing.to_string_lossy(),
        "--manifest",
        &manifest.to_string_lossy(),
        "--pairs",
        "x.tsv",
        "--out",
        &dir.path().to_string_lossy(),
        "--task",
        "to",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let e = error_json(&out);
    assert_eq!(e["error"], "missing-checkpoint");
    assert_eq!(e["kind"], "data");
    assert_eq!(e["exit_code"], 3);
    assert_eq!(e["path"], missing.to_string_lossy().as_ref());
}

#[test]
fn invalid_configuration_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[synth]\nspeakerz = 3\n").unwrap();
    let out = synth(&dir.path().join("a"), &["--config", &cfg.to_string_lossy()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "invalid-config");

    // Held-out speakers must leave someone to train on.
    let b = dir.path().join("b");
    let out = pkws(&[
        "synth",
        "--out",
        &b.to_string_lossy(),
        "--speakers",
        "4",
        "--validation-speakers",
        "2",
        "--test-speakers",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["kind"], "config");
}

#[test]
fn flags_override_config_and_resolved_run_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "seed = 5\n[synth]\nkeywords = 4\nnoise-level = 0.01\n").unwrap();
    let out_dir = dir.path().join("run");
    let out = pkws(&[
        "synth",
        "--config",
        &cfg.to_string_lossy(),
        "--out",
        &out_dir.to_string_lossy(),
        "--keywords",
        "2",
        "--speakers",
        "6",
        "--stream-segments",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run: toml::Table = fs::read_to_string(out_dir.join("run_config.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(run["subcommand"].as_str(), Some("synth"));
    let s = run["synth"].as_table().unwrap();
    assert_eq!(s["keywords"].as_integer(), Some(2));
    assert_eq!(s["seed"].as_integer(), Some(5));
    assert_eq!(s["noise_level"].as_float(), Some(0.01));

    // The recorded run reproduces itself.
    let again = dir.path().join("again");
    let rc = out_dir.join("run_config.toml");
    let out = pkws(&[
        "synth",
        "--config",
        &rc.to_string_lossy(),
        "--out",
        &again.to_string_lossy(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read(out_dir.join("manifest.tsv")).unwrap(),
        fs::read(again.join("manifest.tsv")).unwrap()
    );
    assert_eq!(
        fs::read(out_dir.join("stream.wav")).unwrap(),
        fs::read(again.join("stream.wav")).unwrap()
    );
}

#[test]
fn synth_is_identical_across_schedules() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(synth(&a, &[]).status.success());
    assert!(synth(&b, &["--sequential"]).status.success());
    for f in [
        "manifest.tsv",
        "stream.wav",
        "stream_labels.tsv",
        "audio/spk000_yes_0.wav",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}
