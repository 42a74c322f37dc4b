//! Command-line exit codes and error reporting.

use std::fs;
use std::process::{Command, Output};

fn headpose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_headpose"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn missing_manifest_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let r = headpose(&["export-sphere", "--manifest", "/no/such/manifest.jsonl", "--out", out]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("/no/such/manifest.jsonl"));
}

#[test]
fn invalid_inputs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let r = headpose(&["export-sphere", "--manifest", empty.to_str().unwrap(), "--out", out]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("empty manifest"));

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "t_gd = 4\n").unwrap();
    let r = headpose(&["generate", "--config", cfg.to_str().unwrap(), "--out", out]);
    assert_eq!(r.status.code(), Some(1));

    let r = headpose(&["evaluate", "--variant", "upside-down", "--out", out]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn reflection_in_manifest_is_reported_by_index() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.jsonl");
    fs::create_dir_all(dir.path().join("images")).unwrap();
    headpose::raster::Raster::black(8, 8).unwrap().save(&dir.path().join("images/a.bin")).unwrap();
    let line = |pose: &str| {
        format!(r#"{{"image_path":"images/a.bin","pose":{pose},"identity_seed":1,"split":"test","format_version":1}}"#)
    };
    let text = [line("[1,0,0,0,1,0,0,0,1]"), line("[1,0,0,0,1,0,0,0,-1]")].join("\n");
    fs::write(&manifest, text).unwrap();
    let out = dir.path().join("out");
    let r = headpose(&["export-sphere", "--manifest", manifest.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("record 1"), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn help_succeeds() {
    assert_eq!(headpose(&["--help"]).status.code(), Some(0));
}
