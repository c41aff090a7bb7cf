mod common;

use std::path::Path;
use std::process::{Command, Output};

use fads::io::{ingest, write_dataset};
use serde_json::Value;

fn fads(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fads")).args(args).output().unwrap()
}

fn data_args<'a>(files: &'a [std::path::PathBuf; 3]) -> Vec<&'a str> {
    vec![
        "--covariates",
        files[0].to_str().unwrap(),
        "--survival",
        files[1].to_str().unwrap(),
        "--groups",
        files[2].to_str().unwrap(),
    ]
}

#[test]
fn test_command_reports_every_group() {
    let dir = tempfile::tempdir().unwrap();
    let files = common::write_two_group_files(dir.path(), 1);
    let mut args = vec!["--threads", "1", "test"];
    args.extend(data_args(&files));
    let out = fads(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    let groups: Vec<&str> = doc["results"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["group"].as_str().unwrap())
        .collect();
    assert_eq!(groups, ["expression", "copy_number"]);
    assert_eq!(doc["ingest"]["n"], 100);

    args.extend(["--group", "copy_number", "--format", "tsv"]);
    let out = fads(&args);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("group\tk_hat\tstatistic"));
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("copy_number\t"));
}

#[test]
fn input_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let files = common::write_two_group_files(dir.path(), 2);
    let mut args = vec!["test"];
    args.extend(data_args(&files));
    args[2] = "missing.csv";
    let out = fads(&args);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no such file"));

    let mut args = vec!["test"];
    args.extend(data_args(&files));
    args.extend(["--group", "nope"]);
    assert_eq!(fads(&args).status.code(), Some(1));

    let bad = dir.path().join("bad_survival.csv");
    let body = std::fs::read_to_string(&files[1]).unwrap().replacen(",1\n", ",2\n", 1);
    std::fs::write(&bad, body).unwrap();
    let mut args = vec!["test"];
    args.extend(data_args(&files));
    args[4] = bad.to_str().unwrap();
    let out = fads(&args);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("status must be 0 or 1"));
}

#[test]
fn tied_events_need_explicit_tie_breaking() {
    let dir = tempfile::tempdir().unwrap();
    let files = common::write_two_group_files(dir.path(), 3);
    let text = std::fs::read_to_string(&files[1]).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[1] = "1.5,1".into();
    lines[2] = "1.5,1".into();
    std::fs::write(&files[1], lines.join("\n") + "\n").unwrap();
    let mut args = vec!["--threads", "1", "test"];
    args.extend(data_args(&files));
    let out = fads(&args);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("rows 1 and 2") && err.contains("--break-ties"), "{err}");
    args.push("--break-ties");
    let out = fads(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["ingest"]["ties_broken"], 1);
}

#[test]
fn factors_command_lists_counts() {
    let dir = tempfile::tempdir().unwrap();
    let files = common::write_two_group_files(dir.path(), 4);
    let mut args = vec!["factors"];
    args.extend(data_args(&files));
    args.extend(["--k", "2"]);
    let out = fads(&args);
    assert!(out.status.success());
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    for g in doc["groups"].as_array().unwrap() {
        assert_eq!(g["k_hat"], 2);
    }
}

fn small_simulation(dir: &Path, stem: &str, threads: &str) -> Value {
    let out_stem = dir.join(stem);
    let out = fads(&[
        "--threads", threads, "simulate", "--n", "60", "--p", "40", "--replicates", "6", "--b0", "0,0.5",
        "--seed", "5", "--out", out_stem.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let tsv = std::fs::read_to_string(out_stem.with_extension("tsv")).unwrap();
    assert!(tsv.starts_with("b0\trejection_rate\tmc_se\n"));
    assert_eq!(tsv.lines().count(), 3);
    let json = std::fs::read_to_string(out_stem.with_extension("json")).unwrap();
    serde_json::from_str(&json).unwrap()
}

#[test]
fn simulation_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_simulation(dir.path(), "a", "1");
    let b = small_simulation(dir.path(), "b", "1");
    let c = small_simulation(dir.path(), "c", "3");
    assert_eq!(a["rows"], b["rows"]);
    assert_eq!(a["rows"], c["rows"]);
    assert_eq!(a["schema_version"], 1);
}

#[test]
fn simulation_rejects_bad_grids() {
    let out = fads(&["simulate", "--b0", "0.5,0.1", "--replicates", "2"]);
    assert_eq!(out.status.code(), Some(1));
    let out = fads(&["simulate", "--case", "7"]);
    assert_eq!(out.status.code(), Some(1));
    let out = fads(&["--threads", "0", "simulate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn written_datasets_read_back_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let files = common::write_two_group_files(dir.path(), 6);
    let first = ingest(&files[0], &files[1], &files[2]).unwrap();
    let copy = dir.path().join("copy");
    write_dataset(&first.data, &first.column_names, &copy).unwrap();
    let second = ingest(
        &copy.join("covariates.csv"),
        &copy.join("survival.csv"),
        &copy.join("groups.csv"),
    )
    .unwrap();
    assert_eq!(first.column_names, second.column_names);
    assert_eq!(first.data.covariates(), second.data.covariates());
    assert_eq!(first.data.times(), second.data.times());
    assert_eq!(first.data.events(), second.data.events());
    assert_eq!(first.data.groups(), second.data.groups());
}
