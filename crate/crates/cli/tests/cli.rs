// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pagemon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pagemon"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = pagemon(&[
        "bench",
        "--workload",
        "seq,rand,zero",
        "--pages",
        "32",
        "--capacity",
        "8",
        "--trials",
        "1",
        "--ladder",
        "--backend",
        "local",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ladder = fs::read_to_string(out_dir.join("ladder.csv")).unwrap();
    assert!(ladder.starts_with("workload,level,mean_us,faults,hits,store_reads,store_writes,multi_writes\n"));
    assert_eq!(ladder.lines().count(), 1 + 3 * 8);
    assert!(Path::new(&out_dir.join("sections.csv")).exists());
    assert!(stdout(&out).contains("+Async reinit"));
}

#[test]
fn replay_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.trace");
    fs::write(
        &trace,
        "# two pages through a one-page engine\nW 1 0x0 7\nW 1 0x1000 8\nR 1 0x10\nR 1 0x1008\n",
    )
    .unwrap();
    let config = dir.path().join("engine.conf");
    fs::write(&config, "capacity = 1\nbackend = local\n").unwrap();
    let out = pagemon(&[
        "replay",
        "--trace",
        trace.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("accesses     4"), "{text}");
    assert!(text.contains("faults       4 (2 zero, 2 copy)"), "{text}");
}

#[test]
fn bad_trace_line_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("bad.trace");
    fs::write(&trace, "R 1 0x0\nX 1 0x0\n").unwrap();
    let out = pagemon(&["replay", "--trace", trace.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn unknown_backend_is_rejected() {
    let out = pagemon(&["bench", "--backend", "tape"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown backend"));
}

#[test]
fn unreachable_store_marks_bench_invalid() {
    let out = pagemon(&[
        "bench",
        "--pages",
        "4",
        "--capacity",
        "2",
        "--trials",
        "1",
        "--backend",
        "memcached:127.0.0.1:1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid report"));
}
