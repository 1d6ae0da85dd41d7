use std::path::Path;
use std::process::{Command, Output};

use lfps::bench::report::{to_canonical_json, RunReport};

fn lfps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lfps")).args(args).output().unwrap()
}

fn gen(path: &Path, seed: u64) -> Output {
    lfps(&[
        "gen",
        "--n",
        "600",
        "--steps",
        "8",
        "--d",
        "32",
        "--vertical",
        "50,300",
        "--slash",
        "30",
        "--band",
        "2",
        "--heads",
        "2",
        "--sink-gains",
        "0,9",
        "--seed",
        &seed.to_string(),
        "-o",
        path.to_str().unwrap(),
    ])
}

#[test]
fn gen_is_deterministic_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (p, s) in [(&a, 7), (&b, 7), (&c, 8)] {
        let out = gen(p, s);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (a, b, c) = (
        std::fs::read(a).unwrap(),
        std::fs::read(b).unwrap(),
        std::fs::read(c).unwrap(),
    );
    assert_eq!(a, b);
    assert_ne!(a[a.len() - 4..], c[c.len() - 4..]);
}

#[test]
fn run_writes_canonical_report_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.lfps");
    assert!(gen(&trace, 1).status.success());
    let report = dir.path().join("r.json");
    let csv = dir.path().join("r.csv");
    let out = lfps(&[
        "run",
        trace.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
        "--budget",
        "0.05",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let bytes = std::fs::read(&report).unwrap();
    let parsed: RunReport = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(parsed.records.len(), 16);
    assert_eq!(parsed.budget, 0.05);
    assert_eq!(to_canonical_json(&parsed).unwrap(), bytes);
    let rows = std::fs::read_to_string(&csv).unwrap().lines().count();
    assert_eq!(rows, 1 + 16);
}

#[test]
fn replay_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.lfps");
    assert!(gen(&trace, 2).status.success());
    let snaps: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let snap = dir.path().join(format!("s{i}.json"));
            let csv = dir.path().join(format!("c{i}.csv"));
            let out = lfps(&[
                "run",
                trace.to_str().unwrap(),
                "--snapshot",
                snap.to_str().unwrap(),
                "--csv",
                csv.to_str().unwrap(),
                "--no-reference",
            ]);
            assert!(out.status.success());
            std::fs::read(snap).unwrap()
        })
        .collect();
    assert_eq!(snaps[0], snaps[1]);
}

#[test]
fn sweep_prints_grid_and_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.lfps");
    assert!(gen(&trace, 3).status.success());
    let out = lfps(&[
        "sweep",
        trace.to_str().unwrap(),
        "--grid",
        "a=0.1,0.2,0.3",
        "--grid",
        "epsilon=0.8,1.0",
        "--no-oracle",
        "--no-reference",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 7);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("candidate fraction non-increasing in a"));
    assert!(err.contains("bypass rate non-increasing in epsilon"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // usage errors come from clap
    assert_eq!(lfps(&["run"]).status.code(), Some(2));
    assert_eq!(lfps(&["sweep", "x", "--grid", "bogus=1"]).status.code(), Some(2));
    assert_eq!(lfps(&["frobnicate"]).status.code(), Some(2));
    // runtime failures exit 1
    let missing = dir.path().join("missing.lfps");
    let out = lfps(&["run", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let trace = dir.path().join("t.lfps");
    assert!(gen(&trace, 4).status.success());
    let mut bytes = std::fs::read(&trace).unwrap();
    bytes[100] ^= 1;
    let bad = dir.path().join("bad.lfps");
    std::fs::write(&bad, &bytes).unwrap();
    let out = lfps(&["run", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));

    let out = lfps(&["run", trace.to_str().unwrap(), "--budget", "2"]);
    assert_eq!(out.status.code(), Some(1));
    let out = lfps(&[
        "gen",
        "--n",
        "10",
        "--steps",
        "1",
        "--d",
        "32",
        "-o",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
