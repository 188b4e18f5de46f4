use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use vlafaith::synth::{self, PlantSpec};

fn vlafaith(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vlafaith"))
        .args(args)
        .env_remove("VLAFAITH_JOBS")
        .output()
        .expect("binary runs")
}

fn small_corpus(dir: &Path, spec: PlantSpec) {
    let (corpus, ledger) = synth::generate(&spec).unwrap();
    synth::write(dir, &corpus, &ledger).unwrap();
}

fn spec() -> PlantSpec {
    PlantSpec {
        n_clips: 12,
        hallucination_rate: 0.1,
        miss_rate: 0.2,
        stop_violation_rate: 0.3,
        clip_inconsistency_rate: 0.5,
        rng_seed: 5,
        ..PlantSpec::default()
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    for args in [&["--help"][..], &["--version"], &["run-all", "--help"]] {
        let out = vlafaith(args);
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(vlafaith(&["run-all", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(vlafaith(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(vlafaith(&[]).status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = vlafaith(&["load-check", "--data", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    small_corpus(dir.path(), spec());
    let bad = vlafaith(&["baseline", "--data", s(dir.path()), "--eps-v=-1"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn strict_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path(), spec());
    let path = dir.path().join("records.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let patched = text.replacen("\"clip_id\"", "\"extra_field\":1,\"clip_id\"", 1);
    fs::write(&path, patched).unwrap();

    assert_eq!(
        vlafaith(&["load-check", "--data", s(dir.path())]).status.code(),
        Some(0)
    );
    let out = vlafaith(&["load-check", "--data", s(dir.path()), "--strict"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("records.jsonl"));
}

#[test]
fn malformed_line_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path(), spec());
    let path = dir.path().join("futures.jsonl");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("{not json\n");
    fs::write(&path, text).unwrap();
    let out = vlafaith(&["load-check", "--data", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("futures.jsonl:"));
}

#[test]
fn run_all_writes_report_files() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path(), spec());
    let out = dir.path().join("out");
    let res = vlafaith(&["run-all", "--data", s(dir.path()), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["report.json", "report.txt", "records.csv", "pairs.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let tables: Vec<_> = fs::read_dir(out.join("tables")).unwrap().collect();
    assert!(tables.len() >= 6);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["baseline"]["records"], 36);
}

#[test]
fn report_is_byte_identical_across_runs_and_jobs() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path(), spec());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(
        vlafaith(&["run-all", "--data", s(dir.path()), "--out", s(&a), "--jobs", "1"])
            .status
            .success()
    );
    assert!(
        vlafaith(&["run-all", "--data", s(dir.path()), "--out", s(&b), "--jobs", "4"])
            .status
            .success()
    );
    for f in ["report.txt", "records.csv", "pairs.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    // The embedded config records the job count; everything else must match.
    let strip = |p: &Path| {
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
        v["config"]["jobs"] = serde_json::Value::Null;
        v["config"]["out"] = serde_json::Value::Null;
        v
    };
    assert_eq!(strip(&a.join("report.json")), strip(&b.join("report.json")));

    let c = dir.path().join("c");
    assert!(
        vlafaith(&["run-all", "--data", s(dir.path()), "--out", s(&c), "--jobs", "4"])
            .status
            .success()
    );
    let with_out = |p: &Path| fs::read_to_string(p).unwrap().replace(s(&c), s(&b));
    assert_eq!(
        with_out(&c.join("report.json")),
        fs::read_to_string(b.join("report.json")).unwrap()
    );
}

#[test]
fn corpus_without_pairs_marks_section_skipped() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(
        dir.path(),
        PlantSpec {
            n_pairs: Some(0),
            ..spec()
        },
    );
    let out = dir.path().join("out");
    assert!(vlafaith(&["run-all", "--data", s(dir.path()), "--out", s(&out)])
        .status
        .success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report["perturbation"]["skipped"].is_string());
    assert!(report["fidelity"]["records"].is_u64());
}

#[test]
fn config_file_and_flags_layer() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path(), spec());
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "delta_tau = 1.5\nspread_high = 0.9\n").unwrap();
    let out = dir.path().join("out");
    let res = vlafaith(&[
        "perturb-classify",
        "--data",
        s(dir.path()),
        "--config",
        s(&cfg),
        "--delta-tau",
        "0.7",
        "--format",
        "json",
        "--out",
        s(&out),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8(res.stdout).unwrap();
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let text = v.to_string();
    assert!(text.contains("0.7"), "flag did not override: {text}");
    assert!(text.contains("0.9"), "config file ignored: {text}");
}

#[test]
fn csv_format_prints_tables() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path(), spec());
    let res = vlafaith(&["baseline", "--data", s(dir.path()), "--format", "csv"]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    assert!(text.starts_with("# baseline\n"));
    assert!(text.lines().nth(1).unwrap().contains(','));
}

#[test]
fn sweep_lists_every_threshold() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path(), spec());
    let res = vlafaith(&[
        "sweep-delta-tau",
        "--data",
        s(dir.path()),
        "--values",
        "0.25,0.5,1,2",
        "--format",
        "csv",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = String::from_utf8(res.stdout).unwrap();
    assert_eq!(
        text.lines()
            .filter(|l| l.starts_with(|c: char| c.is_ascii_digit()))
            .count(),
        4,
        "{text}"
    );
}

#[test]
fn perturb_round_trips_pnm() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pgm");
    let img = vlafaith::perturb::ImageBuffer::filled(50, 40, 1, 200.0);
    img.write_pnm(&input).unwrap();
    let output = dir.path().join("out.pgm");
    let log = dir.path().join("log.json");
    let res = vlafaith(&["perturb", s(&input), s(&output), "--seed", "3", "--log", s(&log)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let back = vlafaith::perturb::ImageBuffer::read_pnm(&output).unwrap();
    assert_eq!((back.width, back.height), (50, 40));
    assert!(back.pixels.contains(&0.0));
    assert!(fs::read_to_string(&log).unwrap().contains("seed"));
}

#[test]
fn audit_sample_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path(), spec());
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for sheet in [&a, &b] {
        let res = vlafaith(&[
            "audit",
            "sample",
            "--data",
            s(dir.path()),
            "--n",
            "5",
            "--seed",
            "9",
            "--sheet",
            s(sheet),
        ]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 6);
}
