//! Exercises the installed binary the way a shell user would: flag parsing,
//! exit codes, file outputs.

use std::path::Path;
use std::process::{Command, Output};

use stattn::tensor::format::{read_tensor, write_tensor};
use stattn::tensor::Tensor;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stattn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, contents: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, contents).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(&["bench"]).status.code(), Some(2)); // --n is required
    assert_eq!(run(&["bench", "--n", "16", "--mech", "quantum"]).status.code(), Some(2));
    assert_eq!(run(&["eval", "--dets", "only.json"]).status.code(), Some(2));
    assert_eq!(
        run(&["forward", "--seed", "3", "--out-prefix", "x"]).status.code(),
        Some(2),
        "--seed requires --synth"
    );
}

#[test]
fn config_errors_exit_2() {
    let out = run(&["bench", "--n", "16", "--trials", "2", "--out", "/tmp/unused.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trials"));

    let out = run(&["bench", "--n", "16", "--c", "10", "--heads", "3", "--out", "/tmp/unused.csv"]);
    assert_eq!(out.status.code(), Some(2), "heads must divide channels");
}

#[test]
fn eval_reports_the_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let dets = write(
        dir.path(),
        "dets.json",
        r#"[{"image_id":"a","bbox":[0,0,2,2],"score":0.9,"cls":1},
            {"image_id":"a","bbox":[50,50,2,2],"score":0.8,"cls":1}]"#,
    );
    let gts = write(
        dir.path(),
        "gts.json",
        r#"[{"image_id":"a","bbox":[0,0,2,2],"cls":1},
            {"image_id":"a","bbox":[10,10,2,2],"cls":1}]"#,
    );
    let report = dir.path().join("report.json");
    let out = bin()
        .args(["eval", "--dets", &dets, "--gts", &gts, "--out"])
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("ap50 0.504950"), "stdout: {stdout}");
    assert!(stdout.contains("e_miss 50.000000"), "stdout: {stdout}");
    let value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(value["ap50"].as_f64().unwrap().to_bits(), (51.0f64 / 101.0).to_bits());
    assert!(value["images"].is_array());
}

#[test]
fn eval_accepts_unsorted_input_by_sorting_it() {
    let dir = tempfile::tempdir().unwrap();
    let dets = write(
        dir.path(),
        "dets.json",
        r#"[{"image_id":"a","bbox":[50,50,2,2],"score":0.3,"cls":1},
            {"image_id":"a","bbox":[0,0,2,2],"score":0.9,"cls":1}]"#,
    );
    let gts = write(
        dir.path(),
        "gts.json",
        r#"[{"image_id":"a","bbox":[0,0,2,2],"cls":1}]"#,
    );
    let report = dir.path().join("report.json");
    let out = bin()
        .args(["eval", "--dets", &dets, "--gts", &gts, "--out"])
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(value["ap50"].as_f64().unwrap(), 1.0);
}

#[test]
fn eval_empty_ground_truth_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let dets = write(
        dir.path(),
        "dets.json",
        r#"[{"image_id":"a","bbox":[0,0,2,2],"score":0.9,"cls":1}]"#,
    );
    let gts = write(dir.path(), "gts.json", "[]");
    let report = dir.path().join("report.json");
    let out = bin()
        .args(["eval", "--dets", &dets, "--gts", &gts, "--out"])
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("undefined"));
}

#[test]
fn eval_bad_files_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(
        dir.path(),
        "gts.json",
        r#"[{"image_id":"a","bbox":[0,0,2,2],"cls":1}]"#,
    );
    let report = dir.path().join("report.json");

    let out = bin()
        .args(["eval", "--dets", "/nonexistent/d.json", "--gts", &good, "--out"])
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("/nonexistent/d.json"),
        "missing file should be named: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let garbage = write(dir.path(), "bad.json", "not json at all");
    let out = bin()
        .args(["eval", "--dets", &garbage, "--gts", &good, "--out"])
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json"));

    let out_of_range = write(
        dir.path(),
        "score.json",
        r#"[{"image_id":"a","bbox":[0,0,2,2],"score":1.5,"cls":1}]"#,
    );
    let out = bin()
        .args(["eval", "--dets", &out_of_range, "--gts", &good, "--out"])
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_writes_the_documented_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let out = bin()
        .args(["bench", "--n", "8,16", "--c", "8", "--heads", "2", "--trials", "3", "--warmup", "1", "--out"])
        .arg(&csv)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("mechanism,N,C,heads,trials,mean_ns,std_ns,flops"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4, "2 mechanisms x 2 sizes");
    for row in rows {
        assert_eq!(row.split(',').count(), 8, "row: {row}");
    }
}

#[test]
fn forward_synth_writes_three_levels() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("enc");
    let out = bin()
        .args([
            "forward", "--synth", "--seed", "9", "--base", "6,4", "--channels", "2,3,4",
            "--params-seed", "1", "--out-prefix",
        ])
        .arg(&prefix)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let expect_tokens = [24usize, 6, 2]; // 6x4 halves to 3x2 then 2x1
    for (level, tokens) in (3..=5).zip(expect_tokens) {
        let t = read_tensor(Path::new(&format!("{}_level{level}.json", prefix.display()))).unwrap();
        assert_eq!(t.shape(), &[tokens, 32], "level {level}");
    }
}

#[test]
fn forward_reads_feature_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for (i, (hw, c)) in [((2usize, 2usize), 3usize), ((1, 1), 4), ((1, 1), 5)]
        .iter()
        .enumerate()
    {
        let p = dir.path().join(format!("f{}.json", i + 3));
        write_tensor(&p, &Tensor::filled(vec![hw.0, hw.1, *c], 0.25)).unwrap();
        paths.push(p.to_str().unwrap().to_string());
    }
    let prefix = dir.path().join("out");
    let out = bin()
        .args(["forward", "--features", &paths[0], &paths[1], &paths[2], "--out-prefix"])
        .arg(&prefix)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let t = read_tensor(Path::new(&format!("{}_level3.json", prefix.display()))).unwrap();
    assert_eq!(t.shape(), &[4, 32]);

    // --features and --synth are mutually exclusive
    let out = bin()
        .args([
            "forward", "--features", &paths[0], &paths[1], &paths[2], "--synth", "--out-prefix",
        ])
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // two files are not a feature pyramid
    let out = bin()
        .args(["forward", "--features", &paths[0], &paths[1], "--out-prefix"])
        .arg(dir.path().join("y"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // rank-2 contents are rejected downstream of parsing
    let flat = dir.path().join("flat.json");
    write_tensor(&flat, &Tensor::filled(vec![4, 3], 0.5)).unwrap();
    let out = bin()
        .args([
            "forward", "--features", flat.to_str().unwrap(), &paths[1], &paths[2], "--out-prefix",
        ])
        .arg(dir.path().join("z"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_help_lists_its_flags() {
    // full verify runs (with the timing invariant) happen in the acceptance
    // gate; spending another half minute here would buy nothing
    let out = run(&["verify", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("--seed"));
    assert!(text.contains("--out"));
}
