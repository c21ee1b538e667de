use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn remic(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_remic")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = remic(args, cwd);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Runs a command expected to fail and returns its single stderr line.
fn fails(args: &[&str], cwd: &Path) -> String {
    let out = remic(args, cwd);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "), "{err}");
    assert!(!err.contains("panicked"), "{err}");
    err
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures").join("report")
}

const FIXTURE_REPORTS: [&str; 4] = ["zero_single0.kv", "zero_single1.kv", "average_random1.kv", "remic_single1.kv"];

#[test]
fn report_reproduces_golden_table() {
    let dir = fixtures();
    let expected = fs::read_to_string(dir.join("expected_table.txt")).unwrap();
    let mut args = vec!["report"];
    args.extend(FIXTURE_REPORTS);
    assert_eq!(ok(&args, &dir), expected);

    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("table.txt");
    args.extend(["--out", out.to_str().unwrap()]);
    ok(&args, &dir);
    assert_eq!(fs::read(&out).unwrap(), expected.as_bytes());
}

fn digest_dir(dir: &Path) -> Vec<u8> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(dir).unwrap().to_string_lossy().as_bytes());
        h.update(fs::read(&f).unwrap());
    }
    h.finalize().to_vec()
}

#[test]
fn make_synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    for name in ["a", "b"] {
        ok(&["make-synth", "--out", name, "--seed", "7", "--train", "4", "--test", "2"], t);
    }
    ok(&["make-synth", "--out", "c", "--seed", "8", "--train", "4", "--test", "2"], t);
    assert_eq!(fs::read(t.join("a/manifest.txt")).unwrap(), fs::read(t.join("b/manifest.txt")).unwrap());
    assert_eq!(digest_dir(&t.join("a")), digest_dir(&t.join("b")));
    assert_ne!(digest_dir(&t.join("a")), digest_dir(&t.join("c")));
    let err = fails(&["make-synth", "--out", "a"], t);
    assert!(err.contains("not empty"), "{err}");
}

#[test]
fn zero_baseline_has_unit_nrmse() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    ok(&["make-synth", "--out", "ds", "--train", "2", "--test", "4"], t);
    let text = ok(&["evaluate", "--data", "ds", "--baseline", "zero", "--protocol", "single-missing:0", "--out", "r"], t);
    assert!(text.contains("protocol  single-missing:0"), "{text}");
    assert_eq!(text, fs::read_to_string(t.join("r/report.txt")).unwrap());
    let kv = fs::read_to_string(t.join("r/report.kv")).unwrap();
    let nrmse: f64 = kv.lines().find_map(|l| l.strip_prefix("domain.0.nrmse=")).unwrap().parse().unwrap();
    assert_eq!(nrmse, 1.0);
    assert!(!kv.contains("domain.1."));
}

#[test]
fn train_complete_evaluate_and_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    ok(&["make-synth", "--out", "ds", "--train", "6", "--test", "2", "--seed", "3"], t);
    fs::write(
        t.join("c.toml"),
        "iterations = 4\ncheckpoint_every = 2\ncontent_channels = 16\nmlp_hidden = 16\nres_blocks = 1\nseg_mode = \"joint\"\n",
    )
    .unwrap();
    ok(&["train", "--data", "ds", "--out", "run", "--config", "c.toml"], t);
    for f in ["ckpt_000002.bin", "ckpt_000004.bin", "final.bin", "loss.tsv", "config.toml"] {
        assert!(t.join("run").join(f).exists(), "{f}");
    }
    let log = fs::read_to_string(t.join("run/loss.tsv")).unwrap();
    assert_eq!(log.lines().count(), 5);

    ok(&["train", "--data", "ds", "--out", "resumed", "--config", "c.toml", "--resume", "run/ckpt_000002.bin"], t);
    assert_eq!(fs::read(t.join("run/final.bin")).unwrap(), fs::read(t.join("resumed/final.bin")).unwrap());

    let other = t.join("other.toml");
    fs::write(&other, "iterations = 4\ncontent_channels = 16\nmlp_hidden = 16\nres_blocks = 1\n").unwrap();
    let err = fails(&["train", "--data", "ds", "--out", "x", "--config", "other.toml", "--resume", "run/final.bin"], t);
    assert!(err.contains("mismatch"), "{err}");

    ok(&["complete", "--checkpoint", "run/final.bin", "--data", "ds", "--sample", "s00006", "--visible", "1,0,1", "--out", "comp"], t);
    let grid = image::open(t.join("comp/grid.png")).unwrap();
    assert_eq!((grid.width(), grid.height()), (96, 96));
    let kept = image::open(t.join("comp/domain_0.png")).unwrap().into_luma8();
    assert_eq!(kept.dimensions(), (32, 32));

    let text = ok(&["evaluate", "--data", "ds", "--checkpoint", "run/final.bin", "--protocol", "random-k:2:all", "--out", "ev"], t);
    assert!(text.contains("method    ReMIC"), "{text}");
    assert!(text.contains("seg_mode=Joint"), "{text}");
    assert!(text.contains("dice"), "{text}");
}

#[test]
fn failures_are_one_line() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let err = fails(&["evaluate", "--data", "missing", "--baseline", "zero", "--protocol", "single-missing:0", "--out", "r"], t);
    assert!(err.contains("manifest.txt"), "{err}");

    ok(&["make-synth", "--out", "ds", "--train", "2", "--test", "2"], t);
    fs::write(t.join("bad.toml"), "learning_rate = 0.1\n").unwrap();
    let err = fails(&["train", "--data", "ds", "--out", "run", "--config", "bad.toml"], t);
    assert!(err.contains("learning_rate"), "{err}");

    let err = fails(&["evaluate", "--data", "ds", "--baseline", "zero", "--protocol", "random-k:3", "--out", "r"], t);
    assert!(err.contains("k = 3"), "{err}");
    let err = fails(&["evaluate", "--data", "ds", "--baseline", "zero", "--protocol", "sometimes", "--out", "r"], t);
    assert!(err.contains("unknown protocol"), "{err}");
    fs::write(t.join("broken.kv"), "method=Zero\n").unwrap();
    let err = fails(&["report", "broken.kv"], t);
    assert!(err.contains("broken.kv"), "{err}");
}

#[test]
fn config_docs_list_every_key_with_its_default() {
    let docs = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/config.md")).unwrap();
    let documented: Vec<(String, String)> = docs
        .lines()
        .filter_map(|l| {
            let cols: Vec<&str> = l.split('|').map(str::trim).collect();
            let key = cols.get(1)?.strip_prefix('`')?.strip_suffix('`')?;
            let val = cols.get(2)?.strip_prefix('`')?.strip_suffix('`')?;
            Some((key.to_string(), val.to_string()))
        })
        .collect();
    let defaults = remic::RunConfig::default().to_toml();
    let actual: Vec<(String, String)> = defaults
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    assert_eq!(documented, actual);
}
