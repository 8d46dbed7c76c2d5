use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use liftseg::io::{read_fstk, save_gray_png, save_label_png};
use liftseg::synthetic::{three_texture_montage, two_texture_composite};
use liftseg::LabelMap;
use ndarray::arr2;
use serde_json::Value;
use tempfile::TempDir;

fn liftseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_liftseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn composite(&self, size: usize) -> PathBuf {
        let s2 = 2f64.sqrt();
        let p = self.path("composite.png");
        save_gray_png(&two_texture_composite(size, s2 / 4.0, s2 / 16.0).unwrap(), &p).unwrap();
        p
    }

    fn montage(&self, size: usize) -> (PathBuf, PathBuf) {
        let (img, truth) = three_texture_montage(size).unwrap();
        let (pi, pt) = (self.path("montage.png"), self.path("truth.png"));
        save_gray_png(&img, &pi).unwrap();
        save_label_png(&truth, &pt).unwrap();
        (pi, pt)
    }

    /// A three-group spec whose kernels fit a 128 px image.
    fn small_spec(&self) -> PathBuf {
        self.write(
            "spec.json",
            r#"{"groups": [
                [{"theta": 0.0, "omega": 0.3536}, {"theta": 0.7854, "omega": 0.7071}],
                [{"theta": 0.0, "omega": 0.1768}],
                [{"theta": 0.0, "omega": 0.0884}]
            ]}"#,
        )
    }

    fn features(&self) -> PathBuf {
        let input = self.composite(128);
        let out = self.path("features.fstk");
        let r = liftseg(&["lift-gabor", "--input", &s(&input), "--spec", &s(&self.small_spec()), "--output", &s(&out)]);
        assert!(r.status.success(), "{}", stderr(&r));
        out
    }
}

#[test]
fn lift_gabor_writes_stack_with_expected_header() {
    let fx = Fixture::new();
    let out = fx.features();
    let bytes = std::fs::read(&out).unwrap();
    assert_eq!(&bytes[..4], b"FSTK");
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    assert_eq!((word(1), word(2), word(3), word(4)), (1, 3, 128, 128));
    assert_eq!(bytes.len(), 20 + 4 * 3 * 128 * 128);
    assert!(read_fstk(&out).unwrap().maps().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn lift_gabor_rejects_missing_input_without_output() {
    let fx = Fixture::new();
    let out = fx.path("never.fstk");
    let r = liftseg(&["lift-gabor", "--input", &s(&fx.path("nope.png")), "--spec", &s(&fx.small_spec()), "--output", &s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn lift_gabor_names_the_bad_filter() {
    let fx = Fixture::new();
    let input = fx.composite(64);
    let spec = fx.write("bad.json", r#"{"groups": [[{"theta": 0, "omega": 0.3}], [{"theta": 0, "omega": 0.2}, {"theta": 0, "omega": 0}]]}"#);
    let out = fx.path("never.fstk");
    let r = liftseg(&["lift-gabor", "--input", &s(&input), "--spec", &s(&spec), "--output", &s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(stderr(&r).contains("filter 2"), "{}", stderr(&r));
    assert!(!out.exists());

    let garbage = fx.write("garbage.json", "{not json");
    let r = liftseg(&["lift-gabor", "--input", &s(&input), "--spec", &s(&garbage), "--output", &s(&out)]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn lift_cnn_validates_alphas() {
    let fx = Fixture::new();
    let input = fx.composite(16);
    let out = fx.path("never.fstk");
    let r = liftseg(&["lift-cnn", "--input", &s(&input), "--alpha1", "0.6", "--alpha2", "0.5", "--output", &s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(stderr(&r).contains("alpha1+alpha2 must be < 1"), "{}", stderr(&r));
    assert!(!out.exists());
}

#[test]
fn lift_cnn_reports_divergence_with_exit_3() {
    let fx = Fixture::new();
    let input = fx.composite(16);
    let r = liftseg(&["lift-cnn", "--input", &s(&input), "--iters", "5", "--lr", "1e300", "--output", &s(&fx.path("x.fstk"))]);
    assert_eq!(r.status.code(), Some(3), "{}", stderr(&r));
}

#[test]
fn lift_cnn_writes_trace_and_params() {
    let fx = Fixture::new();
    let input = fx.composite(16);
    let (out, params, trace) = (fx.path("f.fstk"), fx.path("p.bin"), fx.path("loss.csv"));
    let r = liftseg(&[
        "lift-cnn", "--input", &s(&input), "--k", "2", "--iters", "12",
        "--output", &s(&out), "--save-params", &s(&params), "--loss-trace", &s(&trace),
    ]);
    assert!(r.status.success(), "{}", stderr(&r));
    assert_eq!(read_fstk(&out).unwrap().dim(), (2, 16, 16));
    let csv = std::fs::read_to_string(&trace).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iteration,loss");
    assert_eq!(lines.len(), 13);
    assert!(lines[1].starts_with("0,"));
    let p = liftseg::cnn::read_params(std::fs::File::open(&params).unwrap()).unwrap();
    assert_eq!(p.channels(), 2);
}

#[test]
fn segment_writes_labels_soft_stack_and_report() {
    let fx = Fixture::new();
    let feats = fx.features();
    let (labels, soft, report) = (fx.path("labels.png"), fx.path("soft.fstk"), fx.path("report.json"));
    let r = liftseg(&[
        "segment", "--features", &s(&feats), "--lambda", "0.2",
        "--output-labels", &s(&labels), "--output-soft", &s(&soft), "--report", &s(&report),
    ]);
    assert!(r.status.success(), "{}", stderr(&r));
    let map = liftseg::io::load_label_png(&labels).unwrap();
    assert_eq!(map.dim(), (128, 128));
    assert_eq!(read_fstk(&soft).unwrap().dim(), (3, 128, 128));
    let v = json_file(&report);
    assert!(v["energy"]["total"].is_number());
    assert!(v["energy"]["admissible"].as_bool().unwrap());
    assert!(v["trace"]["iterations_run"].as_u64().unwrap() >= 1);
    assert!(v["runtime_seconds"].is_number());
}

#[test]
fn segment_validation_failures_exit_2() {
    let fx = Fixture::new();
    let feats = fx.features();
    let labels = fx.path("never.png");
    for extra in [["--lambda", "0"], ["--lambda", "-1"], ["--max-iter", "0"]] {
        let mut args = vec!["segment", "--features", &*feats.to_str().unwrap(), "--output-labels", labels.to_str().unwrap()];
        args.extend(extra);
        let r = liftseg(&args);
        assert_eq!(r.status.code(), Some(2), "{extra:?}");
        assert!(!labels.exists());
    }

    let bytes = std::fs::read(&feats).unwrap();
    let truncated = fx.path("truncated.fstk");
    std::fs::write(&truncated, &bytes[..bytes.len() - 8]).unwrap();
    let r = liftseg(&["segment", "--features", &s(&truncated), "--output-labels", &s(&labels)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(stderr(&r).contains("payload size mismatch"), "{}", stderr(&r));

    let mut bad_magic = bytes;
    bad_magic[0] = b'X';
    let corrupt = fx.path("corrupt.fstk");
    std::fs::write(&corrupt, bad_magic).unwrap();
    let r = liftseg(&["segment", "--features", &s(&corrupt), "--output-labels", &s(&labels)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!labels.exists());
}

#[test]
fn evaluate_reports_hand_counted_dice() {
    let fx = Fixture::new();
    let (pred, truth, report) = (fx.path("pred.png"), fx.path("truth.png"), fx.path("eval.json"));
    save_label_png(&LabelMap::new(arr2(&[[1, 2], [2, 2]]), 3).unwrap(), &pred).unwrap();
    save_label_png(&LabelMap::new(arr2(&[[1, 1], [2, 2]]), 3).unwrap(), &truth).unwrap();
    let r = liftseg(&["evaluate", "--pred", &s(&pred), "--truth", &s(&truth), "--matching", "fixed", "--report", &s(&report)]);
    assert!(r.status.success(), "{}", stderr(&r));
    let dice = json_file(&report)["per_class_dice"].clone();
    assert!((dice[1].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!((dice[2].as_f64().unwrap() - 4.0 / 5.0).abs() < 1e-12);

    let r = liftseg(&["evaluate", "--pred", &s(&truth), "--truth", &s(&truth), "--report", &s(&report)]);
    assert!(r.status.success());
    let same = json_file(&report);
    assert!(same["per_class_dice"].as_array().unwrap().iter().all(|d| d.as_f64() == Some(1.0)));
}

#[test]
fn evaluate_rejects_size_mismatch() {
    let fx = Fixture::new();
    let (a, b, report) = (fx.path("a.png"), fx.path("b.png"), fx.path("eval.json"));
    save_label_png(&LabelMap::new(arr2(&[[1, 2], [2, 2]]), 3).unwrap(), &a).unwrap();
    save_label_png(&LabelMap::new(arr2(&[[1, 2, 0]]), 3).unwrap(), &b).unwrap();
    let r = liftseg(&["evaluate", "--pred", &s(&a), "--truth", &s(&b), "--report", &s(&report)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!report.exists());
}

fn gabor_config(fx: &Fixture) -> PathBuf {
    let spec = liftseg::gabor::GaborSpec::three_texture();
    let cfg = serde_json::json!({ "lifting": "gabor", "gabor_spec": spec, "solver": { "lambda": 0.2 } });
    fx.write("pipeline.json", &cfg.to_string())
}

#[test]
fn pipeline_emits_all_artifacts() {
    let fx = Fixture::new();
    let (input, truth) = fx.montage(160);
    let outdir = fx.path("out");
    let r = liftseg(&[
        "pipeline", "--input", &s(&input), "--config", &s(&gabor_config(&fx)),
        "--outdir", &s(&outdir), "--truth", &s(&truth),
    ]);
    assert!(r.status.success(), "{}", stderr(&r));
    for name in ["features.fstk", "soft.fstk", "labels.png", "overlay.png", "report.json"] {
        assert!(outdir.join(name).is_file(), "{name}");
    }
    let report = json_file(&outdir.join("report.json"));
    assert!(report["failed_stage"].is_null());
    let dice = report["evaluation"]["per_class_dice"].as_array().unwrap();
    assert!(dice[1..].iter().all(|d| d.as_f64().unwrap() > 0.95), "{dice:?}");
}

#[test]
fn pipeline_records_failed_stage() {
    let fx = Fixture::new();
    let input = fx.composite(64);
    // kernel side of 601 px cannot fit the image
    let cfg = r#"{"lifting": "gabor", "gabor_spec": {"groups": [[{"theta": 0, "omega": 0.005}]]}, "solver": {}}"#;
    let outdir = fx.path("out");
    let r = liftseg(&["pipeline", "--input", &s(&input), "--config", &s(&fx.write("c.json", cfg)), "--outdir", &s(&outdir)]);
    assert_eq!(r.status.code(), Some(2));
    let report = json_file(&outdir.join("report.json"));
    assert_eq!(report["failed_stage"], "lifting");
    assert!(report["error"].as_str().unwrap().contains("smaller sigma"));
    assert!(!outdir.join("labels.png").exists());
}

#[test]
fn pipeline_rejects_unwritable_outdir_and_bad_config() {
    let fx = Fixture::new();
    let input = fx.composite(64);
    let blocker = fx.write("file", "");
    let r = liftseg(&["pipeline", "--input", &s(&input), "--config", &s(&gabor_config(&fx)), "--outdir", &s(&blocker.join("sub"))]);
    assert_eq!(r.status.code(), Some(2));

    let missing_section = fx.write("c.json", r#"{"lifting": "cnn", "solver": {}}"#);
    let outdir = fx.path("out");
    let r = liftseg(&["pipeline", "--input", &s(&input), "--config", &s(&missing_section), "--outdir", &s(&outdir)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!outdir.exists());
}

#[test]
fn pipeline_with_cnn_is_reproducible() {
    let fx = Fixture::new();
    let input = fx.composite(32);
    let cfg = fx.write(
        "cnn.json",
        r#"{"lifting": "cnn", "cnn": {"k": 2, "iterations": 30, "seed": 4}, "solver": {"lambda": 0.2}}"#,
    );
    let mut energies = Vec::new();
    for run in ["a", "b"] {
        let outdir = fx.path(run);
        let r = liftseg(&["pipeline", "--input", &s(&input), "--config", &s(&cfg), "--outdir", &s(&outdir)]);
        assert!(r.status.success(), "{}", stderr(&r));
        let report = json_file(&outdir.join("report.json"));
        energies.push((report["segment"]["energy"].clone(), report["segment"]["trace"]["energies"].clone()));
    }
    assert_eq!(energies[0], energies[1]);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(liftseg(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(liftseg(&["segment"]).status.code(), Some(2));
    assert_eq!(liftseg(&["--help"]).status.code(), Some(0));
}
