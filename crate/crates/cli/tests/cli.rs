use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use phytnet::arch::{build_model, count_flops, count_params, ModelConfig};

fn phytnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phytnet"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PHYTNET_RUNS_DIR")
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

const MODEL: &str = r#"{"stem_channels":16,"stage_channels":[16],"blocks_per_stage":[1],
"mid_kernel":3,"out_nodes":4,"num_classes":4,"input_size":200,"groups":4}"#;
const TRAIN: &str = r#"{"max_epochs":2,"batch_size":8}"#;

/// A tiny synthetic dataset plus model and training configs.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.json"), MODEL).unwrap();
    std::fs::write(dir.path().join("t.json"), TRAIN).unwrap();
    let o = phytnet(
        &["synth", "--out", "ds", "--per-class", "3", "--seed", "5"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", text(&o));
    dir
}

fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.clone(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn help_exits_zero() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(phytnet(&["--help"], d.path()).status.code(), Some(0));
    assert_eq!(phytnet(&["cv", "--help"], d.path()).status.code(), Some(0));
}

#[test]
fn unknown_flag_is_usage_error_naming_it() {
    let d = tempfile::tempdir().unwrap();
    let o = phytnet(&["train", "--bogus"], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("--bogus"), "{}", text(&o));
}

#[test]
fn missing_and_invalid_values_are_usage_errors() {
    let d = tempfile::tempdir().unwrap();
    let o = phytnet(&["cv", "--model", "m.json"], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("--data"), "{}", text(&o));
    let o = phytnet(
        &["cv", "--data", "x", "--model", "m.json", "--k", "1"],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("--k"), "{}", text(&o));
    assert_eq!(phytnet(&[], d.path()).status.code(), Some(1));
}

#[test]
fn flops_reports_library_counts() {
    let d = workspace();
    let o = phytnet(
        &["flops", "--model", "m.json", "--input-size", "285"],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let cfg = ModelConfig::from_json(MODEL).unwrap();
    let m = build_model::<f32>(&cfg, 0).unwrap();
    let out = text(&o);
    assert!(
        out.contains(&format!("n_params: {}", count_params(&m))),
        "{out}"
    );
    let g = count_flops(&m, 285).unwrap() / 1e9;
    assert!(out.contains(&format!("gflops: {g:.4}")), "{out}");
}

#[test]
fn missing_model_file_is_runtime_error() {
    let d = tempfile::tempdir().unwrap();
    let o = phytnet(&["flops", "--model", "nope.json"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("reading model config"), "{}", text(&o));
}

#[test]
fn synth_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = phytnet(
            &["synth", "--out", out, "--per-class", "2", "--seed", "9"],
            d.path(),
        );
        assert!(o.status.success());
    }
    let strip = |root: &str| {
        snapshot(&d.path().join(root))
            .into_iter()
            .filter(|(p, _)| p.extension().is_some_and(|e| e == "png"))
            .map(|(p, b)| {
                (
                    p.strip_prefix(d.path().join(root)).unwrap().to_path_buf(),
                    b,
                )
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip("a"), strip("b"));
    assert_eq!(strip("a").len(), 8);
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let pos = 0.5 * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[test]
fn cv_replays_identically_and_reports() {
    let d = workspace();
    let before = snapshot(d.path());
    let run = |out: &str, workers: &str| {
        phytnet(
            &[
                "cv",
                "--data",
                "ds",
                "--k",
                "3",
                "--seed",
                "42",
                "--model",
                "m.json",
                "--train",
                "t.json",
                "--out",
                out,
                "--workers",
                workers,
            ],
            d.path(),
        )
    };
    let a = run("r1", "0");
    assert_eq!(a.status.code(), Some(0), "{}", text(&a));
    assert!(run("r2", "2").status.success());
    // rerunning into an existing directory replaces the log
    assert!(run("r1", "0").status.success());
    let m1 = std::fs::read(d.path().join("r1/metrics.jsonl")).unwrap();
    assert_eq!(
        m1,
        std::fs::read(d.path().join("r2/metrics.jsonl")).unwrap()
    );
    assert_eq!(String::from_utf8_lossy(&m1).lines().count(), 6);

    // inputs untouched
    let after: Vec<_> = snapshot(d.path())
        .into_iter()
        .filter(|(p, _)| !p.starts_with(d.path().join("r1")) && !p.starts_with(d.path().join("r2")))
        .collect();
    assert_eq!(before, after);

    let rep = phytnet(&["report", "--run", "r1"], d.path());
    assert_eq!(rep.status.code(), Some(0));
    let out = text(&rep);
    let rows = out
        .lines()
        .filter(|l| {
            l.split_whitespace()
                .next()
                .is_some_and(|w| w.parse::<usize>().is_ok())
        })
        .count();
    assert_eq!(rows, 3, "{out}");
    let lines: Vec<serde_json::Value> = String::from_utf8_lossy(&m1)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    for col in ["train_loss", "val_loss", "val_f1"] {
        let m = median(lines.iter().map(|v| v[col].as_f64().unwrap()).collect());
        let row = out
            .lines()
            .rev()
            .find(|l| l.trim_start().starts_with(col))
            .unwrap();
        assert!(
            row.contains(&format!("median {m:.4}")),
            "{col}: {row} vs {m}"
        );
    }
    assert!(out.contains("fold0.best.ckpt"));
}

#[test]
fn report_on_empty_dir_fails() {
    let d = tempfile::tempdir().unwrap();
    std::fs::create_dir(d.path().join("empty")).unwrap();
    assert_eq!(
        phytnet(&["report", "--run", "empty"], d.path())
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn train_uses_run_root_and_gradcam_writes_overlay() {
    let d = workspace();
    let o = Command::new(env!("CARGO_BIN_EXE_phytnet"))
        .args([
            "train",
            "--data",
            "ds",
            "--model",
            "m.json",
            "--train-cfg",
            "t.json",
            "--k",
            "3",
        ])
        .current_dir(d.path())
        .env("PHYTNET_RUNS_DIR", d.path().join("runs"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let run = d.path().join("runs/train-seed42");
    for f in [
        "config.json",
        "metrics.jsonl",
        "best.ckpt",
        "norm.json",
        "train_report.json",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let ckpt = run.join("best.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    let o = phytnet(
        &[
            "gradcam",
            "--ckpt",
            ckpt,
            "--image",
            "ds/ring/ring_0000.png",
            "--class",
            "1",
            "--out",
            "ov.png",
        ],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let img = image::open(d.path().join("ov.png")).unwrap();
    assert_eq!((img.width(), img.height()), (200, 200));
    let o = phytnet(
        &[
            "gradcam",
            "--ckpt",
            ckpt,
            "--image",
            "ds/ring/ring_0000.png",
            "--class",
            "4",
            "--out",
            "ov.png",
        ],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("--class"));
}

#[test]
fn sweep_logs_every_trial_and_resumes() {
    let d = workspace();
    std::fs::write(
        d.path().join("s.json"),
        r#"{"channels":[16,32],"blocks_per_stage":[1,1],"input_size":[200,204],"mid_kernel":[1,3],"n_stages":1}"#,
    )
    .unwrap();
    std::fs::write(
        d.path().join("t1.json"),
        r#"{"max_epochs":1,"batch_size":8}"#,
    )
    .unwrap();
    let args = [
        "sweep",
        "--space",
        "s.json",
        "--budget",
        "3",
        "--init-random",
        "2",
        "--candidates",
        "8",
        "--data",
        "ds",
        "--k",
        "3",
        "--train-cfg",
        "t1.json",
        "--out",
        "sw",
    ];
    let o = phytnet(&args, d.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let log = std::fs::read(d.path().join("sw/sweep.jsonl")).unwrap();
    assert_eq!(String::from_utf8_lossy(&log).lines().count(), 3);
    assert!(d.path().join("sw/best_model.json").exists());
    assert!(phytnet(&args, d.path()).status.success());
    assert_eq!(log, std::fs::read(d.path().join("sw/sweep.jsonl")).unwrap());

    let o = phytnet(
        &[
            "sweep",
            "--budget",
            "2",
            "--init-random",
            "3",
            "--data",
            "ds",
        ],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("--init-random"));
}
