use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use attn_guide::data::{write_mask, Mask};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attn-guide"))
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(root: &Path, n: usize) -> std::path::PathBuf {
    let cfg = root.join("synth.json");
    fs::write(
        &cfg,
        format!(r#"{{"image_size": 64, "n_studies": {n}, "seed": 2}}"#),
    )
    .unwrap();
    let data = root.join("data");
    let o = bin(&["synth", "--config", p(&cfg), "--out", p(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    data
}

fn tiny_run(root: &Path, data: &Path, extra: &str) -> std::path::PathBuf {
    let cfg = root.join("run.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"dataset": "{}", "n_seeds": 2,
                "train": {{"epochs": 1, "batch_size": 4, "input_size": 64,
                          "backbone": {{"base_channels": 4, "stages": 2, "blocks_per_stage": 1}}}}{extra}}}"#,
            p(data)
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn help_and_version_exit_zero() {
    assert!(bin(&["--help"]).status.success());
    assert!(bin(&["--version"]).status.success());
}

#[test]
fn usage_errors_exit_two() {
    let o = bin(&["train", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[usage]:"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.json");
    fs::write(&cfg, r#"{"n_studys": 3}"#).unwrap();
    let o = bin(&[
        "synth",
        "--config",
        p(&cfg),
        "--out",
        p(&dir.path().join("d")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[config]:") && stderr(&o).contains("n_studys"));
}

#[test]
fn synth_writes_expected_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 10);
    let count = |split: &str| {
        fs::read_dir(data.join(split).join("images"))
            .unwrap()
            .count()
    };
    assert_eq!((count("train"), count("val"), count("test")), (14, 2, 4));
    let labels = fs::read_to_string(data.join("train").join("labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 15);
    assert!(data.join("synth_meta.json").is_file());
}

#[test]
fn convert_skips_empty_masks_and_fails_when_all_empty() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("masks");
    fs::create_dir(&src).unwrap();
    let mut full = Mask::zeros(12, 12);
    for r in 2..9 {
        for c in 3..10 {
            full.set(r, c, true);
        }
    }
    write_mask(&src.join("a.pgm"), &full).unwrap();
    write_mask(&src.join("b.pgm"), &Mask::zeros(12, 12)).unwrap();
    let out = dir.path().join("out");
    let o = bin(&[
        "convert",
        "--masks",
        p(&src),
        "--style",
        "scribble",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("b.pgm"));
    assert!(out.join("a.pgm").is_file() && !out.join("b.pgm").exists());

    fs::remove_file(src.join("a.pgm")).unwrap();
    let o = bin(&[
        "convert",
        "--masks",
        p(&src),
        "--style",
        "bbox",
        "--out",
        p(&out),
    ]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn sweep_writes_tables_and_per_run_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 4);
    let cfg = tiny_run(
        dir.path(),
        &data,
        r#", "sweep": {"lambdas": [1], "styles": ["bbox"]}"#,
    );
    let out = dir.path().join("sweep");
    let o = bin(&[
        "sweep",
        "--config",
        p(&cfg),
        "--out",
        p(&out),
        "--jobs",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let agg = fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert!(agg.starts_with("setting,metric,mean,std,n"));
    assert!(agg.contains("bbox_lambda1,image_acc"));
    let tt = fs::read_to_string(out.join("ttest.csv")).unwrap();
    assert!(tt.starts_with("setting,metric,baseline,test,t,df,p,note"));
    assert_eq!(
        fs::read_to_string(out.join("runs.csv"))
            .unwrap()
            .lines()
            .count(),
        5
    );
    for run in [
        "baseline_s0",
        "baseline_s1",
        "bbox_lambda1_s0",
        "bbox_lambda1_s1",
    ] {
        assert!(
            out.join("runs").join(run).join("metrics.json").is_file(),
            "{run}"
        );
    }
}

#[test]
fn eval_rejects_checkpoint_for_other_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 2);
    let cfg = tiny_run(dir.path(), &data, "");
    let out = dir.path().join("run");
    assert!(bin(&["train", "--config", p(&cfg), "--out", p(&out)])
        .status
        .success());
    let other = dir.path().join("other.json");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace(r#""base_channels": 4"#, r#""base_channels": 8"#);
    fs::write(&other, text).unwrap();
    let o = bin(&["eval", "--config", p(&other), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[load]:"), "{}", stderr(&o));
}
