use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn tsd(args: &[&str], cwd: &Path, run_root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tsd"));
    cmd.args(args).current_dir(cwd).env_remove("TSD_RUN_ROOT");
    if let Some(root) = run_root {
        cmd.env("TSD_RUN_ROOT", root);
    }
    cmd.output().expect("spawn tsd")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn failed(out: &Output, code: i32) -> String {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stderr.clone()).unwrap()
}

/// Small enough for a debug build: 6 classes, 1.5 s scenes, narrow nets.
fn tiny_config() -> Value {
    json!({
        "dataset.bank.n_classes": 6,
        "dataset.bank.max_len": 1.0,
        "dataset.n_source_classes": 2,
        "dataset.scene_duration": 1.5,
        "dataset.source_scenes": {"train": 4, "val": 2, "test": 2},
        "dataset.target_scenes": {"train": 4, "val": 2, "test": 2},
        "dataset.references_per_class": 2,
        "student.conv_channels": [3, 4],
        "student.freq_pools": [8, 8],
        "student.gru_hidden": 3,
        "student.fc_hidden": 4,
        "student.kd_dim": 3,
        "conditional_epochs": 2,
        "train.epochs": 1,
        "train.retrain_epochs": 1,
        "train.batch_size": 2,
        "train.seed": 3
    })
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
    source_classes: Vec<String>,
    target_classes: Vec<String>,
}

fn fixture() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    std::fs::write(root.join("tiny.json"), tiny_config().to_string()).unwrap();
    let out = tsd(
        &["--config", "tiny.json", "build-dataset", "--out", "data"],
        &root,
        None,
    );
    let summary: Value = serde_json::from_str(&ok(&out)).unwrap();
    let names = |key: &str| -> Vec<String> {
        summary[key]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap().to_string())
            .collect()
    };
    let (source_classes, target_classes) = (names("source_classes"), names("target_classes"));
    assert_eq!((source_classes.len(), target_classes.len()), (2, 4));
    assert_eq!(summary["splits"]["target/test"]["mixtures"], json!(2));
    Fixture {
        data: root.join("data"),
        _tmp: tmp,
        root,
        source_classes,
        target_classes,
    }
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn build_dataset_is_disjoint_and_reproducible() {
    let fx = fixture();
    let classes = |file: &str| -> std::collections::BTreeSet<String> {
        read(fx.data.join(file))
            .lines()
            .map(|l| {
                serde_json::from_str::<Value>(l).unwrap()["target_class"]
                    .as_str()
                    .unwrap()
                    .to_string()
            })
            .collect()
    };
    assert!(classes("source.jsonl").is_disjoint(&classes("target.jsonl")));
    for line in read(fx.data.join("target.jsonl")).lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["events"].is_null(), v["split"] != "test", "{line}");
    }
    ok(&tsd(
        &["--config", "tiny.json", "build-dataset", "--out", "again"],
        &fx.root,
        None,
    ));
    for f in ["source.jsonl", "target.jsonl", "target_strong.jsonl"] {
        assert_eq!(
            read(fx.data.join(f)),
            read(fx.root.join("again").join(f)),
            "{f}"
        );
    }
    let snapshot: Value = serde_json::from_str(&read(fx.data.join("config.json"))).unwrap();
    assert_eq!(snapshot["dataset.scene_duration"], json!(1.5));
}

#[test]
fn bad_config_and_class_spec_exit_2() {
    let fx = fixture();
    let root = fx.root.as_path();
    let err = failed(
        &tsd(
            &["--set", "train.nope=1", "build-dataset", "--out", "d"],
            root,
            None,
        ),
        2,
    );
    assert!(err.contains("train.nope"), "{err}");
    let (s, t) = (&fx.source_classes, &fx.target_classes);
    let source = format!("dataset.source_classes={}", json!([s[0], s[1]]));
    let target = format!("dataset.target_classes={}", json!([s[1], t[0]]));
    let overlap = tsd(
        &[
            "--config",
            "tiny.json",
            "--set",
            &source,
            "--set",
            &target,
            "build-dataset",
            "--out",
            "d",
        ],
        root,
        None,
    );
    let err = failed(&overlap, 2);
    assert!(
        err.contains("overlap") && err.contains(s[1].as_str()),
        "{err}"
    );
    assert!(!root.join("d/source.jsonl").exists());
}

#[test]
fn missing_prerequisites_exit_3() {
    let fx = fixture();
    let cfg = fx.data.join("config.json");
    let cfg = cfg.to_str().unwrap();
    let err = failed(
        &tsd(
            &[
                "--config",
                cfg,
                "train",
                "--run",
                "r",
                "--phase",
                "w_source_kd",
            ],
            &fx.root,
            None,
        ),
        3,
    );
    assert!(err.contains("f_source.ckpt"), "{err}");
    let err = failed(
        &tsd(&["--config", cfg, "iterate", "--run", "r"], &fx.root, None),
        3,
    );
    assert!(err.contains("f_pseudo.ckpt"), "{err}");
    ok(&tsd(
        &[
            "--config",
            cfg,
            "train",
            "--run",
            "r",
            "--phase",
            "f_source",
            "--no-adversarial",
        ],
        &fx.root,
        None,
    ));
    let err = failed(
        &tsd(
            &["train", "--run", "r", "--phase", "f_pseudo"],
            &fx.root,
            None,
        ),
        3,
    );
    assert!(err.contains("pseudo_labels.json"), "{err}");
    let err = failed(
        &tsd(
            &["evaluate", "--run", "r", "--model", "w_final"],
            &fx.root,
            None,
        ),
        3,
    );
    assert!(err.contains("w_final.ckpt"), "{err}");

    let run = fx.root.join("r");
    let metrics = read(run.join("metrics.csv"));
    assert!(
        metrics.starts_with("phase,epoch,objective,task_loss,kd_loss,val_metric,"),
        "{metrics}"
    );
    assert!(!metrics.contains("domain_loss"));
    let snap: Value = serde_json::from_str(&read(run.join("config.json"))).unwrap();
    assert_eq!(snap["train.adversarial"], json!(false));
    assert_eq!(snap["train.epochs"], json!(1));
}

#[test]
fn full_pipeline_in_one_run_directory() {
    let fx = fixture();
    let runs = fx.root.join("runs");
    let cfg = fx.data.join("config.json");
    let cfg = cfg.to_str().unwrap();
    for phase in ["f_source", "w_source_kd", "w_target", "f_pseudo"] {
        let out: Value = serde_json::from_str(&ok(&tsd(
            &["--config", cfg, "train", "--run", "p", "--phase", phase],
            &fx.root,
            Some(&runs),
        )))
        .unwrap();
        assert_eq!(out["phase"], json!(phase));
    }
    let run = runs.join("p");
    assert!(run.join("config.json").exists() && run.join("pseudo_labels.json").exists());
    let metrics = read(run.join("metrics.csv"));
    assert!(metrics
        .lines()
        .next()
        .unwrap()
        .contains("domain_loss,disc_accuracy"));
    for phase in ["f_source", "w_source_kd", "w_target", "f_pseudo"] {
        assert!(
            metrics.lines().any(|l| l.starts_with(&format!("{phase},"))),
            "{phase}\n{metrics}"
        );
    }

    let table = ok(&tsd(
        &["iterate", "--run", "p", "--max-iterations", "3"],
        &fx.root,
        Some(&runs),
    ));
    assert_eq!(table, read(run.join("iterations.csv")));
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iteration,model,segment_f,event_f,clip_accuracy"
    );
    let rows: Vec<&str> = table
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .collect();
    let iterations: std::collections::BTreeSet<u64> = rows
        .iter()
        .map(|r| r.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(iterations.iter().filter(|&&i| i > 0).count() <= 3);
    assert!(table.lines().last().unwrap().starts_with("# stopped: "));

    let eval = |extra: &[&str]| {
        let mut args = vec!["evaluate", "--run", "p", "--model", "f_final"];
        args.extend_from_slice(extra);
        ok(&tsd(&args, &fx.root, Some(&runs)))
    };
    let first = eval(&[]);
    assert!(first.contains("threshold=0.5"));
    assert!(first.lines().any(|l| l.starts_with("macro,")));
    assert!(first.contains(
        "class,segment_f,segment_precision,segment_recall,event_f,event_precision,event_recall"
    ));
    assert_eq!(read(run.join("eval_f_final_test.csv")), first);
    assert_eq!(
        eval(&[]),
        first,
        "evaluation must be reproducible from the run directory"
    );
    let relaxed = eval(&["--threshold", "0.3", "--out", "low.csv"]);
    assert!(relaxed.contains("threshold=0.3"));
    assert_eq!(read(fx.root.join("low.csv")), relaxed);

    let bogus = fx.root.join("data").join("bogus.jsonl");
    let text = read(fx.data.join("target_strong.jsonl"));
    let first_class = serde_json::from_str::<Value>(text.lines().next().unwrap()).unwrap()
        ["target_class"]
        .as_str()
        .unwrap()
        .to_string();
    std::fs::write(
        &bogus,
        text.replace(&format!("\"{first_class}\""), "\"bogus_class\""),
    )
    .unwrap();
    let err = failed(
        &tsd(
            &[
                "evaluate",
                "--run",
                "p",
                "--manifest",
                bogus.to_str().unwrap(),
            ],
            &fx.root,
            Some(&runs),
        ),
        4,
    );
    assert!(
        err.contains("class mismatch") && err.contains("bogus_class"),
        "{err}"
    );

    let report: Value =
        serde_json::from_str(&ok(&tsd(&["report", "--run", "p"], &fx.root, Some(&runs)))).unwrap();
    for stem in [
        "conditional",
        "f_source",
        "w_source_kd",
        "w_target",
        "f_pseudo",
        "f_final",
        "w_final",
    ] {
        assert!(
            report["checkpoints"].get(stem).is_some(),
            "{stem}: {report}"
        );
    }
    assert_eq!(report["evaluations"].as_array().unwrap().len(), 1);
}

#[test]
fn noise_experiment_writes_one_row_per_rate() {
    let fx = fixture();
    let cfg = fx.data.join("config.json");
    let cfg = cfg.to_str().unwrap();
    let csv = ok(&tsd(
        &[
            "--config",
            cfg,
            "noise-exp",
            "--run",
            "n",
            "--rates",
            "0,0.1,0.2,0.35,0.5",
        ],
        &fx.root,
        None,
    ));
    assert_eq!(csv, read(fx.root.join("n/noise_curve.csv")));
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[0].starts_with("0,"));
    let json: Value = serde_json::from_str(&read(fx.root.join("n/noise_curve.json"))).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 5);
    failed(
        &tsd(
            &["noise-exp", "--run", "n", "--rates", "1.5"],
            &fx.root,
            None,
        ),
        2,
    );
    failed(&tsd(&["noise-exp", "--run", "n"], &fx.root, None), 2);
}

#[test]
fn seeded_runs_are_identical() {
    let fx = fixture();
    let cfg = fx.data.join("config.json");
    let cfg = cfg.to_str().unwrap();
    for run in ["a", "b"] {
        ok(&tsd(
            &[
                "--config", cfg, "train", "--run", run, "--phase", "f_source", "--seed", "11",
            ],
            &fx.root,
            None,
        ));
    }
    let a = fx.root.join("a");
    let b = fx.root.join("b");
    assert_eq!(read(a.join("metrics.csv")), read(b.join("metrics.csv")));
    assert_eq!(
        std::fs::read(a.join("f_source.ckpt")).unwrap(),
        std::fs::read(b.join("f_source.ckpt")).unwrap()
    );
}
