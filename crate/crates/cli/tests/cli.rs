use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn multinet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multinet"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = multinet(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

const RUN: &str = r#"
version = 1
mode = "update1"
phase1_epochs = 1
phase2_epochs = 1
n_regions = 24
seeds = [0]

[arch]
conv_channels = [4, 8]
channels = 8
hidden = 16
spp_grid = 3
"#;

#[test]
fn generate_train_eval_ground_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("scenes.toml"), "max_objects = 2\n").unwrap();
    fs::write(d.join("run.toml"), RUN).unwrap();
    let (train, val, run) = (
        path(d, "train.mnds"),
        path(d, "val.mnds"),
        path(d, "run.toml"),
    );
    ok(&[
        "generate",
        "--config",
        &path(d, "scenes.toml"),
        "--count",
        "4",
        "--seed",
        "1",
        "--out",
        &train,
    ]);
    ok(&["generate", "--count", "3", "--seed", "2", "--out", &val]);

    let out = path(d, "run");
    ok(&[
        "train",
        "--config",
        &run,
        "--dataset",
        &train,
        "--out",
        &out,
    ]);
    for f in ["model.mnck", "loss_curve.csv", "metrics.csv"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let ck = path(&d.join("run"), "model.mnck");
    let metrics = path(d, "eval.csv");
    ok(&[
        "eval",
        "--checkpoint",
        &ck,
        "--dataset",
        &val,
        "--out",
        &metrics,
    ]);
    let text = fs::read_to_string(&metrics).unwrap();
    assert!(text.starts_with("run-id,mode,T,seed,metric-name,class,value\n"));
    assert!(text.contains(",update1,2,0,det-AP@0.5,all,"));

    ok(&[
        "ground",
        "--checkpoint",
        &ck,
        "--dataset",
        &val,
        "--out",
        &path(d, "ground.csv"),
    ]);
    let g = fs::read_to_string(d.join("ground.csv")).unwrap();
    assert_eq!(g.lines().next(), Some("metric,ungrounded,grounded,delta"));
    assert_eq!(g.lines().count(), 4);

    ok(&[
        "sweep",
        "--checkpoint",
        &ck,
        "--dataset",
        &val,
        "--iterations",
        "3",
        "--out",
        &path(d, "sweep.csv"),
    ]);
    assert_eq!(
        fs::read_to_string(d.join("sweep.csv"))
            .unwrap()
            .lines()
            .count(),
        1 + 4 * 3
    );

    // Re-running eval reproduces the file byte for byte.
    let again = path(d, "eval2.csv");
    ok(&[
        "eval",
        "--checkpoint",
        &ck,
        "--dataset",
        &val,
        "--out",
        &again,
    ]);
    assert_eq!(fs::read(&metrics).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn compare_writes_a_four_row_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.toml"), RUN).unwrap();
    let (train, val) = (path(d, "train.mnds"), path(d, "val.mnds"));
    ok(&["generate", "--count", "3", "--seed", "5", "--out", &train]);
    ok(&["generate", "--count", "2", "--seed", "6", "--out", &val]);
    let out = multinet(&[
        "compare",
        "--config",
        &path(d, "run.toml"),
        "--dataset",
        &train,
        "--val-dataset",
        &val,
        "--out",
        &path(d, "cmp"),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let md = String::from_utf8(out.stdout).unwrap();
    assert_eq!(md.lines().count(), 6);
    let csv = fs::read_to_string(d.join("cmp/comparison.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("mode,metric,seed-0,median"));
    assert_eq!(csv.lines().count(), 13);
}

fn error_line(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(stderr.lines().last().unwrap()).unwrap()
}

#[test]
fn failures_exit_nonzero_with_a_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = path(d, "nope.mnds");
    let e = error_line(&multinet(&[
        "train",
        "--dataset",
        &missing,
        "--out",
        &path(d, "o"),
    ]));
    assert_eq!(e["error"], "io");

    fs::write(d.join("bad.toml"), "version = 1\nlearning_rate = 3\n").unwrap();
    let e = error_line(&multinet(&[
        "train",
        "--config",
        &path(d, "bad.toml"),
        "--out",
        &path(d, "o"),
    ]));
    assert_eq!(e["error"], "config");
    assert!(e["message"].as_str().unwrap().contains("learning_rate"));

    fs::write(d.join("junk.mnds"), b"MNDS\x01\x00\x00\x00garbage").unwrap();
    let e = error_line(&multinet(&[
        "train",
        "--dataset",
        &path(d, "junk.mnds"),
        "--out",
        &path(d, "o"),
    ]));
    assert_eq!(e["error"], "truncated");

    let e = error_line(&multinet(&["train", "--out", &path(d, "o")]));
    assert_eq!(e["error"], "config");
}

#[test]
fn grounding_a_shared_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.toml"), RUN.replace("update1", "shared")).unwrap();
    let data = path(d, "d.mnds");
    ok(&["generate", "--count", "2", "--out", &data]);
    ok(&[
        "train",
        "--config",
        &path(d, "run.toml"),
        "--dataset",
        &data,
        "--out",
        &path(d, "r"),
    ]);
    let ck = path(&d.join("r"), "model.mnck");
    let e = error_line(&multinet(&[
        "ground",
        "--checkpoint",
        &ck,
        "--dataset",
        &data,
        "--out",
        &path(d, "g.csv"),
    ]));
    assert_eq!(e["error"], "invalid_argument");
}
