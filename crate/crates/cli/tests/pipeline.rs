use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Runs `fsed` from the workspace root with the toy config, writing under `out`.
fn fsed(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsed"))
        .current_dir(root())
        .args(["--config", "configs/toy.toml", "--out"])
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_dirs(o: &Output) -> Vec<PathBuf> {
    assert!(
        o.status.success(),
        "exit {:?}: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap().lines().map(PathBuf::from).collect()
}

fn one_dir(o: &Output) -> PathBuf {
    let d = ok_dirs(o);
    assert_eq!(d.len(), 1, "{d:?}");
    d.into_iter().next().unwrap()
}

fn json(p: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))).unwrap()
}

fn error_record(o: &Output) -> Value {
    serde_json::from_str(String::from_utf8_lossy(&o.stderr).lines().last().unwrap()).unwrap()
}


#[test]
fn full_pipeline() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path();

    let stats = one_dir(&fsed(o, &["stats"]));
    assert_eq!(json(stats.join("manifest.json"))["mentions_kept"], 256);
    assert_eq!(json(stats.join("stats.json"))["n_mentions"], 256);
    assert!(stats.join("bias.json").exists());

    let split = one_dir(&fsed(o, &["split"]));
    let s = json(split.join("split.json"));
    assert_eq!(s["train"].as_array().unwrap().len(), 32);

    let train = one_dir(&fsed(o, &["train", "--seed", "1"]));
    assert!(train.file_name().unwrap().to_str().unwrap().starts_with("train-"));
    assert!(train.to_str().unwrap().ends_with("-seed1"));
    for f in ["config.toml", "split.json", "train_log.jsonl", "valid_report.json", "checkpoint/checkpoint.json"] {
        assert!(train.join(f).exists(), "{f}");
    }
    // the run's split is the standalone split
    assert_eq!(fs::read(train.join("split.json")).unwrap(), fs::read(split.join("split.json")).unwrap());

    let run = train.to_str().unwrap();
    let eval = one_dir(&fsed(o, &["eval", "--run", run]));
    let report = json(eval.join("report.json"));
    assert_eq!(report["n"], 192);
    assert!(report["accuracy"].as_f64().unwrap() > 0.5, "{report}");
    let preds = fs::read_to_string(eval.join("predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 192);

    let debias = one_dir(&fsed(o, &["debias", "--run", run]));
    let entries = json(debias.join("debias.json"));
    assert_eq!(entries.as_array().unwrap().len(), 4);

    // ablate with no variant flags is train followed by eval
    let ablate = one_dir(&fsed(o, &["ablate", "--seed", "1"]));
    let grid = json(ablate.join("grid.json"));
    assert_eq!(grid.as_array().unwrap().len(), 1);
    assert_eq!(grid[0]["report"], report);
}

#[test]
fn training_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--set", "train.epochs=20", "train", "--seed", "5"];
    let da = one_dir(&fsed(a.path(), &args));
    let db = one_dir(&fsed(b.path(), &args));
    assert_eq!(da.file_name(), db.file_name());
    for f in ["valid_report.json", "checkpoint/encoder.bin", "checkpoint/checkpoint.json"] {
        assert!(fs::read(da.join(f)).unwrap() == fs::read(db.join(f)).unwrap(), "{f} differs");
    }
    assert_eq!(log_without_timing(&da), log_without_timing(&db));
}

fn log_without_timing(dir: &Path) -> Vec<Value> {
    fs::read_to_string(dir.join("train_log.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_clock_secs");
            v
        })
        .collect()
}

#[test]
fn exit_codes() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path();

    for args in [
        &["split", "--k", "0"][..],
        &["--set", "data.k=0", "stats"],
        &["--set", "train.epoch=3", "stats"],
        &["nonsense"],
        &["eval"],
    ] {
        let r = fsed(o, args);
        assert_eq!(r.status.code(), Some(1), "{args:?}");
        let e = error_record(&r);
        assert_eq!(e["error"], "usage");
        assert_eq!(e["exit_code"], 1);
    }

    let empty = o.join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let missing = o.join("missing.jsonl");
    for corpus in [&empty, &missing] {
        let r = fsed(o, &["stats", "--corpus", corpus.to_str().unwrap()]);
        assert_eq!(r.status.code(), Some(2));
        assert_eq!(error_record(&r)["error"], "data");
    }
    let r = fsed(o, &["eval", "--run", o.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));

    let r = fsed(o, &["--set", "train.lr_other=1e200", "--set", "train.epochs=3", "train", "--seed", "1"]);
    assert_eq!(r.status.code(), Some(3));
    assert_eq!(error_record(&r)["error"], "runtime");
    let kept: Vec<_> = fs::read_dir(o)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_str().unwrap().starts_with("train-"))
        .collect();
    assert_eq!(kept.len(), 1);
    assert!(kept[0].join("diverged.json").exists());
    assert!(kept[0].join("train_log.jsonl").exists());
}

#[test]
fn existing_run_needs_force() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path();
    let first = one_dir(&fsed(o, &["stats"]));
    let r = fsed(o, &["stats"]);
    assert_eq!(r.status.code(), Some(1));
    assert!(first.join("stats.json").exists());
    let again = one_dir(&fsed(o, &["--force", "stats"]));
    assert_eq!(first, again);
    // no staging leftovers
    assert_eq!(fs::read_dir(o).unwrap().count(), 1);
}
