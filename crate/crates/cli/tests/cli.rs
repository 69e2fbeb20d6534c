//! End-to-end checks of the `svs` binary: exit codes, determinism,
//! file formats, and agreement between CLI output and direct library calls.

use std::path::Path;
use std::process::Output;
use svs_core::checkpoint::Checkpoint;
use svs_core::dataset::{self, UttRecord};
use svs_core::models::f0_dar::F0Model;

fn svs(args: &[&str], dir: &Path) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_svs"))
        .args(args)
        .current_dir(dir)
        .env_remove(svs_cli::DATA_ROOT_ENV)
        .output()
        .expect("spawn svs")
}

fn tiny_config(dir: &Path) {
    std::fs::write(
        dir.join("cfg.toml"),
        "[corpus]\nn_songs = 3\nutts_per_song = 1\nnotes_per_utt = 3\n\n[train]\nepochs = 1\n",
    )
    .unwrap();
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn usage_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&svs(&[], tmp.path())), 1);
    assert_eq!(
        code(&svs(
            &["train", "--model", "bogus", "--out", "x.ckpt"],
            tmp.path()
        )),
        1
    );
    // --help is not an error.
    assert_eq!(code(&svs(&["--help"], tmp.path())), 0);
}

#[test]
fn data_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    // No --data flag and no environment variable.
    let out = svs(
        &["train", "--model", "dar-f0", "--out", "x.ckpt"],
        tmp.path(),
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains(svs_cli::DATA_ROOT_ENV));
    // Dataset directory does not exist.
    let out = svs(
        &["evaluate", "--data", "missing", "--pred", "also-missing"],
        tmp.path(),
    );
    assert_eq!(code(&out), 2);
    // Too few songs to split.
    std::fs::write(tmp.path().join("bad.toml"), "[corpus]\nn_songs = 2\n").unwrap();
    let out = svs(
        &["build-corpus", "--out", "data", "--config", "bad.toml"],
        tmp.path(),
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn same_seed_builds_byte_identical_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    tiny_config(tmp.path());
    for out_dir in ["a", "b"] {
        let out = svs(
            &["build-corpus", "--out", out_dir, "--config", "cfg.toml"],
            tmp.path(),
        );
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["manifest.txt", "stats.json", "s000_u00.utt"] {
        let a = std::fs::read(tmp.path().join("a").join(name)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical builds");
    }
}

/// Full pipeline on a 3-song corpus: train, synthesize, evaluate, plot.
#[test]
fn pipeline_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    tiny_config(dir);
    let out = svs(
        &["build-corpus", "--out", "data", "--config", "cfg.toml"],
        dir,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    // Train via the environment-variable data root instead of --data.
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_svs"))
        .args([
            "train",
            "--model",
            "dar-f0",
            "--out",
            "f0.ckpt",
            "--config",
            "cfg.toml",
        ])
        .current_dir(dir)
        .env(svs_cli::DATA_ROOT_ENV, "data")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(dir.join("f0.log.csv")).unwrap();
    assert!(log.starts_with("epoch,train_loss,val_loss\n"));
    assert_eq!(log.lines().count(), 2, "header + one epoch");

    let out = svs(
        &[
            "synthesize",
            "--data",
            "data",
            "--out",
            "pred",
            "--split",
            "test",
            "--f0",
            "f0.ckpt",
        ],
        dir,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    // Raw synthesis must reproduce a direct library call bit-exactly
    // (modulo the f32 storage format).
    let ds = dataset::read_dataset(dir.join("data")).unwrap();
    let ck = Checkpoint::load(dir.join("f0.ckpt")).unwrap();
    let (model, _) = F0Model::from_checkpoint(&ck).unwrap();
    let i = ds
        .entries
        .iter()
        .position(|e| e.split == svs_core::corpus::Split::Test)
        .unwrap();
    let direct = model.generate(&ds.records[i].ctx).unwrap();
    let pred: UttRecord =
        dataset::read_utt(dataset::utt_path(&dir.join("pred"), &ds.entries[i].id)).unwrap();
    assert_eq!(pred.f0.voiced, direct.voiced);
    for (a, b) in pred.f0.f0_hz.iter().zip(&direct.f0_hz) {
        assert_eq!(*a, *b as f32 as f64);
    }

    let out = svs(
        &[
            "evaluate", "--data", "data", "--pred", "pred", "--split", "test", "--out",
            "eval.csv",
        ],
        dir,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("eval.csv")).unwrap();
    assert!(csv.starts_with("id,f0_rmse_natural,"));
    assert!(csv.lines().last().unwrap().starts_with("aggregate,"));

    let id = &ds.entries[i].id;
    let out = svs(
        &[
            "plot", "--data", "data", "--pred", "pred", "--id", id, "--out", "p.svg",
            "--csv", "p.csv",
        ],
        dir,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("p.csv")).unwrap();
    assert_eq!(csv.lines().count(), ds.records[i].frames() + 1);
    // Plotted values parse back to the prediction file's values.
    let row1: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert!((row1[3].parse::<f64>().unwrap() - pred.f0.f0_hz[0]).abs() < 5e-5);
    let svg = std::fs::read_to_string(dir.join("p.svg")).unwrap();
    for label in ["natural", "note", "predicted"] {
        assert!(svg.contains(&format!(">{label}</text>")), "missing {label}");
    }
}

#[test]
fn evaluating_references_against_themselves_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    tiny_config(dir);
    let out = svs(
        &["build-corpus", "--out", "data", "--config", "cfg.toml"],
        dir,
    );
    assert_eq!(code(&out), 0);
    let ds = dataset::read_dataset(dir.join("data")).unwrap();
    std::fs::create_dir(dir.join("pred")).unwrap();
    for (e, r) in ds.entries.iter().zip(&ds.records) {
        let copy = UttRecord {
            ctx: Vec::new(),
            f0: r.f0.clone(),
            spec: r.spec.clone(),
            note_f0: r.note_f0.clone(),
        };
        dataset::write_utt(dataset::utt_path(&dir.join("pred"), &e.id), &copy).unwrap();
    }
    let out = svs(
        &["evaluate", "--data", "data", "--pred", "pred", "--split", "test"],
        dir,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("f0_rmse_natural_hz: 0.0000"), "{text}");
    assert!(text.contains("corr_natural: 1.0000"), "{text}");
    assert!(text.contains("vuv_error_pct: 0.0000"), "{text}");
    assert!(text.contains("mcd_db: 0.0000"), "{text}");
}

#[test]
fn checkpoint_kind_mismatch_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    tiny_config(dir);
    assert_eq!(
        code(&svs(
            &["build-corpus", "--out", "data", "--config", "cfg.toml"],
            dir
        )),
        0
    );
    let out = svs(
        &[
            "train", "--model", "baseline", "--data", "data", "--out", "base.ckpt",
            "--config", "cfg.toml",
        ],
        dir,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    // A baseline checkpoint passed as --f0 must fail with a data error.
    let out = svs(
        &[
            "synthesize", "--data", "data", "--out", "pred", "--split", "test", "--f0",
            "base.ckpt",
        ],
        dir,
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint kind"));
}
