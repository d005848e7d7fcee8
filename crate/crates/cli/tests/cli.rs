//! End-to-end checks of the `cropseg` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cropseg_cli::dataset::scenes_of;
use cropseg_cli::eval::{evaluate_scenes, load_model};
use cropseg_core::data::io::{load_manifest_scenes, read_labels, read_mask, read_png};
use cropseg_core::data::{rasterize, Split};
use cropseg_core::metrics::METRIC_HEADER;
use cropseg_core::train::HISTORY_HEADER;

fn cropseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cropseg")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cropseg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, n: usize, size: usize) -> PathBuf {
    let data = dir.join("data");
    ok(&["synth", "--out", p(&data), "--n-scenes", &n.to_string(), "--size", &size.to_string(), "--seed", "7", "--test-fraction", "0.25"]);
    data
}

fn config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(
        &path,
        format!("[model]\nname = \"Unet16X32X2\"\n[data]\nmanifest = \"data/manifest.csv\"\noutput_dir = \"out\"\n{body}"),
    )
    .unwrap();
    path
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["images", "labels", "masks"] {
        let mut entries: Vec<_> = std::fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        out.extend(entries.into_iter().map(|e| (e.clone(), std::fs::read(e).unwrap())));
    }
    out.push((dir.join("manifest.csv"), std::fs::read(dir.join("manifest.csv")).unwrap()));
    out
}

#[test]
fn synth_writes_deterministic_consistent_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 4, 48);
    let first = files_under(&data);
    assert_eq!(first.len(), 4 * 3 + 1);
    let manifest = std::fs::read_to_string(data.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 5);
    assert!(manifest.contains(",test\n"));
    synth(tmp.path(), 4, 48);
    assert_eq!(files_under(&data), first);
    for i in 0..4 {
        let labels = read_labels(&data.join(format!("labels/scene_{i:03}.json"))).unwrap();
        let mask = read_mask(&data.join(format!("masks/scene_{i:03}.png"))).unwrap();
        assert_eq!(rasterize(&labels.polygons, 48, 48).unwrap(), mask);
    }
}

#[test]
fn train_with_zero_epochs_writes_initial_state() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 3, 32);
    let cfg = config(tmp.path(), "[train]\nepochs = 0\n");
    ok(&["train", "--config", p(&cfg)]);
    let out = tmp.path().join("out");
    assert_eq!(std::fs::read_to_string(out.join("history.csv")).unwrap(), format!("{HISTORY_HEADER}\n"));
    assert_eq!(std::fs::read(out.join("best.ckpt")).unwrap().len() > 0, true);
    let (model, _) = load_model(&out.join("final.ckpt")).unwrap();
    let fresh = cropseg_core::UNet::<f32>::build(model.config(), 0).unwrap();
    assert_eq!(model.state(), fresh.state());
}

#[test]
fn config_and_data_errors_have_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "");
    let out = cropseg(&["train", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest.csv"));

    let cfg = config(tmp.path(), "[train]\nbatchsize = 4\n");
    let out = cropseg(&["train", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batchsize"));

    assert_eq!(cropseg(&["train"]).status.code(), Some(1));
    assert_eq!(cropseg(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(cropseg(&["--help"]).status.code(), Some(0));
}

#[test]
fn eval_is_repeatable_and_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 4, 32);
    let cfg = config(tmp.path(), "[train]\nepochs = 1\nbatch_size = 4\n");
    ok(&["train", "--config", p(&cfg)]);
    let ckpt = tmp.path().join("out/best.ckpt");
    let args = ["eval", "--config", p(&cfg), "--checkpoint", p(&ckpt), "--split", "test"];
    let first = ok(&args);
    assert_eq!(first, ok(&args));
    let mut lines = first.lines();
    assert_eq!(lines.next(), Some(METRIC_HEADER));
    let record = lines.next().unwrap();
    assert_eq!(
        std::fs::read_to_string(tmp.path().join("out/metrics_test.csv")).unwrap(),
        format!("{METRIC_HEADER}\n{record}\n")
    );

    let (model, norm) = load_model(&ckpt).unwrap();
    let scenes = load_manifest_scenes(&data.join("manifest.csv")).unwrap();
    let report = evaluate_scenes(&model, &norm, &scenes_of(&scenes, Split::Test), 1.0, 0.5).unwrap();
    assert_eq!(record, report.to_record(model.config()));
    assert!(record.starts_with("Unet16X32X2,16,2,32,"));

    let other = config(tmp.path(), "").with_file_name("other.toml");
    std::fs::write(
        &other,
        "[model]\nname = \"Unet16X64X2\"\n[data]\nmanifest = \"data/manifest.csv\"\noutput_dir = \"out\"\n",
    )
    .unwrap();
    let mismatch = cropseg(&["eval", "--config", p(&other), "--checkpoint", p(&ckpt)]);
    assert_eq!(mismatch.status.code(), Some(1));
}

#[test]
fn predict_writes_binary_mask_and_overlay() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 3, 40);
    let cfg = config(tmp.path(), "[train]\nepochs = 0\n");
    ok(&["train", "--config", p(&cfg)]);
    let ckpt = tmp.path().join("out/best.ckpt");
    let pred = tmp.path().join("pred");
    let listed = ok(&[
        "predict",
        "--checkpoint",
        p(&ckpt),
        "--image",
        p(&data.join("images/scene_001.png")),
        "--labels",
        p(&data.join("labels/scene_001.json")),
        "--stride",
        "7",
        "--out",
        p(&pred),
    ]);
    assert_eq!(listed.lines().count(), 3);
    let mask = read_png(&pred.join("scene_001_mask.png")).unwrap();
    assert_eq!(mask.dims(), &[1, 40, 40]);
    assert!(mask.data().iter().all(|&v| v == 0.0 || v == 255.0));
    assert_eq!(read_png(&pred.join("scene_001_overlay.png")).unwrap().dims(), &[3, 40, 40]);
    assert_eq!(read_png(&pred.join("scene_001_prob.png")).unwrap().dims(), &[1, 40, 40]);

    let tiny = tmp.path().join("tiny");
    ok(&["synth", "--out", p(&tiny), "--n-scenes", "1", "--size", "16"]);
    let out = cropseg(&["predict", "--checkpoint", p(&ckpt), "--image", p(&tiny.join("images/scene_000.png")), "--out", p(&pred)]);
    assert_eq!(out.status.code(), Some(0), "a scene equal to the tile size is accepted");
    let small = tmp.path().join("small");
    ok(&["synth", "--out", p(&small), "--n-scenes", "1", "--size", "16"]);
    let cfg32 = tmp.path().join("big.toml");
    std::fs::write(
        &cfg32,
        "[model]\nname = \"Unet32X32X2\"\n[data]\nmanifest = \"data/manifest.csv\"\noutput_dir = \"out32\"\n[train]\nepochs = 0\n",
    )
    .unwrap();
    ok(&["train", "--config", p(&cfg32)]);
    let out = cropseg(&[
        "predict",
        "--checkpoint",
        p(&tmp.path().join("out32/best.ckpt")),
        "--image",
        p(&small.join("images/scene_000.png")),
        "--out",
        p(&pred),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_reports_each_group_once_and_fails_on_fault() {
    let table = ok(&["gradcheck", "--scope", "block"]);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    let mut keys: Vec<String> = rows.iter().map(|r| r.split(',').take(3).collect::<Vec<_>>().join(",")).collect();
    let n = keys.len();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), n);
    assert!(rows.iter().all(|r| r.ends_with(",pass")));

    let out = cropseg(&["gradcheck", "--scope", "layer", "--inject-fault", "relu"]);
    assert_eq!(out.status.code(), Some(4));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.lines().any(|l| l.starts_with("relu,") && l.ends_with(",FAIL")));
    assert_eq!(cropseg(&["gradcheck", "--scope", "galaxy"]).status.code(), Some(1));
}

#[test]
fn benchmark_validates_names_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 2, 32);
    let cfg = config(tmp.path(), "[train]\nepochs = 0\n");
    let empty = ok(&["benchmark", "--config", p(&cfg)]);
    assert_eq!(empty, "ARCHITECTURE,IS,N,MF,DICE,seed,seconds\n");

    let out = cropseg(&["benchmark", "--config", p(&cfg), "Unet16X32X2", "Unet16X30X2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!tmp.path().join("out/benchmark").exists());

    let table = ok(&["benchmark", "--reference-mode", "--config", p(&cfg), "Unet16X32X2", "Unet16X32X2-SE"]);
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("Unet16X32X2,16,2,32,"));
    assert!(rows[2].starts_with("Unet16X32X2-SE,16,2,32,"));
    assert!(rows[1].ends_with(",0,0.000"));

    // DICE equals eval of the per-architecture best checkpoint
    let ckpt = tmp.path().join("out/benchmark/Unet16X32X2/best.ckpt");
    let record = ok(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&tmp.path().join("data/manifest.csv")), "--split", "test", "--out", p(&tmp.path().join("e"))]);
    let soft_dice = record.lines().nth(1).unwrap().split(',').nth(4).unwrap().to_string();
    assert_eq!(rows[1].split(',').nth(4).unwrap(), soft_dice);
}
