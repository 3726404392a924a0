//! End-to-end runs of the `unfold-mri` binary and the command functions.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use unfold_mri::cli::{cmd_reconstruct, Options};
use unfold_mri::io;
use unfold_mri::phantom::generate_shepp_logan;
use unfold_mri::unet::{init_weights, UNetConfig, UNetWeights};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unfold-mri"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny_dataset(dir: &Path, count: usize) {
    let out = bin(&["dataset", "--count", &count.to_string(), "--n", "16", "--seed", "7", "--out", p(dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

const TINY_NET: [&str; 4] = ["--depth", "1", "--base-channels", "2"];

#[test]
fn dataset_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    tiny_dataset(&a, 3);
    tiny_dataset(&b, 3);
    for f in ["manifest.json", "image_00000.f32", "image_00002.f32", "image_00001.pgm"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let (m, imgs) = io::load_dataset(&a).unwrap();
    assert_eq!((m.count, m.n, imgs.len()), (3, 16, 3));
}

#[test]
fn empty_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    tiny_dataset(tmp.path(), 0);
    let (m, imgs) = io::load_dataset(tmp.path()).unwrap();
    assert_eq!(m.count, 0);
    assert!(imgs.is_empty());
}

#[test]
fn train_writes_history_and_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let ckpt = tmp.path().join("ckpt");
    tiny_dataset(&data, 4);
    let mut args = vec!["train", "--dataset", p(&data), "--out", p(&ckpt), "--epochs", "3", "--batch-size", "2", "--checkpoint-every", "2"];
    args.extend(TINY_NET);
    let out = bin(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let history = io::read_loss_csv(&ckpt.join("loss.csv")).unwrap();
    assert_eq!(history.len(), 3);
    assert!(history.iter().all(|v| v.is_finite()));
    assert!(ckpt.join("checkpoints/epoch_00002/weights.json").exists());
    assert!(!ckpt.join("checkpoints/epoch_00003").exists());
    let mask = io::load_mask(&ckpt.join("mask.json")).unwrap();
    assert_eq!((mask.rho, mask.low_lines), (4, 4));

    // Same flags, same bytes.
    let again = tmp.path().join("again");
    let mut args2 = args.clone();
    args2[4] = p(&again);
    assert_eq!(bin(&args2).status.code(), Some(0));
    for f in ["loss.csv", "weights.json", "enc0_conv1.f32", "final.f32"] {
        assert_eq!(fs::read(ckpt.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn zero_epochs_saves_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let ckpt = tmp.path().join("ckpt");
    tiny_dataset(&data, 2);
    let mut args = vec!["train", "--dataset", p(&data), "--out", p(&ckpt), "--epochs", "0", "--seed", "5"];
    args.extend(TINY_NET);
    assert_eq!(bin(&args).status.code(), Some(0));
    let (m, w) = io::load_weights::<f32>(&ckpt).unwrap();
    assert_eq!(m.seed, 5);
    assert_eq!(w, init_weights::<f32>(UNetConfig::new(16, 1, 2).unwrap(), 5).unwrap());
}

#[test]
fn config_file_supplies_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let ckpt = tmp.path().join("ckpt");
    tiny_dataset(&data, 2);
    let cfg = tmp.path().join("run.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"dataset": "{}", "out": "{}", "epochs": 1, "rho": 8, "low-lines": 2, "depth": 1, "base_channels": 2}}"#,
            p(&data),
            p(&ckpt)
        ),
    )
    .unwrap();
    let out = bin(&["train", "--config", p(&cfg), "--rho", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mask = io::load_mask(&ckpt.join("mask.json")).unwrap();
    assert_eq!((mask.rho, mask.low_lines), (2, 2));
    assert_eq!(io::read_loss_csv(&ckpt.join("loss.csv")).unwrap().len(), 1);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(bin(&["train", "--epochs", "-3"]).status.code(), Some(1));
    assert_eq!(bin(&["dataset", "--n", "15", "--out", p(tmp.path())]).status.code(), Some(1));

    let bad_cfg = tmp.path().join("bad.json");
    fs::write(&bad_cfg, "{ not json").unwrap();
    assert_eq!(bin(&["dataset", "--config", p(&bad_cfg)]).status.code(), Some(1));

    let data = tmp.path().join("data");
    tiny_dataset(&data, 2);
    fs::write(data.join("image_00001.f32"), b"short").unwrap();
    let out = bin(&["train", "--dataset", p(&data), "--out", p(&tmp.path().join("c"))]);
    assert_eq!(out.status.code(), Some(2));

    let good = tmp.path().join("good");
    tiny_dataset(&good, 2);
    let d = tmp.path().join("d");
    let mut args = vec!["train", "--dataset", p(&good), "--out", p(&d), "--epochs", "3", "--lr", "1e30"];
    args.extend(TINY_NET);
    let out = bin(&args);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}

fn options(f: impl FnOnce(&mut Options)) -> Options {
    let mut o = Options::default();
    f(&mut o);
    o
}

#[test]
fn reconstruct_full_mask_and_zero_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let y = generate_shepp_logan(16).unwrap();
    let input = tmp.path().join("y.f32");
    io::write_raw_image(&input, &y).unwrap();
    let y = io::read_raw_image(&input, 16).unwrap();

    let trained = tmp.path().join("w");
    io::save_weights(&trained, &init_weights::<f32>(UNetConfig::new(16, 1, 2).unwrap(), 1).unwrap(), 1).unwrap();
    let full = cmd_reconstruct(&options(|o| {
        o.checkpoint = Some(trained.clone());
        o.input = Some(input.clone());
        o.rho = Some(1);
        o.low_lines = Some(0);
        o.out = Some(tmp.path().join("full"));
    }))
    .unwrap();
    assert!(full.final_image.l2_distance(&y).unwrap() <= 1e-10);

    let zero = tmp.path().join("z");
    io::save_weights(&zero, &UNetWeights::<f32>::zeros(UNetConfig::new(16, 1, 2).unwrap()).unwrap(), 0).unwrap();
    let out_dir = tmp.path().join("zero");
    let r = cmd_reconstruct(&options(|o| {
        o.checkpoint = Some(zero.clone());
        o.input = Some(input.clone());
        o.out = Some(out_dir.clone());
    }))
    .unwrap();
    assert!(r.final_image.l2_distance(&r.aliased).unwrap() <= 1e-12);
    for f in ["index.json", "aliased.pgm", "unet.f32", "corrected.pgm", "corrected_minus_truth.pgm", "corrected_kspace.json", "truth.f32"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }

    // A 32-pixel image against a 16-pixel network is a data error.
    let big = tmp.path().join("big.f32");
    io::write_raw_image(&big, &generate_shepp_logan(32).unwrap()).unwrap();
    let out = bin(&["reconstruct", "--checkpoint", p(&zero), "--input", p(&big), "--n", "32", "--out", p(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reconstruct_from_kspace_file_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let ckpt = tmp.path().join("ckpt");
    tiny_dataset(&data, 3);
    let mut args = vec!["train", "--dataset", p(&data), "--out", p(&ckpt), "--epochs", "1"];
    args.extend(TINY_NET);
    assert_eq!(bin(&args).status.code(), Some(0));

    let (_, imgs) = io::load_dataset(&data).unwrap();
    let mask = io::load_mask(&ckpt.join("mask.json")).unwrap();
    let x = unfold_mri::kspace::subsample(&unfold_mri::kspace::forward_dft_real(&imgs[0]), &mask).unwrap();
    let side = tmp.path().join("scan.json");
    io::save_undersampled(&side, &x).unwrap();
    let rec = tmp.path().join("rec");
    let out = bin(&["reconstruct", "--checkpoint", p(&ckpt), "--kspace", p(&side), "--out", p(&rec)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let index: io::ReconIndex = io::read_json(&rec.join("index.json")).unwrap();
    assert!(index.truth.is_none() && index.differences.is_empty());

    let ev = tmp.path().join("eval");
    let out = bin(&["eval", "--checkpoint", p(&ckpt), "--dataset", p(&data), "--out", p(&ev)]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 3);
    assert!(String::from_utf8_lossy(&out.stdout).contains("corrected"));
}

#[test]
fn separability_command() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin(&["separability", "--n", "64", "--rho", "2", "--low-lines", "12", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("separability.json")).unwrap()).unwrap();
    assert!(v["distance_uniform"].as_f64().unwrap() <= 1e-10);
    assert!(v["distance_low"].as_f64().unwrap() >= 1e-6);
    assert_eq!(v["shift_rows"], 32);
    assert!(tmp.path().join("zero_fill_L0_b.pgm").exists());
}

#[test]
fn sweep_skips_and_clips() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec![
        "sweep", "--n", "16", "--train-count", "3", "--test-count", "2", "--epochs", "1", "--rhos", "1,3,4",
        "--low-lines", "6", "--sweep-low-lines", "0,6", "--out", p(tmp.path()),
    ];
    args.extend(TINY_NET);
    let out = bin(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&fs::read(tmp.path().join("sweep.json")).unwrap()).unwrap();
    let cells: Vec<(u64, u64)> = rows.iter().map(|r| (r["rho"].as_u64().unwrap(), r["low_lines"].as_u64().unwrap())).collect();
    assert_eq!(cells, vec![(1, 0), (4, 6), (4, 0)]);
    assert_eq!(rows[0]["reduction_factor"], 1.0);
    assert!(rows[0]["mse_corrected"].as_f64().unwrap() < 1e-10);
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipping rho=3"));
    assert!(tmp.path().join("rho4_L6/sample/index.json").exists());
    assert!(tmp.path().join("sweep.csv").exists());
}
