use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tumorseg::preprocess::{equalize, read_gray, rgb_to_gray, write_pnm, GrayImage, Image, RgbImage};
use tumorseg::training::load_checkpoint;

fn tumorseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tumorseg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, n: usize, side: usize, seed: u64) {
    let out = tumorseg(&[
        "synth", "--n", &n.to_string(), "--side", &side.to_string(), "--seed", &seed.to_string(),
        "--depth", "2", "--out", p(dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

fn train(data: &Path, ckpt: &Path, log: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--data", p(data), "--out", p(ckpt), "--log", p(log), "--epochs", "2", "--batch", "4",
        "--base-channels", "4", "--depth", "2", "--aspp-rates", "1,2",
    ];
    args.extend_from_slice(extra);
    tumorseg(&args)
}

#[test]
fn preprocess_converts_and_equalizes() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    fs::create_dir(&input).unwrap();
    let rgb = RgbImage::new(3, 2, vec![[10, 20, 30], [200, 100, 50], [0, 0, 0], [255, 255, 255], [90, 90, 9], [1, 2, 3]])
        .unwrap();
    write_pnm(&Image::Rgb(rgb.clone()), input.join("scan.ppm")).unwrap();
    let gray = GrayImage::new(2, 2, vec![52, 55, 61, 59]).unwrap();
    write_pnm(&Image::Gray(gray.clone()), input.join("other.pgm")).unwrap();
    fs::write(input.join("notes.txt"), "not an image").unwrap();

    let out_dir = dir.path().join("out");
    let out = tumorseg(&["preprocess", "--in", p(&input), "--out", p(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("2 images"));
    let scan = out_dir.join("scan.pgm");
    assert_eq!(&fs::read(&scan).unwrap()[..2], b"P5");
    assert_eq!(read_gray(&scan).unwrap(), equalize(&rgb_to_gray(&rgb)));
    assert_eq!(read_gray(out_dir.join("other.pgm")).unwrap().pixels(), &[0, 85, 255, 170]);
    assert!(out_dir.join("manifest.txt").exists());

    let plain_dir = dir.path().join("plain");
    let out = tumorseg(&["preprocess", "--in", p(&input), "--out", p(&plain_dir), "--no-equalize"]);
    assert_eq!(code(&out), 0);
    assert_eq!(read_gray(plain_dir.join("scan.pgm")).unwrap(), rgb_to_gray(&rgb));
    assert_eq!(read_gray(plain_dir.join("other.pgm")).unwrap(), gray);
}

#[test]
fn preprocess_empty_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = tumorseg(&["preprocess", "--in", p(dir.path()), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("no input images"));
}

#[test]
fn preprocess_bad_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("broken.pgm"), b"P5\n4 4\n255\n\x01").unwrap();
    let out = tumorseg(&["preprocess", "--in", p(dir.path()), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("broken.pgm"), "{}", stderr(&out));
}

#[test]
fn synth_writes_pairs_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    synth(&a, 10, 16, 3);
    synth(&b, 10, 16, 3);
    let mut names: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".pgm"))
        .collect();
    names.sort();
    assert_eq!(names.len(), 20);
    assert_eq!(names[0], "img_0000.pgm");
    assert_eq!(names[19], "mask_0009.pgm");
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n}");
    }
}

#[test]
fn synth_rejects_indivisible_side() {
    let dir = tempfile::tempdir().unwrap();
    let out = tumorseg(&["synth", "--n", "2", "--side", "60", "--out", p(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("multiple of 2^4"), "{}", stderr(&out));
}

#[test]
fn train_eval_predict() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 10, 16, 5);
    let (ckpt, log) = (dir.path().join("imp.tsn"), dir.path().join("imp.csv"));
    let out = train(&data, &ckpt, &log, &["--improved"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(&log).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "epoch,train_loss,val_loss,val_miou");
    assert_eq!(csv.lines().count(), 3);
    let manifest = fs::read_to_string(dir.path().join("imp.tsn.manifest")).unwrap();
    assert!(manifest.contains("command=train\n") && manifest.contains("seed=42\n"));

    let (base_ckpt, base_log) = (dir.path().join("base.tsn"), dir.path().join("base.csv"));
    assert_eq!(code(&train(&data, &base_ckpt, &base_log, &["--baseline"])), 0);
    let (improved, _) = load_checkpoint(&ckpt).unwrap();
    let (baseline, _) = load_checkpoint(&base_ckpt).unwrap();
    assert!(improved.scalar_count() > baseline.scalar_count());

    // identical flags reproduce the run
    let (ckpt2, log2) = (dir.path().join("imp2.tsn"), dir.path().join("imp2.csv"));
    assert_eq!(code(&train(&data, &ckpt2, &log2, &["--improved"])), 0);
    assert_eq!(fs::read(&log).unwrap(), fs::read(&log2).unwrap());
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(&ckpt2).unwrap());

    let out = tumorseg(&["eval", "--ckpt", p(&ckpt), "--data", p(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let fields: Vec<(&str, f64)> = text
        .trim()
        .split(' ')
        .map(|kv| {
            let (k, v) = kv.split_once('=').unwrap();
            (k, v.parse().unwrap())
        })
        .collect();
    assert_eq!(fields.len(), 2);
    assert_eq!(fields[0].0, "miou");
    assert!((0.0..=1.0).contains(&fields[0].1));
    assert_eq!(fields[1].0, "loss");
    assert!(fields[1].1 >= 0.0 && fields[1].1.is_finite());

    let mask_path = dir.path().join("pred.pgm");
    let out = tumorseg(&["predict", "--ckpt", p(&ckpt), "--in", p(&data.join("img_0003.pgm")), "--out", p(&mask_path)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mask = read_gray(&mask_path).unwrap();
    assert_eq!((mask.width(), mask.height()), (16, 16));
    assert!(mask.pixels().iter().all(|&v| v == 0 || v == 255));

    let odd = dir.path().join("odd.pgm");
    write_pnm(&Image::Gray(GrayImage::filled(18, 16, 9).unwrap()), &odd).unwrap();
    let out = tumorseg(&["predict", "--ckpt", p(&ckpt), "--in", p(&odd), "--out", p(&dir.path().join("x.pgm"))]);
    assert_eq!(code(&out), 2);

    let out = tumorseg(&["eval", "--ckpt", p(&dir.path().join("nope.tsn")), "--data", p(&data)]);
    assert_eq!(code(&out), 4);
    fs::write(dir.path().join("bad.tsn"), b"TSN1\x05").unwrap();
    let out = tumorseg(&["eval", "--ckpt", p(&dir.path().join("bad.tsn")), "--data", p(&data)]);
    assert_eq!(code(&out), 4);
}

#[test]
fn train_defaults_give_fifty_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 6, 16, 8);
    let (ckpt, log) = (dir.path().join("m.tsn"), dir.path().join("m.csv"));
    let out = tumorseg(&["train", "--data", p(&data), "--out", p(&ckpt), "--log", p(&log)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(&log).unwrap();
    assert_eq!(csv.lines().count(), 51);
    assert!(csv.lines().last().unwrap().starts_with("50,"));
}

#[test]
fn train_error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 6, 16, 8);
    let (ckpt, log) = (dir.path().join("m.tsn"), dir.path().join("m.csv"));
    assert_eq!(code(&train(&data, &ckpt, &log, &["--lr", "0"])), 2);
    assert_eq!(code(&train(&data, &ckpt, &log, &["--depth", "3"])), 2);
    assert_eq!(code(&train(&data, &ckpt, &log, &["--improved", "--baseline"])), 2);
    let out = train(&data, &ckpt, &log, &["--lr", "1e38"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("non-finite loss"));
    assert_eq!(code(&train(&dir.path().join("missing"), &ckpt, &log, &[])), 4);
}

#[test]
fn gradcheck_blocks() {
    let out = tumorseg(&["gradcheck", "--block", "conv"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let line = stdout(&out);
    let err: f64 = line.split("max_error=").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
    assert!(err <= 1e-5);

    let out = tumorseg(&["gradcheck", "--block", "all"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let names: Vec<String> = stdout(&out).lines().map(|l| l.split_whitespace().next().unwrap().to_string()).collect();
    assert_eq!(names, ["conv", "ca", "aspp", "net", "loss"]);
}

#[test]
fn gradcheck_notices_corrupted_gradients() {
    for (fault, block) in [("relu", "conv"), ("sigmoid", "loss"), ("conv-weight", "conv")] {
        let out = tumorseg(&["gradcheck", "--block", block, "--inject-fault", fault]);
        assert_ne!(code(&out), 0, "{fault} went unnoticed");
        assert!(stdout(&out).contains("FAIL"));
    }
}
