use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dds_core::dataset::{DatasetManifest, Split};
use dds_core::io::{read_mask, read_saliency};

fn dds(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dds"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(cwd: &Path, args: &[&str]) -> Output {
    let out = dds(cwd, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    files
}

#[test]
fn synth_writes_pairs_and_a_loadable_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["--out", "data", "synth", "--count", "10", "--resolution", "64x32"]);
    let files = tree(&tmp.path().join("data"));
    assert_eq!(files.keys().filter(|k| k.starts_with("images")).count(), 10);
    assert_eq!(files.keys().filter(|k| k.starts_with("masks")).count(), 10);

    let m = DatasetManifest::load(&tmp.path().join("data/manifest.json")).unwrap();
    m.validate().unwrap();
    assert_eq!(m.len(), 10);
    assert_eq!(m.records_in(Split::Train).count(), 8);
    assert_eq!(m.records_in(Split::Test).count(), 2);
}

#[test]
fn synth_is_bit_identical_for_a_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let args = ["--seed", "11", "--out", "data", "synth", "--count", "4", "--resolution", "64x32"];
    ok(a.path(), &args);
    ok(b.path(), &args);
    ok(c.path(), &["--seed", "12", "--out", "data", "synth", "--count", "4", "--resolution", "64x32"]);
    let (ta, tb, tc) = (tree(&a.path().join("data")), tree(&b.path().join("data")), tree(&c.path().join("data")));
    assert_eq!(ta, tb);
    assert_ne!(ta["images/0000.png"], tc["images/0000.png"]);
}

#[test]
fn stats_on_one_mask_reproduces_it() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["--out", "data", "synth", "--count", "1", "--resolution", "64x32"]);
    let out = ok(
        tmp.path(),
        &["--out", "stats", "stats", "--manifest", "data/manifest.json", "--resolution", "64x32"],
    );
    let mask = read_mask(&tmp.path().join("data/masks/0000.png")).unwrap();
    let aam = read_saliency(&tmp.path().join("stats/aam.png")).unwrap();
    let expect: Vec<f64> = mask.data().iter().map(|&v| f64::from(v)).collect();
    assert_eq!(aam.values(), &expect[..]);

    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("histogram,lower,upper,count\n"));
    let objects: usize = csv
        .lines()
        .filter(|l| l.starts_with("objects_per_image"))
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(objects, 1);
    for f in ["histograms.csv", "objects.csv", "hist_objects.png", "hist_areas.png", "run_config.toml"] {
        assert!(tmp.path().join("stats").join(f).exists(), "{f}");
    }
}

#[test]
fn stats_does_not_touch_the_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["--out", "data", "synth", "--count", "3", "--resolution", "64x32"]);
    let before = tree(&tmp.path().join("data"));
    ok(tmp.path(), &["--out", "stats", "stats", "--manifest", "data/manifest.json"]);
    assert_eq!(tree(&tmp.path().join("data")), before);
}

#[test]
fn train_predict_and_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["--out", "data", "synth", "--count", "3", "--resolution", "128x64"]);
    ok(
        tmp.path(),
        &[
            "--out",
            "run",
            "train",
            "--manifest",
            "data/manifest.json",
            "--iterations",
            "4",
            "--resolution",
            "64x32",
            "--checkpoint-every",
            "2",
        ],
    );
    let loss = fs::read_to_string(tmp.path().join("run/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 5);
    assert!(tmp.path().join("run/checkpoints/iter_000002.ckpt").exists());
    let config = fs::read_to_string(tmp.path().join("run/run_config.toml")).unwrap();
    assert!(config.contains("iterations = 4"), "{config}");

    // predictions come back at the image's own size, not the network input size
    ok(
        tmp.path(),
        &[
            "predict",
            "--checkpoint",
            "run/final.ckpt",
            "--image",
            "data/images/0001.png",
            "--output",
            "pred.png",
            "--resolution",
            "64x32",
        ],
    );
    let pred = read_saliency(&tmp.path().join("pred.png")).unwrap();
    assert_eq!((pred.width(), pred.height()), (128, 64));

    let out = ok(
        tmp.path(),
        &[
            "--out",
            "eval",
            "eval",
            "--checkpoint",
            "run/final.ckpt",
            "--manifest",
            "data/manifest.json",
            "--split",
            "all",
            "--resolution",
            "64x32",
        ],
    );
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("MAE ↓"), "{table}");
    let csv = fs::read_to_string(tmp.path().join("eval/metrics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("image,MAE,F^w_beta,F_beta"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn eval_after_overfitting_eight_images() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["--out", "data", "synth", "--count", "10", "--resolution", "128x64"]);
    ok(
        tmp.path(),
        &["--out", "run", "train", "--manifest", "data/manifest.json", "--checkpoint-every", "0"],
    );
    ok(
        tmp.path(),
        &[
            "--out",
            "eval",
            "eval",
            "--checkpoint",
            "run/final.ckpt",
            "--manifest",
            "data/manifest.json",
            "--split",
            "train",
        ],
    );
    let csv = fs::read_to_string(tmp.path().join("eval/metrics.csv")).unwrap();
    let mean = csv.lines().find(|l| l.starts_with("mean,")).unwrap();
    let mae: f64 = mean.split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(csv.lines().count(), 10);
    assert!(mae < 0.05, "train-split MAE {mae}");
}

#[test]
fn config_file_values_apply_and_flags_override_them() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.toml"), "count = 2\nresolution = \"64x32\"\nseed = 3\n").unwrap();
    ok(tmp.path(), &["--config", "run.toml", "--out", "a", "synth"]);
    ok(tmp.path(), &["--config", "run.toml", "--out", "b", "synth", "--count", "3"]);
    let a = DatasetManifest::load(&tmp.path().join("a/manifest.json")).unwrap();
    let b = DatasetManifest::load(&tmp.path().join("b/manifest.json")).unwrap();
    assert_eq!((a.len(), b.len()), (2, 3));
    assert_eq!(a.split_seed, Some(3));
    let mask = read_mask(&tmp.path().join("a/masks/0000.png")).unwrap();
    assert_eq!((mask.width(), mask.height()), (64, 32));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| dds(tmp.path(), args).status.code();

    assert_eq!(code(&["--help"]), Some(0));
    assert_eq!(code(&["frobnicate"]), Some(1));
    assert_eq!(code(&["train"]), Some(1));
    fs::write(tmp.path().join("bad.toml"), "itterations = 3\n").unwrap();
    assert_eq!(code(&["--config", "bad.toml", "synth"]), Some(1));
    assert_eq!(code(&["train", "--manifest", "missing.json"]), Some(2));
    assert_eq!(code(&["predict", "--checkpoint", "missing.ckpt", "--image", "x.png"]), Some(2));

    ok(tmp.path(), &["--out", "data", "synth", "--count", "2", "--resolution", "64x32"]);
    let diverge = [
        "--out",
        "run",
        "train",
        "--manifest",
        "data/manifest.json",
        "--iterations",
        "20",
        "--resolution",
        "64x32",
        "--base-lr",
        "1e6",
        "--checkpoint-every",
        "0",
    ];
    let out = dds(tmp.path(), &diverge);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
