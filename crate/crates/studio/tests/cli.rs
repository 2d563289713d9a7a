use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn sgan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgan"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = sgan(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn toy(dir: &Path) {
    ok(dir, &["synth", "--n", "48", "--res", "32", "--classes", "3", "--seed", "5", "--out", "toy"]);
}

fn pngs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn train_small(dir: &Path, out: &str, epochs: &str) -> PathBuf {
    let args = [
        "--deterministic", "train", "--arch", "dcgan", "--data", "toy/silhouette", "--res", "32", "--width", "8", "--merge",
        "--epochs", epochs, "--batch", "16", "--seed", "3", "--out", out,
    ];
    PathBuf::from(ok(dir, &args).trim())
}

#[test]
fn usage_errors_exit_1() {
    let tmp = TempDir::new().unwrap();
    let out = sgan(tmp.path(), &["train", "--arch", "wgan-gp"]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--data") && err.contains("Usage"), "{err}");

    assert_eq!(code(&sgan(tmp.path(), &["sample", "--bogus"])), 1);
    assert_eq!(code(&sgan(tmp.path(), &["train", "--arch", "stylegan", "--data", "x"])), 1);
    assert_eq!(code(&sgan(tmp.path(), &[])), 1);
    assert_eq!(code(&sgan(tmp.path(), &["fid", "--real", "a"])), 1);
    let help = sgan(tmp.path(), &["--help"]);
    assert_eq!(code(&help), 0);
    assert!(String::from_utf8_lossy(&help.stdout).contains("serve"));
}

#[test]
fn invalid_configuration_exits_1() {
    let tmp = TempDir::new().unwrap();
    toy(tmp.path());
    let out = sgan(
        tmp.path(),
        &["train", "--arch", "dcgan", "--data", "toy/silhouette", "--res", "32", "--augpipe", "xyz", "--out", "r"],
    );
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn runtime_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let out = sgan(tmp.path(), &["sample", "--checkpoint", "missing.sgck", "--out", "s"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.sgck"));
    fs::write(tmp.path().join("junk.sgck"), b"junk").unwrap();
    let out = sgan(tmp.path(), &["inspect", "junk.sgck"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
    let out = sgan(tmp.path(), &["train", "--arch", "dcgan", "--data", "nowhere", "--out", "r"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn synth_pairs_and_fid_of_a_set_against_itself() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    toy(dir);
    for class in ["Man", "Monster", "Woman"] {
        assert_eq!(fs::read_dir(dir.join("toy/silhouette").join(class)).unwrap().count(), 16);
    }
    let msg = ok(dir, &["pairs", "--colored", "toy/colored", "--out", "pairs"]);
    assert!(msg.starts_with("48 pairs"), "{msg}");
    let manifest = fs::read_to_string(dir.join("pairs/pairs.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 48);

    let report = ok(
        dir,
        &["fid", "--real", "toy/silhouette", "--fake", "toy/silhouette", "--res", "32", "--report", "fid.json"],
    );
    let v: Value = serde_json::from_str(&report).unwrap();
    assert!(v["score"].as_f64().unwrap().abs() < 1e-6, "{v}");
    assert_eq!(v["n_real"], 48);
    assert_eq!(v["extractor"], "randconv");
    let saved: Value = serde_json::from_slice(&fs::read(dir.join("fid.json")).unwrap()).unwrap();
    assert_eq!(saved, v);

    let v: Value = serde_json::from_str(&ok(
        dir,
        &["fid", "--real", "toy/silhouette", "--fake", "toy/colored", "--res", "32", "--extractor", "pixel"],
    ))
    .unwrap();
    assert!(v["score"].as_f64().unwrap() > 1e-3);
}

#[test]
fn train_inspect_and_reproducible_sampling() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    toy(dir);
    let ck = train_small(dir, "run", "2");
    assert_eq!(ck, Path::new("run/ckpt-00000006.sgck"));
    // once per epoch by default
    assert!(dir.join("run/ckpt-00000003.sgck").exists());
    let metrics = fs::read_to_string(dir.join("run/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 6);

    let header: Value = serde_json::from_str(&ok(dir, &["inspect", ck.to_str().unwrap()])).unwrap();
    assert_eq!(header["arch"], "dcgan");
    assert_eq!(header["model"]["resolution"], 32);
    assert_eq!(header["model"]["base_width"], 8);

    ok(dir, &["sample", "--checkpoint", ck.to_str().unwrap(), "--n", "16", "--seed", "7", "--trunc", "0.75", "--out", "a"]);
    ok(dir, &["sample", "--checkpoint", ck.to_str().unwrap(), "--n", "16", "--seed", "7", "--trunc", "0.75", "--out", "b"]);
    let (a, b) = (pngs(&dir.join("a")), pngs(&dir.join("b")));
    assert_eq!(a.len(), 16);
    assert_eq!(a[0].0, "00000.png");
    assert_eq!(a[15].0, "00015.png");
    assert_eq!(a, b);
    ok(dir, &["sample", "--checkpoint", ck.to_str().unwrap(), "--n", "2", "--seed", "5", "--out", "c"]);
    assert_ne!(pngs(&dir.join("c"))[0].1, a[0].1);

    let v: Value = serde_json::from_str(&ok(
        dir,
        &["fid", "--real", "toy/silhouette", "--checkpoint", ck.to_str().unwrap(), "--n", "32", "--seed", "1"],
    ))
    .unwrap();
    assert_eq!(v["n_fake"], 32);
    assert!(v["score"].as_f64().unwrap().is_finite());

    let out = sgan(dir, &["sample", "--checkpoint", ck.to_str().unwrap(), "--class", "Man", "--out", "d"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn parallel_and_deterministic_runs_agree() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    toy(dir);
    let a = train_small(dir, "det", "2");
    let args = [
        "train", "--arch", "dcgan", "--data", "toy/silhouette", "--res", "32", "--width", "8", "--merge", "--epochs", "2",
        "--batch", "16", "--seed", "3", "--out", "par",
    ];
    let b = PathBuf::from(ok(dir, &args).trim());
    assert_eq!(fs::read(dir.join(a)).unwrap(), fs::read(dir.join(b)).unwrap());
}

#[test]
fn resume_continues_bit_identically() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    toy(dir);
    let full = train_small(dir, "full", "3");
    let half = train_small(dir, "half", "1");
    let resumed = PathBuf::from(
        ok(
            dir,
            &[
                "train", "--arch", "dcgan", "--data", "toy/silhouette", "--merge", "--epochs", "3", "--resume",
                half.to_str().unwrap(), "--out", "half",
            ],
        )
        .trim(),
    );
    assert_eq!(resumed.file_name(), full.file_name());
    assert_eq!(fs::read(dir.join(full)).unwrap(), fs::read(dir.join(resumed)).unwrap());

    let out = sgan(
        dir,
        &["train", "--arch", "wgan", "--data", "toy/silhouette", "--merge", "--resume", half.to_str().unwrap(), "--out", "x"],
    );
    assert_ne!(code(&out), 0);
}

#[test]
fn warm_start_with_frozen_discriminator() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    toy(dir);
    let donor = train_small(dir, "donor", "2");
    let out = sgan(
        dir,
        &[
            "train", "--arch", "dcgan", "--data", "toy/silhouette", "--res", "32", "--width", "8", "--conditional",
            "--epochs", "1", "--batch", "16", "--init-from", donor.to_str().unwrap(), "--freeze", "discriminator",
            "--out", "warm",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ck = String::from_utf8(out.stdout).unwrap();
    let header: Value = serde_json::from_str(&ok(dir, &["inspect", ck.trim()])).unwrap();
    assert_eq!(header["model"]["conditional"], true);
    let text = header.to_string();
    assert!(text.contains("discriminator"), "{text}");

    ok(dir, &["sample", "--checkpoint", ck.trim(), "--n", "2", "--class", "Monster", "--out", "cs"]);
    ok(dir, &["sample", "--checkpoint", ck.trim(), "--n", "2", "--class", "2", "--out", "cs2"]);
    assert_eq!(code(&sgan(dir, &["sample", "--checkpoint", ck.trim(), "--class", "7", "--out", "bad"])), 2);
}

#[test]
fn translator_train_and_colorize() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--n", "8", "--res", "64", "--classes", "2", "--seed", "1", "--out", "toy"]);
    ok(dir, &["pairs", "--colored", "toy/colored", "--out", "pairs"]);
    let ck = ok(
        dir,
        &["--deterministic", "train", "--arch", "translator", "--data", "pairs", "--width", "8", "--epochs", "1", "--batch", "4", "--out", "tr"],
    );
    let ck = ck.trim();
    let class_dir = dir.join("toy/silhouette/Man");
    let input = fs::read_dir(&class_dir).unwrap().next().unwrap().unwrap().path();
    let input = input.to_str().unwrap();
    ok(dir, &["sample", "--checkpoint", ck, "--input", input, "--n", "3", "--seed", "2", "--out", "v1"]);
    ok(dir, &["sample", "--checkpoint", ck, "--input", input, "--n", "3", "--seed", "2", "--out", "v2"]);
    let v1 = pngs(&dir.join("v1"));
    assert_eq!(v1, pngs(&dir.join("v2")));
    assert_eq!(v1.len(), 3);
    assert_ne!(v1[0].1, v1[1].1);
    assert_eq!(code(&sgan(dir, &["sample", "--checkpoint", ck, "--out", "v3"])), 2);
}
