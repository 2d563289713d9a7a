mod common;

use std::fs;

use sgan_core::nn::{Init, LayerSpec, NetSpec, Network};
use sgan_core::snapshots::*;
use sgan_core::training::{AugmentConfig, Categories, Dataset, TrainConfig, TrainState, Trainer};
use sgan_core::zoo::{Arch, GanOptions, GanPair, Model, ModelOptions, TranslatorOptions};
use sgan_core::Error;
use sgan_tensor::Rng;
use sha2::{Digest, Sha256};

use common::toy_images;

/// SHA-256 of `save_model` for an unconditional 32px DCGAN pair, width 8, built from seed 1.
const GOLDEN_DCGAN_SHA256: &str = "31eed195021c5692d8c14c5126325bf1711e2f4cb77a02579beee35c552f83f5";

fn gan(arch: Arch, cond: bool, width: usize, seed: u64) -> Model<f32> {
    ModelOptions::Gan(GanOptions::new(arch, 32, cond, width))
        .build(&mut Rng::new(seed))
        .unwrap()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn assert_bits_equal(a: &Model<f32>, b: &Model<f32>) {
    for ((_, na), (_, nb)) in a.networks().into_iter().zip(b.networks()) {
        assert_eq!(na.params().len(), nb.params().len());
        for (pa, pb) in na.params().iter().zip(nb.params().iter()) {
            let ba: Vec<u32> = pa.value.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = pb.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ba, bb, "{}", pa.name);
        }
    }
}

#[test]
fn fresh_pair_roundtrips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for model in [
        gan(Arch::Dcgan, false, 8, 1),
        gan(Arch::WganGp, true, 8, 2),
        Model::Translator(sgan_core::zoo::build_translator(&TranslatorOptions::new(8), &mut Rng::new(3)).unwrap()),
    ] {
        let path = dir.path().join(format!("{}.sgck", model.arch()));
        save_model(&model, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.model, model);
        assert_bits_equal(&back.model, &model);
        assert!(back.progress.is_none());
    }
}

#[test]
fn training_state_roundtrips_including_optimizer_moments() {
    let data = toy_images(12, 32, 1);
    let mut cfg = TrainConfig::preset(Arch::Wgan);
    cfg.batch_size = 4;
    let state = TrainState::new(gan(Arch::Wgan, false, 8, 4), cfg).unwrap();
    let mut t = Trainer::new(state, Dataset::Images(data), None).unwrap();
    t.run_steps(5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.sgck");
    save_state(&t.state, &path).unwrap();
    let back = load(&path).unwrap().into_state().unwrap();
    assert_eq!(back, t.state);
    assert!(back.progress.opt_d.v.iter().any(Option::is_some));
}

#[test]
fn golden_file_is_byte_stable() {
    let bytes = encode(&gan(Arch::Dcgan, false, 8, 1), None).unwrap();
    assert_eq!(hex(&Sha256::digest(&bytes)), GOLDEN_DCGAN_SHA256);
    assert_eq!(&bytes[..4], b"SGCK");
    assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
}

#[test]
fn truncation_and_bit_flips_fail_the_checksum() {
    let bytes = encode(&gan(Arch::Dcgan, false, 8, 1), None).unwrap();
    for cut in [bytes.len() - 1, bytes.len() / 2, 20, 9] {
        assert!(matches!(decode(&bytes[..cut]), Err(Error::Checksum)), "cut {cut}");
    }
    let mut flipped = bytes.clone();
    let at = bytes.len() - 100;
    flipped[at] ^= 0x10;
    assert!(matches!(decode(&flipped), Err(Error::Checksum)));
    assert!(matches!(decode(b"PNG\x89rest"), Err(Error::BadMagic)));
    let mut v2 = bytes.clone();
    v2[4..8].copy_from_slice(&2u32.to_le_bytes());
    assert!(matches!(decode(&v2), Err(Error::BadVersion(2))));
}

#[test]
fn header_reads_without_the_payload() {
    let dir = tempfile::tempdir().unwrap();
    let model = gan(Arch::Wgan, true, 8, 5);
    let path = dir.path().join("m.sgck");
    save_model(&model, &path).unwrap();
    let full = fs::read(&path).unwrap();
    let header_len = u64::from_le_bytes(full[8..16].try_into().unwrap()) as usize;
    let cut = dir.path().join("cut.sgck");
    fs::write(&cut, &full[..16 + header_len]).unwrap();
    let h = read_header(&cut).unwrap();
    assert_eq!(h.arch, Arch::Wgan);
    assert_eq!(h.model, model.options());
    assert_eq!(h.conventions.bn_momentum, 0.1);
    assert_eq!(h.conventions.bn_eps, 1e-5);
    let total: u64 = h.tensors.iter().map(|t| t.len).sum();
    assert_eq!(total as usize * 4, full.len() - 16 - header_len - 32);
    assert!(matches!(load(&cut), Err(Error::Checksum)));
}

fn loss_bits(recs: &[sgan_core::training::MetricRecord]) -> Vec<(u64, Option<u64>)> {
    recs.iter().map(|r| (r.loss_d.to_bits(), r.loss_g.map(f64::to_bits))).collect()
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let data = toy_images(20, 32, 2);
    let mut cfg = TrainConfig::preset(Arch::WganGp);
    cfg.batch_size = 6;
    cfg.epochs = 2;
    cfg.conditional = true;
    cfg.augment = AugmentConfig {
        enabled: true,
        initial_p: 0.3,
        categories: Categories::ALL,
    };
    cfg.seed = 9;
    let fresh = || TrainState::new(gan(Arch::WganGp, true, 8, 6), cfg.clone()).unwrap();

    let mut whole = Trainer::new(fresh(), Dataset::Images(data.clone()), None).unwrap();
    let all = whole.run().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut first = Trainer::new(fresh(), Dataset::Images(data.clone()), None).unwrap();
    let head = first.run_steps(5).unwrap();
    let path = dir.path().join("mid.sgck");
    save_state(&first.state, &path).unwrap();
    drop(first);
    let resumed_state = load(&path).unwrap().into_state().unwrap();
    let mut second = Trainer::new(resumed_state, Dataset::Images(data), None).unwrap();
    let tail = second.run().unwrap();

    let mut joined = head;
    joined.extend(tail);
    assert_eq!(loss_bits(&joined), loss_bits(&all));
    assert_eq!(second.state, whole.state);
}

#[test]
fn identical_donor_copies_everything_and_trains_like_a_resume() {
    let donor = gan(Arch::Dcgan, false, 8, 7);
    let (warm, report) = warm_start_new(&donor.options(), 99, &donor, &FreezeSpec::default()).unwrap();
    assert_eq!(report.copied(), report.entries.len());
    assert_bits_equal(&warm, &donor);

    let data = toy_images(12, 32, 3);
    let mut cfg = TrainConfig::preset(Arch::Dcgan);
    cfg.batch_size = 4;
    let run = |m: Model<f32>| {
        let mut t = Trainer::new(TrainState::new(m, cfg.clone()).unwrap(), Dataset::Images(data.clone()), None).unwrap();
        loss_bits(&t.run_steps(4).unwrap())
    };
    assert_eq!(run(warm), run(donor));
}

#[test]
fn unconditional_donor_seeds_a_conditional_target() {
    let donor = gan(Arch::Dcgan, false, 8, 8);
    let target_opts = ModelOptions::Gan(GanOptions::new(Arch::Dcgan, 32, true, 8));
    let (warm, report) = warm_start_new(&target_opts, 3, &donor, &FreezeSpec::default()).unwrap();
    let g = report.reinitialized(Some("generator"));
    assert_eq!(g.len(), 1);
    assert_eq!(g[0].name, "generator/tconv0.weight");
    assert_eq!(g[0].shape, vec![103, 32, 4, 4]);
    let d = report.reinitialized(Some("discriminator"));
    assert_eq!(d.len(), 1);
    assert_eq!(d[0].name, "discriminator/conv0.weight");
    for e in report.entries.iter().filter(|e| e.action == WarmAction::Copied) {
        let (prefix, name) = e.name.split_once('/').unwrap();
        let net = |m: &Model<f32>| -> Network<f32> {
            if prefix == "generator" { m.generator().clone() } else { m.discriminator().clone() }
        };
        let a = net(&warm).params().get(name).unwrap().value.clone();
        let b = net(&donor).params().get(name).unwrap().value.clone();
        assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn incompatible_donor_matches_nothing() {
    let lone = |input: [usize; 3], layers: Vec<LayerSpec>| {
        let spec = NetSpec {
            name: "odd".into(),
            input,
            classes: 0,
            init: Init::Uniform,
            layers,
            notes: vec![],
        };
        Network::<f32>::new(spec, &mut Rng::new(1)).unwrap()
    };
    let donor = Model::Gan(GanPair {
        options: GanOptions::new(Arch::Dcgan, 32, false, 8),
        generator: lone([100, 1, 1], vec![LayerSpec::conv(5, 1, 1, 0)]),
        discriminator: lone([3, 32, 32], vec![LayerSpec::Flatten]),
    });
    let mut target = gan(Arch::Dcgan, false, 8, 1);
    assert!(matches!(warm_start(&mut target, &donor, &FreezeSpec::default()), Err(Error::NoMatch)));
}

#[test]
fn frozen_discriminator_stays_bit_identical() {
    let donor = gan(Arch::Dcgan, false, 8, 10);
    let (warm, report) = warm_start_new(&donor.options(), 1, &donor, &FreezeSpec::parse("discriminator")).unwrap();
    assert_eq!(report.frozen, warm.discriminator().params().len());
    let before = warm.discriminator().clone();
    let g_before = warm.generator().clone();
    let data = toy_images(12, 32, 4);
    let mut cfg = TrainConfig::preset(Arch::Dcgan);
    cfg.batch_size = 4;
    let mut t = Trainer::new(TrainState::new(warm, cfg).unwrap(), Dataset::Images(data), None).unwrap();
    t.run_steps(5).unwrap();
    assert_eq!(t.state.model.discriminator(), &before);
    assert_ne!(t.state.model.generator(), &g_before);
    // frozen flags survive a checkpoint
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.sgck");
    save_state(&t.state, &path).unwrap();
    let back = load(&path).unwrap();
    assert!(back.model.discriminator().params().iter().all(|p| p.frozen));
    assert!(back.header.frozen.iter().all(|n| n.starts_with("discriminator/")));
}

#[test]
fn warm_start_changes_the_first_epoch_trajectory() {
    let donor = gan(Arch::Dcgan, false, 8, 11);
    let target_opts = ModelOptions::Gan(GanOptions::new(Arch::Dcgan, 32, true, 8));
    let cold = target_opts.build::<f32>(&mut Rng::new(5)).unwrap();
    let (warm, _) = warm_start_new(&target_opts, 5, &donor, &FreezeSpec::default()).unwrap();
    let data = toy_images(16, 32, 5);
    let mut cfg = TrainConfig::preset(Arch::Dcgan);
    cfg.batch_size = 4;
    cfg.conditional = true;
    let first_epoch = |m: Model<f32>| {
        let mut t = Trainer::new(TrainState::new(m, cfg.clone()).unwrap(), Dataset::Images(data.clone()), None).unwrap();
        let n = t.steps_per_epoch();
        t.run_steps(n).unwrap().iter().map(|r| r.loss_d).collect::<Vec<_>>()
    };
    let (w, c) = (first_epoch(warm), first_epoch(cold));
    assert_eq!(w.len(), c.len());
    assert!(w.iter().zip(&c).all(|(a, b)| a != b), "{w:?} vs {c:?}");
}
