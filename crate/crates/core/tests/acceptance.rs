//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use sgan_core::dataio::*;
use sgan_core::eval::*;
use sgan_core::nn::{Param, ParamSet, Role};
use sgan_core::snapshots::*;
use sgan_core::training::losses::*;
use sgan_core::training::*;
use sgan_core::zoo::*;
use sgan_core::Error;
use sgan_tensor::functional::{batch_norm2d, NormMode};
use sgan_tensor::gradcheck::check;
use sgan_tensor::{Rng, Tape, Tensor, TensorError, Var};
use sha2::{Digest, Sha256};

use common::toy_images;

type Check = Result<String, String>;
type Criterion = fn() -> Check;
type UnaryOp = for<'t> fn(Var<'t, f64>) -> Var<'t, f64>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        // negated so that NaN fails
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn te(err: Error) -> TensorError {
    TensorError::invalid("loss", err.to_string())
}

const GOLDEN_DCGAN_SHA256: &str = "31eed195021c5692d8c14c5126325bf1711e2f4cb77a02579beee35c552f83f5";

// ---------------------------------------------------------------- gradients

fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
    Rng::new(seed).normal_tensor(shape)
}

fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = Rng::new(seed);
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.uniform_range(0.2, 1.5);
            if rng.bernoulli(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, v).unwrap()
}

fn project<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>, seed: u64) -> sgan_tensor::Result<Var<'t, f64>> {
    let w = Rng::new(seed).normal_tensor::<f64>(&y.shape());
    Ok(y.mul(tape.constant(w))?.sum())
}

fn two_layer<'t>(x: Var<'t, f64>, w1: Var<'t, f64>, w2: Var<'t, f64>) -> sgan_core::Result<Var<'t, f64>> {
    let n = x.shape()[0];
    let h = x.conv2d(w1, 1, 0)?.tanh();
    Ok(h.conv2d(w2, 1, 0)?.reshape(&[n, 1])?)
}

fn gradients() -> Check {
    let start = Instant::now();
    let mut worst_first = 0.0f64;
    let mut note = |name: &str, err: f64| -> Result<(), String> {
        worst_first = worst_first.max(err);
        ensure!(err < 1e-5, "{name}: relative error {err:e}");
        Ok(())
    };
    let mut shapes = Rng::new(0xACCE);
    for trial in 0..3u64 {
        let (a, b, c) = (1 + shapes.below(3) as usize, 2 + shapes.below(3) as usize, 2 + shapes.below(3) as usize);
        let x = away_from_zero(&[a, b, c], 10 + trial);
        let y = away_from_zero(&[a, b, c], 20 + trial);
        let unary: Vec<(&str, UnaryOp)> = vec![
            ("relu", |v| v.relu()),
            ("leaky_relu", |v| v.leaky_relu(0.02)),
            ("tanh", |v| v.tanh()),
            ("sigmoid", |v| v.sigmoid()),
            ("abs", |v| v.abs()),
            ("square", |v| v.square()),
            ("log", |v| v.abs().log()),
            ("sqrt", |v| v.abs().sqrt()),
            ("clamp_min", |v| v.clamp_min(-0.1)),
            ("scale", |v| v.scale(-2.5)),
        ];
        for (name, f) in unary {
            let r = check(|t, v| project(t, f(v[0]), trial), std::slice::from_ref(&x), 1e-6).map_err(e)?;
            note(name, r.max_error())?;
        }
        for (name, op) in [("add", 0), ("sub", 1), ("mul", 2), ("div", 3)] {
            let r = check(
                |t, v| {
                    let out = match op {
                        0 => v[0].add(v[1])?,
                        1 => v[0].sub(v[1])?,
                        2 => v[0].mul(v[1])?,
                        _ => v[0].div(v[1])?,
                    };
                    project(t, out, trial)
                },
                &[x.clone(), y.clone()],
                1e-6,
            )
            .map_err(e)?;
            note(name, r.max_error())?;
        }
        let r = check(|_, v| Ok(v[0].mean().square()), std::slice::from_ref(&x), 1e-6).map_err(e)?;
        note("mean", r.max_error())?;
        let r = check(|t, v| project(t, v[0].sum_to_axis(0)?.square(), 3), std::slice::from_ref(&x), 1e-6).map_err(e)?;
        note("sum_to_axis", r.max_error())?;

        let mut rng = Rng::new(30 + trial);
        let ci = 1 + rng.below(2) as usize;
        let xi = rng.normal_tensor::<f64>(&[2, ci, 5, 5]);
        let w = rng.normal_tensor::<f64>(&[2, ci, 3, 3]);
        let r = check(|t, v| project(t, v[0].conv2d(v[1], 2, 1)?, 4), &[xi.clone(), w], 1e-6).map_err(e)?;
        note("conv2d", r.max_error())?;
        let wt = rng.normal_tensor::<f64>(&[ci, 2, 4, 4]);
        let r = check(|t, v| project(t, v[0].conv_transpose2d(v[1], 2, 1)?, 5), &[xi.clone(), wt], 1e-6).map_err(e)?;
        note("conv_transpose2d", r.max_error())?;
        let g = away_from_zero(&[ci], 40 + trial);
        let bias = rand(&[ci], 50 + trial);
        let r = check(
            |t, v| {
                let (out, _) = batch_norm2d(v[0], v[1], v[2], NormMode::Train)?;
                project(t, out, 6)
            },
            &[xi.clone(), g, bias],
            1e-6,
        )
        .map_err(e)?;
        note("batch_norm2d", r.max_error())?;
        let other = rand(&[2, 2, 5, 5], 60 + trial);
        let r = check(
            |t, v| project(t, Var::concat_channels(&[v[0], v[1]])?.slice_channels(1, ci)?.square(), 7),
            &[xi, other],
            1e-6,
        )
        .map_err(e)?;
        note("concat/slice", r.max_error())?;
    }

    // full losses
    let p = Rng::new(1).uniform_tensor::<f64>(&[6, 1], 0.05, 0.95);
    let targets = Rng::new(2).uniform_tensor::<f64>(&[6, 1], 0.0, 1.0);
    let r = check(|_, v| bce_targets(v[0], &targets).map_err(te), &[p], 1e-6).map_err(e)?;
    note("bce", r.max_error())?;
    let (a, b) = (rand(&[5, 1], 3), rand(&[5, 1], 4));
    let r = check(|_, v| wasserstein_critic(v[0], v[1]).map_err(te), &[a.clone(), b.clone()], 1e-6).map_err(e)?;
    note("wasserstein critic", r.max_error())?;
    let r = check(|_, v| wasserstein_generator(v[0]).map_err(te), std::slice::from_ref(&b), 1e-6).map_err(e)?;
    note("wasserstein generator", r.max_error())?;
    let r = check(|_, v| l1(v[0], v[1]).map_err(te), &[a, b], 1e-6).map_err(e)?;
    note("l1", r.max_error())?;

    // gradient penalty, first order in the inputs and second order in the parameters
    let (w1, w2) = (rand(&[3, 1, 3, 3], 5), rand(&[1, 3, 2, 2], 6));
    let (real, fake) = (rand(&[2, 1, 4, 4], 7), rand(&[2, 1, 4, 4], 8));
    let eps = [0.25, 0.625];
    let r = check(
        |tape, v| {
            let (cw1, cw2) = (tape.constant(w1.clone()), tape.constant(w2.clone()));
            let mix = v[0].scale(0.5).add(v[1].scale(0.5))?;
            project(tape, two_layer(mix, cw1, cw2).map_err(te)?, 9)
        },
        &[real.clone(), fake.clone()],
        1e-6,
    )
    .map_err(e)?;
    note("critic inputs", r.max_error())?;
    let r = check(
        |tape, v| {
            let critic = |x| two_layer(x, v[0], v[1]);
            gradient_penalty_with(critic, &real, &fake, 10.0, &eps, tape).map_err(te)
        },
        &[w1, w2],
        1e-5,
    )
    .map_err(e)?;
    let second = r.max_error();
    ensure!(second < 1e-3, "penalty parameter gradient: relative error {second:e}");
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!("first order max {worst_first:.1e}, second order {second:.1e}, {elapsed:.1?}"))
}

// ---------------------------------------------------------------- shapes

fn shapes() -> Check {
    let (g, d) = gan_specs(&GanOptions::new(Arch::Dcgan, 64, false, 64)).map_err(e)?;
    let tg = g.trace().map_err(e)?;
    let mut ladder = vec![g.input[1]];
    let mut maps = Vec::new();
    for (layer, shape) in g.layers.iter().zip(&tg.shapes) {
        if let sgan_core::nn::LayerSpec::Tconv { maps: m, .. } = layer {
            maps.push(*m);
            ladder.push(shape[1]);
        }
    }
    ensure!(g.input == [100, 1, 1], "generator input {:?}", g.input);
    ensure!(ladder == [1, 4, 8, 16, 32, 64], "spatial ladder {ladder:?}");
    ensure!(maps == [512, 256, 128, 64, 3], "feature maps {maps:?}");
    ensure!(tg.output() == [3, 64, 64], "generator output {:?}", tg.output());
    ensure!(d.input == [3, 64, 64], "discriminator input {:?}", d.input);
    let out = d.trace().map_err(e)?;
    ensure!(out.output() == [1], "discriminator output {:?}", out.output());

    let pair = build_gan::<f32>(&GanOptions::new(Arch::Dcgan, 64, false, 64), &mut Rng::new(1)).map_err(e)?;
    let z = Rng::new(2).normal_tensor::<f32>(&[2, 100, 1, 1]);
    let x = pair.generator.infer(&z, None).map_err(e)?;
    ensure!(x.shape() == [2, 3, 64, 64], "generated batch {:?}", x.shape());
    let p = pair.discriminator.infer(&x, None).map_err(e)?;
    ensure!(p.shape() == [2, 1], "scores {:?}", p.shape());
    ensure!(p.data().iter().all(|&v| v > 0.0 && v < 1.0), "scores outside (0,1)");
    Ok("100x1x1 -> 3x64x64 via 512/256/128/64/3; 3x64x64 -> scalar".into())
}

// ---------------------------------------------------------------- closed forms

fn linear<'t>(x: Var<'t, f64>, w: &Tensor<f64>) -> sgan_core::Result<Var<'t, f64>> {
    let n = x.shape()[0];
    Ok(x.mul_const(w)?.reshape(&[n, 4])?.sum_to_axis(0)?)
}

fn linear_penalty(norm: f64) -> f64 {
    let tape = Tape::<f64>::new();
    let mut w = Rng::new(9).normal_tensor::<f64>(&[1, 2, 2]);
    let len = w.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    w = w.map(|v| v * norm / len);
    let n = 3;
    let tiled = Tensor::stack(&vec![w; n]).unwrap();
    let critic = |x| linear(x, &tiled);
    let (real, fake) = (rand(&[n, 1, 2, 2], 10), rand(&[n, 1, 2, 2], 11));
    gradient_penalty(critic, &real, &fake, 10.0, &mut Rng::new(1), &tape)
        .unwrap()
        .item()
}

fn single(v: f64) -> ParamSet<f64> {
    let mut s = ParamSet::new();
    s.push(Param {
        name: "w".into(),
        role: Role::Weight,
        value: Tensor::full(&[2], v),
        frozen: false,
    })
    .unwrap();
    s
}

fn closed_forms() -> Check {
    let tape = Tape::<f64>::new();
    let half = tape.constant(Tensor::full(&[4, 1], 0.5));
    for t in [0.0, 1.0] {
        let v = bce(half, t).map_err(e)?.item();
        ensure!((v - std::f64::consts::LN_2).abs() < 1e-12, "bce(0.5) = {v}");
    }
    for norm in [0.5, 1.0, 2.0, 3.0] {
        let got = linear_penalty(norm);
        let want = 10.0 * (norm - 1.0f64).powi(2);
        ensure!((got - want).abs() < 1e-6, "penalty at |w|={norm}: {got} vs {want}");
    }
    let mut p = single(0.0);
    let adam = OptimizerConfig::Adam {
        lr: 0.0002,
        beta1: 0.5,
        beta2: 0.999,
    };
    Optimizer::new(adam, 1)
        .step(&mut p, &[(0, Tensor::full(&[2], 10.0))])
        .map_err(e)?;
    let a = p[0].value.data()[0];
    ensure!((a + 0.0002).abs() < 1e-9, "adam first step {a}");
    let mut p = single(0.0);
    Optimizer::new(OptimizerConfig::RmsProp { lr: 0.00005, rho: 0.99 }, 1)
        .step(&mut p, &[(0, Tensor::full(&[2], 1.0))])
        .map_err(e)?;
    let r = p[0].value.data()[0];
    ensure!((r + 0.0005).abs() < 1e-9, "rmsprop first step {r}");

    let data = toy_images(40, 32, 1);
    let mut t = common::gan_trainer(Arch::Wgan, 8, false, &data, 3, |c| c.batch_size = 8);
    for _ in 0..12 {
        let rec = t.step().map_err(e)?;
        for p in t.state.model.discriminator().params().iter().filter(|p| p.role.trainable()) {
            ensure!(p.value.max_abs() <= 0.01, "{} = {} after step {}", p.name, p.value.max_abs(), rec.step);
        }
    }
    Ok("bce, linear-critic penalty, optimizer first steps, clip bound over 12 critic steps".into())
}

// ---------------------------------------------------------------- FID

fn random_psd(d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = Rng::new(seed);
    let b = DMatrix::from_fn(d, d, |_, _| rng.normal());
    b.transpose() * b
}

fn toy_colored(n: usize) -> Tensor<f32> {
    let imgs: Vec<Tensor<f32>> = (0..n).map(|i| synth_figure(i, 3, 32, 11).2).collect();
    Tensor::stack(&imgs).unwrap()
}

fn fid_suite() -> Check {
    let start = Instant::now();
    let mut rng = Rng::new(12);
    let rows: Vec<f64> = (0..50 * 6).map(|_| rng.normal()).collect();
    let a = GaussianStats::from_rows(&rows, 6).map_err(e)?;
    let self_score = fid(&a, &a).map_err(e)?;
    ensure!(self_score.abs() < 1e-8, "fid(a,a) = {self_score}");

    for seed in 0..8 {
        let d = 1 + seed as usize;
        let (sa, sb) = (random_psd(d, seed), random_psd(d, seed + 100));
        let mut rng = Rng::new(seed + 200);
        let ma = DVector::from_fn(d, |_, _| rng.normal());
        let mb = DVector::from_fn(d, |_, _| rng.normal());
        let ab = frechet_distance(&ma, &sa, &mb, &sb).map_err(e)?;
        let ba = frechet_distance(&mb, &sb, &ma, &sa).map_err(e)?;
        ensure!((ab - ba).abs() < 1e-8 * ab.max(1.0), "asymmetric: {ab} vs {ba}");
    }

    let one = |m: f64, v: f64| (DVector::from_vec(vec![m]), DMatrix::from_element(1, 1, v));
    let ((ma, sa), (mb, sb)) = (one(0.0, 1.0), one(1.0, 4.0));
    let d = frechet_distance(&ma, &sa, &mb, &sb).map_err(e)?;
    ensure!((d - 2.0).abs() < 1e-10, "1-D closed form {d}");

    for seed in 0..10 {
        let m = random_psd(20, seed);
        let s = matrix_sqrt_psd(&m).map_err(e)?;
        let rel = (&s * &s - &m).norm() / m.norm();
        ensure!(rel < 1e-8, "sqrt reconstruction {rel:e}");
    }

    let real = toy_colored(1000);
    let noise = Rng::new(5).normal_tensor::<f32>(real.shape());
    let mut ladder = Vec::new();
    for kind in [ExtractorKind::Pixel, ExtractorKind::Randconv] {
        let mut last = 0.0;
        for sigma in [0.05f32, 0.1, 0.2] {
            let fake = real
                .zip_map(&noise, "ladder", |a, n| (a + sigma * n).clamp(-1.0, 1.0))
                .map_err(e)?;
            let s = score_images(&real, &fake, kind).map_err(e)?.score;
            ensure!(s > last, "{kind}: sigma {sigma} scored {s} after {last}");
            last = s;
            ladder.push(format!("{s:.2e}"));
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(180), "took {elapsed:?}");
    Ok(format!("noise ladder {}, {elapsed:.1?}", ladder.join("/")))
}

// ---------------------------------------------------------------- smoke training

fn smoke_corpus(dir: &Path) -> Result<ImageSet, String> {
    synth_toy_corpus(500, 3, 32, 2024, dir).map_err(e)?;
    let (set, report) = load_dataset(&dir.join("silhouette"), 32, true).map_err(e)?;
    ensure!(report.loaded == 500 && set.len() == 500, "loaded {}", set.len());
    Ok(set)
}

fn smoke_training() -> Check {
    let dir = tempfile::tempdir().map_err(e)?;
    let data = smoke_corpus(dir.path())?;
    let kind = ExtractorKind::Randconv;
    let real_stats = image_stats(&data.images, kind).map_err(e)?;
    let score = |model: &Model<f32>| -> Result<f64, String> {
        let Model::Gan(pair) = model else {
            return Err("not a gan".into());
        };
        let (fake, _) = generator_stats(pair, 500, 77, 1.0, kind).map_err(e)?;
        fid(&real_stats, &fake).map_err(e)
    };

    let mut improved = 0;
    let mut lines = Vec::new();
    for seed in 1..=5u64 {
        let start = Instant::now();
        let opts = ModelOptions::Gan(GanOptions::new(Arch::Dcgan, 32, false, 64));
        let model = opts.build::<f32>(&mut Rng::new(seed)).map_err(e)?;
        let before = score(&model)?;
        let mut cfg = TrainConfig::preset(Arch::Dcgan);
        cfg.epochs = 5;
        cfg.seed = seed;
        let state = TrainState::new(model, cfg).map_err(e)?;
        let mut t = Trainer::new(state, Dataset::Images(data.clone()), None).map_err(e)?;
        let recs = t.run().map_err(e)?;
        let took = start.elapsed();
        ensure!(took < Duration::from_secs(15 * 60), "seed {seed} took {took:?}");
        ensure!(recs.len() == 40, "seed {seed}: {} steps", recs.len());
        ensure!(
            recs.iter().all(|r| r.loss_d.is_finite() && r.loss_g.is_some_and(f64::is_finite)),
            "seed {seed}: non-finite loss"
        );
        let after = score(&t.state.model)?;
        if after < before {
            improved += 1;
        }
        lines.push(format!("{before:.4}->{after:.4}"));
    }
    ensure!(improved >= 4, "improved in {improved}/5 seeds: {}", lines.join(", "));

    // penalty run: 5 critic updates per generator update, no clipping, penalty finite throughout
    let start = Instant::now();
    let model = ModelOptions::Gan(GanOptions::new(Arch::WganGp, 32, false, 64))
        .build::<f32>(&mut Rng::new(9))
        .map_err(e)?;
    let mut cfg = TrainConfig::preset(Arch::WganGp);
    ensure!(cfg.n_critic == 5 && cfg.gp_lambda == Some(10.0) && cfg.clip.is_none(), "penalty preset {cfg:?}");
    cfg.epochs = 5;
    let mut t = Trainer::new(TrainState::new(model, cfg).map_err(e)?, Dataset::Images(data), None).map_err(e)?;
    let recs = t.run().map_err(e)?;
    for r in &recs {
        ensure!(r.loss_d.is_finite(), "critic loss at step {}", r.step);
        let gp = r.gp.ok_or(format!("no penalty at step {}", r.step))?;
        ensure!(gp.is_finite() && gp >= 0.0, "penalty {gp} at step {}", r.step);
        ensure!(r.generator_updates == r.critic_updates / 5, "update ratio at step {}", r.step);
        ensure!(r.loss_g.is_some() == (r.critic_updates % 5 == 0), "generator cadence at step {}", r.step);
    }
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(15 * 60), "penalty run took {took:?}");
    Ok(format!("{improved}/5 seeds improved ({}); penalty run {} steps in {took:.1?}", lines.join(", "), recs.len()))
}

// ---------------------------------------------------------------- transfer and resume

fn gan(arch: Arch, cond: bool, seed: u64) -> Model<f32> {
    ModelOptions::Gan(GanOptions::new(arch, 32, cond, 8))
        .build(&mut Rng::new(seed))
        .unwrap()
}

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn transfer_and_resume() -> Check {
    let donor = gan(Arch::Dcgan, false, 11);
    let target = ModelOptions::Gan(GanOptions::new(Arch::Dcgan, 32, true, 8));
    let (warm, report) = warm_start_new(&target, 5, &donor, &FreezeSpec::default()).map_err(e)?;
    let mut copied = 0;
    for entry in &report.entries {
        let (prefix, name) = entry.name.split_once('/').ok_or("bad entry name")?;
        let pick = |m: &Model<f32>| if prefix == "generator" { m.generator().clone() } else { m.discriminator().clone() };
        let ours = pick(&warm).params().get(name).cloned().ok_or("missing target tensor")?;
        let theirs = pick(&donor).params().get(name).cloned();
        let matched = theirs.as_ref().is_some_and(|p| p.value.shape() == ours.value.shape());
        match (&entry.action, matched) {
            (WarmAction::Copied, true) => {
                ensure!(bits(&ours.value) == bits(&theirs.unwrap().value), "{} not bit-equal", entry.name);
                copied += 1;
            }
            (WarmAction::Reinitialized { .. }, false) => {}
            (action, m) => return Err(format!("{}: {action:?} but shape match {m}", entry.name)),
        }
    }

    let cold = target.build::<f32>(&mut Rng::new(5)).map_err(e)?;
    let data = toy_images(16, 32, 5);
    let mut cfg = TrainConfig::preset(Arch::Dcgan);
    cfg.batch_size = 4;
    cfg.conditional = true;
    let first_epoch = |m: Model<f32>| -> Result<Vec<f64>, String> {
        let mut t = Trainer::new(TrainState::new(m, cfg.clone()).map_err(e)?, Dataset::Images(data.clone()), None).map_err(e)?;
        let n = t.steps_per_epoch();
        Ok(t.run_steps(n).map_err(e)?.iter().map(|r| r.loss_d).collect())
    };
    let (w, c) = (first_epoch(warm)?, first_epoch(cold)?);
    ensure!(w != c, "warm and cold trajectories coincide");

    let data = toy_images(20, 32, 2);
    let mut cfg = TrainConfig::preset(Arch::WganGp);
    cfg.batch_size = 6;
    cfg.epochs = 2;
    cfg.conditional = true;
    cfg.augment.enabled = true;
    cfg.augment.initial_p = 0.3;
    let fresh = || TrainState::new(gan(Arch::WganGp, true, 6), cfg.clone()).unwrap();
    let mut whole = Trainer::new(fresh(), Dataset::Images(data.clone()), None).map_err(e)?;
    let all = whole.run().map_err(e)?;
    let dir = tempfile::tempdir().map_err(e)?;
    let path = dir.path().join("mid.sgck");
    let mut first = Trainer::new(fresh(), Dataset::Images(data.clone()), None).map_err(e)?;
    let mut joined = first.run_steps(5).map_err(e)?;
    save_state(&first.state, &path).map_err(e)?;
    let state = load(&path).map_err(e)?.into_state().map_err(e)?;
    let mut second = Trainer::new(state, Dataset::Images(data), None).map_err(e)?;
    joined.extend(second.run().map_err(e)?);
    let key = |r: &MetricRecord| (r.loss_d.to_bits(), r.loss_g.map(f64::to_bits), r.gp.map(f64::to_bits));
    ensure!(
        joined.iter().map(key).collect::<Vec<_>>() == all.iter().map(key).collect::<Vec<_>>(),
        "resumed losses diverge"
    );
    ensure!(second.state == whole.state, "resumed state differs");
    Ok(format!(
        "{copied} tensors copied bit-wise, {} reinitialized; resume bit-identical over {} steps",
        report.reinitialized(None).len(),
        all.len()
    ))
}

// ---------------------------------------------------------------- checkpoint format

fn checkpoint_format() -> Check {
    let dir = tempfile::tempdir().map_err(e)?;
    let model = gan(Arch::Dcgan, false, 1);
    let bytes = encode(&model, None).map_err(e)?;
    let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    ensure!(digest == GOLDEN_DCGAN_SHA256, "file digest {digest}");

    let data = toy_images(12, 32, 1);
    let mut cfg = TrainConfig::preset(Arch::Wgan);
    cfg.batch_size = 4;
    let mut t = Trainer::new(TrainState::new(gan(Arch::Wgan, true, 4), cfg).map_err(e)?, Dataset::Images(data), None)
        .map_err(e)?;
    t.run_steps(5).map_err(e)?;
    let path = dir.path().join("state.sgck");
    save_state(&t.state, &path).map_err(e)?;
    let back = load(&path).map_err(e)?.into_state().map_err(e)?;
    ensure!(back == t.state, "state round trip differs");

    let full = fs::read(&path).map_err(e)?;
    for cut in [full.len() - 1, full.len() / 2, 16] {
        ensure!(matches!(decode(&full[..cut]), Err(Error::Checksum)), "truncation at {cut} undetected");
    }
    for at in [20, full.len() / 2, full.len() - 40] {
        let mut bad = full.clone();
        bad[at] ^= 0x01;
        ensure!(matches!(decode(&bad), Err(Error::Checksum)), "flip at {at} undetected");
    }
    Ok(format!("golden digest {}…, round trip, truncation and bit flips detected", &digest[..12]))
}

// ---------------------------------------------------------------- data pipeline

fn tree_hashes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, Sha256::digest(fs::read(&p).unwrap()).to_vec());
            }
        }
    }
    out
}

fn data_pipeline() -> Check {
    let img = Rng::new(4).uniform_tensor::<f32>(&[3, 9, 9], -1.0, 1.0);
    ensure!(resample_bicubic(&img, 9).map_err(e)? == img, "same-size resample changed pixels");
    for (h, w, oh, ow) in [(3, 5, 17, 2), (12, 12, 5, 7), (1, 1, 9, 9)] {
        let c = Tensor::<f64>::full(&[1, h, w], 0.37);
        let out = resample_bicubic_to(&c, oh, ow).map_err(e)?;
        ensure!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-12), "constant not preserved at {h}x{w}->{oh}x{ow}");
    }
    let (w, h) = (16, 4);
    let ramp: Vec<f64> = (0..h * w).map(|i| -0.9 + 0.1 * (i % w) as f64).collect();
    let up = resample_bicubic_to(&Tensor::<f64>::new(&[1, h, w], ramp).map_err(e)?, 2 * h, 2 * w).map_err(e)?;
    for y in 0..2 * h {
        for x in 4..2 * w - 4 {
            let expect = -0.9 + 0.1 * ((x as f64 + 0.5) / 2.0 - 0.5);
            let got = up.data()[y * 2 * w + x];
            ensure!((got - expect).abs() < 1e-12, "ramp at x={x}: {got} vs {expect}");
        }
    }

    for seed in 0..20 {
        let img = Rng::new(seed).uniform_tensor::<f32>(&[3, 8, 8], -1.0, 1.0);
        let sil = silhouette_from_colored(&img, SILHOUETTE_THRESHOLD).map_err(e)?;
        ensure!(is_binary(&sil), "silhouette not two-valued");
    }

    let src = tempfile::tempdir().map_err(e)?;
    for (class, seed) in [("Man", 1), ("Woman", 2)] {
        for i in 0..3 {
            let col = synth_figure(i, 3, 32, seed).2;
            save_png(&src.path().join(class).join(format!("f{i}.png")), &col).map_err(e)?;
        }
    }
    let out = tempfile::tempdir().map_err(e)?;
    make_pairs(src.path(), out.path(), SILHOUETTE_THRESHOLD).map_err(e)?;
    let first = tree_hashes(out.path());
    make_pairs(src.path(), out.path(), SILHOUETTE_THRESHOLD).map_err(e)?;
    ensure!(tree_hashes(out.path()) == first, "pair generation not idempotent");

    let (a, b, c) = (tempfile::tempdir().map_err(e)?, tempfile::tempdir().map_err(e)?, tempfile::tempdir().map_err(e)?);
    synth_toy_corpus(60, 3, 32, 7, a.path()).map_err(e)?;
    synth_toy_corpus(60, 3, 32, 7, b.path()).map_err(e)?;
    synth_toy_corpus(60, 3, 32, 8, c.path()).map_err(e)?;
    ensure!(tree_hashes(a.path()) == tree_hashes(b.path()), "same seed gave different corpora");
    ensure!(tree_hashes(a.path()) != tree_hashes(c.path()), "different seeds gave the same corpus");
    Ok("bicubic identity/constant/ramp, binary silhouettes, idempotent pairs, seeded corpus".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 8] = [
        ("gradient correctness", gradients),
        ("shape fidelity", shapes),
        ("closed-form oracles", closed_forms),
        ("fid suite", fid_suite),
        ("smoke training", smoke_training),
        ("transfer learning and resume", transfer_and_resume),
        ("checkpoint format", checkpoint_format),
        ("data pipeline", data_pipeline),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(msg)
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
