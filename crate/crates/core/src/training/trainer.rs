//! Per-architecture training loops over an in-memory dataset.

use std::fs::OpenOptions;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sgan_tensor::{Element, Rng, Tape, Tensor, TensorError, Var};

use super::augment::{AugmentPlan, AugmentState};
use super::config::TrainConfig;
use super::losses::{bce, bce_generator, gradient_penalty, l1, wasserstein_critic, wasserstein_generator};
use super::optim::{clip_weights, Optimizer};
use super::{sample_latent, Counters};
use crate::dataio::{ImageSet, PairSet};
use crate::error::{Error, Result};
use crate::nn::{Bound, Network, Pass};
use crate::snapshots;
use crate::zoo::{Arch, GanPair, Model, TranslatorPair};

const SHUFFLE_DOMAIN: u16 = 0x5401;
const STEP_DOMAIN: u16 = 0x5402;

pub const METRICS_FILE: &str = "metrics.jsonl";

/// Training data of either stage.
#[derive(Clone, Debug)]
pub enum Dataset {
    Images(ImageSet),
    Pairs(PairSet),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Images(s) => s.len(),
            Dataset::Pairs(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything besides the networks that a resumed run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Progress {
    pub config: TrainConfig,
    pub counters: Counters,
    pub augment: AugmentState,
    pub opt_g: Optimizer<f32>,
    pub opt_d: Optimizer<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: Model<f32>,
    pub progress: Progress,
}

impl TrainState {
    /// Fresh optimizer state and counters for `model`.
    pub fn new(model: Model<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.arch != model.arch() {
            return Err(Error::Config(format!(
                "config is for {} but the model is {}",
                config.arch,
                model.arch()
            )));
        }
        let augment = AugmentState::new(config.augment.enabled, config.augment.initial_p, config.augment.categories);
        let progress = Progress {
            opt_g: Optimizer::new(config.optimizer, model.generator().params().len()),
            opt_d: Optimizer::new(config.optimizer, model.discriminator().params().len()),
            counters: Counters::default(),
            augment,
            config,
        };
        Ok(TrainState { model, progress })
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub epoch: u64,
    pub loss_d: f64,
    /// Absent on steps without a generator update.
    pub loss_g: Option<f64>,
    pub p: f64,
    pub r_t: f64,
    pub seconds: f64,
    pub gp: Option<f64>,
    pub l1: Option<f64>,
    /// Range of the generated batch.
    pub g_min: f64,
    pub g_max: f64,
    pub critic_updates: u64,
    pub generator_updates: u64,
}

struct StepOut {
    loss_d: f64,
    loss_g: Option<f64>,
    gp: Option<f64>,
    l1: Option<f64>,
    g_range: (f64, f64),
}

/// Batch ranges of one epoch; a trailing single sample joins the previous batch.
pub fn batch_ranges(n: usize, batch: usize) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut s = 0;
    while s < n {
        let e = (s + batch).min(n);
        out.push(s..e);
        s = e;
    }
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").end = last.end;
    }
    out
}

pub struct Trainer {
    pub state: TrainState,
    data: Dataset,
    run_dir: Option<PathBuf>,
    last_checkpoint: Option<PathBuf>,
    order: Option<(u64, Vec<usize>)>,
}

impl Trainer {
    pub fn new(state: TrainState, data: Dataset, run_dir: Option<PathBuf>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset("training set is empty".into()));
        }
        if data.len() < 2 {
            return Err(Error::Config("batch norm needs at least 2 training samples".into()));
        }
        match (&state.model, &data) {
            (Model::Gan(pair), Dataset::Images(set)) => {
                let o = &pair.options;
                if set.resolution() != o.resolution || set.images.shape()[1] != o.channels {
                    return Err(Error::Config(format!(
                        "data is {:?} per image, model expects [{}, {r}, {r}]",
                        &set.images.shape()[1..],
                        o.channels,
                        r = o.resolution
                    )));
                }
                if o.conditional && set.classes() != o.classes {
                    return Err(Error::Config(format!(
                        "conditional model has {} classes, data has {}",
                        o.classes,
                        set.classes()
                    )));
                }
            }
            (Model::Translator(pair), Dataset::Pairs(set)) => {
                if set.silhouettes.shape()[2] != pair.options.resolution {
                    return Err(Error::Config(format!(
                        "pairs are {}px, translator expects {}px",
                        set.silhouettes.shape()[2],
                        pair.options.resolution
                    )));
                }
            }
            _ => return Err(Error::Config("dataset kind does not fit the model".into())),
        }
        if let Some(dir) = &run_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(Trainer {
            state,
            data,
            run_dir,
            last_checkpoint: None,
            order: None,
        })
    }

    pub fn steps_per_epoch(&self) -> u64 {
        batch_ranges(self.data.len(), self.state.progress.config.batch_size).len() as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_epoch() * self.state.progress.config.epochs
    }

    pub fn finished(&self) -> bool {
        self.state.progress.counters.epoch >= self.state.progress.config.epochs
    }

    pub fn last_checkpoint(&self) -> Option<&Path> {
        self.last_checkpoint.as_deref()
    }

    fn permutation(&mut self, epoch: u64) -> &[usize] {
        if self.order.as_ref().map(|o| o.0) != Some(epoch) {
            let seed = self.state.progress.config.seed;
            let perm = Rng::derive(seed, SHUFFLE_DOMAIN, epoch).permutation(self.data.len());
            self.order = Some((epoch, perm));
        }
        &self.order.as_ref().expect("just set").1
    }

    /// Run one batch.
    pub fn step(&mut self) -> Result<MetricRecord> {
        let started = Instant::now();
        let counters = self.state.progress.counters;
        let ranges = batch_ranges(self.data.len(), self.state.progress.config.batch_size);
        let range = ranges[counters.batch_in_epoch as usize].clone();
        let idx = self.permutation(counters.epoch)[range].to_vec();
        let mut rng = Rng::derive(self.state.progress.config.seed, STEP_DOMAIN, counters.step);
        let TrainState { model, progress } = &mut self.state;
        let result = match (model, &self.data) {
            (Model::Gan(pair), Dataset::Images(set)) => {
                let (real, labels) = set.batch(&idx)?;
                gan_step(pair, progress, &real, &labels, &mut rng)
            }
            (Model::Translator(pair), Dataset::Pairs(set)) => {
                let (sil, col) = set.batch(&idx)?;
                translator_step(pair, progress, &sil, &col, &mut rng)
            }
            _ => Err(Error::Config("dataset kind does not fit the model".into())),
        };
        let out = result.map_err(|e| match e {
            Error::NonFinite { .. }
            | Error::Tensor(TensorError::NonFinite { .. })
            | Error::Layer {
                source: TensorError::NonFinite { .. },
                ..
            } => Error::NonFinite {
                step: counters.step + 1,
                last_checkpoint: self.last_checkpoint.clone(),
            },
            other => other,
        })?;

        let c = &mut progress.counters;
        c.step += 1;
        c.batch_in_epoch += 1;
        if c.batch_in_epoch as usize == ranges.len() {
            c.batch_in_epoch = 0;
            c.epoch += 1;
        }
        let record = MetricRecord {
            step: c.step,
            epoch: counters.epoch,
            loss_d: out.loss_d,
            loss_g: out.loss_g,
            p: progress.augment.p,
            r_t: progress.augment.r_t,
            seconds: started.elapsed().as_secs_f64(),
            gp: out.gp,
            l1: out.l1,
            g_min: out.g_range.0,
            g_max: out.g_range.1,
            critic_updates: c.critic_updates,
            generator_updates: c.generator_updates,
        };
        let every = progress.config.checkpoint_every;
        let step = c.step;
        if let Some(dir) = self.run_dir.clone() {
            append_metric(&dir.join(METRICS_FILE), &record)?;
            if every > 0 && step % every == 0 {
                self.save_checkpoint(&dir)?;
            }
        }
        Ok(record)
    }

    /// Write `ckpt-<step>.sgck` into `dir`.
    pub fn save_checkpoint(&mut self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(checkpoint_name(self.state.progress.counters.step));
        snapshots::save_state(&self.state, &path)?;
        self.last_checkpoint = Some(path.clone());
        Ok(path)
    }

    pub fn run_steps(&mut self, n: u64) -> Result<Vec<MetricRecord>> {
        let mut out = Vec::new();
        for _ in 0..n {
            if self.finished() {
                break;
            }
            out.push(self.step()?);
        }
        Ok(out)
    }

    /// Train until the configured epoch count; a final checkpoint is written to the run directory.
    pub fn run(&mut self) -> Result<Vec<MetricRecord>> {
        let mut out = Vec::new();
        while !self.finished() {
            out.push(self.step()?);
        }
        if let Some(dir) = self.run_dir.clone() {
            let name = checkpoint_name(self.state.progress.counters.step);
            if self.last_checkpoint.as_ref().and_then(|p| p.file_name()) != Some(name.as_ref()) {
                self.save_checkpoint(&dir)?;
            }
        }
        Ok(out)
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }
}

pub fn checkpoint_name(step: u64) -> String {
    format!("ckpt-{step:08}.sgck")
}

fn append_metric(path: &Path, record: &MetricRecord) -> Result<()> {
    let mut line = serde_json::to_string(record).map_err(|e| Error::Format(e.to_string()))?;
    line.push('\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Format(e.to_string())))
        .collect()
}

fn range_of(t: &Tensor<f32>) -> (f64, f64) {
    t.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v as f64), hi.max(v as f64))
    })
}

fn mean_of(t: &Tensor<f32>) -> f64 {
    t.data().iter().map(|&v| v as f64).sum::<f64>() / t.numel().max(1) as f64
}

fn checked(loss: Var<'_, f32>, step: u64) -> Result<f64> {
    let v = loss.item().as_f64();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            step,
            last_checkpoint: None,
        })
    }
}

/// Backpropagate `loss` into the unfrozen parameters of `net` and take one optimizer step.
fn update<'t>(
    tape: &'t Tape<f32>,
    loss: Var<'t, f32>,
    net: &mut Network<f32>,
    bound: &Bound<'t, f32>,
    opt: &mut Optimizer<f32>,
) -> Result<()> {
    let vars = bound.trainable(net);
    if vars.is_empty() {
        return Ok(());
    }
    let wrt: Vec<Var<'t, f32>> = vars.iter().map(|v| v.1).collect();
    let grads = tape.backward(loss, &wrt)?;
    let pairs: Vec<(usize, Tensor<f32>)> = vars.iter().map(|v| v.0).zip(grads).collect();
    opt.step(net.params_mut(), &pairs)
}

fn plan_for(state: &AugmentState, shape: &[usize], rng: &mut Rng) -> AugmentPlan {
    let shape = [shape[0], shape[1], shape[2], shape[3]];
    AugmentPlan::sample(state, shape, rng)
}

fn gan_step(
    pair: &mut GanPair<f32>,
    progress: &mut Progress,
    real: &Tensor<f32>,
    labels: &[usize],
    rng: &mut Rng,
) -> Result<StepOut> {
    let arch = pair.options.arch;
    let step = progress.counters.step + 1;
    let n = real.shape()[0];
    let labels = pair.options.conditional.then_some(labels);
    let z = sample_latent::<f32>(rng, n);
    let plan = plan_for(&progress.augment, real.shape(), rng);

    let tape = Tape::new();
    let gb = pair.generator.bind(&tape);
    let mut gpass = Pass::train().with_labels(labels);
    let fake = pair.generator.forward(&gb, tape.constant(z), &mut gpass)?;
    let g_range = range_of(&fake.value());

    // discriminator / critic
    let db = pair.discriminator.bind(&tape);
    let mut dpass = Pass::train().with_labels(labels);
    let real_in = plan.apply(tape.constant(real.clone()))?;
    let fake_in = plan.apply(fake.detach())?;
    let d_real = pair.discriminator.forward(&db, real_in, &mut dpass)?;
    let d_fake = pair.discriminator.forward(&db, fake_in, &mut dpass)?;
    let (real_scores, fake_scores) = (d_real.value(), d_fake.value());
    let mut loss_d = match arch {
        Arch::Dcgan => bce(d_real, 1.0)?.add(bce(d_fake, 0.0)?)?,
        _ => wasserstein_critic(d_real, d_fake)?,
    };
    let mut gp = None;
    if let Some(lambda) = progress.config.gp_lambda {
        let disc = &pair.discriminator;
        let critic = |x| {
            let mut p = Pass::train().with_labels(labels);
            disc.forward(&db, x, &mut p)
        };
        let pen = gradient_penalty(critic, &real_in.value(), &fake_in.value(), lambda, rng, &tape)?;
        gp = Some(pen.item().as_f64());
        loss_d = loss_d.add(pen)?;
    }
    let ld = checked(loss_d, step)?;
    update(&tape, loss_d, &mut pair.discriminator, &db, &mut progress.opt_d)?;
    pair.discriminator.commit(&dpass.bn_updates);
    if let Some(c) = progress.config.clip {
        clip_weights(pair.discriminator.params_mut(), c);
    }
    progress.counters.critic_updates += 1;
    let center = if arch.is_critic() { mean_of(&fake_scores) } else { 0.5 };
    let reals: Vec<f64> = real_scores.data().iter().map(|&v| v as f64).collect();
    progress.augment.update(&reals, center);

    // generator
    pair.generator.commit(&gpass.bn_updates);
    let due = !arch.is_critic() || progress.counters.critic_updates.is_multiple_of(progress.config.n_critic);
    let mut loss_g = None;
    if due {
        let db = pair.discriminator.bind_const(&tape);
        let mut dpass = Pass::train().with_labels(labels);
        let score = pair.discriminator.forward(&db, plan.apply(fake)?, &mut dpass)?;
        let lg = match arch {
            Arch::Dcgan => bce_generator(score)?,
            _ => wasserstein_generator(score)?,
        };
        loss_g = Some(checked(lg, step)?);
        update(&tape, lg, &mut pair.generator, &gb, &mut progress.opt_g)?;
        progress.counters.generator_updates += 1;
    }
    Ok(StepOut {
        loss_d: ld,
        loss_g,
        gp,
        l1: None,
        g_range,
    })
}

fn translator_step(
    pair: &mut TranslatorPair<f32>,
    progress: &mut Progress,
    sil: &Tensor<f32>,
    col: &Tensor<f32>,
    rng: &mut Rng,
) -> Result<StepOut> {
    let step = progress.counters.step + 1;
    let (n, _, h, w) = sil.dims4("silhouettes")?;
    let plan = plan_for(&progress.augment, &[n, 4, h, w], rng);

    let tape = Tape::new();
    let sil_v = tape.constant(sil.clone());
    let col_v = tape.constant(col.clone());
    let gb = pair.generator.bind(&tape);
    let mut gpass = Pass::train().with_noise(rng);
    let fake = pair.generator.forward(&gb, sil_v, &mut gpass)?;
    let g_range = range_of(&fake.value());
    let bn_g = std::mem::take(&mut gpass.bn_updates);
    drop(gpass);

    let db = pair.discriminator.bind(&tape);
    let mut dpass = Pass::train();
    let real_in = plan.apply(Var::concat_channels(&[sil_v, col_v])?)?;
    let fake_in = plan.apply(Var::concat_channels(&[sil_v, fake.detach()])?)?;
    let d_real = pair.discriminator.forward(&db, real_in, &mut dpass)?;
    let d_fake = pair.discriminator.forward(&db, fake_in, &mut dpass)?;
    let real_scores = d_real.value();
    let loss_d = bce(d_real, 1.0)?.add(bce(d_fake, 0.0)?)?;
    let ld = checked(loss_d, step)?;
    update(&tape, loss_d, &mut pair.discriminator, &db, &mut progress.opt_d)?;
    pair.discriminator.commit(&dpass.bn_updates);
    progress.counters.critic_updates += 1;
    let reals: Vec<f64> = real_scores.data().iter().map(|&v| v as f64).collect();
    progress.augment.update(&reals, 0.5);

    pair.generator.commit(&bn_g);
    let db = pair.discriminator.bind_const(&tape);
    let mut dpass = Pass::train();
    let score = pair
        .discriminator
        .forward(&db, plan.apply(Var::concat_channels(&[sil_v, fake])?)?, &mut dpass)?;
    let rec = l1(fake, col_v)?;
    let l1_value = rec.item().as_f64();
    let lg = bce_generator(score)?.add(rec.scale(progress.config.l1_weight))?;
    let loss_g = checked(lg, step)?;
    update(&tape, lg, &mut pair.generator, &gb, &mut progress.opt_g)?;
    progress.counters.generator_updates += 1;
    Ok(StepOut {
        loss_d: ld,
        loss_g: Some(loss_g),
        gp: None,
        l1: Some(l1_value),
        g_range,
    })
}
