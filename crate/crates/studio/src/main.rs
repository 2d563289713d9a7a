use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sgan_core::dataio::{self, SILHOUETTE_THRESHOLD};
use sgan_core::eval::{self, ExtractorKind};
use sgan_core::nn::Init;
use sgan_core::snapshots::{self, FreezeSpec};
use sgan_core::training::{AugmentConfig, Categories, Dataset, TrainConfig, TrainState, Trainer};
use sgan_core::zoo::{Arch, GanOptions, Model, ModelOptions, TranslatorOptions, CLASS_NAMES};
use sgan_studio::engine;
use sgan_tensor::Rng;

#[derive(Parser)]
#[command(name = "sgan", version, about = "Silhouette GAN engine and studio")]
struct Cli {
    /// Single-threaded math (results are bit-identical either way).
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a generator pair or a translator.
    Train(TrainArgs),
    /// Write generated images (or colored variants of a silhouette) as PNGs.
    Sample(SampleArgs),
    /// Frechet distance between real images and a directory or a checkpoint.
    Fid(FidArgs),
    /// Derive silhouette/colored pairs from a directory of colored images.
    Pairs(PairsArgs),
    /// Write a synthetic silhouette/colored corpus.
    Synth(SynthArgs),
    /// Print a checkpoint header.
    Inspect(InspectArgs),
    /// Run the HTTP studio service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    arch: Arch,
    /// Image root (`<Class>/*.png`), or a pairs directory for the translator.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    res: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long)]
    conditional: bool,
    /// Treat all classes as one.
    #[arg(long)]
    merge: bool,
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Orthogonal initialization with the large conditional preset.
    #[arg(long)]
    biggan_deep: bool,
    /// `uniform` or `orthogonal`.
    #[arg(long, value_parser = parse_init)]
    init: Option<Init>,
    /// Adaptive augmentation with these categories, e.g. `bgcfnc`.
    #[arg(long)]
    augpipe: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    ada_p: f64,
    /// Warm start from a donor checkpoint.
    #[arg(long)]
    init_from: Option<PathBuf>,
    /// Comma-separated parameter prefixes to freeze, e.g. `discriminator`.
    #[arg(long)]
    freeze: Option<String>,
    /// Continue a run from a checkpoint.
    #[arg(long, conflicts_with = "init_from")]
    resume: Option<PathBuf>,
    /// Checkpoint interval in steps; 0 or absent means once per epoch.
    #[arg(long)]
    checkpoint_every: Option<u64>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    trunc: f64,
    /// Class name or index for conditional generators.
    #[arg(long)]
    class: Option<String>,
    /// Silhouette PNG when the checkpoint holds a translator.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FidArgs {
    #[arg(long)]
    real: PathBuf,
    #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    fake: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "randconv")]
    extractor: ExtractorKind,
    #[arg(long, default_value_t = 50_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    trunc: f64,
    /// Resolution for directory-to-directory scoring.
    #[arg(long, default_value_t = 64)]
    res: usize,
    /// Also write the report to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PairsArgs {
    #[arg(long)]
    colored: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SILHOUETTE_THRESHOLD)]
    threshold: f64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    res: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = CLASS_NAMES.len())]
    classes: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    file: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    session: PathBuf,
}

fn parse_init(s: &str) -> Result<Init, String> {
    match s {
        "uniform" => Ok(Init::Uniform),
        "orthogonal" => Ok(Init::Orthogonal),
        _ => Err(format!("unknown init `{s}` (uniform|orthogonal)")),
    }
}

fn print_json<T: Serialize>(v: &T) -> anyhow::Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let state = if let Some(path) = &a.resume {
        let mut state = snapshots::load(path)?.into_state()?;
        if state.model.arch() != a.arch {
            bail!("{} holds a {} run, not {}", path.display(), state.model.arch(), a.arch);
        }
        if let Some(e) = a.epochs {
            state.progress.config.epochs = e;
        }
        if a.batch.is_some() || a.augpipe.is_some() || a.init.is_some() || a.freeze.is_some() {
            log::warn!("resuming keeps the stored configuration; only --epochs and --checkpoint-every apply");
        }
        log::info!("resuming {} at step {}", path.display(), state.progress.counters.step);
        state
    } else {
        let mut cfg = if a.biggan_deep { TrainConfig::biggan_deep_preset() } else { TrainConfig::preset(a.arch) };
        cfg.arch = a.arch;
        cfg.seed = a.seed;
        cfg.conditional |= a.conditional;
        if let Some(e) = a.epochs {
            cfg.epochs = e;
        }
        if let Some(b) = a.batch {
            cfg.batch_size = b;
        }
        if let Some(i) = a.init {
            cfg.init = i;
        }
        if let Some(pipe) = &a.augpipe {
            cfg.augment = AugmentConfig {
                enabled: true,
                initial_p: a.ada_p,
                categories: Categories::parse(pipe)?,
            };
        }
        let options = if a.arch == Arch::Translator {
            ModelOptions::Translator(TranslatorOptions {
                init: cfg.init,
                ..TranslatorOptions::new(a.width)
            })
        } else {
            ModelOptions::Gan(GanOptions {
                init: cfg.init,
                ..GanOptions::new(a.arch, a.res, cfg.conditional, a.width)
            })
        };
        let freeze = a.freeze.as_deref().map(FreezeSpec::parse).unwrap_or_default();
        let model = match &a.init_from {
            Some(donor_path) => {
                let donor = snapshots::load(donor_path)?.model;
                let (model, report) = snapshots::warm_start_new(&options, cfg.seed, &donor, &freeze)?;
                for e in report.reinitialized(None) {
                    log::info!("reinitialized {} {:?}", e.name, e.shape);
                }
                log::info!(
                    "warm start from {}: {} copied, {} reinitialized, {} frozen",
                    donor_path.display(),
                    report.copied(),
                    report.entries.len() - report.copied(),
                    report.frozen
                );
                model
            }
            None => {
                let mut model = options.build(&mut Rng::new(cfg.seed))?;
                if !freeze.0.is_empty() {
                    snapshots::apply_freeze(&mut model, &freeze)?;
                }
                model
            }
        };
        TrainState::new(model, cfg)?
    };

    let data = match &state.model {
        Model::Translator(t) => Dataset::Pairs(dataio::load_pairs(&a.data, t.options.resolution)?),
        Model::Gan(p) => {
            let (set, report) = dataio::load_dataset(&a.data, p.options.resolution, a.merge)?;
            for (path, why) in &report.skipped {
                log::warn!("skipped {}: {why}", path.display());
            }
            log::info!("loaded {} images in {} classes", set.len(), set.classes());
            Dataset::Images(set)
        }
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut trainer = Trainer::new(state, data, Some(a.out.clone()))?;
    let every = a.checkpoint_every.filter(|&n| n > 0).unwrap_or_else(|| trainer.steps_per_epoch());
    trainer.state.progress.config.checkpoint_every = every;
    let total = trainer.total_steps();
    let started = Instant::now();
    while !trainer.finished() {
        let r = trainer.step()?;
        if r.step % trainer.steps_per_epoch() == 0 || r.step == total {
            log::info!(
                "step {}/{} epoch {} loss_d {:.4} loss_g {} ({:.1}s)",
                r.step,
                total,
                r.epoch,
                r.loss_d,
                r.loss_g.map_or("-".into(), |g| format!("{g:.4}")),
                started.elapsed().as_secs_f64()
            );
        }
    }
    let last = match trainer.last_checkpoint() {
        Some(p) if p.ends_with(sgan_core::training::trainer::checkpoint_name(total)) => p.to_path_buf(),
        _ => trainer.save_checkpoint(&a.out)?,
    };
    println!("{}", last.display());
    Ok(())
}

fn parse_class(text: &str, classes: usize) -> anyhow::Result<usize> {
    let idx = match text.parse::<usize>() {
        Ok(i) => i,
        Err(_) => CLASS_NAMES
            .iter()
            .position(|c| c.eq_ignore_ascii_case(text))
            .with_context(|| format!("unknown class `{text}`"))?,
    };
    if idx >= classes {
        bail!("class {idx} out of range (model has {classes})");
    }
    Ok(idx)
}

fn sample(a: SampleArgs) -> anyhow::Result<()> {
    let model = snapshots::load(&a.checkpoint)?.model;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let pngs: Vec<Vec<u8>> = match &model {
        Model::Gan(pair) => {
            if a.input.is_some() {
                bail!("--input applies to translator checkpoints");
            }
            let class = match &a.class {
                Some(c) if pair.classes() == 0 => bail!("model is unconditional; drop --class `{c}`"),
                Some(c) => Some(parse_class(c, pair.classes())?),
                None => None,
            };
            engine::sample(pair, a.n, a.seed, a.trunc, class)?
                .into_iter()
                .map(|g| g.png)
                .collect()
        }
        Model::Translator(t) => {
            let input = a.input.as_ref().context("translator checkpoints need --input SILHOUETTE.png")?;
            let bytes = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
            let (sil, warning) = engine::prepare_silhouette(&bytes, t.options.resolution)?;
            if let Some(w) = warning {
                log::warn!("{w}");
            }
            engine::colorize(t, &sil, a.seed, a.n)?
        }
    };
    for (i, png) in pngs.iter().enumerate() {
        let path = a.out.join(format!("{i:05}.png"));
        fs::write(&path, png).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("wrote {} images to {}", pngs.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct FidOutput {
    extractor: ExtractorKind,
    score: f64,
    n_real: u64,
    n_fake: u64,
    per_class: Option<Vec<usize>>,
    seed: Option<u64>,
    truncation: Option<f64>,
    extractor_seed: u64,
    real: PathBuf,
    fake: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    seconds: f64,
}

fn fid(a: FidArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let out = if let Some(ck) = &a.checkpoint {
        let Model::Gan(pair) = snapshots::load(ck)?.model else {
            bail!("{} holds a translator; FID scores generators", ck.display());
        };
        let (real, _) = dataio::load_dataset(&a.real, pair.options.resolution, true)?;
        let r = eval::score_generator(&pair, &real.images, a.n, a.seed, a.trunc, a.extractor)?;
        FidOutput {
            extractor: a.extractor,
            score: r.score,
            n_real: r.n_real,
            n_fake: r.n_fake,
            per_class: r.per_class,
            seed: Some(a.seed),
            truncation: Some(a.trunc),
            extractor_seed: eval::RANDCONV_SEED,
            real: a.real,
            fake: None,
            checkpoint: Some(ck.clone()),
            seconds: started.elapsed().as_secs_f64(),
        }
    } else {
        let fake_dir = a.fake.clone().context("give --fake DIR or --checkpoint FILE")?;
        let (real, _) = dataio::load_dataset(&a.real, a.res, true)?;
        let (fake, _) = dataio::load_dataset(&fake_dir, a.res, true)?;
        let r = eval::score_images(&real.images, &fake.images, a.extractor)?;
        FidOutput {
            extractor: a.extractor,
            score: r.score,
            n_real: r.n_real,
            n_fake: r.n_fake,
            per_class: None,
            seed: None,
            truncation: None,
            extractor_seed: eval::RANDCONV_SEED,
            real: a.real,
            fake: Some(fake_dir),
            checkpoint: None,
            seconds: started.elapsed().as_secs_f64(),
        }
    };
    if let Some(path) = &a.report {
        fs::write(path, serde_json::to_vec_pretty(&out)?).with_context(|| format!("writing {}", path.display()))?;
    }
    print_json(&out)
}

fn pairs(a: PairsArgs) -> anyhow::Result<()> {
    let entries = dataio::make_pairs(&a.colored, &a.out, a.threshold)?;
    println!("{} pairs written to {}", entries.len(), a.out.join(dataio::MANIFEST_NAME).display());
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let report = dataio::synth_toy_corpus(a.n, a.classes, a.res, a.seed, &a.out)?;
    println!("{} images {:?} per class; manifest {}", a.n, report.per_class, report.manifest.display());
    Ok(())
}

fn inspect(a: InspectArgs) -> anyhow::Result<()> {
    print_json(&snapshots::read_header(&a.file)?)
}

fn serve(a: ServeArgs) -> anyhow::Result<()> {
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .with_context(|| format!("bad address {}:{}", a.host, a.port))?;
    let state = sgan_studio::open(&a.models, &a.session)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(sgan_studio::serve(addr, state))?;
    Ok(())
}

/// Error chain joined with `: `, skipping causes already spelled out by their parent.
fn message(e: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in e.chain() {
        let part = cause.to_string();
        if !text.ends_with(&part) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&part);
        }
    }
    text
}

fn broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe)
            || c.downcast_ref::<serde_json::Error>().and_then(|e| e.io_error_kind()) == Some(io::ErrorKind::BrokenPipe)
    })
}

fn is_usage(e: &anyhow::Error) -> bool {
    matches!(e.downcast_ref::<sgan_core::Error>(), Some(sgan_core::Error::Config(_)))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    sgan_tensor::kernels::set_parallel(!cli.deterministic);
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Sample(a) => sample(a),
        Command::Fid(a) => fid(a),
        Command::Pairs(a) => pairs(a),
        Command::Synth(a) => synth(a),
        Command::Inspect(a) => inspect(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(if is_usage(&e) { 1 } else { 2 })
        }
    }
}
