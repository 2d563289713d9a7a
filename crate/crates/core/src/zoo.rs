//! Concrete architectures: unconditional/conditional GAN pairs and the
//! silhouette-to-color translator pair.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sgan_tensor::{Element, Rng, Tensor};

use crate::error::{Error, Result};
use crate::nn::{label_planes, Activation, Init, LayerSpec, NetSpec, Network};

pub const LATENT_DIM: usize = 100;
pub const CLASS_NAMES: [&str; 3] = ["Man", "Monster", "Woman"];
pub const LEAKY_SLOPE: f64 = 0.02;
pub const TRANSLATOR_SLOPE: f64 = 0.2;
pub const TRANSLATOR_DROPOUT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    Dcgan,
    Wgan,
    WganGp,
    Translator,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Dcgan => "dcgan",
            Arch::Wgan => "wgan",
            Arch::WganGp => "wgan-gp",
            Arch::Translator => "translator",
        }
    }

    /// Whether the discriminator is an unbounded critic.
    pub fn is_critic(self) -> bool {
        matches!(self, Arch::Wgan | Arch::WganGp)
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dcgan" => Ok(Arch::Dcgan),
            "wgan" => Ok(Arch::Wgan),
            "wgan-gp" => Ok(Arch::WganGp),
            "translator" => Ok(Arch::Translator),
            _ => Err(Error::Config(format!(
                "unknown architecture `{s}` (expected dcgan, wgan, wgan-gp or translator)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanOptions {
    pub arch: Arch,
    pub resolution: usize,
    pub conditional: bool,
    pub classes: usize,
    pub base_width: usize,
    pub channels: usize,
    pub init: Init,
    pub leaky_slope: f64,
}

impl GanOptions {
    pub fn new(arch: Arch, resolution: usize, conditional: bool, base_width: usize) -> Self {
        GanOptions {
            arch,
            resolution,
            conditional,
            classes: CLASS_NAMES.len(),
            base_width,
            channels: 3,
            init: Init::Uniform,
            leaky_slope: LEAKY_SLOPE,
        }
    }
}

const FINAL_LAYER_NOTE: &str =
    "final discriminator layer uses kernel 4, stride 1, padding 0 so a 4x4 map reduces to a scalar";

/// Generator and discriminator descriptors.
pub fn gan_specs(opts: &GanOptions) -> Result<(NetSpec, NetSpec)> {
    if opts.arch == Arch::Translator {
        return Err(Error::Config("use the translator constructor for `translator`".into()));
    }
    let stages = match opts.resolution {
        64 => 4,
        32 => 3,
        r => return Err(Error::Config(format!("unsupported resolution {r} (expected 32 or 64)"))),
    };
    if opts.base_width < 8 {
        return Err(Error::Config(format!("base width {} < 8", opts.base_width)));
    }
    if opts.conditional && opts.classes == 0 {
        return Err(Error::Config("conditional model needs at least one class".into()));
    }
    let w = opts.base_width;
    let classes = if opts.conditional { opts.classes } else { 0 };
    let leaky = LayerSpec::act(Activation::LeakyRelu {
        slope: opts.leaky_slope,
    });

    // generator: 1 -> 4 -> ... -> resolution, widths halve from w * 2^(stages-1)
    let mut g = Vec::new();
    if opts.conditional {
        g.push(LayerSpec::ConcatLabel);
    }
    for s in 0..stages {
        let maps = w << (stages - 1 - s);
        g.push(if s == 0 {
            LayerSpec::tconv(maps, 4, 1, 0)
        } else {
            LayerSpec::tconv(maps, 4, 2, 1)
        });
        g.push(LayerSpec::BatchNorm);
        g.push(LayerSpec::act(Activation::Relu));
    }
    g.push(LayerSpec::tconv(opts.channels, 4, 2, 1));
    g.push(LayerSpec::act(Activation::Tanh));

    let normalize = opts.arch != Arch::WganGp;
    let mut d = Vec::new();
    if opts.conditional {
        d.push(LayerSpec::ConcatLabel);
    }
    for s in 0..stages {
        d.push(LayerSpec::conv(w << s, 4, 2, 1));
        if s > 0 && normalize {
            d.push(LayerSpec::BatchNorm);
        }
        d.push(leaky.clone());
    }
    d.push(LayerSpec::conv(1, 4, 1, 0));
    if !opts.arch.is_critic() {
        d.push(LayerSpec::act(Activation::Sigmoid));
    }
    d.push(LayerSpec::Flatten);

    let mut notes = vec![FINAL_LAYER_NOTE.to_string()];
    if opts.resolution == 32 {
        notes.push("32x32 variant: the widest stride-2 stage is dropped from both networks".into());
    }
    let mut d_notes = notes.clone();
    if opts.arch.is_critic() {
        d_notes.push("critic: final sigmoid omitted (unbounded score)".into());
    }
    if !normalize {
        d_notes.push("gradient-penalty critic: batch norm removed".into());
    }
    if opts.conditional {
        notes.push("labels injected as one-hot channels".into());
        d_notes.push("labels injected as one-hot constant planes".into());
    }

    let gen = NetSpec {
        name: "generator".into(),
        input: [LATENT_DIM, 1, 1],
        classes,
        init: opts.init,
        layers: g,
        notes,
    };
    let disc = NetSpec {
        name: if opts.arch.is_critic() { "critic" } else { "discriminator" }.into(),
        input: [opts.channels, opts.resolution, opts.resolution],
        classes,
        init: opts.init,
        layers: d,
        notes: d_notes,
    };
    Ok((gen, disc))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanPair<T: Element = f32> {
    pub options: GanOptions,
    pub generator: Network<T>,
    pub discriminator: Network<T>,
}

impl<T: Element> GanPair<T> {
    pub fn latent_dim(&self) -> usize {
        LATENT_DIM
    }

    /// Classes of a conditional pair, 0 otherwise.
    pub fn classes(&self) -> usize {
        if self.options.conditional {
            self.options.classes
        } else {
            0
        }
    }
}

pub fn build_gan<T: Element>(opts: &GanOptions, rng: &mut Rng) -> Result<GanPair<T>> {
    let (g, d) = gan_specs(opts)?;
    let generator = Network::new(g, rng)?;
    let discriminator = Network::new(d, rng)?;
    Ok(GanPair {
        options: opts.clone(),
        generator,
        discriminator,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslatorOptions {
    pub resolution: usize,
    pub base_width: usize,
    pub init: Init,
}

impl TranslatorOptions {
    pub fn new(base_width: usize) -> Self {
        TranslatorOptions {
            resolution: 64,
            base_width,
            init: Init::Uniform,
        }
    }
}

pub fn translator_specs(opts: &TranslatorOptions) -> Result<(NetSpec, NetSpec)> {
    if opts.resolution != 64 {
        return Err(Error::Config(format!(
            "translator resolution {} unsupported (expected 64)",
            opts.resolution
        )));
    }
    if opts.base_width < 1 {
        return Err(Error::Config("base width must be positive".into()));
    }
    let w = opts.base_width;
    let r = opts.resolution;
    let leaky = LayerSpec::act(Activation::LeakyRelu {
        slope: TRANSLATOR_SLOPE,
    });
    let relu = LayerSpec::act(Activation::Relu);
    let drop = LayerSpec::Dropout {
        p: TRANSLATOR_DROPOUT,
    };
    let g = vec![
        // encoder 64 -> 32 -> 16 -> 8 -> 4
        LayerSpec::conv(w, 4, 2, 1),
        leaky.clone(),
        LayerSpec::SkipSave,
        LayerSpec::conv(2 * w, 4, 2, 1),
        LayerSpec::BatchNorm,
        leaky.clone(),
        LayerSpec::SkipSave,
        LayerSpec::conv(4 * w, 4, 2, 1),
        LayerSpec::BatchNorm,
        leaky.clone(),
        LayerSpec::SkipSave,
        LayerSpec::conv(8 * w, 4, 2, 1),
        LayerSpec::BatchNorm,
        leaky.clone(),
        // decoder 4 -> 8 -> 16 -> 32 -> 64 with mirrored skips
        LayerSpec::tconv(4 * w, 4, 2, 1),
        LayerSpec::BatchNorm,
        drop.clone(),
        relu.clone(),
        LayerSpec::SkipConcat,
        LayerSpec::tconv(2 * w, 4, 2, 1),
        LayerSpec::BatchNorm,
        drop,
        relu.clone(),
        LayerSpec::SkipConcat,
        LayerSpec::tconv(w, 4, 2, 1),
        LayerSpec::BatchNorm,
        relu,
        LayerSpec::SkipConcat,
        LayerSpec::tconv(3, 4, 2, 1),
        LayerSpec::act(Activation::Tanh),
    ];
    let d = vec![
        LayerSpec::conv(w, 4, 2, 1),
        leaky.clone(),
        LayerSpec::conv(2 * w, 4, 2, 1),
        LayerSpec::BatchNorm,
        leaky.clone(),
        LayerSpec::conv(4 * w, 4, 2, 1),
        LayerSpec::BatchNorm,
        leaky,
        LayerSpec::conv(1, 3, 1, 0),
        LayerSpec::act(Activation::Sigmoid),
    ];
    let gen = NetSpec {
        name: "translator".into(),
        input: [1, r, r],
        classes: 0,
        init: opts.init,
        layers: g,
        notes: vec!["dropout in the first two decoder stages is the variant noise source".into()],
    };
    let disc = NetSpec {
        name: "patch-discriminator".into(),
        input: [4, r, r],
        classes: 0,
        init: opts.init,
        layers: d,
        notes: vec!["input is the silhouette channel stacked before the three color channels".into()],
    };
    Ok((gen, disc))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TranslatorPair<T: Element = f32> {
    pub options: TranslatorOptions,
    pub generator: Network<T>,
    pub discriminator: Network<T>,
}

pub fn build_translator<T: Element>(opts: &TranslatorOptions, rng: &mut Rng) -> Result<TranslatorPair<T>> {
    let (g, d) = translator_specs(opts)?;
    Ok(TranslatorPair {
        options: opts.clone(),
        generator: Network::new(g, rng)?,
        discriminator: Network::new(d, rng)?,
    })
}

/// Options of either model family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ModelOptions {
    Gan(GanOptions),
    Translator(TranslatorOptions),
}

impl ModelOptions {
    pub fn arch(&self) -> Arch {
        match self {
            ModelOptions::Gan(o) => o.arch,
            ModelOptions::Translator(_) => Arch::Translator,
        }
    }

    pub fn specs(&self) -> Result<(NetSpec, NetSpec)> {
        match self {
            ModelOptions::Gan(o) => gan_specs(o),
            ModelOptions::Translator(o) => translator_specs(o),
        }
    }

    pub fn build<T: Element>(&self, rng: &mut Rng) -> Result<Model<T>> {
        Ok(match self {
            ModelOptions::Gan(o) => Model::Gan(build_gan(o, rng)?),
            ModelOptions::Translator(o) => Model::Translator(build_translator(o, rng)?),
        })
    }
}

/// A generator with its discriminator, of either family.
#[derive(Clone, Debug, PartialEq)]
pub enum Model<T: Element = f32> {
    Gan(GanPair<T>),
    Translator(TranslatorPair<T>),
}

impl<T: Element> Model<T> {
    pub fn options(&self) -> ModelOptions {
        match self {
            Model::Gan(p) => ModelOptions::Gan(p.options.clone()),
            Model::Translator(p) => ModelOptions::Translator(p.options.clone()),
        }
    }

    pub fn arch(&self) -> Arch {
        self.options().arch()
    }

    pub fn generator(&self) -> &Network<T> {
        match self {
            Model::Gan(p) => &p.generator,
            Model::Translator(p) => &p.generator,
        }
    }

    pub fn discriminator(&self) -> &Network<T> {
        match self {
            Model::Gan(p) => &p.discriminator,
            Model::Translator(p) => &p.discriminator,
        }
    }

    pub fn generator_mut(&mut self) -> &mut Network<T> {
        match self {
            Model::Gan(p) => &mut p.generator,
            Model::Translator(p) => &mut p.generator,
        }
    }

    pub fn discriminator_mut(&mut self) -> &mut Network<T> {
        match self {
            Model::Gan(p) => &mut p.discriminator,
            Model::Translator(p) => &mut p.discriminator,
        }
    }

    /// `(prefix, network)` for both networks, generator first.
    pub fn networks(&self) -> [(&'static str, &Network<T>); 2] {
        [("generator", self.generator()), ("discriminator", self.discriminator())]
    }

    pub fn network_mut(&mut self, prefix: &str) -> Option<&mut Network<T>> {
        match prefix {
            "generator" => Some(self.generator_mut()),
            "discriminator" => Some(self.discriminator_mut()),
            _ => None,
        }
    }

    /// Class count a conditional model expects, 0 otherwise.
    pub fn classes(&self) -> usize {
        match self {
            Model::Gan(p) => p.classes(),
            Model::Translator(_) => 0,
        }
    }
}

/// Latent batch `[n, latent, 1, 1]` with the one-hot labels appended on the channel axis.
pub fn condition_latent<T: Element>(z: &Tensor<T>, labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    condition_image(z, labels, classes)
}

/// Image batch with one constant plane per class appended after the image channels.
pub fn condition_image<T: Element>(x: &Tensor<T>, labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let (n, _, h, w) = x.dims4("condition")?;
    if labels.len() != n {
        return Err(Error::Invalid(format!("{} labels for batch {n}", labels.len())));
    }
    let planes = label_planes(labels, classes, h, w)?;
    Ok(Tensor::concat_channels(&[x, &planes])?)
}
