#![allow(dead_code)]

use sgan_core::dataio::{synth_figure, ImageSet};
use sgan_core::training::{Dataset, TrainConfig, TrainState, Trainer};
use sgan_core::zoo::{Arch, GanOptions, ModelOptions, CLASS_NAMES};
use sgan_tensor::{Rng, Tensor};

/// Synthetic silhouettes as 3-channel images, labelled round-robin.
pub fn toy_images(n: usize, resolution: usize, seed: u64) -> ImageSet {
    let mut imgs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (class, sil, _) = synth_figure(i, 3, resolution, seed);
        imgs.extend(std::iter::repeat_n(sil.data().to_vec(), 3).flatten());
        labels.push(class);
    }
    let images = Tensor::new(&[n, 3, resolution, resolution], imgs).unwrap();
    ImageSet::from_tensor(images, labels, CLASS_NAMES.iter().map(|s| s.to_string()).collect()).unwrap()
}

pub fn gan_trainer(arch: Arch, width: usize, conditional: bool, data: &ImageSet, seed: u64, tweak: impl FnOnce(&mut TrainConfig)) -> Trainer {
    let model = ModelOptions::Gan(GanOptions::new(arch, 32, conditional, width))
        .build(&mut Rng::new(seed))
        .unwrap();
    let mut cfg = TrainConfig::preset(arch);
    cfg.seed = seed;
    cfg.conditional = conditional;
    tweak(&mut cfg);
    Trainer::new(TrainState::new(model, cfg).unwrap(), Dataset::Images(data.clone()), None).unwrap()
}
