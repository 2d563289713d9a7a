//! Inference used by the service: sampling, latent interpolation and colorization.

use sgan_core::dataio::{decode_png_bytes, encode_png, is_binary, silhouette_channel, silhouette_from_colored, to_gray, SILHOUETTE_THRESHOLD};
use sgan_core::nn::Pass;
use sgan_core::training::{generate, sample_latent, truncate_latent};
use sgan_core::zoo::{GanPair, TranslatorPair, LATENT_DIM};
use sgan_tensor::{Rng, Tape, Tensor};

use crate::error::{Result, StudioError};

const VARIANT_DOMAIN: u16 = 0x5700;

/// One generated image and the generator input that produced it.
#[derive(Clone, Debug)]
pub struct Generated {
    pub latent: Vec<f32>,
    pub class: Option<usize>,
    pub png: Vec<u8>,
}

fn single_image(batch: &Tensor<f32>, i: usize) -> Result<Tensor<f32>> {
    let row = batch.row(i).map_err(sgan_core::Error::from)?;
    Ok(row)
}

/// Generate from one explicit latent. Images are produced one at a time so a
/// latent always renders to the same bytes regardless of the request it came from.
pub fn render_latent(pair: &GanPair<f32>, latent: &[f32], class: Option<usize>) -> Result<Vec<u8>> {
    if latent.len() != LATENT_DIM {
        return Err(StudioError::Invalid(format!("latent has {} values, expected {LATENT_DIM}", latent.len())));
    }
    let z = Tensor::new(&[1, LATENT_DIM, 1, 1], latent.to_vec()).map_err(sgan_core::Error::from)?;
    let labels = class.map(|c| vec![c]);
    let img = generate(pair, &z, labels.as_deref())?;
    Ok(encode_png(&single_image(&img, 0)?)?)
}

/// `count` samples from `seed`: latents drawn as one batch, truncated by `psi`.
/// Conditional models take `class` for every sample, or cycle through the classes.
pub fn sample(pair: &GanPair<f32>, count: usize, seed: u64, psi: f64, class: Option<usize>) -> Result<Vec<Generated>> {
    let classes = pair.classes();
    if let Some(c) = class {
        if classes == 0 {
            return Err(StudioError::Invalid("model is unconditional; omit `class`".into()));
        }
        if c >= classes {
            return Err(StudioError::Invalid(format!("class {c} out of range (model has {classes})")));
        }
    }
    let z = truncate_latent(&sample_latent::<f32>(&mut Rng::new(seed), count), psi)?;
    (0..count)
        .map(|i| {
            let latent = z.data()[i * LATENT_DIM..(i + 1) * LATENT_DIM].to_vec();
            let class = (classes > 0).then(|| class.unwrap_or(i % classes));
            let png = render_latent(pair, &latent, class)?;
            Ok(Generated { latent, class, png })
        })
        .collect()
}

/// `(1 - t) a + t b`, computed in f64.
pub fn lerp(a: &[f32], b: &[f32], t: f64) -> Vec<f32> {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| ((1.0 - t) * x as f64 + t * y as f64) as f32)
        .collect()
}

/// Evenly spaced interpolation parameters, both ends included.
pub fn steps(k: usize) -> Vec<f64> {
    (0..k).map(|i| i as f64 / (k - 1) as f64).collect()
}

/// Silhouette input for the translator from PNG bytes: `[1, 1, r, r]` in {-1, +1}.
/// Non-binary images are thresholded first, and a warning says so.
pub fn prepare_silhouette(png: &[u8], resolution: usize) -> Result<(Tensor<f32>, Option<String>)> {
    let img = decode_png_bytes(png).map_err(|e| StudioError::Invalid(format!("cannot decode PNG: {e}")))?;
    let gray = to_gray(&img)?;
    let (source, warning) = if is_binary(&gray) {
        (img, None)
    } else {
        let mask = silhouette_from_colored(&img, SILHOUETTE_THRESHOLD)?;
        let warning = format!("image was not binary; thresholded at luminance {SILHOUETTE_THRESHOLD}");
        (mask, Some(warning))
    };
    let sil = silhouette_channel(&source, resolution)?;
    let shape = [1, 1, resolution, resolution];
    Ok((sil.reshape(&shape).map_err(sgan_core::Error::from)?, warning))
}

/// `n` colored variants of one silhouette. Dropout noise is the variant source;
/// variant `i` draws it from `(seed, i)`.
pub fn colorize(pair: &TranslatorPair<f32>, silhouette: &Tensor<f32>, seed: u64, n: usize) -> Result<Vec<Vec<u8>>> {
    (0..n)
        .map(|i| {
            let mut rng = Rng::derive(seed, VARIANT_DOMAIN, i as u64);
            let tape = Tape::new();
            let out = tape.no_grad(|| -> Result<Tensor<f32>> {
                let bound = pair.generator.bind_const(&tape);
                let mut pass = Pass::eval().with_noise(&mut rng);
                Ok(pair
                    .generator
                    .forward(&bound, tape.constant(silhouette.clone()), &mut pass)?
                    .value())
            })?;
            if !out.is_finite() {
                return Err(sgan_core::Error::NonFiniteOutput("translator".into()).into());
            }
            Ok(encode_png(&single_image(&out, 0)?)?)
        })
        .collect()
}
