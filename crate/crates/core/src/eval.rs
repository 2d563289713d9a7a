//! Fréchet distance between Gaussian fits of image features.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use sgan_tensor::{Rng, Tensor};

use crate::dataio::resample_bicubic;
use crate::error::{Error, Result};
use crate::nn::{Activation, Init, LayerSpec, NetSpec, Network};
use crate::training::{sample_latent, truncate_latent};
use crate::zoo::GanPair;

pub const PIXEL_SIDE: usize = 16;
pub const RANDCONV_SEED: u64 = 0x00F1_D5EE;
pub const RANDCONV_WIDTHS: [usize; 3] = [32, 64, 128];
/// Relative tolerance for negative eigenvalues treated as round-off.
pub const PSD_TOLERANCE: f64 = 1e-6;
pub const FID_RIDGE: f64 = 1e-6;
pub const CHUNK: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorKind {
    /// Bicubic downsample to 16x16 luma.
    Pixel,
    /// Fixed random conv stack with global average pooling.
    Randconv,
}

impl fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExtractorKind::Pixel => "pixel",
            ExtractorKind::Randconv => "randconv",
        })
    }
}

impl FromStr for ExtractorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel" => Ok(ExtractorKind::Pixel),
            "randconv" => Ok(ExtractorKind::Randconv),
            _ => Err(Error::Config(format!("unknown extractor {s:?} (pixel, randconv)"))),
        }
    }
}

impl ExtractorKind {
    pub fn dim(self) -> usize {
        match self {
            ExtractorKind::Pixel => PIXEL_SIDE * PIXEL_SIDE,
            ExtractorKind::Randconv => RANDCONV_WIDTHS[2],
        }
    }

    /// Row-major `[n, dim]` features of a `[n, 1|3, h, w]` batch in `[-1, 1]`.
    pub fn features(self, images: &Tensor<f32>) -> Result<Vec<f64>> {
        let (n, c, h, w) = images.dims4("features")?;
        if c != 1 && c != 3 {
            return Err(Error::Dimension(format!("features need 1 or 3 channels, got {c}")));
        }
        match self {
            ExtractorKind::Pixel => {
                let mut out = Vec::with_capacity(n * self.dim());
                for i in 0..n {
                    let img = images.row(i)?;
                    let gray = if c == 3 {
                        let d = img.data();
                        let p = h * w;
                        let l = (0..p)
                            .map(|j| 0.299 * d[j] as f64 + 0.587 * d[p + j] as f64 + 0.114 * d[2 * p + j] as f64)
                            .collect();
                        Tensor::<f64>::new(&[1, h, w], l)?
                    } else {
                        img.cast::<f64>()
                    };
                    out.extend(resample_bicubic(&gray, PIXEL_SIDE)?.data());
                }
                Ok(out)
            }
            ExtractorKind::Randconv => {
                if h % 8 != 0 || w % 8 != 0 {
                    return Err(Error::Dimension(format!("randconv needs sides divisible by 8, got {h}x{w}")));
                }
                let x = if c == 1 {
                    Tensor::concat_channels(&[images, images, images])?
                } else {
                    images.clone()
                };
                let net = randconv_network(h, w)?;
                let y = net.infer(&x, None)?;
                let (_, d, fh, fw) = y.dims4("randconv")?;
                let plane = fh * fw;
                let mut out = Vec::with_capacity(n * d);
                for chunk in y.data().chunks(plane) {
                    out.push(chunk.iter().map(|&v| v as f64).sum::<f64>() / plane as f64);
                }
                Ok(out)
            }
        }
    }
}

fn randconv_network(h: usize, w: usize) -> Result<Network<f32>> {
    let mut layers = Vec::new();
    for maps in RANDCONV_WIDTHS {
        layers.push(LayerSpec::conv(maps, 4, 2, 1));
        layers.push(LayerSpec::act(Activation::LeakyRelu { slope: 0.2 }));
    }
    let spec = NetSpec {
        name: "randconv".into(),
        input: [3, h, w],
        classes: 0,
        init: Init::Uniform,
        layers,
        notes: Vec::new(),
    };
    // weights do not depend on the input size, so every size sees the same filters
    Network::new(spec, &mut Rng::new(RANDCONV_SEED))
}

/// Streaming mean and covariance (pairwise-merge Welford, in f64).
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub n: u64,
    pub mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl GaussianStats {
    pub fn new(dim: usize) -> Self {
        GaussianStats {
            n: 0,
            mean: DVector::zeros(dim),
            m2: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Add rows of a row-major `[k, dim]` feature block.
    pub fn push_rows(&mut self, rows: &[f64]) -> Result<()> {
        let d = self.dim();
        if d == 0 || !rows.len().is_multiple_of(d) {
            return Err(Error::Dimension(format!("{} values for feature dimension {d}", rows.len())));
        }
        let k = rows.len() / d;
        if k == 0 {
            return Ok(());
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteOutput("features".into()));
        }
        let block = DMatrix::from_row_slice(k, d, rows);
        let bmean = DVector::from_iterator(d, (0..d).map(|j| block.column(j).sum() / k as f64));
        let mut centered = block;
        for mut row in centered.row_iter_mut() {
            row -= bmean.transpose();
        }
        let bm2 = centered.transpose() * &centered;
        let (na, nb) = (self.n as f64, k as f64);
        let total = na + nb;
        let delta = &bmean - &self.mean;
        self.m2 += bm2 + (&delta * delta.transpose()) * (na * nb / total);
        self.mean += delta * (nb / total);
        self.n += k as u64;
        Ok(())
    }

    pub fn from_rows(rows: &[f64], dim: usize) -> Result<Self> {
        let mut s = Self::new(dim);
        s.push_rows(rows)?;
        Ok(s)
    }

    /// Unbiased covariance.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        if self.n < 2 {
            return Err(Error::Invalid(format!("covariance needs 2 samples, have {}", self.n)));
        }
        Ok(&self.m2 / (self.n as f64 - 1.0))
    }
}

/// Principal square root of a symmetric positive semidefinite matrix.
pub fn matrix_sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("{}x{} is not square", m.nrows(), m.ncols())));
    }
    let sym = (m + m.transpose()) * 0.5;
    let trace = sym.trace();
    let eig = SymmetricEigen::new(sym);
    let floor = -PSD_TOLERANCE * trace.abs().max(f64::MIN_POSITIVE);
    if let Some(&bad) = eig.eigenvalues.iter().find(|&&l| l < floor) {
        return Err(Error::NotPsd {
            eigenvalue: bad,
            trace,
        });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let sa = matrix_sqrt_psd(a)?;
    Ok(matrix_sqrt_psd(&(&sa * b * &sa))?.trace())
}

/// `|mu_a - mu_b|^2 + tr(Sa) + tr(Sb) - 2 tr((Sa Sb)^(1/2))`.
pub fn frechet_distance(
    mu_a: &DVector<f64>,
    sigma_a: &DMatrix<f64>,
    mu_b: &DVector<f64>,
    sigma_b: &DMatrix<f64>,
) -> Result<f64> {
    let d = mu_a.len();
    if mu_b.len() != d || sigma_a.shape() != (d, d) || sigma_b.shape() != (d, d) {
        return Err(Error::Dimension(format!(
            "means {} / {}, covariances {:?} / {:?}",
            d,
            mu_b.len(),
            sigma_a.shape(),
            sigma_b.shape()
        )));
    }
    let cross = match trace_sqrt_product(sigma_a, sigma_b) {
        Ok(t) => t,
        Err(Error::NotPsd { .. }) => {
            let ridge = DMatrix::identity(d, d) * FID_RIDGE;
            trace_sqrt_product(&(sigma_a + &ridge), &(sigma_b + ridge))?
        }
        Err(e) => return Err(e),
    };
    let diff = mu_a - mu_b;
    let score = diff.dot(&diff) + sigma_a.trace() + sigma_b.trace() - 2.0 * cross;
    let scale = sigma_a.trace() + sigma_b.trace() + diff.dot(&diff);
    if score < -PSD_TOLERANCE * scale.max(1.0) {
        return Err(Error::Invalid(format!("negative distance {score:e}")));
    }
    Ok(score.max(0.0))
}

pub fn fid(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    frechet_distance(&a.mean, &a.covariance()?, &b.mean, &b.covariance()?)
}

/// Feature statistics of an image tensor `[n, c, h, w]`, in chunks.
pub fn image_stats(images: &Tensor<f32>, kind: ExtractorKind) -> Result<GaussianStats> {
    let n = images.shape().first().copied().unwrap_or(0);
    let mut stats = GaussianStats::new(kind.dim());
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        stats.push_rows(&kind.features(&images.select_rows(&idx)?)?)?;
        start = end;
    }
    Ok(stats)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidReport {
    pub score: f64,
    pub extractor: ExtractorKind,
    pub n_real: u64,
    pub n_fake: u64,
    /// Generated count per class for conditional models.
    pub per_class: Option<Vec<usize>>,
    pub seconds: f64,
}

/// Statistics of `n` generated images (conditional models: `ceil(n / classes)` per class).
pub fn generator_stats(
    pair: &GanPair<f32>,
    n: usize,
    seed: u64,
    psi: f64,
    kind: ExtractorKind,
) -> Result<(GaussianStats, Option<Vec<usize>>)> {
    let mut labels: Vec<usize> = Vec::new();
    let per_class = if pair.options.conditional {
        let k = pair.options.classes;
        let each = n.div_ceil(k);
        for c in 0..k {
            labels.extend(std::iter::repeat_n(c, each));
        }
        Some(vec![each; k])
    } else {
        None
    };
    let total = if per_class.is_some() { labels.len() } else { n };
    let mut rng = Rng::new(seed);
    let mut stats = GaussianStats::new(kind.dim());
    let mut start = 0;
    while start < total {
        let end = (start + CHUNK).min(total);
        let z = truncate_latent(&sample_latent::<f32>(&mut rng, end - start), psi)?;
        let lab = per_class.as_ref().map(|_| &labels[start..end]);
        let images = crate::training::generate(pair, &z, lab)?;
        stats.push_rows(&kind.features(&images)?)?;
        start = end;
    }
    Ok((stats, per_class))
}

/// Score a generator against real images.
pub fn score_generator(
    pair: &GanPair<f32>,
    real: &Tensor<f32>,
    n: usize,
    seed: u64,
    psi: f64,
    kind: ExtractorKind,
) -> Result<FidReport> {
    let started = Instant::now();
    let real_stats = image_stats(real, kind)?;
    let (fake_stats, per_class) = generator_stats(pair, n, seed, psi, kind)?;
    Ok(FidReport {
        score: fid(&real_stats, &fake_stats)?,
        extractor: kind,
        n_real: real_stats.n,
        n_fake: fake_stats.n,
        per_class,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Score two image sets against each other.
pub fn score_images(real: &Tensor<f32>, fake: &Tensor<f32>, kind: ExtractorKind) -> Result<FidReport> {
    let started = Instant::now();
    let a = image_stats(real, kind)?;
    let b = image_stats(fake, kind)?;
    Ok(FidReport {
        score: fid(&a, &b)?,
        extractor: kind,
        n_real: a.n,
        n_fake: b.n,
        per_class: None,
        seconds: started.elapsed().as_secs_f64(),
    })
}
