//! Adaptive discriminator augmentation.
//!
//! A plan is drawn once per step and applied to both the real and the
//! generated batch. Every transform is linear in the pixels, so it is recorded
//! on the tape and gradients flow back into the generator.

use std::rc::Rc;

use serde::{Deserialize, Serialize};
use sgan_tensor::{Element, Rng, SparseBuilder, Tensor, Var};

use crate::error::{Error, Result};

pub const ADA_TARGET: f64 = 0.6;
pub const ADA_STEP: f64 = 0.01;
pub const ADA_INTERVAL: u64 = 4;
pub const ADA_MAX_P: f64 = 0.9;

/// Enabled transform groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Categories {
    pub blit: bool,
    pub geometric: bool,
    pub color: bool,
    pub noise: bool,
    pub cutout: bool,
}

impl Categories {
    pub const ALL: Categories = Categories {
        blit: true,
        geometric: true,
        color: true,
        noise: true,
        cutout: true,
    };

    /// Parse a pipeline string such as `bgcfnc`: b blit, g geometric, c color,
    /// f filter (not supported, ignored), n noise, and a `c` after `n` is cutout.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut c = Categories {
            blit: false,
            geometric: false,
            color: false,
            noise: false,
            cutout: false,
        };
        for ch in spec.chars() {
            match ch {
                'b' => c.blit = true,
                'g' => c.geometric = true,
                'c' if c.noise || c.color => c.cutout = true,
                'c' => c.color = true,
                'n' => c.noise = true,
                'f' => log::warn!("augmentation: filter category is not supported; ignored"),
                other => return Err(Error::Config(format!("unknown augmentation category `{other}`"))),
            }
        }
        Ok(c)
    }
}

/// Probability controller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentState {
    pub enabled: bool,
    pub p: f64,
    /// Last overfitting estimate in `[-1, 1]`.
    pub r_t: f64,
    pub step: f64,
    pub target: f64,
    pub interval: u64,
    pub categories: Categories,
    pending_sum: f64,
    pending_count: u64,
    pending_updates: u64,
}

impl AugmentState {
    pub fn new(enabled: bool, p: f64, categories: Categories) -> Self {
        AugmentState {
            enabled,
            p: p.clamp(0.0, ADA_MAX_P),
            r_t: 0.0,
            step: ADA_STEP,
            target: ADA_TARGET,
            interval: ADA_INTERVAL,
            categories,
            pending_sum: 0.0,
            pending_count: 0,
            pending_updates: 0,
        }
    }

    pub fn disabled() -> Self {
        Self::new(false, 0.0, Categories::ALL)
    }

    /// Accumulate `sign(output - center)` of the discriminator on reals; every
    /// `interval` calls set `r_t` to their mean and move `p` by one step.
    pub fn update(&mut self, real_outputs: &[f64], center: f64) {
        if !self.enabled {
            return;
        }
        for &o in real_outputs {
            let d = o - center;
            self.pending_sum += if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
        }
        self.pending_count += real_outputs.len() as u64;
        self.pending_updates += 1;
        if self.pending_updates >= self.interval {
            self.r_t = if self.pending_count == 0 {
                0.0
            } else {
                self.pending_sum / self.pending_count as f64
            };
            let delta = if self.r_t > self.target { self.step } else { -self.step };
            self.p = (self.p + delta).clamp(0.0, ADA_MAX_P);
            self.pending_sum = 0.0;
            self.pending_count = 0;
            self.pending_updates = 0;
        }
    }
}

/// Transforms drawn for one sample.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SamplePlan {
    pub flip: bool,
    /// Quarter turns.
    pub rotate: u8,
    pub shift: (i64, i64),
    /// Isotropic scale and rotation angle in radians.
    pub warp: Option<(f64, f64)>,
    /// Brightness offset and contrast factor.
    pub color: Option<(f64, f64)>,
    pub noise_sigma: Option<f64>,
    /// Top-left corner and side of the zeroed square.
    pub cutout: Option<(usize, usize, usize)>,
}

impl SamplePlan {
    fn moves_pixels(&self) -> bool {
        self.flip || self.rotate != 0 || self.shift != (0, 0) || self.warp.is_some()
    }
}

/// Per-step augmentation shared by the real and generated batches.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPlan {
    pub shape: [usize; 4],
    pub samples: Vec<SamplePlan>,
    noise: Option<Vec<f64>>,
}

fn symmetric(i: i64, n: usize) -> usize {
    // reflect about the borders, repeating the edge pixel
    let n = n as i64;
    let period = 2 * n;
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - 1 - j;
    }
    j as usize
}

impl AugmentPlan {
    pub fn identity(shape: [usize; 4]) -> Self {
        AugmentPlan {
            shape,
            samples: vec![SamplePlan::default(); shape[0]],
            noise: None,
        }
    }

    pub fn sample(state: &AugmentState, shape: [usize; 4], rng: &mut Rng) -> Self {
        let [n, c, h, w] = shape;
        let mut plan = Self::identity(shape);
        if !state.enabled || state.p <= 0.0 {
            return plan;
        }
        let p = state.p;
        let cats = state.categories;
        let mut any_noise = false;
        for s in plan.samples.iter_mut() {
            if cats.blit && rng.bernoulli(p) {
                s.flip = rng.bernoulli(0.5);
                s.rotate = rng.below(4) as u8;
                let max_shift = (0.125 * h.min(w) as f64).floor() as i64;
                let span = 2 * max_shift as u64 + 1;
                s.shift = (
                    rng.below(span) as i64 - max_shift,
                    rng.below(span) as i64 - max_shift,
                );
            }
            if cats.geometric && rng.bernoulli(p) {
                let scale = 2f64.powf(0.2 * rng.normal());
                let angle = rng.uniform_range(-1.0, 1.0) * 15f64.to_radians();
                s.warp = Some((scale, angle));
            }
            if cats.color && rng.bernoulli(p) {
                let brightness = 0.2 * rng.normal();
                let contrast = 2f64.powf(0.5 * rng.normal());
                s.color = Some((brightness, contrast));
            }
            if cats.noise && rng.bernoulli(p) {
                s.noise_sigma = Some(rng.uniform_range(0.0, 0.1));
                any_noise = true;
            }
            if cats.cutout && rng.bernoulli(p) {
                let side = ((0.25 * h.min(w) as f64).floor() as usize).max(1);
                let y = rng.below((h - side + 1) as u64) as usize;
                let x = rng.below((w - side + 1) as u64) as usize;
                s.cutout = Some((y, x, side));
            }
        }
        if any_noise {
            let per = c * h * w;
            let mut noise = vec![0.0; n * per];
            for (b, s) in plan.samples.iter().enumerate() {
                if let Some(sigma) = s.noise_sigma {
                    for v in &mut noise[b * per..(b + 1) * per] {
                        *v = sigma * rng.normal();
                    }
                }
            }
            plan.noise = Some(noise);
        }
        plan
    }

    pub fn is_identity(&self) -> bool {
        self.noise.is_none()
            && self
                .samples
                .iter()
                .all(|s| !s.moves_pixels() && s.color.is_none() && s.cutout.is_none())
    }

    /// Source pixel of output `(y, x)` under the integer transforms of `s`.
    fn blit_source(s: &SamplePlan, y: usize, x: usize, h: usize, w: usize) -> (usize, usize) {
        let mut y = symmetric(y as i64 - s.shift.0, h);
        let mut x = symmetric(x as i64 - s.shift.1, w);
        for _ in 0..s.rotate {
            // inverse of one counter-clockwise quarter turn on a square grid
            let (ny, nx) = (x, w - 1 - y);
            y = ny.min(h - 1);
            x = nx.min(w - 1);
        }
        if s.flip {
            x = w - 1 - x;
        }
        (y, x)
    }

    /// Bilinear taps in blit space for output `(y, x)` under the warp of `s`.
    fn warp_taps(s: &SamplePlan, y: usize, x: usize, h: usize, w: usize) -> Vec<((usize, usize), f64)> {
        let Some((scale, angle)) = s.warp else {
            return vec![((y, x), 1.0)];
        };
        let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
        let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
        let (sin, cos) = (-angle).sin_cos();
        let sy = (sin * dx + cos * dy) / scale + cy - 0.5;
        let sx = (cos * dx - sin * dy) / scale + cx - 0.5;
        let (y0, x0) = (sy.floor(), sx.floor());
        let (fy, fx) = (sy - y0, sx - x0);
        let mut taps = Vec::with_capacity(4);
        for (oy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
            for (ox, wx) in [(0i64, 1.0 - fx), (1, fx)] {
                let wgt = wy * wx;
                if wgt != 0.0 {
                    let ty = symmetric(y0 as i64 + oy, h);
                    let tx = symmetric(x0 as i64 + ox, w);
                    taps.push(((ty, tx), wgt));
                }
            }
        }
        taps
    }

    /// Sparse map of all pixel-moving transforms over the whole batch.
    fn pixel_map<T: Element>(&self) -> Result<Option<Rc<sgan_tensor::SparseMap<T>>>> {
        if !self.samples.iter().any(SamplePlan::moves_pixels) {
            return Ok(None);
        }
        let [n, c, h, w] = self.shape;
        let mut builder = SparseBuilder::<T>::new(&self.shape, &self.shape);
        for (b, s) in self.samples.iter().enumerate() {
            for ch in 0..c {
                let base = (b * c + ch) * h * w;
                for y in 0..h {
                    for x in 0..w {
                        let mut taps: Vec<(usize, T)> = Vec::with_capacity(4);
                        for ((wy, wx), wgt) in Self::warp_taps(s, y, x, h, w) {
                            let (sy, sx) = Self::blit_source(s, wy, wx, h, w);
                            taps.push((base + sy * w + sx, T::from_f64(wgt)));
                        }
                        builder.push_row(taps);
                    }
                }
            }
        }
        debug_assert_eq!(n, self.samples.len());
        Ok(Some(Rc::new(builder.build()?)))
    }

    /// Apply the plan to a batch variable of the planned shape.
    pub fn apply<'t, T: Element>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        if x.shape() != self.shape {
            return Err(Error::Dimension(format!(
                "augmentation planned for {:?}, got {:?}",
                self.shape,
                x.shape()
            )));
        }
        if self.is_identity() {
            return Ok(x);
        }
        let [_, c, h, w] = self.shape;
        let per = c * h * w;
        let mut y = x;
        if let Some(map) = self.pixel_map::<T>()? {
            y = y.sparse(map)?;
        }
        if self.samples.iter().any(|s| s.color.is_some()) {
            let mut scale = Vec::with_capacity(self.samples.len() * per);
            let mut shift = Vec::with_capacity(self.samples.len() * per);
            for s in &self.samples {
                let (b, k) = s.color.unwrap_or((0.0, 1.0));
                scale.extend(std::iter::repeat_n(T::from_f64(k), per));
                shift.extend(std::iter::repeat_n(T::from_f64(b), per));
            }
            y = y
                .mul_const(&Tensor::new(&self.shape, scale)?)?
                .add_const(&Tensor::new(&self.shape, shift)?)?;
        }
        if let Some(noise) = &self.noise {
            let t = Tensor::new(&self.shape, noise.iter().map(|&v| T::from_f64(v)).collect())?;
            y = y.add_const(&t)?;
        }
        if self.samples.iter().any(|s| s.cutout.is_some()) {
            let mut mask = vec![T::one(); self.samples.len() * per];
            for (b, s) in self.samples.iter().enumerate() {
                if let Some((y0, x0, side)) = s.cutout {
                    for ch in 0..c {
                        for yy in y0..y0 + side {
                            let row = b * per + ch * h * w + yy * w;
                            mask[row + x0..row + x0 + side].fill(T::zero());
                        }
                    }
                }
            }
            y = y.mul_const(&Tensor::new(&self.shape, mask)?)?;
        }
        Ok(y)
    }

    /// Apply to a plain tensor.
    pub fn apply_tensor<T: Element>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = sgan_tensor::Tape::new();
        let out = tape.no_grad(|| self.apply(tape.constant(x.clone())).map(|v| v.value()));
        out
    }
}
