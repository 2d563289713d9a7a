//! Image files, resampling, datasets, silhouette pairs and the synthetic corpus.

use std::fs;
use std::io::{BufRead, BufReader};

use image::ImageEncoder;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sgan_tensor::{Element, Rng, Tensor};

use crate::error::{Error, Result};
use crate::zoo::CLASS_NAMES;

pub const SILHOUETTE_THRESHOLD: f64 = 0.95;
pub const MANIFEST_NAME: &str = "pairs.jsonl";
const SYNTH_DOMAIN: u16 = 0x5e;

/// `[-1, 1]` to 8 bits: `round((v + 1) * 127.5)`.
pub fn to_u8(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) as f64 + 1.0) * 127.5).round() as u8
}

pub fn from_u8(b: u8) -> f32 {
    (b as f64 / 127.5 - 1.0) as f32
}

/// Apply the 8-bit quantization of the on-disk format.
pub fn quantize(img: &Tensor<f32>) -> Tensor<f32> {
    img.map(|v| from_u8(to_u8(v)))
}

pub fn decode_png_bytes(bytes: &[u8]) -> std::result::Result<Tensor<f32>, String> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|e| e.to_string())?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = from_u8(px.0[c]);
        }
    }
    Tensor::new(&[3, h, w], data).map_err(|e| e.to_string())
}

/// Decode any PNG as a `[3, h, w]` tensor in `[-1, 1]`.
pub fn load_png(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png_bytes(&bytes).map_err(|reason| Error::Image {
        path: path.to_path_buf(),
        reason,
    })
}

/// Encode a `[1, h, w]` (grayscale) or `[3, h, w]` (RGB) tensor.
pub fn encode_png(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let (c, h, w) = match img.shape() {
        &[c, h, w] if c == 1 || c == 3 => (c, h, w),
        s => return Err(Error::Dimension(format!("PNG needs [1|3, h, w], got {s:?}"))),
    };
    let mut raw = vec![0u8; c * h * w];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                raw[(y * w + x) * c + ch] = to_u8(img.data()[ch * h * w + y * w + x]);
            }
        }
    }
    let color = if c == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(&raw, w as u32, h as u32, color)
        .map_err(|e| Error::Invalid(format!("PNG encoding failed: {e}")))?;
    Ok(out)
}

pub fn save_png(path: &Path, img: &Tensor<f32>) -> Result<()> {
    let bytes = encode_png(img)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x < 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * A
    } else {
        0.0
    }
}

/// Normalized taps `(source index, weight)` for each output position.
fn axis_taps(input: usize, output: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = input as f64 / output as f64;
    // widen the kernel when shrinking so every source pixel contributes
    let support = scale.max(1.0);
    (0..output)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale;
            let lo = (center - 2.0 * support).floor() as i64;
            let hi = (center + 2.0 * support).ceil() as i64;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for i in lo..=hi {
                let wgt = cubic((i as f64 + 0.5 - center) / support);
                if wgt != 0.0 {
                    let idx = i.clamp(0, input as i64 - 1) as usize;
                    taps.push((idx, wgt));
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= total);
            taps
        })
        .collect()
}

/// Separable Catmull-Rom resampling of `[c, h, w]` to `[c, out_h, out_w]`, clamped to `[-1, 1]`.
pub fn resample_bicubic_to<T: Element>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = match img.shape() {
        &[c, h, w] => (c, h, w),
        s => return Err(Error::Dimension(format!("resample needs [c, h, w], got {s:?}"))),
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::Invalid("resample target must be at least 1".into()));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(img.clone());
    }
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let src = img.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    let mut rows = vec![0f64; h * out_w];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for (ox, taps) in tx.iter().enumerate() {
                rows[y * out_w + ox] = taps.iter().map(|&(i, wt)| plane[y * w + i].as_f64() * wt).sum();
            }
        }
        for taps in &ty {
            for ox in 0..out_w {
                let v: f64 = taps.iter().map(|&(i, wt)| rows[i * out_w + ox] * wt).sum();
                out.push(T::from_f64(v.clamp(-1.0, 1.0)));
            }
        }
    }
    Ok(Tensor::new(&[c, out_h, out_w], out)?)
}

pub fn resample_bicubic<T: Element>(img: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
    resample_bicubic_to(img, size, size)
}

/// Luma of an RGB image in `[0, 1]`, `[3, h, w]` to `[h * w]`.
fn luma(img: &Tensor<f32>) -> Result<Vec<f64>> {
    let (h, w) = match img.shape() {
        &[3, h, w] => (h, w),
        &[1, h, w] => {
            return Ok(img.data().iter().map(|&v| (v as f64 + 1.0) / 2.0).take(h * w).collect());
        }
        s => return Err(Error::Dimension(format!("expected [3, h, w] image, got {s:?}"))),
    };
    let d = img.data();
    let n = h * w;
    Ok((0..n)
        .map(|i| {
            let ch = |c: usize| (d[c * n + i] as f64 + 1.0) / 2.0;
            0.299 * ch(0) + 0.587 * ch(1) + 0.114 * ch(2)
        })
        .collect())
}

/// Grayscale `[1, h, w]` in `[-1, 1]` from RGB.
pub fn to_gray(img: &Tensor<f32>) -> Result<Tensor<f32>> {
    let &[_, h, w] = img.shape() else {
        return Err(Error::Dimension(format!("expected [c, h, w], got {:?}", img.shape())));
    };
    let l = luma(img)?;
    Ok(Tensor::new(&[1, h, w], l.iter().map(|&v| (2.0 * v - 1.0) as f32).collect())?)
}

/// Binary mask: luma below `tau` is figure (-1), everything else ground (+1).
pub fn silhouette_from_colored(img: &Tensor<f32>, tau: f64) -> Result<Tensor<f32>> {
    let &[_, h, w] = img.shape() else {
        return Err(Error::Dimension(format!("expected [c, h, w], got {:?}", img.shape())));
    };
    let l = luma(img)?;
    Ok(Tensor::new(&[1, h, w], l.iter().map(|&v| if v < tau { -1.0 } else { 1.0 }).collect())?)
}

/// True when every value is exactly -1 or +1.
pub fn is_binary(img: &Tensor<f32>) -> bool {
    img.data().iter().all(|&v| v == -1.0 || v == 1.0)
}

fn is_png(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    v.sort();
    Ok(v)
}

/// `(class name, files)` under `root`: one class per subdirectory, or a single
/// class named after the directory when it holds the images directly.
pub fn list_classes(root: &Path) -> Result<Vec<(String, Vec<PathBuf>)>> {
    let entries = sorted_entries(root)?;
    let dirs: Vec<&PathBuf> = entries.iter().filter(|p| p.is_dir()).collect();
    if dirs.is_empty() {
        let name = root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "all".into());
        return Ok(vec![(name, entries.iter().filter(|p| is_png(p)).cloned().collect())]);
    }
    let loose = entries.iter().filter(|p| p.is_file() && is_png(p)).count();
    if loose > 0 {
        log::warn!("{}: {loose} image(s) outside class directories ignored", root.display());
    }
    dirs.into_iter()
        .map(|d| {
            let files = sorted_entries(d)?.into_iter().filter(|p| p.is_file() && is_png(p)).collect();
            Ok((d.file_name().unwrap_or_default().to_string_lossy().into_owned(), files))
        })
        .collect()
}

/// Labelled images at one square resolution, `[n, c, r, r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub paths: Vec<PathBuf>,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn resolution(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes()];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        Ok((self.images.select_rows(idx)?, idx.iter().map(|&i| self.labels[i]).collect()))
    }

    /// Build from in-memory images of shape `[n, c, r, r]`.
    pub fn from_tensor(images: Tensor<f32>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        let (n, _, h, w) = images.dims4("image set")?;
        if n != labels.len() || h != w {
            return Err(Error::Dimension(format!(
                "{} labels for images {:?}",
                labels.len(),
                images.shape()
            )));
        }
        if labels.iter().any(|&l| l >= class_names.len()) {
            return Err(Error::Invalid("label outside the class table".into()));
        }
        Ok(ImageSet {
            images,
            labels,
            class_names,
            paths: Vec::new(),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadReport {
    pub loaded: usize,
    pub skipped: Vec<(PathBuf, String)>,
}

/// Load `root/<Class>/*.png` (or a flat directory), resampled to `resolution`.
pub fn load_dataset(root: &Path, resolution: usize, merge: bool) -> Result<(ImageSet, LoadReport)> {
    let classes = list_classes(root)?;
    let mut report = LoadReport::default();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut paths = Vec::new();
    for (label, (_, files)) in classes.iter().enumerate() {
        for path in files {
            match load_png(path) {
                Ok(img) => {
                    let img = resample_bicubic(&img, resolution)?;
                    data.extend_from_slice(img.data());
                    labels.push(if merge { 0 } else { label });
                    paths.push(path.clone());
                }
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    report.skipped.push((path.clone(), e.to_string()));
                }
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset(format!("no decodable PNG under {}", root.display())));
    }
    report.loaded = labels.len();
    let class_names = if merge {
        vec!["merged".to_string()]
    } else {
        classes.into_iter().map(|(n, _)| n).collect()
    };
    let images = Tensor::new(&[labels.len(), 3, resolution, resolution], data)?;
    Ok((
        ImageSet {
            images,
            labels,
            class_names,
            paths,
        },
        report,
    ))
}

/// One line of the pair manifest; paths are relative to the manifest directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairEntry {
    pub id: String,
    pub class: String,
    pub silhouette: String,
    pub colored: String,
}

fn write_manifest(out_dir: &Path, entries: &[PairEntry]) -> Result<PathBuf> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&serde_json::to_string(e).expect("plain strings serialize"));
        text.push('\n');
    }
    let path = out_dir.join(MANIFEST_NAME);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<Vec<PairEntry>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

/// Derive a silhouette for every colored image and write both plus a manifest.
pub fn make_pairs(colored_dir: &Path, out_dir: &Path, tau: f64) -> Result<Vec<PairEntry>> {
    let classes = list_classes(colored_dir)?;
    let mut entries: Vec<PairEntry> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (class, files) in &classes {
        for path in files {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let id = format!("{class}/{stem}");
            if !seen.insert(id.clone()) {
                return Err(Error::Collision(id));
            }
            let img = load_png(path)?;
            let sil = silhouette_from_colored(&img, tau)?;
            let sil_rel = format!("silhouette/{class}/{stem}.png");
            let col_rel = format!("colored/{class}/{stem}.png");
            save_png(&out_dir.join(&sil_rel), &sil)?;
            let col_path = out_dir.join(&col_rel);
            if fs::canonicalize(path).ok() != fs::canonicalize(&col_path).ok() {
                if let Some(dir) = col_path.parent() {
                    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                fs::copy(path, &col_path).map_err(|e| Error::io(&col_path, e))?;
            }
            entries.push(PairEntry {
                id,
                class: class.clone(),
                silhouette: sil_rel,
                colored: col_rel,
            });
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset(format!("no PNG under {}", colored_dir.display())));
    }
    write_manifest(out_dir, &entries)?;
    Ok(entries)
}

/// Silhouette/colored pairs at one square resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSet {
    pub silhouettes: Tensor<f32>,
    pub colored: Tensor<f32>,
    pub ids: Vec<String>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        Ok((self.silhouettes.select_rows(idx)?, self.colored.select_rows(idx)?))
    }
}

/// Binary silhouette channel at `resolution`; resampling blurs edges, so the
/// result is re-binarized at the midpoint.
pub fn silhouette_channel(img: &Tensor<f32>, resolution: usize) -> Result<Tensor<f32>> {
    let gray = to_gray(img)?;
    let r = resample_bicubic(&gray, resolution)?;
    Ok(r.map(|v| if v < 0.0 { -1.0 } else { 1.0 }))
}

/// Load the pairs listed in `dir/pairs.jsonl` (or a manifest path).
pub fn load_pairs(path: &Path, resolution: usize) -> Result<PairSet> {
    let manifest = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
    let base = manifest.parent().unwrap_or(Path::new("."));
    let entries = read_manifest(&manifest)?;
    if entries.is_empty() {
        return Err(Error::EmptyDataset(format!("{} lists no pairs", manifest.display())));
    }
    let (mut sil, mut col, mut ids) = (Vec::new(), Vec::new(), Vec::new());
    for e in &entries {
        let s = silhouette_channel(&load_png(&base.join(&e.silhouette))?, resolution)?;
        let c = resample_bicubic(&load_png(&base.join(&e.colored))?, resolution)?;
        sil.extend_from_slice(s.data());
        col.extend_from_slice(c.data());
        ids.push(e.id.clone());
    }
    let n = ids.len();
    Ok(PairSet {
        silhouettes: Tensor::new(&[n, 1, resolution, resolution], sil)?,
        colored: Tensor::new(&[n, 3, resolution, resolution], col)?,
        ids,
    })
}

// ---- synthetic corpus ----

#[derive(Clone, Copy, Debug)]
struct Pt {
    x: f64,
    y: f64,
}

enum Shape {
    Ellipse { c: Pt, rx: f64, ry: f64 },
    Capsule { a: Pt, b: Pt, r: f64 },
    /// Convex polygon, vertices in order.
    Poly(Vec<Pt>),
}

impl Shape {
    fn contains(&self, p: Pt) -> bool {
        match self {
            Shape::Ellipse { c, rx, ry } => ((p.x - c.x) / rx).powi(2) + ((p.y - c.y) / ry).powi(2) <= 1.0,
            Shape::Capsule { a, b, r } => {
                let (dx, dy) = (b.x - a.x, b.y - a.y);
                let len2 = dx * dx + dy * dy;
                let t = if len2 == 0.0 {
                    0.0
                } else {
                    (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
                };
                let (qx, qy) = (a.x + t * dx - p.x, a.y + t * dy - p.y);
                qx * qx + qy * qy <= r * r
            }
            Shape::Poly(v) => {
                let mut sign = 0.0f64;
                for i in 0..v.len() {
                    let (a, b) = (v[i], v[(i + 1) % v.len()]);
                    let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
                    if cross != 0.0 {
                        if sign == 0.0 {
                            sign = cross.signum();
                        } else if cross.signum() != sign {
                            return false;
                        }
                    }
                }
                true
            }
        }
    }
}

const SKIN: [[u8; 3]; 4] = [[224, 172, 105], [141, 85, 36], [198, 134, 66], [255, 205, 148]];
const CLOTH: [[u8; 3]; 6] = [
    [200, 30, 40],
    [30, 80, 170],
    [40, 130, 60],
    [120, 50, 140],
    [220, 120, 20],
    [60, 60, 60],
];
const MONSTER: [[u8; 3]; 3] = [[90, 160, 60], [130, 70, 160], [170, 60, 50]];

fn limb(rng: &mut Rng, from: Pt, len: f64, base_angle: f64, spread: f64, r: f64) -> (Shape, Pt) {
    let a = base_angle + rng.uniform_range(-spread, spread);
    let to = Pt {
        x: from.x + len * a.cos(),
        y: from.y + len * a.sin(),
    };
    (Shape::Capsule { a: from, b: to, r }, to)
}

/// Parts of one figure of `class` (0 man, 1 monster, 2 woman) with their colors.
fn figure(class: usize, rng: &mut Rng) -> Vec<(Shape, [u8; 3])> {
    use std::f64::consts::FRAC_PI_2 as DOWN;
    let s = rng.uniform_range(0.85, 1.1);
    let cx = 0.5 + rng.uniform_range(-0.05, 0.05);
    let top = 0.08 + rng.uniform_range(0.0, 0.04);
    let skin = SKIN[rng.below(SKIN.len() as u64) as usize];
    let shirt = CLOTH[rng.below(CLOTH.len() as u64) as usize];
    let pants = CLOTH[rng.below(CLOTH.len() as u64) as usize];
    let p = |x: f64, y: f64| Pt { x: cx + x * s, y: top + y * s };
    let mut parts = Vec::new();
    match class {
        0 => {
            parts.push((Shape::Ellipse { c: p(0.0, 0.08), rx: 0.065 * s, ry: 0.08 * s }, skin));
            let (sh, wa) = (0.13 + rng.uniform_range(0.0, 0.03), 0.09);
            parts.push((Shape::Poly(vec![p(-sh, 0.18), p(sh, 0.18), p(wa, 0.5), p(-wa, 0.5)]), shirt));
            for side in [-1.0, 1.0] {
                let (arm, _) = limb(rng, p(side * (sh - 0.02), 0.2), 0.3 * s, DOWN - side * 0.35, 0.25, 0.035 * s);
                parts.push((arm, skin));
                let (leg, _) = limb(rng, p(side * 0.05, 0.5), 0.36 * s, DOWN - side * 0.1, 0.12, 0.045 * s);
                parts.push((leg, pants));
            }
        }
        1 => {
            let body = MONSTER[rng.below(MONSTER.len() as u64) as usize];
            let hr = 0.1 + rng.uniform_range(0.0, 0.04);
            parts.push((Shape::Ellipse { c: p(0.0, 0.14), rx: hr * s, ry: hr * s }, body));
            for side in [-1.0, 1.0] {
                parts.push((
                    Shape::Poly(vec![
                        p(side * hr * 0.4, 0.08),
                        p(side * hr * 1.1, -0.06),
                        p(side * hr * 0.8, 0.12),
                    ]),
                    [70, 40, 20],
                ));
            }
            parts.push((Shape::Ellipse { c: p(0.0, 0.45), rx: 0.2 * s, ry: 0.2 * s }, body));
            for side in [-1.0, 1.0] {
                let (arm, _) = limb(rng, p(side * 0.16, 0.35), 0.22 * s, DOWN - side * 1.2, 0.5, 0.06 * s);
                parts.push((arm, body));
                let (leg, _) = limb(rng, p(side * 0.1, 0.6), 0.22 * s, DOWN, 0.15, 0.07 * s);
                parts.push((leg, pants));
            }
        }
        _ => {
            parts.push((Shape::Ellipse { c: p(0.0, 0.08), rx: 0.06 * s, ry: 0.075 * s }, skin));
            parts.push((Shape::Ellipse { c: p(0.0, 0.1), rx: 0.085 * s, ry: 0.06 * s }, [60, 35, 20]));
            let (sh, hem) = (0.1, 0.2 + rng.uniform_range(0.0, 0.06));
            parts.push((Shape::Poly(vec![p(-sh, 0.18), p(sh, 0.18), p(hem, 0.66), p(-hem, 0.66)]), shirt));
            for side in [-1.0, 1.0] {
                let (arm, _) = limb(rng, p(side * (sh - 0.01), 0.2), 0.28 * s, DOWN - side * 0.3, 0.25, 0.028 * s);
                parts.push((arm, skin));
                let (leg, _) = limb(rng, p(side * 0.05, 0.62), 0.26 * s, DOWN, 0.08, 0.03 * s);
                parts.push((leg, skin));
            }
        }
    }
    parts
}

/// Render a figure: (silhouette `[1, r, r]`, colored `[3, r, r]`, figure fraction).
fn render(parts: &[(Shape, [u8; 3])], r: usize) -> (Tensor<f32>, Tensor<f32>, f64) {
    let n = r * r;
    let mut sil = vec![1.0f32; n];
    let mut col = vec![1.0f32; 3 * n];
    let mut count = 0usize;
    for y in 0..r {
        for x in 0..r {
            let pt = Pt {
                x: (x as f64 + 0.5) / r as f64,
                y: (y as f64 + 0.5) / r as f64,
            };
            // later parts are drawn on top
            if let Some((_, rgb)) = parts.iter().rev().find(|(s, _)| s.contains(pt)) {
                let i = y * r + x;
                sil[i] = -1.0;
                count += 1;
                for c in 0..3 {
                    col[c * n + i] = from_u8(rgb[c]);
                }
            }
        }
    }
    (
        Tensor::new(&[1, r, r], sil).expect("sized"),
        Tensor::new(&[3, r, r], col).expect("sized"),
        count as f64 / n as f64,
    )
}

/// One synthetic figure with its class (round-robin over `classes`).
pub fn synth_figure(index: usize, classes: usize, resolution: usize, seed: u64) -> (usize, Tensor<f32>, Tensor<f32>) {
    let class = index % classes.max(1);
    let mut rng = Rng::derive(seed, SYNTH_DOMAIN, index as u64);
    loop {
        let parts = figure(class % 3, &mut rng);
        let (sil, col, frac) = render(&parts, resolution);
        if (0.05..=0.6).contains(&frac) {
            return (class, sil, col);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthReport {
    pub manifest: PathBuf,
    pub per_class: Vec<usize>,
}

/// Write `n` figures as `out/silhouette/<Class>/*.png` and `out/colored/<Class>/*.png`
/// plus a pair manifest.
pub fn synth_toy_corpus(n: usize, classes: usize, resolution: usize, seed: u64, out: &Path) -> Result<SynthReport> {
    if n == 0 {
        return Err(Error::Invalid("corpus size must be at least 1".into()));
    }
    if classes == 0 || classes > CLASS_NAMES.len() {
        return Err(Error::Invalid(format!("classes must lie in 1..={}", CLASS_NAMES.len())));
    }
    let mut entries = Vec::with_capacity(n);
    let mut per_class = vec![0; classes];
    for i in 0..n {
        let (class, sil, col) = synth_figure(i, classes, resolution, seed);
        per_class[class] += 1;
        let name = CLASS_NAMES[class];
        let stem = format!("{i:06}");
        let sil_rel = format!("silhouette/{name}/{stem}.png");
        let col_rel = format!("colored/{name}/{stem}.png");
        save_png(&out.join(&sil_rel), &sil)?;
        save_png(&out.join(&col_rel), &col)?;
        entries.push(PairEntry {
            id: format!("{name}/{stem}"),
            class: name.to_string(),
            silhouette: sil_rel,
            colored: col_rel,
        });
    }
    Ok(SynthReport {
        manifest: write_manifest(out, &entries)?,
        per_class,
    })
}
