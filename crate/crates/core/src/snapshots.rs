//! Checkpoint container and warm starts.
//!
//! Layout: `SGCK`, version (u32 LE), header length (u64 LE), JSON header,
//! little-endian f32 payload, SHA-256 of everything before it.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sgan_tensor::functional::{BN_EPS, BN_MOMENTUM};
use sgan_tensor::{Rng, Tensor};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{NetSpec, Network, Param, ParamSet};
use crate::training::augment::AugmentState;
use crate::training::config::TrainConfig;
use crate::training::optim::{Optimizer, OptimizerConfig};
use crate::training::trainer::{Progress, TrainState};
use crate::training::Counters;
use crate::zoo::{Arch, GanPair, Model, ModelOptions, TranslatorPair, LATENT_DIM};

pub const MAGIC: &[u8; 4] = b"SGCK";
pub const VERSION: u32 = 1;
const PREFIX_LEN: usize = 16;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the payload.
    pub offset: u64,
    /// Element count.
    pub len: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub uniform_init: String,
    pub pixel_mapping: String,
    pub latent_dim: usize,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            bn_momentum: BN_MOMENTUM,
            bn_eps: BN_EPS,
            uniform_init: "U(-1/sqrt(fan_in), 1/sqrt(fan_in)), fan_in = in_channels * k * k".into(),
            pixel_mapping: "v = byte / 127.5 - 1; byte = round((v + 1) * 127.5)".into(),
            latent_dim: LATENT_DIM,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub network: String,
    pub config: OptimizerConfig,
    pub t: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngMeta {
    pub algorithm: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingHeader {
    pub config: TrainConfig,
    pub counters: Counters,
    pub augment: AugmentState,
    pub optimizers: Vec<OptimizerMeta>,
    pub rng: RngMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub engine: String,
    pub precision: String,
    pub arch: Arch,
    pub model: ModelOptions,
    /// Generator then discriminator.
    pub networks: Vec<NetSpec>,
    /// Qualified names (`generator/conv0.weight`) excluded from updates.
    pub frozen: Vec<String>,
    pub conventions: Conventions,
    pub training: Option<TrainingHeader>,
    pub tensors: Vec<TensorEntry>,
}

/// A loaded checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub header: Header,
    pub model: Model<f32>,
    pub progress: Option<Progress>,
}

impl Snapshot {
    pub fn into_state(self) -> Result<TrainState> {
        let progress = self
            .progress
            .ok_or_else(|| Error::Format("checkpoint holds no training state".into()))?;
        Ok(TrainState {
            model: self.model,
            progress,
        })
    }
}

fn collect_tensors<'a>(model: &'a Model<f32>, progress: Option<&'a Progress>) -> Vec<(String, &'a Tensor<f32>)> {
    let mut out = Vec::new();
    for (prefix, net) in model.networks() {
        for p in net.params().iter() {
            out.push((format!("{prefix}/{}", p.name), &p.value));
        }
    }
    if let Some(prog) = progress {
        for ((prefix, net), opt) in model.networks().into_iter().zip([&prog.opt_g, &prog.opt_d]) {
            for (slot, moments) in [("m", &opt.m), ("v", &opt.v)] {
                for (p, t) in net.params().iter().zip(moments) {
                    if let Some(t) = t {
                        out.push((format!("opt/{prefix}/{slot}/{}", p.name), t));
                    }
                }
            }
        }
    }
    out
}

fn frozen_names(model: &Model<f32>) -> Vec<String> {
    let mut out = Vec::new();
    for (prefix, net) in model.networks() {
        out.extend(net.params().iter().filter(|p| p.frozen).map(|p| format!("{prefix}/{}", p.name)));
    }
    out
}

/// Serialize a model and optional training state to container bytes.
pub fn encode(model: &Model<f32>, progress: Option<&Progress>) -> Result<Vec<u8>> {
    let tensors = collect_tensors(model, progress);
    let mut index = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, t) in &tensors {
        index.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            len: t.numel() as u64,
        });
        offset += 4 * t.numel() as u64;
    }
    let training = progress.map(|p| TrainingHeader {
        config: p.config.clone(),
        counters: p.counters,
        augment: p.augment.clone(),
        optimizers: vec![
            OptimizerMeta {
                network: "generator".into(),
                config: p.opt_g.config,
                t: p.opt_g.t,
            },
            OptimizerMeta {
                network: "discriminator".into(),
                config: p.opt_d.config,
                t: p.opt_d.t,
            },
        ],
        rng: RngMeta {
            algorithm: sgan_tensor::rng::ALGORITHM.into(),
            seed: p.config.seed,
        },
    });
    let header = Header {
        engine: format!("sgan-core {}", env!("CARGO_PKG_VERSION")),
        precision: "f32-le".into(),
        arch: model.arch(),
        model: model.options(),
        networks: vec![model.generator().spec().clone(), model.discriminator().spec().clone()],
        frozen: frozen_names(model),
        conventions: Conventions::default(),
        training,
        tensors: index,
    };
    let json = serde_json::to_vec_pretty(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(PREFIX_LEN + json.len() + offset as usize + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_state(state: &TrainState, path: &Path) -> Result<()> {
    write_atomic(path, &encode(&state.model, Some(&state.progress))?)
}

/// Save networks only (no optimizer state or counters).
pub fn save_model(model: &Model<f32>, path: &Path) -> Result<()> {
    write_atomic(path, &encode(model, None)?)
}

fn check_prefix(bytes: &[u8]) -> Result<()> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(Error::Checksum);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::BadVersion(version));
    }
    Ok(())
}

fn parse_header(json: &[u8]) -> Result<Header> {
    serde_json::from_slice(json).map_err(|e| Error::Format(format!("header: {e}")))
}

/// Read only the header, without touching the payload.
pub fn read_header(path: &Path) -> Result<Header> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut prefix = [0u8; PREFIX_LEN];
    let got = read_up_to(&mut f, &mut prefix).map_err(|e| Error::io(path, e))?;
    check_prefix(&prefix[..got])?;
    if got < PREFIX_LEN {
        return Err(Error::Checksum);
    }
    let len = u64::from_le_bytes(prefix[8..16].try_into().expect("8 bytes"));
    let mut json = Vec::new();
    f.take(len).read_to_end(&mut json).map_err(|e| Error::io(path, e))?;
    if json.len() as u64 != len {
        return Err(Error::Checksum);
    }
    parse_header(&json)
}

fn read_up_to(f: &mut fs::File, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match f.read(&mut buf[got..])? {
            0 => break,
            n => got += n,
        }
    }
    Ok(got)
}

/// Parse container bytes; nothing is built unless magic, version and checksum hold.
pub fn decode(bytes: &[u8]) -> Result<Snapshot> {
    check_prefix(bytes)?;
    if bytes.len() < PREFIX_LEN + DIGEST_LEN {
        return Err(Error::Checksum);
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum);
    }
    let len = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
    if PREFIX_LEN + len > body.len() {
        return Err(Error::Format("header length exceeds file".into()));
    }
    let header = parse_header(&body[PREFIX_LEN..PREFIX_LEN + len])?;
    let payload = &body[PREFIX_LEN + len..];

    let mut expected = 0u64;
    let mut tensors = std::collections::HashMap::new();
    for e in &header.tensors {
        if e.shape.iter().product::<usize>() as u64 != e.len || e.offset != expected {
            return Err(Error::Format(format!("index entry {} is inconsistent", e.name)));
        }
        let end = e.offset + 4 * e.len;
        if end > payload.len() as u64 {
            return Err(Error::Format(format!("tensor {} runs past the payload", e.name)));
        }
        let data: Vec<f32> = payload[e.offset as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if tensors.insert(e.name.clone(), Tensor::new(&e.shape, data)?).is_some() {
            return Err(Error::Format(format!("duplicate tensor {}", e.name)));
        }
        expected = end;
    }
    if expected != payload.len() as u64 {
        return Err(Error::Format("payload has unindexed bytes".into()));
    }

    let (gspec, dspec) = header.model.specs()?;
    if header.networks != [gspec.clone(), dspec.clone()] {
        return Err(Error::Format("stored descriptors disagree with the model options".into()));
    }
    let mut take = |name: &str| {
        tensors
            .remove(name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
    };
    let mut build = |prefix: &str, spec: NetSpec| -> Result<Network<f32>> {
        let mut params = ParamSet::new();
        for decl in spec.trace()?.params {
            let full = format!("{prefix}/{}", decl.name);
            params.push(Param {
                value: take(&full)?,
                frozen: header.frozen.contains(&full),
                name: decl.name,
                role: decl.role,
            })?;
        }
        Network::from_parts(spec, params)
    };
    let generator = build("generator", gspec)?;
    let discriminator = build("discriminator", dspec)?;
    let model = match &header.model {
        ModelOptions::Gan(o) => Model::Gan(GanPair {
            options: o.clone(),
            generator,
            discriminator,
        }),
        ModelOptions::Translator(o) => Model::Translator(TranslatorPair {
            options: o.clone(),
            generator,
            discriminator,
        }),
    };

    let progress = match &header.training {
        None => None,
        Some(t) => {
            let mut opts = Vec::new();
            for ((prefix, net), meta) in model.networks().into_iter().zip(&t.optimizers) {
                if meta.network != prefix {
                    return Err(Error::Format(format!("optimizer for {} out of order", meta.network)));
                }
                let mut opt = Optimizer::new(meta.config, net.params().len());
                opt.t = meta.t;
                for (i, p) in net.params().iter().enumerate() {
                    opt.m[i] = tensors.remove(&format!("opt/{prefix}/m/{}", p.name));
                    opt.v[i] = tensors.remove(&format!("opt/{prefix}/v/{}", p.name));
                }
                opts.push(opt);
            }
            if opts.len() != 2 {
                return Err(Error::Format("expected two optimizer records".into()));
            }
            let opt_d = opts.pop().expect("two");
            let opt_g = opts.pop().expect("two");
            Some(Progress {
                config: t.config.clone(),
                counters: t.counters,
                augment: t.augment.clone(),
                opt_g,
                opt_d,
            })
        }
    };
    if let Some(name) = tensors.keys().next() {
        return Err(Error::Format(format!("unexpected tensor {name}")));
    }
    Ok(Snapshot {
        header,
        model,
        progress,
    })
}

pub fn load(path: &Path) -> Result<Snapshot> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Prefixes of qualified parameter names, e.g. `discriminator` or `generator/tconv0`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FreezeSpec(pub Vec<String>);

impl FreezeSpec {
    /// Comma-separated prefixes; empty input freezes nothing.
    pub fn parse(text: &str) -> Self {
        FreezeSpec(
            text.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    fn covers(&self, full: &str) -> bool {
        self.0.iter().any(|p| {
            full == p
                || full
                    .strip_prefix(p.as_str())
                    .is_some_and(|rest| rest.starts_with('/') || rest.starts_with('.'))
        })
    }
}

/// Mark every parameter covered by `spec` as frozen; returns how many were marked.
pub fn apply_freeze(model: &mut Model<f32>, spec: &FreezeSpec) -> Result<usize> {
    let mut hits = vec![false; spec.0.len()];
    let mut count = 0;
    for prefix in ["generator", "discriminator"] {
        let net = model.network_mut(prefix).expect("known prefix");
        for p in net.params_mut().iter_mut() {
            let full = format!("{prefix}/{}", p.name);
            if spec.covers(&full) {
                p.frozen = true;
                count += 1;
                for (i, pat) in spec.0.iter().enumerate() {
                    if FreezeSpec(vec![pat.clone()]).covers(&full) {
                        hits[i] = true;
                    }
                }
            }
        }
    }
    if let Some(i) = hits.iter().position(|h| !h) {
        return Err(Error::Config(format!("freeze pattern {:?} matches no parameter", spec.0[i])));
    }
    Ok(count)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WarmAction {
    Copied,
    Reinitialized { reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WarmEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub action: WarmAction,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WarmReport {
    pub entries: Vec<WarmEntry>,
    pub frozen: usize,
}

impl WarmReport {
    pub fn copied(&self) -> usize {
        self.entries.iter().filter(|e| e.action == WarmAction::Copied).count()
    }

    /// Reinitialized entries, optionally only those under `prefix`.
    pub fn reinitialized(&self, prefix: Option<&str>) -> Vec<&WarmEntry> {
        self.entries
            .iter()
            .filter(|e| e.action != WarmAction::Copied)
            .filter(|e| prefix.is_none_or(|p| e.name.starts_with(&format!("{p}/"))))
            .collect()
    }
}

fn family(arch: Arch) -> &'static str {
    if arch == Arch::Translator {
        "translator"
    } else {
        "gan"
    }
}

/// Copy every donor tensor whose qualified name and shape match into `target`;
/// the rest keep their fresh initialization. Then apply `freeze`.
pub fn warm_start(target: &mut Model<f32>, donor: &Model<f32>, freeze: &FreezeSpec) -> Result<WarmReport> {
    if family(target.arch()) != family(donor.arch()) {
        return Err(Error::Config(format!(
            "a {} checkpoint cannot seed a {} model",
            donor.arch(),
            target.arch()
        )));
    }
    let mut report = WarmReport::default();
    for prefix in ["generator", "discriminator"] {
        let src = match prefix {
            "generator" => donor.generator(),
            _ => donor.discriminator(),
        };
        let net = target.network_mut(prefix).expect("known prefix");
        for p in net.params_mut().iter_mut() {
            let name = format!("{prefix}/{}", p.name);
            let action = match src.params().get(&p.name) {
                Some(d) if d.value.shape() == p.value.shape() => {
                    p.value = d.value.clone();
                    WarmAction::Copied
                }
                Some(d) => WarmAction::Reinitialized {
                    reason: format!("donor shape {:?}", d.value.shape()),
                },
                None => WarmAction::Reinitialized {
                    reason: "absent from donor".into(),
                },
            };
            if let WarmAction::Reinitialized { reason } = &action {
                log::info!("warm start: {name} {:?} reinitialized ({reason})", p.value.shape());
            }
            report.entries.push(WarmEntry {
                name,
                shape: p.value.shape().to_vec(),
                action,
            });
        }
    }
    if report.copied() == 0 {
        return Err(Error::NoMatch);
    }
    report.frozen = apply_freeze(target, freeze)?;
    Ok(report)
}

/// Build `options` from `seed`, then warm-start it from `donor`.
pub fn warm_start_new(
    options: &ModelOptions,
    seed: u64,
    donor: &Model<f32>,
    freeze: &FreezeSpec,
) -> Result<(Model<f32>, WarmReport)> {
    let mut model = options.build(&mut Rng::new(seed))?;
    let report = warm_start(&mut model, donor, freeze)?;
    Ok((model, report))
}
