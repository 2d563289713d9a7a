//! Layer descriptors, parameter containers, initializers and sequential networks.

use serde::{Deserialize, Serialize};
use sgan_tensor::functional::{self, BatchStats, NormMode, RunningStats, BN_MOMENTUM};
use sgan_tensor::{Element, Rng, Tape, Tensor, TensorError, Var};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fn", rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<'t, T: Element>(self, x: Var<'t, T>) -> Var<'t, T> {
        match self {
            Activation::Relu => x.relu(),
            Activation::LeakyRelu { slope } => x.leaky_relu(slope),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => x.sigmoid(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Conv {
        maps: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Tconv {
        maps: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    #[serde(rename = "batchnorm")]
    BatchNorm,
    Activation {
        f: Activation,
    },
    /// Zeroes elements with probability `p` whenever the pass carries a noise source.
    Dropout {
        p: f64,
    },
    Flatten,
    /// Appends one constant plane per class, one-hot for the sample's label.
    ConcatLabel,
    /// Pushes the current activation onto the skip stack.
    SkipSave,
    /// Pops the skip stack and concatenates it after the current channels.
    SkipConcat,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Tconv { .. } => "tconv",
            LayerSpec::BatchNorm => "batchnorm",
            LayerSpec::Activation { .. } => "activation",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::ConcatLabel => "concat-label",
            LayerSpec::SkipSave => "skip-save",
            LayerSpec::SkipConcat => "skip-concat",
        }
    }

    pub fn conv(maps: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv {
            maps,
            kernel,
            stride,
            padding,
        }
    }

    pub fn tconv(maps: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Tconv {
            maps,
            kernel,
            stride,
            padding,
        }
    }

    pub fn act(f: Activation) -> Self {
        LayerSpec::Activation { f }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
    Uniform,
    /// Orthonormal rows (output maps) for weights, zero biases.
    Orthogonal,
}

/// Architecture descriptor of a sequential network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub name: String,
    /// Per-sample input shape `[c, h, w]`.
    pub input: [usize; 3],
    /// Width of the one-hot appended by `ConcatLabel` layers.
    pub classes: usize,
    pub init: Init,
    pub layers: Vec<LayerSpec>,
    /// Deliberate departures from the reference table, kept with the descriptor.
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl Role {
    pub fn trainable(self) -> bool {
        matches!(self, Role::Weight | Role::Bias | Role::Gamma | Role::Beta)
    }
}

/// Parameter declared by a descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub role: Role,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    /// Index of the owning layer.
    pub layer: usize,
}

/// Static shape analysis of a descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    /// Per-sample output shape after each layer.
    pub shapes: Vec<Vec<usize>>,
    pub params: Vec<ParamDecl>,
}

impl Trace {
    pub fn output(&self) -> &[usize] {
        self.shapes.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn layer_err(index: usize, layer: &LayerSpec, reason: String) -> Error {
    Error::Layer {
        index,
        kind: layer.kind(),
        source: TensorError::Invalid {
            op: layer.kind(),
            reason,
        },
    }
}

impl NetSpec {
    pub fn trace(&self) -> Result<Trace> {
        let mut shape = self.input.to_vec();
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut params = Vec::new();
        let mut skips: Vec<Vec<usize>> = Vec::new();
        let (mut n_conv, mut n_tconv, mut n_bn) = (0, 0, 0);
        for (i, layer) in self.layers.iter().enumerate() {
            let spatial = |shape: &[usize]| -> Result<(usize, usize, usize)> {
                match shape {
                    [c, h, w] => Ok((*c, *h, *w)),
                    _ => Err(layer_err(i, layer, format!("needs a [c, h, w] input, got {shape:?}"))),
                }
            };
            match *layer {
                LayerSpec::Conv {
                    maps,
                    kernel,
                    stride,
                    padding,
                } => {
                    let (c, h, w) = spatial(&shape)?;
                    let oh = sgan_tensor::kernels::conv_out_len(h, kernel, stride, padding);
                    let ow = sgan_tensor::kernels::conv_out_len(w, kernel, stride, padding);
                    let (Some(oh), Some(ow)) = (oh, ow) else {
                        return Err(layer_err(i, layer, format!("kernel {kernel} does not fit {h}x{w}")));
                    };
                    let name = format!("conv{n_conv}");
                    n_conv += 1;
                    params.push(ParamDecl {
                        name: format!("{name}.weight"),
                        role: Role::Weight,
                        shape: vec![maps, c, kernel, kernel],
                        fan_in: c * kernel * kernel,
                        layer: i,
                    });
                    params.push(ParamDecl {
                        name: format!("{name}.bias"),
                        role: Role::Bias,
                        shape: vec![maps],
                        fan_in: c * kernel * kernel,
                        layer: i,
                    });
                    shape = vec![maps, oh, ow];
                }
                LayerSpec::Tconv {
                    maps,
                    kernel,
                    stride,
                    padding,
                } => {
                    let (c, h, w) = spatial(&shape)?;
                    let oh = sgan_tensor::kernels::tconv_out_len(h, kernel, stride, padding);
                    let ow = sgan_tensor::kernels::tconv_out_len(w, kernel, stride, padding);
                    let (Some(oh), Some(ow)) = (oh, ow) else {
                        return Err(layer_err(i, layer, format!("padding {padding} too large")));
                    };
                    let name = format!("tconv{n_tconv}");
                    n_tconv += 1;
                    params.push(ParamDecl {
                        name: format!("{name}.weight"),
                        role: Role::Weight,
                        shape: vec![c, maps, kernel, kernel],
                        fan_in: c * kernel * kernel,
                        layer: i,
                    });
                    params.push(ParamDecl {
                        name: format!("{name}.bias"),
                        role: Role::Bias,
                        shape: vec![maps],
                        fan_in: c * kernel * kernel,
                        layer: i,
                    });
                    shape = vec![maps, oh, ow];
                }
                LayerSpec::BatchNorm => {
                    let (c, _, _) = spatial(&shape)?;
                    let name = format!("bn{n_bn}");
                    n_bn += 1;
                    for (suffix, role) in [
                        ("gamma", Role::Gamma),
                        ("beta", Role::Beta),
                        ("running_mean", Role::RunningMean),
                        ("running_var", Role::RunningVar),
                    ] {
                        params.push(ParamDecl {
                            name: format!("{name}.{suffix}"),
                            role,
                            shape: vec![c],
                            fan_in: 1,
                            layer: i,
                        });
                    }
                }
                LayerSpec::Activation { .. } => {}
                LayerSpec::Dropout { p } => {
                    if !(0.0..1.0).contains(&p) {
                        return Err(layer_err(i, layer, format!("dropout p={p} outside [0, 1)")));
                    }
                }
                LayerSpec::Flatten => shape = vec![shape.iter().product()],
                LayerSpec::ConcatLabel => {
                    let (c, h, w) = spatial(&shape)?;
                    if self.classes == 0 {
                        return Err(layer_err(i, layer, "descriptor declares no classes".into()));
                    }
                    shape = vec![c + self.classes, h, w];
                }
                LayerSpec::SkipSave => skips.push(shape.clone()),
                LayerSpec::SkipConcat => {
                    let (c, h, w) = spatial(&shape)?;
                    let saved = skips
                        .pop()
                        .ok_or_else(|| layer_err(i, layer, "skip stack is empty".into()))?;
                    if saved[1..] != [h, w] {
                        return Err(layer_err(i, layer, format!("skip {saved:?} vs current {shape:?}")));
                    }
                    shape = vec![c + saved[0], h, w];
                }
            }
            shapes.push(shape.clone());
        }
        if !skips.is_empty() {
            return Err(Error::Config(format!("{}: {} unused skip(s)", self.name, skips.len())));
        }
        Ok(Trace { shapes, params })
    }

    /// Number of trainable scalars, computed from the descriptor alone.
    pub fn param_count(&self) -> Result<usize> {
        Ok(self
            .trace()?
            .params
            .iter()
            .filter(|p| p.role.trainable())
            .map(|p| p.shape.iter().product::<usize>())
            .sum())
    }

    /// Layers that own a weight tensor.
    pub fn weight_layers(&self) -> Vec<&LayerSpec> {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { .. } | LayerSpec::Tconv { .. }))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Element> {
    pub name: String,
    pub role: Role,
    pub value: Tensor<T>,
    /// Frozen parameters receive no optimizer updates.
    pub frozen: bool,
}

/// Named tensors in a stable order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T: Element> {
    entries: Vec<Param<T>>,
}

impl<T: Element> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    pub fn push(&mut self, param: Param<T>) -> Result<()> {
        if self.index_of(&param.name).is_some() {
            return Err(Error::Config(format!("duplicate parameter name {}", param.name)));
        }
        self.entries.push(param);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param<T>> {
        self.entries.iter_mut()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.entries.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.entries.iter_mut().find(|p| p.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|p| p.role.trainable())
            .map(|p| p.value.numel())
            .sum()
    }
}

impl<T: Element> std::ops::Index<usize> for ParamSet<T> {
    type Output = Param<T>;
    fn index(&self, i: usize) -> &Param<T> {
        &self.entries[i]
    }
}

impl<T: Element> std::ops::IndexMut<usize> for ParamSet<T> {
    fn index_mut(&mut self, i: usize) -> &mut Param<T> {
        &mut self.entries[i]
    }
}

pub fn init_uniform<T: Element>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    rng.uniform_tensor(shape, -bound, bound)
}

/// Weight whose rows (axis 0 against the flattened rest) are orthonormal when
/// there are no more rows than columns, and whose columns are orthonormal otherwise.
pub fn init_orthogonal<T: Element>(shape: &[usize], rng: &mut Rng) -> Tensor<T> {
    let rows = shape.first().copied().unwrap_or(1);
    let cols = shape.iter().skip(1).product::<usize>().max(1);
    let (tall_r, tall_c) = if rows <= cols { (cols, rows) } else { (rows, cols) };
    let a = nalgebra::DMatrix::<f64>::from_fn(tall_r, tall_c, |_, _| rng.normal());
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..tall_c {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let m = if rows <= cols { q.transpose() } else { q };
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            data.push(T::from_f64(m[(i, j)]));
        }
    }
    Tensor::new(shape, data).expect("shape product matches")
}

/// Exchange the first two axes of a rank-4 tensor.
pub fn swap_leading_axes<T: Element>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    let (a, b, inner) = (s[0], s[1], s[2..].iter().product::<usize>());
    let mut out = Vec::with_capacity(t.numel());
    for j in 0..b {
        for i in 0..a {
            let base = (i * b + j) * inner;
            out.extend_from_slice(&t.data()[base..base + inner]);
        }
    }
    let mut shape = s.to_vec();
    shape.swap(0, 1);
    Tensor::new(&shape, out).expect("same element count")
}

fn init_param<T: Element>(decl: &ParamDecl, init: Init, rng: &mut Rng) -> Tensor<T> {
    match decl.role {
        Role::Weight => match init {
            Init::Uniform => init_uniform(&decl.shape, decl.fan_in, rng),
            Init::Orthogonal if decl.name.starts_with("tconv") => {
                // stored [in, out, k, k]; output maps are axis 1
                let s = &decl.shape;
                swap_leading_axes(&init_orthogonal::<T>(&[s[1], s[0], s[2], s[3]], rng))
            }
            Init::Orthogonal => init_orthogonal(&decl.shape, rng),
        },
        Role::Bias | Role::Beta | Role::RunningMean => Tensor::zeros(&decl.shape),
        Role::Gamma | Role::RunningVar => Tensor::ones(&decl.shape),
    }
}

/// Per-layer activation summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerStat {
    pub index: usize,
    pub kind: &'static str,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Batch statistics of one batch-norm layer awaiting [`Network::commit`].
#[derive(Clone, Debug)]
pub struct BnUpdate<T: Element> {
    pub mean_index: usize,
    pub var_index: usize,
    pub stats: BatchStats<T>,
}

/// Mutable context of one forward pass.
pub struct Pass<'a, T: Element> {
    /// Batch statistics (training) versus running statistics (inference).
    pub train: bool,
    pub labels: Option<&'a [usize]>,
    /// Noise source for dropout; dropout is the identity without one.
    pub noise: Option<&'a mut Rng>,
    /// Replace every skip tensor by zeros (diagnostics).
    pub zero_skips: bool,
    pub record: bool,
    pub bn_updates: Vec<BnUpdate<T>>,
    pub stats: Vec<LayerStat>,
}

impl<'a, T: Element> Pass<'a, T> {
    pub fn train() -> Self {
        Self::new(true)
    }

    pub fn eval() -> Self {
        Self::new(false)
    }

    fn new(train: bool) -> Self {
        Pass {
            train,
            labels: None,
            noise: None,
            zero_skips: false,
            record: false,
            bn_updates: Vec::new(),
            stats: Vec::new(),
        }
    }

    pub fn with_labels(mut self, labels: Option<&'a [usize]>) -> Self {
        self.labels = labels;
        self
    }

    pub fn with_noise(mut self, rng: &'a mut Rng) -> Self {
        self.noise = Some(rng);
        self
    }
}

/// Parameters of a network placed on a tape.
pub struct Bound<'t, T: Element> {
    pub vars: Vec<Var<'t, T>>,
}

impl<'t, T: Element> Bound<'t, T> {
    /// Variables of trainable, unfrozen parameters with their indices.
    pub fn trainable<'n>(&self, net: &'n Network<T>) -> Vec<(usize, Var<'t, T>)> {
        net.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.role.trainable() && !p.frozen)
            .map(|(i, _)| (i, self.vars[i]))
            .collect()
    }
}

/// One-hot label planes `[n, classes, h, w]`; a single class yields all ones.
pub fn label_planes<T: Element>(labels: &[usize], classes: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let plane = h * w;
    let mut data = vec![T::zero(); labels.len() * classes * plane];
    for (b, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Invalid(format!("label {l} out of range for {classes} classes")));
        }
        let base = (b * classes + l) * plane;
        data[base..base + plane].fill(T::one());
    }
    Ok(Tensor::new(&[labels.len(), classes, h, w], data)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T: Element = f32> {
    spec: NetSpec,
    params: ParamSet<T>,
}

impl<T: Element> Network<T> {
    pub fn new(spec: NetSpec, rng: &mut Rng) -> Result<Self> {
        let trace = spec.trace()?;
        let mut params = ParamSet::new();
        for decl in &trace.params {
            params.push(Param {
                name: decl.name.clone(),
                role: decl.role,
                value: init_param(decl, spec.init, rng),
                frozen: false,
            })?;
        }
        Ok(Network { spec, params })
    }

    /// Rebuild from a descriptor and stored tensors, checking names and shapes.
    pub fn from_parts(spec: NetSpec, params: ParamSet<T>) -> Result<Self> {
        let trace = spec.trace()?;
        if trace.params.len() != params.len() {
            return Err(Error::Format(format!(
                "{}: descriptor declares {} tensors, got {}",
                spec.name,
                trace.params.len(),
                params.len()
            )));
        }
        for (decl, p) in trace.params.iter().zip(params.iter()) {
            if decl.name != p.name || decl.shape != p.value.shape() || decl.role != p.role {
                return Err(Error::Format(format!(
                    "{}: tensor {} {:?} does not match descriptor {} {:?}",
                    spec.name,
                    p.name,
                    p.value.shape(),
                    decl.name,
                    decl.shape
                )));
            }
        }
        Ok(Network { spec, params })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.trainable_count()
    }

    pub fn cast<U: Element>(&self) -> Network<U> {
        let mut params = ParamSet::new();
        for p in self.params.iter() {
            params
                .push(Param {
                    name: p.name.clone(),
                    role: p.role,
                    value: p.value.cast(),
                    frozen: p.frozen,
                })
                .expect("names already unique");
        }
        Network {
            spec: self.spec.clone(),
            params,
        }
    }

    /// Place parameters on `tape`: trainable unfrozen ones as differentiable leaves.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        let vars = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), p.role.trainable() && !p.frozen))
            .collect();
        Bound { vars }
    }

    /// Place every parameter on `tape` as a constant.
    pub fn bind_const<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        let vars = self.params.iter().map(|p| tape.constant(p.value.clone())).collect();
        Bound { vars }
    }

    pub fn forward<'t>(&self, bound: &Bound<'t, T>, x: Var<'t, T>, pass: &mut Pass<'_, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1..] != self.spec.input {
            let first = self.spec.layers.first().map(LayerSpec::kind).unwrap_or("input");
            return Err(Error::Layer {
                index: 0,
                kind: first,
                source: TensorError::shape(
                    "input",
                    format!("[n, {}, {}, {}]", self.spec.input[0], self.spec.input[1], self.spec.input[2]),
                    &shape,
                ),
            });
        }
        let tape = x.tape();
        let mut h = x;
        let mut skips: Vec<Var<'t, T>> = Vec::new();
        let mut p = 0usize;
        let mut next = || {
            p += 1;
            p - 1
        };
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let wrap = |e: TensorError| Error::Layer {
                index: i,
                kind: layer.kind(),
                source: e,
            };
            h = match *layer {
                LayerSpec::Conv { stride, padding, .. } => {
                    let (w, b) = (bound.vars[next()], bound.vars[next()]);
                    let y = h.conv2d(w, stride, padding).map_err(wrap)?;
                    functional::add_channel_bias(y, b).map_err(wrap)?
                }
                LayerSpec::Tconv { stride, padding, .. } => {
                    let (w, b) = (bound.vars[next()], bound.vars[next()]);
                    let y = h.conv_transpose2d(w, stride, padding).map_err(wrap)?;
                    functional::add_channel_bias(y, b).map_err(wrap)?
                }
                LayerSpec::BatchNorm => {
                    let (g, b, m, v) = (next(), next(), next(), next());
                    if pass.train {
                        let (y, stats) = functional::batch_norm2d(h, bound.vars[g], bound.vars[b], NormMode::Train)
                            .map_err(wrap)?;
                        pass.bn_updates.push(BnUpdate {
                            mean_index: m,
                            var_index: v,
                            stats: stats.expect("training mode returns stats"),
                        });
                        y
                    } else {
                        let running = RunningStats {
                            mean: self.params[m].value.clone(),
                            var: self.params[v].value.clone(),
                        };
                        functional::batch_norm2d(h, bound.vars[g], bound.vars[b], NormMode::Eval(&running))
                            .map_err(wrap)?
                            .0
                    }
                }
                LayerSpec::Activation { f } => f.apply(h),
                LayerSpec::Dropout { p: rate } => match pass.noise.as_deref_mut() {
                    Some(rng) if rate > 0.0 => {
                        let keep = 1.0 / (1.0 - rate);
                        let s = h.shape();
                        let n: usize = s.iter().product();
                        let mask: Vec<T> = (0..n)
                            .map(|_| T::from_f64(if rng.bernoulli(rate) { 0.0 } else { keep }))
                            .collect();
                        h.mul_const(&Tensor::new(&s, mask)?).map_err(wrap)?
                    }
                    _ => h,
                },
                LayerSpec::Flatten => {
                    let s = h.shape();
                    h.reshape(&[s[0], s[1..].iter().product()]).map_err(wrap)?
                }
                LayerSpec::ConcatLabel => {
                    let s = h.shape();
                    let labels = pass.labels.ok_or_else(|| {
                        layer_err(i, layer, "conditional network needs class labels".into())
                    })?;
                    if labels.len() != s[0] {
                        return Err(layer_err(i, layer, format!("{} labels for batch {}", labels.len(), s[0])));
                    }
                    let planes = label_planes(labels, self.spec.classes, s[2], s[3])?;
                    Var::concat_channels(&[h, tape.constant(planes)]).map_err(wrap)?
                }
                LayerSpec::SkipSave => {
                    skips.push(h);
                    h
                }
                LayerSpec::SkipConcat => {
                    let saved = skips.pop().ok_or_else(|| layer_err(i, layer, "skip stack is empty".into()))?;
                    let saved = if pass.zero_skips {
                        tape.constant(Tensor::zeros(&saved.shape()))
                    } else {
                        saved
                    };
                    Var::concat_channels(&[h, saved]).map_err(wrap)?
                }
            };
            if pass.record {
                pass.stats.push(summarize(i, layer.kind(), &h.value()));
            }
        }
        Ok(h)
    }

    /// Fold training-mode batch statistics into the running statistics (frozen ones stay).
    pub fn commit(&mut self, updates: &[BnUpdate<T>]) {
        for u in updates {
            if self.params[u.mean_index].frozen || self.params[u.var_index].frozen {
                continue;
            }
            let mut running = RunningStats {
                mean: self.params[u.mean_index].value.clone(),
                var: self.params[u.var_index].value.clone(),
            };
            running.update(&u.stats, BN_MOMENTUM);
            self.params[u.mean_index].value = running.mean;
            self.params[u.var_index].value = running.var;
        }
    }

    /// Inference on a plain tensor with running statistics and no dropout.
    pub fn infer(&self, x: &Tensor<T>, labels: Option<&[usize]>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        tape.no_grad(|| {
            let bound = self.bind_const(&tape);
            let mut pass = Pass::eval().with_labels(labels);
            Ok(self.forward(&bound, tape.constant(x.clone()), &mut pass)?.value())
        })
    }
}

fn summarize<T: Element>(index: usize, kind: &'static str, t: &Tensor<T>) -> LayerStat {
    let n = t.numel().max(1) as f64;
    let mean = t.data().iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let var = t.data().iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
    let (min, max) = t.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v.as_f64()), hi.max(v.as_f64()))
    });
    LayerStat {
        index,
        kind,
        mean,
        std: var.sqrt(),
        min,
        max,
    }
}
