//! Convolution kernels on raw tensors.
//!
//! Weights use the `[out_channels, in_channels, k, k]` layout. The transposed
//! convolution is the adjoint of [`conv2d`] with respect to its input, so a
//! transposed-convolution weight is read as `[in_channels, out_channels, k, k]`
//! of the transposed layer.
//!
//! Each sample of a batch is computed independently with a fixed summation
//! order, so results do not depend on batch composition or on whether the
//! per-sample loop runs in parallel.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

static PARALLEL: AtomicBool = AtomicBool::new(false);

/// Enable or disable the per-sample parallel loop. Off by default.
///
/// Both settings produce bit-identical results.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    PARALLEL.load(Ordering::Relaxed)
}

/// Spatial output extent of a convolution, `None` when the kernel does not fit.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || len + 2 * padding < kernel {
        return None;
    }
    Some((len + 2 * padding - kernel) / stride + 1)
}

/// Spatial output extent of a transposed convolution.
pub fn tconv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || len == 0 {
        return None;
    }
    let full = (len - 1) * stride + kernel;
    if full <= 2 * padding {
        return None;
    }
    Some(full - 2 * padding)
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn in_len(&self) -> usize {
        self.ci * self.h * self.w
    }
    fn out_len(&self) -> usize {
        self.co * self.ho * self.wo
    }
    fn col_rows(&self) -> usize {
        self.ci * self.k * self.k
    }
    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn weight_dims<T: Element>(w: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    match w.shape()[..] {
        [o, i, kh, kw] if kh == kw => Ok((o, i, kh)),
        _ => Err(TensorError::shape(op, "square-kernel weight [out, in, k, k]", w.shape())),
    }
}

fn geometry<T: Element>(
    op: &'static str,
    in_shape: (usize, usize, usize, usize),
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Geom> {
    let (n, ci, h, wd) = in_shape;
    let (co, wci, k) = weight_dims(w, op)?;
    if wci != ci {
        return Err(TensorError::shape(
            op,
            format!("weight with {ci} input channels"),
            w.shape(),
        ));
    }
    if stride == 0 {
        return Err(TensorError::invalid(op, "stride must be >= 1"));
    }
    let ho = conv_out_len(h, k, stride, pad);
    let wo = conv_out_len(wd, k, stride, pad);
    match (ho, wo) {
        (Some(ho), Some(wo)) => Ok(Geom {
            n,
            ci,
            h,
            w: wd,
            co,
            k,
            stride,
            pad,
            ho,
            wo,
        }),
        _ => Err(TensorError::invalid(
            op,
            format!("kernel {k} does not fit input {h}x{wd} with padding {pad}"),
        )),
    }
}

fn im2col<T: Element>(x: &[T], g: &Geom, cols: &mut [T]) {
    let ncols = g.col_cols();
    for c in 0..g.ci {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for kh in 0..g.k {
            for kw in 0..g.k {
                let row = (c * g.k + kh) * g.k + kw;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + kh) as isize - g.pad as isize;
                    let line = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    if ih < 0 || ih as usize >= g.h {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, v) in line.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kw) as isize - g.pad as isize;
                        *v = if iw < 0 || iw as usize >= g.w {
                            T::zero()
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(cols: &[T], g: &Geom, dx: &mut [T]) {
    let ncols = g.col_cols();
    for c in 0..g.ci {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for kh in 0..g.k {
            for kw in 0..g.k {
                let row = (c * g.k + kh) * g.k + kw;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + kh) as isize - g.pad as isize;
                    if ih < 0 || ih as usize >= g.h {
                        continue;
                    }
                    let line = &mut plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for ow in 0..g.wo {
                        let iw = (ow * g.stride + kw) as isize - g.pad as isize;
                        if iw >= 0 && (iw as usize) < g.w {
                            line[iw as usize] = line[iw as usize] + src[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

fn per_sample<T: Element>(out: &mut [T], chunk: usize, f: impl Fn(usize, &mut [T]) + Sync + Send) {
    if chunk == 0 {
        return;
    }
    if parallel_enabled() {
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, o)| f(i, o));
    } else {
        out.chunks_mut(chunk).enumerate().for_each(|(i, o)| f(i, o));
    }
}

/// Cross-correlation of an NCHW input with an OIKK weight.
pub fn conv2d<T: Element>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let g = geometry("conv2d", x.dims4("conv2d")?, w, stride, pad)?;
    let mut out = vec![T::zero(); g.n * g.out_len()];
    let xd = x.data();
    let wd = w.data();
    per_sample(&mut out, g.out_len(), |i, o| {
        let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
        im2col(&xd[i * g.in_len()..(i + 1) * g.in_len()], &g, &mut cols);
        T::gemm(
            g.co,
            g.col_rows(),
            g.col_cols(),
            T::one(),
            wd,
            false,
            &cols,
            false,
            T::zero(),
            o,
        );
    });
    Tensor::new(&[g.n, g.co, g.ho, g.wo], out)
}

/// Gradient of [`conv2d`] with respect to its input, for an input of spatial size `h x w`.
///
/// With `h`/`w` from [`tconv_out_len`] this is the transposed convolution.
pub fn conv2d_input_grad<T: Element>(
    grad: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
    h: usize,
    wd: usize,
) -> Result<Tensor<T>> {
    let (n, gc, gh, gw) = grad.dims4("conv_transpose2d")?;
    let (_, ci, _) = weight_dims(w, "conv_transpose2d")?;
    let g = geometry("conv_transpose2d", (n, ci, h, wd), w, stride, pad)?;
    if (g.co, g.ho, g.wo) != (gc, gh, gw) {
        return Err(TensorError::shape(
            "conv_transpose2d",
            format!("[{n}, {}, {}, {}]", g.co, g.ho, g.wo),
            grad.shape(),
        ));
    }
    let mut out = vec![T::zero(); n * g.in_len()];
    let gd = grad.data();
    let wdat = w.data();
    per_sample(&mut out, g.in_len(), |i, o| {
        let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
        T::gemm(
            g.col_rows(),
            g.co,
            g.col_cols(),
            T::one(),
            wdat,
            true,
            &gd[i * g.out_len()..(i + 1) * g.out_len()],
            false,
            T::zero(),
            &mut cols,
        );
        col2im(&cols, &g, o);
    });
    Tensor::new(&[n, ci, h, wd], out)
}

/// Transposed convolution with the output extent implied by the shape formula.
pub fn conv_transpose2d<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (_, _, h, wd) = x.dims4("conv_transpose2d")?;
    let (_, _, k) = weight_dims(w, "conv_transpose2d")?;
    let oh = tconv_out_len(h, k, stride, pad);
    let ow = tconv_out_len(wd, k, stride, pad);
    match (oh, ow) {
        (Some(oh), Some(ow)) => conv2d_input_grad(x, w, stride, pad, oh, ow),
        _ => Err(TensorError::invalid(
            "conv_transpose2d",
            format!("kernel {k}, stride {stride}, padding {pad} yield an empty output"),
        )),
    }
}

/// Gradient of [`conv2d`] with respect to its weight, for a kernel of size `k`.
pub fn conv2d_weight_grad<T: Element>(
    x: &Tensor<T>,
    grad: &Tensor<T>,
    stride: usize,
    pad: usize,
    k: usize,
) -> Result<Tensor<T>> {
    let (n, ci, h, wd) = x.dims4("conv2d_weight_grad")?;
    let (gn, co, gh, gw) = grad.dims4("conv2d_weight_grad")?;
    let proto = Tensor::<T>::zeros(&[co, ci, k, k]);
    let g = geometry("conv2d_weight_grad", (n, ci, h, wd), &proto, stride, pad)?;
    if (gn, g.ho, g.wo) != (n, gh, gw) {
        return Err(TensorError::shape(
            "conv2d_weight_grad",
            format!("[{n}, {co}, {}, {}]", g.ho, g.wo),
            grad.shape(),
        ));
    }
    let mut dw = vec![T::zero(); co * g.col_rows()];
    let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    let xd = x.data();
    let gd = grad.data();
    for i in 0..n {
        im2col(&xd[i * g.in_len()..(i + 1) * g.in_len()], &g, &mut cols);
        T::gemm(
            co,
            g.col_cols(),
            g.col_rows(),
            T::one(),
            &gd[i * g.out_len()..(i + 1) * g.out_len()],
            false,
            &cols,
            true,
            T::one(),
            &mut dw,
        );
    }
    Tensor::new(&[co, ci, k, k], dw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Direct quadruple loop, independent of im2col.
    fn conv_direct(x: &Tensor<f64>, w: &Tensor<f64>, s: usize, p: usize) -> Tensor<f64> {
        let (n, ci, h, wd) = x.dims4("t").unwrap();
        let (co, _, k, _) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (wd + 2 * p - k) / s + 1;
        let mut out = vec![0.0; n * co * ho * wo];
        for b in 0..n {
            for o in 0..co {
                for y in 0..ho {
                    for xx in 0..wo {
                        let mut acc = 0.0;
                        for c in 0..ci {
                            for kh in 0..k {
                                for kw in 0..k {
                                    let ih = (y * s + kh) as isize - p as isize;
                                    let iw = (xx * s + kw) as isize - p as isize;
                                    if ih < 0 || iw < 0 || ih as usize >= h || iw as usize >= wd {
                                        continue;
                                    }
                                    acc += x.data()[((b * ci + c) * h + ih as usize) * wd + iw as usize]
                                        * w.data()[((o * ci + c) * k + kh) * k + kw];
                                }
                            }
                        }
                        out[((b * co + o) * ho + y) * wo + xx] = acc;
                    }
                }
            }
        }
        Tensor::new(&[n, co, ho, wo], out).unwrap()
    }

    #[test]
    fn conv_matches_direct_loop() {
        let mut rng = Rng::new(3);
        let x = rng.normal_tensor::<f64>(&[1, 2, 5, 5]);
        let w = rng.normal_tensor::<f64>(&[3, 2, 3, 3]);
        for (s, p) in [(1, 0), (1, 1), (2, 1), (2, 0)] {
            let got = conv2d(&x, &w, s, p).unwrap();
            let want = conv_direct(&x, &w, s, p);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-6, "s={s} p={p}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = Rng::new(1);
        let x = rng.normal_tensor::<f32>(&[2, 1, 4, 4]);
        let w = Tensor::<f32>::ones(&[1, 1, 1, 1]);
        assert_eq!(conv2d(&x, &w, 1, 0).unwrap(), x);
    }

    #[test]
    fn table_shapes() {
        let x = Tensor::<f32>::zeros(&[1, 3, 64, 64]);
        let w = Tensor::<f32>::zeros(&[64, 3, 4, 4]);
        assert_eq!(conv2d(&x, &w, 2, 1).unwrap().shape(), &[1, 64, 32, 32]);

        let z = Tensor::<f32>::zeros(&[1, 100, 1, 1]);
        let wt = Tensor::<f32>::zeros(&[100, 512, 4, 4]);
        assert_eq!(conv_transpose2d(&z, &wt, 1, 0).unwrap().shape(), &[1, 512, 4, 4]);
        let h = Tensor::<f32>::zeros(&[1, 512, 4, 4]);
        let wt = Tensor::<f32>::zeros(&[512, 256, 4, 4]);
        assert_eq!(conv_transpose2d(&h, &wt, 2, 1).unwrap().shape(), &[1, 256, 8, 8]);
    }

    #[test]
    fn mismatched_channels_are_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 3, 8, 8]);
        let w = Tensor::<f32>::zeros(&[4, 2, 3, 3]);
        let err = conv2d(&x, &w, 1, 0).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
        let w = Tensor::<f32>::zeros(&[4, 3, 9, 9]);
        assert!(conv2d(&x, &w, 1, 0).is_err());
    }

    #[test]
    fn parallel_and_serial_agree_bitwise() {
        let mut rng = Rng::new(9);
        let x = rng.normal_tensor::<f32>(&[4, 3, 9, 9]);
        let w = rng.normal_tensor::<f32>(&[5, 3, 4, 4]);
        let serial = conv2d(&x, &w, 2, 1).unwrap();
        set_parallel(true);
        let par = conv2d(&x, &w, 2, 1).unwrap();
        set_parallel(false);
        assert_eq!(serial, par);
    }

    #[test]
    fn result_is_independent_of_batch_composition() {
        let mut rng = Rng::new(5);
        let x = rng.normal_tensor::<f32>(&[3, 2, 6, 6]);
        let w = rng.normal_tensor::<f32>(&[4, 2, 4, 4]);
        let all = conv2d(&x, &w, 2, 1).unwrap();
        let one = conv2d(&x.select_rows(&[1]).unwrap(), &w, 2, 1).unwrap();
        assert_eq!(all.select_rows(&[1]).unwrap(), one);
    }
}
