//! Convolution and transposed-convolution kernels (im2col + GEMM).
//!
//! Convolution is cross-correlation. Kernels are stored `[C_a, C_b, kh, kw]`;
//! for `conv2d` that is `[C_out, C_in, kh, kw]`, and `deconv2d` reuses the
//! layout of the convolution it transposes, i.e. `[C_in, C_out, kh, kw]`.
//! With that convention `deconv2d(., k)` is the exact adjoint of `conv2d(., k)`.

use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{matmul, Element, Tensor};

/// Stride and symmetric zero padding of a 2-D (de)convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub const fn new(stride: usize, pad: usize) -> Self {
        Self { stride, pad }
    }

    fn check(&self, op: &'static str) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::geometry(op, "stride must be at least 1"));
        }
        Ok(())
    }
}

/// Output extent of a convolution, or an error when it is empty or the
/// window does not tile the padded input exactly.
pub fn conv_out_size(op: &'static str, size: usize, k: usize, g: ConvGeom) -> Result<usize> {
    g.check(op)?;
    let padded = size + 2 * g.pad;
    if padded < k {
        return Err(Error::geometry(op, format!("kernel {k} exceeds padded input {padded}")));
    }
    if !(padded - k).is_multiple_of(g.stride) {
        return Err(Error::geometry(
            op,
            format!("(size {size} + 2*pad {} - kernel {k}) not divisible by stride {}", g.pad, g.stride),
        ));
    }
    Ok((padded - k) / g.stride + 1)
}

/// Output extent of a transposed convolution: `(size - 1) * stride - 2 * pad + k`.
pub fn deconv_out_size(op: &'static str, size: usize, k: usize, g: ConvGeom) -> Result<usize> {
    g.check(op)?;
    let full = (size - 1) * g.stride + k;
    if full <= 2 * g.pad {
        return Err(Error::geometry(op, format!("padding {} consumes the whole output", g.pad)));
    }
    Ok(full - 2 * g.pad)
}

/// Unfolding geometry: an image of `c x h x w` seen through `kh x kw`
/// windows laid on an `oh x ow` grid.
#[derive(Clone, Copy, Debug)]
struct Unfold {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Unfold {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Valid `ox` range for kernel column `kj` when `stride == 1`.
    fn unit_stride_span(&self, kj: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kj).min(self.ow);
        let hi = (self.w + self.pad) as isize - kj as isize;
        let hi = hi.clamp(lo as isize, self.ow as isize) as usize;
        (lo, hi)
    }
}

fn im2col<T: Element>(x: &[T], u: &Unfold, cols: &mut [T]) {
    let plane = u.h * u.w;
    let n = u.cols();
    for c in 0..u.c {
        let xc = &x[c * plane..(c + 1) * plane];
        for ki in 0..u.kh {
            for kj in 0..u.kw {
                let row = (c * u.kh + ki) * u.kw + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..u.oh {
                    let drow = &mut dst[oy * u.ow..(oy + 1) * u.ow];
                    let iy = (oy * u.stride + ki) as isize - u.pad as isize;
                    if iy < 0 || iy >= u.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * u.w..(iy as usize + 1) * u.w];
                    if u.stride == 1 {
                        let (lo, hi) = u.unit_stride_span(kj);
                        drow[..lo].fill(T::zero());
                        if hi > lo {
                            let off = lo + kj - u.pad;
                            drow[lo..hi].copy_from_slice(&src[off..off + hi - lo]);
                        }
                        drow[hi..].fill(T::zero());
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * u.stride + kj) as isize - u.pad as isize;
                            *d = if ix >= 0 && ix < u.w as isize { src[ix as usize] } else { T::zero() };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto `x`.
fn col2im<T: Element>(cols: &[T], u: &Unfold, x: &mut [T]) {
    let plane = u.h * u.w;
    let n = u.cols();
    for c in 0..u.c {
        let xc = &mut x[c * plane..(c + 1) * plane];
        for ki in 0..u.kh {
            for kj in 0..u.kw {
                let row = (c * u.kh + ki) * u.kw + kj;
                let srcs = &cols[row * n..(row + 1) * n];
                for oy in 0..u.oh {
                    let iy = (oy * u.stride + ki) as isize - u.pad as isize;
                    if iy < 0 || iy >= u.h as isize {
                        continue;
                    }
                    let srow = &srcs[oy * u.ow..(oy + 1) * u.ow];
                    let dst = &mut xc[iy as usize * u.w..(iy as usize + 1) * u.w];
                    if u.stride == 1 {
                        let (lo, hi) = u.unit_stride_span(kj);
                        if hi > lo {
                            let off = lo + kj - u.pad;
                            for (d, &s) in dst[off..off + hi - lo].iter_mut().zip(&srow[lo..hi]) {
                                *d = *d + s;
                            }
                        }
                    } else {
                        for (ox, &s) in srow.iter().enumerate() {
                            let ix = (ox * u.stride + kj) as isize - u.pad as isize;
                            if ix >= 0 && ix < u.w as isize {
                                dst[ix as usize] = dst[ix as usize] + s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn kernel_dims<T: Element>(op: &'static str, k: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    match k.shape() {
        &[a, b, kh, kw] => Ok((a, b, kh, kw)),
        s => Err(Error::shape(op, format!("kernel must be rank 4, got {s:?}"))),
    }
}

fn check_bias<T: Element>(op: &'static str, b: &Tensor<T>, channels: usize) -> Result<()> {
    if b.shape() != [channels] {
        return Err(Error::shape(op, format!("bias {:?} for {channels} output channels", b.shape())));
    }
    Ok(())
}

fn add_bias<T: Element>(out: &mut [T], bias: &[T], plane: usize) {
    for (row, &b) in out.chunks_mut(plane).zip(bias) {
        row.iter_mut().for_each(|v| *v = *v + b);
    }
}

/// Per-channel sums of `g` (`N x C x P`), accumulated sample by sample.
fn channel_sums<T: Element>(g: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for s in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            let base = (s * c + ch) * plane;
            *o = *o + g[base..base + plane].iter().copied().sum::<T>();
        }
    }
    out
}

fn sum_in_order<T: Element>(parts: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); len];
    for p in parts {
        acc.iter_mut().zip(&p).for_each(|(a, &v)| *a = *a + v);
    }
    acc
}

struct ConvShape {
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    unfold: Unfold,
}

fn conv_shape<T: Element>(x: &Tensor<T>, k: &Tensor<T>, g: ConvGeom) -> Result<ConvShape> {
    const OP: &str = "conv2d";
    let (n, cin, h, w) = x.dims4(OP)?;
    let (cout, kcin, kh, kw) = kernel_dims(OP, k)?;
    if kcin != cin {
        return Err(Error::shape(OP, format!("input has {cin} channels, kernel expects {kcin}")));
    }
    let oh = conv_out_size(OP, h, kh, g)?;
    let ow = conv_out_size(OP, w, kw, g)?;
    let unfold = Unfold { c: cin, h, w, kh, kw, stride: g.stride, pad: g.pad, oh, ow };
    Ok(ConvShape { n, cin, cout, h, w, oh, ow, unfold })
}

pub fn conv2d_forward<T: Element>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    b: &Tensor<T>,
    g: ConvGeom,
) -> Result<Tensor<T>> {
    let s = conv_shape(x, k, g)?;
    check_bias("conv2d", b, s.cout)?;
    let in_per = s.cin * s.h * s.w;
    let out_plane = s.oh * s.ow;
    let mut out = vec![T::zero(); s.n * s.cout * out_plane];
    let (xd, kd, bd) = (x.data(), k.data(), b.data());
    let u = s.unfold;
    parallel::for_each_chunk_mut(&mut out, s.cout * out_plane, |i, o| {
        let mut cols = vec![T::zero(); u.rows() * u.cols()];
        im2col(&xd[i * in_per..(i + 1) * in_per], &u, &mut cols);
        matmul(false, false, s.cout, out_plane, u.rows(), kd, &cols, T::zero(), o);
        add_bias(o, bd, out_plane);
    });
    Tensor::new(vec![s.n, s.cout, s.oh, s.ow], out)
}

/// Gradients of a convolution, each computed only when requested.
pub struct ConvGrads<T: Element> {
    pub input: Option<Tensor<T>>,
    pub kernel: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    gout: &Tensor<T>,
    g: ConvGeom,
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let s = conv_shape(x, k, g)?;
    let u = s.unfold;
    let in_per = s.cin * s.h * s.w;
    let out_plane = s.oh * s.ow;
    let out_per = s.cout * out_plane;
    let (xd, kd, gd) = (x.data(), k.data(), gout.data());
    let [need_x, need_k, need_b] = need;

    let per_sample: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = parallel::map_indices(s.n, |i| {
        let go = &gd[i * out_per..(i + 1) * out_per];
        let dk = need_k.then(|| {
            let mut cols = vec![T::zero(); u.rows() * u.cols()];
            im2col(&xd[i * in_per..(i + 1) * in_per], &u, &mut cols);
            let mut dk = vec![T::zero(); s.cout * u.rows()];
            matmul(false, true, s.cout, u.rows(), out_plane, go, &cols, T::zero(), &mut dk);
            dk
        });
        let dx = need_x.then(|| {
            let mut dcols = vec![T::zero(); u.rows() * u.cols()];
            matmul(true, false, u.rows(), out_plane, s.cout, kd, go, T::zero(), &mut dcols);
            let mut dx = vec![T::zero(); in_per];
            col2im(&dcols, &u, &mut dx);
            dx
        });
        (dx, dk)
    });

    let mut dx_all = need_x.then(|| Vec::with_capacity(s.n * in_per));
    let mut dk_parts = Vec::new();
    for (dx, dk) in per_sample {
        if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
            all.extend_from_slice(&dx);
        }
        if let Some(dk) = dk {
            dk_parts.push(dk);
        }
    }
    Ok(ConvGrads {
        input: dx_all.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()?,
        kernel: need_k
            .then(|| Tensor::new(k.shape().to_vec(), sum_in_order(dk_parts, k.numel())))
            .transpose()?,
        bias: need_b
            .then(|| Tensor::new(vec![s.cout], channel_sums(gd, s.n, s.cout, out_plane)))
            .transpose()?,
    })
}

struct DeconvShape {
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    /// Unfolding of the *output* image onto the input grid.
    unfold: Unfold,
}

fn deconv_shape<T: Element>(x: &Tensor<T>, k: &Tensor<T>, g: ConvGeom) -> Result<DeconvShape> {
    const OP: &str = "deconv2d";
    let (n, cin, h, w) = x.dims4(OP)?;
    let (kcin, cout, kh, kw) = kernel_dims(OP, k)?;
    if kcin != cin {
        return Err(Error::shape(OP, format!("input has {cin} channels, kernel expects {kcin}")));
    }
    let oh = deconv_out_size(OP, h, kh, g)?;
    let ow = deconv_out_size(OP, w, kw, g)?;
    let unfold = Unfold { c: cout, h: oh, w: ow, kh, kw, stride: g.stride, pad: g.pad, oh: h, ow: w };
    Ok(DeconvShape { n, cin, cout, h, w, oh, ow, unfold })
}

pub fn deconv2d_forward<T: Element>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    b: &Tensor<T>,
    g: ConvGeom,
) -> Result<Tensor<T>> {
    let s = deconv_shape(x, k, g)?;
    check_bias("deconv2d", b, s.cout)?;
    let u = s.unfold;
    let in_plane = s.h * s.w;
    let in_per = s.cin * in_plane;
    let out_plane = s.oh * s.ow;
    let mut out = vec![T::zero(); s.n * s.cout * out_plane];
    let (xd, kd, bd) = (x.data(), k.data(), b.data());
    parallel::for_each_chunk_mut(&mut out, s.cout * out_plane, |i, o| {
        let mut cols = vec![T::zero(); u.rows() * u.cols()];
        let xi = &xd[i * in_per..(i + 1) * in_per];
        matmul(true, false, u.rows(), in_plane, s.cin, kd, xi, T::zero(), &mut cols);
        col2im(&cols, &u, o);
        add_bias(o, bd, out_plane);
    });
    Tensor::new(vec![s.n, s.cout, s.oh, s.ow], out)
}

pub fn deconv2d_backward<T: Element>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    gout: &Tensor<T>,
    g: ConvGeom,
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let s = deconv_shape(x, k, g)?;
    let u = s.unfold;
    let in_plane = s.h * s.w;
    let in_per = s.cin * in_plane;
    let out_plane = s.oh * s.ow;
    let out_per = s.cout * out_plane;
    let (xd, kd, gd) = (x.data(), k.data(), gout.data());
    let [need_x, need_k, need_b] = need;

    let per_sample: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = parallel::map_indices(s.n, |i| {
        if !need_x && !need_k {
            return (None, None);
        }
        let mut gcols = vec![T::zero(); u.rows() * u.cols()];
        im2col(&gd[i * out_per..(i + 1) * out_per], &u, &mut gcols);
        let dx = need_x.then(|| {
            let mut dx = vec![T::zero(); in_per];
            matmul(false, false, s.cin, in_plane, u.rows(), kd, &gcols, T::zero(), &mut dx);
            dx
        });
        let dk = need_k.then(|| {
            let xi = &xd[i * in_per..(i + 1) * in_per];
            let mut dk = vec![T::zero(); s.cin * u.rows()];
            matmul(false, true, s.cin, u.rows(), in_plane, xi, &gcols, T::zero(), &mut dk);
            dk
        });
        (dx, dk)
    });

    let mut dx_all = need_x.then(|| Vec::with_capacity(s.n * in_per));
    let mut dk_parts = Vec::new();
    for (dx, dk) in per_sample {
        if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
            all.extend_from_slice(&dx);
        }
        if let Some(dk) = dk {
            dk_parts.push(dk);
        }
    }
    Ok(ConvGrads {
        input: dx_all.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()?,
        kernel: need_k
            .then(|| Tensor::new(k.shape().to_vec(), sum_in_order(dk_parts, k.numel())))
            .transpose()?,
        bias: need_b
            .then(|| Tensor::new(vec![s.cout], channel_sums(gd, s.n, s.cout, out_plane)))
            .transpose()?,
    })
}
