//! Forward kernels and their adjoints.
//!
//! The public functions here are pure and allocation-returning. The tape in
//! [`crate::tape`] records them and calls the `*_backward` helpers.

use crate::error::{arg_err, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Normalization epsilon for instance norm and AdaIN.
pub const NORM_EPS: f64 = 1e-5;

/// Slope of the discriminator's leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            padding,
            has_bias: true,
        }
    }

    /// Stride-1 convolution that preserves spatial size (odd kernels only).
    pub fn same(in_channels: usize, out_channels: usize, kernel_size: usize) -> Self {
        Self::new(in_channels, out_channels, kernel_size, 1, kernel_size / 2)
    }

    /// 4×4 stride-2 pad-1 convolution, halving even spatial sizes.
    pub fn down(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, 4, 2, 1)
    }

    pub fn without_bias(mut self) -> Self {
        self.has_bias = false;
        self
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel_size,
            self.kernel_size,
        ]
    }

    pub fn bias_shape(&self) -> [usize; 4] {
        [1, self.out_channels, 1, 1]
    }

    pub fn output_size(&self, input: usize) -> Result<usize> {
        let padded = input + 2 * self.padding;
        if self.stride == 0 || self.kernel_size == 0 || padded < self.kernel_size {
            return Err(shape_err(
                "conv2d",
                format!(
                    "input size {input} too small for kernel {} with padding {}",
                    self.kernel_size, self.padding
                ),
            ));
        }
        Ok((padded - self.kernel_size) / self.stride + 1)
    }

    pub fn validate(
        &self,
        x: [usize; 4],
        w: [usize; 4],
        bias: Option<[usize; 4]>,
    ) -> Result<[usize; 4]> {
        if x[1] != self.in_channels {
            return Err(shape_err(
                "conv2d",
                format!(
                    "input has {} channels, spec expects {}",
                    x[1], self.in_channels
                ),
            ));
        }
        if w != self.weight_shape() {
            return Err(shape_err(
                "conv2d",
                format!("weights {w:?}, spec expects {:?}", self.weight_shape()),
            ));
        }
        match (self.has_bias, bias) {
            (true, Some(b)) if b != self.bias_shape() => {
                return Err(shape_err(
                    "conv2d",
                    format!("bias {b:?}, expected {:?}", self.bias_shape()),
                ));
            }
            (true, None) => return Err(shape_err("conv2d", "spec has a bias but none was given")),
            (false, Some(_)) => return Err(shape_err("conv2d", "bias given for a bias-free spec")),
            _ => {}
        }
        Ok([
            x[0],
            self.out_channels,
            self.output_size(x[2])?,
            self.output_size(x[3])?,
        ])
    }
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let p = g.ho * g.wo;
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let out = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut out[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &Geometry, dx: &mut [T]) {
    let p = g.ho * g.wo;
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn geometry(x: [usize; 4], spec: &ConvSpec, out: [usize; 4]) -> Geometry {
    Geometry {
        c: x[1],
        h: x[2],
        w: x[3],
        k: spec.kernel_size,
        stride: spec.stride,
        pad: spec.padding,
        ho: out[2],
        wo: out[3],
    }
}

/// Cross-correlation with zero padding. Returns the output and the per-batch
/// im2col buffers (kept by the tape for the backward pass).
pub(crate) fn conv2d_with_cols<T: Scalar>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<(Tensor<T>, Vec<T>)> {
    let out_shape = spec.validate(x.shape(), w.shape(), bias.map(|b| b.shape()))?;
    let g = geometry(x.shape(), spec, out_shape);
    let kk = g.c * g.k * g.k;
    let p = g.ho * g.wo;
    let cout = spec.out_channels;
    let in_len = g.c * g.h * g.w;
    let mut cols = vec![T::zero(); x.batch() * kk * p];
    let mut out = Tensor::zeros(out_shape);
    for b in 0..x.batch() {
        let col = &mut cols[b * kk * p..(b + 1) * kk * p];
        im2col(&x.data()[b * in_len..(b + 1) * in_len], &g, col);
        let o = &mut out.data_mut()[b * cout * p..(b + 1) * cout * p];
        T::gemm(cout, kk, p, w.data(), false, col, false, o, false);
        if let Some(bias) = bias {
            for (oc, plane) in o.chunks_mut(p).enumerate() {
                let bv = bias.data()[oc];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok((out, cols))
}

pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    conv2d_with_cols(x, spec, weights, bias).map(|(y, _)| y)
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Option<Tensor<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    x_shape: [usize; 4],
    spec: &ConvSpec,
    w: &Tensor<T>,
    cols: &[T],
    grad: &Tensor<T>,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads<T> {
    let g = geometry(x_shape, spec, grad.shape());
    let kk = g.c * g.k * g.k;
    let p = g.ho * g.wo;
    let cout = spec.out_channels;
    let in_len = g.c * g.h * g.w;
    let mut dw = need_dw.then(|| Tensor::zeros(w.shape()));
    let mut db = (need_db && spec.has_bias).then(|| Tensor::zeros(spec.bias_shape()));
    let mut dx = need_dx.then(|| Tensor::zeros(x_shape));
    let mut dcol = if need_dx {
        vec![T::zero(); kk * p]
    } else {
        Vec::new()
    };
    for b in 0..x_shape[0] {
        let gy = &grad.data()[b * cout * p..(b + 1) * cout * p];
        if let Some(dw) = dw.as_mut() {
            let col = &cols[b * kk * p..(b + 1) * kk * p];
            T::gemm(cout, p, kk, gy, false, col, true, dw.data_mut(), true);
        }
        if let Some(db) = db.as_mut() {
            for (oc, plane) in gy.chunks(p).enumerate() {
                db.data_mut()[oc] += plane.iter().copied().sum::<T>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm(kk, cout, p, w.data(), true, gy, false, &mut dcol, false);
            col2im(&dcol, &g, &mut dx.data_mut()[b * in_len..(b + 1) * in_len]);
        }
    }
    ConvGrads { dx, dw, db }
}

/// Per-`(batch, channel)` standardization with population variance.
/// Returns the normalized tensor and `1/sqrt(var + eps)` per plane.
pub(crate) fn instance_norm_with_stats<T: Scalar>(x: &Tensor<T>, eps: T) -> (Tensor<T>, Vec<T>) {
    let p = x.plane();
    let n = T::from_usize(p).unwrap();
    let mut out = x.clone();
    let mut inv_stds = Vec::with_capacity(x.batch() * x.channels());
    for plane in out.data_mut().chunks_mut(p) {
        let mean = plane.iter().copied().sum::<T>() / n;
        let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv = T::one() / (var + eps).sqrt();
        plane.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        inv_stds.push(inv);
    }
    (out, inv_stds)
}

pub fn instance_norm<T: Scalar>(x: &Tensor<T>, eps: T) -> Tensor<T> {
    instance_norm_with_stats(x, eps).0
}

pub(crate) fn instance_norm_backward<T: Scalar>(
    xhat: &Tensor<T>,
    inv_stds: &[T],
    grad: &Tensor<T>,
) -> Tensor<T> {
    let p = xhat.plane();
    let n = T::from_usize(p).unwrap();
    let mut dx = Tensor::zeros(xhat.shape());
    for (((dxp, gp), xp), &inv) in dx
        .data_mut()
        .chunks_mut(p)
        .zip(grad.data().chunks(p))
        .zip(xhat.data().chunks(p))
        .zip(inv_stds)
    {
        let sg: T = gp.iter().copied().sum();
        let sgx: T = gp.iter().zip(xp).map(|(&g, &x)| g * x).sum();
        for ((d, &g), &x) in dxp.iter_mut().zip(gp).zip(xp) {
            *d = inv * (g - (sg + x * sgx) / n);
        }
    }
    dx
}

/// Per-channel affine parameters for AdaIN.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineStats<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

fn check_affine(x: [usize; 4], gamma: [usize; 4], beta: [usize; 4]) -> Result<()> {
    let ok = |s: [usize; 4]| (s[0] == 1 || s[0] == x[0]) && s[1] == x[1] && s[2] == 1 && s[3] == 1;
    if gamma != beta || !ok(gamma) {
        return Err(shape_err(
            "channel_affine",
            format!("gamma {gamma:?} / beta {beta:?} do not condition input {x:?}"),
        ));
    }
    Ok(())
}

/// `gamma[c] * x + beta[c]` with `gamma, beta` shaped `(1|B, C, 1, 1)`.
pub fn channel_affine<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_affine(x.shape(), gamma.shape(), beta.shape())?;
    let p = x.plane();
    let c = x.channels();
    let per_batch = gamma.batch() != 1;
    let mut out = x.clone();
    for (i, plane) in out.data_mut().chunks_mut(p).enumerate() {
        let (b, ch) = (i / c, i % c);
        let k = if per_batch { b * c + ch } else { ch };
        let (g, bt) = (gamma.data()[k], beta.data()[k]);
        plane.iter_mut().for_each(|v| *v = g * *v + bt);
    }
    Ok(out)
}

pub(crate) fn channel_affine_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let p = x.plane();
    let c = x.channels();
    let per_batch = gamma.batch() != 1;
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = Tensor::zeros(gamma.shape());
    let mut dbeta = Tensor::zeros(gamma.shape());
    for (i, ((dxp, gp), xp)) in dx
        .data_mut()
        .chunks_mut(p)
        .zip(grad.data().chunks(p))
        .zip(x.data().chunks(p))
        .enumerate()
    {
        let (b, ch) = (i / c, i % c);
        let k = if per_batch { b * c + ch } else { ch };
        let gm = gamma.data()[k];
        let mut sg = T::zero();
        let mut sgx = T::zero();
        for ((d, &g), &xv) in dxp.iter_mut().zip(gp).zip(xp) {
            *d = gm * g;
            sg += g;
            sgx += g * xv;
        }
        dgamma.data_mut()[k] += sgx;
        dbeta.data_mut()[k] += sg;
    }
    (dx, dgamma, dbeta)
}

/// `AdaIN(z, γ, β) = γ · (z − μ(z)) / σ(z) + β`, per `(batch, channel)`.
pub fn adain<T: Scalar>(x: &Tensor<T>, stats: &AffineStats<T>, eps: T) -> Result<Tensor<T>> {
    if stats.gamma.len() != x.channels() || stats.beta.len() != x.channels() {
        return Err(shape_err(
            "adain",
            format!(
                "gamma/beta lengths {}/{} differ from channel count {}",
                stats.gamma.len(),
                stats.beta.len(),
                x.channels()
            ),
        ));
    }
    let gamma = Tensor::vector(stats.gamma.clone())?;
    let beta = Tensor::vector(stats.beta.clone())?;
    channel_affine(&instance_norm(x, eps), &gamma, &beta)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    // `max` would turn NaN into zero.
    x.map(|v| if v < T::zero() { T::zero() } else { v })
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { slope * v })
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

pub fn nearest_upsample2x<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
    let (src, dst) = (x.data(), out.data_mut());
    for plane in 0..n * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        let d = &mut dst[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                d[y * 2 * w + xx] = s[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub(crate) fn nearest_upsample2x_backward<T: Scalar>(grad: &Tensor<T>) -> Tensor<T> {
    let [n, c, h2, w2] = grad.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros([n, c, h, w]);
    let (src, dst) = (grad.data(), dx.data_mut());
    for plane in 0..n * c {
        let s = &src[plane * h2 * w2..(plane + 1) * h2 * w2];
        let d = &mut dst[plane * h * w..(plane + 1) * h * w];
        for y in 0..h2 {
            for xx in 0..w2 {
                d[(y / 2) * w + xx / 2] += s[y * w2 + xx];
            }
        }
    }
    dx
}

/// 2×2 non-overlapping mean pooling.
pub fn downsample_avg2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2 {
        return Err(shape_err(
            "downsample_avg2x",
            format!("spatial size {h}x{w} is not even"),
        ));
    }
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::from_f64c(0.25);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let (src, dst) = (x.data(), out.data_mut());
    for plane in 0..n * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        let d = &mut dst[plane * ho * wo..(plane + 1) * ho * wo];
        for y in 0..ho {
            for xx in 0..wo {
                let a = s[2 * y * w + 2 * xx] + s[2 * y * w + 2 * xx + 1];
                let b = s[(2 * y + 1) * w + 2 * xx] + s[(2 * y + 1) * w + 2 * xx + 1];
                d[y * wo + xx] = (a + b) * quarter;
            }
        }
    }
    Ok(out)
}

pub(crate) fn downsample_avg2x_backward<T: Scalar>(grad: &Tensor<T>) -> Tensor<T> {
    let quarter = T::from_f64c(0.25);
    let up = nearest_upsample2x(grad);
    up.map(|v| v * quarter)
}

/// Spatial mean per channel, shaped `(B, C, 1, 1)`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let p = x.plane();
    let n = T::from_usize(p).unwrap();
    let data = x
        .data()
        .chunks(p)
        .map(|c| c.iter().copied().sum::<T>() / n)
        .collect();
    Tensor::from_vec([x.batch(), x.channels(), 1, 1], data).expect("pool shape")
}

fn check_linear(x: [usize; 4], w: [usize; 4], b: Option<[usize; 4]>) -> Result<()> {
    if x[2] != 1 || x[3] != 1 || w[2] != 1 || w[3] != 1 || w[1] != x[1] {
        return Err(shape_err(
            "fully_connected",
            format!("input {x:?} vs weights {w:?}"),
        ));
    }
    if let Some(b) = b {
        if b != [1, w[0], 1, 1] {
            return Err(shape_err(
                "fully_connected",
                format!("bias {b:?} for {} outputs", w[0]),
            ));
        }
    }
    Ok(())
}

/// `y = W v + b` with `v: (B, in, 1, 1)`, `W: (out, in, 1, 1)`, `b: (1, out, 1, 1)`.
pub fn fully_connected<T: Scalar>(
    v: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    check_linear(v.shape(), w.shape(), b.map(|t| t.shape()))?;
    let (batch, fin, fout) = (v.batch(), v.channels(), w.batch());
    let mut out = Tensor::zeros([batch, fout, 1, 1]);
    T::gemm(
        batch,
        fin,
        fout,
        v.data(),
        false,
        w.data(),
        true,
        out.data_mut(),
        false,
    );
    if let Some(b) = b {
        for row in out.data_mut().chunks_mut(fout) {
            for (o, &bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
    }
    Ok(out)
}

pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| arg_err("concat_channels", "no inputs"))?
        .shape();
    for p in parts {
        let s = p.shape();
        if s[0] != first[0] || s[2] != first[2] || s[3] != first[3] {
            return Err(shape_err("concat_channels", format!("{s:?} vs {first:?}")));
        }
    }
    let c: usize = parts.iter().map(|p| p.channels()).sum();
    let plane = first[2] * first[3];
    let mut data = Vec::with_capacity(first[0] * c * plane);
    for b in 0..first[0] {
        for p in parts {
            let len = p.channels() * plane;
            data.extend_from_slice(&p.data()[b * len..(b + 1) * len]);
        }
    }
    Tensor::from_vec([first[0], c, first[2], first[3]], data)
}

pub fn slice_channels<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    if len == 0 || start + len > c {
        return Err(shape_err(
            "slice_channels",
            format!("[{start}, {}) out of {c} channels", start + len),
        ));
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * len * plane);
    for b in 0..n {
        let base = (b * c + start) * plane;
        data.extend_from_slice(&x.data()[base..base + len * plane]);
    }
    Tensor::from_vec([n, len, h, w], data)
}

/// Softmax across channels at every pixel.
pub fn softmax_channels<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let mut out = x.clone();
    let d = out.data_mut();
    for b in 0..n {
        for p in 0..plane {
            let idx = |ch: usize| (b * c + ch) * plane + p;
            let m = (0..c).map(|ch| d[idx(ch)]).fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for ch in 0..c {
                let e = (d[idx(ch)] - m).exp();
                d[idx(ch)] = e;
                s += e;
            }
            for ch in 0..c {
                d[idx(ch)] /= s;
            }
        }
    }
    out
}

pub(crate) fn softmax_channels_backward<T: Scalar>(y: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = y.shape();
    let plane = h * w;
    let mut dx = Tensor::zeros(y.shape());
    let (yd, gd) = (y.data(), grad.data());
    let out = dx.data_mut();
    for b in 0..n {
        for p in 0..plane {
            let idx = |ch: usize| (b * c + ch) * plane + p;
            let dot: T = (0..c).map(|ch| yd[idx(ch)] * gd[idx(ch)]).sum();
            for ch in 0..c {
                out[idx(ch)] = yd[idx(ch)] * (gd[idx(ch)] - dot);
            }
        }
    }
    dx
}

/// Mean absolute difference over all elements.
pub fn l1_mean<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    a.expect_same_shape(b, "l1_mean")?;
    let s: T = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).abs())
        .sum();
    Ok(s / T::from_usize(a.len()).unwrap())
}

/// Mean of `(x - target)^2`.
pub fn sq_err_mean<T: Scalar>(x: &Tensor<T>, target: T) -> T {
    let s: T = x.data().iter().map(|&v| (v - target) * (v - target)).sum();
    s / T::from_usize(x.len()).unwrap()
}

/// Soft Dice loss `1 − (1/L) Σ_l 2 Σ_p ŷy / (Σ_p ŷ² + Σ_p y² + ε)` with `L` = channel count.
pub fn dice_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, eps: T) -> Result<T> {
    pred.expect_same_shape(target, "dice_loss")?;
    let terms = dice_terms(pred, target);
    let l = T::from_usize(pred.channels()).unwrap();
    let two = T::from_f64c(2.0);
    let s: T = terms.iter().map(|&(a, s)| two * a / (s + eps)).sum();
    Ok(T::one() - s / l)
}

/// Per-class `(Σ ŷy, Σ ŷ² + Σ y²)` summed over batch and pixels.
pub(crate) fn dice_terms<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Vec<(T, T)> {
    let [n, c, _, _] = pred.shape();
    let mut terms = vec![(T::zero(), T::zero()); c];
    for b in 0..n {
        for (l, term) in terms.iter_mut().enumerate() {
            for (&p, &t) in pred.channel(b, l).iter().zip(target.channel(b, l)) {
                term.0 += p * t;
                term.1 += p * p + t * t;
            }
        }
    }
    terms
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: [usize; 4], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn conv_output_size_formula() {
        let s = ConvSpec::new(1, 1, 3, 2, 1);
        assert_eq!(s.output_size(4).unwrap(), 2);
        assert_eq!(ConvSpec::same(3, 8, 7).output_size(32).unwrap(), 32);
        assert_eq!(ConvSpec::down(3, 8).output_size(32).unwrap(), 16);
        assert!(ConvSpec::new(1, 1, 5, 1, 0).output_size(3).is_err());
    }

    #[test]
    fn conv_identity_kernel() {
        let x = t([1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let spec = ConvSpec::new(1, 1, 1, 1, 0).without_bias();
        let w = t([1, 1, 1, 1], &[1.0]);
        assert_eq!(conv2d(&x, &spec, &w, None).unwrap(), x);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::<f64>::zeros([1, 2, 4, 4]);
        let spec = ConvSpec::same(3, 1, 3);
        let w = Tensor::zeros(spec.weight_shape());
        let b = Tensor::zeros(spec.bias_shape());
        let err = conv2d(&x, &spec, &w, Some(&b)).unwrap_err();
        assert!(err.to_string().contains("channels"), "{err}");
    }

    #[test]
    fn instance_norm_zero_variance_is_zero() {
        let x = Tensor::<f64>::full([1, 1, 3, 3], 5.0);
        assert!(instance_norm(&x, 1e-5).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn instance_norm_keeps_symmetric_pair() {
        let x = t([1, 1, 1, 2], &[-1.0, 1.0]);
        let y = instance_norm(&x, 1e-5);
        assert!((y.data()[0] + 1.0).abs() < 1e-5 && (y.data()[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn adain_constant_channel_maps_to_beta() {
        let x = Tensor::<f64>::full([1, 2, 2, 2], 3.0);
        let stats = AffineStats {
            gamma: vec![4.0, -2.0],
            beta: vec![0.5, -7.0],
        };
        let y = adain(&x, &stats, 1e-5).unwrap();
        assert!(y.channel(0, 0).iter().all(|&v| v == 0.5));
        assert!(y.channel(0, 1).iter().all(|&v| v == -7.0));
    }

    #[test]
    fn adain_identity_affine_is_instance_norm() {
        let x = Tensor::<f64>::from_fn([1, 2, 3, 3], |[_, c, y, x]| {
            ((c * 9 + y * 3 + x) as f64).sin()
        });
        let stats = AffineStats {
            gamma: vec![1.0; 2],
            beta: vec![0.0; 2],
        };
        assert_eq!(adain(&x, &stats, 1e-5).unwrap(), instance_norm(&x, 1e-5));
    }

    #[test]
    fn adain_length_mismatch_rejected() {
        let x = Tensor::<f64>::zeros([1, 2, 2, 2]);
        let stats = AffineStats {
            gamma: vec![1.0; 3],
            beta: vec![0.0; 3],
        };
        assert!(adain(&x, &stats, 1e-5).is_err());
    }

    #[test]
    fn activations_keep_nan() {
        let x = t([1, 1, 1, 3], &[f64::NAN, -1.0, 2.0]);
        let y = relu(&x);
        assert!(y.data()[0].is_nan());
        assert_eq!(&y.data()[1..], &[0.0, 2.0]);
        assert!(leaky_relu(&x, LEAKY_SLOPE).data()[0].is_nan());
    }

    #[test]
    fn leaky_relu_values() {
        let x = t([1, 1, 1, 3], &[2.0, -1.0, 0.0]);
        let y = leaky_relu(&x, LEAKY_SLOPE);
        assert_eq!(y.data()[0], 2.0);
        assert!((y.data()[1] + 0.2).abs() < 1e-15);
        assert_eq!(y.data()[2], 0.0);
    }

    #[test]
    fn upsample_replicates_blocks() {
        let one = t([1, 1, 1, 1], &[7.0]);
        assert_eq!(nearest_upsample2x(&one), Tensor::full([1, 1, 2, 2], 7.0));
        let x = t([1, 1, 2, 2], &[1., 2., 3., 4.]);
        let want = t(
            [1, 1, 4, 4],
            &[
                1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.,
            ],
        );
        assert_eq!(nearest_upsample2x(&x), want);
    }

    #[test]
    fn avg_pool_values_and_errors() {
        let x = t([1, 1, 2, 2], &[1., 2., 3., 4.]);
        assert_eq!(downsample_avg2x(&x).unwrap().data(), &[2.5]);
        let c = Tensor::<f64>::full([1, 1, 4, 6], 3.0);
        assert_eq!(
            downsample_avg2x(&c).unwrap(),
            Tensor::full([1, 1, 2, 3], 3.0)
        );
        assert!(downsample_avg2x(&Tensor::<f64>::zeros([1, 1, 3, 4])).is_err());
    }

    #[test]
    fn pool_and_fc_trivial_cases() {
        let x = Tensor::<f64>::full([1, 3, 4, 4], 2.5);
        assert_eq!(global_avg_pool(&x).data(), &[2.5, 2.5, 2.5]);
        let v = t([1, 3, 1, 1], &[1.0, -2.0, 3.0]);
        let eye = Tensor::from_fn([3, 3, 1, 1], |[o, i, _, _]| if o == i { 1.0 } else { 0.0 });
        let zero = Tensor::zeros([1, 3, 1, 1]);
        assert_eq!(fully_connected(&v, &eye, Some(&zero)).unwrap(), v);
        assert!(fully_connected(&v, &Tensor::zeros([3, 2, 1, 1]), None).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let x = Tensor::<f64>::from_fn([2, 3, 2, 2], |[b, c, y, x]| {
            (b + 2 * c + y) as f64 - x as f64 * 0.3
        });
        let y = softmax_channels(&x);
        for b in 0..2 {
            for p in 0..4 {
                let s: f64 = (0..3).map(|c| y.channel(b, c)[p]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let a = Tensor::<f64>::from_fn([2, 2, 2, 2], |[b, c, y, x]| {
            (b * 8 + c * 4 + y * 2 + x) as f64
        });
        let b = Tensor::<f64>::from_fn([2, 1, 2, 2], |[b, _, y, x]| -((b * 4 + y * 2 + x) as f64));
        let cat = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), [2, 3, 2, 2]);
        assert_eq!(slice_channels(&cat, 0, 2).unwrap(), a);
        assert_eq!(slice_channels(&cat, 2, 1).unwrap(), b);
        assert!(slice_channels(&cat, 2, 2).is_err());
    }

    #[test]
    fn dice_loss_hand_case() {
        let pred = t([1, 1, 2, 2], &[1., 1., 0., 0.]);
        let target = t([1, 1, 2, 2], &[1., 0., 0., 0.]);
        let loss = dice_loss(&pred, &target, 0.0).unwrap();
        assert!((loss - 1.0 / 3.0).abs() < 1e-12);
    }
}
