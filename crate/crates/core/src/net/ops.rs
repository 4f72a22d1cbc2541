//! Layer kernels on `N x C x H x W` tensors with their exact backward passes.
//!
//! Convolutions lower to GEMM through an im2col buffer per sample. Backward
//! functions receive the upstream gradient `dy` and return gradients for the
//! input and any parameters.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub stride: usize,
    pub pad: (usize, usize),
}

impl ConvSpec {
    /// Size-preserving (stride 1) or exactly halving (stride 2) padding for odd kernels.
    pub fn same(kernel: (usize, usize), stride: usize) -> Self {
        ConvSpec {
            kernel,
            stride,
            pad: ((kernel.0 - 1) / 2, (kernel.1 - 1) / 2),
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad.0 - self.kernel.0) / self.stride + 1,
            (w + 2 * self.pad.1 - self.kernel.1) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == 1 && self.pad == (0, 0)
    }
}

fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, spec: &ConvSpec, cols: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let (oh, ow) = spec.output_size(h, w);
    let plane = oh * ow;
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ki) as isize - spec.pad.0 as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox * spec.stride + kj) as isize - spec.pad.1 as isize;
                        *out = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, spec: &ConvSpec, dx: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let (oh, ow) = spec.output_size(h, w);
    let plane = oh * ow;
    for ci in 0..c {
        let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ki) as isize - spec.pad.0 as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * spec.stride + kj) as isize - spec.pad.1 as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `weight` is `C_out x C_in x kh x kw`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Tensor<T> {
    let [n, c, h, w] = x.dims4();
    let cout = weight.shape()[0];
    let kdim = c * spec.kernel.0 * spec.kernel.1;
    let (oh, ow) = spec.output_size(h, w);
    let plane = oh * ow;
    let mut y = Tensor::zeros(&[n, cout, oh, ow]);
    let mut cols = if spec.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); kdim * plane]
    };
    for s in 0..n {
        let xs = x.sample(s);
        let b: &[T] = if spec.is_pointwise() {
            xs
        } else {
            im2col(xs, c, h, w, spec, &mut cols);
            &cols
        };
        let ys = y.sample_mut(s);
        T::gemm(
            cout,
            kdim,
            plane,
            T::one(),
            weight.data(),
            kdim as isize,
            1,
            b,
            plane as isize,
            1,
            T::zero(),
            ys,
            plane as isize,
            1,
        );
        if let Some(bias) = bias {
            for (o, &bv) in bias.data().iter().enumerate() {
                for v in &mut ys[o * plane..(o + 1) * plane] {
                    *v += bv;
                }
            }
        }
    }
    y
}

pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dweight: Option<Tensor<T>>,
    pub dbias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    spec: &ConvSpec,
    want_dx: bool,
    want_dweight: bool,
    want_dbias: bool,
) -> ConvGrads<T> {
    let [n, c, h, w] = x.dims4();
    let cout = weight.shape()[0];
    let kdim = c * spec.kernel.0 * spec.kernel.1;
    let (oh, ow) = spec.output_size(h, w);
    let plane = oh * ow;
    let pointwise = spec.is_pointwise();
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
    let mut dweight = want_dweight.then(|| Tensor::zeros(weight.shape()));
    let mut dbias = want_dbias.then(|| Tensor::zeros(&[cout]));
    let mut cols = vec![T::zero(); if pointwise { 0 } else { kdim * plane }];
    let mut dcols = vec![
        T::zero();
        if want_dx && !pointwise {
            kdim * plane
        } else {
            0
        }
    ];

    for s in 0..n {
        let dys = dy.sample(s);
        if let Some(dw) = dweight.as_mut() {
            let b: &[T] = if pointwise {
                x.sample(s)
            } else {
                im2col(x.sample(s), c, h, w, spec, &mut cols);
                &cols
            };
            // dW += dY * cols^T
            T::gemm(
                cout,
                plane,
                kdim,
                T::one(),
                dys,
                plane as isize,
                1,
                b,
                1,
                plane as isize,
                T::one(),
                dw.data_mut(),
                kdim as isize,
                1,
            );
        }
        if let Some(db) = dbias.as_mut() {
            for (o, acc) in db.data_mut().iter_mut().enumerate() {
                *acc += dys[o * plane..(o + 1) * plane].iter().copied().sum::<T>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            // dcols = W^T * dY
            let target: &mut [T] = if pointwise {
                dx.sample_mut(s)
            } else {
                &mut dcols
            };
            T::gemm(
                kdim,
                cout,
                plane,
                T::one(),
                weight.data(),
                1,
                kdim as isize,
                dys,
                plane as isize,
                1,
                T::zero(),
                target,
                plane as isize,
                1,
            );
            if !pointwise {
                col2im(&dcols, c, h, w, spec, dx.sample_mut(s));
            }
        }
    }
    ConvGrads { dx, dweight, dbias }
}

/// Transposed convolution with kernel equal to stride (non-overlapping
/// upsampling). `weight` is `C_in x C_out x k x k`.
pub fn conv_transpose2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
) -> Tensor<T> {
    let [n, c, h, w] = x.dims4();
    let cout = weight.shape()[1];
    let ckk = cout * stride * stride;
    let plane = h * w;
    let (oh, ow) = (h * stride, w * stride);
    let mut y = Tensor::zeros(&[n, cout, oh, ow]);
    let mut z = vec![T::zero(); ckk * plane];
    for s in 0..n {
        // Z = W^T * X, rows indexed by (o, a, b)
        T::gemm(
            ckk,
            c,
            plane,
            T::one(),
            weight.data(),
            1,
            ckk as isize,
            x.sample(s),
            plane as isize,
            1,
            T::zero(),
            &mut z,
            plane as isize,
            1,
        );
        let ys = y.sample_mut(s);
        for o in 0..cout {
            let bv = bias.map_or(T::zero(), |b| b.data()[o]);
            for a in 0..stride {
                for b in 0..stride {
                    let row = &z[((o * stride + a) * stride + b) * plane..][..plane];
                    for i in 0..h {
                        for j in 0..w {
                            ys[(o * oh + i * stride + a) * ow + j * stride + b] =
                                row[i * w + j] + bv;
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    want_dx: bool,
    want_dweight: bool,
    want_dbias: bool,
) -> ConvGrads<T> {
    let [n, c, h, w] = x.dims4();
    let cout = weight.shape()[1];
    let ckk = cout * stride * stride;
    let plane = h * w;
    let (oh, ow) = (h * stride, w * stride);
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
    let mut dweight = want_dweight.then(|| Tensor::zeros(weight.shape()));
    let mut dbias = want_dbias.then(|| Tensor::zeros(&[cout]));
    let mut dz = vec![T::zero(); ckk * plane];
    for s in 0..n {
        let dys = dy.sample(s);
        for o in 0..cout {
            for a in 0..stride {
                for b in 0..stride {
                    let row = &mut dz[((o * stride + a) * stride + b) * plane..][..plane];
                    for i in 0..h {
                        for j in 0..w {
                            row[i * w + j] = dys[(o * oh + i * stride + a) * ow + j * stride + b];
                        }
                    }
                }
            }
        }
        if let Some(db) = dbias.as_mut() {
            for (o, acc) in db.data_mut().iter_mut().enumerate() {
                *acc += dys[o * oh * ow..(o + 1) * oh * ow]
                    .iter()
                    .copied()
                    .sum::<T>();
            }
        }
        if let Some(dw) = dweight.as_mut() {
            // dW += X * dZ^T
            T::gemm(
                c,
                plane,
                ckk,
                T::one(),
                x.sample(s),
                plane as isize,
                1,
                &dz,
                1,
                plane as isize,
                T::one(),
                dw.data_mut(),
                ckk as isize,
                1,
            );
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm(
                c,
                ckk,
                plane,
                T::one(),
                weight.data(),
                ckk as isize,
                1,
                &dz,
                plane as isize,
                1,
                T::zero(),
                dx.sample_mut(s),
                plane as isize,
                1,
            );
        }
    }
    ConvGrads { dx, dweight, dbias }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl PoolSpec {
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }
}

/// Max pooling over the in-bounds part of each window. Returns the output and
/// the flat in-plane index of every selected input.
pub fn max_pool<T: Scalar>(x: &Tensor<T>, spec: &PoolSpec) -> (Tensor<T>, Vec<u32>) {
    let [n, c, h, w] = x.dims4();
    let (oh, ow) = spec.output_size(h, w);
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0u32; n * c * oh * ow];
    let xd = x.data();
    let yd = y.data_mut();
    for plane_idx in 0..n * c {
        let src = &xd[plane_idx * h * w..(plane_idx + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_at = 0usize;
                for ki in 0..spec.kernel {
                    let iy = (oy * spec.stride + ki) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kj in 0..spec.kernel {
                        let ix = (ox * spec.stride + kj) as isize - spec.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let at = iy as usize * w + ix as usize;
                        if src[at] > best {
                            best = src[at];
                            best_at = at;
                        }
                    }
                }
                let out = (plane_idx * oh + oy) * ow + ox;
                yd[out] = best;
                argmax[out] = best_at as u32;
            }
        }
    }
    (y, argmax)
}

pub fn max_pool_backward<T: Scalar>(
    input_shape: &[usize],
    dy: &Tensor<T>,
    argmax: &[u32],
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let [_, _, h, w] = dx.dims4();
    let [_, _, oh, ow] = dy.dims4();
    let dxd = dx.data_mut();
    for (out, (&g, &at)) in dy.data().iter().zip(argmax).enumerate() {
        let plane_idx = out / (oh * ow);
        dxd[plane_idx * h * w + at as usize] += g;
    }
    dx
}

/// Average pooling with zero padding; every window divides by `kernel^2`.
pub fn avg_pool<T: Scalar>(x: &Tensor<T>, spec: &PoolSpec) -> Tensor<T> {
    let [n, c, h, w] = x.dims4();
    let (oh, ow) = spec.output_size(h, w);
    let scale = T::one() / T::lit((spec.kernel * spec.kernel) as f64);
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    let xd = x.data();
    let yd = y.data_mut();
    for plane_idx in 0..n * c {
        let src = &xd[plane_idx * h * w..(plane_idx + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for_each_window(spec, h, w, oy, ox, |at| acc += src[at]);
                yd[(plane_idx * oh + oy) * ow + ox] = acc * scale;
            }
        }
    }
    y
}

pub fn avg_pool_backward<T: Scalar>(
    input_shape: &[usize],
    dy: &Tensor<T>,
    spec: &PoolSpec,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let [n, c, h, w] = dx.dims4();
    let [_, _, oh, ow] = dy.dims4();
    let scale = T::one() / T::lit((spec.kernel * spec.kernel) as f64);
    let dyd = dy.data();
    let dxd = dx.data_mut();
    for plane_idx in 0..n * c {
        let dst = &mut dxd[plane_idx * h * w..(plane_idx + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let g = dyd[(plane_idx * oh + oy) * ow + ox] * scale;
                for_each_window(spec, h, w, oy, ox, |at| dst[at] += g);
            }
        }
    }
    dx
}

fn for_each_window(
    spec: &PoolSpec,
    h: usize,
    w: usize,
    oy: usize,
    ox: usize,
    mut f: impl FnMut(usize),
) {
    for ki in 0..spec.kernel {
        let iy = (oy * spec.stride + ki) as isize - spec.pad as isize;
        if iy < 0 || iy >= h as isize {
            continue;
        }
        for kj in 0..spec.kernel {
            let ix = (ox * spec.stride + kj) as isize - spec.pad as isize;
            if ix >= 0 && ix < w as isize {
                f(iy as usize * w + ix as usize);
            }
        }
    }
}

/// Per-channel batch normalization state saved for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub batch_stats: bool,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// With `batch_stats` the statistics come from `x` (biased variance);
/// otherwise `running_mean`/`running_var` are used.
pub fn batch_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: T,
    batch_stats: bool,
) -> (Tensor<T>, BatchNormCache<T>) {
    let [n, c, h, w] = x.dims4();
    let plane = h * w;
    let count = T::lit((n * plane) as f64);
    let xd = x.data();
    let (mean, var) = if batch_stats {
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut acc = T::zero();
            for s in 0..n {
                acc += xd[(s * c + ch) * plane..][..plane]
                    .iter()
                    .copied()
                    .sum::<T>();
            }
            let m = acc / count;
            let mut sq = T::zero();
            for s in 0..n {
                for &v in &xd[(s * c + ch) * plane..][..plane] {
                    sq += (v - m) * (v - m);
                }
            }
            mean[ch] = m;
            var[ch] = sq / count;
        }
        (mean, var)
    } else {
        (running_mean.to_vec(), running_var.to_vec())
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut x_hat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    {
        let xh = x_hat.data_mut();
        let yd = y.data_mut();
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * plane;
                for i in base..base + plane {
                    let v = (xd[i] - mean[ch]) * inv_std[ch];
                    xh[i] = v;
                    yd[i] = gamma[ch] * v + beta[ch];
                }
            }
        }
    }
    (
        y,
        BatchNormCache {
            x_hat,
            inv_std,
            batch_stats,
            mean,
            var,
        },
    )
}

pub struct BatchNormGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
}

pub fn batch_norm_backward<T: Scalar>(
    dy: &Tensor<T>,
    gamma: &[T],
    cache: &BatchNormCache<T>,
    want_dx: bool,
) -> BatchNormGrads<T> {
    let [n, c, h, w] = dy.dims4();
    let plane = h * w;
    let count = T::lit((n * plane) as f64);
    let dyd = dy.data();
    let xh = cache.x_hat.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            for i in base..base + plane {
                dgamma[ch] += dyd[i] * xh[i];
                dbeta[ch] += dyd[i];
            }
        }
    }
    let dx = want_dx.then(|| {
        let mut dx = Tensor::zeros(dy.shape());
        let dxd = dx.data_mut();
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * plane;
                let k = gamma[ch] * cache.inv_std[ch];
                for i in base..base + plane {
                    dxd[i] = if cache.batch_stats {
                        k * (dyd[i] - (dbeta[ch] + xh[i] * dgamma[ch]) / count)
                    } else {
                        k * dyd[i]
                    };
                }
            }
        }
        dx
    });
    BatchNormGrads { dx, dgamma, dbeta }
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Uses the forward output: the gradient passes where the output is positive.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .map(|&v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&p, &g)| g * p * (T::one() - p))
        .collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}

/// Channel-axis concatenation.
pub fn concat<T: Scalar>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let [n, _, h, w] = parts[0].dims4();
    let c: usize = parts.iter().map(|t| t.shape()[1]).sum();
    let mut y = Tensor::zeros(&[n, c, h, w]);
    for s in 0..n {
        let ys = y.sample_mut(s);
        let mut off = 0;
        for p in parts {
            let src = p.sample(s);
            ys[off..off + src.len()].copy_from_slice(src);
            off += src.len();
        }
    }
    y
}

/// Splits a concatenation gradient back into per-part gradients.
pub fn concat_backward<T: Scalar>(dy: &Tensor<T>, channels: &[usize]) -> Vec<Tensor<T>> {
    let [n, _, h, w] = dy.dims4();
    let mut outs: Vec<Tensor<T>> = channels
        .iter()
        .map(|&c| Tensor::zeros(&[n, c, h, w]))
        .collect();
    for s in 0..n {
        let src = dy.sample(s);
        let mut off = 0;
        for out in outs.iter_mut() {
            let dst = out.sample_mut(s);
            dst.copy_from_slice(&src[off..off + dst.len()]);
            off += dst.len();
        }
    }
    outs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], f: impl Fn(usize) -> f64) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(f).collect()).unwrap()
    }

    /// Direct-summation convolution used as an independent reference.
    fn naive_conv(x: &Tensor<f64>, wt: &Tensor<f64>, spec: &ConvSpec) -> Tensor<f64> {
        let [n, c, h, w] = x.dims4();
        let [co, _, kh, kw] = wt.dims4();
        let (oh, ow) = spec.output_size(h, w);
        let mut y = Tensor::zeros(&[n, co, oh, ow]);
        for s in 0..n {
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (oy * spec.stride + i) as isize - spec.pad.0 as isize;
                                    let ix = (ox * spec.stride + j) as isize - spec.pad.1 as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w
                                    {
                                        acc += x.data()
                                            [((s * c + ci) * h + iy as usize) * w + ix as usize]
                                            * wt.data()[((o * c + ci) * kh + i) * kw + j];
                                    }
                                }
                            }
                        }
                        y.data_mut()[((s * co + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_summation() {
        let x = t(&[2, 3, 6, 5], |i| ((i * 7) % 11) as f64 - 5.0);
        for (kernel, stride) in [
            ((3, 3), 1),
            ((3, 3), 2),
            ((1, 7), 1),
            ((7, 1), 1),
            ((1, 1), 1),
            ((5, 5), 1),
        ] {
            let wt = t(&[4, 3, kernel.0, kernel.1], |i| {
                ((i * 5) % 7) as f64 * 0.1 - 0.3
            });
            let spec = ConvSpec::same(kernel, stride);
            let got = conv2d(&x, &wt, None, &spec);
            let want = naive_conv(&x, &wt, &spec);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-9, "{kernel:?}/{stride}");
            }
        }
    }

    #[test]
    fn stride_two_halves_even_sizes() {
        let spec = ConvSpec::same((3, 3), 2);
        assert_eq!(spec.output_size(64, 32), (32, 16));
        let pool = PoolSpec {
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        assert_eq!(pool.output_size(8, 2), (4, 1));
    }

    #[test]
    fn transposed_conv_scatters_kernel() {
        let x = t(&[1, 1, 1, 2], |i| (i + 1) as f64);
        let wt = t(&[1, 1, 2, 2], |i| i as f64);
        let y = conv_transpose2d(&x, &wt, Some(&t(&[1], |_| 0.5)), 2);
        assert_eq!(y.shape(), &[1, 1, 2, 4]);
        assert_eq!(y.data(), &[0.5, 1.5, 0.5, 2.5, 2.5, 3.5, 4.5, 6.5]);
    }

    #[test]
    fn max_pool_ignores_padding() {
        let x = t(&[1, 1, 2, 2], |i| -(i as f64) - 1.0);
        let (y, _) = max_pool(
            &x,
            &PoolSpec {
                kernel: 3,
                stride: 2,
                pad: 1,
            },
        );
        assert_eq!(y.data(), &[-1.0]);
    }

    #[test]
    fn avg_pool_counts_padding() {
        let x = t(&[1, 1, 1, 1], |_| 9.0);
        let y = avg_pool(
            &x,
            &PoolSpec {
                kernel: 3,
                stride: 1,
                pad: 1,
            },
        );
        assert_eq!(y.data(), &[1.0]);
    }

    #[test]
    fn concat_roundtrips_through_backward() {
        let a = t(&[2, 1, 2, 2], |i| i as f64);
        let b = t(&[2, 2, 2, 2], |i| 100.0 + i as f64);
        let y = concat(&[&a, &b]);
        let parts = concat_backward(&y, &[1, 2]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn sigmoid_is_stable_and_in_range() {
        let x = t(&[1, 1, 1, 4], |i| [-800.0, -20.0, 0.0, 30.0][i]);
        let y = sigmoid(&x);
        assert_eq!(y.data()[2], 0.5);
        assert!(y
            .data()
            .iter()
            .all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }
}
