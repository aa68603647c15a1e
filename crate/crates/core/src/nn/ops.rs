//! Layer primitives with hand-written backward passes.
//!
//! Activations are dense row-major buffers: `[batch, features]` for linear
//! layers and `[batch, channels, length]` for the convolutional path. Backward
//! functions accumulate into the gradient buffers they are handed.

use super::tensor::{Real, Tensor};
use crate::error::NnError;

const LANES: usize = 8;
pub const GROUP_NORM_EPS: f64 = 1e-5;

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
pub(crate) fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// `y[b] = W x[b] + bias` with `W: [out, in]`.
pub fn linear_forward<T: Real>(x: &[T], w: &[T], bias: &[T], in_dim: usize, out_dim: usize) -> Vec<T> {
    let batch = x.len() / in_dim;
    let mut y = Vec::with_capacity(batch * out_dim);
    for xb in x.chunks_exact(in_dim) {
        for (row, b) in w.chunks_exact(in_dim).zip(bias) {
            y.push(dot(row, xb) + *b);
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Real>(
    x: &[T],
    w: &[T],
    gy: &[T],
    in_dim: usize,
    out_dim: usize,
    gw: &mut [T],
    gb: &mut [T],
    mut gx: Option<&mut [T]>,
) {
    for (b, (xb, gyb)) in x.chunks_exact(in_dim).zip(gy.chunks_exact(out_dim)).enumerate() {
        for (o, &g) in gyb.iter().enumerate() {
            gb[o] += g;
            axpy(g, xb, &mut gw[o * in_dim..(o + 1) * in_dim]);
            if let Some(gx) = gx.as_deref_mut() {
                axpy(
                    g,
                    &w[o * in_dim..(o + 1) * in_dim],
                    &mut gx[b * in_dim..(b + 1) * in_dim],
                );
            }
        }
    }
}

/// Unfolds one sample `[c_in, len]` into `[len, c_in * kernel]` with zero padding.
fn im2col<T: Real>(x: &[T], c_in: usize, len: usize, kernel: usize, col: &mut [T]) {
    let pad = kernel / 2;
    let width = c_in * kernel;
    for l in 0..len {
        let row = &mut col[l * width..(l + 1) * width];
        for c in 0..c_in {
            for k in 0..kernel {
                let src = l + k;
                row[c * kernel + k] = if src >= pad && src - pad < len {
                    x[c * len + src - pad]
                } else {
                    T::zero()
                };
            }
        }
    }
}

/// Same-length 1D convolution, `W: [c_out, c_in, kernel]`, odd kernel.
pub fn conv1d_forward<T: Real>(
    x: &[T],
    w: &[T],
    bias: &[T],
    c_in: usize,
    c_out: usize,
    len: usize,
    kernel: usize,
) -> Vec<T> {
    let width = c_in * kernel;
    let mut col = vec![T::zero(); len * width];
    let mut y = Vec::with_capacity(x.len() / c_in * c_out);
    for xb in x.chunks_exact(c_in * len) {
        im2col(xb, c_in, len, kernel, &mut col);
        for (row, b) in w.chunks_exact(width).zip(bias) {
            for l in 0..len {
                y.push(dot(row, &col[l * width..(l + 1) * width]) + *b);
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward<T: Real>(
    x: &[T],
    w: &[T],
    gy: &[T],
    c_in: usize,
    c_out: usize,
    len: usize,
    kernel: usize,
    gw: &mut [T],
    gb: &mut [T],
    mut gx: Option<&mut [T]>,
) {
    let pad = kernel / 2;
    let width = c_in * kernel;
    let mut col = vec![T::zero(); len * width];
    let mut gcol = vec![T::zero(); len * width];
    for (b, (xb, gyb)) in x.chunks_exact(c_in * len).zip(gy.chunks_exact(c_out * len)).enumerate() {
        im2col(xb, c_in, len, kernel, &mut col);
        gcol.iter_mut().for_each(|v| *v = T::zero());
        for o in 0..c_out {
            let row = &w[o * width..(o + 1) * width];
            let grow = &mut gw[o * width..(o + 1) * width];
            for l in 0..len {
                let g = gyb[o * len + l];
                gb[o] += g;
                axpy(g, &col[l * width..(l + 1) * width], grow);
                axpy(g, row, &mut gcol[l * width..(l + 1) * width]);
            }
        }
        if let Some(gx) = gx.as_deref_mut() {
            let gxb = &mut gx[b * c_in * len..(b + 1) * c_in * len];
            for l in 0..len {
                for c in 0..c_in {
                    for k in 0..kernel {
                        let src = l + k;
                        if src >= pad && src - pad < len {
                            gxb[c * len + src - pad] += gcol[l * width + c * kernel + k];
                        }
                    }
                }
            }
        }
    }
}

/// Saved state of a group-norm forward pass.
#[derive(Debug, Clone)]
pub struct GroupNormCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

/// Group normalization without affine parameters: channels are split into
/// `groups` contiguous blocks, each normalized over (channels × length).
pub fn group_norm_forward<T: Real>(x: &[T], channels: usize, len: usize, groups: usize) -> GroupNormCache<T> {
    let span = channels / groups * len;
    let eps = T::of(GROUP_NORM_EPS);
    let n = T::of(span as f64);
    let mut xhat = Vec::with_capacity(x.len());
    let mut rstd = Vec::with_capacity(x.len() / span);
    for seg in x.chunks_exact(span) {
        let mean = seg.iter().copied().sum::<T>() / n;
        let var = seg.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
        let r = T::one() / (var + eps).sqrt();
        rstd.push(r);
        xhat.extend(seg.iter().map(|v| (*v - mean) * r));
    }
    GroupNormCache { xhat, rstd }
}

pub fn group_norm_backward<T: Real>(cache: &GroupNormCache<T>, gy: &[T], span: usize) -> Vec<T> {
    let n = T::of(span as f64);
    let mut gx = Vec::with_capacity(gy.len());
    for ((xh, g), r) in cache
        .xhat
        .chunks_exact(span)
        .zip(gy.chunks_exact(span))
        .zip(&cache.rstd)
    {
        let mean_g = g.iter().copied().sum::<T>() / n;
        let mean_gx = dot(g, xh) / n;
        gx.extend(xh.iter().zip(g).map(|(x, g)| *r * (*g - mean_g - *x * mean_gx)));
    }
    gx
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn silu_forward<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

/// Gradient of SiLU given its input `x`.
pub fn silu_backward<T: Real>(x: &[T], gy: &[T]) -> Vec<T> {
    x.iter()
        .zip(gy)
        .map(|(&v, &g)| {
            let s = sigmoid(v);
            g * s * (T::one() + v * (T::one() - s))
        })
        .collect()
}

/// Batched FiLM: `y[b,c,l] = γ[b,c] x[b,c,l] + β[b,c]`.
pub fn film_forward<T: Real>(x: &[T], gamma: &[T], beta: &[T], len: usize) -> Vec<T> {
    x.chunks_exact(len)
        .zip(gamma.iter().zip(beta))
        .flat_map(|(row, (&g, &b))| row.iter().map(move |&v| g * v + b))
        .collect()
}

/// Returns `(gx, gγ, gβ)`.
pub fn film_backward<T: Real>(x: &[T], gamma: &[T], gy: &[T], len: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut gx = Vec::with_capacity(x.len());
    let mut gg = Vec::with_capacity(gamma.len());
    let mut gb = Vec::with_capacity(gamma.len());
    for ((row, grow), &g) in x.chunks_exact(len).zip(gy.chunks_exact(len)).zip(gamma) {
        gx.extend(grow.iter().map(|v| *v * g));
        gg.push(dot(row, grow));
        gb.push(grow.iter().copied().sum());
    }
    (gx, gg, gb)
}

/// Feature-wise linear modulation of one feature map `[channels, length]`
/// by per-channel `gamma` and `beta`.
pub fn film<T: Real>(features: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (channels, len) = film_shapes(features, gamma, beta)?;
    let y = film_forward(features.data(), gamma.data(), beta.data(), len);
    Tensor::new(vec![channels, len], y)
}

/// Gradients with respect to features, γ and β.
pub type FilmGrads<T> = (Tensor<T>, Tensor<T>, Tensor<T>);

/// Gradients of [`film`] with respect to features, γ and β.
pub fn film_grad<T: Real>(
    features: &Tensor<T>,
    gamma: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<FilmGrads<T>, NnError> {
    let (channels, len) = film_shapes(features, gamma, gamma)?;
    if upstream.shape() != features.shape() {
        return Err(NnError::Shape("upstream gradient must match features".into()));
    }
    let (gx, gg, gb) = film_backward(features.data(), gamma.data(), upstream.data(), len);
    Ok((
        Tensor::new(vec![channels, len], gx)?,
        Tensor::new(vec![channels], gg)?,
        Tensor::new(vec![channels], gb)?,
    ))
}

fn film_shapes<T: Real>(features: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize), NnError> {
    let &[channels, len] = features.shape() else {
        return Err(NnError::Shape(format!(
            "features must be [channels, length], got {:?}",
            features.shape()
        )));
    };
    if gamma.shape() != [channels] || beta.shape() != [channels] {
        return Err(NnError::Shape(format!(
            "gamma {:?} and beta {:?} must be [{channels}]",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok((channels, len))
}

/// Averages adjacent pairs along length: `[.., len] -> [.., len / 2]`.
pub fn avg_pool2_forward<T: Real>(x: &[T], len: usize) -> Vec<T> {
    let half = T::of(0.5);
    x.chunks_exact(len)
        .flat_map(|row| row.chunks_exact(2).map(move |p| (p[0] + p[1]) * half))
        .collect()
}

pub fn avg_pool2_backward<T: Real>(gy: &[T], len: usize) -> Vec<T> {
    let out = len / 2;
    let half = T::of(0.5);
    let mut gx = vec![T::zero(); gy.len() / out * len];
    for (grow, gxrow) in gy.chunks_exact(out).zip(gx.chunks_exact_mut(len)) {
        for (i, &g) in grow.iter().enumerate() {
            gxrow[2 * i] = g * half;
            gxrow[2 * i + 1] = g * half;
        }
    }
    gx
}

fn upsample_source(i: usize, from: usize, to: usize) -> usize {
    i * from / to
}

/// Nearest-neighbour resize along length.
pub fn upsample_forward<T: Real>(x: &[T], from: usize, to: usize) -> Vec<T> {
    x.chunks_exact(from)
        .flat_map(|row| (0..to).map(move |i| row[upsample_source(i, from, to)]))
        .collect()
}

pub fn upsample_backward<T: Real>(gy: &[T], from: usize, to: usize) -> Vec<T> {
    let mut gx = vec![T::zero(); gy.len() / to * from];
    for (grow, gxrow) in gy.chunks_exact(to).zip(gx.chunks_exact_mut(from)) {
        for (i, &g) in grow.iter().enumerate() {
            gxrow[upsample_source(i, from, to)] += g;
        }
    }
    gx
}

/// Channel concatenation of `[B, c1, len]` and `[B, c2, len]`.
pub fn concat_channels<T: Real>(a: &[T], b: &[T], c1: usize, c2: usize, len: usize) -> Vec<T> {
    a.chunks_exact(c1 * len)
        .zip(b.chunks_exact(c2 * len))
        .flat_map(|(x, y)| x.iter().chain(y).copied())
        .collect()
}

pub fn split_channels<T: Real>(g: &[T], c1: usize, c2: usize, len: usize) -> (Vec<T>, Vec<T>) {
    let mut a = Vec::with_capacity(g.len() / (c1 + c2) * c1);
    let mut b = Vec::with_capacity(g.len() / (c1 + c2) * c2);
    for row in g.chunks_exact((c1 + c2) * len) {
        a.extend_from_slice(&row[..c1 * len]);
        b.extend_from_slice(&row[c1 * len..]);
    }
    (a, b)
}

/// Sinusoidal timestep embedding: `[sin(t f_i)..., cos(t f_i)...]`.
pub fn timestep_embedding<T: Real>(t: usize, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut out = vec![T::zero(); dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let (s, c) = (t as f64 * freq).sin_cos();
        out[i] = T::of(s);
        out[half + i] = T::of(c);
    }
    out
}
