//! Numeric kernels behind the autograd tape, usable directly on tensors.

mod conv;
mod norm;
mod pool;

pub use conv::{conv2d, ConvGeometry, Padding};
pub use norm::{
    batchnorm2d, BatchNormState, BnReport, Mode, MovingStats, DEFAULT_EPSILON, DEFAULT_MOMENTUM,
};
pub use pool::{global_pool, maxpool2d, upsample_nearest, PoolMode};

pub(crate) use conv::{conv2d_backward, conv2d_forward};
pub(crate) use norm::{bn_backward, bn_forward, BnCache};
pub(crate) use pool::{global_pool_forward, maxpool_forward, scatter_argmax};

use crate::error::{shape_err, Result};
use crate::tensor::{cst, Element, Tensor};

/// Probability clamp applied before taking logarithms in the BCE loss.
pub const BCE_EPSILON: f64 = 1e-7;

/// Channels of `a` followed by channels of `b`.
pub fn concat_channels<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, ca, h, w) = a.dims4()?;
    let (nb, cb, hb, wb) = b.dims4()?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(shape_err!(
            "concat_channels needs equal N,H,W: {:?} vs {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let (pa, pb) = (ca * h * w, cb * h * w);
    let mut out = Vec::with_capacity(n * (pa + pb));
    for ni in 0..n {
        out.extend_from_slice(&a.data()[ni * pa..(ni + 1) * pa]);
        out.extend_from_slice(&b.data()[ni * pb..(ni + 1) * pb]);
    }
    Tensor::new([n, ca + cb, h, w], out)
}

/// Inverse of [`concat_channels`]: the first `first` channels and the rest.
pub fn split_channels<T: Element>(x: &Tensor<T>, first: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = x.dims4()?;
    if first > c {
        return Err(shape_err!("cannot split {first} channels off {c}"));
    }
    let (pa, pb) = (first * h * w, (c - first) * h * w);
    let mut a = Vec::with_capacity(n * pa);
    let mut b = Vec::with_capacity(n * pb);
    for chunk in x.data().chunks_exact(pa + pb) {
        a.extend_from_slice(&chunk[..pa]);
        b.extend_from_slice(&chunk[pa..]);
    }
    Ok((
        Tensor::new([n, first, h, w], a)?,
        Tensor::new([n, c - first, h, w], b)?,
    ))
}

/// Affine map `[N,D]·[D,U] + [U]`.
pub fn dense<T: Element>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let out = dense_forward(input.shape(), input.data(), weights.shape(), weights.data(), bias.data())?;
    Tensor::new([input.shape()[0], weights.shape()[1]], out)
}

pub(crate) fn dense_forward<T: Element>(
    x_shape: &[usize],
    x: &[T],
    w_shape: &[usize],
    w: &[T],
    b: &[T],
) -> Result<Vec<T>> {
    let (n, d) = match *x_shape {
        [n, d] => (n, d),
        _ => return Err(shape_err!("dense input must be [N,D], got {x_shape:?}")),
    };
    let (wd, u) = match *w_shape {
        [wd, u] => (wd, u),
        _ => return Err(shape_err!("dense weights must be [D,U], got {w_shape:?}")),
    };
    if wd != d || b.len() != u {
        return Err(shape_err!(
            "dense: input width {d}, weights {w_shape:?}, bias {}",
            b.len()
        ));
    }
    let mut out = Vec::with_capacity(n * u);
    for _ in 0..n {
        out.extend_from_slice(b);
    }
    T::gemm(n, d, u, T::one(), x, (d as isize, 1), w, (u as isize, 1), T::one(), &mut out, (u as isize, 1));
    Ok(out)
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

#[inline]
pub fn sigmoid_scalar<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Binary cross-entropy of one clamped probability.
#[inline]
pub fn bce_term<T: Element>(p: T, y: T) -> T {
    let eps = cst::<T>(BCE_EPSILON);
    let p = p.max(eps).min(T::one() - eps);
    -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
}

/// Sigmoid probabilities and mean BCE of `[N,1]` logits against binary labels.
pub fn sigmoid_bce<T: Element>(logits: &Tensor<T>, labels: &Tensor<T>) -> Result<(Tensor<T>, T)> {
    if logits.shape() != labels.shape() {
        return Err(shape_err!(
            "logits {:?} and labels {:?} differ",
            logits.shape(),
            labels.shape()
        ));
    }
    if labels.data().iter().any(|&y| y != T::zero() && y != T::one()) {
        return Err(crate::Error::Argument("labels must be 0 or 1".into()));
    }
    let probs = sigmoid(logits);
    let n = cst::<T>(probs.len().max(1) as f64);
    let loss = probs
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&p, &y)| bce_term(p, y))
        .sum::<T>()
        / n;
    Ok((probs, loss))
}
