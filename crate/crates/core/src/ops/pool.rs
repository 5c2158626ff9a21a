use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::{cst, Element, Tensor};

/// Spatial reduction used by global pooling heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Avg,
    Max,
}

/// Non-overlapping max pooling. Returns the pooled values and, per output
/// cell, the flat input index that won (first in row-major order on ties).
pub(crate) fn maxpool_forward<T: Element>(
    shape: &[usize],
    x: &[T],
    pool: usize,
) -> Result<(Vec<usize>, Vec<T>, Vec<u32>)> {
    let (n, c, h, w) = match *shape {
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(shape_err!("maxpool2d input must be [N,C,H,W], got {shape:?}")),
    };
    if pool == 0 {
        return Err(crate::Error::Argument("pool size must be positive".into()));
    }
    if h % pool != 0 || w % pool != 0 {
        return Err(shape_err!("{h}x{w} is not divisible by pool size {pool}"));
    }
    let (oh, ow) = (h / pool, w / pool);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(out.capacity());
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_i = base + oy * pool * w + ox * pool;
                let mut best = x[best_i];
                for dy in 0..pool {
                    let row = base + (oy * pool + dy) * w + ox * pool;
                    for dx in 0..pool {
                        let v = x[row + dx];
                        if v > best {
                            best = v;
                            best_i = row + dx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i as u32);
            }
        }
    }
    Ok((vec![n, c, oh, ow], out, arg))
}

pub(crate) fn scatter_argmax<T: Element>(input_len: usize, argmax: &[u32], dy: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&i, &g) in argmax.iter().zip(dy) {
        dx[i as usize] = dx[i as usize] + g;
    }
    dx
}

pub fn maxpool2d<T: Element>(input: &Tensor<T>, pool: usize) -> Result<Tensor<T>> {
    let (shape, out, _) = maxpool_forward(input.shape(), input.data(), pool)?;
    Tensor::new(shape, out)
}

/// `[N,C,H,W] -> [N,C]`; argmax indices are returned for max mode.
pub(crate) fn global_pool_forward<T: Element>(
    shape: &[usize],
    x: &[T],
    mode: PoolMode,
) -> Result<(Vec<T>, Option<Vec<u32>>)> {
    let (n, c, h, w) = match *shape {
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(shape_err!("global pool input must be [N,C,H,W], got {shape:?}")),
    };
    if h == 0 || w == 0 {
        return Err(shape_err!("global pool needs a non-empty spatial extent"));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * c);
    match mode {
        PoolMode::Avg => {
            let inv = cst::<T>(1.0 / hw as f64);
            for plane in x.chunks_exact(hw) {
                out.push(plane.iter().copied().sum::<T>() * inv);
            }
            Ok((out, None))
        }
        PoolMode::Max => {
            let mut arg = Vec::with_capacity(n * c);
            for (p, plane) in x.chunks_exact(hw).enumerate() {
                let mut bi = 0;
                for (i, &v) in plane.iter().enumerate() {
                    if v > plane[bi] {
                        bi = i;
                    }
                }
                out.push(plane[bi]);
                arg.push((p * hw + bi) as u32);
            }
            Ok((out, Some(arg)))
        }
    }
}

pub fn global_pool<T: Element>(input: &Tensor<T>, mode: PoolMode) -> Result<Tensor<T>> {
    let (out, _) = global_pool_forward(input.shape(), input.data(), mode)?;
    Tensor::new([input.shape()[0], input.shape()[1]], out)
}

/// Nearest-neighbour upsampling by an integer factor (inverse layout of pooling).
pub fn upsample_nearest<T: Element>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let (oh, ow) = (h * factor, w * factor);
    let src = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        for y in 0..oh {
            let row = plane * h * w + (y / factor) * w;
            out.extend((0..ow).map(|x| src[row + x / factor]));
        }
    }
    Tensor::new([n, c, oh, ow], out)
}
