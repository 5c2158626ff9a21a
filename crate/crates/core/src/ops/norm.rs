//! Spatial batch normalization with exponential moving statistics.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::{cst, Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

pub const DEFAULT_MOMENTUM: f64 = 0.99;
pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Per-channel affine parameters and running statistics of one BN layer.
///
/// `momentum` is the weight kept on the old moving value at each update:
/// `moving = momentum * moving + (1 - momentum) * batch`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub moving_mean: Vec<T>,
    pub moving_variance: Vec<T>,
    pub momentum: f64,
    pub epsilon: f64,
    /// Number of train-mode updates applied so far.
    pub updates: u64,
}

impl<T: Element> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            moving_mean: vec![T::zero(); channels],
            moving_variance: vec![T::one(); channels],
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
            updates: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Mutable view on the running statistics a forward pass may update.
pub struct MovingStats<'a, T> {
    pub mean: &'a mut [T],
    pub variance: &'a mut [T],
    pub momentum: f64,
    pub epsilon: f64,
}

/// Values kept from the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mode: Mode,
}

/// Outcome flags of a forward call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BnReport {
    /// Inference ran on moving statistics that were never trained.
    pub uninitialized_stats: bool,
}

pub(crate) fn bn_forward<T: Element>(
    shape: &[usize],
    x: &[T],
    gamma: &[T],
    beta: &[T],
    stats: MovingStats<'_, T>,
    mode: Mode,
    trained: bool,
) -> Result<(Vec<T>, BnCache<T>, BnReport)> {
    let (n, c, h, w) = match *shape {
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(shape_err!("batchnorm2d input must be [N,C,H,W], got {shape:?}")),
    };
    if gamma.len() != c || beta.len() != c || stats.mean.len() != c || stats.variance.len() != c
    {
        return Err(shape_err!(
            "batchnorm2d state has {} channels, input has {c}",
            gamma.len()
        ));
    }
    let hw = h * w;
    let m = n * hw;
    let eps = cst::<T>(stats.epsilon);
    let mut report = BnReport::default();
    let (mean, var) = match mode {
        Mode::Train => {
            if m == 0 {
                return Err(shape_err!("batchnorm2d train mode on an empty batch"));
            }
            let inv_m = cst::<T>(1.0 / m as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ci in 0..c {
                let mut s = T::zero();
                for ni in 0..n {
                    let off = (ni * c + ci) * hw;
                    s = s + x[off..off + hw].iter().copied().sum::<T>();
                }
                let mu = s * inv_m;
                let mut q = T::zero();
                for ni in 0..n {
                    let off = (ni * c + ci) * hw;
                    q = q + x[off..off + hw].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
                }
                mean[ci] = mu;
                var[ci] = q * inv_m;
            }
            let keep = cst::<T>(stats.momentum);
            let take = cst::<T>(1.0 - stats.momentum);
            for ci in 0..c {
                stats.mean[ci] = keep * stats.mean[ci] + take * mean[ci];
                stats.variance[ci] = keep * stats.variance[ci] + take * var[ci];
            }
            (mean, var)
        }
        Mode::Infer => {
            report.uninitialized_stats = !trained;
            (stats.mean.to_vec(), stats.variance.to_vec())
        }
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut y = Vec::with_capacity(x.len());
    let mut xhat = Vec::with_capacity(x.len());
    for (i, plane) in x.chunks_exact(hw.max(1)).enumerate() {
        let ci = i % c;
        let (mu, is, g, b) = (mean[ci], inv_std[ci], gamma[ci], beta[ci]);
        for &v in plane {
            let xh = (v - mu) * is;
            xhat.push(xh);
            y.push(g * xh + b);
        }
    }
    Ok((y, BnCache { xhat, inv_std, mode }, report))
}

/// Gradients w.r.t. input, gamma and beta.
pub(crate) fn bn_backward<T: Element>(
    shape: &[usize],
    cache: &BnCache<T>,
    gamma: &[T],
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    let m = n * hw;
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (i, (g, xh)) in dy.chunks_exact(hw.max(1)).zip(cache.xhat.chunks_exact(hw.max(1))).enumerate() {
        let (mut sb, mut sg) = (T::zero(), T::zero());
        for (&d, &xh) in g.iter().zip(xh) {
            sb = sb + d;
            sg = sg + d * xh;
        }
        dbeta[i % c] = dbeta[i % c] + sb;
        dgamma[i % c] = dgamma[i % c] + sg;
    }
    let mut dx = Vec::with_capacity(dy.len());
    let inv_m = cst::<T>(1.0 / m as f64);
    for (i, (g, xh)) in dy.chunks_exact(hw.max(1)).zip(cache.xhat.chunks_exact(hw.max(1))).enumerate() {
        let ci = i % c;
        let s = gamma[ci] * cache.inv_std[ci];
        match cache.mode {
            Mode::Infer => dx.extend(g.iter().map(|&d| d * s)),
            Mode::Train => {
                let mean_dy = dbeta[ci] * inv_m;
                let mean_dy_xhat = dgamma[ci] * inv_m;
                dx.extend(g.iter().zip(xh).map(|(&d, &xh)| s * (d - mean_dy - xh * mean_dy_xhat)));
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Batch normalization on plain tensors, updating `state` in train mode.
///
/// Inference before any training update uses the initial statistics (mean 0,
/// variance 1) and logs a warning.
pub fn batchnorm2d<T: Element>(
    input: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    let trained = state.updates > 0;
    let stats = MovingStats {
        mean: &mut state.moving_mean,
        variance: &mut state.moving_variance,
        momentum: state.momentum,
        epsilon: state.epsilon,
    };
    let (y, _, report) = bn_forward(
        input.shape(),
        input.data(),
        &state.gamma,
        &state.beta,
        stats,
        mode,
        trained,
    )?;
    if report.uninitialized_stats {
        log::warn!("batchnorm2d: inference with untrained moving statistics");
    }
    if mode == Mode::Train {
        state.updates += 1;
    }
    Tensor::new(input.shape().to_vec(), y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn train_mode_output_is_standardized() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::randn([4, 3, 5, 5], 2.0, &mut rng).map(|v| v + 7.0);
        let mut st = BatchNormState::<f64>::new(3);
        st.epsilon = 0.0;
        let y = batchnorm2d(&x, &mut st, Mode::Train).unwrap();
        for ci in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|n| y.data()[(n * 3 + ci) * 25..(n * 3 + ci + 1) * 25].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }

    #[test]
    fn infer_with_initial_stats_scales_by_eps() {
        let x = Tensor::<f64>::new([1, 1, 1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut st = BatchNormState::<f64>::new(1);
        let y = batchnorm2d(&x, &mut st, Mode::Infer).unwrap();
        let s = (1.0 + DEFAULT_EPSILON).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, b / s);
        }
        assert_eq!(st.updates, 0);
    }

    #[test]
    fn uninitialized_infer_is_reported() {
        let x = [1.0f64];
        let (mut m, mut v) = (vec![0.0], vec![1.0]);
        let stats = MovingStats {
            mean: &mut m,
            variance: &mut v,
            momentum: 0.9,
            epsilon: 1e-3,
        };
        let (_, _, rep) =
            bn_forward(&[1, 1, 1, 1], &x, &[1.0], &[0.0], stats, Mode::Infer, false).unwrap();
        assert!(rep.uninitialized_stats);
    }

    #[test]
    fn moving_mean_converges_geometrically() {
        // Every batch has mean exactly mu, so the gap shrinks by `momentum` per step.
        let mu = 4.0;
        let x = Tensor::<f64>::new([1, 1, 1, 4], vec![mu - 1.0, mu + 1.0, mu - 2.0, mu + 2.0])
            .unwrap();
        let mut st = BatchNormState::<f64>::new(1);
        for k in 1..=50u32 {
            batchnorm2d(&x, &mut st, Mode::Train).unwrap();
            let bound = st.momentum.powi(k as i32) * mu;
            assert!((st.moving_mean[0] - mu).abs() <= bound + 1e-12);
            assert!(((st.moving_mean[0] - mu).abs() - bound).abs() < 1e-9);
        }
    }

    #[test]
    fn infer_is_pure() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f32>::randn([2, 2, 3, 3], 1.0, &mut rng);
        let mut st = BatchNormState::<f32>::new(2);
        batchnorm2d(&x, &mut st, Mode::Train).unwrap();
        let before = st.clone();
        let a = batchnorm2d(&x, &mut st, Mode::Infer).unwrap();
        let b = batchnorm2d(&x, &mut st, Mode::Infer).unwrap();
        assert_eq!(a, b);
        assert_eq!(st, before);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = Tensor::<f64>::zeros([1, 2, 2, 2]);
        let mut st = BatchNormState::<f64>::new(3);
        assert!(batchnorm2d(&x, &mut st, Mode::Train).is_err());
    }
}
