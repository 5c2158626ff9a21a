//! Forward kernels against direct loop implementations.

use proptest::prelude::*;
use vig_core::ops::{self, BatchNormState, Mode, Padding, PoolMode};
use vig_core::rng::stream;
use vig_core::Tensor;

fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, &mut stream(seed, &[700]))
}

/// Textbook convolution: for every output pixel walk the kernel window.
fn conv_direct(x: &Tensor<f64>, k: &Tensor<f64>, b: Option<&[f64]>, stride: usize, same: bool) -> (Vec<usize>, Vec<f64>) {
    let (n, c, h, w) = x.dims4().unwrap();
    let (f, _, kh, kw) = k.dims4().unwrap();
    let (oh, ow, pt, pl) = if same {
        let oh = h.div_ceil(stride);
        let ow = w.div_ceil(stride);
        let ph = ((oh - 1) * stride + kh).saturating_sub(h);
        let pw = ((ow - 1) * stride + kw).saturating_sub(w);
        (oh, ow, ph / 2, pw / 2)
    } else {
        ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0)
    };
    let xd = x.data();
    let kd = k.data();
    let mut out = vec![0.0; n * f * oh * ow];
    for ni in 0..n {
        for fi in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = b.map_or(0.0, |b| b[fi]);
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let y = (oy * stride + i) as isize - pt as isize;
                                let xx = (ox * stride + j) as isize - pl as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                s += xd[((ni * c + ci) * h + y as usize) * w + xx as usize]
                                    * kd[((fi * c + ci) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[((ni * f + fi) * oh + oy) * ow + ox] = s;
                }
            }
        }
    }
    (vec![n, f, oh, ow], out)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_matches_direct_loops(
        n in 1usize..3, c in 1usize..4, f in 1usize..4, h in 3usize..10, w in 3usize..10,
        k in prop_oneof![Just(1usize), Just(3), Just(5)], stride in 1usize..3, same: bool, bias: bool, seed: u64,
    ) {
        prop_assume!(same || (k <= h && k <= w));
        let x = rand_t(&[n, c, h, w], seed);
        let kt = rand_t(&[f, c, k, k], seed ^ 1);
        let bt = rand_t(&[f], seed ^ 2);
        let pad = if same { Padding::Same } else { Padding::Valid };
        let got = ops::conv2d(&x, &kt, bias.then_some(&bt), stride, pad).unwrap();
        let (shape, want) = conv_direct(&x, &kt, bias.then_some(bt.data()), stride, same);
        prop_assert_eq!(got.shape(), shape.as_slice());
        for (a, b) in got.data().iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn max_pool_matches_direct_loops(n in 1usize..3, c in 1usize..4, ph in 1usize..5, pw in 1usize..5, pool in 1usize..4, seed: u64) {
        let (h, w) = (ph * pool, pw * pool);
        let x = rand_t(&[n, c, h, w], seed);
        let got = ops::maxpool2d(&x, pool).unwrap();
        prop_assert_eq!(got.shape(), &[n, c, ph, pw][..]);
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..ph {
                    for ox in 0..pw {
                        let mut m = f64::NEG_INFINITY;
                        for i in 0..pool {
                            for j in 0..pool {
                                m = m.max(x.data()[((ni * c + ci) * h + oy * pool + i) * w + ox * pool + j]);
                            }
                        }
                        prop_assert_eq!(got.data()[((ni * c + ci) * ph + oy) * pw + ox], m);
                    }
                }
            }
        }
    }

    #[test]
    fn global_pools_match(n in 1usize..3, c in 1usize..5, h in 1usize..6, w in 1usize..6, seed: u64) {
        let x = rand_t(&[n, c, h, w], seed);
        let avg = ops::global_pool(&x, PoolMode::Avg).unwrap();
        let max = ops::global_pool(&x, PoolMode::Max).unwrap();
        for i in 0..n * c {
            let plane = &x.data()[i * h * w..(i + 1) * h * w];
            let mean = plane.iter().sum::<f64>() / (h * w) as f64;
            prop_assert!((avg.data()[i] - mean).abs() < 1e-12);
            prop_assert_eq!(max.data()[i], plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        }
    }
}

#[test]
fn batch_norm_train_and_infer() {
    let x = rand_t(&[4, 3, 5, 2], 11);
    let mut st = BatchNormState::<f64>::new(3);
    st.gamma = vec![1.5, -0.5, 2.0];
    st.beta = vec![0.1, 0.2, -0.3];
    let y = ops::batchnorm2d(&x, &mut st, Mode::Train).unwrap();
    let (n, c, hw) = (4, 3, 10);
    for ci in 0..c {
        let vals: Vec<f64> = (0..n).flat_map(|ni| x.data()[(ni * c + ci) * hw..(ni * c + ci + 1) * hw].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        for ni in 0..n {
            for i in 0..hw {
                let idx = (ni * c + ci) * hw + i;
                let want = st.gamma[ci] * (x.data()[idx] - mean) / (var + 1e-3).sqrt() + st.beta[ci];
                assert!((y.data()[idx] - want).abs() < 1e-12);
            }
        }
        // moving statistics start at 0 and 1 and move 1% towards the batch
        assert!((st.moving_mean[ci] - 0.01 * mean).abs() < 1e-12);
        assert!((st.moving_variance[ci] - (0.99 + 0.01 * var)).abs() < 1e-12);
    }
    assert_eq!(st.updates, 1);
    let yi = ops::batchnorm2d(&x, &mut st, Mode::Infer).unwrap();
    for ci in 0..c {
        let idx = ci * hw;
        let want = st.gamma[ci] * (x.data()[idx] - st.moving_mean[ci]) / (st.moving_variance[ci] + 1e-3).sqrt() + st.beta[ci];
        assert!((yi.data()[idx] - want).abs() < 1e-12);
    }
    assert_eq!(st.updates, 1);
}

#[test]
fn dense_and_concat() {
    let x = rand_t(&[3, 4], 5);
    let w = rand_t(&[4, 2], 6);
    let b = rand_t(&[2], 7);
    let y = ops::dense(&x, &w, &b).unwrap();
    for i in 0..3 {
        for j in 0..2 {
            let want: f64 = (0..4).map(|k| x.data()[i * 4 + k] * w.data()[k * 2 + j]).sum::<f64>() + b.data()[j];
            assert!((y.data()[i * 2 + j] - want).abs() < 1e-12);
        }
    }
    let a = rand_t(&[2, 2, 3, 3], 8);
    let c = rand_t(&[2, 1, 3, 3], 9);
    let cat = ops::concat_channels(&a, &c).unwrap();
    assert_eq!(cat.shape(), &[2, 3, 3, 3]);
    assert_eq!(&cat.data()[..18], &a.data()[..18]);
    assert_eq!(&cat.data()[18..27], &c.data()[..9]);
    let (p, q) = ops::split_channels(&cat, 2).unwrap();
    assert_eq!((p, q), (a, c));
}

#[test]
fn f32_and_f64_agree() {
    let x = rand_t(&[1, 3, 12, 12], 3);
    let k = rand_t(&[4, 3, 3, 3], 4);
    let y64 = ops::conv2d(&x, &k, None, 1, Padding::Same).unwrap();
    let y32 = ops::conv2d(&x.cast::<f32>(), &k.cast::<f32>(), None, 1, Padding::Same).unwrap();
    for (a, b) in y64.data().iter().zip(y32.data()) {
        assert!((a - *b as f64).abs() < 1e-5);
    }
}
