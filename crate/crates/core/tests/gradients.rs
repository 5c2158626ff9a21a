//! Finite-difference checks of every tape op in f64.

use rand::Rng;
use vig_core::autograd::{Tape, Var};
use vig_core::gradcheck::finite_diff_check;
use vig_core::ops::{Mode, MovingStats, Padding, PoolMode};
use vig_core::rng::stream;
use vig_core::{Result, Tensor};

const SEEDS: u64 = 10;
const EPS: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn rand_t(shape: &[usize], seed: u64, salt: u64) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, &mut stream(seed, &[900, salt]))
}

/// Values bounded away from zero, so kinks never sit inside `[x-eps, x+eps]`.
fn away_from_zero(shape: &[usize], seed: u64, salt: u64) -> Tensor<f64> {
    let mut rng = stream(seed, &[901, salt]);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values spaced at least 1e-3 apart, so max selections stay put.
fn distinct(shape: &[usize], seed: u64, salt: u64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut rng = stream(seed, &[902, salt]);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.random_range(0..=i));
    }
    let data = idx.iter().map(|&k| (k as f64 - n as f64 / 2.0) * 1e-2).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn check<F>(name: &str, f: F, inputs: &[Tensor<f64>])
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    match finite_diff_check(f, inputs, EPS, TOL) {
        Ok(r) => assert!(r.checked > 0, "{name}: nothing checked"),
        Err(e) => panic!("{name}: {e}"),
    }
}

fn conv_case(c: usize, f: usize, k: usize, stride: usize, pad: Padding, bias: bool) {
    for seed in 0..SEEDS {
        let x = rand_t(&[2, c, 7, 6], seed, 1);
        let w = rand_t(&[f, c, k, k], seed, 2);
        let b = rand_t(&[f], seed, 3);
        let name = format!("conv {k}x{k} s{stride} {pad:?} bias={bias} seed {seed}");
        if bias {
            check(&name, |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, pad), &[x, w, b]);
        } else {
            check(&name, |t, v| t.conv2d(v[0], v[1], None, stride, pad), &[x, w]);
        }
    }
}

#[test]
fn conv3x3_same_stride1() {
    conv_case(2, 3, 3, 1, Padding::Same, true);
}

#[test]
fn conv3x3_same_stride2() {
    conv_case(2, 2, 3, 2, Padding::Same, true);
}

#[test]
fn conv3x3_valid() {
    conv_case(3, 2, 3, 1, Padding::Valid, false);
    conv_case(2, 2, 3, 2, Padding::Valid, true);
}

#[test]
fn conv1x1_pointwise_and_strided() {
    conv_case(3, 4, 1, 1, Padding::Same, true);
    conv_case(3, 2, 1, 2, Padding::Valid, false);
}

#[test]
fn max_pool() {
    for seed in 0..SEEDS {
        let x = distinct(&[2, 3, 6, 4], seed, 4);
        check("max_pool 2", |t, v| t.max_pool(v[0], 2), std::slice::from_ref(&x));
        let y = distinct(&[1, 2, 6, 9], seed, 5);
        check("max_pool 3", |t, v| t.max_pool(v[0], 3), &[y]);
    }
}

fn bn_case(mode: Mode) {
    for seed in 0..SEEDS {
        let x = rand_t(&[3, 2, 4, 3], seed, 6);
        let gamma = rand_t(&[2], seed, 7);
        let beta = rand_t(&[2], seed, 8);
        let stored_mean = rand_t(&[2], seed, 9).data().to_vec();
        let stored_var: Vec<f64> = rand_t(&[2], seed, 10).data().iter().map(|v| v.abs() + 0.5).collect();
        check(
            &format!("batch_norm {mode:?} seed {seed}"),
            |t, v| {
                let mut mean = stored_mean.clone();
                let mut variance = stored_var.clone();
                let stats = MovingStats {
                    mean: &mut mean,
                    variance: &mut variance,
                    momentum: 0.99,
                    epsilon: 1e-3,
                };
                t.batch_norm(v[0], v[1], v[2], stats, mode, true)
            },
            &[x, gamma, beta],
        );
    }
}

#[test]
fn batch_norm_train() {
    bn_case(Mode::Train);
}

#[test]
fn batch_norm_infer() {
    bn_case(Mode::Infer);
}

#[test]
fn relu() {
    for seed in 0..SEEDS {
        let x = away_from_zero(&[2, 3, 4, 4], seed, 11);
        check("relu", |t, v| t.relu(v[0]), &[x]);
    }
}

#[test]
fn add_mul_scale() {
    for seed in 0..SEEDS {
        let a = rand_t(&[2, 3, 2, 2], seed, 12);
        let b = rand_t(&[2, 3, 2, 2], seed, 13);
        check("add", |t, v| t.add(v[0], v[1]), &[a.clone(), b.clone()]);
        check("mul", |t, v| t.mul(v[0], v[1]), &[a.clone(), b.clone()]);
        check("mul self", |t, v| t.mul(v[0], v[0]), std::slice::from_ref(&a));
        check("scale", |t, v| t.scale(v[0], -2.5), &[a]);
    }
}

#[test]
fn concat() {
    for seed in 0..SEEDS {
        let a = rand_t(&[2, 3, 3, 2], seed, 14);
        let b = rand_t(&[2, 1, 3, 2], seed, 15);
        check("concat", |t, v| t.concat(v[0], v[1]), &[a, b]);
    }
}

#[test]
fn global_pools() {
    for seed in 0..SEEDS {
        let x = rand_t(&[3, 4, 3, 5], seed, 16);
        check("gap", |t, v| t.global_pool(v[0], PoolMode::Avg), &[x]);
        let y = distinct(&[3, 4, 3, 5], seed, 17);
        check("gmp", |t, v| t.global_pool(v[0], PoolMode::Max), &[y]);
    }
}

#[test]
fn dense() {
    for seed in 0..SEEDS {
        let x = rand_t(&[4, 5], seed, 18);
        let w = rand_t(&[5, 3], seed, 19);
        let b = rand_t(&[3], seed, 20);
        check("dense", |t, v| t.dense(v[0], v[1], v[2]), &[x, w, b]);
    }
}

#[test]
fn sigmoid_and_bce() {
    for seed in 0..SEEDS {
        let x = rand_t(&[5, 1], seed, 21).map(|v| v * 3.0);
        check("sigmoid", |t, v| t.sigmoid(v[0]), std::slice::from_ref(&x));
        let mut rng = stream(seed, &[903]);
        let labels = Tensor::new(
            vec![5, 1],
            (0..5).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        check("sigmoid_bce", |t, v| Ok(t.sigmoid_bce(v[0], &labels)?.1), &[x]);
    }
}

#[test]
fn sum() {
    for seed in 0..SEEDS {
        let x = rand_t(&[2, 2, 3, 3], seed, 22);
        check("sum", |t, v| t.sum(v[0]), &[x]);
    }
}

#[test]
fn composite_block() {
    // conv -> bn -> relu -> concat skip -> gap -> dense -> bce
    for seed in 0..SEEDS {
        let x = rand_t(&[2, 2, 6, 6], seed, 23);
        let k = rand_t(&[3, 2, 3, 3], seed, 24);
        let g = rand_t(&[3], seed, 25).map(|v| v + 1.5);
        let bt = rand_t(&[3], seed, 26);
        let w = rand_t(&[5, 1], seed, 27);
        let b = rand_t(&[1], seed, 28);
        let labels = Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap();
        check(
            "composite",
            |t, v| {
                let mut mean = vec![0.0; 3];
                let mut var = vec![1.0; 3];
                let stats = MovingStats { mean: &mut mean, variance: &mut var, momentum: 0.99, epsilon: 1e-3 };
                let c = t.conv2d(v[0], v[1], None, 1, Padding::Same)?;
                let n = t.batch_norm(c, v[2], v[3], stats, Mode::Train, true)?;
                let r = t.relu(n)?;
                let skip = t.concat(r, v[0])?;
                let p = t.global_pool(skip, PoolMode::Avg)?;
                let z = t.dense(p, v[4], v[5])?;
                Ok(t.sigmoid_bce(z, &labels)?.1)
            },
            &[x, k, g, bt, w, b],
        );
    }
}
