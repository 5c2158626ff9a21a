use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vig_core::cam::{self, CamMethod, Heatmap};
use vig_core::imaging::{Image, Mask};
use vig_core::model::{build_vdcnet, BlockWidths, LayerKind, Session, VdcNetConfig};
use vig_core::ops::PoolMode;
use vig_core::Error;

fn tiny(head: PoolMode, final_filters: usize) -> VdcNetConfig {
    VdcNetConfig {
        input_size: 16,
        stem_filters: 4,
        blocks: vec![BlockWidths::new(4, 4, true), BlockWidths::new(4, 4, true)],
        final_filters,
        head,
        ..VdcNetConfig::default()
    }
}

fn session(cfg: &VdcNetConfig, seed: u64) -> Session<f64> {
    Session::new(Arc::new(build_vdcnet(cfg).unwrap()), seed)
}

fn noise_image(size: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut im = Image::new(size, size);
    for v in im.data_mut() {
        *v = rng.random();
    }
    im
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn dense_weight(s: &Session<f64>) -> usize {
    let g = s.graph();
    match g.layers[g.logit_layer].kind {
        LayerKind::Dense { weight, .. } => weight,
        _ => unreachable!(),
    }
}

#[test]
fn grad_cam_matches_cam_for_linear_head() {
    for seed in 0..5 {
        let mut s = session(&tiny(PoolMode::Avg, 6), seed);
        let im = noise_image(16, seed);
        let g = cam::grad_cam(&mut s, &im, "x").unwrap();
        let c = cam::original_cam(&mut s, &im, "x").unwrap();
        assert_eq!(g.native_size, (4, 4));
        assert!(cosine(&g.native, &c.native) >= 1.0 - 1e-6, "seed {seed}");
    }
}

#[test]
fn gmp_head_rejects_cam() {
    let mut s = session(&tiny(PoolMode::Max, 6), 1);
    let err = cam::original_cam(&mut s, &noise_image(16, 1), "x").unwrap_err();
    assert!(matches!(err, Error::UnsupportedArchitecture(_)));
    assert!(cam::grad_cam(&mut s, &noise_image(16, 1), "x").is_ok());
}

#[test]
fn single_channel_maps_follow_the_activation() {
    let mut s = session(&tiny(PoolMode::Avg, 1), 4);
    let w = dense_weight(&s);
    s.param_mut(w).data_mut()[0] = 0.7;
    let im = noise_image(16, 2);
    let (_, taps) = s.forward_with_taps(&Image::batch_tensor(&[&im]).unwrap(), vig_core::ops::Mode::Infer).unwrap();
    let act: Vec<f64> = taps["last_conv"].data().to_vec();
    let expect = cam::normalize(&act);
    for m in [CamMethod::Cam, CamMethod::GradCam, CamMethod::ScoreCam] {
        let h = cam::compute(&mut s, m, &im, "x").unwrap();
        for (a, b) in h.normalized.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-9, "{m:?}");
        }
    }
}

#[test]
fn equal_dense_weights_give_channel_sum() {
    let mut s = session(&tiny(PoolMode::Avg, 3), 8);
    let w = dense_weight(&s);
    s.param_mut(w).data_mut().fill(0.25);
    let im = noise_image(16, 3);
    let (_, taps) = s.forward_with_taps(&Image::batch_tensor(&[&im]).unwrap(), vig_core::ops::Mode::Infer).unwrap();
    let t = &taps["last_conv"];
    let hw = 16;
    let sum: Vec<f64> = (0..hw).map(|i| (0..3).map(|c| t.data()[c * hw + i]).sum::<f64>() * 0.25).collect();
    let h = cam::original_cam(&mut s, &im, "x").unwrap();
    for (a, b) in h.native.iter().zip(&sum) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn grad_cam_is_deterministic_and_normalized() {
    let mut s = session(&tiny(PoolMode::Avg, 6), 2);
    let im = noise_image(16, 9);
    let a = cam::grad_cam(&mut s, &im, "x").unwrap();
    let b = cam::grad_cam(&mut s, &im, "x").unwrap();
    assert_eq!(a, b);
    assert_eq!(a.upsampled.len(), 256);
    let max = a.normalized.iter().copied().fold(0.0, f64::max);
    if a.native.iter().any(|&v| v > 0.0) {
        assert_eq!(max, 1.0);
    } else {
        assert_eq!(max, 0.0);
    }
    assert!(a.normalized.iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn constant_map_normalizes_to_zero() {
    assert_eq!(cam::normalize(&[2.0; 5]), vec![0.0; 5]);
    let r = cam::resize_bilinear(&[3.0; 4], (2, 2), (5, 7));
    assert!(r.iter().all(|&v| (v - 3.0).abs() < 1e-12));
    assert_eq!(cam::resize_bilinear(&[1.0, 2.0, 3.0, 4.0], (2, 2), (2, 2)), vec![1.0, 2.0, 3.0, 4.0]);
}

fn heatmap(values: Vec<f64>, size: usize) -> Heatmap {
    Heatmap {
        method: CamMethod::GradCam,
        sample_id: "h".into(),
        native: values.clone(),
        native_size: (size, size),
        normalized: values.clone(),
        upsampled: values,
        size: (size, size),
    }
}

#[test]
fn localization_energy_cases() {
    let mut mask = Mask::new(8, 8);
    for y in 0..4 {
        for x in 0..4 {
            mask.set(x, y, true);
        }
    }
    let same = heatmap(mask.data().iter().map(|&m| m as f64).collect(), 8);
    assert_eq!(cam::localization_energy(&same, &mask, 0).unwrap(), 1.0);
    let uniform = heatmap(vec![0.5; 64], 8);
    assert!((cam::localization_energy(&uniform, &mask, 0).unwrap() - 0.25).abs() < 1e-12);
    assert_eq!(cam::localization_energy(&heatmap(vec![0.0; 64], 8), &mask, 2).unwrap(), 0.0);
    assert!(cam::localization_energy(&uniform, &Mask::new(4, 4), 0).is_err());
}

#[test]
fn localization_energy_matches_pixel_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let n = rng.random_range(4..20);
        let values: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
        let mut mask = Mask::new(n, n);
        for y in 0..n {
            for x in 0..n {
                mask.set(x, y, rng.random_bool(0.1));
            }
        }
        let r = rng.random_range(0..4usize);
        let (mut inside, mut total) = (0.0, 0.0);
        for y in 0..n as isize {
            for x in 0..n as isize {
                let v = values[(y as usize) * n + x as usize];
                total += v;
                let near = (-(r as isize)..=r as isize).any(|dy| {
                    (-(r as isize)..=r as isize).any(|dx| {
                        let (xx, yy) = (x + dx, y + dy);
                        dx * dx + dy * dy <= (r * r) as isize
                            && xx >= 0
                            && yy >= 0
                            && xx < n as isize
                            && yy < n as isize
                            && mask.get(xx as usize, yy as usize)
                    })
                });
                if near {
                    inside += v;
                }
            }
        }
        let got = cam::localization_energy(&heatmap(values, n), &mask, r).unwrap();
        assert!((got - inside / total).abs() < 1e-12);
    }
}

#[test]
fn overlay_of_zero_heatmap_blends_first_color() {
    let mut im = Image::new(4, 4);
    im.data_mut().fill(100);
    let h = heatmap(vec![0.0; 16], 4);
    let out = cam::render_overlay(&h, &im, 0.5).unwrap();
    let lut0 = cam::PLASMA[0];
    let expect: Vec<u8> = lut0.iter().map(|&c| ((100.0 + c as f64) / 2.0).round() as u8).collect();
    assert_eq!(out.get(2, 3).to_vec(), expect);
    assert_eq!(cam::lut_color(0.0), cam::PLASMA[0]);
    assert_eq!(cam::lut_color(1.0), cam::PLASMA[255]);
}
