use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stitch4d::image::Image;
use stitch4d::losses::*;

fn random_image(seed: u64, w: usize, h: usize, c: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, c, |_, _, _| rng.random_range(0.05..0.95))
}

fn fd_check(f: impl Fn(&Image) -> f64, x: &Image, grad: &Image, rel: f64) {
    let h = 1e-6;
    let mut probe = x.clone();
    for i in 0..x.data.len() {
        probe.data[i] = x.data[i] + h;
        let up = f(&probe);
        probe.data[i] = x.data[i] - h;
        let down = f(&probe);
        probe.data[i] = x.data[i];
        let fd = (up - down) / (2.0 * h);
        let diff = (fd - grad.data[i]).abs();
        assert!(
            diff <= rel * fd.abs().max(grad.data[i].abs()) || diff < 1e-9,
            "entry {i}: analytic {} numeric {fd}",
            grad.data[i]
        );
    }
}

#[test]
fn ssim_gradient_matches_finite_differences() {
    let cfg = LossConfig::default();
    for seed in 0..3 {
        let a = random_image(seed, 16, 16, 3);
        let b = random_image(seed + 100, 16, 16, 3);
        let s = ssim(&a, &b, &cfg).unwrap();
        fd_check(|x| ssim(x, &b, &cfg).unwrap().score, &a, &s.grad, 1e-4);
    }
}

#[test]
fn recon_gradient_matches_finite_differences() {
    let cfg = LossConfig::default();
    let a = random_image(5, 16, 16, 3);
    let b = random_image(6, 16, 16, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mask = Image::from_fn(
        16,
        16,
        1,
        |_, _, _| if rng.random_bool(0.7) { 1.0 } else { 0.0 },
    );
    for m in [None, Some(&mask)] {
        let r = recon_loss(&a, &b, &cfg, m).unwrap();
        fd_check(
            |x| recon_loss(x, &b, &cfg, m).unwrap().value,
            &a,
            &r.grad,
            1e-4,
        );
    }
}

#[test]
fn cross_gradient_matches_finite_differences() {
    let cfg = LossConfig::default();
    let a = random_image(7, 16, 16, 3);
    let b = random_image(8, 16, 16, 3);
    let c = cross_loss(&a, &b, 0.3 * cfg.tau, &cfg).unwrap();
    fd_check(
        |x| cross_loss(x, &b, 0.3 * cfg.tau, &cfg).unwrap().value,
        &a,
        &c.grad_a,
        1e-4,
    );
    fd_check(
        |x| cross_loss(&a, x, 0.3 * cfg.tau, &cfg).unwrap().value,
        &b,
        &c.grad_b,
        1e-4,
    );
}

#[test]
fn sail_composition_matches_hand_composed_value() {
    let cfg = LossConfig::default();
    let r = random_image(1, 12, 12, 3);
    let t = random_image(2, 12, 12, 3);
    let pa = random_image(3, 12, 12, 3);
    let pb = random_image(4, 12, 12, 3);
    let delta = 0.4 * cfg.tau;
    let s = sail_loss(
        &r,
        &t,
        None,
        delta,
        Some(CrossPairInput {
            a: &pa,
            b: &pb,
            delta,
        }),
        &cfg,
    )
    .unwrap();
    let hand = beta_weight(delta, &cfg) * recon_loss(&r, &t, &cfg, None).unwrap().value
        + cfg.lambda_cross * cross_loss(&pa, &pb, delta, &cfg).unwrap().value;
    assert!((s.value - hand).abs() < 1e-12);

    let doubled = sail_loss(&r, &t, None, 0.0, None, &cfg).unwrap();
    let base = recon_loss(&r, &t, &cfg, None).unwrap().value;
    assert!((doubled.value - 2.0 * base).abs() < 1e-12);

    let far = sail_loss(&r, &t, None, 1e6, None, &cfg).unwrap();
    assert_eq!(far.value, base);

    let plain = LossConfig {
        lambda_seam: 0.0,
        lambda_cross: 0.0,
        ..cfg
    };
    let s = sail_loss(
        &r,
        &t,
        None,
        0.0,
        Some(CrossPairInput {
            a: &pa,
            b: &pb,
            delta: 0.0,
        }),
        &plain,
    )
    .unwrap();
    assert_eq!(s.value, recon_loss(&r, &t, &plain, None).unwrap().value);
}

#[test]
fn recon_with_dssim_on_constant_pair() {
    let cfg = LossConfig {
        lambda_reg: 0.0,
        ..LossConfig::default()
    };
    let a = Image::filled(16, 16, 3, 0.6);
    let b = Image::filled(16, 16, 3, 0.5);
    let s = ssim(&a, &b, &cfg).unwrap().score;
    let r = recon_loss(&a, &b, &cfg, None).unwrap();
    assert!((r.value - (0.8 * 0.1 + 0.2 * (1.0 - s))).abs() < 1e-12);
}

fn plane_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let mid = (a + b) / 2.0;
    let n = (b - a).normalize();
    (p - mid).dot(&n).abs()
}

proptest! {
    #[test]
    fn boundary_distance_matches_exhaustive_pairs(
        pts in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0), 3),
        view in (-15.0f64..15.0, -15.0f64..15.0, -15.0f64..15.0),
    ) {
        let caps: Vec<Vector3<f64>> = pts.iter().map(|&(x, y, z)| Vector3::new(x, y, z)).collect();
        prop_assume!((caps[0] - caps[1]).norm() > 1e-3 && (caps[0] - caps[2]).norm() > 1e-3 && (caps[1] - caps[2]).norm() > 1e-3);
        let g = BoundaryGeometry::new(caps.clone()).unwrap();
        let v = Vector3::new(view.0, view.1, view.2);
        let oracle = [(0, 1), (0, 2), (1, 2)]
            .iter()
            .map(|&(i, j)| plane_distance(&v, &caps[i], &caps[j]))
            .fold(f64::INFINITY, f64::min);
        prop_assert!((boundary_distance(&v, &g) - oracle).abs() < 1e-9 * (1.0 + oracle));
    }

    #[test]
    fn beta_monotone_and_bounded(d0 in 0.0f64..10.0, d1 in 0.0f64..10.0, lambda in 0.0f64..3.0) {
        let cfg = LossConfig { lambda_seam: lambda, ..LossConfig::default() };
        let (lo, hi) = if d0 <= d1 { (d0, d1) } else { (d1, d0) };
        prop_assert!(beta_weight(lo, &cfg) >= beta_weight(hi, &cfg));
        let b = beta_weight(d0, &cfg);
        prop_assert!((1.0..=1.0 + lambda).contains(&b));
    }

    #[test]
    fn cross_loss_invariances(seed in 0u64..500, k in -0.5f64..0.5, k2 in -0.5f64..0.5) {
        let cfg = LossConfig::default();
        let a = random_image(seed, 8, 6, 3);
        let b = random_image(seed + 1, 8, 6, 3);
        let base = cross_loss(&a, &b, 0.0, &cfg).unwrap().value;
        let shift = |img: &Image, s: f64| {
            let mut o = img.clone();
            o.data.iter_mut().for_each(|v| *v += s);
            o
        };
        prop_assert!((cross_loss(&shift(&a, k), &shift(&b, k), 0.0, &cfg).unwrap().value - base).abs() < 1e-12);
        prop_assert!((cross_loss(&a, &shift(&b, k2), 0.0, &cfg).unwrap().value - base).abs() < 1e-12);
        prop_assert!((cross_loss(&b, &a, 0.0, &cfg).unwrap().value - base).abs() < 1e-15);
        prop_assert_eq!(cross_loss(&a, &a, 0.0, &cfg).unwrap().value, 0.0);
    }

    #[test]
    fn recon_non_negative_zero_iff_equal(seed in 0u64..500) {
        let cfg = LossConfig::default();
        let a = random_image(seed, 10, 10, 3);
        let b = random_image(seed + 7, 10, 10, 3);
        prop_assert!(recon_loss(&a, &b, &cfg, None).unwrap().value > 0.0);
        prop_assert_eq!(recon_loss(&a, &a, &cfg, None).unwrap().value, 0.0);
    }

    #[test]
    fn ssim_symmetric(seed in 0u64..500) {
        let cfg = LossConfig::default();
        let a = random_image(seed, 12, 9, 3);
        let b = random_image(seed + 3, 12, 9, 3);
        let ab = ssim(&a, &b, &cfg).unwrap().score;
        let ba = ssim(&b, &a, &cfg).unwrap().score;
        prop_assert!((ab - ba).abs() < 1e-9);
    }
}
