mod common;

use cdsa_core::vesselness::*;
use cdsa_core::Image;
use common::*;
use proptest::prelude::*;

fn cfg_with(sigmas: &[f64]) -> ScaleSpaceConfig {
    ScaleSpaceConfig { sigmas: sigmas.to_vec(), ..Default::default() }
}

#[test]
fn kernel_is_normalized() {
    for sigma in [0.5, 1.0, 1.5, 2.0, 3.0, 6.0] {
        let k = gaussian_kernel(sigma).unwrap();
        assert_eq!(k.len(), 2 * (4.0 * sigma as f64).ceil() as usize + 1);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(gaussian_kernel(0.0).is_err());
    assert!(gaussian_kernel(-1.0).is_err());
}

#[test]
fn smoothing_examples() {
    let c = Image::filled(20, 23, 0.37);
    for v in gaussian_smooth(&c, 2.5).unwrap().data() {
        assert!((v - 0.37).abs() < 1e-6);
    }
    let impulse = Image::from_fn(15, 15, |y, x| if y == 7 && x == 7 { 1.0 } else { 0.0 });
    let fast = gaussian_smooth(&impulse, 1.0).unwrap();
    let slow = dense_gaussian(&impulse, 1.0);
    for (a, b) in fast.data().iter().zip(slow.data()) {
        assert!((a - b).abs() < 1e-10);
    }
    let ramp = Image::from_fn(30, 30, |_, x| x as f64);
    let s = gaussian_smooth(&ramp, 2.0).unwrap();
    for y in 0..30 {
        for x in 8..22 {
            assert!((s.get(y, x) - x as f64).abs() < 1e-6);
        }
    }
}

#[test]
fn smoothing_matches_dense_oracle_on_random_images() {
    for seed in 0..5 {
        let img = random_image(seed, 13, 17);
        let sigma = 0.8 + 0.3 * seed as f64;
        let fast = gaussian_smooth(&img, sigma).unwrap();
        let slow = dense_gaussian(&img, sigma);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn hessian_examples() {
    let h = hessian_at_scale(&Image::filled(30, 30, 0.4), 2.0, 2.0).unwrap();
    for img in [&h.hxx, &h.hxy, &h.hyy] {
        assert!(img.data().iter().all(|v| v.abs() < 1e-12));
    }
    let quad = Image::from_fn(40, 40, |_, x| (x as f64).powi(2));
    let h = hessian_at_scale(&quad, 2.0, 2.0).unwrap();
    for y in 10..30 {
        for x in 10..30 {
            assert!((h.hxx.get(y, x) - 8.0).abs() < 1e-3);
            assert!(h.hxy.get(y, x).abs() < 1e-3 && h.hyy.get(y, x).abs() < 1e-3);
        }
    }
    assert!(hessian_at_scale(&Image::zeros(10, 40), 2.0, 2.0).is_err());
}

#[test]
fn hessian_of_transpose() {
    let img = random_image(4, 24, 31);
    let a = hessian_at_scale(&img, 1.5, 2.0).unwrap();
    let b = hessian_at_scale(&img.transpose(), 1.5, 2.0).unwrap();
    let close = |p: &Image, q: &Image| p.data().iter().zip(q.data()).all(|(u, v)| (u - v).abs() < 1e-12);
    assert!(close(&a.hxx.transpose(), &b.hyy));
    assert!(close(&a.hyy.transpose(), &b.hxx));
    assert!(close(&a.hxy.transpose(), &b.hxy));
}

#[test]
fn eigen_examples() {
    assert_eq!(eig2x2_symmetric(0.0, 0.0, 0.0), (0.0, 0.0));
    assert_eq!(eig2x2_symmetric(2.0, 0.0, 1.0), (1.0, 2.0));
    let (a, b) = eig2x2_symmetric(1.0, 1.0, 1.0);
    assert!(a.abs() < 1e-15 && (b - 2.0).abs() < 1e-15);
}

fn uniform_field(hxx: f64, hxy: f64, hyy: f64) -> HessianField {
    HessianField {
        hxx: Image::filled(4, 4, hxx),
        hxy: Image::filled(4, 4, hxy),
        hyy: Image::filled(4, 4, hyy),
        sigma: 1.0,
        border: 0,
    }
}

#[test]
fn frangi_examples() {
    let cfg = ScaleSpaceConfig::default();
    assert!(frangi_response(&uniform_field(0.0, 0.0, 0.0), &cfg).data().iter().all(|&v| v == 0.0));
    let t = 0.3;
    let fixed = ScaleSpaceConfig { c: Structureness::Fixed(t), ..cfg.clone() };
    let v = frangi_response(&uniform_field(t, 0.0, 0.0), &fixed);
    assert!((v.get(1, 1) - (1.0 - (-0.5f64).exp())).abs() < 1e-12);
    assert!((v.get(1, 1) - 0.39347).abs() < 1e-5);
    // auto resolves to half of the largest S
    let auto = frangi_response(&uniform_field(t, 0.0, 0.0), &cfg);
    assert!((auto.get(1, 1) - (1.0 - (-2.0f64).exp())).abs() < 1e-12);
    let blob = frangi_response(&uniform_field(-t, 0.0, -t), &fixed);
    assert!(blob.data().iter().all(|&v| v == 0.0));
    let bright = ScaleSpaceConfig { polarity: Polarity::BrightVessels, ..fixed };
    assert!(frangi_response(&uniform_field(t, 0.0, 0.0), &bright).data().iter().all(|&v| v == 0.0));
}

#[test]
fn prior_examples() {
    let cfg = cfg_with(&[1.0, 2.0, 3.0, 4.0]);
    let zero = integrated_geometric_prior(&Image::filled(48, 48, 0.6), &cfg).unwrap();
    assert!(zero.data().iter().all(|&v| v == 0.0));

    let tube = dark_tube(80, 64, 32.0, 3.0);
    let prior = integrated_geometric_prior(&tube, &cfg).unwrap();
    let border = kernel_radius(4.0) + 1;
    let rows: Vec<usize> = (border..80 - border).collect();
    let hits = rows
        .iter()
        .filter(|&&y| {
            let row: Vec<f64> = (0..64).map(|x| prior.get(y, x)).collect();
            let best = (0..64).fold(0, |b, x| if row[x] > row[b] { x } else { b });
            best == 32
        })
        .count();
    assert!(hits as f64 >= 0.95 * rows.len() as f64, "{hits}/{}", rows.len());

    let single = cfg_with(&[2.0]);
    let h = hessian_at_scale(&tube, 2.0, 2.0).unwrap();
    assert_eq!(integrated_geometric_prior(&tube, &single).unwrap(), frangi_response(&h, &single));
}

#[test]
fn polarity_flip_matches() {
    let tube = dark_tube(60, 60, 29.0, 2.5);
    let dark = integrated_geometric_prior(&tube, &ScaleSpaceConfig::default()).unwrap();
    let bright_cfg = ScaleSpaceConfig { polarity: Polarity::BrightVessels, ..Default::default() };
    let bright = integrated_geometric_prior(&tube.map(|v| -v), &bright_cfg).unwrap();
    for (a, b) in dark.data().iter().zip(bright.data()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn rotation_covariance() {
    let img = gaussian_smooth(&random_image(8, 56, 64), 1.5).unwrap();
    let cfg = cfg_with(&[1.0, 2.0, 3.0]);
    let rotated_prior = integrated_geometric_prior(&img, &cfg).unwrap().rotate90();
    let prior_of_rotated = integrated_geometric_prior(&img.rotate90(), &cfg).unwrap();
    assert_eq!(rotated_prior.shape(), prior_of_rotated.shape());
    for (a, b) in rotated_prior.data().iter().zip(prior_of_rotated.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn scale_selection_grows_with_radius() {
    let cfg = ScaleSpaceConfig { c: Structureness::Fixed(0.05), ..Default::default() };
    let mut picked = Vec::new();
    for r in [2.0, 3.0, 4.0] {
        let tube = dark_tube(96, 96, 48.0, r);
        let idx = best_scale_index(&tube, &cfg).unwrap();
        picked.push(cfg.sigmas[idx[48 * 96 + 48]]);
    }
    assert!(picked.windows(2).all(|w| w[0] <= w[1]), "{picked:?}");
    assert_eq!(picked, vec![3.0, 4.0, 6.0]);
}

#[test]
fn invalid_configs() {
    let img = Image::zeros(64, 64);
    for cfg in [
        cfg_with(&[]),
        cfg_with(&[2.0, 1.0]),
        cfg_with(&[0.0, 1.0]),
        ScaleSpaceConfig { beta: 0.0, ..Default::default() },
        ScaleSpaceConfig { c: Structureness::Fixed(-1.0), ..Default::default() },
    ] {
        assert!(integrated_geometric_prior(&img, &cfg).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prior_is_in_unit_interval(seed in 0u64..1000, smooth in 0.5f64..3.0) {
        let img = gaussian_smooth(&random_image(seed, 40, 40), smooth).unwrap();
        let prior = integrated_geometric_prior(&img, &cfg_with(&[1.0, 2.0, 3.0])).unwrap();
        prop_assert!(prior.data().iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn eigenvalues_reconstruct_trace_and_determinant(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0) {
        let (l1, l2) = eig2x2_symmetric(a, b, c);
        prop_assert!(l1.abs() <= l2.abs());
        prop_assert!((l1 + l2 - (a + c)).abs() < 1e-12);
        prop_assert!((l1 * l2 - (a * c - b * b)).abs() < 1e-9);
    }
}
