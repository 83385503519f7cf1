use cdsa_core::morphology::{dilate, hard_skeleton};
use cdsa_core::topo_loss::*;
use cdsa_core::{BinaryMask, Image, SeededRng};
use proptest::prelude::*;

fn k(iterations: usize) -> SoftSkeletonConfig {
    SoftSkeletonConfig { iterations }
}

fn w(a: f64, b: f64, c: f64) -> LossWeights {
    LossWeights::new(a, b, c).unwrap()
}

/// Horizontal tube `width` rows thick spanning columns `x0..x1`.
fn tube(h: usize, wd: usize, row: usize, width: usize, x0: usize, x1: usize) -> BinaryMask {
    let top = row - width / 2;
    BinaryMask::from_fn(h, wd, |y, x| (top..top + width).contains(&y) && (x0..x1).contains(&x))
}

fn cut(m: &BinaryMask, ys: std::ops::Range<usize>, xs: std::ops::Range<usize>) -> BinaryMask {
    let mut out = m.clone();
    for y in ys {
        for x in xs.clone() {
            out.set(y, x, false);
        }
    }
    out
}

#[test]
fn bce_matches_scalar_oracle() {
    let mut rng = SeededRng::new(12);
    let pred = Image::from_fn(4, 4, |_, _| rng.next_range(0.01, 0.99));
    let gt = BinaryMask::from_fn(4, 4, |_, _| rng.next_f64() < 0.5);
    let mut sum = 0.0;
    for i in 0..16 {
        let p = pred.data()[i];
        sum += if gt.bits()[i] { -p.ln() } else { -(1.0 - p).ln() };
    }
    assert!((bce_loss(&pred, &gt).unwrap() - sum / 16.0).abs() < 1e-10);
}

#[test]
fn bce_at_clamp_bounds() {
    let gt = tube(6, 6, 3, 2, 0, 6);
    let exact = gt.to_image();
    let v = bce_loss(&exact, &gt).unwrap();
    assert!(v > 0.0 && v < 1e-5, "{v}");
    let worst = bce_loss(&gt.not().to_image(), &gt).unwrap();
    assert!(worst <= -(1e-7f64).ln() + 1e-9);
}

#[test]
fn soft_skeleton_examples() {
    assert!(soft_skeleton(&Image::zeros(8, 8), &k(3)).unwrap().data().iter().all(|&v| v == 0.0));
    let dot = Image::from_fn(7, 7, |y, x| if y == 3 && x == 3 { 1.0 } else { 0.0 });
    let s = soft_skeleton(&dot, &k(3)).unwrap();
    assert_eq!(s.get(3, 3), 1.0);

    let bar = tube(15, 40, 7, 5, 5, 35);
    let soft = soft_skeleton(&bar.to_image(), &k(5)).unwrap();
    let support = soft.threshold(0.0);
    let near_hard = dilate(&hard_skeleton(&bar), 1.5).unwrap();
    assert!(support.is_subset_of(&near_hard));
    assert!(support.is_subset_of(&bar));
}

#[test]
fn cldice_examples() {
    let t = tube(20, 40, 10, 3, 4, 36).to_image();
    assert!(soft_cldice_loss(&t, &t, &k(3)).unwrap() < 1e-6);
    let a = tube(20, 40, 4, 3, 2, 12).to_image();
    let b = tube(20, 40, 15, 3, 25, 38).to_image();
    assert!(soft_cldice_loss(&a, &b, &k(3)).unwrap() > 0.9);

    let gt = tube(20, 40, 10, 1, 4, 36);
    let gapped = cut(&gt, 0..20, 19..21);
    let whole = soft_cldice_loss(&gt.to_image(), &gt.to_image(), &k(3)).unwrap();
    let broken = soft_cldice_loss(&gapped.to_image(), &gt.to_image(), &k(3)).unwrap();
    assert!(broken > whole);
}

#[test]
fn total_loss_examples() {
    let (pred, gt) = random_loss_instance(5, 10, 10);
    let mask = gt.threshold(0.5);
    let cfg = k(3);
    let dice = soft_dice_loss(&pred, &gt).unwrap();
    assert_eq!(total_loss(&pred, &gt, &mask, &w(1.0, 0.0, 0.0), &cfg).unwrap(), dice);
    assert_eq!(total_loss(&pred, &gt, &mask, &w(0.0, 0.0, 0.0), &cfg).unwrap(), 0.0);
    let sum = dice + bce_loss(&pred, &mask).unwrap() + soft_cldice_loss(&pred, &gt, &cfg).unwrap();
    assert!((total_loss(&pred, &gt, &mask, &w(1.0, 1.0, 1.0), &cfg).unwrap() - sum).abs() < 1e-12);
    assert!(LossWeights::new(-1.0, 0.0, 0.0).is_err());
    assert!(SoftSkeletonConfig { iterations: 0 }.validate().is_err());
}

#[test]
fn gradient_check_examples() {
    let (pred, gt) = random_loss_instance(7, 12, 12);
    let bce = gradcheck_losses(&pred, &gt, &w(0.0, 1.0, 0.0), &k(3)).unwrap();
    assert!(bce.max_rel_error < 1e-6, "{bce:?}");
    assert_eq!(bce.skipped, 0);
    let dice = gradcheck_losses(&pred, &gt, &w(1.0, 0.0, 0.0), &k(3)).unwrap();
    assert!(dice.max_rel_error < 1e-5, "{dice:?}");
    let all = gradcheck_losses(&pred, &gt, &w(1.0, 1.0, 1.0), &k(2)).unwrap();
    assert!(all.max_rel_error < 1e-2, "{all:?}");
    assert!(all.checked > all.skipped);
}

#[test]
fn cldice_gradient_on_five_seeds() {
    for seed in 0..5 {
        let (pred, gt) = random_loss_instance(seed, 12, 12);
        let r = gradcheck_losses(&pred, &gt, &w(0.0, 0.0, 1.0), &k(3)).unwrap();
        assert!(r.max_rel_error < 1e-2, "seed {seed}: {r:?}");
    }
}

#[test]
fn perfect_prediction_scores_zero() {
    let m = tube(16, 30, 8, 3, 3, 27).or(&tube(16, 30, 3, 1, 10, 20)).unwrap();
    let img = m.to_image();
    assert!(soft_dice_loss(&img, &img).unwrap() < 1e-6);
    assert!(soft_cldice_loss(&img, &img, &k(3)).unwrap() < 1e-6);
}

#[test]
fn thin_breaks_cost_more_than_thick_erosion() {
    let thin = tube(40, 60, 10, 3, 5, 55);
    let thick = tube(40, 60, 28, 11, 5, 55);
    let gt = thin.or(&thick).unwrap();
    // nine pixels each: a full cut of the thin tube, an interior notch of the thick one
    let broken = cut(&gt, 9..12, 29..32);
    let notched = cut(&gt, 24..27, 29..32);
    assert_eq!(broken.count(), notched.count());
    let cfg = k(10);
    let g = gt.to_image();
    let lb = soft_cldice_loss(&broken.to_image(), &g, &cfg).unwrap();
    let ln = soft_cldice_loss(&notched.to_image(), &g, &cfg).unwrap();
    assert!(lb > ln, "broken {lb} vs notched {ln}");
}

fn image_strategy(h: usize, w: usize) -> impl Strategy<Value = Image> {
    proptest::collection::vec(0.0f64..=1.0, h * w).prop_map(move |d| Image::new(h, w, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn component_bounds(pred in image_strategy(8, 8), gt in image_strategy(8, 8)) {
        let mask = gt.threshold(0.5);
        let c = loss_components(&pred, &gt, &mask, &LossWeights::default(), &k(3)).unwrap();
        prop_assert!((0.0..=1.0).contains(&c.dice));
        prop_assert!((0.0..=1.0).contains(&c.cldice));
        prop_assert!(c.bce >= 0.0 && c.bce <= -(1e-7f64).ln() + 1e-9);
        let s = soft_skeleton(&pred, &k(3)).unwrap();
        prop_assert!(s.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn total_is_linear_in_weights(seed in 0u64..1000, a in 0.0f64..5.0,
                                  l1 in 0.0f64..2.0, l2 in 0.0f64..2.0, l3 in 0.0f64..2.0) {
        let (pred, gt) = random_loss_instance(seed, 8, 8);
        let mask = gt.threshold(0.5);
        let base = w(l1, l2, l3);
        let t = total_loss(&pred, &gt, &mask, &base, &k(3)).unwrap();
        let ts = total_loss(&pred, &gt, &mask, &base.scaled(a), &k(3)).unwrap();
        prop_assert!((ts - a * t).abs() <= 1e-12 * (1.0 + ts.abs()));
    }

    #[test]
    fn binary_skeleton_stays_inside(mask in proptest::collection::vec(proptest::bool::weighted(0.4), 100)) {
        let m = BinaryMask::new(10, 10, mask).unwrap();
        let s = soft_skeleton(&m.to_image(), &k(3)).unwrap();
        prop_assert!(s.threshold(0.0).is_subset_of(&m));
    }
}
