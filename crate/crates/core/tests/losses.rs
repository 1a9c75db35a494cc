mod common;

use common::*;
use facegen_core::losses::{attribute_loss_with, perceptual_distance, tv_map};
use facegen_core::{
    attribute_loss, identity_loss, make_seeded_network, perceptual_loss, total_objective, tv_loss, Arch, Guide, Image,
    Mask, NetworkSpec, ObjectiveConfig,
};
use proptest::prelude::*;

fn tiny_a() -> NetworkSpec<f64> {
    make_seeded_network(42, &Arch::tiny_a()).unwrap()
}

/// `½ Σ (relu(φ(a)) − relu(φ(b)))² / N` through the naive forward oracle.
fn oracle_perceptual(net: &NetworkSpec<f64>, layer: &str, a: &Image<f64>, b: &Image<f64>) -> f64 {
    let fa = flatten(&naive_forward(net, a, layer));
    let fb = flatten(&naive_forward(net, b, layer));
    let sq: f64 = fa.iter().zip(&fb).map(|(x, y)| (x.max(0.0) - y.max(0.0)).powi(2)).sum();
    0.5 * sq / fa.len() as f64
}

fn oracle_tv(img: &Image<f64>, beta: f64) -> f64 {
    let (h, w) = img.dims();
    let mut total = 0.0;
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let v = img.get(y, x, c);
                let dy = if y + 1 < h { img.get(y + 1, x, c) - v } else { 0.0 };
                let dx = if x + 1 < w { img.get(y, x + 1, c) - v } else { 0.0 };
                total += (dy * dy + dx * dx).powf(beta / 2.0);
            }
        }
    }
    total
}

#[test]
fn perceptual_value_matches_oracle() {
    let net = tiny_a();
    let a = seeded_image(1, 16, 16);
    let b = seeded_image(2, 16, 16);
    for layer in ["conv1_1", "relu1_1", "pool1", "conv2_1", "relu2_1"] {
        let got = perceptual_loss(&net, layer, &a, &b).unwrap().value;
        let want = oracle_perceptual(&net, layer, &a, &b);
        assert!(rel_err(got, want, 1e-15) < 1e-10, "{layer}: {got} vs {want}");
        assert_eq!(perceptual_distance(&net, layer, &a, &b).unwrap(), got);
    }
}

#[test]
fn perceptual_of_identical_images_is_zero() {
    let net = tiny_a();
    let a = seeded_image(3, 16, 16);
    let l = perceptual_loss(&net, "relu2_1", &a, &a).unwrap();
    assert_eq!(l.value, 0.0);
    assert!(l.gradient.as_slice().iter().all(|&g| g == 0.0));
}

#[test]
fn perceptual_gradient_matches_central_differences() {
    let net = tiny_a();
    let t = uniform_image(4, 16, 16);
    let r = uniform_image(5, 16, 16);
    for layer in ["conv1_1", "relu2_1"] {
        let analytic = perceptual_loss(&net, layer, &t, &r).unwrap().gradient;
        let numeric = central_gradient(&t, 1e-3, |im| perceptual_loss(&net, layer, im, &r).unwrap().value);
        let kinks = kink_coordinates(&t, 1e-3, |im| activation_signature(&net, im, layer));
        let rep = compare_gradients_with_kinks(analytic.as_slice(), &numeric, 1e-4, &kinks);
        assert!(rep.frac_within >= 0.99, "{layer}: {}%", rep.frac_within * 100.0);
        assert!(rep.worst_smooth < 1e-4, "{layer}: worst away from kinks {}", rep.worst_smooth);
    }
}

#[test]
fn perceptual_value_is_symmetric() {
    let net = tiny_a();
    let a = seeded_image(6, 16, 16);
    let b = seeded_image(7, 16, 16);
    for layer in ["conv1_1", "relu2_1"] {
        let ab = perceptual_loss(&net, layer, &a, &b).unwrap().value;
        let ba = perceptual_loss(&net, layer, &b, &a).unwrap().value;
        assert!((ab - ba).abs() <= 1e-15 * ab.abs());
    }
}

#[test]
fn identity_loss_is_perceptual_loss() {
    let net = tiny_a();
    let a = seeded_image(8, 16, 16);
    let b = seeded_image(9, 16, 16);
    assert_eq!(
        identity_loss(&net, "relu2_1", &a, &b).unwrap(),
        perceptual_loss(&net, "relu2_1", &a, &b).unwrap()
    );
}

#[test]
fn tv_matches_oracle_and_central_differences() {
    // Unclamped, so no two neighbours coincide and β < 2 stays differentiable.
    let img = Image::from_fn(8, 8, |y, x, c| 0.5 + 0.3 * ((1.3 * y as f64 + 0.7 * x as f64 + c as f64).sin() + 0.01 * (x * x) as f64));
    // Away from β = 2 the third derivative is nonzero, so a shorter step keeps
    // the truncation error below the tolerance.
    for (beta, eps, tol) in [(2.0, 1e-3, 1e-6), (3.0, 1e-5, 1e-4), (1.5, 1e-6, 1e-4)] {
        let l = tv_loss(&img, beta).unwrap();
        assert!(rel_err(l.value, oracle_tv(&img, beta), 1e-15) < 1e-12);
        let numeric = central_gradient(&img, eps, |im| tv_loss(im, beta).unwrap().value);
        let rep = compare_gradients(l.gradient.as_slice(), &numeric, tol);
        assert_eq!(rep.frac_within, 1.0, "beta {beta}: worst {}", rep.worst);
    }
}

#[test]
fn tv_of_two_pixels() {
    let map = facegen_core::FeatureMap::from_vec(1, 1, 2, vec![0.0, 1.0]).unwrap();
    let (v, g) = tv_map(&map, 2.0).unwrap();
    assert_eq!(v, 1.0);
    assert_eq!(g.as_slice(), &[-2.0, 2.0]);
}

#[test]
fn attribute_loss_is_weighted_sum_of_perceptual_terms() {
    let net = tiny_a();
    let t = seeded_image(11, 16, 16);
    let g1 = seeded_image(12, 16, 16);
    let g2 = seeded_image(13, 16, 16);
    let guides = [Guide::new(&g1, 0.3), Guide::new(&g2, 0.7)];
    let got = attribute_loss(&net, "relu2_1", &t, &guides, None).unwrap();
    let p1 = perceptual_loss(&net, "relu2_1", &t, &g1).unwrap();
    let p2 = perceptual_loss(&net, "relu2_1", &t, &g2).unwrap();
    assert!((got.value - (0.3 * p1.value + 0.7 * p2.value)).abs() < 1e-14);
    for i in 0..got.gradient.as_slice().len() {
        let want = 0.3 * p1.gradient.as_slice()[i] + 0.7 * p2.gradient.as_slice()[i];
        assert!((got.gradient.as_slice()[i] - want).abs() < 1e-12);
    }
}

#[test]
fn masked_attribute_loss_follows_masked_target() {
    let net = tiny_a();
    let t = seeded_image(14, 16, 16);
    let g = seeded_image(15, 16, 16);
    let mask = random_mask(3, 16, 16, 0.5);
    let guides = [Guide::new(&g, 1.0)];
    let got = attribute_loss(&net, "relu2_1", &t, &guides, Some(&mask)).unwrap();
    let masked_t = Image::from_fn(16, 16, |y, x, c| if mask.get(y, x) { t.get(y, x, c) } else { 0.0 });
    assert!(rel_err(got.value, oracle_perceptual(&net, "relu2_1", &masked_t, &g), 1e-15) < 1e-10);
    for y in 0..16 {
        for x in 0..16 {
            if !mask.get(y, x) {
                assert!(got.gradient.pixel(y, x).iter().all(|&v| v == 0.0));
            }
        }
    }
    // Guided images masked as well under the alternative reading.
    let both = attribute_loss_with(&net, "relu2_1", &t, &guides, Some(&mask), true).unwrap();
    let masked_g = Image::from_fn(16, 16, |y, x, c| if mask.get(y, x) { g.get(y, x, c) } else { 0.0 });
    assert!(rel_err(both.value, oracle_perceptual(&net, "relu2_1", &masked_t, &masked_g), 1e-15) < 1e-10);
}

#[test]
fn masked_gradient_matches_central_differences() {
    let net = tiny_a();
    let t = uniform_image(16, 16, 16);
    let g = uniform_image(17, 16, 16);
    let mask = random_mask(4, 16, 16, 0.6);
    let guides = [Guide::new(&g, 1.0)];
    let analytic = attribute_loss(&net, "relu2_1", &t, &guides, Some(&mask)).unwrap().gradient;
    let numeric = central_gradient(&t, 1e-3, |im| attribute_loss(&net, "relu2_1", im, &guides, Some(&mask)).unwrap().value);
    // The value does not depend on masked-off pixels, so both sides vanish there.
    let kinks = kink_coordinates(&t, 1e-3, |im| activation_signature(&net, &mask.apply(im).unwrap(), "relu2_1"));
    let rep = compare_gradients_with_kinks(analytic.as_slice(), &numeric, 1e-4, &kinks);
    assert!(rep.frac_within >= 0.99, "{}", rep.frac_within);
    assert!(rep.worst_smooth < 1e-4, "worst away from kinks {}", rep.worst_smooth);
}

#[test]
fn all_ones_and_all_zeros_masks() {
    let net = tiny_a();
    let t = seeded_image(18, 16, 16);
    let g = seeded_image(19, 16, 16);
    let guides = [Guide::new(&g, 1.0)];
    let plain = attribute_loss(&net, "relu2_1", &t, &guides, None).unwrap();
    let ones = attribute_loss(&net, "relu2_1", &t, &guides, Some(&Mask::full(16, 16))).unwrap();
    assert_eq!(plain, ones);
    let zeros = attribute_loss(&net, "relu2_1", &t, &guides, Some(&Mask::empty(16, 16))).unwrap();
    assert!(zeros.gradient.as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn guided_weights_must_sum_to_one() {
    let net = tiny_a();
    let t = seeded_image(20, 16, 16);
    let g = seeded_image(21, 16, 16);
    assert!(attribute_loss(&net, "relu2_1", &t, &[Guide::new(&g, 0.9)], None).is_err());
    assert!(attribute_loss(&net, "relu2_1", &t, &[], None).is_err());
    assert!(attribute_loss(&net, "relu2_1", &t, &[Guide::new(&g, 1.0)], Some(&Mask::full(8, 8))).is_err());
}

#[test]
fn objective_is_sum_of_components() {
    let net = tiny_a();
    let t = seeded_image(22, 16, 16);
    let r = seeded_image(23, 16, 16);
    let g = seeded_image(24, 16, 16);
    let guides = [Guide::new(&g, 1.0)];
    let mut cfg = ObjectiveConfig::new("relu2_1");
    cfg.lambda = 1.0;
    cfg.gamma = 0.1;
    let obj = total_objective(&net, &cfg, &t, &guides, &r, None).unwrap();
    let a = attribute_loss(&net, "relu2_1", &t, &guides, None).unwrap();
    let i = identity_loss(&net, "relu2_1", &t, &r).unwrap();
    let v = tv_loss(&t, 2.0).unwrap();
    assert_eq!((obj.attr, obj.id, obj.tv), (a.value, i.value, v.value));
    assert!((obj.total.value - (a.value + i.value + 0.1 * v.value)).abs() < 1e-10);
    for k in 0..t.as_slice().len() {
        let want = a.gradient.as_slice()[k] + i.gradient.as_slice()[k] + 0.1 * v.gradient.as_slice()[k];
        assert!((obj.total.gradient.as_slice()[k] - want).abs() < 1e-10);
    }

    cfg.lambda = 0.0;
    cfg.gamma = 0.0;
    let only_attr = total_objective(&net, &cfg, &t, &guides, &r, None).unwrap();
    assert_eq!(only_attr.total, a);
}

#[test]
fn objective_vanishes_at_the_reference() {
    let net = tiny_a();
    let r = seeded_image(25, 16, 16);
    let obj = total_objective(&net, &ObjectiveConfig::new("relu2_1"), &r, &[Guide::new(&r, 1.0)], &r, None).unwrap();
    assert_eq!(obj.total.value, 0.0);
}

#[test]
fn separate_identity_layer_is_honoured() {
    let net = tiny_a();
    let t = seeded_image(26, 16, 16);
    let r = seeded_image(27, 16, 16);
    let mut cfg = ObjectiveConfig::new("relu2_1");
    cfg.id_layer = Some("conv1_1".into());
    let obj = total_objective(&net, &cfg, &t, &[Guide::new(&r, 1.0)], &r, None).unwrap();
    assert_eq!(obj.id, identity_loss(&net, "conv1_1", &t, &r).unwrap().value);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn losses_are_nonnegative(sa in 0u64..500, sb in 0u64..500, beta in 1.0f64..4.0) {
        let net = tiny_a();
        let a = seeded_image(sa, 12, 12);
        let b = seeded_image(sb + 1000, 12, 12);
        prop_assert!(perceptual_loss(&net, "relu2_1", &a, &b).unwrap().value >= 0.0);
        prop_assert!(tv_loss(&a, beta).unwrap().value >= 0.0);
    }

    #[test]
    fn masked_gradient_support(seed in 0u64..500, density in 0.0f64..1.0) {
        let net = tiny_a();
        let t = seeded_image(seed, 12, 12);
        let g = seeded_image(seed + 1, 12, 12);
        let m = random_mask(seed, 12, 12, density);
        let l = attribute_loss(&net, "relu2_1", &t, &[Guide::new(&g, 1.0)], Some(&m)).unwrap();
        for y in 0..12 {
            for x in 0..12 {
                if !m.get(y, x) {
                    prop_assert!(l.gradient.pixel(y, x).iter().all(|&v| v == 0.0));
                }
            }
        }
    }
}
