use proptest::prelude::*;
use valley_core::landscape::{FnLandscape, Landscape};
use valley_core::nn::{self, Architecture, Dataset, DatasetConfig, Mode, ParamGroupMask};
use valley_core::probes::{self, Direction, Provenance, SampleKind};
use valley_core::sgd_sim::{run_sgd, NoiseKind, SgdConfig};
use valley_core::valley_models::{build_valley_from_spec, Loss1D, PiecewiseValley1D, SeparableValleyND};
use valley_core::{AsymmetrySpec, GradientBounds};

fn archs() -> impl Strategy<Value = Architecture> {
    (prop::collection::vec(1usize..6, 1..4), any::<bool>(), 2usize..4).prop_map(|(hidden, bn, classes)| {
        let mut widths = vec![2];
        widths.extend(hidden);
        widths.push(classes);
        Architecture::mlp(&widths, bn).unwrap()
    })
}

fn batch(n: usize, seed: u64) -> nn::Batch {
    Dataset::generate(DatasetConfig {
        n_train: n,
        n_heldout: 1,
        seed,
        ..Default::default()
    })
    .unwrap()
    .train
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn group_masks_partition(arch in archs(), seed in any::<u64>()) {
        let layout = arch.layout();
        let bn = ParamGroupMask::bn(&layout);
        let rest = ParamGroupMask::non_bn(&layout);
        prop_assert_eq!(bn.count() + rest.count(), layout.len());
        prop_assert!(bn.bits.iter().zip(&rest.bits).all(|(a, b)| a != b));
        prop_assert_eq!(&bn.complement().complement(), &bn);
        prop_assert_eq!(ParamGroupMask::full(&layout).count(), layout.len());
        match ParamGroupMask::matched_non_bn(&layout, seed) {
            Ok(m) => {
                prop_assert_eq!(m.count(), bn.count());
                prop_assert!(m.bits.iter().zip(&rest.bits).all(|(m, r)| !m || *r));
            }
            Err(_) => prop_assert!(bn.count() == 0 || bn.count() > rest.count()),
        }
    }

    #[test]
    fn slices_of_linear_losses_are_linear(
        a in prop::collection::vec(-2.0f64..2.0, 5),
        center in prop::collection::vec(-1.0f64..1.0, 5),
        seed in any::<u64>(),
    ) {
        let coef = a.clone();
        let model = FnLandscape::new(5, move |x: &[f64]| x.iter().zip(&coef).map(|(x, c)| x * c).sum());
        let u = probes::sample_direction(SampleKind::Gaussian, 5, seed, None).unwrap();
        let s = probes::slice(&model, &center, &u, (-2.0, 2.0), 21).unwrap();
        let base = model.loss(&center);
        let slope: f64 = a.iter().zip(&u.vec).map(|(a, u)| a * u).sum();
        for (l, v) in s.offsets.iter().zip(&s.values) {
            prop_assert!((v - (base + l * slope)).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_hits_endpoints_exactly(
        a in prop::collection::vec(-3.0f64..3.0, 4),
        b in prop::collection::vec(-3.0f64..3.0, 4),
        steps in 2usize..40,
    ) {
        let model = FnLandscape::new(4, |x: &[f64]| x.iter().map(|v| v.sin() + v * v).sum());
        let it = probes::interpolate(&model, &a, &b, probes::INTERPOLATION_RANGE, steps, None::<&FnLandscape<fn(&[f64]) -> f64>>).unwrap();
        let at = |t: f64| it.profile.offsets.iter().position(|x| *x == t).map(|i| it.profile.values[i]);
        prop_assert_eq!(at(0.0), Some(model.loss(&a)));
        prop_assert_eq!(at(1.0), Some(model.loss(&b)));
    }

    #[test]
    fn separable_valleys_look_the_same_everywhere_orthogonally(
        r in 1.0f64..4.0, p in 0.01f64..0.5, c in 2.5f64..20.0, zf in 0.1f64..0.9, seed in any::<u64>(),
    ) {
        let spec = AsymmetrySpec::new(r, p, c, zf * r).unwrap();
        let axis = build_valley_from_spec(&spec).unwrap().into();
        let v = SeparableValleyND::new(vec![axis], 6, seed).unwrap();
        let u = Direction::new(v.directions[0].clone(), Provenance::Custom).unwrap();
        let rep = probes::verify_neighborhood_asymmetry(&v, &v.base, &u, &spec, 1.0, 10, seed, 32).unwrap();
        prop_assert_eq!(rep.holds_fraction, 1.0);
        prop_assert!(rep.shape_variance.iter().all(|x| *x < 1e-20));
    }

    #[test]
    fn gradients_stay_inside_their_bounds(
        a_plus in 0.05f64..1.0, shrink in 0.1f64..1.0, c in 1.5f64..40.0, w in -50.0f64..50.0, seed in any::<u64>(),
    ) {
        let b = GradientBounds::new(a_plus, a_plus * shrink, -c * a_plus, -c * a_plus * (1.0 + shrink), 0.0).unwrap();
        let v = PiecewiseValley1D::wobble(b, seed).unwrap();
        let g = v.slope(w);
        if w >= 0.0 {
            prop_assert!(b.b_plus <= g + 1e-12 && g <= b.a_plus + 1e-12);
        } else {
            prop_assert!(b.b_minus <= g + 1e-12 && g <= b.a_minus + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn backward_matches_finite_differences(arch in archs(), seed in any::<u64>(), n in 3usize..10) {
        let data = batch(n, seed);
        let params = nn::init_params(&arch, seed ^ 1);
        let g = nn::gradient_check(&arch, &params, &data, Mode::Train).unwrap();
        prop_assert!(g.max_rel_error < 1e-5, "{:?}", g);
    }

    #[test]
    fn batch_norm_output_is_standardized(seed in any::<u64>(), n in 4usize..40) {
        let arch = Architecture::parse("2-6-5-2+bn").unwrap();
        let params = nn::init_params(&arch, seed);
        let data = batch(n, seed ^ 7);
        for xhat in nn::normalized_activations(&arch, &params, &data).unwrap() {
            let width = xhat.len() / n;
            for j in 0..width {
                let col: Vec<f64> = (0..n).map(|i| xhat[i * width + j]).collect();
                let mean = col.iter().sum::<f64>() / n as f64;
                let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
                prop_assert!(mean.abs() < 1e-9);
                // eps keeps the variance just under one; a dead feature has
                // variance zero
                prop_assert!(var < 1.0 + 1e-9 && (var > 0.9 || var < 1e-9), "var {}", var);
            }
        }
    }
}

#[test]
fn reruns_are_bitwise_identical() {
    let v = PiecewiseValley1D::tight(0.1, -1.0).unwrap();
    let cfg = SgdConfig {
        eta: 0.1,
        nu: 0.05,
        noise_kind: NoiseKind::ClippedGaussian,
        steps: 5000,
        seed: 19,
        w_init: 0.3,
    };
    assert_eq!(run_sgd(&v, &cfg).unwrap(), run_sgd(&v, &cfg).unwrap());

    let arch = Architecture::parse("2-8-2+bn").unwrap();
    let data = Dataset::generate(DatasetConfig {
        n_train: 64,
        n_heldout: 32,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let tc = nn::TrainConfig {
        epochs: 5,
        batch_size: 16,
        seed: 4,
        swa: Some(nn::SwaConfig {
            start_epoch: 3,
            group: nn::SwaGroup::NonBn,
            mask_seed: 5,
        }),
        ..Default::default()
    };
    let a = nn::train(&arch, &data, &tc).unwrap();
    let b = nn::train(&arch, &data, &tc).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.swa_params, b.swa_params);
}

#[test]
fn reference_valley_values() {
    let v = PiecewiseValley1D::tight(0.1, -1.0).unwrap();
    assert_eq!(v.value(0.0), 0.0);
    assert!((v.value(2.0) - 0.2).abs() < 1e-15);
    assert!((v.value(-2.0) - 2.0).abs() < 1e-15);
    assert_eq!(v.slope(0.0), 0.1);
    assert_eq!(v.slope(-1.0), -1.0);
    assert!(v.loss(f64::NAN).is_err());
}
