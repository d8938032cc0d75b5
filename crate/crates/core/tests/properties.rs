use atac_core::atac::{correct, AtacParams};
use atac_core::attacks::{pgd_untargeted, PgdConfig};
use atac_core::augment::{suite, RealizedAug};
use atac_core::embedding::{drift_stats, normalize, normalize_vjp, Embedding};
use atac_core::encoder::{Architecture, EncoderParams};
use atac_core::eval::roc_auc;
use atac_core::head::{softmax, ZeroShotHead};
use atac_core::image::ImageTensor;
use atac_core::imgio::{format_labels, image_from_bytes, image_to_bytes, parse_labels};
use atac_core::rng::PrngStream;
use atac_core::store::EmbeddingStore;
use proptest::prelude::*;

fn unit(v: &[f64]) -> Option<Embedding> {
    normalize(v).ok()
}

fn vector(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, d)
}

fn image(c: usize, h: usize, w: usize) -> impl Strategy<Value = ImageTensor> {
    prop::collection::vec(0.0f64..=1.0, c * h * w)
        .prop_map(move |d| ImageTensor::new(c, h, w, d).unwrap())
}

fn brute_auc(clean: &[f64], adv: &[f64]) -> f64 {
    let mut s = 0.0;
    for a in adv {
        for c in clean {
            s += if a > c {
                1.0
            } else if a == c {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (clean.len() * adv.len()) as f64
}

proptest! {
    #[test]
    fn auc_matches_pair_count(
        clean in prop::collection::vec(0u8..12, 1..60),
        adv in prop::collection::vec(0u8..12, 1..60),
    ) {
        let c: Vec<f64> = clean.iter().map(|&v| v as f64 / 11.0).collect();
        let a: Vec<f64> = adv.iter().map(|&v| v as f64 / 11.0).collect();
        let auc = roc_auc(&c, &a).unwrap();
        prop_assert!((auc - brute_auc(&c, &a)).abs() < 1e-12);
        prop_assert!((auc + roc_auc(&a, &c).unwrap() - 1.0).abs() < 1e-12);
        // Strictly increasing transforms preserve ranks.
        let warp = |v: &f64| (3.0 * v).exp() - 7.0;
        let cw: Vec<f64> = c.iter().map(warp).collect();
        let aw: Vec<f64> = a.iter().map(warp).collect();
        prop_assert!((roc_auc(&cw, &aw).unwrap() - auc).abs() < 1e-12);
    }

    #[test]
    fn tau_is_bounded_and_order_free(
        f in vector(5),
        views in prop::collection::vec(vector(5), 2..6),
        rot in 0usize..6,
    ) {
        let Some(f) = unit(&f) else { return Ok(()) };
        let views: Vec<Embedding> = views.iter().filter_map(|v| unit(v)).collect();
        prop_assume!(views.len() >= 2);
        let a = drift_stats(f.as_slice(), &views).unwrap();
        prop_assert!(a.tau >= -1.0 - 1e-12 && a.tau <= 1.0 + 1e-12);
        let mut shuffled = views.clone();
        let n = shuffled.len();
        shuffled.rotate_left(rot % n);
        let b = drift_stats(f.as_slice(), &shuffled).unwrap();
        prop_assert!((a.tau - b.tau).abs() < 1e-12);
        prop_assert_eq!(a.degenerate, b.degenerate);
    }

    #[test]
    fn gate_is_monotone_in_threshold(
        f in vector(4),
        views in prop::collection::vec(vector(4), 5),
        lo in 0.0f64..1.0,
        hi in 0.0f64..1.0,
    ) {
        let Some(f) = unit(&f) else { return Ok(()) };
        let views: Vec<Embedding> = views.iter().filter_map(|v| unit(v)).collect();
        prop_assume!(views.len() == 5);
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        let base = AtacParams::default();
        let at_lo = correct(&f, &views, &base.with_tau_star(lo)).unwrap();
        let at_hi = correct(&f, &views, &base.with_tau_star(hi)).unwrap();
        prop_assert!(!at_hi.fired || at_lo.fired);
        let off = correct(&f, &views, &base.with_tau_star(1.0)).unwrap();
        prop_assert!(!off.fired);
        prop_assert_eq!(off.corrected, f.clone());
        prop_assert!((at_lo.corrected.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-500.0f64..500.0, 1..12)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn normalize_vjp_is_linear(v in vector(6), u1 in vector(6), u2 in vector(6), s in -3.0f64..3.0) {
        prop_assume!(v.iter().map(|x| x * x).sum::<f64>() > 1e-3);
        let combo: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a + s * b).collect();
        let lhs = normalize_vjp(&v, &combo);
        let (g1, g2) = (normalize_vjp(&v, &u1), normalize_vjp(&v, &u2));
        for i in 0..6 {
            prop_assert!((lhs[i] - g1[i] - s * g2[i]).abs() < 1e-9);
        }
        // The gradient of a unit-norm map is orthogonal to its input.
        let radial: f64 = g1.iter().zip(&v).map(|(a, b)| a * b).sum();
        prop_assert!(radial.abs() < 1e-9);
    }

    #[test]
    fn augmentation_vjp_is_the_adjoint(
        x in image(2, 6, 7),
        u in prop::collection::vec(-1.0f64..1.0, 84),
        degrees in -45.0f64..45.0,
        flip in any::<bool>(),
    ) {
        let aug = if flip { RealizedAug::Hflip } else { RealizedAug::Rotate { degrees } };
        let u = ImageTensor::from_raw(2, 6, 7, u);
        let zero = ImageTensor::zeros(2, 6, 7);
        let mut ax = aug.apply(&x).unwrap();
        ax.add_scaled(&aug.apply(&zero).unwrap(), -1.0);
        let back = aug.vjp(&x, &u).unwrap();
        prop_assert!((ax.dot(&u) - x.dot(&back)).abs() < 1e-9);
    }

    #[test]
    fn image_bytes_round_trip(x in image(3, 4, 5)) {
        // Pixels are stored as f32: one trip rounds, later trips are exact.
        let once = image_from_bytes(&image_to_bytes(&x)).unwrap();
        prop_assert!(once.max_abs_diff(&x) < 1e-7);
        prop_assert_eq!(image_from_bytes(&image_to_bytes(&once)).unwrap(), once);
    }

    #[test]
    fn labels_round_trip(rows in prop::collection::vec((any::<u64>(), 0usize..1000), 0..30)) {
        prop_assert_eq!(parse_labels(&format_labels(&rows)).unwrap(), rows);
    }

    #[test]
    fn store_round_trip(vectors in prop::collection::vec(vector(3), 1..8)) {
        let mut store = EmbeddingStore::new(3);
        for (i, v) in vectors.iter().enumerate() {
            let Some(e) = unit(v) else { continue };
            store.insert(i as u64, "orig", e.as_slice()).unwrap();
            store.insert(i as u64, "hflip", e.as_slice()).unwrap();
        }
        let back = EmbeddingStore::from_bytes(&store.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), store.to_bytes());
        prop_assert_eq!(back.len(), store.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pgd_stays_in_budget(
        x in image(3, 8, 8),
        eps_255 in 1u32..64,
        seed in any::<u64>(),
        label in 0usize..3,
    ) {
        let enc = EncoderParams::random(Architecture::Mlp1, (3, 8, 8), 6, 10, seed).unwrap();
        let mut rng = PrngStream::derive(seed, 1);
        let rows = (0..3).map(|_| normalize(&(0..6).map(|_| rng.normal()).collect::<Vec<_>>()).unwrap()).collect();
        let head = ZeroShotHead::unlabeled(rows, 0.05).unwrap();
        let eps = eps_255 as f64 / 255.0;
        let cfg = PgdConfig { epsilon: eps, gamma: eps / 4.0, steps: 5, random_start: true };
        let out = pgd_untargeted(&x, label, &enc, &head, &cfg, &mut rng).unwrap();
        prop_assert!(out.x_adv.max_abs_diff(&x) <= eps + 1e-9);
        prop_assert!(out.x_adv.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn deterministic_suites_realize_identically(seed_a in any::<u64>(), seed_b in any::<u64>()) {
        let s = suite("default").unwrap();
        let a = s.realize(&mut PrngStream::derive(seed_a, 0)).unwrap();
        let b = s.realize(&mut PrngStream::derive(seed_b, 0)).unwrap();
        prop_assert_eq!(a, b);
    }
}
