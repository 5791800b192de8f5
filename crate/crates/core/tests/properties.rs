use std::collections::BTreeMap;

use lmconf_core::dataio::{decode_bundle, parse_annotations_json, GroupSpec};
use lmconf_core::descriptors::{dense_sift, hog, lbp_hist, pca_fit, DescriptorConfig, PatchSize};
use lmconf_core::image::{
    distort, extract_patch, normalize_face, patch_side, DistortionParams, GrayImage, CANONICAL_EYE_LEFT,
    CANONICAL_EYE_RIGHT, CANVAS_SIZE,
};
use lmconf_core::metrics::{self, confidence, mae, r2, OperatingPoint};
use lmconf_core::perturb::{perturb_individual, PerturbSpec};
use lmconf_core::pipeline::{expected_time, TradeoffReport, TradeoffSample};
use lmconf_core::svm::{kernel_matrix, svr_fit, KernelSpec, SolverParams};
use lmconf_core::{Landmark, LandmarkSet, Point};
use proptest::prelude::*;

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig::with_cases(cases)
}

fn patch(size: usize, lo: f64, hi: f64) -> impl Strategy<Value = GrayImage> {
    prop::collection::vec(lo..hi, size * size).prop_map(move |d| GrayImage::new(size, size, d).unwrap())
}

fn landmark_set() -> impl Strategy<Value = LandmarkSet> {
    prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 7)
        .prop_map(|pts| LandmarkSet::from_pairs(Landmark::ALL.iter().zip(pts).map(|(l, (x, y))| (*l, Point::new(x, y)))))
}

proptest! {
    #![proptest_config(cfg(200))]

    #[test]
    fn normalisation_maps_eyes_to_canonical(
        cx in 80.0f64..176.0, cy in 80.0f64..176.0, dist in 15.0f64..80.0, angle in -3.1f64..3.1,
    ) {
        let img = GrayImage::filled(256, 256, 100.0);
        let (hx, hy) = (0.5 * dist * angle.cos(), 0.5 * dist * angle.sin());
        let l = Point::new(cx - hx, cy - hy);
        let r = Point::new(cx + hx, cy + hy);
        let face = normalize_face(&img, l, r).unwrap();
        let (a, b) = (face.to_canvas(l), face.to_canvas(r));
        prop_assert!(a.distance(CANONICAL_EYE_LEFT) < 0.5);
        prop_assert!(b.distance(CANONICAL_EYE_RIGHT) < 0.5);
        prop_assert_eq!(face.canvas.width(), CANVAS_SIZE);
    }

    #[test]
    fn confidence_is_decreasing_and_scale_free(d in 0.0f64..1.0, step in 1e-6f64..0.5, sigma in 0.01f64..1.0) {
        let c0 = confidence(d, sigma).unwrap().value();
        let c1 = confidence(d + step, sigma).unwrap().value();
        prop_assert!(c1 < c0 || c1 == f64::MIN_POSITIVE);
        prop_assert!(c1 <= c0);
        let unit = confidence(d / sigma, 1.0).unwrap().value();
        prop_assert!((c0 - unit).abs() <= 1e-12);
    }

    #[test]
    fn mae_is_symmetric_and_translation_invariant(a in landmark_set(), b in landmark_set(), dx in -50.0f64..50.0, dy in -50.0f64..50.0) {
        let m = mae(&a, &b).unwrap();
        prop_assert!((m - mae(&b, &a).unwrap()).abs() <= 1e-12);
        let shift = |s: &LandmarkSet| LandmarkSet::from_pairs(s.iter().map(|(l, p)| (l, Point::new(p.x + dx, p.y + dy))));
        prop_assert!((m - mae(&shift(&a), &shift(&b)).unwrap()).abs() <= 1e-9);
        prop_assert!(m >= 0.0);
    }

    #[test]
    fn r2_bounded_and_affine_invariant(
        y in prop::collection::vec(-10.0f64..10.0, 5..40),
        noise in prop::collection::vec(-3.0f64..3.0, 40),
        a in 0.1f64..10.0, b in -5.0f64..5.0,
    ) {
        let y_hat: Vec<f64> = y.iter().zip(&noise).map(|(v, n)| v + n).collect();
        if let Ok(r) = r2(&y, &y_hat) {
            prop_assert!(r <= 1.0);
            let ys: Vec<f64> = y.iter().map(|v| a * v + b).collect();
            let hs: Vec<f64> = y_hat.iter().map(|v| a * v + b).collect();
            prop_assert!((r - r2(&ys, &hs).unwrap()).abs() <= 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(cfg(64))]

    #[test]
    fn tuned_threshold_keeps_95_percent_and_curves_are_monotone(
        gt in prop::collection::vec(0.0f64..1.0, 40..200),
        noise in prop::collection::vec(-0.4f64..0.4, 200),
        seed in 0u64..1000,
    ) {
        let pred: Vec<f64> = gt.iter().zip(&noise).map(|(g, n)| (g + n).clamp(0.0, 1.0)).collect();
        let op = OperatingPoint::default();
        match metrics::true_correct95(&pred, &gt, &op, 0.2, seed) {
            Ok(rep) => {
                prop_assert!(rep.correct_marked_correct_rate >= 0.95);
                for w in rep.curve.windows(2) {
                    prop_assert!(w[1].detection_rate >= w[0].detection_rate);
                    prop_assert!(w[1].retention_rate <= w[0].retention_rate);
                }
            }
            Err(metrics::MetricsError::DegenerateLabels(_)) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn zero_distortion_is_identity(img in patch(24, 0.0, 255.0), seed in any::<u64>()) {
        let p = DistortionParams::new(0.0, 0.0, 0.0, 0.0, seed).unwrap();
        prop_assert_eq!(distort(&img, &p).unwrap(), img);
    }

    #[test]
    fn patch_dimensions_depend_on_size_only(eighths in 1u8..=4, cx in 60.0f64..160.0, cy in 60.0f64..160.0) {
        let img = GrayImage::from_fn(200, 200, |x, y| ((x * 7 + y * 3) % 255) as f64);
        let face = normalize_face(&img, Point::new(70.0, 80.0), Point::new(130.0, 80.0)).unwrap();
        let size = PatchSize::eighths(eighths).fraction();
        let p = extract_patch(&face, Point::new(cx, cy), size).unwrap();
        prop_assert_eq!((p.width(), p.height()), (patch_side(size), patch_side(size)));
    }

    #[test]
    fn lbp_invariant_to_increasing_remaps(img in patch(32, 0.0, 255.0), gamma in 0.3f64..3.0, gain in 0.1f64..1.0, offset in 0.0f64..20.0) {
        // stays inside [0, 255], so the pixel clamp never creates ties
        let remapped = img.map(|v| offset + gain * (255.0 - offset) * (v / 255.0).powf(gamma));
        for radius in [1, 2, 3] {
            let c = DescriptorConfig::lbp(PatchSize::eighths(2), 2, radius);
            prop_assert_eq!(lbp_hist(&img, &c).unwrap(), lbp_hist(&remapped, &c).unwrap());
        }
    }

    #[test]
    fn gradient_descriptors_ignore_additive_shifts(img in patch(32, 60.0, 195.0), shift in -50.0f64..50.0) {
        let shifted = img.map(|v| v + shift);
        let pairs = [
            (hog(&img, &DescriptorConfig::hog(PatchSize::eighths(2), 4, 8)).unwrap(),
             hog(&shifted, &DescriptorConfig::hog(PatchSize::eighths(2), 4, 8)).unwrap()),
            (dense_sift(&img, &DescriptorConfig::sift(PatchSize::eighths(2), 2)).unwrap(),
             dense_sift(&shifted, &DescriptorConfig::sift(PatchSize::eighths(2), 2)).unwrap()),
        ];
        for (a, b) in pairs {
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn pca_reconstruction_error_never_grows_with_k(
        data in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 12), 8..30),
        probe in prop::collection::vec(-5.0f64..5.0, 12),
    ) {
        let full = pca_fit(&data, 12).unwrap();
        let mut last = f64::INFINITY;
        for k in 0..=full.k() {
            let m = full.truncated(k);
            let rec = m.reconstruct(&m.project(&probe).unwrap()).unwrap();
            let err: f64 = rec.iter().zip(&probe).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            prop_assert!(err <= last + 1e-9);
            last = err;
        }
        for i in 0..full.k() {
            for j in 0..full.k() {
                let d: f64 = full.component(i).iter().zip(full.component(j)).map(|(a, b)| a * b).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                prop_assert!((d - expected).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn perturbation_is_seeded_and_nonnegative(seed in any::<u64>(), fs in 20.0f64..200.0) {
        let gt = LandmarkSet::from_pairs(Landmark::ALL.iter().enumerate().map(|(i, l)| (*l, Point::new(i as f64 * 10.0, 50.0))));
        let spec = PerturbSpec::individual(seed);
        let a = perturb_individual(&gt, &spec, fs);
        prop_assert_eq!(&a, &perturb_individual(&gt, &spec, fs));
        let mut distinct: Vec<String> = a.iter().map(|r| format!("{:?}", r)).collect();
        distinct.sort();
        distinct.dedup();
        prop_assert!(distinct.len() >= spec.replicas_per_face - 1);
        for r in &a {
            for l in Landmark::ALL {
                if let Some(d) = r.distance(l) {
                    prop_assert!(d >= 0.0);
                }
            }
        }
    }

    #[test]
    fn group_averaging_ignores_index_order(seed in any::<u64>()) {
        use rand::{seq::SliceRandom, Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Option<Point>> = (0..20).map(|_| Some(Point::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)))).collect();
        let mut groups = BTreeMap::new();
        groups.insert(Landmark::EyeL, (0..7).collect::<Vec<_>>());
        groups.insert(Landmark::NoseC, (7..20).collect::<Vec<_>>());
        let a = GroupSpec { n_points: 20, groups: groups.clone() };
        for g in groups.values_mut() {
            g.shuffle(&mut rng);
        }
        let b = GroupSpec { n_points: 20, groups };
        let (la, lb) = (a.apply(&points), b.apply(&points));
        for l in [Landmark::EyeL, Landmark::NoseC] {
            prop_assert!(la.get(l).unwrap().distance(lb.get(l).unwrap()) <= 1e-9);
        }
    }

    #[test]
    fn malformed_inputs_are_typed_errors(bytes in prop::collection::vec(any::<u8>(), 0..256), text in ".{0,200}") {
        let mut framed = b"LMCF".to_vec();
        framed.extend(&bytes);
        prop_assert!(decode_bundle(&bytes).is_err() || bytes.starts_with(b"LMCF"));
        let _ = decode_bundle(&framed);
        let _ = parse_annotations_json(&text, std::path::Path::new("fuzz.json"));
    }

    #[test]
    fn tradeoff_time_identity_and_monotone_fraction(
        conf in prop::collection::vec(0.0f64..1.0, 1..60),
        t_fast in 0.1f64..5.0, t_robust in 1.0f64..30.0,
    ) {
        let samples: Vec<TradeoffSample> = conf.iter().enumerate().map(|(i, &c)| TradeoffSample {
            face_id: format!("f{i}"),
            confidence: c,
            fast_mae: 10.0 + i as f64,
            robust_mae: 2.0,
            fast_correct: Some(i % 2 == 0),
            robust_correct: Some(true),
        }).collect();
        let report = TradeoffReport { t_fast, t_robust, samples: samples.clone(), curve: Vec::new() };
        let mut last = -1.0;
        for k in 0..=20 {
            let t = k as f64 / 20.0;
            let row = report.at(t);
            let flagged = samples.iter().filter(|s| metrics::is_flagged(s.confidence, t)).count();
            let f = flagged as f64 / samples.len() as f64;
            prop_assert_eq!(row.recompute_fraction, f);
            prop_assert_eq!(row.time_s, expected_time(t_fast, t_robust, f));
            prop_assert!(row.recompute_fraction >= last);
            last = row.recompute_fraction;
        }
        let all = report.at(1.0);
        prop_assert_eq!(all.mae_px, 2.0);
        prop_assert_eq!(all.accuracy, Some(1.0));
        let fast_only = samples.iter().filter(|s| s.confidence > 0.0).count() == samples.len();
        if fast_only {
            let none = report.at(0.0);
            prop_assert_eq!(none.recompute_fraction, 0.0);
            let mean = samples.iter().map(|s| s.fast_mae).sum::<f64>() / samples.len() as f64;
            prop_assert!((none.mae_px - mean).abs() <= 1e-9);
        }
    }
}

fn svr_problem() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (3usize..15, 1usize..4).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), n),
            prop::collection::vec(-1.0f64..1.0, n),
        )
    })
}

proptest! {
    #![proptest_config(cfg(48))]

    #[test]
    fn kernel_matrices_are_symmetric_with_unit_rbf_diagonal((x, _) in svr_problem(), gamma in 0.01f64..3.0) {
        for k in [KernelSpec::Rbf { gamma: Some(gamma) }, KernelSpec::Linear] {
            let m = kernel_matrix(&k, &x);
            for i in 0..x.len() {
                for j in 0..x.len() {
                    prop_assert_eq!(m[i][j], m[j][i]);
                }
                if matches!(k, KernelSpec::Rbf { .. }) {
                    prop_assert_eq!(m[i][i], 1.0);
                }
            }
        }
    }

    #[test]
    fn svr_fits_meet_kkt_and_ignore_row_order((x, y) in svr_problem(), c in 0.1f64..3.0, eps in 0.01f64..0.3, rot in 0usize..15) {
        let p = SolverParams::default();
        let k = KernelSpec::rbf();
        let m = svr_fit(&x, &y, c, eps, &k, &p).unwrap();
        prop_assert!(m.meta.kkt_gap <= 1e-3);
        let r = rot % x.len();
        let (mut xr, mut yr) = (x.clone(), y.clone());
        xr.rotate_left(r);
        yr.rotate_left(r);
        let mr = svr_fit(&xr, &yr, c, eps, &k, &p).unwrap();
        for xi in &x {
            prop_assert_eq!(m.predict(xi).unwrap().to_bits(), mr.predict(xi).unwrap().to_bits());
        }
    }

    #[test]
    fn svr_scales_with_the_target((x, y) in svr_problem(), a in 0.2f64..5.0) {
        let p = SolverParams { tolerance: 1e-9, ..SolverParams::default() };
        let k = KernelSpec::Rbf { gamma: Some(0.5) };
        let m = svr_fit(&x, &y, 1.0, 0.05, &k, &p).unwrap();
        let ys: Vec<f64> = y.iter().map(|v| a * v).collect();
        let ms = svr_fit(&x, &ys, a, a * 0.05, &k, &p).unwrap();
        for xi in &x {
            prop_assert!((a * m.predict(xi).unwrap() - ms.predict(xi).unwrap()).abs() <= 1e-6);
        }
    }
}
