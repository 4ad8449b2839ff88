use nalgebra::{Matrix2, Point2, Vector2, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::detector::{detect, DetectParams};
use crate::image::GrayImage;
use crate::projection::{project_point, unbiased_circle_centroid, Distortion, Intrinsics, Pose, TargetSpec};
use crate::uncertainty::CentroidMeasurement;
use crate::uncmap::UncertaintyMap;
use crate::Error;

fn target() -> TargetSpec {
    TargetSpec::new(3, 4, 50.0, 15.0).unwrap()
}

fn frontal_spec(distortion: Distortion) -> RenderSpec {
    let pose = Pose::new(Vector3::zeros(), Vector3::new(-75.0, -50.0, 500.0));
    RenderSpec::new(
        Intrinsics::new(600.0, 600.0, 600.0, 450.0),
        distortion,
        pose,
        target(),
        1200,
        900,
    )
}

fn tilted_spec() -> RenderSpec {
    let t = target();
    let pose = revolved_pose(&t, 400.0, Vector2::new(15.0, 20.0), Vector2::new(25.0, 35.0), 5.0);
    RenderSpec::new(
        Intrinsics::new(600.0, 600.0, 600.0, 450.0),
        Distortion::new(vec![-0.4]).unwrap(),
        pose,
        t,
        1200,
        900,
    )
}

/// Darkness-weighted centroid of the pixels within `radius` of `center`.
fn darkness_centroid(img: &GrayImage, center: Point2<f64>, radius: f64) -> Point2<f64> {
    let (mut w, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            if (Point2::new(x as f64, y as f64) - center).norm() <= radius {
                let v = BACKGROUND - img.get(x, y);
                w += v;
                sx += v * x as f64;
                sy += v * y as f64;
            }
        }
    }
    Point2::new(sx / w, sy / w)
}

#[test]
fn frontal_blobs_sit_at_projected_centers() {
    let spec = frontal_spec(Distortion::none());
    let r = render(&spec).unwrap();
    let grid = detect(&r.image, &spec.target, &DetectParams::default()).unwrap();
    for (i, m) in grid.measurements.iter().enumerate() {
        let c = project_point(&spec.intrinsics, &spec.distortion, &spec.pose, spec.target.center(i)).unwrap();
        assert!((m.p - c).norm() < 0.02, "circle {i}: {}", (m.p - c).norm());
        assert!((r.circles[i].centroid - c).norm() < 1e-9);
    }
}

#[test]
fn distorted_truth_differs_from_center_projection() {
    let spec = tilted_spec();
    let r = render(&spec).unwrap();
    let shift = r
        .circles
        .iter()
        .map(|c| (c.centroid - c.center_projection).norm())
        .fold(0.0, f64::max);
    assert!(shift > 0.05, "{shift}");
    for (i, c) in r.circles.iter().enumerate() {
        let direct = unbiased_circle_centroid(
            &spec.intrinsics,
            &spec.distortion,
            &spec.pose,
            spec.target.center(i),
            spec.target.radius,
        )
        .unwrap();
        assert!((c.centroid - direct).norm() < 1e-3);
    }
}

#[test]
fn gaussian_blurred_render_is_fully_detected() {
    let cfg = DatasetConfig {
        images: 4,
        ..DatasetConfig::default()
    };
    for (pose, _) in dataset_plan(&cfg).unwrap() {
        let spec = RenderSpec {
            blur: Blur::Gaussian { sigma: 3.0 },
            ..cfg.scenario.render_spec(pose)
        };
        let r = render(&spec).unwrap();
        let grid = detect(&r.image, &spec.target, &DetectParams::default()).unwrap();
        assert_eq!(grid.measurements.len(), 12);
    }
}

#[test]
fn rendering_is_deterministic() {
    let spec = RenderSpec {
        noise: 2.0,
        noise_seed: 9,
        ..tilted_spec()
    };
    let a = render(&spec).unwrap();
    let b = render(&spec).unwrap();
    assert_eq!(a, b);
    let c = render(&RenderSpec { noise_seed: 10, ..spec }).unwrap();
    assert_ne!(a.image, c.image);
}

#[test]
fn supersampling_converges() {
    let base = tilted_spec();
    let coarse = render(&base).unwrap();
    let fine = render(&RenderSpec {
        supersampling: 16,
        ..base.clone()
    })
    .unwrap();
    for (a, b) in coarse.circles.iter().zip(&fine.circles) {
        assert_eq!(a.centroid, b.centroid);
        let ca = darkness_centroid(&coarse.image, a.centroid, 30.0);
        let cb = darkness_centroid(&fine.image, b.centroid, 30.0);
        assert!((ca - cb).norm() < 0.005, "{}", (ca - cb).norm());
    }
}

#[test]
fn out_of_frame_circle_is_rejected() {
    let mut spec = frontal_spec(Distortion::none());
    spec.pose = Pose::new(Vector3::zeros(), Vector3::new(400.0, -50.0, 500.0));
    assert!(matches!(render(&spec), Err(Error::OutOfFrame(_))));
}

#[test]
fn low_supersampling_is_rejected() {
    let spec = RenderSpec {
        supersampling: 2,
        ..frontal_spec(Distortion::none())
    };
    assert!(render(&spec).is_err());
}

#[test]
fn blur_of_a_flat_image_is_flat() {
    let img = GrayImage::filled(40, 30, BACKGROUND);
    for blur in [
        Blur::Translation { dx: 3.0, dy: -2.0 },
        Blur::Rotation {
            degrees: 20.0,
            cx: 20.0,
            cy: 15.0,
        },
        Blur::Gaussian { sigma: 2.0 },
    ] {
        let out = apply_blur(&img, &blur);
        assert!(out.data().iter().all(|v| (v - BACKGROUND).abs() < 1e-9), "{blur:?}");
    }
}

#[test]
fn zero_motion_is_identity() {
    let img = GrayImage::from_fn(20, 20, |x, y| ((x * 7 + y * 13) % 50) as f64);
    assert_eq!(apply_blur(&img, &Blur::Translation { dx: 0.0, dy: 0.0 }), img);
    assert_eq!(apply_blur(&img, &Blur::None), img);
}

#[test]
fn translation_blur_averages_shifted_frames() {
    let img = GrayImage::from_fn(30, 5, |x, _| x as f64);
    let out = apply_blur(&img, &Blur::Translation { dx: 2.0, dy: 0.0 });
    // a linear ramp is preserved away from the border by symmetric averaging
    for x in 3..27 {
        assert!((out.get(x, 2) - x as f64).abs() < 1e-9);
    }
}

#[test]
fn sampled_poses_fit_and_alternate_shells() {
    let s = Scenario::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let poses = sample_poses(&s.intrinsics, &s.distortion, &s.target, s.width, s.height, &s.sampler, 8, &mut rng).unwrap();
    let mid = target_middle(&s.target);
    for (i, p) in poses.iter().enumerate() {
        assert!(pose_fits(&s.intrinsics, &s.distortion, &s.target, p, s.width, s.height, s.sampler.max_field, s.sampler.margin));
        let dist = (p.rotation_matrix() * mid + p.translation).norm();
        let shell = if i % 2 == 0 { s.sampler.near } else { s.sampler.far };
        assert!((dist / shell - 1.0).abs() <= s.sampler.jitter + 1e-12);
    }
    let mut again = ChaCha8Rng::seed_from_u64(1);
    let repeat = sample_poses(&s.intrinsics, &s.distortion, &s.target, s.width, s.height, &s.sampler, 8, &mut again).unwrap();
    assert_eq!(poses, repeat);
}

#[test]
fn impossible_sampler_fails() {
    let s = Scenario::default();
    let sampler = PoseSampler {
        near: 20.0,
        far: 20.0,
        ..PoseSampler::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!(sample_poses(&s.intrinsics, &s.distortion, &s.target, s.width, s.height, &sampler, 1, &mut rng).is_err());
}

#[test]
fn dataset_plan_is_seeded() {
    let cfg = DatasetConfig {
        kind: DatasetKind::MotionBlur,
        images: 6,
        ..DatasetConfig::default()
    };
    let a = dataset_plan(&cfg).unwrap();
    assert_eq!(a, dataset_plan(&cfg).unwrap());
    assert_ne!(a, dataset_plan(&DatasetConfig { seed: 43, ..cfg.clone() }).unwrap());
    for (_, blur) in &a {
        let Blur::Translation { dx, dy } = *blur else {
            panic!("expected translation blur");
        };
        let extent = dx.hypot(dy);
        assert!((cfg.min_motion..=cfg.max_motion).contains(&extent));
    }
}

#[test]
fn column_stats_match_direct_formulas() {
    let rows = vec![vec![1.0, 10.0], vec![2.0, 10.0], vec![6.0, 10.0]];
    let (mean, std) = column_stats(&rows);
    assert_eq!(mean, vec![3.0, 10.0]);
    assert!((std[0] - 7.0f64.sqrt()).abs() < 1e-12);
    assert_eq!(std[1], 0.0);
    assert_eq!(column_stats(&[]), (vec![], vec![]));
}

#[test]
fn draws_are_sorted_distinct_and_seeded() {
    let available: Vec<usize> = (0..30).filter(|i| i % 7 != 3).collect();
    let cfg = McConfig::default();
    let draws = draw_subsets(&available, &cfg).unwrap();
    assert_eq!(draws.len(), cfg.draws);
    for d in &draws {
        assert_eq!(d.len(), cfg.views_per_draw);
        assert!(d.windows(2).all(|w| w[0] < w[1]));
        assert!(d.iter().all(|i| available.contains(i)));
    }
    assert_eq!(draws, draw_subsets(&available, &cfg).unwrap());
    assert!(draw_subsets(&available[..5], &cfg).is_err());
}

fn exact_detections(s: &Scenario, n: usize) -> Vec<Option<Vec<CentroidMeasurement>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let poses = sample_poses(&s.intrinsics, &s.distortion, &s.target, s.width, s.height, &s.sampler, n, &mut rng).unwrap();
    poses
        .iter()
        .map(|p| {
            Some(
                (0..s.target.len())
                    .map(|i| {
                        let c = unbiased_circle_centroid(&s.intrinsics, &s.distortion, p, s.target.center(i), s.target.radius).unwrap();
                        CentroidMeasurement::new(c, Matrix2::identity() * 0.01)
                    })
                    .collect(),
            )
        })
        .collect()
}

#[test]
fn monte_carlo_on_exact_centroids() {
    let s = Scenario::default();
    let mut dets = exact_detections(&s, 10);
    dets[3] = None;
    let cfg = McConfig {
        draws: 4,
        ..McConfig::default()
    };
    let rep = monte_carlo(&dets, &s.target, Some((s.width, s.height)), &cfg).unwrap();
    assert!(rep.draws.iter().all(|d| !d.contains(&3)));
    for arm in [Arm::Unbiased, Arm::Weighted] {
        let a = rep.arm(arm).unwrap();
        assert_eq!(a.failures, 0);
        assert_eq!(a.names, vec!["fx", "fy", "cx", "cy", "d1"]);
        let truth = [600.0, 600.0, 600.0, 450.0, -0.4];
        for (m, t) in a.mean.iter().zip(truth) {
            assert!((m - t).abs() < 1e-4 * t.abs().max(1.0), "{arm:?}: {m} vs {t}");
        }
    }
    let naive = rep.arm(Arm::NaiveCenter).unwrap();
    assert!(naive.mean[0] > 600.5, "{}", naive.mean[0]);
    let again = monte_carlo(&dets, &s.target, Some((s.width, s.height)), &cfg).unwrap();
    assert_eq!(serde_json::to_string(&rep).unwrap(), serde_json::to_string(&again).unwrap());
}

#[test]
fn failed_draws_are_counted() {
    let s = Scenario::default();
    let mut dets = exact_detections(&s, 6);
    for d in dets.iter_mut().skip(1) {
        *d = dets_first(&s);
    }
    let cfg = McConfig {
        draws: 2,
        arms: vec![Arm::Unbiased],
        ..McConfig::default()
    };
    let rep = monte_carlo(&dets, &s.target, None, &cfg).unwrap();
    let a = rep.arm(Arm::Unbiased).unwrap();
    assert_eq!(a.failures, 2);
    assert_eq!(a.errors.len(), 2);
    assert!(a.estimates.iter().all(Option::is_none));
}

fn dets_first(s: &Scenario) -> Option<Vec<CentroidMeasurement>> {
    exact_detections(s, 1).remove(0)
}

#[test]
fn masks_and_iou() {
    let square = [
        Point2::new(2.0, 2.0),
        Point2::new(6.0, 2.0),
        Point2::new(6.0, 6.0),
        Point2::new(2.0, 6.0),
    ];
    let m = polygon_mask(&square, 10, 10, 4);
    assert_eq!(m.iter().filter(|&&b| b).count(), 16 * 16);
    assert_eq!(iou(&m, &m), 1.0);
    assert_eq!(iou(&m, &vec![false; m.len()]), 0.0);
    let e = EllipseShape {
        center: Point2::new(40.0, 30.0),
        semi_axes: Vector2::new(20.0, 10.0),
        angle: 0.4,
    };
    let area = ellipse_mask(&e, 80, 60, 4).iter().filter(|&&b| b).count() as f64 / 16.0;
    assert!((area / (std::f64::consts::PI * 200.0) - 1.0).abs() < 0.01);
}

#[test]
fn ellipse_render_darkness_matches_area() {
    let e = EllipseShape {
        center: Point2::new(30.3, 25.7),
        semi_axes: Vector2::new(12.0, 7.0),
        angle: 1.1,
    };
    let img = render_ellipse(&e, 60, 50, 8);
    let dark: f64 = img.data().iter().map(|v| (BACKGROUND - v) / (BACKGROUND - FOREGROUND)).sum();
    assert!((dark / (std::f64::consts::PI * 84.0) - 1.0).abs() < 0.005);
}

#[test]
fn selection_trial_is_seeded() {
    let a = selection_trial(&mut ChaCha8Rng::seed_from_u64(3), 3.0, 3).unwrap();
    let b = selection_trial(&mut ChaCha8Rng::seed_from_u64(3), 3.0, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.levels.len(), a.ious.len());
    assert!(a.ious.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn optimal_revolution_skips_missing_points() {
    let pts = [
        SweepPoint { phi: 0.0, mean: Some(2.0) },
        SweepPoint { phi: 5.0, mean: None },
        SweepPoint { phi: 10.0, mean: Some(1.5) },
        SweepPoint { phi: 15.0, mean: Some(1.7) },
    ];
    assert_eq!(optimal_revolution(&pts), Some(10.0));
    assert_eq!(optimal_revolution(&pts[1..2]), None);
}

#[test]
fn half_means_of_split_map() {
    let mut map = UncertaintyMap::constant(4, 2, &Matrix2::identity());
    for y in 0..2 {
        for x in 2..4 {
            map.scalar[y * 4 + x] = 3.0;
        }
    }
    map.scalar[0] = f64::NAN;
    let (l, r) = half_means(&map);
    assert!((l - 2.0).abs() < 1e-15);
    assert_eq!(r, 3.0);
}

#[test]
fn study_anchors_fit() {
    let setup = StudySetup::default();
    let anchors = anchor_poses(&setup);
    assert_eq!(anchors.len(), 6);
    assert!(anchors.iter().all(|p| setup.fits(p)));
    assert!(diverse_poses(&setup, 16).iter().all(|p| setup.fits(p)));
    assert!(one_sided_poses(&setup, 8).iter().all(|p| setup.fits(p)));
    let (a, b) = opposite_rotation_sets(&setup);
    assert!(a.iter().chain(&b).all(|p| setup.fits(p)));
}

#[test]
fn pose_set_map_checks_lengths() {
    let setup = StudySetup::default();
    let poses = anchor_poses(&setup);
    assert!(matches!(
        pose_set_map(&setup, &poses, &[]),
        Err(Error::DimensionMismatch { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn equal_revolution_and_rotation_is_tangent(ax in -40.0..40.0f64, ay in -40.0..40.0f64, roll in -20.0..20.0f64, dist in 100.0..800.0f64) {
        let t = target();
        let a = Vector2::new(ax, ay);
        let pose = revolved_pose(&t, dist, a, a, roll);
        let middle = pose.rotation_matrix() * target_middle(&t) + pose.translation;
        let normal = pose.rotation_matrix() * Vector3::z();
        prop_assert!((middle.norm() - dist).abs() < 1e-9 * dist);
        prop_assert!(middle.normalize().cross(&normal).norm() < 1e-12);
    }
}
