use discocal_core::detector::detect;
use discocal_core::synth::{generate_dataset, DatasetConfig, DatasetKind};
use discocal_core::DetectParams;

fn dataset(kind: DatasetKind) -> DatasetConfig {
    DatasetConfig {
        kind,
        images: 8,
        seed: 11,
        ..DatasetConfig::default()
    }
}

fn within_three_epsilon(kind: DatasetKind) -> (usize, usize) {
    let cfg = dataset(kind);
    let images = generate_dataset(&cfg).unwrap();
    let mut hits = 0;
    let mut total = 0;
    for img in &images {
        let grid = detect(&img.image, &cfg.scenario.target, &DetectParams::default()).unwrap();
        for (m, t) in grid.measurements.iter().zip(&img.truth) {
            total += 1;
            if (m.p - t.centroid).norm() <= 3.0 * m.epsilon {
                hits += 1;
            }
        }
    }
    (hits, total)
}

#[test]
fn detected_centroids_agree_with_ground_truth() {
    for kind in [DatasetKind::Original, DatasetKind::MotionBlur] {
        let (hits, total) = within_three_epsilon(kind);
        assert_eq!(total, 8 * 12);
        assert!(hits as f64 >= 0.99 * total as f64, "{kind:?}: {hits}/{total}");
    }
}
