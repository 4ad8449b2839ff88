use std::path::Path;
use std::process::{Command, Output};

use discocal_cli::report::{CalibrationReport, DetectSummary, GroundTruth, HeatmapSidecar, UncmapReport};

fn discocal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_discocal"))
        .args(args)
        .env_remove("DISCOCAL_SEED")
        .output()
        .unwrap()
}

fn read<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn synth(dir: &Path, images: usize) {
    let out = discocal(&["synth", "--out", dir.to_str().unwrap(), "--set", &format!("synth.images={images}")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn empty_directory_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = discocal(&["detect", tmp.path().to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no images"));
}

#[test]
fn missing_directory_is_an_input_error() {
    let out = discocal(&["calibrate", "/nonexistent/images", "--out", "/tmp/never.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "[detect]\nsigm = 1.0\n").unwrap();
    let out = discocal(&["synth", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));
}

#[test]
fn malformed_environment_seed_is_a_config_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_discocal"))
        .args(["synth", "--out", "/tmp/never"])
        .env("DISCOCAL_SEED", "x")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn two_views_are_insufficient() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 2);
    let out = discocal(&[
        "calibrate",
        tmp.path().to_str().unwrap(),
        "--out",
        tmp.path().join("calib.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("insufficient views"));
}

#[test]
fn undetectable_images_are_reported_per_image() {
    let tmp = tempfile::tempdir().unwrap();
    let imgs = tmp.path().join("imgs");
    synth(&imgs, 2);
    image::GrayImage::from_pixel(64, 48, image::Luma([200])).save(imgs.join("blank.png")).unwrap();
    let out_dir = tmp.path().join("det");
    let out = discocal(&["detect", imgs.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("2 detected, 1 failed"));
    let summary: DetectSummary = read(&out_dir.join("summary.json"));
    assert_eq!((summary.detected, summary.failed), (2, 1));
    assert_eq!(summary.images[0].file, "blank.png");
    assert!(!summary.images[0].detected);
    assert!(out_dir.join("image_000.detect.json").exists());
}

#[test]
fn mixed_image_sizes_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 3);
    image::GrayImage::from_pixel(64, 48, image::Luma([200])).save(tmp.path().join("small.png")).unwrap();
    let out = discocal(&["calibrate", tmp.path().to_str().unwrap(), "--out", tmp.path().join("c.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, 4);
    synth(&b, 4);
    for i in 0..4 {
        let name = format!("image_{i:03}.png");
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
    }
    assert_eq!(std::fs::read(a.join("gt.json")).unwrap(), std::fs::read(b.join("gt.json")).unwrap());

    let calib = |dir: &Path, name: &str, jobs: &str| {
        let path = tmp.path().join(name);
        let out = discocal(&[
            "calibrate",
            dir.to_str().unwrap(),
            "--out",
            path.to_str().unwrap(),
            "--jobs",
            jobs,
            "--set",
            "optimizer.nd=1",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(path).unwrap()
    };
    let first = calib(&a, "c1.json", "1");
    assert_eq!(first, calib(&a, "c2.json", "2"));

    let map = |name: &str| {
        let dir = tmp.path().join(name);
        let out = discocal(&["uncmap", tmp.path().join("c1.json").to_str().unwrap(), "--out", dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        dir
    };
    let (m1, m2) = (map("m1"), map("m2"));
    for f in ["uncmap.json", "uncmap.png", "uncmap_scale.json", "overlay.png"] {
        assert_eq!(std::fs::read(m1.join(f)).unwrap(), std::fs::read(m2.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn artifacts_carry_schema_version_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    let imgs = tmp.path().join("imgs");
    let out = discocal(&["synth", "--out", imgs.to_str().unwrap(), "--set", "synth.images=3", "--seed", "5"]);
    assert!(out.status.success());
    let gt: GroundTruth = read(&imgs.join("gt.json"));
    assert_eq!((gt.schema_version, gt.config.seed, gt.images.len()), (1, 5, 3));
    assert!(!gt.config.to_toml().unwrap().contains("jobs"));

    let calib = tmp.path().join("calib.json");
    let out = discocal(&["calibrate", imgs.to_str().unwrap(), "--out", calib.to_str().unwrap(), "--seed", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: CalibrationReport = read(&calib);
    assert_eq!(report.schema_version, 1);
    assert_eq!(report.image_size, [1200, 900]);
    assert_eq!(report.views.len(), 3);
    assert_eq!(report.param_names, ["fx", "fy", "cx", "cy", "d1", "d2"]);
    assert_eq!(report.param_cov.len(), 6);

    let map_dir = tmp.path().join("map");
    let out = discocal(&["uncmap", calib.to_str().unwrap(), "--out", map_dir.to_str().unwrap(), "--set", "uncmap.overlay=false"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let map: UncmapReport = read(&map_dir.join("uncmap.json"));
    assert_eq!(map.cov.len(), 1200 * 900);
    assert!(map.cov.iter().any(Option::is_none));
    let scale: HeatmapSidecar = read(&map_dir.join("uncmap_scale.json"));
    assert!(scale.min <= scale.mean && scale.mean <= scale.max);
    assert!(!map_dir.join("overlay.png").exists());
}
