//! The five subcommands, each split into a pure `run_*` and a writing `cmd_*`.

use std::path::{Path, PathBuf};

use discocal_core::calib::calibrate_in_frame;
use discocal_core::detector::detect;
use discocal_core::image::load_gray;
use discocal_core::synth::{detect_all, generate_dataset, monte_carlo, SyntheticImage};
use discocal_core::uncmap::{heatmap, mean_uncertainty, overlay_points, uncertainty_map, HeatmapScale};
use discocal_core::{CentroidMeasurement, DetectedGrid, Error};
use nalgebra::{DMatrix, Point2};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::report::{
    read_json, write_json, ArmRecord, CalibrationReport, CircleRecord, DetectSummary, DetectionCounts,
    DetectionReport, GroundTruth, HeatmapSidecar, ImageStatus, McArtifact, MeasurementRecord, SynthImageRecord,
    UncmapReport, ViewRecord, SCHEMA_VERSION,
};
use crate::CliError;

/// File extensions read as images, compared case-insensitively.
pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "pgm", "pnm", "ppm"];

/// Minimum number of detected views for a calibration.
pub const MIN_VIEWS: usize = 3;

/// Sorted image files of a directory.
pub fn image_paths(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Input(format!("cannot read {}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::Input(e.to_string()))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Input(format!("no images in {}", dir.display())));
    }
    Ok(paths)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Detection outcome of one image file.
#[derive(Debug, Clone)]
pub struct ImageDetection {
    pub file: String,
    /// Zero when the image could not be read.
    pub size: (usize, usize),
    pub result: Result<DetectedGrid, String>,
}

impl ImageDetection {
    pub fn status(&self) -> ImageStatus {
        ImageStatus {
            file: self.file.clone(),
            detected: self.result.is_ok(),
            error: self.result.as_ref().err().cloned(),
        }
    }
}

/// Detects the target in every image, in path order.
pub fn detect_images(paths: &[PathBuf], cfg: &RunConfig) -> Vec<ImageDetection> {
    paths
        .par_iter()
        .map(|path| {
            let file = file_name(path);
            match load_gray(path) {
                Ok(img) => ImageDetection {
                    file,
                    size: (img.width(), img.height()),
                    result: detect(&img, &cfg.target, &cfg.detect).map_err(|e| e.to_string()),
                },
                Err(e) => ImageDetection {
                    file,
                    size: (0, 0),
                    result: Err(e.to_string()),
                },
            }
        })
        .collect()
}

pub fn run_detect(dir: &Path, cfg: &RunConfig) -> Result<(Vec<DetectionReport>, DetectSummary), CliError> {
    let detections = detect_images(&image_paths(dir)?, cfg);
    let reports: Vec<DetectionReport> = detections
        .iter()
        .map(|d| {
            let (measurements, thresholds) = match &d.result {
                Ok(g) => (
                    g.measurements.iter().map(MeasurementRecord::from).collect(),
                    g.thresholds.iter().map(|t| t.to_string()).collect(),
                ),
                Err(_) => (Vec::new(), Vec::new()),
            };
            DetectionReport {
                schema_version: SCHEMA_VERSION,
                config: cfg.clone(),
                file: d.file.clone(),
                width: d.size.0,
                height: d.size.1,
                detected: d.result.is_ok(),
                error: d.result.as_ref().err().cloned(),
                measurements,
                thresholds,
            }
        })
        .collect();
    let detected = reports.iter().filter(|r| r.detected).count();
    let summary = DetectSummary {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        detected,
        failed: reports.len() - detected,
        images: detections.iter().map(ImageDetection::status).collect(),
    };
    Ok((reports, summary))
}

/// Writes `<stem>.detect.json` per image and `summary.json`. Fails with a
/// detection shortfall only when no image was detected.
pub fn cmd_detect(dir: &Path, out: &Path, cfg: &RunConfig) -> Result<DetectSummary, CliError> {
    let (reports, summary) = run_detect(dir, cfg)?;
    create_dir(out)?;
    for r in &reports {
        let stem = Path::new(&r.file).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        write_json(&out.join(format!("{stem}.detect.json")), r)?;
    }
    write_json(&out.join("summary.json"), &summary)?;
    if summary.detected == 0 {
        return Err(CliError::Detection(format!("no image of {} yielded the target", dir.display())));
    }
    Ok(summary)
}

fn common_size(detections: &[ImageDetection]) -> Result<(usize, usize), CliError> {
    let mut sizes = detections.iter().filter(|d| d.size != (0, 0)).map(|d| (d.size, &d.file));
    let Some((size, _)) = sizes.next() else {
        return Err(CliError::Input("no readable image".into()));
    };
    if let Some((other, file)) = sizes.find(|(s, _)| *s != size) {
        return Err(CliError::Input(format!(
            "{file} is {}x{}, expected {}x{}",
            other.0, other.1, size.0, size.1
        )));
    }
    Ok(size)
}

fn optimization_error(e: Error) -> CliError {
    match e {
        Error::InsufficientViews { .. } => CliError::Detection(e.to_string()),
        e => CliError::Optimization(e.to_string()),
    }
}

pub fn run_calibrate(dir: &Path, cfg: &RunConfig) -> Result<CalibrationReport, CliError> {
    let detections = detect_images(&image_paths(dir)?, cfg);
    let (width, height) = common_size(&detections)?;
    let used: Vec<(&ImageDetection, &DetectedGrid)> =
        detections.iter().filter_map(|d| d.result.as_ref().ok().map(|g| (d, g))).collect();
    if used.len() < MIN_VIEWS {
        return Err(CliError::Detection(
            Error::InsufficientViews {
                needed: MIN_VIEWS,
                got: used.len(),
            }
            .to_string(),
        ));
    }
    let views: Vec<Vec<CentroidMeasurement>> = used.iter().map(|(_, g)| g.measurements.clone()).collect();
    let result =
        calibrate_in_frame(&views, &cfg.target, &cfg.optimizer, Some((width, height))).map_err(optimization_error)?;
    let n = result.param_cov.nrows();
    Ok(CalibrationReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        image_size: [width, height],
        intrinsics: result.intrinsics,
        distortion: result.distortion.d.clone(),
        param_names: result.param_names.clone(),
        param_cov: (0..n).map(|i| (0..n).map(|j| result.param_cov[(i, j)]).collect()).collect(),
        param_std: result.param_std(),
        rms_reproj: result.rms_reproj,
        cost: result.cost,
        iterations: result.iterations,
        views: used
            .iter()
            .zip(&result.poses)
            .zip(&result.per_view)
            .map(|(((d, g), pose), residuals)| ViewRecord {
                file: d.file.clone(),
                pose: *pose,
                residuals: *residuals,
                measurements: g.measurements.iter().map(MeasurementRecord::from).collect(),
            })
            .collect(),
        failed: detections.iter().filter(|d| d.result.is_err()).map(ImageDetection::status).collect(),
    })
}

pub fn cmd_calibrate(dir: &Path, out: &Path, cfg: &RunConfig) -> Result<CalibrationReport, CliError> {
    let report = run_calibrate(dir, cfg)?;
    create_parent(out)?;
    write_json(out, &report)?;
    Ok(report)
}

/// Uncertainty map artifacts of a calibration report.
pub struct UncmapArtifacts {
    pub report: UncmapReport,
    pub sidecar: HeatmapSidecar,
    pub heatmap: ::image::RgbImage,
    pub overlay: Option<::image::RgbImage>,
}

pub fn run_uncmap(calibration: &CalibrationReport, cfg: &RunConfig) -> Result<UncmapArtifacts, CliError> {
    let n = calibration.param_cov.len();
    if n == 0 || calibration.param_cov.iter().any(|row| row.len() != n) {
        return Err(CliError::Input("param_cov is not a square matrix".into()));
    }
    let cov = DMatrix::from_fn(n, n, |i, j| calibration.param_cov[i][j]);
    let [width, height] = calibration.image_size;
    let d = discocal_core::Distortion::new(calibration.distortion.clone()).map_err(|e| CliError::Input(e.to_string()))?;
    let map = uncertainty_map(&calibration.intrinsics, &d, &cov, width, height, cfg.uncmap.grid)
        .map_err(|e| CliError::Input(e.to_string()))?;
    let mean = mean_uncertainty(&map);
    let (img, HeatmapScale { min, max }) = heatmap(&map, None);
    let overlay = cfg.uncmap.overlay.then(|| {
        let mut over = img.clone();
        let points: Vec<Point2<f64>> = calibration
            .views
            .iter()
            .flat_map(|v| v.measurements.iter().map(|m| Point2::new(m.x, m.y)))
            .collect();
        overlay_points(&mut over, &points, cfg.uncmap.dot_radius);
        over
    });
    let report = UncmapReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        width,
        height,
        mean,
        coverage: map.coverage(),
        cov: map
            .cov
            .iter()
            .zip(&map.scalar)
            .map(|(c, s)| s.is_finite().then_some(*c))
            .collect(),
    };
    Ok(UncmapArtifacts {
        report,
        sidecar: HeatmapSidecar {
            schema_version: SCHEMA_VERSION,
            colormap: "viridis".into(),
            min,
            max,
            mean,
        },
        heatmap: img,
        overlay,
    })
}

/// Writes `uncmap.json`, `uncmap.png`, `uncmap_scale.json` and, when
/// enabled, `overlay.png`.
pub fn cmd_uncmap(report: &Path, out: &Path, cfg: &RunConfig) -> Result<UncmapArtifacts, CliError> {
    let calibration: CalibrationReport = read_json(report)?;
    let art = run_uncmap(&calibration, cfg)?;
    create_dir(out)?;
    let json = serde_json::to_string(&art.report).map_err(|e| CliError::Io(e.to_string()))? + "\n";
    write_file(&out.join("uncmap.json"), json.as_bytes())?;
    save_png(&art.heatmap, &out.join("uncmap.png"))?;
    write_json(&out.join("uncmap_scale.json"), &art.sidecar)?;
    if let Some(over) = &art.overlay {
        save_png(over, &out.join("overlay.png"))?;
    }
    Ok(art)
}

/// Image file name of synthetic image `i`.
pub fn synth_file(i: usize) -> String {
    format!("image_{i:03}.png")
}

pub fn run_synth(cfg: &RunConfig) -> Result<(Vec<SyntheticImage>, GroundTruth), CliError> {
    let dataset = cfg.dataset();
    let images = generate_dataset(&dataset).map_err(|e| CliError::Config(e.to_string()))?;
    let s = &dataset.scenario;
    let gt = GroundTruth {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        intrinsics: s.intrinsics,
        distortion: s.distortion.d.clone(),
        target: s.target,
        width: s.width,
        height: s.height,
        images: images
            .iter()
            .enumerate()
            .map(|(i, img)| SynthImageRecord {
                file: synth_file(i),
                pose: img.pose,
                blur: img.blur,
                circles: img
                    .truth
                    .iter()
                    .map(|c| CircleRecord {
                        centroid: [c.centroid.x, c.centroid.y],
                        center_projection: [c.center_projection.x, c.center_projection.y],
                    })
                    .collect(),
            })
            .collect(),
    };
    Ok((images, gt))
}

/// Writes `image_NNN.png` per image and `gt.json`.
pub fn cmd_synth(out: &Path, cfg: &RunConfig) -> Result<GroundTruth, CliError> {
    let (images, gt) = run_synth(cfg)?;
    create_dir(out)?;
    images
        .par_iter()
        .enumerate()
        .try_for_each(|(i, img)| {
            let path = out.join(synth_file(i));
            img.image.save_png(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
        })?;
    write_json(&out.join("gt.json"), &gt)?;
    Ok(gt)
}

/// Renders the configured dataset, detects it and runs every arm.
pub fn run_mc(cfg: &RunConfig) -> Result<McArtifact, CliError> {
    let (images, _) = run_synth(cfg)?;
    let grays: Vec<_> = images.into_iter().map(|i| i.image).collect();
    let detections: Vec<Option<Vec<CentroidMeasurement>>> = detect_all(&grays, &cfg.target, &cfg.detect)
        .into_iter()
        .map(|r| r.ok().map(|g| g.measurements))
        .collect();
    drop(grays);
    let failed_images: Vec<usize> = (0..detections.len()).filter(|&i| detections[i].is_none()).collect();
    let mc = cfg.monte_carlo();
    let report = monte_carlo(&detections, &cfg.target, Some((cfg.synth.width, cfg.synth.height)), &mc)
        .map_err(optimization_error)?;
    let k = &cfg.synth.camera;
    let names = report.arms.first().map(|a| a.names.clone()).unwrap_or_default();
    let truth = names
        .iter()
        .map(|name| match name.as_str() {
            "fx" => k.fx,
            "fy" => k.fy,
            "cx" => k.cx,
            "cy" => k.cy,
            "eta" => k.eta,
            d => d
                .strip_prefix('d')
                .and_then(|i| i.parse::<usize>().ok())
                .and_then(|i| cfg.synth.distortion.d.get(i - 1).copied())
                .unwrap_or(0.0),
        })
        .collect();
    Ok(McArtifact {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        kind: cfg.synth.kind,
        truth,
        detection: DetectionCounts {
            detected: detections.len() - failed_images.len(),
            failed: failed_images.len(),
            failed_images,
        },
        draws: report.draws,
        arms: report
            .arms
            .into_iter()
            .map(|a| ArmRecord {
                arm: a.arm,
                names: a.names,
                mean: a.mean,
                std: a.std,
                failures: a.failures,
                errors: a.errors,
                estimates: a.estimates,
            })
            .collect(),
    })
}

pub fn cmd_mc(out: &Path, cfg: &RunConfig) -> Result<McArtifact, CliError> {
    let artifact = run_mc(cfg)?;
    create_parent(out)?;
    write_json(out, &artifact)?;
    Ok(artifact)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn save_png(img: &::image::RgbImage, path: &Path) -> Result<(), CliError> {
    img.save_with_format(path, ::image::ImageFormat::Png)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}
