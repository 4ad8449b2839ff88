//! Versioned JSON artifacts written by the commands.

use std::path::Path;

use discocal_core::calib::ViewResiduals;
use discocal_core::synth::{Arm, Blur, DatasetKind};
use discocal_core::{CentroidMeasurement, Intrinsics, Pose, TargetSpec};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

/// Version of every JSON schema below.
pub const SCHEMA_VERSION: u32 = 1;

/// A centroid with its covariance `(xx, xy, yy)`, px^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub x: f64,
    pub y: f64,
    pub cov: [f64; 3],
    pub epsilon: f64,
}

impl From<&CentroidMeasurement> for MeasurementRecord {
    fn from(m: &CentroidMeasurement) -> Self {
        Self {
            x: m.p.x,
            y: m.p.y,
            cov: [m.cov[(0, 0)], m.cov[(0, 1)], m.cov[(1, 1)]],
            epsilon: m.epsilon,
        }
    }
}

impl MeasurementRecord {
    pub fn to_measurement(&self) -> CentroidMeasurement {
        let [a, b, c] = self.cov;
        CentroidMeasurement::new(
            nalgebra::Point2::new(self.x, self.y),
            nalgebra::Matrix2::new(a, b, b, c),
        )
    }
}

/// Outcome of detection on one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageStatus {
    pub file: String,
    pub detected: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub file: String,
    pub width: usize,
    pub height: usize,
    pub detected: bool,
    pub error: Option<String>,
    /// Target order; empty when detection failed.
    pub measurements: Vec<MeasurementRecord>,
    /// Threshold that produced each measurement.
    pub thresholds: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectSummary {
    pub schema_version: u32,
    pub config: RunConfig,
    pub detected: usize,
    pub failed: usize,
    pub images: Vec<ImageStatus>,
}

/// One view used by the calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub file: String,
    pub pose: Pose,
    pub residuals: ViewResiduals,
    pub measurements: Vec<MeasurementRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub image_size: [usize; 2],
    pub intrinsics: Intrinsics,
    pub distortion: Vec<f64>,
    pub param_names: Vec<String>,
    /// Row-major covariance of the intrinsic parameters.
    pub param_cov: Vec<Vec<f64>>,
    pub param_std: Vec<f64>,
    pub rms_reproj: f64,
    pub cost: f64,
    pub iterations: usize,
    pub views: Vec<ViewRecord>,
    /// Images that did not yield a full grid.
    pub failed: Vec<ImageStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncmapReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub width: usize,
    pub height: usize,
    /// Mean scalar uncertainty over valid pixels, px.
    pub mean: f64,
    /// Fraction of pixels with a value.
    pub coverage: f64,
    /// `(Kxx, Kxy, Kyy)` per pixel, row-major, px^2; `null` where masked.
    pub cov: Vec<Option<[f64; 3]>>,
}

/// Color scale of `uncmap.png`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSidecar {
    pub schema_version: u32,
    pub colormap: String,
    /// Scalar uncertainty at the first color, px.
    pub min: f64,
    /// Scalar uncertainty at the last color, px.
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleRecord {
    /// Centroid of the full image of the circle, px.
    pub centroid: [f64; 2],
    /// Image of the circle center, px.
    pub center_projection: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthImageRecord {
    pub file: String,
    pub pose: Pose,
    pub blur: Blur,
    pub circles: Vec<CircleRecord>,
}

/// Ground truth of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub schema_version: u32,
    pub config: RunConfig,
    pub intrinsics: Intrinsics,
    pub distortion: Vec<f64>,
    pub target: TargetSpec,
    pub width: usize,
    pub height: usize,
    pub images: Vec<SynthImageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRecord {
    pub arm: Arm,
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub failures: usize,
    pub errors: Vec<String>,
    /// Per-draw estimates; `null` for a failed draw.
    pub estimates: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McArtifact {
    pub schema_version: u32,
    pub config: RunConfig,
    pub kind: DatasetKind,
    /// True parameter values in the order of each arm's `names`.
    pub truth: Vec<f64>,
    pub detection: DetectionCounts,
    /// Image indices of every draw.
    pub draws: Vec<Vec<usize>>,
    pub arms: Vec<ArmRecord>,
}

impl McArtifact {
    pub fn arm(&self, arm: Arm) -> Option<&ArmRecord> {
        self.arms.iter().find(|a| a.arm == arm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub detected: usize,
    pub failed: usize,
    pub failed_images: Vec<usize>,
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    std::fs::write(path, to_json(value)?).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}
