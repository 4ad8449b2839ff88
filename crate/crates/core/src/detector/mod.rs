//! Circle-grid detection by threshold sweep and uncertainty-based selection.
//!
//! Every threshold candidate yields a binary image whose traced boundaries
//! are 8-connected by construction. Blobs passing the ellipse gate are
//! measured with their centroid covariance; among candidates describing the
//! same physical circle the one with the lowest scalar uncertainty wins.

mod contour;
mod ellipse;
mod grid;

use nalgebra::Point2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use contour::find_contours;
pub use ellipse::{ellipse_check, ellipse_test, fit_ellipse, Ellipse, EllipseGate};
pub use grid::order_grid;

use crate::image::{close, gradient, threshold, GradientField, GrayImage, ThresholdSpec};
use crate::moments::Contour;
use crate::projection::TargetSpec;
use crate::uncertainty::{measure_centroid, CentroidMeasurement, UncertaintyParams, DEFAULT_GRADIENT_FLOOR};
use crate::{Error, Result};

/// Global levels 100..=200 step 10 plus four adaptive variants.
pub fn default_thresholds() -> Vec<ThresholdSpec> {
    let mut v: Vec<ThresholdSpec> = (0..=10)
        .map(|i| ThresholdSpec::Global {
            level: 100.0 + 10.0 * i as f64,
        })
        .collect();
    for block in [31, 63] {
        for offset in [5.0, 10.0] {
            v.push(ThresholdSpec::Adaptive { block, offset });
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectParams {
    pub thresholds: Vec<ThresholdSpec>,
    /// Boundary prior connectivity scale, px.
    pub sigma: f64,
    /// Half-width of the intensity-range window, px.
    pub window: usize,
    pub gradient_floor: f64,
    pub ellipse: EllipseGate,
    /// Dedupe radius as a fraction of the median blob spacing.
    pub dedupe_factor: f64,
    /// Apply a 3x3 closing before tracing.
    pub closing: bool,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            thresholds: default_thresholds(),
            sigma: 1.0,
            window: 5,
            gradient_floor: DEFAULT_GRADIENT_FLOOR,
            ellipse: EllipseGate::default(),
            dedupe_factor: 0.3,
            closing: true,
        }
    }
}

impl DetectParams {
    pub fn uncertainty(&self) -> UncertaintyParams {
        UncertaintyParams {
            sigma: self.sigma,
            window: self.window,
            gradient_floor: self.gradient_floor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::InvalidArgument("no threshold candidates".into()));
        }
        for t in &self.thresholds {
            match *t {
                ThresholdSpec::Global { level } if !(0.0..=255.0).contains(&level) => {
                    return Err(Error::InvalidArgument(format!("threshold level {level} outside [0, 255]")))
                }
                ThresholdSpec::Adaptive { block, .. } if block < 3 || block % 2 == 0 => {
                    return Err(Error::InvalidBlockSize(block))
                }
                _ => {}
            }
        }
        if !(self.sigma > 0.0) || self.window == 0 || !(self.dedupe_factor > 0.0) {
            return Err(Error::InvalidArgument(
                "sigma, window and dedupe_factor must be positive".into(),
            ));
        }
        if !(self.ellipse.fit_tol > 0.0) || !(self.ellipse.ratio_max > 1.0) || self.ellipse.area_min < 0.0 {
            return Err(Error::InvalidArgument("invalid ellipse gate".into()));
        }
        Ok(())
    }
}

/// A measured blob from one threshold candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobCandidate {
    pub contour: Contour,
    pub measurement: CentroidMeasurement,
    pub threshold: ThresholdSpec,
}

/// Detected circles in target order.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectedGrid {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, aligned with [`TargetSpec::center`].
    pub measurements: Vec<CentroidMeasurement>,
    pub contour_lengths: Vec<usize>,
    pub thresholds: Vec<ThresholdSpec>,
}

impl DetectedGrid {
    pub fn centroids(&self) -> Vec<Point2<f64>> {
        self.measurements.iter().map(|m| m.p).collect()
    }
}

fn touches_border(c: &Contour, width: usize, height: usize) -> bool {
    let (lo, hi) = c.bounds();
    lo.x <= 0.0 || lo.y <= 0.0 || hi.x >= (width - 1) as f64 || hi.y >= (height - 1) as f64
}

/// Gated, measured blobs of a single threshold candidate, in tracing order.
pub fn candidates_for(
    img: &GrayImage,
    grad: &GradientField,
    spec: &ThresholdSpec,
    params: &DetectParams,
) -> Result<Vec<BlobCandidate>> {
    let mut bin = threshold(img, spec)?;
    if params.closing {
        bin = close(&bin);
    }
    let unc = params.uncertainty();
    Ok(find_contours(&bin)
        .into_iter()
        .filter(|c| c.len() >= 6 && !touches_border(c, img.width(), img.height()))
        .filter(|c| ellipse_test(c, &params.ellipse))
        .filter_map(|c| {
            let m = measure_centroid(img, grad, &c, &unc).ok()?;
            Some(BlobCandidate {
                contour: c,
                measurement: m,
                threshold: *spec,
            })
        })
        .collect())
}

/// Candidates of every threshold, grouped per threshold in parameter order.
pub fn collect_candidates(img: &GrayImage, params: &DetectParams) -> Result<Vec<Vec<BlobCandidate>>> {
    params.validate()?;
    let grad = gradient(img)?;
    params
        .thresholds
        .par_iter()
        .map(|spec| candidates_for(img, &grad, spec, params))
        .collect()
}

/// Median nearest-neighbor distance, measured within each threshold's own
/// blob set so duplicates across thresholds don't collapse it.
pub fn blob_spacing(groups: &[Vec<BlobCandidate>]) -> Option<f64> {
    let mut d: Vec<f64> = Vec::new();
    for g in groups {
        for (i, a) in g.iter().enumerate() {
            let nn = g
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, b)| (a.measurement.p - b.measurement.p).norm())
                .fold(f64::INFINITY, f64::min);
            if nn.is_finite() {
                d.push(nn);
            }
        }
    }
    if d.is_empty() {
        return None;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    Some(if d.len() % 2 == 1 { d[mid] } else { 0.5 * (d[mid - 1] + d[mid]) })
}

/// Greedy pass over candidates: a candidate within `radius` of a kept blob
/// replaces it when its uncertainty is lower, otherwise it is dropped; a
/// candidate far from every kept blob is added.
pub fn select_candidates(candidates: impl IntoIterator<Item = BlobCandidate>, radius: f64) -> Vec<BlobCandidate> {
    let mut kept: Vec<BlobCandidate> = Vec::new();
    for c in candidates {
        let near = kept
            .iter()
            .enumerate()
            .filter(|(_, k)| (k.measurement.p - c.measurement.p).norm() < radius)
            .min_by(|a, b| {
                let da = (a.1.measurement.p - c.measurement.p).norm();
                let db = (b.1.measurement.p - c.measurement.p).norm();
                da.total_cmp(&db)
            })
            .map(|(i, _)| i);
        match near {
            Some(i) => {
                if c.measurement.epsilon < kept[i].measurement.epsilon {
                    kept[i] = c;
                }
            }
            None => kept.push(c),
        }
    }
    kept
}

/// Selected blobs of an image before grid ordering.
pub fn detect_blobs(img: &GrayImage, params: &DetectParams) -> Result<Vec<BlobCandidate>> {
    let groups = collect_candidates(img, params)?;
    let Some(spacing) = blob_spacing(&groups) else {
        return Ok(groups.into_iter().flatten().take(1).collect());
    };
    Ok(select_candidates(groups.into_iter().flatten(), params.dedupe_factor * spacing))
}

/// Detects and orders the target's circles.
pub fn detect(img: &GrayImage, target: &TargetSpec, params: &DetectParams) -> Result<DetectedGrid> {
    target.validate()?;
    let blobs = detect_blobs(img, params)?;
    if blobs.len() != target.len() {
        return Err(Error::DetectionFailure {
            found: blobs.len(),
            expected: target.len(),
        });
    }
    let centroids: Vec<Point2<f64>> = blobs.iter().map(|b| b.measurement.p).collect();
    let order = order_grid(&centroids, target.rows, target.cols)?;
    Ok(DetectedGrid {
        rows: target.rows,
        cols: target.cols,
        measurements: order.iter().map(|&i| blobs[i].measurement).collect(),
        contour_lengths: order.iter().map(|&i| blobs[i].contour.len()).collect(),
        thresholds: order.iter().map(|&i| blobs[i].threshold).collect(),
    })
}
