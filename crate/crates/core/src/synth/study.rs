//! Pose studies on the calibration uncertainty map and selection trials on
//! blurred ellipses.

use nalgebra::{Point2, Vector2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::poses::{pose_fits, revolved_pose};
use super::render::{render, RenderSpec, BACKGROUND, FOREGROUND};
use crate::calib::{observations_from_views, parameter_covariance, Estimator, Model, OptimizeOptions};
use crate::detector::{collect_candidates, detect, DetectParams};
use crate::image::{gaussian_blur, GrayImage, ThresholdSpec};
use crate::projection::{Distortion, Intrinsics, Pose, TargetSpec};
use crate::uncertainty::CentroidMeasurement;
use crate::uncmap::{mean_uncertainty, uncertainty_map, UncertaintyMap, DEFAULT_GRID};
use crate::{Error, Result};

/// Camera, target and map settings shared by the pose studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySetup {
    pub intrinsics: Intrinsics,
    pub distortion: Distortion,
    pub target: TargetSpec,
    pub width: usize,
    pub height: usize,
    /// Camera-to-target-middle distance, target length units.
    pub distance: f64,
    pub supersampling: usize,
    /// Ray samples per axis of the uncertainty map.
    pub grid: usize,
    /// Minimum distance between a circle and the image border, px.
    pub margin: f64,
}

impl Default for StudySetup {
    fn default() -> Self {
        Self {
            intrinsics: Intrinsics::new(400.0, 400.0, 600.0, 450.0),
            distortion: Distortion { d: vec![-0.05] },
            target: TargetSpec {
                rows: 3,
                cols: 4,
                spacing: 50.0,
                radius: 20.0,
            },
            width: 1200,
            height: 900,
            distance: 450.0,
            supersampling: 8,
            grid: DEFAULT_GRID,
            margin: 10.0,
        }
    }
}

impl StudySetup {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        Distortion::new(self.distortion.d.clone())?;
        self.target.validate()?;
        if self.width == 0 || self.height == 0 {
            return Err(Error::EmptyImage);
        }
        if !(self.distance > 0.0) || self.supersampling < 4 || self.grid < 3 {
            return Err(Error::InvalidArgument(
                "distance > 0, supersampling >= 4 and grid >= 3 required".into(),
            ));
        }
        Ok(())
    }

    /// Tangent pose at the study distance; angles in degrees `(about x, about y)`.
    pub fn pose(&self, revolution: Vector2<f64>, rotation: Vector2<f64>) -> Pose {
        revolved_pose(&self.target, self.distance, revolution, rotation, 0.0)
    }

    pub fn fits(&self, pose: &Pose) -> bool {
        pose_fits(
            &self.intrinsics,
            &self.distortion,
            &self.target,
            pose,
            self.width,
            self.height,
            1.0,
            self.margin,
        )
    }

    fn optimizer(&self) -> OptimizeOptions {
        OptimizeOptions {
            nd: self.distortion.d.len(),
            weighted: true,
            estimator: Estimator::Unbiased,
            ..OptimizeOptions::default()
        }
    }
}

/// Noise-free render and detection of every pose.
pub fn measure_views(setup: &StudySetup, poses: &[Pose]) -> Result<Vec<Vec<CentroidMeasurement>>> {
    setup.validate()?;
    poses
        .par_iter()
        .map(|&pose| {
            let spec = RenderSpec {
                supersampling: setup.supersampling,
                margin: setup.margin.min(4.0),
                ..RenderSpec::new(
                    setup.intrinsics,
                    setup.distortion.clone(),
                    pose,
                    setup.target,
                    setup.width,
                    setup.height,
                )
            };
            let r = render(&spec)?;
            Ok(detect(&r.image, &setup.target, &DetectParams::default())?.measurements)
        })
        .collect()
}

/// Uncertainty map of the true camera observed through `views`, measured at `poses`.
pub fn pose_set_map(setup: &StudySetup, poses: &[Pose], views: &[Vec<CentroidMeasurement>]) -> Result<UncertaintyMap> {
    if poses.len() != views.len() {
        return Err(Error::DimensionMismatch {
            expected: poses.len(),
            got: views.len(),
        });
    }
    let model = Model {
        intrinsics: setup.intrinsics,
        distortion: setup.distortion.clone(),
        poses: poses.to_vec(),
    };
    let obs = observations_from_views(views, &setup.target);
    let cov = parameter_covariance(&obs, &setup.target, &model, &setup.optimizer())?;
    uncertainty_map(
        &setup.intrinsics,
        &setup.distortion,
        &cov,
        setup.width,
        setup.height,
        setup.grid,
    )
}

/// Renders, detects and maps a pose set.
pub fn pose_set_uncertainty(setup: &StudySetup, poses: &[Pose]) -> Result<UncertaintyMap> {
    let views = measure_views(setup, poses)?;
    pose_set_map(setup, poses, &views)
}

/// Six tangent views above and below the horizontal band, spread to the
/// left and right edges of the field.
pub fn anchor_poses(setup: &StudySetup) -> Vec<Pose> {
    let mut poses = Vec::with_capacity(6);
    for ax in [-30.0, 30.0] {
        for ay in [-40.0, 0.0, 40.0] {
            let a = Vector2::new(ax, ay);
            poses.push(setup.pose(a, a));
        }
    }
    poses
}

/// Mean map uncertainty at one revolution of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Revolution about the vertical axis, degrees.
    pub phi: f64,
    /// `None` when the target leaves the frame.
    pub mean: Option<f64>,
}

/// Moves a target rotated by `theta` degrees about the vertical axis across
/// revolutions `phis`, adding each pose to the anchor views.
pub fn revolution_sweep(
    setup: &StudySetup,
    theta: f64,
    phis: &[f64],
    anchors: &[Pose],
    anchor_views: &[Vec<CentroidMeasurement>],
) -> Result<Vec<SweepPoint>> {
    let rotation = Vector2::new(0.0, theta);
    let candidates: Vec<(f64, Pose)> = phis
        .iter()
        .map(|&phi| (phi, setup.pose(Vector2::new(0.0, phi), rotation)))
        .collect();
    let fitting: Vec<Pose> = candidates.iter().filter(|(_, p)| setup.fits(p)).map(|(_, p)| *p).collect();
    let measured = measure_views(setup, &fitting)?;
    let mut next = fitting.iter().zip(measured);
    candidates
        .iter()
        .map(|(phi, pose)| {
            if !setup.fits(pose) {
                return Ok(SweepPoint { phi: *phi, mean: None });
            }
            let (pose, view) = next.next().expect("one measurement per fitting pose");
            let mut poses = anchors.to_vec();
            poses.push(*pose);
            let mut views = anchor_views.to_vec();
            views.push(view);
            let map = pose_set_map(setup, &poses, &views)?;
            Ok(SweepPoint {
                phi: *phi,
                mean: Some(mean_uncertainty(&map)),
            })
        })
        .collect()
}

/// Revolution with the lowest mean uncertainty.
pub fn optimal_revolution(points: &[SweepPoint]) -> Option<f64> {
    points
        .iter()
        .filter_map(|p| p.mean.map(|m| (p.phi, m)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(phi, _)| phi)
}

/// Tangent views spread over the field with rotations in every direction.
pub fn diverse_poses(setup: &StudySetup, count: usize) -> Vec<Pose> {
    let ring = [
        (0.0, 0.0),
        (-25.0, -30.0),
        (25.0, 30.0),
        (-25.0, 30.0),
        (25.0, -30.0),
        (0.0, -35.0),
        (0.0, 35.0),
        (-30.0, 0.0),
        (30.0, 0.0),
        (-15.0, -15.0),
        (15.0, 15.0),
        (-15.0, 15.0),
        (15.0, -15.0),
        (-30.0, -20.0),
        (30.0, 20.0),
        (-30.0, 20.0),
        (30.0, -20.0),
        (0.0, 20.0),
        (0.0, -20.0),
        (20.0, 0.0),
    ];
    ring.iter()
        .take(count)
        .map(|&(ax, ay)| {
            let a = Vector2::new(ax, ay);
            setup.pose(a, a)
        })
        .collect()
}

/// Tangent views confined to the left part of the field.
pub fn one_sided_poses(setup: &StudySetup, count: usize) -> Vec<Pose> {
    (0..count)
        .map(|i| {
            let ax = -20.0 + 40.0 * i as f64 / (count.max(2) - 1) as f64;
            let ay = -30.0 + 10.0 * (i % 2) as f64;
            let a = Vector2::new(ax, ay);
            setup.pose(a, a)
        })
        .collect()
}

/// Targets left of the camera, rotated toward it (first) or away from it
/// (second), at revolutions `(about x, -25)` for several `about x`.
pub fn opposite_rotation_sets(setup: &StudySetup) -> (Vec<Pose>, Vec<Pose>) {
    let mut toward = Vec::new();
    let mut away = Vec::new();
    for ax in [-25.0, -10.0, 10.0, 25.0] {
        let rev = Vector2::new(ax, -25.0);
        toward.push(setup.pose(rev, Vector2::new(ax, -30.0)));
        away.push(setup.pose(rev, Vector2::new(ax, 30.0)));
    }
    (toward, away)
}

/// Mean scalar uncertainty over the left and right halves of a map.
pub fn half_means(map: &UncertaintyMap) -> (f64, f64) {
    let mut acc = [(0.0, 0usize); 2];
    for y in 0..map.height {
        for x in 0..map.width {
            let v = map.scalar[y * map.width + x];
            if v.is_finite() {
                let side = usize::from(2 * x >= map.width);
                acc[side].0 += v;
                acc[side].1 += 1;
            }
        }
    }
    let mean = |(s, n): (f64, usize)| if n == 0 { f64::NAN } else { s / n as f64 };
    (mean(acc[0]), mean(acc[1]))
}

/// Ellipse in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseShape {
    pub center: Point2<f64>,
    pub semi_axes: Vector2<f64>,
    /// Orientation of the first axis, radians.
    pub angle: f64,
}

impl EllipseShape {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let d = Vector2::new(x - self.center.x, y - self.center.y);
        let u = c * d.x + s * d.y;
        let v = -s * d.x + c * d.y;
        (u / self.semi_axes.x).powi(2) + (v / self.semi_axes.y).powi(2) <= 1.0
    }
}

/// Dark ellipse on the board background with `n x n` supersampled coverage.
pub fn render_ellipse(e: &EllipseShape, width: usize, height: usize, n: usize) -> GrayImage {
    GrayImage::from_fn(width, height, |x, y| {
        let mut hits = 0usize;
        for j in 0..n {
            for i in 0..n {
                let sx = x as f64 - 0.5 + (i as f64 + 0.5) / n as f64;
                let sy = y as f64 - 0.5 + (j as f64 + 0.5) / n as f64;
                hits += usize::from(e.contains(sx, sy));
            }
        }
        BACKGROUND - (BACKGROUND - FOREGROUND) * hits as f64 / (n * n) as f64
    })
}

/// Intersection over union of two masks.
pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.iter().zip(b) {
        inter += usize::from(p && q);
        union += usize::from(p || q);
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Sample mask of a closed polygon on an `n x n` subgrid per pixel, row-major
/// in sample units.
pub fn polygon_mask(points: &[Point2<f64>], width: usize, height: usize, n: usize) -> Vec<bool> {
    let (sw, sh) = (width * n, height * n);
    let mut mask = vec![false; sw * sh];
    let mut xs = Vec::new();
    for sy in 0..sh {
        let y = (sy as f64 + 0.5) / n as f64 - 0.5;
        xs.clear();
        for (i, a) in points.iter().enumerate() {
            let b = points[(i + 1) % points.len()];
            if (a.y <= y) != (b.y <= y) {
                xs.push(a.x + (y - a.y) / (b.y - a.y) * (b.x - a.x));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let lo = ((pair[0] + 0.5) * n as f64 - 0.5).ceil().max(0.0) as usize;
            let hi = ((pair[1] + 0.5) * n as f64 - 0.5).floor();
            if hi < 0.0 {
                continue;
            }
            for sx in lo..=(hi as usize).min(sw - 1) {
                mask[sy * sw + sx] = true;
            }
        }
    }
    mask
}

/// Sample mask of an ellipse on the same subgrid as [`polygon_mask`].
pub fn ellipse_mask(e: &EllipseShape, width: usize, height: usize, n: usize) -> Vec<bool> {
    let sw = width * n;
    (0..sw * height * n)
        .map(|i| {
            let x = ((i % sw) as f64 + 0.5) / n as f64 - 0.5;
            let y = ((i / sw) as f64 + 0.5) / n as f64 - 0.5;
            e.contains(x, y)
        })
        .collect()
}

/// Candidates of one blurred ellipse across global thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrial {
    pub ellipse: EllipseShape,
    /// Gaussian blur standard deviation of each pass, px.
    pub sigma: f64,
    pub levels: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// IoU of each candidate contour polygon with the true ellipse.
    pub ious: Vec<f64>,
}

impl SelectionTrial {
    /// Index of the lowest-uncertainty candidate.
    pub fn selected(&self) -> Option<usize> {
        (0..self.epsilons.len()).min_by(|&a, &b| self.epsilons[a].total_cmp(&self.epsilons[b]))
    }

    /// True when the lowest-uncertainty candidate has the highest IoU.
    pub fn selection_is_best(&self) -> bool {
        let best = self.ious.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.selected().is_some_and(|i| self.ious[i] >= best)
    }
}

/// Blurs a random ellipse `passes` times and scores every threshold candidate
/// that yields exactly one blob. The intensity-range window spans three
/// standard deviations of the combined blur.
pub fn selection_trial(rng: &mut impl Rng, sigma: f64, passes: usize) -> Result<SelectionTrial> {
    const SIZE: usize = 160;
    const SUBSAMPLES: usize = 4;
    let ellipse = EllipseShape {
        center: Point2::new(
            SIZE as f64 / 2.0 + rng.random_range(-3.0..3.0),
            SIZE as f64 / 2.0 + rng.random_range(-3.0..3.0),
        ),
        semi_axes: Vector2::new(rng.random_range(25.0..45.0), rng.random_range(15.0..35.0)),
        angle: rng.random_range(0.0..std::f64::consts::PI),
    };
    let mut img = render_ellipse(&ellipse, SIZE, SIZE, 8);
    for _ in 0..passes {
        img = gaussian_blur(&img, sigma);
    }
    let levels: Vec<f64> = (0..=10).map(|i| 100.0 + 10.0 * i as f64).collect();
    let params = DetectParams {
        thresholds: levels.iter().map(|&level| ThresholdSpec::Global { level }).collect(),
        window: (3.0 * sigma * (passes.max(1) as f64).sqrt()).ceil() as usize,
        ..DetectParams::default()
    };
    let groups = collect_candidates(&img, &params)?;
    let mut trial = SelectionTrial {
        ellipse,
        sigma,
        levels: Vec::new(),
        epsilons: Vec::new(),
        ious: Vec::new(),
    };
    let truth = ellipse_mask(&ellipse, SIZE, SIZE, SUBSAMPLES);
    for (spec, group) in params.thresholds.iter().zip(&groups) {
        let [blob] = group.as_slice() else { continue };
        let ThresholdSpec::Global { level } = *spec else { continue };
        trial.levels.push(level);
        trial.epsilons.push(blob.measurement.epsilon);
        trial.ious.push(iou(&polygon_mask(blob.contour.points(), SIZE, SIZE, SUBSAMPLES), &truth));
    }
    if trial.levels.is_empty() {
        return Err(Error::DetectionFailure { found: 0, expected: 1 });
    }
    Ok(trial)
}
