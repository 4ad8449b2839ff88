//! Anti-aliased rendering of a circle-grid target through the camera model.

use nalgebra::{Matrix3, Point2, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::image::{gaussian_blur, GrayImage};
use crate::projection::{project_point, CircleSampler, Distortion, Intrinsics, Pose, TargetSpec};
use crate::{Error, Result};

/// Gray level of the target board.
pub const BACKGROUND: f64 = 220.0;
/// Gray level of the printed circles.
pub const FOREGROUND: f64 = 30.0;
/// Sub-frames averaged for motion blur.
pub const MOTION_FRAMES: usize = 15;
/// Boundary points kept per ground-truth contour.
pub const CONTOUR_SAMPLES: usize = 360;

/// Post-render blur.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Blur {
    #[default]
    None,
    /// Gaussian convolution with the given standard deviation, px.
    Gaussian { sigma: f64 },
    /// Linear motion over `[-1, 1] * (dx, dy)`, px.
    Translation { dx: f64, dy: f64 },
    /// Rotation over `[-degrees, degrees]` about a pixel.
    Rotation { degrees: f64, cx: f64, cy: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub intrinsics: Intrinsics,
    pub distortion: Distortion,
    pub pose: Pose,
    pub target: TargetSpec,
    pub width: usize,
    pub height: usize,
    /// Samples per pixel side near circle edges.
    pub supersampling: usize,
    pub blur: Blur,
    /// Standard deviation of additive Gaussian noise, gray levels.
    pub noise: f64,
    pub noise_seed: u64,
    /// Minimum distance between a circle and the image border, px.
    pub margin: f64,
}

impl RenderSpec {
    pub fn new(intrinsics: Intrinsics, distortion: Distortion, pose: Pose, target: TargetSpec, width: usize, height: usize) -> Self {
        Self {
            intrinsics,
            distortion,
            pose,
            target,
            width,
            height,
            supersampling: 8,
            blur: Blur::None,
            noise: 0.0,
            noise_seed: 0,
            margin: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.target.validate()?;
        if self.supersampling < 4 {
            return Err(Error::InvalidArgument(format!(
                "supersampling must be at least 4, got {}",
                self.supersampling
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::EmptyImage);
        }
        if !(self.noise >= 0.0) {
            return Err(Error::InvalidArgument("noise must be non-negative".into()));
        }
        Ok(())
    }
}

/// Ground truth of one rendered circle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleTruth {
    /// Centroid of the full image of the circle, px.
    pub centroid: Point2<f64>,
    /// Image of the circle center, px.
    pub center_projection: Point2<f64>,
    /// Image boundary at uniform target-plane angles, px.
    pub contour: Vec<Point2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub image: GrayImage,
    /// Target order.
    pub circles: Vec<CircleTruth>,
}

/// Maps pixels back onto the target plane.
struct InverseMap {
    k: Intrinsics,
    d: Distortion,
    plane: Matrix3<f64>,
    target: TargetSpec,
}

impl InverseMap {
    fn new(spec: &RenderSpec) -> Result<Self> {
        let r = spec.pose.rotation_matrix();
        let e = Matrix3::from_columns(&[r.column(0).into_owned(), r.column(1).into_owned(), spec.pose.translation]);
        let plane = e
            .try_inverse()
            .ok_or_else(|| Error::DegenerateProjection("target plane passes through the camera center".into()))?;
        Ok(Self {
            k: spec.intrinsics,
            d: spec.distortion.clone(),
            plane,
            target: spec.target,
        })
    }

    fn to_target(&self, x: f64, y: f64) -> Option<Point2<f64>> {
        let pn = self.d.undistort(self.k.to_normalized(Point2::new(x, y)))?;
        let q = self.plane * Vector3::new(pn.x, pn.y, 1.0);
        (q.z > 0.0).then(|| Point2::new(q.x / q.z, q.y / q.z))
    }

    /// Distance from the nearest circle edge, negative inside.
    fn signed_distance(&self, p: Point2<f64>) -> f64 {
        let t = &self.target;
        let col = (p.x / t.spacing).round().clamp(0.0, (t.cols - 1) as f64);
        let row = (p.y / t.spacing).round().clamp(0.0, (t.rows - 1) as f64);
        let c = Vector2::new(col * t.spacing, row * t.spacing);
        (p.coords - c).norm() - t.radius
    }

    fn inside(&self, x: f64, y: f64) -> bool {
        self.to_target(x, y).is_some_and(|p| self.signed_distance(p) <= 0.0)
    }

    /// Fraction of the pixel at `(x, y)` covered by circles.
    fn coverage(&self, x: usize, y: usize, n: usize) -> f64 {
        let (xf, yf) = (x as f64, y as f64);
        let Some(p0) = self.to_target(xf, yf) else {
            return 0.0;
        };
        let step = [(1.0, 0.0), (0.0, 1.0)]
            .iter()
            .filter_map(|&(dx, dy)| self.to_target(xf + dx, yf + dy))
            .map(|q| (q - p0).norm())
            .fold(0.0, f64::max);
        let dist = self.signed_distance(p0);
        if step > 0.0 && dist.abs() > 2.0 * step {
            return if dist < 0.0 { 1.0 } else { 0.0 };
        }
        let mut hits = 0usize;
        for j in 0..n {
            for i in 0..n {
                let sx = xf - 0.5 + (i as f64 + 0.5) / n as f64;
                let sy = yf - 0.5 + (j as f64 + 0.5) / n as f64;
                if self.inside(sx, sy) {
                    hits += 1;
                }
            }
        }
        hits as f64 / (n * n) as f64
    }
}

/// Ground truth of every circle; fails when a circle leaves the frame.
pub fn circle_truth(spec: &RenderSpec, sampler: &CircleSampler) -> Result<Vec<CircleTruth>> {
    let (k, d, pose, t) = (&spec.intrinsics, &spec.distortion, &spec.pose, &spec.target);
    (0..t.len())
        .map(|i| {
            let c = t.center(i);
            let centroid = sampler.centroid(k, d, pose, c, t.radius)?;
            let contour = (0..CONTOUR_SAMPLES)
                .map(|j| {
                    let a = std::f64::consts::TAU * j as f64 / CONTOUR_SAMPLES as f64;
                    project_point(k, d, pose, c + Vector2::new(a.cos(), a.sin()) * t.radius)
                })
                .collect::<Result<Vec<_>>>()?;
            let m = spec.margin;
            let inside = contour.iter().all(|p| {
                p.x >= m && p.y >= m && p.x <= spec.width as f64 - 1.0 - m && p.y <= spec.height as f64 - 1.0 - m
            });
            if !inside {
                return Err(Error::OutOfFrame(i));
            }
            Ok(CircleTruth {
                centroid,
                center_projection: project_point(k, d, pose, c)?,
                contour,
            })
        })
        .collect()
}

/// Renders the target and records the ground truth of every circle.
///
/// Pixels near a circle edge are supersampled by inverse mapping through the
/// exact camera model; others take the value of their center.
pub fn render(spec: &RenderSpec) -> Result<Rendered> {
    spec.validate()?;
    let circles = circle_truth(spec, &CircleSampler::new(2000)?)?;
    let inv = InverseMap::new(spec)?;
    let mut cover = vec![0.0; spec.width * spec.height];
    for c in &circles {
        let (mut lo, mut hi) = (c.contour[0], c.contour[0]);
        for p in &c.contour {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let x0 = (lo.x.floor() - 2.0).max(0.0) as usize;
        let y0 = (lo.y.floor() - 2.0).max(0.0) as usize;
        let x1 = ((hi.x.ceil() + 2.0) as usize).min(spec.width - 1);
        let y1 = ((hi.y.ceil() + 2.0) as usize).min(spec.height - 1);
        let rows: Vec<Vec<f64>> = (y0..=y1)
            .into_par_iter()
            .map(|y| (x0..=x1).map(|x| inv.coverage(x, y, spec.supersampling)).collect())
            .collect();
        for (y, row) in (y0..=y1).zip(rows) {
            for (x, v) in (x0..=x1).zip(row) {
                let cell: &mut f64 = &mut cover[y * spec.width + x];
                *cell = cell.max(v);
            }
        }
    }
    let sharp = GrayImage::from_fn(spec.width, spec.height, |x, y| {
        BACKGROUND - (BACKGROUND - FOREGROUND) * cover[y * spec.width + x]
    });
    let mut img = apply_blur(&sharp, &spec.blur);
    if spec.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
        let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let data: Vec<f64> = img.data().iter().map(|v| v + normal.sample(&mut rng)).collect();
        img = GrayImage::new(spec.width, spec.height, data)?;
    }
    let quantized = img.data().iter().map(|v| v.round().clamp(0.0, 255.0)).collect();
    Ok(Rendered {
        image: GrayImage::new(spec.width, spec.height, quantized)?,
        circles,
    })
}

/// Bilinear sample with background outside the image.
fn sample(img: &GrayImage, x: f64, y: f64) -> f64 {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let at = |xi: i64, yi: i64| {
        if xi < 0 || yi < 0 || xi >= w || yi >= h {
            BACKGROUND
        } else {
            img.get(xi as usize, yi as usize)
        }
    };
    let (xi, yi) = (x0 as i64, y0 as i64);
    (1.0 - fy) * ((1.0 - fx) * at(xi, yi) + fx * at(xi + 1, yi)) + fy * ((1.0 - fx) * at(xi, yi + 1) + fx * at(xi + 1, yi + 1))
}

/// Applies a blur to a rendered image.
pub fn apply_blur(img: &GrayImage, blur: &Blur) -> GrayImage {
    let offsets = || (0..MOTION_FRAMES).map(|j| -1.0 + 2.0 * j as f64 / (MOTION_FRAMES - 1) as f64);
    match *blur {
        Blur::None => img.clone(),
        Blur::Gaussian { sigma } => gaussian_blur(img, sigma),
        Blur::Translation { dx, dy } => GrayImage::from_fn(img.width(), img.height(), |x, y| {
            offsets()
                .map(|t| sample(img, x as f64 - t * dx, y as f64 - t * dy))
                .sum::<f64>()
                / MOTION_FRAMES as f64
        }),
        Blur::Rotation { degrees, cx, cy } => {
            let rots: Vec<(f64, f64)> = offsets().map(|t| (-t * degrees).to_radians().sin_cos()).collect();
            GrayImage::from_fn(img.width(), img.height(), |x, y| {
                let (px, py) = (x as f64 - cx, y as f64 - cy);
                rots.iter()
                    .map(|&(s, c)| sample(img, cx + c * px - s * py, cy + s * px + c * py))
                    .sum::<f64>()
                    / MOTION_FRAMES as f64
            })
        }
    }
}
