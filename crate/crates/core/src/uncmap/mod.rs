//! Per-pixel covariance of the projected point induced by the covariance of
//! the intrinsic and distortion parameters.
//!
//! Rays are sampled on a regular azimuth/elevation grid, the parameter
//! covariance is pushed through the pixel Jacobian at each ray, and every
//! image pixel is filled by bilinear interpolation in ray space. Pixels
//! that the distortion model cannot reach are masked.

mod colormap;

use std::f64::consts::TAU;

use nalgebra::{DMatrix, Matrix2, Matrix2xX, Point2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::projection::{Distortion, Intrinsics};
use crate::uncertainty::scalar_uncertainty;
use crate::{Error, Result};

pub use colormap::VIRIDIS;

/// Default number of azimuth and elevation samples.
pub const DEFAULT_GRID: usize = 41;

/// Normalized-plane radius beyond which no fold is searched for.
const FOLD_SEARCH_RADIUS: f64 = 20.0;

/// Normalized-plane point of the ray at azimuth `theta` and elevation `phi`.
pub fn ray_point(theta: f64, phi: f64) -> Vector2<f64> {
    phi.tan() * Vector2::new(theta.cos(), theta.sin())
}

/// Smallest undistorted radius at which the distorted radius stops increasing.
pub fn fold_radius(d: &Distortion) -> Option<f64> {
    let ok = |r: f64| {
        let s = r * r;
        d.k(s) > 0.0 && d.k(s) + 2.0 * s * d.dk(s) > 0.0
    };
    const STEPS: usize = 4000;
    let mut lo = 0.0;
    let mut hi = None;
    for i in 1..=STEPS {
        let r = FOLD_SEARCH_RADIUS * i as f64 / STEPS as f64;
        if !ok(r) {
            hi = Some(r);
            break;
        }
        lo = r;
    }
    let mut hi = hi?;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

/// Regular azimuth/elevation ray samples over the field of view.
#[derive(Debug, Clone, PartialEq)]
pub struct RayGrid {
    pub n_az: usize,
    pub n_el: usize,
    /// Elevation of the outermost ring, radians.
    pub phi_max: f64,
    /// Normalized-plane points, elevation-major: index `e * n_az + a`.
    pub points: Vec<Vector2<f64>>,
}

impl RayGrid {
    pub fn theta(&self, a: usize) -> f64 {
        TAU * a as f64 / self.n_az as f64
    }

    pub fn phi(&self, e: usize) -> f64 {
        self.phi_max * e as f64 / (self.n_el - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Field-of-view elevation of an image: the largest ray elevation that lands
/// inside it, capped at the distortion fold.
pub fn field_of_view(k: &Intrinsics, d: &Distortion, width: usize, height: usize) -> Result<f64> {
    k.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::EmptyImage);
    }
    let (w, h) = (width as f64 - 0.5, height as f64 - 0.5);
    let mut r_max: f64 = 0.0;
    for (x, y) in [(-0.5, -0.5), (w, -0.5), (-0.5, h), (w, h)] {
        match d.undistort(k.to_normalized(Point2::new(x, y))) {
            Some(pn) => r_max = r_max.max(pn.norm()),
            None => {
                r_max = fold_radius(d).ok_or(Error::NonMonotonicDistortion)?;
                break;
            }
        }
    }
    if let Some(fold) = fold_radius(d) {
        r_max = r_max.min(fold);
    }
    Ok(r_max.atan())
}

pub fn ray_grid(
    k: &Intrinsics,
    d: &Distortion,
    width: usize,
    height: usize,
    n_az: usize,
    n_el: usize,
) -> Result<RayGrid> {
    if n_az < 3 || n_el < 2 {
        return Err(Error::InvalidArgument(format!(
            "ray grid needs at least 3 azimuth and 2 elevation samples, got {n_az}x{n_el}"
        )));
    }
    let phi_max = field_of_view(k, d, width, height)?;
    let mut grid = RayGrid {
        n_az,
        n_el,
        phi_max,
        points: Vec::with_capacity(n_az * n_el),
    };
    for e in 0..n_el {
        for a in 0..n_az {
            grid.points.push(ray_point(grid.theta(a), grid.phi(e)));
        }
    }
    Ok(grid)
}

/// Parameter count of a model with `nd` radial coefficients.
pub fn parameter_count(nd: usize, skew: bool) -> usize {
    4 + usize::from(skew) + nd
}

/// Pixel Jacobian with respect to `(fx, fy, cx, cy, [eta], d1, ...)` at a
/// normalized-plane point.
pub fn pixel_jacobian(k: &Intrinsics, d: &Distortion, skew: bool, p: Vector2<f64>) -> Matrix2xX<f64> {
    let (x, y) = (p.x, p.y);
    let s = p.norm_squared();
    let kk = d.k(s);
    let mut j = Matrix2xX::zeros(parameter_count(d.order(), skew));
    j[(0, 0)] = kk * x;
    j[(1, 1)] = kk * y;
    j[(0, 2)] = 1.0;
    j[(1, 3)] = 1.0;
    let mut col = 4;
    if skew {
        j[(0, 4)] = kk * y;
        col = 5;
    }
    let mut si = s;
    for i in 0..d.order() {
        j[(0, col + i)] = si * (k.fx * x + k.eta * y);
        j[(1, col + i)] = si * k.fy * y;
        si *= s;
    }
    j
}

/// Covariance `J cov J^T` of the pixel of each normalized-plane point.
///
/// The skew column is present when `param_cov` has one more row than the
/// skew-free layout.
pub fn propagate(
    k: &Intrinsics,
    d: &Distortion,
    param_cov: &DMatrix<f64>,
    points: &[Vector2<f64>],
) -> Result<Vec<Matrix2<f64>>> {
    let n = param_cov.nrows();
    if param_cov.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: param_cov.ncols(),
        });
    }
    let skew = match n {
        n if n == parameter_count(d.order(), false) => false,
        n if n == parameter_count(d.order(), true) => true,
        _ => {
            return Err(Error::DimensionMismatch {
                expected: parameter_count(d.order(), false),
                got: n,
            })
        }
    };
    Ok(points
        .par_iter()
        .map(|&p| {
            let j = pixel_jacobian(k, d, skew, p);
            let c = &j * param_cov * j.transpose();
            Matrix2::new(c[(0, 0)], c[(0, 1)], c[(1, 0)], c[(1, 1)])
        })
        .collect())
}

/// Per-pixel projected-point covariance, row-major. Masked pixels hold NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyMap {
    pub width: usize,
    pub height: usize,
    /// `(Kxx, Kxy, Kyy)` per pixel, px^2.
    pub cov: Vec<[f64; 3]>,
    /// `2 sqrt((Kxx + Kyy) / 2)` per pixel, px.
    pub scalar: Vec<f64>,
}

impl UncertaintyMap {
    /// Map holding `cov` at every pixel.
    pub fn constant(width: usize, height: usize, cov: &Matrix2<f64>) -> Self {
        let c = [cov[(0, 0)], 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)]];
        let e = scalar_uncertainty(cov);
        Self {
            width,
            height,
            cov: vec![c; width * height],
            scalar: vec![e; width * height],
        }
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.scalar[y * self.width + x].is_finite()
    }

    pub fn get(&self, x: usize, y: usize) -> Option<Matrix2<f64>> {
        let [a, b, c] = self.cov[y * self.width + x];
        self.is_valid(x, y).then(|| Matrix2::new(a, b, b, c))
    }

    /// Fraction of pixels with a value.
    pub fn coverage(&self) -> f64 {
        let valid = self.scalar.iter().filter(|v| v.is_finite()).count();
        valid as f64 / self.scalar.len().max(1) as f64
    }

    /// Smallest and largest scalar uncertainty over valid pixels.
    pub fn scalar_range(&self) -> Option<(f64, f64)> {
        self.scalar
            .iter()
            .filter(|v| v.is_finite())
            .fold(None, |acc, &v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }
}

/// Bilinear interpolation of the grid covariances to every pixel.
pub fn render_map(
    grid: &RayGrid,
    covs: &[Matrix2<f64>],
    k: &Intrinsics,
    d: &Distortion,
    width: usize,
    height: usize,
) -> Result<UncertaintyMap> {
    if covs.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: covs.len(),
        });
    }
    if grid.n_az < 3 || grid.n_el < 2 || grid.len() != grid.n_az * grid.n_el {
        return Err(Error::InvalidArgument("ray grid too sparse to cover the image".into()));
    }
    if width == 0 || height == 0 {
        return Err(Error::EmptyImage);
    }
    let channels: Vec<[f64; 3]> = covs
        .iter()
        .map(|c| [c[(0, 0)], 0.5 * (c[(0, 1)] + c[(1, 0)]), c[(1, 1)]])
        .collect();
    let rows: Vec<Vec<[f64; 3]>> = (0..height)
        .into_par_iter()
        .map(|y| {
            (0..width)
                .map(|x| {
                    let pn = d.undistort(k.to_normalized(Point2::new(x as f64, y as f64)));
                    pn.and_then(|pn| interpolate(grid, &channels, pn))
                        .unwrap_or([f64::NAN; 3])
                })
                .collect()
        })
        .collect();
    let cov: Vec<[f64; 3]> = rows.into_iter().flatten().collect();
    let scalar = cov
        .iter()
        .map(|c| {
            if c[0].is_nan() {
                f64::NAN
            } else {
                scalar_uncertainty(&Matrix2::new(c[0], c[1], c[1], c[2]))
            }
        })
        .collect();
    Ok(UncertaintyMap {
        width,
        height,
        cov,
        scalar,
    })
}

fn interpolate(grid: &RayGrid, channels: &[[f64; 3]], pn: Vector2<f64>) -> Option<[f64; 3]> {
    let phi = pn.norm().atan();
    let fe = phi / grid.phi_max * (grid.n_el - 1) as f64;
    if !fe.is_finite() || fe > (grid.n_el - 1) as f64 + 1e-9 {
        return None;
    }
    let fe = fe.min((grid.n_el - 1) as f64);
    let e0 = (fe.floor() as usize).min(grid.n_el - 2);
    let we = fe - e0 as f64;
    let theta = pn.y.atan2(pn.x).rem_euclid(TAU);
    let fa = theta / TAU * grid.n_az as f64;
    let a0 = (fa.floor() as usize) % grid.n_az;
    let wa = fa - fa.floor();
    let a1 = (a0 + 1) % grid.n_az;
    let mut out = [0.0; 3];
    for (e, a, w) in [
        (e0, a0, (1.0 - we) * (1.0 - wa)),
        (e0, a1, (1.0 - we) * wa),
        (e0 + 1, a0, we * (1.0 - wa)),
        (e0 + 1, a1, we * wa),
    ] {
        let c = channels[e * grid.n_az + a];
        for i in 0..3 {
            out[i] += w * c[i];
        }
    }
    Some(out)
}

/// Arithmetic mean of the scalar channel over valid pixels.
pub fn mean_uncertainty(map: &UncertaintyMap) -> f64 {
    let (sum, n) = map
        .scalar
        .iter()
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Ray grid, propagation and interpolation in one call.
pub fn uncertainty_map(
    k: &Intrinsics,
    d: &Distortion,
    param_cov: &DMatrix<f64>,
    width: usize,
    height: usize,
    n_grid: usize,
) -> Result<UncertaintyMap> {
    let grid = ray_grid(k, d, width, height, n_grid, n_grid)?;
    let covs = propagate(k, d, param_cov, &grid.points)?;
    render_map(&grid, &covs, k, d, width, height)
}

/// Linear color scale of a heatmap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapScale {
    pub min: f64,
    pub max: f64,
}

/// 8-bit color rendering of the scalar channel; masked pixels are black.
pub fn heatmap(map: &UncertaintyMap, scale: Option<HeatmapScale>) -> (::image::RgbImage, HeatmapScale) {
    let scale = scale.unwrap_or_else(|| {
        let (min, max) = map.scalar_range().unwrap_or((0.0, 0.0));
        HeatmapScale { min, max }
    });
    let span = scale.max - scale.min;
    let img = ::image::RgbImage::from_fn(map.width as u32, map.height as u32, |x, y| {
        let v = map.scalar[y as usize * map.width + x as usize];
        if !v.is_finite() {
            return ::image::Rgb([0, 0, 0]);
        }
        let t = if span > 0.0 { ((v - scale.min) / span).clamp(0.0, 1.0) } else { 0.0 };
        ::image::Rgb(VIRIDIS[(t * 255.0).round() as usize])
    });
    (img, scale)
}

/// Draws white dots of the given radius at each point.
pub fn overlay_points(img: &mut ::image::RgbImage, points: &[Point2<f64>], radius: f64) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let r = radius.ceil() as i64;
    for p in points {
        let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
        for y in (cy - r).max(0)..=(cy + r).min(h - 1) {
            for x in (cx - r).max(0)..=(cx + r).min(w - 1) {
                let (dx, dy) = (x as f64 - p.x, y as f64 - p.y);
                if dx * dx + dy * dy <= radius * radius {
                    img.put_pixel(x as u32, y as u32, ::image::Rgb([255, 255, 255]));
                }
            }
        }
    }
}
