//! Pinhole camera with polynomial radial distortion, and the exact image
//! centroid of a projected target circle.

use std::f64::consts::TAU;

use nalgebra::{Matrix2, Matrix3, Point2, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::moments::{polygon_centroid, CurveMoments};
use crate::{Error, Result};

/// Boundary samples used by [`unbiased_circle_centroid`].
pub const DEFAULT_CENTROID_SAMPLES: usize = 2000;

/// Largest supported number of radial coefficients.
pub const MAX_DISTORTION_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub eta: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            eta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.eta]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive and finite, got ({}, {})",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, self.eta, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Pixel of a distorted normalized-plane point.
    pub fn to_pixel(&self, pd: Vector2<f64>) -> Point2<f64> {
        Point2::new(
            self.fx * pd.x + self.eta * pd.y + self.cx,
            self.fy * pd.y + self.cy,
        )
    }

    /// Distorted normalized-plane point of a pixel.
    pub fn to_normalized(&self, px: Point2<f64>) -> Vector2<f64> {
        let y = (px.y - self.cy) / self.fy;
        Vector2::new((px.x - self.cx - self.eta * y) / self.fx, y)
    }
}

/// Radial distortion `k(s) = 1 + d1 s + d2 s^2 + ...` with `s = x^2 + y^2`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Distortion {
    pub d: Vec<f64>,
}

impl Distortion {
    pub fn new(d: Vec<f64>) -> Result<Self> {
        if d.len() > MAX_DISTORTION_ORDER {
            return Err(Error::InvalidArgument(format!(
                "at most {MAX_DISTORTION_ORDER} radial coefficients, got {}",
                d.len()
            )));
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite distortion coefficient".into()));
        }
        Ok(Self { d })
    }

    pub fn none() -> Self {
        Self { d: Vec::new() }
    }

    pub fn order(&self) -> usize {
        self.d.len()
    }

    pub fn k(&self, s: f64) -> f64 {
        self.d.iter().rev().fold(0.0, |acc, &di| (acc + di) * s) + 1.0
    }

    /// `dk/ds`.
    pub fn dk(&self, s: f64) -> f64 {
        self.d
            .iter()
            .enumerate()
            .rev()
            .fold(0.0, |acc, (i, &di)| acc * s + (i + 1) as f64 * di)
    }

    pub fn distort(&self, pn: Vector2<f64>) -> Vector2<f64> {
        pn * self.k(pn.norm_squared())
    }

    /// `d(distort)/d(pn)`.
    pub fn distort_jacobian(&self, pn: Vector2<f64>) -> Matrix2<f64> {
        let s = pn.norm_squared();
        Matrix2::identity() * self.k(s) + 2.0 * self.dk(s) * pn * pn.transpose()
    }

    /// Inverts [`Distortion::distort`] by Newton iteration on the radius.
    ///
    /// Returns `None` when `pd` lies outside the invertible range.
    pub fn undistort(&self, pd: Vector2<f64>) -> Option<Vector2<f64>> {
        let rd = pd.norm();
        if rd == 0.0 || self.d.is_empty() {
            return Some(pd);
        }
        let mut r = rd;
        for _ in 0..50 {
            let s = r * r;
            let f = r * self.k(s) - rd;
            let df = self.k(s) + 2.0 * s * self.dk(s);
            if df <= 0.0 {
                return None;
            }
            let step = f / df;
            r -= step;
            if r < 0.0 {
                return None;
            }
            if step.abs() <= 1e-15 * r.max(1.0) {
                break;
            }
        }
        let s = r * r;
        if (r * self.k(s) - rd).abs() > 1e-10 * rd.max(1.0) || self.k(s) + 2.0 * s * self.dk(s) <= 0.0 {
            return None;
        }
        Some(pd * (r / rd))
    }

    /// True when `k(s) > 0` and the distorted radius `r k(r^2)` is strictly
    /// increasing for every `s` in `[0, s_max]`.
    pub fn is_monotone(&self, s_max: f64) -> bool {
        const STEPS: usize = 512;
        (0..=STEPS).all(|i| {
            let s = s_max * i as f64 / STEPS as f64;
            self.k(s) > 0.0 && self.k(s) + 2.0 * s * self.dk(s) > 0.0
        })
    }
}

/// Target-to-camera transform, rotation stored as an axis-angle vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_rotation(r: &Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: r.scaled_axis(),
            translation,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *Rotation3::new(self.rotation).matrix()
    }

    /// Camera-frame coordinates of a target-plane point.
    pub fn transform(&self, p: Point2<f64>) -> Vector3<f64> {
        let r = self.rotation_matrix();
        r.column(0) * p.x + r.column(1) * p.y + self.translation
    }

    pub fn to_vec(&self) -> [f64; 6] {
        let (r, t) = (self.rotation, self.translation);
        [r.x, r.y, r.z, t.x, t.y, t.z]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]))
    }
}

/// A planar grid of equal circles, row-major, centers at `(col, row) * spacing`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
    pub radius: f64,
}

impl TargetSpec {
    pub fn new(rows: usize, cols: usize, spacing: f64, radius: f64) -> Result<Self> {
        let t = Self {
            rows,
            cols,
            spacing,
            radius,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidArgument("target needs at least one row and column".into()));
        }
        if !(self.radius > 0.0) || !(self.spacing > 2.0 * self.radius) || !self.spacing.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "need 0 < radius < spacing / 2, got radius {} spacing {}",
                self.radius, self.spacing
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self, index: usize) -> Point2<f64> {
        let (row, col) = (index / self.cols, index % self.cols);
        Point2::new(col as f64 * self.spacing, row as f64 * self.spacing)
    }

    pub fn centers(&self) -> Vec<Point2<f64>> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }
}

/// Normalized (undistorted) image-plane point of a target-plane point.
pub fn normalize_point(pose: &Pose, p: Point2<f64>) -> Result<Vector2<f64>> {
    let c = pose.transform(p);
    if !(c.z > 0.0) {
        return Err(Error::NonPositiveDepth(c.z));
    }
    Ok(Vector2::new(c.x / c.z, c.y / c.z))
}

/// Pixel of a target-plane point under the full camera model.
pub fn project_point(k: &Intrinsics, d: &Distortion, pose: &Pose, p: Point2<f64>) -> Result<Point2<f64>> {
    let pn = normalize_point(pose, p)?;
    Ok(k.to_pixel(d.distort(pn)))
}

/// Plane-to-image homography `K [r1 r2 t]`, scaled so `H[2,2] = 1`.
pub fn homography(k: &Intrinsics, pose: &Pose) -> Result<Matrix3<f64>> {
    let r = pose.rotation_matrix();
    let e = Matrix3::from_columns(&[r.column(0).into_owned(), r.column(1).into_owned(), pose.translation]);
    let h = k.matrix() * e;
    let h22 = h[(2, 2)];
    if h22.abs() < 1e-12 * h.amax() {
        return Err(Error::DegenerateProjection(
            "target plane passes through the camera center".into(),
        ));
    }
    Ok(h / h22)
}

/// Applies a homography to a plane point.
pub fn apply_homography(h: &Matrix3<f64>, p: Point2<f64>) -> Point2<f64> {
    let q = h * Vector3::new(p.x, p.y, 1.0);
    Point2::new(q.x / q.z, q.y / q.z)
}

/// Centroid of the full image of a target circle, with the default sample count.
pub fn unbiased_circle_centroid(
    k: &Intrinsics,
    d: &Distortion,
    pose: &Pose,
    center: Point2<f64>,
    radius: f64,
) -> Result<Point2<f64>> {
    unbiased_circle_centroid_with(k, d, pose, center, radius, DEFAULT_CENTROID_SAMPLES)
}

/// Centroid of the image region bounded by the mapped circle.
///
/// See [`CircleSampler`] for the construction.
pub fn unbiased_circle_centroid_with(
    k: &Intrinsics,
    d: &Distortion,
    pose: &Pose,
    center: Point2<f64>,
    radius: f64,
    samples: usize,
) -> Result<Point2<f64>> {
    CircleSampler::new(samples)?.centroid(k, d, pose, center, radius)
}

/// Exact image centroid of target circles, with a reusable angle table.
///
/// The boundary is sampled at `samples` angles starting at zero. Each sample
/// carries its exact tangent through the chain rule, and the Green moments are
/// integrated with the periodic trapezoidal rule, which converges faster than
/// any power of `1 / samples` for this smooth closed curve.
#[derive(Debug, Clone)]
pub struct CircleSampler {
    angles: Vec<(f64, f64)>,
}

impl CircleSampler {
    pub fn new(samples: usize) -> Result<Self> {
        if samples < 8 {
            return Err(Error::InvalidArgument(format!("need at least 8 samples, got {samples}")));
        }
        Ok(Self {
            angles: (0..samples)
                .map(|i| (TAU * i as f64 / samples as f64).sin_cos())
                .collect(),
        })
    }

    pub fn samples(&self) -> usize {
        self.angles.len()
    }

    pub fn centroid(
        &self,
        k: &Intrinsics,
        d: &Distortion,
        pose: &Pose,
        center: Point2<f64>,
        radius: f64,
    ) -> Result<Point2<f64>> {
        let r = pose.rotation_matrix();
        let (r1, r2) = (r.column(0).into_owned(), r.column(1).into_owned());
        let origin = r1 * center.x + r2 * center.y + pose.translation;
        let kk = Matrix2::new(k.fx, k.eta, 0.0, k.fy);
        let mut acc = CurveMoments::default();
        for &(sin, cos) in &self.angles {
            let c = origin + (r1 * cos + r2 * sin) * radius;
            if !(c.z > 0.0) {
                return Err(Error::NonPositiveDepth(c.z));
            }
            let pn = Vector2::new(c.x / c.z, c.y / c.z);
            let dc = (r2 * cos - r1 * sin) * radius;
            let dpn = Vector2::new(dc.x - pn.x * dc.z, dc.y - pn.y * dc.z) / c.z;
            let s = pn.norm_squared();
            let (kv, dk) = (d.k(s), d.dk(s));
            if kv + 2.0 * s * dk <= 0.0 {
                return Err(Error::DegenerateProjection(
                    "circle reaches the fold of the distortion model".into(),
                ));
            }
            let dpd = dpn * kv + pn * (2.0 * dk * pn.dot(&dpn));
            acc.add(k.to_pixel(pn * kv), kk * dpd);
        }
        let m = acc
            .finish(self.angles.len())
            .map_err(|_| Error::DegenerateProjection("projected circle has no area".into()))?;
        polygon_centroid(&m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gt_k() -> Intrinsics {
        Intrinsics::new(600.0, 600.0, 600.0, 450.0)
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let angle = rng.random_range(0.0..0.6);
        Pose::new(
            axis * angle,
            Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(5.0..9.0),
            ),
        )
    }

    /// Independent transform chain: explicit Rodrigues formula and homogeneous K.
    fn oracle_project(k: &Intrinsics, d: &[f64], pose: &Pose, p: Point2<f64>) -> Point2<f64> {
        let w = pose.rotation;
        let theta = w.norm();
        let a = w / theta;
        let x = Vector3::new(p.x, p.y, 0.0);
        let rx = x * theta.cos() + a.cross(&x) * theta.sin() + a * a.dot(&x) * (1.0 - theta.cos());
        let c = rx + pose.translation;
        let (xn, yn) = (c.x / c.z, c.y / c.z);
        let s = xn * xn + yn * yn;
        let mut kk = 1.0;
        let mut sp = 1.0;
        for di in d {
            sp *= s;
            kk += di * sp;
        }
        let q = k.matrix() * Vector3::new(kk * xn, kk * yn, 1.0);
        Point2::new(q.x, q.y)
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let pose = Pose::new(Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0));
        let p = project_point(&gt_k(), &Distortion::none(), &pose, Point2::origin()).unwrap();
        assert_eq!(p, Point2::new(600.0, 450.0));
    }

    #[test]
    fn radial_factor_plug_in() {
        let d = Distortion::new(vec![-0.4]).unwrap();
        assert!((d.k(0.25) - 0.9).abs() < 1e-15);
        let pd = d.distort(Vector2::new(0.5, 0.0));
        assert!((pd.x - 0.45).abs() < 1e-15);
        assert!((d.dk(0.3) + 0.4).abs() < 1e-15);
        let d2 = Distortion::new(vec![0.1, -0.2, 0.03]).unwrap();
        let s = 0.7;
        assert!((d2.k(s) - (1.0 + 0.1 * s - 0.2 * s * s + 0.03 * s * s * s)).abs() < 1e-15);
        assert!((d2.dk(s) - (0.1 - 0.4 * s + 0.09 * s * s)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Distortion::new(vec![0.0; 5]).is_err());
        assert!(Distortion::new(vec![f64::NAN]).is_err());
        assert!(Intrinsics::new(-1.0, 600.0, 0.0, 0.0).validate().is_err());
        assert!(TargetSpec::new(3, 4, 1.0, 0.5).is_err());
        assert!(TargetSpec::new(0, 4, 1.0, 0.3).is_err());
    }

    #[test]
    fn behind_camera_is_an_error() {
        let pose = Pose::new(Vector3::zeros(), Vector3::new(0.0, 0.0, -1.0));
        assert!(matches!(
            project_point(&gt_k(), &Distortion::none(), &pose, Point2::origin()),
            Err(Error::NonPositiveDepth(_))
        ));
    }

    #[test]
    fn matches_independent_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let k = Intrinsics {
                fx: rng.random_range(300.0..900.0),
                fy: rng.random_range(300.0..900.0),
                cx: rng.random_range(200.0..800.0),
                cy: rng.random_range(200.0..600.0),
                eta: rng.random_range(-2.0..2.0),
            };
            let d = vec![rng.random_range(-0.5..0.5), rng.random_range(-0.2..0.2)];
            let pose = random_pose(&mut rng);
            let p = Point2::new(rng.random_range(-1.0..3.0), rng.random_range(-1.0..3.0));
            let a = project_point(&k, &Distortion::new(d.clone()).unwrap(), &pose, p).unwrap();
            let b = oracle_project(&k, &d, &pose, p);
            assert!((a - b).norm() < 1e-12 * a.coords.norm());
        }
    }

    #[test]
    fn frontal_homography_is_k() {
        let pose = Pose::new(Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0));
        let h = homography(&gt_k(), &pose).unwrap();
        assert!((h - gt_k().matrix()).amax() < 1e-15);
    }

    #[test]
    fn homography_matches_projection_without_distortion() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let target = TargetSpec::new(3, 4, 1.0, 0.3).unwrap();
        for _ in 0..50 {
            let pose = random_pose(&mut rng);
            let h = homography(&gt_k(), &pose).unwrap();
            let left = (gt_k().matrix().try_inverse().unwrap() * h).fixed_view::<2, 2>(0, 0).determinant();
            assert!(left.abs() > 1e-9);
            for c in [0, 3, 8, 11] {
                let p = target.center(c);
                let a = apply_homography(&h, p);
                let b = project_point(&gt_k(), &Distortion::none(), &pose, p).unwrap();
                assert!((a - b).norm() < 1e-12 * b.coords.norm());
            }
        }
    }

    #[test]
    fn plane_through_center_is_degenerate() {
        // tilt by 90 degrees about x so the camera sits in the target plane
        let pose = Pose::new(Vector3::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0), Vector3::new(0.0, 0.0, 0.0));
        assert!(homography(&gt_k(), &pose).is_err());
    }

    #[test]
    fn undistort_inverts_distort() {
        let d = Distortion::new(vec![-0.4, 0.05]).unwrap();
        for &(x, y) in &[(0.0, 0.0), (0.3, -0.2), (-0.6, 0.4), (0.1, 0.7)] {
            let pn = Vector2::new(x, y);
            let back = d.undistort(d.distort(pn)).unwrap();
            assert!((back - pn).norm() < 1e-13);
        }
        // r - 0.4 r^3 peaks at about 0.6086; larger distorted radii have no preimage
        let fold = Distortion::new(vec![-0.4]).unwrap();
        assert!(fold.undistort(Vector2::new(0.6, 0.0)).is_some());
        assert!(fold.undistort(Vector2::new(0.62, 0.0)).is_none());
    }

    #[test]
    fn monotonicity_guard() {
        let d = Distortion::new(vec![-0.4]).unwrap();
        // d(r k)/dr = 1 - 1.2 s vanishes at s = 5/6
        assert!(d.is_monotone(0.8));
        assert!(!d.is_monotone(0.9));
        assert!(Distortion::none().is_monotone(100.0));
    }

    /// Center of the conic that a circle maps to under a homography.
    fn conic_center(h: &Matrix3<f64>, c: Point2<f64>, r: f64) -> Point2<f64> {
        let q = Matrix3::new(1.0, 0.0, -c.x, 0.0, 1.0, -c.y, -c.x, -c.y, c.x * c.x + c.y * c.y - r * r);
        let hi = h.try_inverse().unwrap();
        let cimg = hi.transpose() * q * hi;
        let a = Matrix2::new(cimg[(0, 0)], cimg[(0, 1)], cimg[(1, 0)], cimg[(1, 1)]);
        let b = Vector2::new(cimg[(0, 2)], cimg[(1, 2)]);
        Point2::from(-a.try_inverse().unwrap() * b)
    }

    #[test]
    fn matches_conic_centroid_without_distortion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let pose = random_pose(&mut rng);
            let center = Point2::new(rng.random_range(0.0..3.0), rng.random_range(0.0..2.0));
            let h = homography(&gt_k(), &pose).unwrap();
            let a = unbiased_circle_centroid(&gt_k(), &Distortion::none(), &pose, center, 0.35).unwrap();
            let b = conic_center(&h, center, 0.35);
            assert!((a - b).norm() < 1e-9, "{}", (a - b).norm());
        }
    }

    #[test]
    fn frontal_center_projection_is_exact() {
        let pose = Pose::new(Vector3::zeros(), Vector3::new(-1.0, -0.5, 4.0));
        let c = Point2::new(2.0, 1.5);
        let a = unbiased_circle_centroid(&gt_k(), &Distortion::none(), &pose, c, 0.4).unwrap();
        let b = project_point(&gt_k(), &Distortion::none(), &pose, c).unwrap();
        assert!((a - b).norm() < 1e-9);
    }

    #[test]
    fn axial_circle_stays_on_principal_point() {
        let pose = Pose::new(Vector3::zeros(), Vector3::new(0.0, 0.0, 3.0));
        for d in [vec![-0.4], vec![0.2, -0.1], vec![-0.3, 0.05, 0.01]] {
            let d = Distortion::new(d).unwrap();
            let p = unbiased_circle_centroid(&gt_k(), &d, &pose, Point2::origin(), 0.8).unwrap();
            assert!((p - Point2::new(600.0, 450.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn distortion_biases_center_projection() {
        let d = Distortion::new(vec![-0.4]).unwrap();
        let pose = Pose::from_rotation(
            &Rotation3::from_axis_angle(&Vector3::y_axis(), 30f64.to_radians()),
            Vector3::new(-1.0, -1.0, 5.0),
        );
        let c = Point2::new(3.0, 2.0);
        let unbiased = unbiased_circle_centroid(&gt_k(), &d, &pose, c, 0.4).unwrap();
        let naive = project_point(&gt_k(), &d, &pose, c).unwrap();
        assert!((unbiased - naive).norm() > 1e-3);
    }

    #[test]
    fn sample_count_converges() {
        let d = Distortion::new(vec![-0.4]).unwrap();
        let pose = Pose::from_rotation(
            &Rotation3::from_euler_angles(0.3, -0.4, 0.1),
            Vector3::new(-1.0, -0.7, 5.0),
        );
        let c = Point2::new(3.0, 2.0);
        let a = unbiased_circle_centroid_with(&gt_k(), &d, &pose, c, 0.4, 2000).unwrap();
        let b = unbiased_circle_centroid_with(&gt_k(), &d, &pose, c, 0.4, 4000).unwrap();
        assert!((a - b).norm() < 1e-6);
    }

    #[test]
    fn target_layout() {
        let t = TargetSpec::new(3, 4, 1.5, 0.5).unwrap();
        assert_eq!(t.len(), 12);
        assert_eq!(t.center(0), Point2::new(0.0, 0.0));
        assert_eq!(t.center(5), Point2::new(1.5, 1.5));
        assert_eq!(t.center(11), Point2::new(4.5, 3.0));
    }

    #[test]
    fn pose_vector_roundtrip() {
        let p = Pose::new(Vector3::new(0.1, -0.2, 0.3), Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(Pose::from_slice(&p.to_vec()), p);
    }
}
