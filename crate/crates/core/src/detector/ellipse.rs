//! Direct least-squares ellipse fit and the blob shape gate.

use nalgebra::{Matrix3, Point2, Vector3};
use serde::{Deserialize, Serialize};

use crate::moments::{polygon_moments, Contour};

/// An ellipse in center / semi-axes / orientation form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: Point2<f64>,
    /// Semi-major axis.
    pub a: f64,
    /// Semi-minor axis.
    pub b: f64,
    /// Angle of the major axis from +u, radians.
    pub angle: f64,
}

impl Ellipse {
    /// Normalized radius: 1 on the ellipse, 0 at the center.
    pub fn radius_of(&self, p: Point2<f64>) -> f64 {
        let d = p - self.center;
        let (s, c) = self.angle.sin_cos();
        let x = c * d.x + s * d.y;
        let y = -s * d.x + c * d.y;
        ((x / self.a).powi(2) + (y / self.b).powi(2)).sqrt()
    }
}

/// Fits an ellipse to points with the ellipse-specific direct method.
///
/// Returns `None` for fewer than six points or when no ellipse solution exists.
pub fn fit_ellipse(points: &[Point2<f64>]) -> Option<Ellipse> {
    if points.len() < 6 {
        return None;
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(nalgebra::Vector2::zeros(), |a, p| a + p.coords) / n;
    let scale = points.iter().map(|p| (p.coords - mean).norm()).sum::<f64>() / n;
    if !(scale > 0.0) {
        return None;
    }
    let mut s1 = Matrix3::zeros();
    let mut s2 = Matrix3::zeros();
    let mut s3 = Matrix3::zeros();
    for p in points {
        let (x, y) = ((p.x - mean.x) / scale, (p.y - mean.y) / scale);
        let d1 = Vector3::new(x * x, x * y, y * y);
        let d2 = Vector3::new(x, y, 1.0);
        s1 += d1 * d1.transpose();
        s2 += d1 * d2.transpose();
        s3 += d2 * d2.transpose();
    }
    let t = -s3.try_inverse()? * s2.transpose();
    let m = s1 + s2 * t;
    // premultiply by the inverse of the constraint matrix [[0,0,2],[0,-1,0],[2,0,0]]
    let m = Matrix3::from_rows(&[m.row(2) / 2.0, -m.row(1), m.row(0) / 2.0]);
    let a1 = m
        .complex_eigenvalues()
        .iter()
        .filter(|l| l.im.abs() <= 1e-9 * l.re.abs().max(1e-300))
        .filter_map(|l| null_vector(&(m - Matrix3::identity() * l.re)))
        .find(|v| 4.0 * v[0] * v[2] - v[1] * v[1] > 0.0)?;
    let a2 = t * a1;
    conic_to_ellipse([a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]], mean, scale)
}

/// Null vector of a rank-2 3x3 matrix: the largest cross product of two rows.
fn null_vector(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let r: Vec<Vector3<f64>> = (0..3).map(|i| m.row(i).transpose()).collect();
    let v = [r[0].cross(&r[1]), r[0].cross(&r[2]), r[1].cross(&r[2])]
        .into_iter()
        .max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))?;
    let norm = v.norm();
    (norm > 0.0).then(|| v / norm)
}

/// Converts `a x^2 + b xy + c y^2 + d x + e y + f = 0` in normalized
/// coordinates back to an ellipse in the original frame.
fn conic_to_ellipse(q: [f64; 6], mean: nalgebra::Vector2<f64>, scale: f64) -> Option<Ellipse> {
    let [a, b, c, d, e, f] = q;
    let det = 4.0 * a * c - b * b;
    if det <= 0.0 {
        return None;
    }
    let x0 = (b * e - 2.0 * c * d) / det;
    let y0 = (b * d - 2.0 * a * e) / det;
    let f0 = a * x0 * x0 + b * x0 * y0 + c * y0 * y0 + d * x0 + e * y0 + f;
    let sym = nalgebra::Matrix2::new(a, b / 2.0, b / 2.0, c);
    let eig = sym.symmetric_eigen();
    let (l0, l1) = (eig.eigenvalues[0], eig.eigenvalues[1]);
    let r0 = -f0 / l0;
    let r1 = -f0 / l1;
    if !(r0 > 0.0 && r1 > 0.0) {
        return None;
    }
    let (ax0, ax1) = (r0.sqrt() * scale, r1.sqrt() * scale);
    let (major, minor, col) = if ax0 >= ax1 { (ax0, ax1, 0) } else { (ax1, ax0, 1) };
    let v = eig.eigenvectors.column(col);
    Some(Ellipse {
        center: Point2::new(mean.x + x0 * scale, mean.y + y0 * scale),
        a: major,
        b: minor,
        angle: v[1].atan2(v[0]),
    })
}

/// Shape gate applied to every traced blob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EllipseGate {
    /// Largest RMS boundary deviation from the fitted ellipse, as a fraction
    /// of the mean semi-axis.
    pub fit_tol: f64,
    /// Deviation always tolerated in pixels, covering rasterization of small blobs.
    pub fit_floor_px: f64,
    pub area_min: f64,
    pub area_max: Option<f64>,
    /// Largest major/minor axis ratio.
    pub ratio_max: f64,
}

impl Default for EllipseGate {
    fn default() -> Self {
        Self {
            fit_tol: 0.02,
            fit_floor_px: 0.35,
            area_min: 30.0,
            area_max: None,
            ratio_max: 8.0,
        }
    }
}

/// Fits the contour and reports the fit when every gate passes.
pub fn ellipse_check(c: &Contour, gate: &EllipseGate) -> Option<Ellipse> {
    let pts = c.points();
    let e = fit_ellipse(pts)?;
    let area = polygon_moments(c).ok()?.m00;
    if area < gate.area_min || gate.area_max.is_some_and(|m| area > m) {
        return None;
    }
    if e.a / e.b >= gate.ratio_max {
        return None;
    }
    let mean_axis = 0.5 * (e.a + e.b);
    let ms = pts.iter().map(|p| (e.radius_of(*p) - 1.0).powi(2)).sum::<f64>() / pts.len() as f64;
    let rms_px = ms.sqrt() * mean_axis;
    (rms_px < (gate.fit_tol * mean_axis).max(gate.fit_floor_px)).then_some(e)
}

pub fn ellipse_test(c: &Contour, gate: &EllipseGate) -> bool {
    ellipse_check(c, gate).is_some()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::find_contours;
    use crate::image::BinaryImage;

    fn sample(e: &Ellipse, n: usize) -> Vec<Point2<f64>> {
        let (s, c) = e.angle.sin_cos();
        (0..n)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / n as f64;
                let (x, y) = (e.a * t.cos(), e.b * t.sin());
                Point2::new(e.center.x + c * x - s * y, e.center.y + s * x + c * y)
            })
            .collect()
    }

    #[test]
    fn exact_points_recover_ellipse() {
        let e = Ellipse {
            center: Point2::new(120.5, -40.25),
            a: 30.0,
            b: 12.0,
            angle: 0.7,
        };
        let f = fit_ellipse(&sample(&e, 50)).unwrap();
        assert!((f.center - e.center).norm() < 1e-8);
        assert!((f.a - e.a).abs() < 1e-8 && (f.b - e.b).abs() < 1e-8);
        assert!((f.angle - e.angle).rem_euclid(std::f64::consts::PI) < 1e-8);
    }

    #[test]
    fn partial_arc_still_fits() {
        let e = Ellipse {
            center: Point2::new(0.0, 0.0),
            a: 10.0,
            b: 6.0,
            angle: -0.3,
        };
        let f = fit_ellipse(&sample(&e, 40)[..15]).unwrap();
        assert!((f.a - 10.0).abs() < 1e-6);
    }

    #[test]
    fn too_few_points() {
        assert!(fit_ellipse(&[Point2::origin(); 5]).is_none());
        let c = Contour::from_pixels(&[(0, 0), (1, 0), (2, 1), (1, 2), (0, 1)]).unwrap();
        assert!(!ellipse_test(&c, &EllipseGate::default()));
    }

    fn raster(f: impl Fn(f64, f64) -> bool) -> Contour {
        let bin = BinaryImage::from_fn(100, 100, |x, y| f(x as f64 - 50.3, y as f64 - 49.6));
        let mut cs = find_contours(&bin);
        assert_eq!(cs.len(), 1);
        cs.remove(0)
    }

    #[test]
    fn rasterized_ellipse_accepted() {
        let c = raster(|x, y| {
            let (s, co) = 0.4f64.sin_cos();
            let (u, v) = (co * x + s * y, -s * x + co * y);
            (u / 30.0).powi(2) + (v / 20.0).powi(2) <= 1.0
        });
        assert!(ellipse_test(&c, &EllipseGate::default()));
    }

    #[test]
    fn rasterized_square_rejected() {
        let c = raster(|x, y| x.abs() <= 15.0 && y.abs() <= 15.0);
        assert!(!ellipse_test(&c, &EllipseGate::default()));
    }

    #[test]
    fn area_and_ratio_gates() {
        let small = raster(|x, y| x * x + y * y <= 9.0);
        assert!(!ellipse_test(&small, &EllipseGate::default()));
        let thin = raster(|x, y| (x / 40.0).powi(2) + (y / 4.0).powi(2) <= 1.0);
        assert!(!ellipse_test(&thin, &EllipseGate::default()));
        let disk = raster(|x, y| x * x + y * y <= 400.0);
        let capped = EllipseGate {
            area_max: Some(500.0),
            ..EllipseGate::default()
        };
        assert!(ellipse_test(&disk, &EllipseGate::default()));
        assert!(!ellipse_test(&disk, &capped));
    }
}
