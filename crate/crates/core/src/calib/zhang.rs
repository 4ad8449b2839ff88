//! Closed-form intrinsics and poses from plane homographies.

use nalgebra::{DMatrix, DVector, Matrix3, Point2, Rotation3, Vector3};

use crate::projection::{Intrinsics, Pose, TargetSpec};
use crate::{Error, Result};

/// Relative size of the second-smallest singular value below which the
/// absolute-conic system counts as rank deficient.
const SINGULAR_RATIO: f64 = 1e-9;

/// Similarity that moves points to zero mean and mean distance sqrt(2).
fn normalizer(pts: &[Point2<f64>]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.x, a.1 + p.y));
    let (mx, my) = (mx / n, my / n);
    let d = pts.iter().map(|p| ((p.x - mx).powi(2) + (p.y - my).powi(2)).sqrt()).sum::<f64>() / n;
    let s = if d > 0.0 { std::f64::consts::SQRT_2 / d } else { 1.0 };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

fn apply(h: &Matrix3<f64>, p: Point2<f64>) -> Point2<f64> {
    let q = h * Vector3::new(p.x, p.y, 1.0);
    Point2::new(q.x / q.z, q.y / q.z)
}

/// Right singular vector of the smallest singular value, plus the singular
/// values in descending order. Pads with zero rows so the full null space is
/// represented.
fn null_space(a: DMatrix<f64>) -> (DVector<f64>, Vec<f64>) {
    let cols = a.ncols();
    let a = if a.nrows() < cols {
        a.resize_vertically(cols, 0.0)
    } else {
        a
    };
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let values = idx.iter().map(|&i| svd.singular_values[i]).collect();
    let last = *idx.last().expect("nonempty");
    (vt.row(last).transpose(), values)
}

/// Plane-to-image homography by the normalized direct linear transform.
pub fn estimate_homography(src: &[Point2<f64>], dst: &[Point2<f64>]) -> Result<Matrix3<f64>> {
    if src.len() != dst.len() {
        return Err(Error::DimensionMismatch {
            expected: src.len(),
            got: dst.len(),
        });
    }
    if src.len() < 4 {
        return Err(Error::TooFewPoints(src.len()));
    }
    let (ts, td) = (normalizer(src), normalizer(dst));
    let mut a = DMatrix::zeros(2 * src.len(), 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let (s, d) = (apply(&ts, *s), apply(&td, *d));
        let row = [s.x, s.y, 1.0];
        for k in 0..3 {
            a[(2 * i, k)] = row[k];
            a[(2 * i, 6 + k)] = -d.x * row[k];
            a[(2 * i + 1, 3 + k)] = row[k];
            a[(2 * i + 1, 6 + k)] = -d.y * row[k];
        }
    }
    let (h, sv) = null_space(a);
    if sv[7] <= SINGULAR_RATIO * sv[0] {
        return Err(Error::SingularSystem("point configuration does not fix a homography".into()));
    }
    let hn = Matrix3::from_row_slice(h.as_slice());
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("degenerate image points".into()))?;
    let h = td_inv * hn * ts;
    if h[(2, 2)].abs() < 1e-300 {
        return Err(Error::DegenerateProjection("homography maps origin to infinity".into()));
    }
    Ok(h / h[(2, 2)])
}

/// Constraint row `v_ij` of the absolute-conic equations.
fn v_row(h: &Matrix3<f64>, i: usize, j: usize) -> [f64; 6] {
    let (hi, hj) = (h.column(i), h.column(j));
    [
        hi[0] * hj[0],
        hi[0] * hj[1] + hi[1] * hj[0],
        hi[1] * hj[1],
        hi[2] * hj[0] + hi[0] * hj[2],
        hi[2] * hj[1] + hi[1] * hj[2],
        hi[2] * hj[2],
    ]
}

/// Intrinsics from per-view homographies.
pub fn intrinsics_from_homographies(homographies: &[Matrix3<f64>], estimate_skew: bool) -> Result<Intrinsics> {
    let needed = if estimate_skew { 3 } else { 2 };
    if homographies.len() < needed {
        return Err(Error::InsufficientViews {
            needed,
            got: homographies.len(),
        });
    }
    // work in a pixel frame scaled to unit magnitude for conditioning
    let scale = homographies
        .iter()
        .map(|h| (h[(0, 2)].abs() + h[(1, 2)].abs()) / h[(2, 2)].abs())
        .sum::<f64>()
        / homographies.len() as f64;
    let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
    let n = Matrix3::new(1.0 / scale, 0.0, 0.0, 0.0, 1.0 / scale, 0.0, 0.0, 0.0, 1.0);

    let rows = 2 * homographies.len() + usize::from(!estimate_skew);
    let mut v = DMatrix::zeros(rows, 6);
    for (k, h) in homographies.iter().enumerate() {
        let h = n * h;
        let h = h / h.norm();
        let (v12, v11, v22) = (v_row(&h, 0, 1), v_row(&h, 0, 0), v_row(&h, 1, 1));
        for c in 0..6 {
            v[(2 * k, c)] = v12[c];
            v[(2 * k + 1, c)] = v11[c] - v22[c];
        }
    }
    if !estimate_skew {
        v[(rows - 1, 1)] = 1.0;
    }
    let (b, sv) = null_space(v);
    if sv[4] <= SINGULAR_RATIO * sv[0] {
        return Err(Error::SingularSystem(
            "views do not constrain the intrinsics (repeated target orientation)".into(),
        ));
    }
    let b = if b[0] < 0.0 { -b } else { b };
    let (b11, b12, b22, b13, b23, b33) = (b[0], b[1], b[2], b[3], b[4], b[5]);
    let den = b11 * b22 - b12 * b12;
    let v0 = (b12 * b13 - b11 * b23) / den;
    let lambda = b33 - (b13 * b13 + v0 * (b12 * b13 - b11 * b23)) / b11;
    let fx2 = lambda / b11;
    let fy2 = lambda * b11 / den;
    if !(den > 0.0 && fx2 > 0.0 && fy2 > 0.0) {
        return Err(Error::SingularSystem("absolute conic is not positive definite".into()));
    }
    let (fx, fy) = (fx2.sqrt(), fy2.sqrt());
    let eta = if estimate_skew { -b12 * fx * fx * fy / lambda } else { 0.0 };
    let u0 = eta * v0 / fy - b13 * fx * fx / lambda;
    Ok(Intrinsics {
        fx: fx * scale,
        fy: fy * scale,
        cx: u0 * scale,
        cy: v0 * scale,
        eta: eta * scale,
    })
}

/// Pose of the target plane given intrinsics and its homography.
pub fn pose_from_homography(k: &Intrinsics, h: &Matrix3<f64>) -> Result<Pose> {
    let kinv = k
        .matrix()
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("intrinsic matrix".into()))?;
    let m = kinv * h;
    let (c1, c2, c3) = (m.column(0).into_owned(), m.column(1).into_owned(), m.column(2).into_owned());
    let mut lambda = 2.0 / (c1.norm() + c2.norm());
    if c3.z * lambda < 0.0 {
        lambda = -lambda;
    }
    let (r1, r2, t) = (c1 * lambda, c2 * lambda, c3 * lambda);
    let approx = Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]);
    let svd = approx.svd(true, true);
    let (u, vt) = (svd.u.expect("U"), svd.v_t.expect("V^T"));
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * vt;
    }
    let rot = Rotation3::from_matrix_unchecked(r);
    Ok(Pose::from_rotation(&rot, t))
}

/// Focal lengths from homographies with the principal point fixed at `center`
/// and zero skew.
pub fn focal_from_homographies(homographies: &[Matrix3<f64>], center: Point2<f64>) -> Result<Intrinsics> {
    if homographies.is_empty() {
        return Err(Error::InsufficientViews { needed: 1, got: 0 });
    }
    let scale = 2.0 * center.x.abs().max(center.y.abs()).max(1.0);
    let shift = Matrix3::new(1.0 / scale, 0.0, -center.x / scale, 0.0, 1.0 / scale, -center.y / scale, 0.0, 0.0, 1.0);
    let mut a = DMatrix::zeros(2 * homographies.len(), 2);
    let mut b = DVector::zeros(2 * homographies.len());
    for (k, h) in homographies.iter().enumerate() {
        let h = shift * h;
        let h = h / h.norm();
        let (c1, c2) = (h.column(0), h.column(1));
        a[(2 * k, 0)] = c1[0] * c2[0];
        a[(2 * k, 1)] = c1[1] * c2[1];
        b[2 * k] = -c1[2] * c2[2];
        a[(2 * k + 1, 0)] = c1[0] * c1[0] - c2[0] * c2[0];
        a[(2 * k + 1, 1)] = c1[1] * c1[1] - c2[1] * c2[1];
        b[2 * k + 1] = -(c1[2] * c1[2] - c2[2] * c2[2]);
    }
    let sol = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::SingularSystem(e.to_string()))?;
    if !(sol[0] > 0.0 && sol[1] > 0.0) {
        return Err(Error::SingularSystem("focal lengths are not real".into()));
    }
    Ok(Intrinsics::new(
        scale / sol[0].sqrt(),
        scale / sol[1].sqrt(),
        center.x,
        center.y,
    ))
}

/// Intrinsics and per-view poses with the principal point fixed at `center`.
pub fn centered_init(views: &[Vec<Point2<f64>>], target: &TargetSpec, center: Point2<f64>) -> Result<(Intrinsics, Vec<Pose>)> {
    let centers = target.centers();
    let hs = views
        .iter()
        .map(|v| estimate_homography(&centers, v))
        .collect::<Result<Vec<_>>>()?;
    let k = focal_from_homographies(&hs, center)?;
    let poses = hs
        .iter()
        .map(|h| pose_from_homography(&k, h))
        .collect::<Result<Vec<_>>>()?;
    Ok((k, poses))
}

/// Intrinsics and per-view poses from centroids of each view (target order).
///
/// Distortion is ignored, so its effect shows up as bias in the result.
pub fn zhang_init(
    views: &[Vec<Point2<f64>>],
    target: &TargetSpec,
    estimate_skew: bool,
) -> Result<(Intrinsics, Vec<Pose>)> {
    let centers = target.centers();
    let hs = views
        .iter()
        .map(|v| estimate_homography(&centers, v))
        .collect::<Result<Vec<_>>>()?;
    let k = intrinsics_from_homographies(&hs, estimate_skew)?;
    let poses = hs
        .iter()
        .map(|h| pose_from_homography(&k, h))
        .collect::<Result<Vec<_>>>()?;
    Ok((k, poses))
}
