//! Centroid covariance from boundary-point uncertainty.
//!
//! The boundary points of a blob are modeled jointly: a ring-shaped Gaussian
//! Markov random field prior keeps neighbors within `sigma` of each other
//! while leaving rigid translation free, and each point adds rank-one
//! information along the local image gradient. The resulting `2n x 2n`
//! information matrix is propagated to the centroid through the Jacobian of
//! the Green-theorem centroid formula.

use std::f64::consts::SQRT_2;

use nalgebra::{DMatrix, Matrix2, Matrix2xX, Point2, Vector2};

use crate::image::{local_intensity_range, GradientField, GrayImage};
use crate::moments::{polygon_centroid, polygon_moments, Contour};
use crate::{Error, Result};

/// Large-`n` limit of the prior normalization factor.
pub const PRIOR_NORMALIZATION: f64 = 3.0 - SQRT_2;

/// Below this gradient norm a boundary point carries no information.
pub const DEFAULT_GRADIENT_FLOOR: f64 = 1e-3;

/// Parameters of the centroid uncertainty model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyParams {
    /// Neighbor connectivity scale of the boundary prior, px.
    pub sigma: f64,
    /// Half-width of the window searched for the local intensity range, px.
    pub window: usize,
    pub gradient_floor: f64,
}

impl Default for UncertaintyParams {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            window: 5,
            gradient_floor: DEFAULT_GRADIENT_FLOOR,
        }
    }
}

/// Ring prior over `n` boundary points in interleaved `(u0, v0, u1, v1, ...)` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorInfo {
    pub n: usize,
    pub sigma: f64,
    pub z: f64,
}

impl PriorInfo {
    /// Magnitude of a neighbor coupling, `1 / (z sigma^2)`.
    pub fn coupling(&self) -> f64 {
        1.0 / (self.z * self.sigma * self.sigma)
    }

    /// The dense `2n x 2n` prior information matrix.
    pub fn omega_prior(&self) -> DMatrix<f64> {
        let n = self.n;
        let c = self.coupling();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            let next = (i + 1) % n;
            for k in 0..2 {
                m[(2 * i + k, 2 * i + k)] += 2.0 * c;
                m[(2 * i + k, 2 * next + k)] -= c;
                m[(2 * next + k, 2 * i + k)] -= c;
            }
        }
        m
    }
}

pub fn prior_information(n: usize, sigma: f64) -> Result<PriorInfo> {
    if n < 3 {
        return Err(Error::TooFewPoints(n));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    Ok(PriorInfo {
        n,
        sigma,
        z: PRIOR_NORMALIZATION,
    })
}

/// Rank-one information a single boundary point gets from the image gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointInfo {
    pub omega: Matrix2<f64>,
}

impl PointInfo {
    pub fn zero() -> Self {
        Self {
            omega: Matrix2::zeros(),
        }
    }

    /// Information `(1/std)^2` along unit direction `dir`.
    pub fn along(dir: Vector2<f64>, std: f64) -> Self {
        let d = dir.normalize();
        Self {
            omega: d * d.transpose() / (std * std),
        }
    }

    pub fn rotated(&self, rot: &Matrix2<f64>) -> Self {
        Self {
            omega: rot * self.omega * rot.transpose(),
        }
    }
}

/// Gradient-derived information at `pt`.
///
/// Standard deviation across the edge is `(Imax - Imin) / (4 |g|)`, with the
/// intensity range taken from the local window. Flat or contrast-free points
/// contribute nothing.
pub fn gradient_information(
    img: &GrayImage,
    grad: &GradientField,
    pt: Point2<f64>,
    window: usize,
    gradient_floor: f64,
) -> PointInfo {
    let (x, y) = (pt.x.round(), pt.y.round());
    if x < 0.0 || y < 0.0 || x >= img.width() as f64 || y >= img.height() as f64 {
        return PointInfo::zero();
    }
    let (gx, gy) = grad.at(x as usize, y as usize);
    let g = Vector2::new(gx, gy);
    let norm = g.norm();
    let (lo, hi) = local_intensity_range(img, (x, y), window);
    if norm < gradient_floor || hi <= lo {
        return PointInfo::zero();
    }
    let scale = 4.0 * norm / (hi - lo);
    let unit = g / norm;
    PointInfo {
        omega: scale * scale * unit * unit.transpose(),
    }
}

/// Posterior information: the ring prior plus per-point gradient blocks.
///
/// Kept in structured form; [`PosteriorInfo::dense`] materializes the matrix.
#[derive(Debug, Clone)]
pub struct PosteriorInfo {
    prior: PriorInfo,
    blocks: Vec<Matrix2<f64>>,
}

impl PosteriorInfo {
    /// Sums prior and point information without checking definiteness.
    pub fn assemble(prior: &PriorInfo, per_point: &[PointInfo]) -> Result<Self> {
        if per_point.len() != prior.n {
            return Err(Error::DimensionMismatch {
                expected: prior.n,
                got: per_point.len(),
            });
        }
        Ok(Self {
            prior: *prior,
            blocks: per_point.iter().map(|p| p.omega).collect(),
        })
    }

    pub fn prior(&self) -> &PriorInfo {
        &self.prior
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let mut m = self.prior.omega_prior();
        for (i, b) in self.blocks.iter().enumerate() {
            let mut view = m.fixed_view_mut::<2, 2>(2 * i, 2 * i);
            view += b;
        }
        m
    }

    /// Cholesky factor in the band-reordered layout, or `None` when the
    /// matrix is not (numerically) positive definite.
    fn factor(&self) -> Option<BandedCholesky> {
        let order = ring_band_order(self.prior.n);
        let c = self.prior.coupling();
        let n = self.prior.n;
        let entry = |r: usize, col: usize| -> f64 {
            let (pr, kr) = (order[r / 2], r % 2);
            let (pc, kc) = (order[col / 2], col % 2);
            if pr == pc {
                let diag = if kr == kc { 2.0 * c } else { 0.0 };
                diag + self.blocks[pr][(kr, kc)]
            } else if kr == kc && ((pr + 1) % n == pc || (pc + 1) % n == pr) {
                -c
            } else {
                0.0
            }
        };
        let max_diag = (0..2 * n).map(|i| entry(i, i)).fold(0.0, f64::max);
        BandedCholesky::new(2 * n, RING_BANDWIDTH, entry, 1e-12 * max_diag)
            .map(|l| l.with_order(order))
    }

    pub fn is_positive_definite(&self) -> bool {
        self.factor().is_some()
    }

    /// `J Omega^-1 J^T` for a `2 x 2n` Jacobian, via the banded factor.
    pub fn propagate(&self, jacobian: &Matrix2xX<f64>) -> Result<Matrix2<f64>> {
        if jacobian.ncols() != 2 * self.prior.n {
            return Err(Error::DimensionMismatch {
                expected: 2 * self.prior.n,
                got: jacobian.ncols(),
            });
        }
        let factor = self.factor().ok_or(Error::NotPositiveDefinite)?;
        Ok(factor.sandwich(jacobian))
    }
}

/// Checked posterior assembly; fails when no usable gradient pins the
/// blob (the sum is then only positive semidefinite).
pub fn posterior_information(prior: &PriorInfo, per_point: &[PointInfo]) -> Result<PosteriorInfo> {
    let post = PosteriorInfo::assemble(prior, per_point)?;
    if !post.is_positive_definite() {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(post)
}

// Point order 0, 1, n-1, 2, n-2, ... puts every ring neighbor within two
// positions, so with interleaved coordinates the lower bandwidth is 4.
const RING_BANDWIDTH: usize = 4;

fn ring_band_order(n: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(n);
    order.push(0);
    let (mut lo, mut hi) = (1, n - 1);
    while lo <= hi {
        order.push(lo);
        if lo != hi {
            order.push(hi);
        }
        lo += 1;
        hi -= 1;
    }
    order
}

/// Lower Cholesky factor of a symmetric banded matrix.
struct BandedCholesky {
    dim: usize,
    band: usize,
    // row i holds L[i][i-band ..= i]
    rows: Vec<f64>,
    order: Vec<usize>,
}

impl BandedCholesky {
    fn new(
        dim: usize,
        band: usize,
        entry: impl Fn(usize, usize) -> f64,
        pivot_tol: f64,
    ) -> Option<Self> {
        let w = band + 1;
        let mut rows = vec![0.0; dim * w];
        let at = |rows: &[f64], i: usize, j: usize| rows[i * w + (j + band - i)];
        for i in 0..dim {
            let j0 = i.saturating_sub(band);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(band));
                let mut s = entry(i, j);
                for k in k0..j {
                    s -= at(&rows, i, k) * at(&rows, j, k);
                }
                if i == j {
                    if !(s > pivot_tol) {
                        return None;
                    }
                    rows[i * w + band] = s.sqrt();
                } else {
                    rows[i * w + (j + band - i)] = s / at(&rows, j, j);
                }
            }
        }
        Some(Self {
            dim,
            band,
            rows,
            order: Vec::new(),
        })
    }

    fn with_order(mut self, order: Vec<usize>) -> Self {
        self.order = order;
        self
    }

    /// `T^T T` with `T = L^-1 P J^T`, i.e. `J Omega^-1 J^T`.
    fn sandwich(&self, jacobian: &Matrix2xX<f64>) -> Matrix2<f64> {
        let w = self.band + 1;
        let mut t = vec![[0.0f64; 2]; self.dim];
        for i in 0..self.dim {
            let (pt, k) = (self.order[i / 2], i % 2);
            let col = 2 * pt + k;
            let mut s = [jacobian[(0, col)], jacobian[(1, col)]];
            for j in i.saturating_sub(self.band)..i {
                let l = self.rows[i * w + (j + self.band - i)];
                s[0] -= l * t[j][0];
                s[1] -= l * t[j][1];
            }
            let d = self.rows[i * w + self.band];
            t[i] = [s[0] / d, s[1] / d];
        }
        let mut out = Matrix2::zeros();
        for r in &t {
            out[(0, 0)] += r[0] * r[0];
            out[(0, 1)] += r[0] * r[1];
            out[(1, 1)] += r[1] * r[1];
        }
        out[(1, 0)] = out[(0, 1)];
        out
    }
}

/// Jacobian of the polygon centroid with respect to every boundary
/// coordinate, as a `2 x 2n` matrix with columns `(u0, v0, u1, v1, ...)`.
///
/// The contour must already be in the positive-`m00` orientation. Sums are
/// taken relative to the first point so the result is exactly invariant to
/// translations that shift coordinates without rounding.
pub fn centroid_jacobian(c: &Contour) -> Result<Matrix2xX<f64>> {
    let origin = c.points()[0];
    let pts: Vec<Vector2<f64>> = c.points().iter().map(|p| p - origin).collect();
    let rel = Contour::new(pts.iter().map(|v| Point2::from(*v)).collect())?;
    let m = polygon_moments(&rel)?;
    let p = polygon_centroid(&m)?;
    let n = pts.len();
    let mut jac = Matrix2xX::zeros(2 * n);
    for i in 0..n {
        let prev = pts[(i + n - 1) % n];
        let cur = pts[i];
        let next = pts[(i + 1) % n];
        let (up, vp, uc, vc, uf, vf) = (prev.x, prev.y, cur.x, cur.y, next.x, next.y);

        let d00 = [0.5 * (vp - vf), 0.5 * (uf - up)];
        let d10 = [
            (-uf * (vf - vc) - 2.0 * uc * (vf - vp) - up * (vc - vp)) / 6.0,
            ((uf + uc + up) * (uf - up)) / 6.0,
        ];
        let d01 = [
            (-(vf + vc + vp) * (vf - vp)) / 6.0,
            (vf * (uf - uc) + 2.0 * vc * (uf - up) + vp * (uc - up)) / 6.0,
        ];
        for k in 0..2 {
            jac[(0, 2 * i + k)] = (d10[k] - d00[k] * p.x) / m.m00;
            jac[(1, 2 * i + k)] = (d01[k] - d00[k] * p.y) / m.m00;
        }
    }
    Ok(jac)
}

/// `J Omega^-1 J^T` through a dense Cholesky factorization of `omega`.
pub fn centroid_covariance(jacobian: &Matrix2xX<f64>, omega: &DMatrix<f64>) -> Result<Matrix2<f64>> {
    if omega.nrows() != jacobian.ncols() || omega.ncols() != jacobian.ncols() {
        return Err(Error::DimensionMismatch {
            expected: jacobian.ncols(),
            got: omega.nrows(),
        });
    }
    let chol = omega.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let t = chol
        .l()
        .solve_lower_triangular(&jacobian.transpose())
        .ok_or(Error::NotPositiveDefinite)?;
    let s = t.transpose() * t;
    Ok(Matrix2::new(s[(0, 0)], s[(0, 1)], s[(1, 0)], s[(1, 1)]))
}

/// A blob centroid with its covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentroidMeasurement {
    pub p: Point2<f64>,
    pub cov: Matrix2<f64>,
    /// Averaged 2-sigma radius, `2 sqrt(trace(cov) / 2)`.
    pub epsilon: f64,
}

impl CentroidMeasurement {
    pub fn new(p: Point2<f64>, cov: Matrix2<f64>) -> Self {
        let cov = 0.5 * (cov + cov.transpose());
        Self {
            p,
            cov,
            epsilon: scalar_uncertainty(&cov),
        }
    }
}

pub fn scalar_uncertainty(cov: &Matrix2<f64>) -> f64 {
    2.0 * (0.5 * cov.trace()).max(0.0).sqrt()
}

/// Centroid and covariance of a traced blob boundary.
pub fn measure_centroid(
    img: &GrayImage,
    grad: &GradientField,
    contour: &Contour,
    params: &UncertaintyParams,
) -> Result<CentroidMeasurement> {
    let contour = contour.clone().oriented()?;
    let moments = polygon_moments(&contour)?;
    let p = polygon_centroid(&moments)?;
    let jac = centroid_jacobian(&contour)?;
    let prior = prior_information(contour.len(), params.sigma)?;
    let infos: Vec<PointInfo> = contour
        .points()
        .iter()
        .map(|pt| gradient_information(img, grad, *pt, params.window, params.gradient_floor))
        .collect();
    let posterior = posterior_information(&prior, &infos)?;
    let cov = posterior.propagate(&jac)?;
    Ok(CentroidMeasurement::new(p, cov))
}
