//! Intrinsic calibration from circle-grid centroids.
//!
//! Initialization is closed form from plane homographies. Refinement is
//! Levenberg-Marquardt over intrinsics, radial distortion and every view's
//! pose, where each residual compares a measured centroid with the predicted
//! image centroid of the corresponding circle and may be whitened by the
//! measurement covariance.

mod zhang;

use nalgebra::{DMatrix, DVector, Matrix2, Point2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use zhang::{
    centered_init, estimate_homography, focal_from_homographies, intrinsics_from_homographies, pose_from_homography,
    zhang_init,
};

use crate::projection::{
    normalize_point, project_point, CircleSampler, Distortion, Intrinsics, Pose, TargetSpec,
    DEFAULT_CENTROID_SAMPLES, MAX_DISTORTION_ORDER,
};
use crate::uncertainty::CentroidMeasurement;
use crate::{Error, Result};

/// How the image position of a target circle is predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Projection of the circle center.
    NaiveCenter,
    /// Centroid of the full image of the circle.
    Unbiased,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeOptions {
    /// Number of radial coefficients.
    pub nd: usize,
    pub estimate_skew: bool,
    /// Whiten residuals by the measurement covariance.
    pub weighted: bool,
    pub estimator: Estimator,
    /// Boundary samples per circle for the unbiased estimator.
    pub samples: usize,
    pub max_iterations: usize,
    /// Relative cost decrease that counts as converged.
    pub cost_tolerance: f64,
    /// Step norm, relative to the parameter norm, that counts as converged.
    pub step_tolerance: f64,
    /// Lower clip for measurement covariance eigenvalues, px^2.
    pub covariance_floor: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            nd: 2,
            estimate_skew: false,
            weighted: true,
            estimator: Estimator::Unbiased,
            samples: DEFAULT_CENTROID_SAMPLES,
            max_iterations: 200,
            cost_tolerance: 1e-10,
            step_tolerance: 1e-12,
            covariance_floor: 1e-6,
        }
    }
}

impl OptimizeOptions {
    pub fn validate(&self) -> Result<()> {
        if self.nd > MAX_DISTORTION_ORDER {
            return Err(Error::InvalidArgument(format!(
                "nd must be at most {MAX_DISTORTION_ORDER}, got {}",
                self.nd
            )));
        }
        if self.samples < 8 || self.max_iterations == 0 {
            return Err(Error::InvalidArgument("samples >= 8 and max_iterations >= 1 required".into()));
        }
        if !(self.cost_tolerance > 0.0 && self.step_tolerance > 0.0 && self.covariance_floor > 0.0) {
            return Err(Error::InvalidArgument("tolerances and covariance floor must be positive".into()));
        }
        Ok(())
    }
}

/// One measured control point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub view: usize,
    pub circle: usize,
    pub measurement: CentroidMeasurement,
    /// Circle center on the target plane.
    pub center: Point2<f64>,
}

/// Flattens per-view measurements in target order into observations.
pub fn observations_from_views(views: &[Vec<CentroidMeasurement>], target: &TargetSpec) -> Vec<Observation> {
    views
        .iter()
        .enumerate()
        .flat_map(|(view, ms)| {
            ms.iter().enumerate().map(move |(circle, m)| Observation {
                view,
                circle,
                measurement: *m,
                center: target.center(circle),
            })
        })
        .collect()
}

/// Camera model plus one pose per view.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub intrinsics: Intrinsics,
    pub distortion: Distortion,
    pub poses: Vec<Pose>,
}

/// Order of the optimization vector: `fx, fy, cx, cy, [eta], d1.., poses`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub nd: usize,
    pub skew: bool,
    pub views: usize,
}

impl ParamLayout {
    pub fn intrinsic_len(&self) -> usize {
        4 + usize::from(self.skew) + self.nd
    }

    pub fn len(&self) -> usize {
        self.intrinsic_len() + 6 * self.views
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pose_offset(&self, view: usize) -> usize {
        self.intrinsic_len() + 6 * view
    }

    /// Names of the intrinsic parameters, matching covariance rows.
    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = ["fx", "fy", "cx", "cy"].iter().map(|s| s.to_string()).collect();
        if self.skew {
            v.push("eta".into());
        }
        v.extend((1..=self.nd).map(|i| format!("d{i}")));
        v
    }

    pub fn pack(&self, m: &Model) -> DVector<f64> {
        let k = &m.intrinsics;
        let mut v = vec![k.fx, k.fy, k.cx, k.cy];
        if self.skew {
            v.push(k.eta);
        }
        v.extend((0..self.nd).map(|i| m.distortion.d.get(i).copied().unwrap_or(0.0)));
        for p in &m.poses {
            v.extend(p.to_vec());
        }
        DVector::from_vec(v)
    }

    pub fn unpack(&self, v: &DVector<f64>) -> Model {
        let mut i = 4;
        let eta = if self.skew {
            i += 1;
            v[4]
        } else {
            0.0
        };
        let d = v.as_slice()[i..i + self.nd].to_vec();
        i += self.nd;
        Model {
            intrinsics: Intrinsics {
                fx: v[0],
                fy: v[1],
                cx: v[2],
                cy: v[3],
                eta,
            },
            distortion: Distortion { d },
            poses: (0..self.views)
                .map(|j| Pose::from_slice(&v.as_slice()[i + 6 * j..i + 6 * j + 6]))
                .collect(),
        }
    }
}

/// Residual statistics of one view, unweighted, px.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewResiduals {
    pub rms: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub intrinsics: Intrinsics,
    pub distortion: Distortion,
    pub poses: Vec<Pose>,
    /// Names of the rows of `param_cov`.
    pub param_names: Vec<String>,
    /// Covariance of the intrinsic parameters with poses marginalized.
    pub param_cov: DMatrix<f64>,
    /// Unweighted RMS reprojection error, px.
    pub rms_reproj: f64,
    pub per_view: Vec<ViewResiduals>,
    /// Final value of the optimized loss.
    pub cost: f64,
    pub iterations: usize,
    /// Loss after initialization and after every accepted step.
    pub history: Vec<f64>,
}

impl CalibrationResult {
    pub fn model(&self) -> Model {
        Model {
            intrinsics: self.intrinsics,
            distortion: self.distortion.clone(),
            poses: self.poses.clone(),
        }
    }

    /// Standard deviation of each intrinsic parameter.
    pub fn param_std(&self) -> Vec<f64> {
        (0..self.param_cov.nrows()).map(|i| self.param_cov[(i, i)].max(0.0).sqrt()).collect()
    }
}

/// Predicts measured centroids of a target circle.
struct Predictor {
    estimator: Estimator,
    sampler: Option<CircleSampler>,
    radius: f64,
}

impl Predictor {
    fn new(target: &TargetSpec, opts: &OptimizeOptions) -> Result<Self> {
        Ok(Self {
            estimator: opts.estimator,
            sampler: match opts.estimator {
                Estimator::Unbiased => Some(CircleSampler::new(opts.samples)?),
                Estimator::NaiveCenter => None,
            },
            radius: target.radius,
        })
    }

    fn predict(&self, k: &Intrinsics, d: &Distortion, pose: &Pose, center: Point2<f64>) -> Result<Point2<f64>> {
        match (&self.sampler, self.estimator) {
            (Some(s), Estimator::Unbiased) => s.centroid(k, d, pose, center, self.radius),
            _ => project_point(k, d, pose, center),
        }
    }
}

/// `W` with `W^T W = Sigma^-1`, eigenvalues of `Sigma` clipped below at `floor`.
pub fn whitening(cov: &Matrix2<f64>, floor: f64) -> Matrix2<f64> {
    let eig = cov.symmetric_eigen();
    let v = eig.eigenvectors;
    let d = Matrix2::new(
        1.0 / eig.eigenvalues[0].max(floor).sqrt(),
        0.0,
        0.0,
        1.0 / eig.eigenvalues[1].max(floor).sqrt(),
    );
    v * d * v.transpose()
}

/// Observations grouped per view with their whitening matrices.
struct Problem<'a> {
    obs: &'a [Observation],
    by_view: Vec<Vec<usize>>,
    white: Vec<Matrix2<f64>>,
    layout: ParamLayout,
    predictor: Predictor,
}

impl<'a> Problem<'a> {
    fn new(obs: &'a [Observation], target: &TargetSpec, views: usize, opts: &OptimizeOptions, weighted: bool) -> Result<Self> {
        opts.validate()?;
        let mut by_view = vec![Vec::new(); views];
        for (i, o) in obs.iter().enumerate() {
            if o.view >= views {
                return Err(Error::InvalidArgument(format!(
                    "observation of view {} but only {views} poses",
                    o.view
                )));
            }
            by_view[o.view].push(i);
        }
        let white = obs
            .iter()
            .map(|o| {
                if weighted {
                    whitening(&o.measurement.cov, opts.covariance_floor)
                } else {
                    Matrix2::identity()
                }
            })
            .collect();
        Ok(Self {
            obs,
            by_view,
            white,
            layout: ParamLayout {
                nd: opts.nd,
                skew: opts.estimate_skew,
                views,
            },
            predictor: Predictor::new(target, opts)?,
        })
    }

    fn predict_view(&self, m: &Model, view: usize) -> Result<Vec<Point2<f64>>> {
        let pose = &m.poses[view];
        self.by_view[view]
            .iter()
            .map(|&i| self.predictor.predict(&m.intrinsics, &m.distortion, pose, self.obs[i].center))
            .collect()
    }

    /// Whitened residuals `W (measured - predicted)`, ordered by view then observation.
    fn residuals(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.layout.unpack(p);
        let blocks = (0..self.layout.views)
            .into_par_iter()
            .map(|j| {
                let pred = self.predict_view(&m, j)?;
                Ok(self.by_view[j]
                    .iter()
                    .zip(pred)
                    .flat_map(|(&i, q)| {
                        let r = self.white[i] * (self.obs[i].measurement.p - q);
                        [r.x, r.y]
                    })
                    .collect::<Vec<f64>>())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DVector::from_vec(blocks.concat()))
    }

    fn step(v: f64) -> f64 {
        1e-6 * v.abs().max(1.0)
    }

    /// Jacobian of the whitened residuals by central differences; pose
    /// columns are only evaluated on their own view.
    fn jacobian(&self, p: &DVector<f64>) -> Result<DMatrix<f64>> {
        let lay = self.layout;
        let ni = lay.intrinsic_len();
        let blocks = (0..lay.views)
            .into_par_iter()
            .map(|j| {
                let cols: Vec<usize> = (0..ni).chain(lay.pose_offset(j)..lay.pose_offset(j) + 6).collect();
                let mut block = DMatrix::zeros(2 * self.by_view[j].len(), cols.len());
                for (c, &col) in cols.iter().enumerate() {
                    let h = Self::step(p[col]);
                    let (mut plus, mut minus) = (p.clone(), p.clone());
                    plus[col] += h;
                    minus[col] -= h;
                    let a = self.predict_view(&lay.unpack(&plus), j)?;
                    let b = self.predict_view(&lay.unpack(&minus), j)?;
                    for (r, &i) in self.by_view[j].iter().enumerate() {
                        let d = -(self.white[i] * (a[r] - b[r])) / (2.0 * h);
                        block[(2 * r, c)] = d.x;
                        block[(2 * r + 1, c)] = d.y;
                    }
                }
                Ok((cols, block))
            })
            .collect::<Result<Vec<_>>>()?;
        let rows: usize = self.by_view.iter().map(|v| 2 * v.len()).sum();
        let mut jac = DMatrix::zeros(rows, lay.len());
        let mut r0 = 0;
        for (cols, block) in blocks {
            for (c, &col) in cols.iter().enumerate() {
                for r in 0..block.nrows() {
                    jac[(r0 + r, col)] = block[(r, c)];
                }
            }
            r0 += block.nrows();
        }
        Ok(jac)
    }

    /// Largest squared normalized radius reached by any observed circle.
    fn field_extent(&self, m: &Model) -> f64 {
        self.obs
            .iter()
            .filter_map(|o| {
                let pose = &m.poses[o.view];
                let pn = normalize_point(pose, o.center).ok()?;
                let depth = pose.transform(o.center).z;
                Some((pn.norm() + self.predictor.radius / depth).powi(2))
            })
            .fold(0.0, f64::max)
    }
}

/// Cost of a model: squared whitened residual norm summed over observations.
pub fn cost(obs: &[Observation], target: &TargetSpec, model: &Model, opts: &OptimizeOptions) -> Result<f64> {
    let problem = Problem::new(obs, target, model.poses.len(), opts, opts.weighted)?;
    Ok(problem.residuals(&problem.layout.pack(model))?.norm_squared())
}

/// Whitened residuals `W (measured - predicted)` ordered by view.
pub fn residuals(obs: &[Observation], target: &TargetSpec, model: &Model, opts: &OptimizeOptions) -> Result<DVector<f64>> {
    let problem = Problem::new(obs, target, model.poses.len(), opts, opts.weighted)?;
    problem.residuals(&problem.layout.pack(model))
}

/// Whitened residual vector and its Jacobian at `model`, for diagnostics.
pub fn residual_jacobian(
    obs: &[Observation],
    target: &TargetSpec,
    model: &Model,
    opts: &OptimizeOptions,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let problem = Problem::new(obs, target, model.poses.len(), opts, opts.weighted)?;
    let p = problem.layout.pack(model);
    Ok((problem.residuals(&p)?, problem.jacobian(&p)?))
}

/// Levenberg-Marquardt refinement followed by the parameter covariance.
pub fn optimize(obs: &[Observation], target: &TargetSpec, init: &Model, opts: &OptimizeOptions) -> Result<CalibrationResult> {
    let views = init.poses.len();
    let problem = Problem::new(obs, target, views, opts, opts.weighted)?;
    for (j, v) in problem.by_view.iter().enumerate() {
        if v.len() != target.len() {
            return Err(Error::InvalidArgument(format!(
                "view {j} has {} observations, expected {}",
                v.len(),
                target.len()
            )));
        }
    }
    for o in obs {
        if o.measurement.cov.cholesky().is_none() {
            return Err(Error::NotPositiveDefinite);
        }
    }
    let lay = problem.layout;
    let mut p = lay.pack(init);
    let mut res = problem.residuals(&p)?;
    let mut cur = res.norm_squared();
    let mut mu = 1e-3;
    let mut iterations = 0;
    let mut converged = cur == 0.0;
    let mut history = vec![cur];

    while !converged {
        if iterations == opts.max_iterations {
            return Err(Error::NonConvergence(iterations));
        }
        iterations += 1;
        let jac = problem.jacobian(&p)?;
        let a = jac.transpose() * &jac;
        let g = jac.transpose() * &res;
        let diag_floor = 1e-12 * a.diagonal().max();
        loop {
            let mut damped = a.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += mu * a[(i, i)].max(diag_floor);
            }
            let step = damped.cholesky().map(|c| -c.solve(&g));
            let Some(delta) = step else {
                mu *= 10.0;
                continue;
            };
            let trial = &p + &delta;
            let model = lay.unpack(&trial);
            let valid = model.distortion.is_monotone(problem.field_extent(&model));
            let evaluated = if valid { problem.residuals(&trial).ok() } else { None };
            let small_step = delta.norm() <= opts.step_tolerance * p.norm().max(opts.step_tolerance);
            match evaluated {
                Some(r) if r.norm_squared() < cur => {
                    let new = r.norm_squared();
                    converged = (cur - new) <= opts.cost_tolerance * cur || small_step || new == 0.0;
                    p = trial;
                    res = r;
                    cur = new;
                    history.push(cur);
                    mu = (mu / 10.0).max(1e-15);
                    break;
                }
                _ => {
                    mu *= 10.0;
                    // no descent left at working precision
                    if mu > 1e16 || small_step {
                        converged = true;
                        break;
                    }
                }
            }
        }
    }

    let model = lay.unpack(&p);
    if !model.distortion.is_monotone(problem.field_extent(&model)) {
        return Err(Error::NonMonotonicDistortion);
    }
    let param_cov = parameter_covariance(obs, target, &model, opts)?;

    let raw = Problem::new(obs, target, views, opts, false)?;
    let plain = raw.residuals(&p)?;
    let mut per_view = Vec::with_capacity(views);
    let mut offset = 0;
    for v in &raw.by_view {
        let norms: Vec<f64> = (0..v.len())
            .map(|r| (plain[offset + 2 * r].powi(2) + plain[offset + 2 * r + 1].powi(2)).sqrt())
            .collect();
        offset += 2 * v.len();
        per_view.push(ViewResiduals {
            rms: (norms.iter().map(|n| n * n).sum::<f64>() / norms.len().max(1) as f64).sqrt(),
            max: norms.iter().copied().fold(0.0, f64::max),
        });
    }
    Ok(CalibrationResult {
        intrinsics: model.intrinsics,
        distortion: model.distortion.clone(),
        poses: model.poses.clone(),
        param_names: lay.names(),
        param_cov,
        rms_reproj: (plain.norm_squared() / obs.len() as f64).sqrt(),
        per_view,
        cost: cur,
        iterations,
        history,
    })
}

/// Covariance of the intrinsic parameters, `(J^T Sigma^-1 J)^-1` with the
/// pose blocks marginalized out by Schur complement.
pub fn parameter_covariance(obs: &[Observation], target: &TargetSpec, model: &Model, opts: &OptimizeOptions) -> Result<DMatrix<f64>> {
    let problem = Problem::new(obs, target, model.poses.len(), opts, true)?;
    let lay = problem.layout;
    let jac = problem.jacobian(&lay.pack(model))?;
    let info = jac.transpose() * &jac;
    let ni = lay.intrinsic_len();
    let mut schur = info.view((0, 0), (ni, ni)).into_owned();
    for j in 0..lay.views {
        let o = lay.pose_offset(j);
        let c = info.view((o, o), (6, 6)).into_owned();
        let b = info.view((0, o), (ni, 6)).into_owned();
        let chol = c.cholesky().ok_or(Error::SingularInformation)?;
        schur -= &b * chol.solve(&b.transpose());
    }
    invert_information(&schur)
}

/// Inverse of a symmetric information matrix, rejecting rank deficiency
/// relative to its own scale.
fn invert_information(info: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = info.nrows();
    let d: Vec<f64> = (0..n).map(|i| info[(i, i)]).collect();
    if d.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::SingularInformation);
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| info[(i, j)] / (d[i] * d[j]).sqrt());
    let eig = scaled.clone().symmetric_eigen();
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(lo > 1e-12 * hi) {
        return Err(Error::SingularInformation);
    }
    let inv = scaled.cholesky().ok_or(Error::SingularInformation)?.inverse();
    let cov = DMatrix::from_fn(n, n, |i, j| inv[(i, j)] / (d[i] * d[j]).sqrt());
    Ok((&cov + cov.transpose()) * 0.5)
}

/// Closed-form initialization and refinement from per-view measurements.
pub fn calibrate(views: &[Vec<CentroidMeasurement>], target: &TargetSpec, opts: &OptimizeOptions) -> Result<CalibrationResult> {
    calibrate_in_frame(views, target, opts, None)
}

/// True when the principal point lies in the central half of the image along
/// each axis and the focal lengths have an aspect ratio within `[0.5, 2]`.
pub fn plausible_intrinsics(k: &Intrinsics, width: usize, height: usize) -> bool {
    let (w, h) = (width as f64, height as f64);
    let aspect = k.fx / k.fy;
    k.fx > 0.0
        && k.fy > 0.0
        && (0.5..=2.0).contains(&aspect)
        && (0.25 * w..=0.75 * w).contains(&k.cx)
        && (0.25 * h..=0.75 * h).contains(&k.cy)
}

/// Like [`calibrate`], knowing the image size `(width, height)`.
///
/// When the closed-form estimate is implausible for the frame, or its
/// refinement fails or ends implausible, refinement restarts from a
/// principal point at the image center.
pub fn calibrate_in_frame(
    views: &[Vec<CentroidMeasurement>],
    target: &TargetSpec,
    opts: &OptimizeOptions,
    frame: Option<(usize, usize)>,
) -> Result<CalibrationResult> {
    let needed = if opts.estimate_skew { 3 } else { 2 };
    if views.len() < needed.max(3) {
        return Err(Error::InsufficientViews {
            needed: needed.max(3),
            got: views.len(),
        });
    }
    let pts: Vec<Vec<Point2<f64>>> = views.iter().map(|v| v.iter().map(|m| m.p).collect()).collect();
    let obs = observations_from_views(views, target);
    let refine = |(k, poses): (Intrinsics, Vec<Pose>)| {
        let init = Model {
            intrinsics: k,
            distortion: Distortion {
                d: vec![0.0; opts.nd],
            },
            poses,
        };
        optimize(&obs, target, &init, opts)
    };
    let first = zhang_init(&pts, target, opts.estimate_skew);
    let Some((w, h)) = frame else {
        return refine(first?);
    };
    let first = match first {
        Ok(init) if plausible_intrinsics(&init.0, w, h) => refine(init),
        Ok(_) => Err(Error::SingularSystem("closed-form principal point is far from the image center".into())),
        Err(e) => Err(e),
    };
    match first {
        Ok(r) if plausible_intrinsics(&r.intrinsics, w, h) => Ok(r),
        first => {
            let center = Point2::new(0.5 * (w as f64 - 1.0), 0.5 * (h as f64 - 1.0));
            match centered_init(&pts, target, center).and_then(refine) {
                Ok(r) => match first {
                    Ok(f) if f.cost <= r.cost => Ok(f),
                    _ => Ok(r),
                },
                Err(e) => first.or(Err(e)),
            }
        }
    }
}
