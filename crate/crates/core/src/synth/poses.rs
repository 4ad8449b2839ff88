//! Target poses tangent to spheres centered on the camera.

use nalgebra::{Rotation3, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::projection::{project_point, Distortion, Intrinsics, Pose, TargetSpec};
use crate::uncmap::fold_radius;
use crate::{Error, Result};

/// Draw attempts per accepted pose before giving up.
const MAX_ATTEMPTS: usize = 10_000;

/// Target-plane point at the middle of the grid.
pub fn target_middle(t: &TargetSpec) -> Vector3<f64> {
    Vector3::new(
        0.5 * (t.cols - 1) as f64 * t.spacing,
        0.5 * (t.rows - 1) as f64 * t.spacing,
        0.0,
    )
}

/// Pose placing the grid middle at `distance` along the direction reached by
/// turning the optical axis by `revolution = (about x, about y)` degrees, with
/// the target itself turned by `rotation` degrees and rolled about its normal.
///
/// Equal revolution and rotation make the target tangent to the sphere of
/// radius `distance` around the camera.
pub fn revolved_pose(t: &TargetSpec, distance: f64, revolution: Vector2<f64>, rotation: Vector2<f64>, roll: f64) -> Pose {
    let turn = |v: Vector2<f64>| {
        Rotation3::from_axis_angle(&Vector3::y_axis(), v.y.to_radians())
            * Rotation3::from_axis_angle(&Vector3::x_axis(), v.x.to_radians())
    };
    let direction = turn(revolution) * Vector3::z();
    let r = turn(rotation) * Rotation3::from_axis_angle(&Vector3::z_axis(), roll.to_radians());
    Pose::from_rotation(&r, direction * distance - r * target_middle(t))
}

/// Random poses on two distance shells.
///
/// Each draw takes a rotation uniform in `[-max_angle, max_angle]` about both
/// camera axes and places the target tangent to the shell. When the tangent
/// placement leaves the usable field, the revolution is shrunk toward the
/// optical axis in tenths until the target fits, keeping the rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseSampler {
    /// Radius of the near shell, target length units.
    pub near: f64,
    /// Radius of the far shell, target length units.
    pub far: f64,
    /// Relative jitter of the shell radius.
    pub jitter: f64,
    /// Largest revolution about each camera axis, degrees.
    pub max_angle: f64,
    /// Largest roll about the target normal, degrees.
    pub max_roll: f64,
    /// Largest normalized radius of any circle point, as a fraction of the distortion fold.
    pub max_field: f64,
    /// Minimum distance of every circle from the image border, px.
    pub margin: f64,
}

impl Default for PoseSampler {
    fn default() -> Self {
        Self {
            near: 330.0,
            far: 480.0,
            jitter: 0.05,
            max_angle: 40.0,
            max_roll: 15.0,
            max_field: 0.85,
            margin: 10.0,
        }
    }
}

impl PoseSampler {
    pub fn validate(&self) -> Result<()> {
        let ok = self.near > 0.0
            && self.far >= self.near
            && (0.0..1.0).contains(&self.jitter)
            && self.max_angle > 0.0
            && self.max_angle < 90.0
            && self.max_roll >= 0.0
            && self.max_field > 0.0
            && self.max_field <= 1.0
            && self.margin >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("invalid pose sampler settings".into()))
        }
    }
}

/// True when every circle lies inside the image and the usable field.
pub fn pose_fits(
    k: &Intrinsics,
    d: &Distortion,
    t: &TargetSpec,
    pose: &Pose,
    width: usize,
    height: usize,
    max_field: f64,
    margin: f64,
) -> bool {
    let field = fold_radius(d).map_or(f64::INFINITY, |r| max_field * r);
    (0..t.len()).all(|i| {
        (0..32).all(|j| {
            let a = std::f64::consts::TAU * j as f64 / 32.0;
            let p = t.center(i) + Vector2::new(a.cos(), a.sin()) * t.radius;
            let c = pose.transform(p);
            if !(c.z > 0.0) || (c.x * c.x + c.y * c.y).sqrt() / c.z > field {
                return false;
            }
            project_point(k, d, pose, p).is_ok_and(|q| {
                q.x >= margin && q.y >= margin && q.x <= width as f64 - 1.0 - margin && q.y <= height as f64 - 1.0 - margin
            })
        })
    })
}

/// `n` poses alternating between the near and far shells.
pub fn sample_poses(
    k: &Intrinsics,
    d: &Distortion,
    t: &TargetSpec,
    width: usize,
    height: usize,
    sampler: &PoseSampler,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Pose>> {
    sampler.validate()?;
    let mut poses = Vec::with_capacity(n);
    for i in 0..n {
        let shell = if i % 2 == 0 { sampler.near } else { sampler.far };
        let mut found = None;
        for _ in 0..MAX_ATTEMPTS {
            let a = Vector2::new(
                rng.random_range(-sampler.max_angle..=sampler.max_angle),
                rng.random_range(-sampler.max_angle..=sampler.max_angle),
            );
            let roll = rng.random_range(-sampler.max_roll..=sampler.max_roll);
            let dist = shell * (1.0 + rng.random_range(-sampler.jitter..=sampler.jitter));
            found = (0..=10).rev().map(|s| s as f64 / 10.0).find_map(|scale| {
                let pose = revolved_pose(t, dist, a * scale, a, roll);
                pose_fits(k, d, t, &pose, width, height, sampler.max_field, sampler.margin).then_some(pose)
            });
            if found.is_some() {
                break;
            }
        }
        poses.push(found.ok_or_else(|| {
            Error::InvalidArgument(format!("no pose fits the image on the shell of radius {shell}"))
        })?);
    }
    Ok(poses)
}
