//! Seeded synthetic calibration datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::poses::{sample_poses, PoseSampler};
use super::render::{render, Blur, CircleTruth, RenderSpec};
use crate::detector::{detect, DetectParams, DetectedGrid};
use crate::image::GrayImage;
use crate::projection::{Distortion, Intrinsics, Pose, TargetSpec};
use crate::{Error, Result};

/// Camera, target and imaging settings of a synthetic experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub intrinsics: Intrinsics,
    pub distortion: Distortion,
    pub target: TargetSpec,
    pub width: usize,
    pub height: usize,
    pub sampler: PoseSampler,
    pub supersampling: usize,
    /// Additive Gaussian noise, gray levels.
    pub noise: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            intrinsics: Intrinsics::new(600.0, 600.0, 600.0, 450.0),
            distortion: Distortion { d: vec![-0.4] },
            target: TargetSpec {
                rows: 3,
                cols: 4,
                spacing: 50.0,
                radius: 20.0,
            },
            width: 1200,
            height: 900,
            sampler: PoseSampler::default(),
            supersampling: 8,
            noise: 2.0,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        Distortion::new(self.distortion.d.clone())?;
        self.target.validate()?;
        self.sampler.validate()?;
        if self.width == 0 || self.height == 0 {
            return Err(Error::EmptyImage);
        }
        if self.supersampling < 4 || !(self.noise >= 0.0) {
            return Err(Error::InvalidArgument("supersampling >= 4 and noise >= 0 required".into()));
        }
        Ok(())
    }

    pub fn render_spec(&self, pose: Pose) -> RenderSpec {
        RenderSpec {
            supersampling: self.supersampling,
            noise: self.noise,
            ..RenderSpec::new(self.intrinsics, self.distortion.clone(), pose, self.target, self.width, self.height)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Original,
    /// Linear motion blur of random direction per image.
    MotionBlur,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub scenario: Scenario,
    pub kind: DatasetKind,
    pub images: usize,
    pub seed: u64,
    /// Largest half-extent of the motion blur, px.
    pub max_motion: f64,
    /// Smallest half-extent of the motion blur, px.
    pub min_motion: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::default(),
            kind: DatasetKind::Original,
            images: 30,
            seed: 42,
            max_motion: 5.0,
            min_motion: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImage {
    pub pose: Pose,
    pub blur: Blur,
    pub image: GrayImage,
    /// Target order.
    pub truth: Vec<CircleTruth>,
}

/// Poses and blurs of a dataset, drawn from one seeded stream.
pub fn dataset_plan(cfg: &DatasetConfig) -> Result<Vec<(Pose, Blur)>> {
    cfg.scenario.validate()?;
    if cfg.images == 0 || !(0.0 <= cfg.min_motion && cfg.min_motion <= cfg.max_motion) {
        return Err(Error::InvalidArgument("need at least one image and 0 <= min_motion <= max_motion".into()));
    }
    let s = &cfg.scenario;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let poses = sample_poses(&s.intrinsics, &s.distortion, &s.target, s.width, s.height, &s.sampler, cfg.images, &mut rng)?;
    Ok(poses
        .into_iter()
        .map(|pose| {
            let blur = match cfg.kind {
                DatasetKind::Original => Blur::None,
                DatasetKind::MotionBlur => {
                    let extent = rng.random_range(cfg.min_motion..=cfg.max_motion);
                    let angle = rng.random_range(0.0..std::f64::consts::PI);
                    Blur::Translation {
                        dx: extent * angle.cos(),
                        dy: extent * angle.sin(),
                    }
                }
            };
            (pose, blur)
        })
        .collect())
}

/// Renders every image of a dataset.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<SyntheticImage>> {
    let plan = dataset_plan(cfg)?;
    plan.into_par_iter()
        .enumerate()
        .map(|(i, (pose, blur))| {
            let spec = RenderSpec {
                blur,
                noise_seed: cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
                ..cfg.scenario.render_spec(pose)
            };
            let r = render(&spec)?;
            Ok(SyntheticImage {
                pose,
                blur,
                image: r.image,
                truth: r.circles,
            })
        })
        .collect()
}

/// Detection of every image; failures are kept per image.
pub fn detect_all(images: &[GrayImage], target: &TargetSpec, params: &DetectParams) -> Vec<Result<DetectedGrid>> {
    images.par_iter().map(|img| detect(img, target, params)).collect()
}
