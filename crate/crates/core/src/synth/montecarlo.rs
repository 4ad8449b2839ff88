//! Repeated calibration from random image subsets, per ablation arm.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calib::{calibrate_in_frame, Estimator, OptimizeOptions, ParamLayout};
use crate::uncertainty::CentroidMeasurement;
use crate::projection::TargetSpec;
use crate::{Error, Result};

/// Loss and estimator combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Unweighted loss, circle centers projected as points.
    NaiveCenter,
    /// Unweighted loss, full-circle centroid.
    Unbiased,
    /// Covariance-weighted loss, full-circle centroid.
    Weighted,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::NaiveCenter, Arm::Unbiased, Arm::Weighted];

    pub fn options(self, base: &OptimizeOptions) -> OptimizeOptions {
        let (estimator, weighted) = match self {
            Arm::NaiveCenter => (Estimator::NaiveCenter, false),
            Arm::Unbiased => (Estimator::Unbiased, false),
            Arm::Weighted => (Estimator::Unbiased, true),
        };
        OptimizeOptions {
            estimator,
            weighted,
            ..*base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub draws: usize,
    pub views_per_draw: usize,
    pub seed: u64,
    pub arms: Vec<Arm>,
    pub optimizer: OptimizeOptions,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            draws: 30,
            views_per_draw: 6,
            seed: 42,
            arms: Arm::ALL.to_vec(),
            optimizer: OptimizeOptions {
                nd: 1,
                ..OptimizeOptions::default()
            },
        }
    }
}

/// Statistics of one arm over all draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub names: Vec<String>,
    /// Mean over successful draws, per parameter.
    pub mean: Vec<f64>,
    /// Sample standard deviation over successful draws, per parameter.
    pub std: Vec<f64>,
    /// Per-draw intrinsic estimates; `None` for a failed draw.
    pub estimates: Vec<Option<Vec<f64>>>,
    pub failures: usize,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    /// Image indices used by each draw.
    pub draws: Vec<Vec<usize>>,
    pub arms: Vec<ArmSummary>,
}

impl McReport {
    pub fn arm(&self, arm: Arm) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.arm == arm)
    }
}

/// Mean and sample standard deviation per column.
pub fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let Some(first) = rows.first() else {
        return (Vec::new(), Vec::new());
    };
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..first.len()).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let std = (0..first.len())
        .map(|j| {
            if rows.len() < 2 {
                return 0.0;
            }
            (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        })
        .collect();
    (mean, std)
}

/// Subsets of detected images, one per draw.
pub fn draw_subsets(available: &[usize], cfg: &McConfig) -> Result<Vec<Vec<usize>>> {
    if available.len() < cfg.views_per_draw || cfg.views_per_draw == 0 {
        return Err(Error::InsufficientViews {
            needed: cfg.views_per_draw.max(1),
            got: available.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok((0..cfg.draws)
        .map(|_| {
            let mut pick: Vec<usize> = sample(&mut rng, available.len(), cfg.views_per_draw)
                .into_iter()
                .map(|i| available[i])
                .collect();
            pick.sort_unstable();
            pick
        })
        .collect())
}

/// Calibrates every draw with every arm. `detections[i]` is `None` when
/// image `i` failed detection; such images are never drawn. `frame` is the
/// image size, used to recover from implausible initializations.
pub fn monte_carlo(
    detections: &[Option<Vec<CentroidMeasurement>>],
    target: &TargetSpec,
    frame: Option<(usize, usize)>,
    cfg: &McConfig,
) -> Result<McReport> {
    let available: Vec<usize> = (0..detections.len()).filter(|&i| detections[i].is_some()).collect();
    let draws = draw_subsets(&available, cfg)?;
    let names = ParamLayout {
        nd: cfg.optimizer.nd,
        skew: cfg.optimizer.estimate_skew,
        views: 0,
    }
    .names();
    let arms = cfg
        .arms
        .iter()
        .map(|&arm| {
            let opts = arm.options(&cfg.optimizer);
            let mut estimates = Vec::with_capacity(draws.len());
            let mut errors = Vec::new();
            for pick in &draws {
                let views: Vec<Vec<CentroidMeasurement>> =
                    pick.iter().map(|&i| detections[i].clone().unwrap_or_default()).collect();
                match calibrate_in_frame(&views, target, &opts, frame) {
                    Ok(r) => {
                        let k = r.intrinsics;
                        let mut v = vec![k.fx, k.fy, k.cx, k.cy];
                        if opts.estimate_skew {
                            v.push(k.eta);
                        }
                        v.extend_from_slice(&r.distortion.d);
                        estimates.push(Some(v));
                    }
                    Err(e) => {
                        errors.push(e.to_string());
                        estimates.push(None);
                    }
                }
            }
            let ok: Vec<Vec<f64>> = estimates.iter().flatten().cloned().collect();
            let (mean, std) = column_stats(&ok);
            ArmSummary {
                arm,
                names: names.clone(),
                mean,
                std,
                failures: estimates.len() - ok.len(),
                estimates,
                errors,
            }
        })
        .collect();
    Ok(McReport { draws, arms })
}
