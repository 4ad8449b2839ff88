//! Camera calibration from planar circle-grid targets.
//!
//! The pipeline measures blob centroids together with a 2x2 covariance
//! derived from the blob boundary, selects detections by that uncertainty,
//! refines intrinsics against the exact image centroid of each projected
//! circle, and reports the result as a per-pixel uncertainty map.
//!
//! Modules, bottom-up:
//! - [`image`]: gray images, gradients, thresholds, morphology
//! - [`moments`]: Green-theorem area and centroid of closed boundaries
//! - [`uncertainty`]: boundary prior, gradient information, centroid covariance
//! - [`detector`]: contour tracing, ellipse gate, threshold sweep, grid ordering
//! - [`projection`]: pinhole + radial model and the circle-centroid estimator
//! - [`calib`]: closed-form initialization, weighted LM, parameter covariance
//! - [`uncmap`]: parameter covariance to per-pixel covariance maps
//! - [`synth`]: target rendering and Monte-Carlo experiments

pub mod calib;
pub mod detector;
mod error;
pub mod image;
pub mod moments;
pub mod projection;
pub mod synth;
pub mod uncertainty;
pub mod uncmap;

pub use error::{Error, Result};

pub use calib::{CalibrationResult, Observation, OptimizeOptions};
pub use detector::{DetectParams, DetectedGrid};
pub use image::{GradientField, GrayImage};
pub use moments::{Contour, PolygonMoments};
pub use projection::{Distortion, Intrinsics, Pose, TargetSpec};
pub use uncertainty::CentroidMeasurement;
pub use uncmap::UncertaintyMap;
