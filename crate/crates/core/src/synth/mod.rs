//! Synthetic target images with exact ground truth, and the experiment
//! harnesses built on them.

mod dataset;
mod montecarlo;
mod poses;
mod render;
mod study;

pub use dataset::{dataset_plan, detect_all, generate_dataset, DatasetConfig, DatasetKind, Scenario, SyntheticImage};
pub use montecarlo::{column_stats, draw_subsets, monte_carlo, Arm, ArmSummary, McConfig, McReport};
pub use poses::{pose_fits, revolved_pose, sample_poses, target_middle, PoseSampler};
pub use render::{
    apply_blur, circle_truth, render, Blur, CircleTruth, RenderSpec, Rendered, BACKGROUND, CONTOUR_SAMPLES, FOREGROUND,
    MOTION_FRAMES,
};
pub use study::{
    anchor_poses, diverse_poses, half_means, iou, measure_views, one_sided_poses, opposite_rotation_sets,
    optimal_revolution, ellipse_mask, polygon_mask, pose_set_map, pose_set_uncertainty, render_ellipse, revolution_sweep, selection_trial,
    EllipseShape, SelectionTrial, StudySetup, SweepPoint,
};

#[cfg(test)]
mod tests;
