//! Metrics, robustness sweeps and report emission.

mod checks;
mod emit;
mod experiment;
mod metrics;
mod pca;
mod sweeps;

pub use checks::*;
pub use emit::{emit, from_json, scenes_path, scenes_to_csv, to_csv, to_json, Format, CSV_COLUMNS, SCENE_CSV_COLUMNS};
pub use experiment::{ExperimentSpec, ModelRef};
pub use metrics::{evaluate, evaluate_scenes, l2_upto, summarize, Condition, MetricsReport, SceneRecord, TrajectoryModel, HORIZON_STEPS};
pub use pca::{pca_project, Projection};
pub use sweeps::*;

#[cfg(test)]
mod tests;
