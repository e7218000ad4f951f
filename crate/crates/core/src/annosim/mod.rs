//! Synthetic scenes, simulated annotators and quality control.

mod event;
mod instances;
mod qc;
mod scene;
mod simulate;

pub use event::{AnnotationEvent, Click, StrokePoint, TaskKind};
pub use instances::{find_instances, Instance};
pub use qc::{quality_control, Planted, QcReport, QcStatus, MIN_CORRECT};
pub use scene::{generate_scene, scene_id, PlacedShape, Scene, SceneConfig, ShapeKind};
pub use simulate::{
    rate_report, sample_random_points, simulate_point_annotator, simulate_point_tallied, simulate_squiggle_annotator,
    simulate_squiggle_tallied, AnnotatorProfile, PointTask, RateRow, SimTally,
};
