//! Procedural articulated scenes, analytic rendering and datasets.

pub mod dataset;
pub mod imageio;
pub mod raycast;
pub mod scene;

pub use dataset::{generate_dataset, load_view, DataConfig, DatasetManifest, InstanceRecord, LoadedView, ViewRecord};
pub use raycast::{intersect_box, raycast_render, trace, Lighting, PosedView};
pub use scene::{keypoints_analytic, sample_scene, Category, KeypointSet, OrientedBox, Part, SceneModel, NUM_CLASSES};
