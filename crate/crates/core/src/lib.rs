//! Neural-field models of articulated objects.
//!
//! Pipeline: [`worldgen`] builds analytic scenes and posed-image datasets,
//! [`autodecoder`] fits per-object latent codes and network weights jointly,
//! [`raymarch`] renders the learned field, [`artsim`] moves the articulation
//! code to predict motion, and [`planner`] turns predicted keypoints into
//! gripper trajectories.

pub mod artsim;
pub mod autodecoder;
pub mod camera;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod neuralfield;
pub mod planner;
pub mod raymarch;
pub mod worldgen;

pub use error::{Error, Result};
