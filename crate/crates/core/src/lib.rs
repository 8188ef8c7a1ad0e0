//! Learning user-type trajectory specifications from demonstrations.
//!
//! Synthetic tabletop scenes are paired with quadratic Bezier trajectories
//! labelled by a per-user-type validity oracle. A beta-VAE encoder over the
//! scene image plus a small classifier over `(z_I, theta)` learns each user
//! type's specification; gradient ascent in `theta` refines trajectories, and
//! do-interventions on the user type or the scene contents probe what the
//! learned model reacts to.

pub mod causal;
pub mod dataset;
pub mod diffnet;
pub mod error;
pub mod experiment;
pub mod irl;
pub mod refine;
pub mod report;
pub mod rng;
pub mod scene;
pub mod specmodel;
pub mod svg;
pub mod trajectory;

pub use error::{Error, Result};
