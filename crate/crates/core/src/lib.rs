//! Bounding-box motion estimation for multi-object tracking.
//!
//! The crate covers the whole pipeline around learning-aided Kalman
//! filtering of box trajectories:
//!
//! - [`geometry`]: box parameterizations, IoU and adjacent-frame AIoU.
//! - [`linear_models`] and [`kalman_core`]: the constant-velocity Kalman filter.
//! - [`dataio`]: MOTChallenge ground-truth ingestion, semi-simulated
//!   measurement generation, temporal splits and the dataset file format.
//! - [`sie`] and [`learned_filters`]: the semantic-independent encoder and the
//!   KNet / SKNet / SIKNet recurrent gain filters.
//! - [`training`]: Smooth-L1 trajectory training, gradient checking and checkpoints.
//! - [`evaluation`]: recall-at-IoU, average recall and the noise-mismatch grid.
//! - [`tracker`]: BYTE-style two-stage association over any [`motion::MotionModel`].

pub mod autodiff;
pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod kalman_core;
pub mod learned_filters;
pub mod linear_models;
pub mod motion;
pub mod nn;
pub mod sie;
pub mod tracker;
pub mod training;

pub use error::{Error, Result};
pub use geometry::{aiou, convert_mode, iou, BBox, StateMode};
pub use kalman_core::{FilterState, StepEstimate, UpdateDiagnostics};
pub use learned_filters::{GainNetwork, NetConfig, Variant};
pub use linear_models::LinearModelConfig;
pub use motion::MotionModel;
