//! Scene-aware single-object tracking on dense feature grids.
//!
//! An appearance filter scores every cell of the current frame. A set of
//! per-cell state vectors carries knowledge about the scene from frame to
//! frame: states are moved along dense soft correspondences computed from a
//! local cost volume, fused with the appearance score into a target
//! confidence, and updated by a convolutional GRU.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod appearance;
pub mod correspondence;
pub mod cost_volume;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod model;
pub mod oracle;
pub mod propagation;
pub mod scalar;
pub mod selftest;
pub mod state_update;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
pub use geometry::TargetBox;
pub use grid::{Cell, Grid2D, Grid3D, Point};
pub use model::ModelParams;
pub use scalar::Scalar;
pub use tracker::{track_sequence, Ablation, TrackerConfig};

pub type Grid2 = grid::Grid2D<f64>;
pub type Grid3 = grid::Grid3D<f64>;
pub type Grid2f = grid::Grid2D<f32>;
pub type Grid3f = grid::Grid3D<f32>;
pub type Params = model::ModelParams<f64>;
pub type Paramsf = model::ModelParams<f32>;
pub type Config = tracker::TrackerConfig<f64>;
pub type Configf = tracker::TrackerConfig<f32>;
