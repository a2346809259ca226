//! Scene-LSTM trajectory forecasting.
//!
//! Per-pedestrian LSTMs predict bivariate-Gaussian location offsets while a
//! bank of per-grid-cell scene LSTMs accumulates the movement patterns seen
//! in each region of the scene. A two-stage scene data filter decides how
//! much of a cell's memory reaches each pedestrian's output head.

pub mod autodiff;
pub mod data;
pub mod scenegrid;
pub mod model;
pub mod eval;
pub mod train;
pub mod experiment;
pub mod gradcheck;
