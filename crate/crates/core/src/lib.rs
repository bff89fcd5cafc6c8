//! Detection of passes, receptions and shots from player and ball
//! trajectories.
//!
//! The crate covers the full path from raw tracking data to evaluated
//! detections: [`trajstore`] loads matches and cuts ball-centred windows,
//! [`models`] holds the TCN and transformer classifiers built on the small
//! reverse-mode engine in [`autodiff`], [`detector`] turns per-frame
//! probabilities into events, and [`evaluator`] and [`tuner`] score and
//! calibrate them. [`simgen`] generates labelled synthetic matches.

pub mod autodiff;
pub mod detector;
pub mod error;
pub mod evaluator;
pub mod exec;
pub mod models;
pub mod pipeline;
pub mod simgen;
pub mod trajstore;
pub mod tuner;

pub use error::{Error, ErrorKind, Result};
pub use exec::Exec;
