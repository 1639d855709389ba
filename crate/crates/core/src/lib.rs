//! Pose-based recognition of paired user activities.

pub mod dataset;
pub mod eval;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod skeleton;

#[cfg(any(test, feature = "testing"))]
pub mod testing;
