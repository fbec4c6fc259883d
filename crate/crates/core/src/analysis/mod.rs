//! Metrics, engines, batch drivers, configuration and file output.

pub mod config;
pub mod drivers;
pub mod engine;
pub mod metrics;
pub mod output;

pub use drivers::*;
pub use engine::{simulate, Engine, TrajectoryRecord, TrajectoryRow};
pub use metrics::{max_classical_distance, similarity, SimilarityScore};
