//! Seven-category dermoscopic lesion classifier: data ingestion, a
//! transfer-learning model, cyclical learning-rate schedules, training with
//! layer-group freezing, and test-time-augmented evaluation.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod schedule;
pub mod taxonomy;
pub mod toy;
pub mod trainer;

pub use error::{Error, Result};
