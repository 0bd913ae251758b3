//! Momentum-contrast pretraining where positives and negatives come from
//! where and when frames were captured along a walk through a procedural
//! indoor scene.

pub mod augment;
pub mod config;
pub mod contrast;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod geom;
pub mod nn;
pub mod pairing;
pub mod probe;
pub mod recorder;
pub mod render;
pub mod scene;
pub mod trajectory;

pub use error::{Error, Result};
