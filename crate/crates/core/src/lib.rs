//! Keyframe reasoning, sparse inference-time tuning and video sampling on a
//! desk-scale flow-matching generator.

pub mod chain_model;
pub mod error;
pub mod gateway;
pub mod generator;
pub mod harness;
pub mod lora;
pub mod reasoner;
pub mod sampler;
pub mod scene;
pub mod tuner;

pub use error::{Error, Result};
