//! Pixel-space, text-conditioned flow-matching video generator.

pub mod checkpoint;
pub mod data;
pub mod flow;
pub mod linear;
pub mod net;
pub mod optim;
pub mod sample;
pub mod tensor;
pub mod text;
pub mod train;
