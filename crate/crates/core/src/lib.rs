pub mod energynet;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod infer;
pub mod observation;
pub mod posterior;
pub mod render;
pub mod seed;
pub mod train;
