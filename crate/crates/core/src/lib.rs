//! Block-synchronous full-duplex dialogue engine over symbolic audio streams.

pub mod config;
pub mod data;
pub mod encoder;
pub mod engine;
pub mod eval;
pub mod interleave;
pub mod pipeline;
pub mod policy;
pub mod schema;
pub mod sim;
pub mod synth;
pub mod timebase;
pub mod transcript;
