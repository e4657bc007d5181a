pub mod cli;
pub mod config;
pub mod encoder;
pub mod evalkit;
pub mod lexnorm;
pub mod pipeline;
pub mod protolearn;
pub mod rng;
pub mod taskforge;
pub mod tensor;
