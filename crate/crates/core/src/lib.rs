//! Compiler and cycle-level simulator for quantized CNN/FC networks mapped
//! onto a streaming-dataflow FPGA accelerator model.
//!
//! The flow is: parse an architecture document ([`model_ir`]), load raw
//! quantized parameters, balance per-layer parallelism against a resource
//! budget ([`balancer`]), then run the instantiated pipeline
//! ([`stream_sim`]) and compare it bit-for-bit with the layer-wise
//! reference ([`oracle`]).

pub mod balancer;
pub mod fixed_point;
pub mod model_ir;
pub mod oracle;
pub mod report;
pub mod stream_sim;
pub mod synth;
