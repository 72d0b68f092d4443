//! Few-shot named entity recognition as prompted sequence generation.
//!
//! Entity types are described by sets of universal concepts. A small
//! encoder-decoder model learns two prompted tasks over the same input
//! sentence: describing given mentions with concepts (`[MD]`), and generating
//! the mentions of requested, concept-described types (`[EG]`). This crate
//! holds the whole pipeline: corpus construction from knowledge-base and
//! encyclopedia dumps, description building, instance sampling, the model,
//! and span-level evaluation.

pub mod codec;
pub mod corpus;
pub mod data;
pub mod describe;
pub mod episodes;
pub mod eval;
pub mod generator;
pub mod jsonl;
pub mod locate;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod synthetic;

pub use model::Scalar;

/// Single-precision model, the default for training runs.
pub type Seq2Seq32 = model::Seq2Seq<f32>;
/// Double-precision model, used for gradient checks and bit-exact tests.
pub type Seq2Seq64 = model::Seq2Seq<f64>;
pub type Params32 = model::Params<f32>;
pub type Params64 = model::Params<f64>;
