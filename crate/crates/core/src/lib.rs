//! Next point-of-interest recommendation pipeline.
//!
//! Check-in logs are parsed and clustered into geographic regions, split into
//! daily trajectories, and fed to a model that combines a GCN over the global
//! POI transition graph with three self-attention channels (location, region,
//! category) fused by learned, region-pattern-dependent weights. Training,
//! ranking evaluation and behavioral analyses all live here; the `cli` crate
//! wraps it as an executable.
//!
//! The numeric core ([`tensor`], [`autodiff`], [`sparse`], [`geo`]) is generic
//! over the scalar type; the aliases below pin the pipeline to `f64`.

pub mod autodiff;
pub mod error;
pub mod geo;
pub mod gradcheck;
pub mod real;
pub mod sparse;
pub mod tensor;

pub mod analysis;
pub mod checkpoint;
pub mod evaluator;
pub mod graph;
pub mod ingest;
pub mod model;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};

/// Pipeline scalar type: 64-bit floats keep gradient-check tolerances tight.
pub type Scalar = f64;

pub type Tensor = tensor::Tensor<Scalar>;
pub type Tape = autodiff::Tape<Scalar>;
pub type Var = autodiff::Var;
pub type Gradients = autodiff::Gradients<Scalar>;
pub type ParamRegistry = autodiff::ParamRegistry<Scalar>;
pub type AdamState = autodiff::AdamState<Scalar>;
pub type Csr = sparse::Csr<Scalar>;
