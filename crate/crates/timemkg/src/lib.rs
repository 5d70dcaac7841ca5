//! Dual-modality multivariate time-series modeling with knowledge-graph
//! prompt priors.
//!
//! The pipeline: a [`kg::Mkg`] stores typed causal relations between the
//! named variables of a multivariate series; per-variable prompts are
//! assembled from retrieved triplets, embedded, and compressed to one
//! vector per variable ([`embed`]); a dual-branch encoder models prompt
//! and series tokens over the variable axis ([`encoder`]); cross-modality
//! attention fuses the branches and task heads produce forecasts or class
//! logits ([`fusion`], [`model`]). Training, metrics, and a synthetic
//! generator with known causal structure live in [`data`], [`train`],
//! [`metrics`], and [`synth`].

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod embed;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod kg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod util;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor};
