//! Scene-graph relationship toolkit: text-mined relationship priors, a
//! trainable attention-based relationship head, zero-shot predicate
//! classification and evaluation protocols.

pub mod config;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod evalkit;
pub mod orm;
pub mod pipeline;
pub mod relhead;
pub mod sg;
pub mod synth;
pub mod zeroshot;

pub use error::{Error, Result};
