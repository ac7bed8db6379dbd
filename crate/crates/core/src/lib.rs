//! Split-learning laboratory.
//!
//! A two-segment image classifier is trained across a simulated
//! data-owner / computational-server boundary ([`splitnn`], [`channel`]).
//! The server-side black-box inversion attack lives in [`attack`]; the two
//! defences are additive Laplace noise on the intermediate representation
//! and a distance-correlation penalty ([`dcor`]). [`runner`] wires the pieces
//! into reproducible experiments.

pub mod attack;
pub mod channel;
pub mod data;
pub mod dcor;
pub mod error;
pub mod model;
pub mod runner;
pub mod seed;
pub mod splitnn;
pub mod tensor;

pub use error::{Error, Result};
