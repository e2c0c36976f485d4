//! RheOFormer: an attention-based neural-operator surrogate for
//! non-Newtonian fluid mechanics, together with the constitutive-model
//! integrators, signal generators, and a desk-scale channel-flow solver
//! that produce all of its training data and verification oracles.

pub mod attention;
pub mod cli;
pub mod constitutive;
pub mod data;
pub mod error;
pub mod flow1d;
pub mod generate;
pub mod io;
pub mod model;
pub mod plot;
pub mod signals;
pub mod tensor;
pub mod training;

pub use error::{Result, RheoError};
