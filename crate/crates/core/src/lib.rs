pub mod baselines;
pub mod controller;
pub mod error;
pub mod evaluator;
pub mod featurestore;
pub mod harness;
pub mod numkit;
pub mod policy;
pub mod verify;

pub use error::{Error, Result};
