#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod inference;
pub mod labeling;
pub mod losses;
pub mod model;
pub mod numeric;
pub mod optim;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
