//! Design automation for efficient networks on a desk-scale substrate:
//! hardware-aware differentiable architecture search, reinforcement-learned
//! channel pruning and mixed-precision quantization, all scored against
//! built-in hardware cost models.

pub mod amc;
pub mod archsearch;
pub mod error;
pub mod haq;
pub mod hwmodel;
pub mod nncore;
pub mod rlcore;
pub mod rng;

pub use error::{Error, Result};
