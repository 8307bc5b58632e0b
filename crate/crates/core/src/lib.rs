//! Dynamic bilinear low-rank attention (DBA) alongside vanilla attention.
//!
//! The crate bundles the numerics substrate ([`tensor`], [`rng`], [`linalg`]),
//! a reverse-mode tape ([`autodiff`]), the attention mechanisms
//! ([`attention`]), executable correctness checks ([`oracles`]), an analytic
//! and wall-clock benchmark harness ([`bench`]) and a toy trainer
//! ([`trainer`]) for synthetic sequence tasks.

pub mod attention;
pub mod autodiff;
pub mod bench;
pub mod checkpoint;
pub mod error;
pub mod linalg;
pub mod oracles;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{DbaError, Result};
pub use rng::Rng;
pub use tensor::Tensor;
