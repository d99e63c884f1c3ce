//! Deterministic numerical substrate: tensors, reverse-mode autodiff,
//! seeded random streams and the finite-difference gradient oracle.

pub mod gradcheck;
pub mod graph;
pub mod rng;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_piecewise, Coverage, GradCheckReport};
pub use graph::{Graph, Var};
pub use rng::{Rng, RngState};
pub use tensor::Tensor;
