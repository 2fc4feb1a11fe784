//! Cramer–Wold distance estimators, generative autoencoders, and two-stage
//! latent generators on a small reverse-mode autodiff engine.
//!
//! The guide in `book/` walks through the concepts; its code listings are
//! compiled and run as doctests of this crate.

pub mod autodiff;
pub mod cli;
pub mod cwdist;
pub mod datasets;
pub mod eval;
mod error;
pub mod nets;
pub mod rng;
pub mod training;
mod tensor;

pub use error::{Error, Result};
pub use tensor::{Batch, Tensor};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/distances.md")]
    mod distances {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
