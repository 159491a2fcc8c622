//! Asymptotic-preserving finite-difference solver for anisotropic diffusion
//! with a possibly nonlinear reaction term, on uniform Cartesian grids.
//!
//! The guide in `book/` walks through the modules with runnable examples.

// `!(x > 0.0)` style tests are there to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apcore;
pub mod grid;
pub mod gummel;
pub mod linsolve;
pub mod naive;
pub mod operators;
pub mod problems;
pub mod study;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/grids.md")]
    mod grids {}
    #[doc = include_str!("../../../book/src/operators.md")]
    mod operators {}
    #[doc = include_str!("../../../book/src/ap-solver.md")]
    mod ap_solver {}
    #[doc = include_str!("../../../book/src/nonlinear.md")]
    mod nonlinear {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/naive.md")]
    mod naive {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
