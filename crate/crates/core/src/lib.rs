//! Truncated θ-Milstein integration of scalar stochastic delay equations
//!
//! ```text
//! dx(t) = f(t, x(t), x(t−τ)) dt + g(t, x(t), x(t−τ)) dB(t),   x = ξ on [−τ, 0]
//! ```
//!
//! with coefficients that may grow faster than linearly. Coefficient arguments
//! are clamped to a radius that widens as the step shrinks, the drift is
//! split θ-implicitly, and the Milstein correction includes the delayed
//! cross term.
//!
//! ```
//! use sdde_core::{problems, scheme, noise::BrownianStore, model::TimeGrid};
//!
//! let p = problems::paper_example();
//! let grid = TimeGrid::for_problem(&p.spec, 2f64.powi(-6)).unwrap();
//! let store = BrownianStore::generate(42, 0, grid.dt(), p.spec.delay(), p.spec.horizon()).unwrap();
//! let path = scheme::simulate(&p.spec, &p.policy, &grid, &p.scheme, &store).unwrap();
//! assert_eq!(path.values().len(), grid.len());
//! assert!(path.terminal().is_finite());
//! ```

// `!(v > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod expr;
pub mod harness;
pub mod model;
pub mod noise;
pub mod normal;
pub mod probe;
pub mod problems;
pub mod scheme;

pub use model::{Coefficient, ProblemSpec, TimeGrid, TruncationPolicy};
pub use scheme::{simulate, SchemeConfig};

// The guide's snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/truncation.md")]
    mod truncation {}
    #[doc = include_str!("../../../book/src/scheme.md")]
    mod scheme {}
    #[doc = include_str!("../../../book/src/noise.md")]
    mod noise {}
    #[doc = include_str!("../../../book/src/convergence.md")]
    mod convergence {}
    #[doc = include_str!("../../../book/src/probing.md")]
    mod probing {}
    #[doc = include_str!("../../../book/src/expressions.md")]
    mod expressions {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
