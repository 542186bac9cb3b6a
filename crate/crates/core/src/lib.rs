//! Regularized monotone scheme for the singular subelliptic p-Laplace
//! problem on Carnot groups, and the best constant of the associated
//! `(1-delta, p)` Sobolev inequality.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod calculus;
pub mod config;
pub mod error;
pub mod grid;
pub mod group;
pub mod mms;
pub mod par;
pub mod report;
pub mod scheme;
pub mod sobolev;
pub mod variational;
pub mod verify;

pub use calculus::{monotone_pairing, HorizontalCalculus, HorizontalSection};
pub use error::{Error, Result};
pub use grid::{build_grid, integrate, lp_norm, DomainShape, Grid, GridFunction};
pub use group::{GroupKind, GroupSpec, Point};
pub use scheme::{run_scheme, SchemeOptions, SchemeReport};
pub use variational::{minimize, Energy, ProblemSpec, SolverConfig};
