//! Solver library for decoupled backward stochastic differential equations
//! on a uniform space grid, plus a benchmark harness for convergence studies.
//!
//! The backward recursion steps over `K` future time layers at once.
//! Conditional expectations are evaluated with Gauss-Hermite quadrature,
//! off-grid values come from not-a-knot cubic splines (bicubic in 2-D),
//! the z-update is explicit and the y-update is resolved by Picard
//! iteration. Grid sweeps run data-parallel with a fixed reduction order,
//! so results are bit-identical regardless of worker count.

// indexed loops and explicit comparisons are the house style in the
// numeric kernels: several slices are walked in lockstep and the index
// is part of the math
#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::type_complexity)]

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

pub mod grid;
pub mod interp;
pub mod problems;
pub mod quadrature;
pub mod report;
pub mod scheme;

/// Scalar type the solver is generic over: f32 or f64.
pub trait Real:
    num_traits::Float
    + num_traits::NumCast
    + Sum
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from f64, for constants and weight tables.
    fn from_f64(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("f64 constant not representable")
    }

    fn from_usize(v: usize) -> Option<Self> {
        <Self as num_traits::NumCast>::from(v)
    }

    fn from_u32(v: u32) -> Option<Self> {
        <Self as num_traits::NumCast>::from(v)
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("scalar not representable as f64")
    }

    fn pi() -> Self {
        Self::from_f64(std::f64::consts::PI)
    }
}

impl<T> Real for T where
    T: num_traits::Float
        + num_traits::NumCast
        + Sum
        + Debug
        + Display
        + LowerExp
        + Send
        + Sync
        + 'static
{
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("singular tridiagonal system: zero pivot at row {row}")]
    SingularSystem { row: usize },

    #[error("non-finite driver value at t={t}, x={x:?}, y={y:?}, z={z:?}")]
    NumericalDomain {
        t: f64,
        x: Vec<f64>,
        y: Vec<f64>,
        z: Vec<f64>,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("at time layer {layer}: {source}")]
    AtLayer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_layer(self, layer: usize) -> Error {
        Error::AtLayer {
            layer,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub use grid::{build_time_grid, locate_cell, CellLocation, SpaceGrid, TimeGrid};
pub use problems::ProblemSpec;
pub use quadrature::{expectation, hermite_rule, HermiteRule, TensorRule};
pub use report::{emit_report, estimate_order, run_experiment, ReportFormat, ReportRow, RunConfig};
pub use scheme::{scheme_weights, solve_backward, SchemeWeights, SolveResult, SolverConfig};

/// Concrete double-precision aliases for the common case.
pub type SpaceGrid64 = grid::SpaceGrid<f64>;
pub type TimeGrid64 = grid::TimeGrid<f64>;
pub type ProblemSpec64 = problems::ProblemSpec<f64>;
pub type SolverConfig64 = scheme::SolverConfig<f64>;
pub type SolveResult64 = scheme::SolveResult<f64>;
