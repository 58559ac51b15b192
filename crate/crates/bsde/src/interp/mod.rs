//! Interpolation layer: Thomas tridiagonal solve, not-a-knot cubic splines
//! in 1-D, bicubic surfaces with finite-difference derivatives in 2-D, and
//! the ring buffer of coefficient sets retained across time layers.

mod bicubic;
mod cubic;
mod history;
mod tridiagonal;

pub use bicubic::{build_bicubic, eval_bicubic, fd_derivatives_2d, BicubicCoeffs};
pub(crate) use bicubic::d1_line;
pub use cubic::{build_cubic_spline, build_cubic_spline_axis, eval_cubic_spline, CubicSplineCoeffs};
pub use history::{shift_history, SplineHistory};
pub use tridiagonal::{solve_tridiagonal, TridiagonalSystem};
