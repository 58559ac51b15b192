//! Not-a-knot cubic spline on a uniform knot axis.
//!
//! With second derivatives sigma_i as unknowns, the uniform-spacing
//! continuity equations read sigma_{i-1} + 4 sigma_i + sigma_{i+1} = r_i
//! with r_i = 6 (f_{i-1} - 2 f_i + f_{i+1}) / h^2. The not-a-knot end
//! conditions eliminate sigma_0 = 2 sigma_1 - sigma_2 (and mirrored at the
//! right), which decouples sigma_1 = r_1 / 6 and sigma_{n-2} = r_{n-2} / 6
//! and leaves a strictly tridiagonal system for the interior.

use crate::grid::{locate_axis, SpaceGrid};
use crate::interp::tridiagonal::{solve_tridiagonal, TridiagonalSystem};
use crate::{Error, Real, Result};

/// Per-interval cubic coefficients: value at interval j with local offset
/// t is `a + t*(b + t*(c + t*d))`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSplineCoeffs<T> {
    pub origin: T,
    pub dx: T,
    pub coeffs: Vec<[T; 4]>,
}

impl<T: Real> CubicSplineCoeffs<T> {
    #[inline]
    pub fn n_knots(&self) -> usize {
        self.coeffs.len() + 1
    }

    /// Horner evaluation of one interval's cubic at local offset `t`.
    #[inline]
    pub fn eval_interval(&self, j: usize, t: T) -> T {
        let [a, b, c, d] = self.coeffs[j];
        a + t * (b + t * (c + t * d))
    }
}

pub fn build_cubic_spline<T: Real>(
    samples: &[T],
    grid: &SpaceGrid<T>,
) -> Result<CubicSplineCoeffs<T>> {
    if grid.d != 1 {
        return Err(Error::InvalidArgument(
            "cubic spline needs a one-dimensional grid".into(),
        ));
    }
    if samples.len() != grid.n_points {
        return Err(Error::InvalidArgument(format!(
            "expected {} samples, got {}",
            grid.n_points,
            samples.len()
        )));
    }
    build_cubic_spline_axis(samples, grid.x_min[0], grid.dx)
}

/// Spline build on a bare uniform axis (origin plus spacing).
pub fn build_cubic_spline_axis<T: Real>(
    samples: &[T],
    origin: T,
    dx: T,
) -> Result<CubicSplineCoeffs<T>> {
    let n = samples.len();
    if n < 4 {
        return Err(Error::InvalidArgument(
            "not-a-knot spline needs at least 4 knots".into(),
        ));
    }
    let h = dx;
    let six = T::from_f64(6.0);
    let h2 = h * h;
    let r = |i: usize| {
        six * (samples[i - 1] - (samples[i] + samples[i]) + samples[i + 1]) / h2
    };

    let mut sigma = vec![T::zero(); n];
    sigma[1] = r(1) / six;
    sigma[n - 2] = r(n - 2) / six;
    let interior = n.saturating_sub(4);
    if interior == 1 {
        sigma[2] = (r(2) - sigma[1] - sigma[3]) / T::from_f64(4.0);
    } else if interior > 1 {
        let four = T::from_f64(4.0);
        let one = T::one();
        let mut sys = TridiagonalSystem {
            sub: vec![one; interior],
            main: vec![four; interior],
            sup: vec![one; interior],
            rhs: Vec::with_capacity(interior),
        };
        sys.sub[0] = T::zero();
        sys.sup[interior - 1] = T::zero();
        for i in 2..n - 2 {
            let mut rhs = r(i);
            if i == 2 {
                rhs = rhs - sigma[1];
            }
            if i == n - 3 {
                rhs = rhs - sigma[n - 2];
            }
            sys.rhs.push(rhs);
        }
        let sol = solve_tridiagonal(&sys)?;
        sigma[2..n - 2].copy_from_slice(&sol);
    }
    sigma[0] = sigma[1] + sigma[1] - sigma[2];
    sigma[n - 1] = sigma[n - 2] + sigma[n - 2] - sigma[n - 3];

    let mut coeffs = Vec::with_capacity(n - 1);
    let two = T::from_f64(2.0);
    for j in 0..n - 1 {
        let a = samples[j];
        let b = (samples[j + 1] - samples[j]) / h - h * (two * sigma[j] + sigma[j + 1]) / six;
        let c = sigma[j] / two;
        let d = (sigma[j + 1] - sigma[j]) / (six * h);
        coeffs.push([a, b, c, d]);
    }
    Ok(CubicSplineCoeffs {
        origin,
        dx,
        coeffs,
    })
}

/// Evaluation with constant extrapolation outside the knot range: clamped
/// coordinates take the nearest boundary knot's value.
pub fn eval_cubic_spline<T: Real>(coeffs: &CubicSplineCoeffs<T>, x: T) -> T {
    let (j, t, _) = locate_axis(coeffs.origin, coeffs.dx, coeffs.n_knots(), x);
    coeffs.eval_interval(j, t)
}
