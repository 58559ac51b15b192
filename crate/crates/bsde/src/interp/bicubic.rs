//! Bicubic interpolation on a uniform 2-D grid, with the corner
//! derivatives supplied by fourth-order finite differences.

use crate::grid::{locate_axis, SpaceGrid};
use crate::{Error, Real, Result};

/// Per-cell coefficients of sum c_{pq} u^p v^q over the unit square, one
/// 16-vector per cell, cells stored with the x-index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct BicubicCoeffs<T> {
    pub origin: [T; 2],
    pub dx: T,
    pub n_knots: usize,
    pub coeffs: Vec<[T; 16]>,
}

/// Fourth-order first derivative along one index line. Central five-point
/// stencil in the interior, one-sided five-point stencils at the two
/// points nearest each boundary.
#[inline]
fn d1_fourth_order<T: Real, F: Fn(usize) -> T>(f: F, n: usize, h: T, i: usize) -> T {
    let c = |v: f64| T::from_f64(v);
    let inv12h = T::one() / (c(12.0) * h);
    if i >= 2 && i + 2 < n {
        (f(i - 2) - c(8.0) * f(i - 1) + c(8.0) * f(i + 1) - f(i + 2)) * inv12h
    } else if i == 0 {
        (c(-25.0) * f(0) + c(48.0) * f(1) - c(36.0) * f(2) + c(16.0) * f(3) - c(3.0) * f(4))
            * inv12h
    } else if i == 1 {
        (c(-3.0) * f(0) - c(10.0) * f(1) + c(18.0) * f(2) - c(6.0) * f(3) + f(4)) * inv12h
    } else if i + 2 == n {
        (c(3.0) * f(n - 1) + c(10.0) * f(n - 2) - c(18.0) * f(n - 3) + c(6.0) * f(n - 4)
            - f(n - 5))
            * inv12h
    } else {
        (c(25.0) * f(n - 1) - c(48.0) * f(n - 2) + c(36.0) * f(n - 3) - c(16.0) * f(n - 4)
            + c(3.0) * f(n - 5))
            * inv12h
    }
}

/// First derivative of a 1-D sample line, fourth order everywhere.
pub(crate) fn d1_line<T: Real>(samples: &[T], h: T, out: &mut [T]) {
    let n = samples.len();
    for i in 0..n {
        out[i] = d1_fourth_order(|k| samples[k], n, h, i);
    }
}

/// Gradients f_x, f_y and the cross derivative f_xy of an n-by-n field,
/// flat storage with the x-index fastest. f_xy applies the x-stencil
/// first, then the y-stencil; the reverse order differs only by
/// truncation error.
pub fn fd_derivatives_2d<T: Real>(
    field: &[T],
    grid: &SpaceGrid<T>,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if grid.d != 2 {
        return Err(Error::InvalidArgument("fd_derivatives_2d needs d = 2".into()));
    }
    let n = grid.n_points;
    if n < 6 {
        return Err(Error::InvalidArgument(
            "fourth-order stencils need at least 6 points per dimension".into(),
        ));
    }
    if field.len() != n * n {
        return Err(Error::InvalidArgument(format!(
            "expected {} field values, got {}",
            n * n,
            field.len()
        )));
    }
    let h = grid.dx;
    let mut fx = vec![T::zero(); n * n];
    let mut fy = vec![T::zero(); n * n];
    let mut fxy = vec![T::zero(); n * n];
    for row in 0..n {
        for i in 0..n {
            fx[row * n + i] = d1_fourth_order(|k| field[row * n + k], n, h, i);
        }
    }
    for col in 0..n {
        for j in 0..n {
            fy[j * n + col] = d1_fourth_order(|k| field[k * n + col], n, h, j);
            fxy[j * n + col] = d1_fourth_order(|k| fx[k * n + col], n, h, j);
        }
    }
    Ok((fx, fy, fxy))
}

// p(u) interpolation matrix: rows map (f(0), f(1), f'(0), f'(1)) to the
// coefficients of a cubic in u on [0, 1].
const HERMITE_BASIS: [[f64; 4]; 4] = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [-3.0, 3.0, -2.0, -1.0],
    [2.0, -2.0, 1.0, 1.0],
];

/// Builds per-cell coefficients from the field and its derivative fields.
/// Derivatives are in grid units (true derivatives, scaled internally by
/// dx so each cell works on the unit square).
pub fn build_bicubic<T: Real>(
    field: &[T],
    fx: &[T],
    fy: &[T],
    fxy: &[T],
    grid: &SpaceGrid<T>,
) -> Result<BicubicCoeffs<T>> {
    if grid.d != 2 {
        return Err(Error::InvalidArgument("build_bicubic needs d = 2".into()));
    }
    let n = grid.n_points;
    let total = n * n;
    if field.len() != total || fx.len() != total || fy.len() != total || fxy.len() != total {
        return Err(Error::InvalidArgument(
            "derivative fields inconsistent with the sample field".into(),
        ));
    }
    let h = grid.dx;
    let h2 = h * h;
    let a = HERMITE_BASIS.map(|row| row.map(T::from_f64));
    let cells = n - 1;
    let mut coeffs = Vec::with_capacity(cells * cells);
    for j in 0..cells {
        for i in 0..cells {
            let at = |di: usize, dj: usize| (j + dj) * n + (i + di);
            // corner-data matrix g[r][c]: rows index the u-side basis
            // (f(0,.), f(1,.), fu(0,.), fu(1,.)), columns the v-side
            let g = [
                [field[at(0, 0)], field[at(0, 1)], fy[at(0, 0)] * h, fy[at(0, 1)] * h],
                [field[at(1, 0)], field[at(1, 1)], fy[at(1, 0)] * h, fy[at(1, 1)] * h],
                [fx[at(0, 0)] * h, fx[at(0, 1)] * h, fxy[at(0, 0)] * h2, fxy[at(0, 1)] * h2],
                [fx[at(1, 0)] * h, fx[at(1, 1)] * h, fxy[at(1, 0)] * h2, fxy[at(1, 1)] * h2],
            ];
            // c = A g A^T
            let mut ag = [[T::zero(); 4]; 4];
            for r in 0..4 {
                for cidx in 0..4 {
                    let mut s = T::zero();
                    for k in 0..4 {
                        s = s + a[r][k] * g[k][cidx];
                    }
                    ag[r][cidx] = s;
                }
            }
            let mut cell = [T::zero(); 16];
            for p in 0..4 {
                for q in 0..4 {
                    let mut s = T::zero();
                    for k in 0..4 {
                        s = s + ag[p][k] * a[q][k];
                    }
                    cell[p * 4 + q] = s;
                }
            }
            coeffs.push(cell);
        }
    }
    Ok(BicubicCoeffs {
        origin: [grid.x_min[0], grid.x_min[1]],
        dx: h,
        n_knots: n,
        coeffs,
    })
}

impl<T: Real> BicubicCoeffs<T> {
    /// Double Horner evaluation of one cell at unit-square coordinates.
    #[inline]
    pub fn eval_cell(&self, cell: usize, u: T, v: T) -> T {
        let c = &self.coeffs[cell];
        let mut acc = T::zero();
        for p in (0..4).rev() {
            let row = p * 4;
            let rv = c[row] + v * (c[row + 1] + v * (c[row + 2] + v * c[row + 3]));
            acc = acc * u + rv;
        }
        acc
    }
}

/// Evaluation with per-dimension clamping to the boundary.
pub fn eval_bicubic<T: Real>(coeffs: &BicubicCoeffs<T>, x: &[T]) -> T {
    let n = coeffs.n_knots;
    let (i, tx, _) = locate_axis(coeffs.origin[0], coeffs.dx, n, x[0]);
    let (j, ty, _) = locate_axis(coeffs.origin[1], coeffs.dx, n, x[1]);
    let cell = j * (n - 1) + i;
    coeffs.eval_cell(cell, tx / coeffs.dx, ty / coeffs.dx)
}
