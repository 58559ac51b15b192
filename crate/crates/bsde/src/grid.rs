//! Uniform time and space discretizations, the step-balancing rule that
//! ties the space step to the time step, and O(d) point localization.

use crate::{Error, Real, Result};

/// Uniform partition of `[t0, t_end]` into `n_steps` intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid<T> {
    pub t0: T,
    pub t_end: T,
    pub n_steps: usize,
    pub dt: T,
}

impl<T: Real> TimeGrid<T> {
    /// Layer time `t_n = t0 + n*dt`.
    #[inline]
    pub fn time(&self, n: usize) -> T {
        self.t0 + T::from_usize(n).unwrap() * self.dt
    }
}

pub fn build_time_grid<T: Real>(t0: T, t_end: T, n_steps: usize) -> Result<TimeGrid<T>> {
    if !(t_end > t0) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got [{t0}, {t_end}]"
        )));
    }
    if n_steps == 0 {
        return Err(Error::InvalidArgument("need at least one time step".into()));
    }
    let dt = (t_end - t0) / T::from_usize(n_steps).unwrap();
    Ok(TimeGrid {
        t0,
        t_end,
        n_steps,
        dt,
    })
}

/// Uniform tensor grid over a truncated box, same spacing in every dimension.
///
/// `n_points` counts knots per dimension; the interval count `n_points - 1`
/// is what convergence tables conventionally report as M.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceGrid<T> {
    pub d: usize,
    pub x_min: Vec<T>,
    pub x_max: Vec<T>,
    pub n_points: usize,
    pub dx: T,
}

/// Default cap on total grid points, keeping layer storage in the
/// low-gigabyte range for d = 2.
pub const DEFAULT_POINT_CAP: usize = 1 << 28;

impl<T: Real> SpaceGrid<T> {
    pub fn new(domain: &[(T, T)], n_points: usize) -> Result<Self> {
        if domain.is_empty() {
            return Err(Error::InvalidArgument("empty domain".into()));
        }
        if n_points < 2 {
            return Err(Error::InvalidArgument(
                "space grid needs at least two knots per dimension".into(),
            ));
        }
        let width = domain[0].1 - domain[0].0;
        for &(lo, hi) in domain {
            if !(hi > lo) {
                return Err(Error::InvalidArgument(format!(
                    "domain bounds out of order: [{lo}, {hi}]"
                )));
            }
            if ((hi - lo) - width).abs() > T::epsilon() * width.abs() * T::from_f64(8.0) {
                return Err(Error::InvalidArgument(
                    "all dimensions must share the same width (uniform spacing)".into(),
                ));
            }
        }
        let dx = width / T::from_usize(n_points - 1).unwrap();
        Ok(SpaceGrid {
            d: domain.len(),
            x_min: domain.iter().map(|p| p.0).collect(),
            x_max: domain.iter().map(|p| p.1).collect(),
            n_points,
            dx,
        })
    }

    #[inline]
    pub fn n_intervals(&self) -> usize {
        self.n_points - 1
    }

    #[inline]
    pub fn total_points(&self) -> usize {
        self.n_points.pow(self.d as u32)
    }

    /// Knot coordinate `x_min[dim] + i*dx`.
    #[inline]
    pub fn knot(&self, dim: usize, i: usize) -> T {
        self.x_min[dim] + T::from_usize(i).unwrap() * self.dx
    }

    /// Flat index of a multi-index; dimension 0 varies fastest.
    #[inline]
    pub fn flat_index(&self, multi: &[usize]) -> usize {
        let mut flat = 0;
        for dim in (0..self.d).rev() {
            flat = flat * self.n_points + multi[dim];
        }
        flat
    }

    /// Inverse of `flat_index`.
    #[inline]
    pub fn multi_index(&self, mut flat: usize, out: &mut [usize]) {
        for dim in 0..self.d {
            out[dim] = flat % self.n_points;
            flat /= self.n_points;
        }
    }

    /// Fills `out` with the coordinates of the knot at `flat`.
    #[inline]
    pub fn fill_point(&self, mut flat: usize, out: &mut [T]) {
        for dim in 0..self.d {
            out[dim] = self.knot(dim, flat % self.n_points);
            flat /= self.n_points;
        }
    }

    /// Multi-index of the knot closest to `x`, clamped into the grid.
    pub fn nearest_index(&self, x: &[T]) -> Vec<usize> {
        (0..self.d)
            .map(|dim| {
                let f = ((x[dim] - self.x_min[dim]) / self.dx).round();
                let i = if f < T::zero() {
                    0
                } else {
                    f.to_usize().unwrap_or(usize::MAX)
                };
                i.min(self.n_points - 1)
            })
            .collect()
    }
}

/// Left-boundary cell indices of a point, with per-dimension clamp flags
/// for coordinates outside the box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellLocation {
    pub index: Vec<usize>,
    pub clamped: Vec<bool>,
}

/// One-dimensional localization: cell index, offset from the cell's left
/// knot, and whether the coordinate fell outside the grid.
///
/// A coordinate exactly on a knot lands in the cell whose left boundary is
/// that knot, except the last knot which stays in cell `n_points - 2`.
#[inline]
pub(crate) fn locate_axis<T: Real>(x_min: T, dx: T, n_points: usize, x: T) -> (usize, T, bool) {
    let last_cell = n_points - 2;
    let f = (x - x_min) / dx;
    if f < T::zero() {
        return (0, T::zero(), true);
    }
    let i = match f.floor().to_usize() {
        Some(i) => i,
        None => return (last_cell, dx, true),
    };
    if i > last_cell {
        let hi = x_min + T::from_usize(n_points - 1).unwrap() * dx;
        if x > hi {
            return (last_cell, dx, true);
        }
        return (last_cell, dx, false);
    }
    (i, x - (x_min + T::from_usize(i).unwrap() * dx), false)
}

/// Per-dimension truncation of `(x - x_min)/dx`; no search loop.
pub fn locate_cell<T: Real>(grid: &SpaceGrid<T>, x: &[T]) -> CellLocation {
    assert_eq!(x.len(), grid.d, "point dimension mismatch");
    let mut index = Vec::with_capacity(grid.d);
    let mut clamped = Vec::with_capacity(grid.d);
    for dim in 0..grid.d {
        let (i, _, c) = locate_axis(grid.x_min[dim], grid.dx, grid.n_points, x[dim]);
        index.push(i);
        clamped.push(c);
    }
    CellLocation { index, clamped }
}

/// Chooses the space step so interpolation error matches the scheme's
/// temporal order: `dx = dt^((q+1)/r)` with `q = min(K_y + 1, K_z)`.
///
/// The interval count is the ceiling of `width/dx`, rounded up to even so
/// the domain centre stays a knot; `dx` is then recomputed from the count.
pub fn balance_space_grid<T: Real>(
    dt: T,
    ky: usize,
    kz: usize,
    r: u32,
    domain: &[(T, T)],
) -> Result<SpaceGrid<T>> {
    balance_space_grid_capped(dt, ky, kz, r, domain, DEFAULT_POINT_CAP)
}

pub fn balance_space_grid_capped<T: Real>(
    dt: T,
    ky: usize,
    kz: usize,
    r: u32,
    domain: &[(T, T)],
    point_cap: usize,
) -> Result<SpaceGrid<T>> {
    if r == 0 {
        return Err(Error::InvalidArgument(
            "interpolation order must be at least 1".into(),
        ));
    }
    if !(dt > T::zero()) {
        return Err(Error::InvalidArgument("time step must be positive".into()));
    }
    if ky == 0 || kz == 0 {
        return Err(Error::InvalidArgument("step counts must be positive".into()));
    }
    if domain.is_empty() {
        return Err(Error::InvalidArgument("empty domain".into()));
    }
    let q = (ky + 1).min(kz);
    let exponent = T::from_usize(q + 1).unwrap() / T::from_u32(r).unwrap();
    let dx_target = dt.powf(exponent);
    let width = domain[0].1 - domain[0].0;
    let raw = (width / dx_target).ceil();
    let mut intervals = raw
        .to_usize()
        .ok_or_else(|| Error::ResourceLimit(format!("interval count {raw} not representable")))?;
    if intervals % 2 == 1 {
        intervals += 1;
    }
    intervals = intervals.max(4);
    let n_points = intervals + 1;
    let total = n_points
        .checked_pow(domain.len() as u32)
        .unwrap_or(usize::MAX);
    if total > point_cap {
        return Err(Error::ResourceLimit(format!(
            "balanced grid needs M = {intervals} intervals per dimension \
             ({total} points total), above the cap of {point_cap} points"
        )));
    }
    SpaceGrid::new(domain, n_points)
}
