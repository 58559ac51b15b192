//! The multistep solver core: weight tables, merged conditional
//! expectations, the explicit z-step and Picard-implicit y-step, bootstrap
//! of the initial layers, and the full backward sweep.

mod weights;

pub use weights::{scheme_weights, SchemeWeights, MAX_STEPS};

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rayon::prelude::*;

use crate::grid::{
    balance_space_grid_capped, build_time_grid, locate_axis, SpaceGrid, TimeGrid,
    DEFAULT_POINT_CAP,
};
use crate::interp::{
    build_bicubic, build_cubic_spline_axis, d1_line, fd_derivatives_2d, BicubicCoeffs,
    CubicSplineCoeffs, SplineHistory,
};
use crate::problems::{smooth_terminal, smooth_terminal_gradient, Driver, ProblemSpec};
use crate::quadrature::{hermite_rule, TensorRule};
use crate::{Error, Real, Result};

/// Number of grid points handled per parallel work item. Fixed so chunk
/// boundaries, and therefore results, do not depend on the worker count.
const SWEEP_BLOCK: usize = 64;

/// Picard residual above which a non-converged solve is flagged.
const PICARD_WARN: f64 = 1e-6;

// ---------------------------------------------------------------------------
// layer storage and interpolation sets

/// y and z values at every grid point of one time layer.
///
/// Storage is point-major: `y[p*m + mi]` and `z[p*m*d + mi*d + di]` for
/// flat point index p (dimension 0 fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerValues<T> {
    pub layer: usize,
    pub m: usize,
    pub d: usize,
    pub y: Vec<T>,
    pub z: Vec<T>,
}

impl<T: Real> LayerValues<T> {
    pub fn zeros(layer: usize, m: usize, d: usize, points: usize) -> Self {
        LayerValues {
            layer,
            m,
            d,
            y: vec![T::zero(); points * m],
            z: vec![T::zero(); points * m * d],
        }
    }

    pub fn points(&self) -> usize {
        self.y.len() / self.m
    }

    /// Copies one y component out as a contiguous field.
    fn gather_y(&self, mi: usize, out: &mut Vec<T>) {
        out.clear();
        out.extend((0..self.points()).map(|p| self.y[p * self.m + mi]));
    }

    fn gather_z(&self, mi: usize, di: usize, out: &mut Vec<T>) {
        let md = self.m * self.d;
        out.clear();
        out.extend((0..self.points()).map(|p| self.z[p * md + mi * self.d + di]));
    }
}

/// Interpolation coefficient sets of one layer: m splines for y and m*d
/// for z, sharing one knot axis so a point is located once per query.
#[derive(Debug, Clone)]
pub enum LayerInterp<T> {
    D1 {
        y: Vec<CubicSplineCoeffs<T>>,
        z: Vec<CubicSplineCoeffs<T>>,
    },
    D2 {
        y: Vec<BicubicCoeffs<T>>,
        z: Vec<BicubicCoeffs<T>>,
    },
}

impl<T: Real> LayerInterp<T> {
    /// Interpolated y (m values) and z (m*d values) at an arbitrary point,
    /// clamped to the boundary outside the box.
    #[inline]
    pub fn eval_into(&self, x: &[T], y_out: &mut [T], z_out: &mut [T]) {
        match self {
            LayerInterp::D1 { y, z } => {
                let c = &y[0];
                let (j, t, _) = locate_axis(c.origin, c.dx, c.n_knots(), x[0]);
                for (mi, sp) in y.iter().enumerate() {
                    y_out[mi] = sp.eval_interval(j, t);
                }
                for (ci, sp) in z.iter().enumerate() {
                    z_out[ci] = sp.eval_interval(j, t);
                }
            }
            LayerInterp::D2 { y, z } => {
                let c = &y[0];
                let n = c.n_knots;
                let (i, tx, _) = locate_axis(c.origin[0], c.dx, n, x[0]);
                let (jj, ty, _) = locate_axis(c.origin[1], c.dx, n, x[1]);
                let cell = jj * (n - 1) + i;
                let u = tx / c.dx;
                let v = ty / c.dx;
                for (mi, bc) in y.iter().enumerate() {
                    y_out[mi] = bc.eval_cell(cell, u, v);
                }
                for (ci, bc) in z.iter().enumerate() {
                    z_out[ci] = bc.eval_cell(cell, u, v);
                }
            }
        }
    }
}

/// Builds the interpolation sets (one y-set, one z-set) for a layer.
pub fn build_layer_interp<T: Real>(
    values: &LayerValues<T>,
    grid: &SpaceGrid<T>,
) -> Result<LayerInterp<T>> {
    let (m, d) = (values.m, values.d);
    let mut field = Vec::new();
    match d {
        1 => {
            let mut y = Vec::with_capacity(m);
            let mut z = Vec::with_capacity(m);
            for mi in 0..m {
                values.gather_y(mi, &mut field);
                y.push(build_cubic_spline_axis(&field, grid.x_min[0], grid.dx)?);
                values.gather_z(mi, 0, &mut field);
                z.push(build_cubic_spline_axis(&field, grid.x_min[0], grid.dx)?);
            }
            Ok(LayerInterp::D1 { y, z })
        }
        2 => {
            let mut y = Vec::with_capacity(m);
            let mut z = Vec::with_capacity(m * 2);
            for mi in 0..m {
                values.gather_y(mi, &mut field);
                let (fx, fy, fxy) = fd_derivatives_2d(&field, grid)?;
                y.push(build_bicubic(&field, &fx, &fy, &fxy, grid)?);
            }
            for mi in 0..m {
                for di in 0..2 {
                    values.gather_z(mi, di, &mut field);
                    let (fx, fy, fxy) = fd_derivatives_2d(&field, grid)?;
                    z.push(build_bicubic(&field, &fx, &fy, &fxy, grid)?);
                }
            }
            Ok(LayerInterp::D2 { y, z })
        }
        other => Err(Error::InvalidArgument(format!(
            "interpolation supports d in {{1, 2}}, got {other}"
        ))),
    }
}

// ---------------------------------------------------------------------------
// quadrature stencil tables

/// Precomputed per-(layer offset, node) data shared by every base point:
/// the deterministic drift, the diffusion-transformed spatial offset, and
/// the raw Brownian increment used in the f*dW expectation.
struct Stencils<T> {
    d: usize,
    nodes: usize,
    drift: Vec<T>,
    offset: Vec<T>,
    dw: Vec<T>,
}

impl<T: Real> Stencils<T> {
    fn build(
        rule: &TensorRule<T>,
        drift: &[T],
        diffusion: &[T],
        dt: T,
        k_max: usize,
    ) -> Self {
        let d = rule.d;
        let nodes = rule.len();
        let two = T::one() + T::one();
        let mut drift_tab = Vec::with_capacity(k_max * d);
        let mut offset = Vec::with_capacity(k_max * nodes * d);
        let mut dw = Vec::with_capacity(k_max * nodes * d);
        for k in 1..=k_max {
            let kdt = T::from_usize(k).unwrap() * dt;
            let scale = (two * kdt).sqrt();
            for dim in 0..d {
                drift_tab.push(drift[dim] * kdt);
            }
            for q in 0..nodes {
                let a = rule.node(q);
                for dim in 0..d {
                    let mut s = T::zero();
                    for j in 0..=dim {
                        s = s + diffusion[dim * d + j] * a[j];
                    }
                    offset.push(scale * s);
                    dw.push(scale * a[dim]);
                }
            }
        }
        Stencils {
            d,
            nodes,
            drift: drift_tab,
            offset,
            dw,
        }
    }

    #[inline]
    fn drift(&self, k: usize) -> &[T] {
        &self.drift[(k - 1) * self.d..k * self.d]
    }

    #[inline]
    fn offset(&self, k: usize, q: usize) -> &[T] {
        let base = ((k - 1) * self.nodes + q) * self.d;
        &self.offset[base..base + self.d]
    }

    #[inline]
    fn dw(&self, k: usize, q: usize) -> &[T] {
        let base = ((k - 1) * self.nodes + q) * self.d;
        &self.dw[base..base + self.d]
    }
}

// ---------------------------------------------------------------------------
// conditional expectations and the two update steps

/// The merged conditional expectations one grid point needs for a step:
/// E[y at layer n+K_y], E[f] at layers n+1..n+K_y, and E[z], E[f dW^T] at
/// layers n+1..n+K_z.
#[derive(Debug, Clone, PartialEq)]
pub struct CondExpBundle<T> {
    pub m: usize,
    pub d: usize,
    pub ky: usize,
    pub kz: usize,
    pub ey_far: Vec<T>,
    pub ef: Vec<T>,
    pub ez: Vec<T>,
    pub efdw: Vec<T>,
}

struct Scratch<T> {
    x: Vec<T>,
    yhat: Vec<T>,
    zhat: Vec<T>,
    f: Vec<T>,
    rhs: Vec<T>,
}

impl<T: Real> Scratch<T> {
    fn new(m: usize, d: usize) -> Self {
        Scratch {
            x: vec![T::zero(); d],
            yhat: vec![T::zero(); m],
            zhat: vec![T::zero(); m * d],
            f: vec![T::zero(); m],
            rhs: vec![T::zero(); m],
        }
    }
}

struct SweepCtx<'a, T: Real> {
    driver: &'a dyn Driver<T>,
    m: usize,
    d: usize,
    ky: usize,
    kz: usize,
    t_n: T,
    dt: T,
    rule: &'a TensorRule<T>,
    stencils: &'a Stencils<T>,
    gy: &'a [T],
    gz: &'a [T],
    picard_max: usize,
    picard_tol: T,
}

impl<'a, T: Real> SweepCtx<'a, T> {
    #[inline]
    fn bundle_stride(&self) -> usize {
        let md = self.m * self.d;
        self.m + self.ky * self.m + 2 * self.kz * md
    }
}

fn numerical_domain<T: Real>(t: T, x: &[T], y: &[T], z: &[T]) -> Error {
    Error::NumericalDomain {
        t: t.to_f64_lossy(),
        x: x.iter().map(|v| v.to_f64_lossy()).collect(),
        y: y.iter().map(|v| v.to_f64_lossy()).collect(),
        z: z.iter().map(|v| v.to_f64_lossy()).collect(),
    }
}

/// One pass over the L^d stencil per layer offset, accumulating every
/// expectation the point needs. Bundle layout within `out`:
/// `[ey_far (m) | ef (K_y * m) | ez (K_z * m * d) | efdw (K_z * m * d)]`.
/// The node loop order is fixed, making the reduction deterministic.
fn accumulate_bundle<T: Real>(
    ctx: &SweepCtx<T>,
    history: &SplineHistory<LayerInterp<T>>,
    point: &[T],
    out: &mut [T],
    scratch: &mut Scratch<T>,
) -> Result<()> {
    let (m, d) = (ctx.m, ctx.d);
    let md = m * d;
    let ef_base = m;
    let ez_base = m + ctx.ky * m;
    let efdw_base = ez_base + ctx.kz * md;
    for v in out.iter_mut() {
        *v = T::zero();
    }
    let k_max = ctx.ky.max(ctx.kz);
    for j in 1..=k_max {
        let interp = history.get(j - 1);
        let drift = ctx.stencils.drift(j);
        let t_j = ctx.t_n + T::from_usize(j).unwrap() * ctx.dt;
        for q in 0..ctx.stencils.nodes {
            let off = ctx.stencils.offset(j, q);
            for dim in 0..d {
                scratch.x[dim] = point[dim] + drift[dim] + off[dim];
            }
            interp.eval_into(&scratch.x, &mut scratch.yhat, &mut scratch.zhat);
            ctx.driver
                .eval(t_j, &scratch.x, &scratch.yhat, &scratch.zhat, &mut scratch.f);
            for mi in 0..m {
                if !scratch.f[mi].is_finite() {
                    return Err(numerical_domain(t_j, &scratch.x, &scratch.yhat, &scratch.zhat));
                }
            }
            let w = ctx.rule.weights[q];
            if j == ctx.ky {
                for mi in 0..m {
                    out[mi] = out[mi] + w * scratch.yhat[mi];
                }
            }
            if j <= ctx.ky {
                let base = ef_base + (j - 1) * m;
                for mi in 0..m {
                    out[base + mi] = out[base + mi] + w * scratch.f[mi];
                }
            }
            if j <= ctx.kz {
                let zb = ez_base + (j - 1) * md;
                let fb = efdw_base + (j - 1) * md;
                let dw = ctx.stencils.dw(j, q);
                for mi in 0..m {
                    for di in 0..d {
                        let c = mi * d + di;
                        out[zb + c] = out[zb + c] + w * scratch.zhat[c];
                        out[fb + c] = out[fb + c] + w * scratch.f[mi] * dw[di];
                    }
                }
            }
        }
    }
    let norm = ctx.rule.inv_norm();
    for v in out.iter_mut() {
        *v = *v * norm;
    }
    Ok(())
}

/// Merged conditional expectations for one base grid point, using the
/// retained interpolation history.
#[allow(clippy::too_many_arguments)]
pub fn conditional_expectations<T: Real>(
    history: &SplineHistory<LayerInterp<T>>,
    rule: &TensorRule<T>,
    grid: &SpaceGrid<T>,
    i: &[usize],
    weights: &SchemeWeights,
    problem: &ProblemSpec<T>,
    t_n: T,
    dt: T,
) -> Result<CondExpBundle<T>> {
    let k_max = weights.ky.max(weights.kz);
    if history.len() < k_max {
        return Err(Error::InsufficientData(format!(
            "history holds {} layers, the scheme needs {k_max}",
            history.len()
        )));
    }
    let gy = weights.gamma_y_floats::<T>();
    let gz = weights.gamma_z_floats::<T>();
    let stencils = Stencils::build(
        rule,
        &problem.transform.drift,
        &problem.transform.diffusion,
        dt,
        k_max,
    );
    let ctx = SweepCtx {
        driver: problem.driver.as_ref(),
        m: problem.m,
        d: problem.d,
        ky: weights.ky,
        kz: weights.kz,
        t_n,
        dt,
        rule,
        stencils: &stencils,
        gy: &gy,
        gz: &gz,
        picard_max: 1,
        picard_tol: T::zero(),
    };
    let mut scratch = Scratch::new(problem.m, problem.d);
    let mut point = vec![T::zero(); problem.d];
    for dim in 0..problem.d {
        point[dim] = grid.knot(dim, i[dim]);
    }
    let mut out = vec![T::zero(); ctx.bundle_stride()];
    accumulate_bundle(&ctx, history, &point, &mut out, &mut scratch)?;
    let (m, d, ky, kz) = (problem.m, problem.d, weights.ky, weights.kz);
    let md = m * d;
    Ok(CondExpBundle {
        m,
        d,
        ky,
        kz,
        ey_far: out[..m].to_vec(),
        ef: out[m..m + ky * m].to_vec(),
        ez: out[m + ky * m..m + ky * m + kz * md].to_vec(),
        efdw: out[m + ky * m + kz * md..].to_vec(),
    })
}

/// Explicit z-update, the rearranged recursion
/// `z^n = (E[z^{n+1}] + sum_j gamma_j (E[f dW^T] - E[z^{n+j}])) / gamma_0`,
/// applied independently per (m, d) component.
#[inline]
fn z_update_into<T: Real>(ez: &[T], efdw: &[T], gz: &[T], kz: usize, md: usize, out: &mut [T]) {
    for c in 0..md {
        let mut acc = ez[c];
        for j in 1..=kz {
            let idx = (j - 1) * md + c;
            acc = acc + gz[j] * (efdw[idx] - ez[idx]);
        }
        out[c] = acc / gz[0];
    }
}

pub fn step_z<T: Real>(bundle: &CondExpBundle<T>, weights: &SchemeWeights) -> Result<Vec<T>> {
    if bundle.kz != weights.kz {
        return Err(Error::InvalidArgument(
            "bundle and weights disagree on K_z".into(),
        ));
    }
    let md = bundle.m * bundle.d;
    let gz = weights.gamma_z_floats::<T>();
    let mut out = vec![T::zero(); md];
    z_update_into(&bundle.ez, &bundle.efdw, &gz, bundle.kz, md, &mut out);
    Ok(out)
}

/// Picard iteration for the implicit y-update, starting from the far
/// expectation E[y^{n+K_y}]. Returns the iteration count and whether the
/// final change was within the warning threshold.
#[allow(clippy::too_many_arguments)]
#[inline]
fn y_picard_into<T: Real>(
    driver: &dyn Driver<T>,
    t_n: T,
    x: &[T],
    ey: &[T],
    ef: &[T],
    gy: &[T],
    ky: usize,
    dt: T,
    z: &[T],
    p_max: usize,
    tol: T,
    scratch: &mut Scratch<T>,
    out: &mut [T],
) -> Result<(usize, bool)> {
    let m = ey.len();
    let kydt = T::from_usize(ky).unwrap() * dt;
    for mi in 0..m {
        let mut s = T::zero();
        for j in 1..=ky {
            s = s + gy[j] * ef[(j - 1) * m + mi];
        }
        scratch.rhs[mi] = ey[mi] + kydt * s;
        out[mi] = ey[mi];
    }
    let g0 = kydt * gy[0];
    let mut iters = 0;
    let mut delta = T::infinity();
    while iters < p_max {
        driver.eval(t_n, x, out, z, &mut scratch.f);
        delta = T::zero();
        for mi in 0..m {
            if !scratch.f[mi].is_finite() {
                return Err(numerical_domain(t_n, x, out, z));
            }
            let y_new = scratch.rhs[mi] + g0 * scratch.f[mi];
            let change = (y_new - out[mi]).abs();
            if change > delta {
                delta = change;
            }
            out[mi] = y_new;
        }
        iters += 1;
        if delta <= tol {
            break;
        }
    }
    Ok((iters, delta <= T::from_f64(PICARD_WARN)))
}

#[allow(clippy::too_many_arguments)]
pub fn step_y_picard<T: Real>(
    bundle: &CondExpBundle<T>,
    weights: &SchemeWeights,
    z_n: &[T],
    problem: &ProblemSpec<T>,
    t_n: T,
    x: &[T],
    dt: T,
    p_max: usize,
    tol: T,
) -> Result<(Vec<T>, usize)> {
    if bundle.ky != weights.ky {
        return Err(Error::InvalidArgument(
            "bundle and weights disagree on K_y".into(),
        ));
    }
    let gy = weights.gamma_y_floats::<T>();
    let mut scratch = Scratch::new(bundle.m, bundle.d);
    let mut out = vec![T::zero(); bundle.m];
    let (iters, _) = y_picard_into(
        problem.driver.as_ref(),
        t_n,
        x,
        &bundle.ey_far,
        &bundle.ef,
        &gy,
        weights.ky,
        dt,
        z_n,
        p_max,
        tol,
        &mut scratch,
        &mut out,
    )?;
    Ok((out, iters))
}

// ---------------------------------------------------------------------------
// layer sweeps

struct PicardCounters {
    total: AtomicUsize,
    max: AtomicUsize,
    solves: AtomicUsize,
    non_converged: AtomicUsize,
}

impl PicardCounters {
    fn new() -> Self {
        PicardCounters {
            total: AtomicUsize::new(0),
            max: AtomicUsize::new(0),
            solves: AtomicUsize::new(0),
            non_converged: AtomicUsize::new(0),
        }
    }
}

/// Expectation stage: fills the flat bundle array, one stride per point.
fn sweep_bundles<T: Real>(
    ctx: &SweepCtx<T>,
    grid: &SpaceGrid<T>,
    history: &SplineHistory<LayerInterp<T>>,
    bundles: &mut [T],
) -> Result<()> {
    let stride = ctx.bundle_stride();
    bundles
        .par_chunks_mut(stride * SWEEP_BLOCK)
        .enumerate()
        .try_for_each(|(bi, block)| {
            let mut scratch = Scratch::new(ctx.m, ctx.d);
            let mut point = vec![T::zero(); ctx.d];
            for (pi, out) in block.chunks_mut(stride).enumerate() {
                grid.fill_point(bi * SWEEP_BLOCK + pi, &mut point);
                accumulate_bundle(ctx, history, &point, out, &mut scratch)?;
            }
            Ok(())
        })
}

/// Update stage: z first (the y driver needs it), then the Picard solve.
fn sweep_updates<T: Real>(
    ctx: &SweepCtx<T>,
    grid: &SpaceGrid<T>,
    bundles: &[T],
    out: &mut LayerValues<T>,
    counters: &PicardCounters,
) -> Result<()> {
    let stride = ctx.bundle_stride();
    let (m, d) = (ctx.m, ctx.d);
    let md = m * d;
    let ez_base = m + ctx.ky * m;
    let efdw_base = ez_base + ctx.kz * md;
    out.y
        .par_chunks_mut(m * SWEEP_BLOCK)
        .zip(out.z.par_chunks_mut(md * SWEEP_BLOCK))
        .zip(bundles.par_chunks(stride * SWEEP_BLOCK))
        .enumerate()
        .try_for_each(|(bi, ((y_block, z_block), b_block))| {
            let mut scratch = Scratch::new(m, d);
            let mut point = vec![T::zero(); d];
            let mut local_total = 0usize;
            let mut local_max = 0usize;
            let mut local_solves = 0usize;
            let mut local_bad = 0usize;
            for (pi, bundle) in b_block.chunks(stride).enumerate() {
                let p = bi * SWEEP_BLOCK + pi;
                grid.fill_point(p, &mut point);
                let z_out = &mut z_block[pi * md..(pi + 1) * md];
                z_update_into(
                    &bundle[ez_base..ez_base + ctx.kz * md],
                    &bundle[efdw_base..efdw_base + ctx.kz * md],
                    ctx.gz,
                    ctx.kz,
                    md,
                    z_out,
                );
                let y_out = &mut y_block[pi * m..(pi + 1) * m];
                let (iters, converged) = y_picard_into(
                    ctx.driver,
                    ctx.t_n,
                    &point,
                    &bundle[..m],
                    &bundle[m..m + ctx.ky * m],
                    ctx.gy,
                    ctx.ky,
                    ctx.dt,
                    z_out,
                    ctx.picard_max,
                    ctx.picard_tol,
                    &mut scratch,
                    y_out,
                )?;
                local_total += iters;
                local_max = local_max.max(iters);
                local_solves += 1;
                if !converged {
                    local_bad += 1;
                }
            }
            counters.total.fetch_add(local_total, Ordering::Relaxed);
            counters.max.fetch_max(local_max, Ordering::Relaxed);
            counters.solves.fetch_add(local_solves, Ordering::Relaxed);
            counters.non_converged.fetch_add(local_bad, Ordering::Relaxed);
            Ok(())
        })
}

// ---------------------------------------------------------------------------
// terminal layer and bootstrap

/// Terminal-layer values: y from the terminal condition (optionally
/// smoothed around the kink), z from the transposed diffusion matrix
/// applied to a fourth-order finite-difference gradient.
fn terminal_layer<T: Real>(
    problem: &ProblemSpec<T>,
    grid: &SpaceGrid<T>,
    layer: usize,
    smoothing: Option<T>,
) -> Result<LayerValues<T>> {
    let (m, d) = (problem.m, problem.d);
    let points = grid.total_points();
    let mut values = LayerValues::zeros(layer, m, d, points);
    let mut point = vec![T::zero(); d];
    let mut g = vec![T::zero(); m];
    for p in 0..points {
        grid.fill_point(p, &mut point);
        (problem.terminal)(&point, &mut g);
        values.y[p * m..(p + 1) * m].copy_from_slice(&g);
    }

    if let Some(width) = smoothing {
        if let Some(kink) = problem.kink {
            if d == 1 {
                let mut field = Vec::new();
                for mi in 0..m {
                    values.gather_y(mi, &mut field);
                    let component = |x: T| {
                        let mut out = vec![T::zero(); m];
                        (problem.terminal)(&[x], &mut out);
                        out[mi]
                    };
                    let smoothed = smooth_terminal(&component, &field, grid, kink, width)?;
                    for (p, v) in smoothed.into_iter().enumerate() {
                        values.y[p * m + mi] = v;
                    }
                }
            }
        }
    }

    // z = B^T grad(u) componentwise
    let b = &problem.transform.diffusion;
    let md = m * d;
    let mut field = Vec::new();
    match d {
        1 => {
            let mut grad = vec![T::zero(); points];
            for mi in 0..m {
                values.gather_y(mi, &mut field);
                d1_line(&field, grid.dx, &mut grad);
                for p in 0..points {
                    values.z[p * md + mi] = b[0] * grad[p];
                }
                // inside the mollified window the convolution derivative
                // is exact; finite differences there would stall at a
                // (dx/delta)^4 error floor
                if let Some(width) = smoothing {
                    if let Some(kink) = problem.kink {
                        let component = |x: T| {
                            let mut out = vec![T::zero(); m];
                            (problem.terminal)(&[x], &mut out);
                            out[mi]
                        };
                        for (p, gp) in smooth_terminal_gradient(&component, grid, kink, width)? {
                            values.z[p * md + mi] = b[0] * gp;
                        }
                    }
                }
            }
        }
        2 => {
            for mi in 0..m {
                values.gather_y(mi, &mut field);
                let (gx, gy, _) = fd_derivatives_2d(&field, grid)?;
                for p in 0..points {
                    for di in 0..2 {
                        // z_j = sum_k B[k][j] du/dx_k
                        values.z[p * md + mi * d + di] =
                            b[di] * gx[p] + b[2 + di] * gy[p];
                    }
                }
            }
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "terminal gradient supports d in {{1, 2}}, got {other}"
            )))
        }
    }
    Ok(values)
}

struct StageClock {
    interp_s: f64,
    expect_s: f64,
    update_s: f64,
}

impl StageClock {
    fn new() -> Self {
        StageClock {
            interp_s: 0.0,
            expect_s: 0.0,
            update_s: 0.0,
        }
    }
}

/// One backward step with the 1-step scheme (used for fine sub-stepping).
#[allow(clippy::too_many_arguments)]
fn one_step_back<T: Real>(
    problem: &ProblemSpec<T>,
    grid: &SpaceGrid<T>,
    rule: &TensorRule<T>,
    prev: &LayerValues<T>,
    t_n: T,
    dt: T,
    picard_max: usize,
    picard_tol: T,
    counters: &PicardCounters,
    clock: &mut StageClock,
    layer: usize,
) -> Result<LayerValues<T>> {
    let w1 = scheme_weights(1, 1)?;
    let gy = w1.gamma_y_floats::<T>();
    let gz = w1.gamma_z_floats::<T>();
    let stencils = Stencils::build(
        rule,
        &problem.transform.drift,
        &problem.transform.diffusion,
        dt,
        1,
    );
    let ctx = SweepCtx {
        driver: problem.driver.as_ref(),
        m: problem.m,
        d: problem.d,
        ky: 1,
        kz: 1,
        t_n,
        dt,
        rule,
        stencils: &stencils,
        gy: &gy,
        gz: &gz,
        picard_max,
        picard_tol,
    };
    let t0 = Instant::now();
    let mut history = SplineHistory::new(1)?;
    history.push(build_layer_interp(prev, grid)?);
    clock.interp_s += t0.elapsed().as_secs_f64();

    let points = grid.total_points();
    let mut bundles = vec![T::zero(); points * ctx.bundle_stride()];
    let t1 = Instant::now();
    sweep_bundles(&ctx, grid, &history, &mut bundles)?;
    clock.expect_s += t1.elapsed().as_secs_f64();

    let mut out = LayerValues::zeros(layer, problem.m, problem.d, points);
    let t2 = Instant::now();
    sweep_updates(&ctx, grid, &bundles, &mut out, counters)?;
    clock.update_s += t2.elapsed().as_secs_f64();
    Ok(out)
}

/// Start-up layers N-K+1..N: the terminal layer itself plus K-1 layers
/// produced by the 1-step scheme with fine sub-steps of size dt^2 (the
/// squared coarse step), small enough that the start-up error sits below
/// the scheme's own order for the step counts used here.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_initial_layers<T: Real>(
    problem: &ProblemSpec<T>,
    tg: &TimeGrid<T>,
    grid: &SpaceGrid<T>,
    k: usize,
    rule: &TensorRule<T>,
    picard_max: usize,
    picard_tol: T,
    smoothing: Option<T>,
    fine_steps_cap: usize,
    refine: usize,
) -> Result<Vec<LayerValues<T>>> {
    bootstrap_impl(
        problem,
        tg,
        grid,
        k,
        rule,
        picard_max,
        picard_tol,
        smoothing,
        fine_steps_cap,
        refine,
        &PicardCounters::new(),
        &mut StageClock::new(),
    )
}

#[allow(clippy::too_many_arguments)]
fn bootstrap_impl<T: Real>(
    problem: &ProblemSpec<T>,
    tg: &TimeGrid<T>,
    grid: &SpaceGrid<T>,
    k: usize,
    rule: &TensorRule<T>,
    picard_max: usize,
    picard_tol: T,
    smoothing: Option<T>,
    fine_steps_cap: usize,
    refine: usize,
    counters: &PicardCounters,
    clock: &mut StageClock,
) -> Result<Vec<LayerValues<T>>> {
    let n = tg.n_steps;
    if k == 0 || n < k {
        return Err(Error::InvalidArgument(format!(
            "need at least K = {k} time steps, got {n}"
        )));
    }
    let terminal = terminal_layer(problem, grid, n, smoothing)?;
    let mut layers = vec![terminal];
    if k == 1 {
        return Ok(layers);
    }
    let dt = tg.dt;
    let fine_per_interval = (T::one() / dt)
        .ceil()
        .to_usize()
        .ok_or_else(|| Error::ResourceLimit("fine step count overflow".into()))?
        .max(1)
        * refine.max(1);
    let total_fine = fine_per_interval * (k - 1);
    if total_fine > fine_steps_cap {
        return Err(Error::ResourceLimit(format!(
            "bootstrap needs {total_fine} fine steps, above the cap of {fine_steps_cap}"
        )));
    }
    let delta = dt / T::from_usize(fine_per_interval).unwrap();
    for back in 1..k {
        let layer = n - back;
        let t_right = tg.time(layer + 1);
        let mut current = layers.last().unwrap().clone();
        for s in 0..fine_per_interval {
            let t_n = t_right - T::from_usize(s + 1).unwrap() * delta;
            current = one_step_back(
                problem,
                grid,
                rule,
                &current,
                t_n,
                delta,
                picard_max,
                picard_tol,
                counters,
                clock,
                layer,
            )
            .map_err(|e| e.at_layer(layer))?;
        }
        current.layer = layer;
        layers.push(current);
    }
    layers.reverse();
    Ok(layers)
}

// ---------------------------------------------------------------------------
// full backward solve

#[derive(Debug, Clone)]
pub struct SolverConfig<T> {
    pub ky: usize,
    pub kz: usize,
    pub n_steps: usize,
    /// Gauss-Hermite points per dimension.
    pub gh_points: usize,
    pub picard_max: usize,
    pub picard_tol: T,
    /// Interpolation order r in the grid-balancing rule.
    pub interp_order: u32,
    /// Explicit per-dimension interval count; None balances against dt.
    pub grid_intervals: Option<usize>,
    pub point_cap: usize,
    /// Overrides the problem's smoothing default when set.
    pub smoothing: Option<bool>,
    /// Absolute mollifier half-width; None derives it from the grid as
    /// `SMOOTHING_WIDTH_CELLS * dx`.
    pub smoothing_width: Option<T>,
    /// Replaces the problem domain in every dimension when set.
    pub domain_override: Option<(T, T)>,
    /// Evaluation point for (y_0, z_0); defaults to the problem's.
    pub eval_point: Option<Vec<T>>,
    pub fine_steps_cap: usize,
    /// Extra subdivision factor on the bootstrap fine step; 1 keeps the
    /// default dt^2 sub-step.
    pub bootstrap_refine: usize,
}

impl<T: Real> SolverConfig<T> {
    pub fn new(ky: usize, kz: usize, n_steps: usize) -> Self {
        SolverConfig {
            ky,
            kz,
            n_steps,
            gh_points: 32,
            picard_max: 30,
            picard_tol: T::from_f64(1e-14),
            interp_order: 4,
            grid_intervals: None,
            point_cap: DEFAULT_POINT_CAP,
            smoothing: None,
            smoothing_width: None,
            domain_override: None,
            eval_point: None,
            fine_steps_cap: 1 << 20,
            bootstrap_refine: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTimings {
    pub total_s: f64,
    pub interp_s: f64,
    pub expect_s: f64,
    pub update_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PicardStats {
    pub solves: usize,
    pub total_iterations: usize,
    pub max_iterations: usize,
    pub non_converged: usize,
}

impl PicardStats {
    pub fn average(&self) -> f64 {
        if self.solves == 0 {
            0.0
        } else {
            self.total_iterations as f64 / self.solves as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult<T> {
    pub y0: Vec<T>,
    pub z0: Vec<T>,
    /// Grid multi-index the solution was read at.
    pub eval_index: Vec<usize>,
    /// Intervals per dimension of the space grid used.
    pub n_intervals: usize,
    pub timings: StageTimings,
    pub picard: PicardStats,
    /// Interpolation sets built during the main sweep (2 per new layer).
    pub main_layer_builds: usize,
}

/// Full backward recursion from the terminal layer to layer 0.
pub fn solve_backward<T: Real>(
    problem: &ProblemSpec<T>,
    config: &SolverConfig<T>,
) -> Result<SolveResult<T>> {
    let k_max = config.ky.max(config.kz);
    if config.ky == 0 || config.ky > MAX_STEPS || config.kz == 0 || config.kz > MAX_STEPS {
        return Err(Error::InvalidArgument(format!(
            "step counts must be in 1..={MAX_STEPS}, got K_y={}, K_z={}",
            config.ky, config.kz
        )));
    }
    if config.n_steps < k_max {
        return Err(Error::InvalidArgument(format!(
            "need at least {k_max} time steps for a {k_max}-step scheme, got {}",
            config.n_steps
        )));
    }
    let start = Instant::now();
    let tg = build_time_grid(T::zero(), problem.horizon, config.n_steps)?;
    let domain: Vec<(T, T)> = match config.domain_override {
        Some((lo, hi)) => vec![(lo, hi); problem.d],
        None => problem.domain.clone(),
    };
    let grid = match config.grid_intervals {
        Some(intervals) => {
            if intervals < 4 {
                return Err(Error::InvalidArgument(
                    "need at least 4 grid intervals".into(),
                ));
            }
            let points = (intervals + 1)
                .checked_pow(problem.d as u32)
                .unwrap_or(usize::MAX);
            if points > config.point_cap {
                return Err(Error::ResourceLimit(format!(
                    "grid of M = {intervals} intervals per dimension needs {points} points, \
                     above the cap of {} points",
                    config.point_cap
                )));
            }
            SpaceGrid::new(&domain, intervals + 1)?
        }
        None => balance_space_grid_capped(
            tg.dt,
            config.ky,
            config.kz,
            config.interp_order,
            &domain,
            config.point_cap,
        )?,
    };
    let smoothing = if config.smoothing.unwrap_or(problem.smoothing) {
        Some(config.smoothing_width.unwrap_or_else(|| {
            T::from_f64(crate::problems::SMOOTHING_WIDTH_CELLS) * grid.dx
        }))
    } else {
        None
    };
    let rule = hermite_rule::<T>(config.gh_points)?;
    let tensor = TensorRule::new(&rule, problem.d)?;
    let weights = scheme_weights(config.ky, config.kz)?;
    let gy = weights.gamma_y_floats::<T>();
    let gz = weights.gamma_z_floats::<T>();

    let counters = PicardCounters::new();
    let mut clock = StageClock::new();

    let start_layers = bootstrap_impl(
        problem,
        &tg,
        &grid,
        k_max,
        &tensor,
        config.picard_max,
        config.picard_tol,
        smoothing,
        config.fine_steps_cap,
        config.bootstrap_refine,
        &counters,
        &mut clock,
    )?;

    // History slot j-1 must hold layer n+j during the step at n, so the
    // start layers are pushed oldest-in-time first (they were computed in
    // that order: terminal, then each bootstrapped layer).
    let mut history = SplineHistory::new(k_max)?;
    let mut main_builds = 0usize;
    let t0 = Instant::now();
    for lv in start_layers.iter().rev() {
        history.push(build_layer_interp(lv, &grid)?);
    }
    clock.interp_s += t0.elapsed().as_secs_f64();

    let stencils = Stencils::build(
        &tensor,
        &problem.transform.drift,
        &problem.transform.diffusion,
        tg.dt,
        k_max,
    );
    let points = grid.total_points();
    let stride = problem.m + config.ky * problem.m + 2 * config.kz * problem.m * problem.d;
    let mut bundles = vec![T::zero(); points * stride];
    let mut layer_values = LayerValues::zeros(0, problem.m, problem.d, points);

    for n in (0..=config.n_steps - k_max).rev() {
        let ctx = SweepCtx {
            driver: problem.driver.as_ref(),
            m: problem.m,
            d: problem.d,
            ky: config.ky,
            kz: config.kz,
            t_n: tg.time(n),
            dt: tg.dt,
            rule: &tensor,
            stencils: &stencils,
            gy: &gy,
            gz: &gz,
            picard_max: config.picard_max,
            picard_tol: config.picard_tol,
        };
        let t1 = Instant::now();
        sweep_bundles(&ctx, &grid, &history, &mut bundles).map_err(|e| e.at_layer(n))?;
        clock.expect_s += t1.elapsed().as_secs_f64();

        layer_values.layer = n;
        let t2 = Instant::now();
        sweep_updates(&ctx, &grid, &bundles, &mut layer_values, &counters)
            .map_err(|e| e.at_layer(n))?;
        clock.update_s += t2.elapsed().as_secs_f64();

        if n > 0 {
            let t3 = Instant::now();
            history.push(build_layer_interp(&layer_values, &grid).map_err(|e| e.at_layer(n))?);
            clock.interp_s += t3.elapsed().as_secs_f64();
            main_builds += 2;
        }
    }
    let layer0 = layer_values;

    let eval_point = config.eval_point.as_ref().unwrap_or(&problem.eval_point);
    let eval_index = grid.nearest_index(eval_point);
    let p = grid.flat_index(&eval_index);
    let (m, d) = (problem.m, problem.d);
    let y0 = layer0.y[p * m..(p + 1) * m].to_vec();
    let z0 = layer0.z[p * m * d..(p + 1) * m * d].to_vec();

    Ok(SolveResult {
        y0,
        z0,
        eval_index,
        n_intervals: grid.n_intervals(),
        timings: StageTimings {
            total_s: start.elapsed().as_secs_f64(),
            interp_s: clock.interp_s,
            expect_s: clock.expect_s,
            update_s: clock.update_s,
        },
        picard: PicardStats {
            solves: counters.solves.load(Ordering::Relaxed),
            total_iterations: counters.total.load(Ordering::Relaxed),
            max_iterations: counters.max.load(Ordering::Relaxed),
            non_converged: counters.non_converged.load(Ordering::Relaxed),
        },
        main_layer_builds: main_builds,
    })
}

#[cfg(test)]
mod tests;
