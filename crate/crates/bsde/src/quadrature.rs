//! Gauss-Hermite quadrature (physicists' convention, weight exp(-x^2)),
//! tensorization to d dimensions, shifted evaluation stencils, and the
//! normalized expectation sum.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use crate::{Error, Real, Result};
use crate::grid::SpaceGrid;

pub const MAX_RULE_SIZE: usize = 64;

/// One-dimensional rule: roots of the degree-L Hermite polynomial and the
/// matching weights. Weights sum to sqrt(pi).
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteRule<T> {
    pub l: usize,
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

fn hermite_cache() -> &'static Mutex<HashMap<usize, (Vec<f64>, Vec<f64>)>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, (Vec<f64>, Vec<f64>)>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Newton iteration on the normalized three-term recurrence
/// p_j = z*sqrt(2/j)*p_{j-1} - sqrt((j-1)/j)*p_{j-2}, starting from
/// pi^(-1/4), with the usual asymptotic initial guesses for the roots.
fn compute_hermite_f64(n: usize) -> (Vec<f64>, Vec<f64>) {
    const EPS: f64 = 1e-14;
    const MAX_IT: usize = 200;
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut nodes = vec![0.0f64; n];
    let mut weights = vec![0.0f64; n];
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => {
                let a = (2 * n + 1) as f64;
                a.sqrt() - 1.85575 * a.powf(-1.0 / 6.0)
            }
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[n - 1],
            3 => 1.91 * z - 0.91 * nodes[n - 2],
            _ => 2.0 * z - nodes[n - i + 1],
        };
        let mut pp = 0.0;
        for _ in 0..MAX_IT {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / j as f64).sqrt() * p2 - ((j - 1) as f64 / j as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= EPS {
                break;
            }
        }
        // largest root first; mirror onto the negative half
        nodes[n - 1 - i] = z;
        nodes[i] = -z;
        let w = 2.0 / (pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

pub fn hermite_rule<T: Real>(l: usize) -> Result<HermiteRule<T>> {
    if l == 0 || l > MAX_RULE_SIZE {
        return Err(Error::InvalidArgument(format!(
            "Hermite rule size must be in 1..={MAX_RULE_SIZE}, got {l}"
        )));
    }
    let (nodes, weights) = {
        let mut cache = hermite_cache().lock().unwrap();
        cache.entry(l).or_insert_with(|| compute_hermite_f64(l)).clone()
    };
    Ok(HermiteRule {
        l,
        nodes: nodes.into_iter().map(T::from_f64).collect(),
        weights: weights.into_iter().map(T::from_f64).collect(),
    })
}

/// Tensor product of a 1-D rule over d dimensions. Node k occupies
/// `nodes[k*d..(k+1)*d]`, dimension 0 varying fastest; weights are the
/// per-dimension products and sum to pi^(d/2).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRule<T> {
    pub d: usize,
    pub l: usize,
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
    inv_norm: T,
}

impl<T: Real> TensorRule<T> {
    pub fn new(rule: &HermiteRule<T>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        let len = rule
            .l
            .checked_pow(d as u32)
            .ok_or_else(|| Error::ResourceLimit("tensor rule too large".into()))?;
        let mut nodes = Vec::with_capacity(len * d);
        let mut weights = Vec::with_capacity(len);
        let mut idx = vec![0usize; d];
        for _ in 0..len {
            let mut w = T::one();
            for dim in 0..d {
                nodes.push(rule.nodes[idx[dim]]);
                w = w * rule.weights[idx[dim]];
            }
            weights.push(w);
            for dim in 0..d {
                idx[dim] += 1;
                if idx[dim] < rule.l {
                    break;
                }
                idx[dim] = 0;
            }
        }
        let inv_norm = T::pi().powf(-T::from_usize(d).unwrap() / (T::one() + T::one()));
        Ok(TensorRule {
            d,
            l: rule.l,
            nodes,
            weights,
            inv_norm,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn node(&self, k: usize) -> &[T] {
        &self.nodes[k * self.d..(k + 1) * self.d]
    }

    /// 1 / pi^(d/2), the Gaussian normalization of the expectation sum.
    #[inline]
    pub fn inv_norm(&self) -> T {
        self.inv_norm
    }
}

/// pi^(-d/2) * sum of weight * value, the quadrature form of the
/// conditional expectation. Summation order is the fixed node order.
pub fn expectation<T: Real>(values: &[T], rule: &TensorRule<T>) -> Result<T> {
    if values.len() != rule.len() {
        return Err(Error::InvalidArgument(format!(
            "expected {} sampled values, got {}",
            rule.len(),
            values.len()
        )));
    }
    let mut acc = T::zero();
    for (v, w) in values.iter().zip(&rule.weights) {
        acc = acc + *w * *v;
    }
    Ok(acc * rule.inv_norm)
}

/// Gauss-Legendre nodes and weights on [-1, 1] (Newton iteration on the
/// Legendre three-term recurrence). Used where a compactly supported
/// integrand must be integrated exactly, e.g. the terminal mollifier.
pub fn legendre_rule(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 || n > MAX_RULE_SIZE {
        return Err(Error::InvalidArgument(format!(
            "Legendre rule size must be in 1..={MAX_RULE_SIZE}, got {n}"
        )));
    }
    let mut x = vec![0.0f64; n];
    let mut w = vec![0.0f64; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z =
            (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = (((2 * j + 1) as f64) * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    Ok((x, w))
}

/// Quadrature evaluation points for one base knot and layer offset k:
/// `x_i + sqrt(2*k*dt) * a` for every tensor node `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedStencil<T> {
    pub base: Vec<usize>,
    pub k: usize,
    pub shift: T,
    pub points: Vec<T>,
}

impl<T: Real> ShiftedStencil<T> {
    #[inline]
    pub fn point(&self, idx: usize) -> &[T] {
        let d = self.base.len();
        &self.points[idx * d..(idx + 1) * d]
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn shifted_points<T: Real>(
    grid: &SpaceGrid<T>,
    i: &[usize],
    k: usize,
    dt: T,
    rule: &TensorRule<T>,
) -> Result<ShiftedStencil<T>> {
    if k == 0 {
        return Err(Error::InvalidArgument("layer offset must be at least 1".into()));
    }
    if i.len() != grid.d || rule.d != grid.d {
        return Err(Error::InvalidArgument("dimension mismatch".into()));
    }
    let two = T::one() + T::one();
    let shift = (two * T::from_usize(k).unwrap() * dt).sqrt();
    let mut points = Vec::with_capacity(rule.len() * grid.d);
    for node in 0..rule.len() {
        let a = rule.node(node);
        for dim in 0..grid.d {
            points.push(grid.knot(dim, i[dim]) + shift * a[dim]);
        }
    }
    Ok(ShiftedStencil {
        base: i.to_vec(),
        k,
        shift,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQRT_PI: f64 = 1.772_453_850_905_516;

    #[test]
    fn degree_one_and_two_rules() {
        let r: HermiteRule<f64> = hermite_rule(1).unwrap();
        assert!(r.nodes[0].abs() < 1e-15);
        assert!((r.weights[0] - SQRT_PI).abs() < 1e-14);

        // roots of 4x^2 - 2 at +-1/sqrt(2), equal weights sqrt(pi)/2
        let r: HermiteRule<f64> = hermite_rule(2).unwrap();
        let s = 0.5f64.sqrt();
        assert!((r.nodes[0] + s).abs() < 1e-14);
        assert!((r.nodes[1] - s).abs() < 1e-14);
        assert!((r.weights[0] - SQRT_PI / 2.0).abs() < 1e-14);
        assert!((r.weights[1] - SQRT_PI / 2.0).abs() < 1e-14);
    }

    #[test]
    fn rule_normalization_symmetry_positivity() {
        for l in 1..=MAX_RULE_SIZE {
            let r: HermiteRule<f64> = hermite_rule(l).unwrap();
            let sum: f64 = r.weights.iter().sum();
            assert!((sum - SQRT_PI).abs() / SQRT_PI < 1e-12, "L={l}");
            for j in 0..l {
                assert!(r.weights[j] > 0.0, "L={l}");
                assert!((r.nodes[j] + r.nodes[l - 1 - j]).abs() < 1e-13, "L={l}");
            }
            for j in 1..l {
                assert!(r.nodes[j] > r.nodes[j - 1], "L={l} nodes not sorted");
            }
        }
        assert!(hermite_rule::<f64>(0).is_err());
        assert!(hermite_rule::<f64>(65).is_err());
    }

    // integral of x^(2m) exp(-x^2) = sqrt(pi) (2m-1)!! / 2^m
    #[test]
    fn moment_exactness_up_to_degree_2l_minus_1() {
        for l in 1..=8usize {
            let r: HermiteRule<f64> = hermite_rule(l).unwrap();
            for p in 0..2 * l {
                let got: f64 = r
                    .nodes
                    .iter()
                    .zip(&r.weights)
                    .map(|(x, w)| w * x.powi(p as i32))
                    .sum();
                let want = if p % 2 == 1 {
                    0.0
                } else {
                    let m = p / 2;
                    let mut dfac = 1.0f64;
                    let mut k = 2 * m as i64 - 1;
                    while k > 1 {
                        dfac *= k as f64;
                        k -= 2;
                    }
                    SQRT_PI * dfac / 2f64.powi(m as i32)
                };
                let scale = want.abs().max(SQRT_PI);
                assert!((got - want).abs() / scale < 1e-12, "L={l} p={p}");
            }
        }
    }

    #[test]
    fn tensor_weights_sum_to_pi_half_d() {
        for d in 1..=2usize {
            let r: HermiteRule<f64> = hermite_rule(8).unwrap();
            let t = TensorRule::new(&r, d).unwrap();
            assert_eq!(t.len(), 8usize.pow(d as u32));
            let sum: f64 = t.weights.iter().sum();
            let want = std::f64::consts::PI.powf(d as f64 / 2.0);
            assert!((sum - want).abs() / want < 1e-10);
        }
    }

    #[test]
    fn expectation_examples() {
        let grid = SpaceGrid::new(&[(-4.0, 4.0)], 9).unwrap();
        let r: HermiteRule<f64> = hermite_rule(16).unwrap();
        let t = TensorRule::new(&r, 1).unwrap();

        let constant = vec![3.25f64; t.len()];
        assert!((expectation(&constant, &t).unwrap() - 3.25).abs() < 1e-13);

        // E[f(x_i + sqrt(2 k dt) a)] for f(x) = x is x_i, for f(x) = x^2
        // it is x_i^2 + k*dt
        let (k, dt, xi) = (3usize, 0.125f64, 1.0f64);
        let st = shifted_points(&grid, &[5], k, dt, &t).unwrap();
        assert_eq!(grid.knot(0, 5), xi);
        let linear: Vec<f64> = (0..t.len()).map(|q| st.point(q)[0]).collect();
        assert!((expectation(&linear, &t).unwrap() - xi).abs() < 1e-13);
        let square: Vec<f64> = (0..t.len()).map(|q| st.point(q)[0].powi(2)).collect();
        let want = xi * xi + k as f64 * dt;
        assert!((expectation(&square, &t).unwrap() - want).abs() < 1e-12);

        assert!(expectation(&constant[..3], &t).is_err());
    }

    // E[dW dW^T] over the stencil is k*dt*Identity
    #[test]
    fn brownian_increment_covariance() {
        let (k, dt) = (2usize, 0.25f64);
        let scale = (2.0 * k as f64 * dt).sqrt();
        for d in 1..=2usize {
            let r: HermiteRule<f64> = hermite_rule(8).unwrap();
            let t = TensorRule::new(&r, d).unwrap();
            for a in 0..d {
                for b in 0..d {
                    let vals: Vec<f64> = (0..t.len())
                        .map(|q| {
                            let n = t.node(q);
                            (scale * n[a]) * (scale * n[b])
                        })
                        .collect();
                    let got = expectation(&vals, &t).unwrap();
                    let want = if a == b { k as f64 * dt } else { 0.0 };
                    assert!((got - want).abs() < 1e-10, "d={d} ({a},{b})");
                }
            }
        }
    }

    #[test]
    fn stencil_shapes() {
        let grid = SpaceGrid::new(&[(-8.0, 8.0), (-8.0, 8.0)], 17).unwrap();
        let r: HermiteRule<f64> = hermite_rule(8).unwrap();
        let t = TensorRule::new(&r, 2).unwrap();
        let st = shifted_points(&grid, &[8, 8], 1, 0.5, &t).unwrap();
        assert_eq!(st.len(), 64);

        // k = 4, dt = 1/4 gives shift sqrt(2)
        let g1 = SpaceGrid::new(&[(-8.0, 8.0)], 17).unwrap();
        let r1: HermiteRule<f64> = hermite_rule(3).unwrap();
        let t1 = TensorRule::new(&r1, 1).unwrap();
        let st = shifted_points(&g1, &[8], 4, 0.25, &t1).unwrap();
        assert!((st.shift - 2f64.sqrt()).abs() < 1e-15);
        // odd rule keeps the base point itself
        assert!((st.point(1)[0] - 0.0).abs() < 1e-15);
        // symmetric pairing about the base
        assert!((st.point(0)[0] + st.point(2)[0]).abs() < 1e-13);

        assert!(shifted_points(&g1, &[8], 0, 0.25, &t1).is_err());
    }

    #[test]
    fn single_precision_rule_is_consistent() {
        let r: HermiteRule<f32> = hermite_rule(4).unwrap();
        let sum: f32 = r.weights.iter().sum();
        assert!((sum - SQRT_PI as f32).abs() < 1e-6);
    }
}
