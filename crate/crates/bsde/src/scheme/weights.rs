//! Multistep weight tables for the y- and z-recursions, kept as exact
//! rationals. Every row sums to exactly 1.

use num_rational::Ratio;

use crate::{Error, Real, Result};

pub const MAX_STEPS: usize = 6;

// y-recursion rows, K = 1..6, entries j = 0..K as (numerator, denominator)
const GAMMA_Y: [&[(i64, i64)]; 6] = [
    &[(1, 2), (1, 2)],
    &[(1, 6), (2, 3), (1, 6)],
    &[(1, 8), (3, 8), (3, 8), (1, 8)],
    &[(1, 12), (1, 3), (1, 6), (1, 3), (1, 12)],
    &[(41, 600), (19, 75), (107, 600), (107, 600), (19, 75), (41, 600)],
    &[(19, 336), (3, 14), (15, 112), (4, 21), (15, 112), (3, 14), (19, 336)],
];

// z-recursion rows, K = 1..6
const GAMMA_Z: [&[(i64, i64)]; 6] = [
    &[(1, 2), (1, 2)],
    &[(5, 12), (2, 3), (-1, 12)],
    &[(3, 8), (19, 24), (-5, 24), (1, 24)],
    &[(35, 96), (5, 6), (-13, 48), (1, 12), (-1, 96)],
    &[(131, 360), (151, 180), (-103, 360), (37, 360), (-1, 45), (1, 360)],
    &[
        (163, 448),
        (47, 56),
        (-129, 448),
        (3, 28),
        (-37, 1344),
        (1, 168),
        (-1, 1344),
    ],
];

/// Weight rows for a chosen pair of step counts. `gamma_y[j]` multiplies
/// the driver expectation at layer n+j (j = 0 is the implicit term);
/// `gamma_z` likewise for the z-recursion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemeWeights {
    pub ky: usize,
    pub kz: usize,
    pub gamma_y: Vec<Ratio<i64>>,
    pub gamma_z: Vec<Ratio<i64>>,
}

pub fn scheme_weights(ky: usize, kz: usize) -> Result<SchemeWeights> {
    if ky == 0 || ky > MAX_STEPS || kz == 0 || kz > MAX_STEPS {
        return Err(Error::InvalidArgument(format!(
            "step counts must be in 1..={MAX_STEPS}, got K_y={ky}, K_z={kz}"
        )));
    }
    let row = |table: [&[(i64, i64)]; 6], k: usize| -> Vec<Ratio<i64>> {
        table[k - 1].iter().map(|&(n, d)| Ratio::new(n, d)).collect()
    };
    Ok(SchemeWeights {
        ky,
        kz,
        gamma_y: row(GAMMA_Y, ky),
        gamma_z: row(GAMMA_Z, kz),
    })
}

impl SchemeWeights {
    pub fn gamma_y_floats<T: Real>(&self) -> Vec<T> {
        self.gamma_y
            .iter()
            .map(|r| T::from_f64(*r.numer() as f64 / *r.denom() as f64))
            .collect()
    }

    pub fn gamma_z_floats<T: Real>(&self) -> Vec<T> {
        self.gamma_z
            .iter()
            .map(|r| T::from_f64(*r.numer() as f64 / *r.denom() as f64))
            .collect()
    }
}
