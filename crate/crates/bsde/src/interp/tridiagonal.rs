//! Direct tridiagonal solve (Thomas algorithm).

use crate::{Error, Real, Result};

/// Tridiagonal system of size n. `sub[i]` multiplies `x[i-1]` in row i
/// (entry 0 unused), `sup[i]` multiplies `x[i+1]` (last entry unused).
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalSystem<T> {
    pub sub: Vec<T>,
    pub main: Vec<T>,
    pub sup: Vec<T>,
    pub rhs: Vec<T>,
}

pub fn solve_tridiagonal<T: Real>(sys: &TridiagonalSystem<T>) -> Result<Vec<T>> {
    let n = sys.main.len();
    if n == 0 || sys.sub.len() != n || sys.sup.len() != n || sys.rhs.len() != n {
        return Err(Error::InvalidArgument(
            "tridiagonal system dimensions inconsistent".into(),
        ));
    }
    let mut c = vec![T::zero(); n];
    let mut x = vec![T::zero(); n];
    let mut pivot = sys.main[0];
    if pivot.abs() <= T::min_positive_value() {
        return Err(Error::SingularSystem { row: 0 });
    }
    c[0] = sys.sup[0] / pivot;
    x[0] = sys.rhs[0] / pivot;
    for i in 1..n {
        pivot = sys.main[i] - sys.sub[i] * c[i - 1];
        if pivot.abs() <= T::min_positive_value() {
            return Err(Error::SingularSystem { row: i });
        }
        c[i] = sys.sup[i] / pivot;
        x[i] = (sys.rhs[i] - sys.sub[i] * x[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        x[i] = x[i] - c[i] * x[i + 1];
    }
    Ok(x)
}
