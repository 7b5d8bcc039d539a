//! Small dense linear algebra for the explanation surrogate.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Solves `a x = b` for a square row-major `a` by Gaussian elimination with
/// partial pivoting.
pub fn solve<T: Scalar>(mut a: Vec<T>, mut b: Vec<T>) -> Result<Vec<T>> {
    let n = b.len();
    if a.len() != n * n {
        return Err(Error::Shape(format!("matrix of {} entries for {n} unknowns", a.len())));
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                a[i * n + col]
                    .abs()
                    .partial_cmp(&a[j * n + col].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(col);
        if a[pivot * n + col].abs() <= T::epsilon() {
            return Err(Error::Validation("singular system".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            b.swap(pivot, col);
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            if factor == T::zero() {
                continue;
            }
            for k in col..n {
                let v = a[col * n + k];
                a[row * n + k] -= factor * v;
            }
            let bv = b[col];
            b[row] -= factor * bv;
        }
    }
    let mut x = vec![T::zero(); n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    Ok(x)
}

/// Result of a weighted ridge fit with an unpenalized intercept.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeFit<T> {
    pub coef: Vec<T>,
    pub intercept: T,
    /// Weighted coefficient of determination on the training rows.
    pub r2: T,
}

/// Minimizes `sum_i w_i (y_i - b - x_i.beta)^2 + alpha |beta|^2`.
///
/// `x` is row-major with `y.len()` rows and `dim` columns.
pub fn weighted_ridge<T: Scalar>(x: &[T], dim: usize, y: &[T], w: &[T], alpha: T) -> Result<RidgeFit<T>> {
    let n = y.len();
    if x.len() != n * dim || w.len() != n {
        return Err(Error::Shape("ridge inputs disagree in length".into()));
    }
    let wsum: T = w.iter().copied().sum();
    if wsum <= T::zero() {
        return Err(Error::Validation("sample weights sum to zero".into()));
    }
    let mut x_mean = vec![T::zero(); dim];
    let mut y_mean = T::zero();
    for i in 0..n {
        for j in 0..dim {
            x_mean[j] += w[i] * x[i * dim + j];
        }
        y_mean += w[i] * y[i];
    }
    x_mean.iter_mut().for_each(|m| *m /= wsum);
    y_mean /= wsum;

    let mut gram = vec![T::zero(); dim * dim];
    let mut rhs = vec![T::zero(); dim];
    let mut xc = vec![T::zero(); dim];
    for i in 0..n {
        for j in 0..dim {
            xc[j] = x[i * dim + j] - x_mean[j];
        }
        let yc = y[i] - y_mean;
        for j in 0..dim {
            let wx = w[i] * xc[j];
            rhs[j] += wx * yc;
            for k in j..dim {
                gram[j * dim + k] += wx * xc[k];
            }
        }
    }
    for j in 0..dim {
        for k in 0..j {
            gram[j * dim + k] = gram[k * dim + j];
        }
        gram[j * dim + j] += alpha;
    }
    let coef = if dim == 0 { Vec::new() } else { solve(gram, rhs)? };
    let intercept = y_mean - coef.iter().zip(&x_mean).map(|(&c, &m)| c * m).sum::<T>();

    let mut ss_res = T::zero();
    let mut ss_tot = T::zero();
    for i in 0..n {
        let pred = intercept + (0..dim).map(|j| coef[j] * x[i * dim + j]).sum::<T>();
        ss_res += w[i] * (y[i] - pred) * (y[i] - pred);
        ss_tot += w[i] * (y[i] - y_mean) * (y[i] - y_mean);
    }
    let r2 = if ss_tot > T::zero() {
        T::one() - ss_res / ss_tot
    } else {
        T::one()
    };
    Ok(RidgeFit { coef, intercept, r2 })
}
