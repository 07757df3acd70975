//! Pooled linear factor model fit by (optionally ridge-penalized) least squares.

use crate::error::{Error, Result};
use crate::factors::Sample;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct LinearModel<F = f64> {
    pub intercept: F,
    pub coefficients: Vec<F>,
}

impl<F: Scalar> LinearModel<F> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            intercept: F::zero(),
            coefficients: vec![F::zero(); dim],
        }
    }

    pub fn predict(&self, x: &[F]) -> Result<F> {
        linear_predict(self, x)
    }
}

/// `intercept + coefficients . x`.
pub fn linear_predict<F: Scalar>(model: &LinearModel<F>, x: &[F]) -> Result<F> {
    if x.len() != model.coefficients.len() {
        return Err(Error::DimensionMismatch {
            context: "linear_predict",
            expected: model.coefficients.len(),
            actual: x.len(),
        });
    }
    Ok(model.intercept
        + model
            .coefficients
            .iter()
            .zip(x)
            .map(|(&c, &v)| c * v)
            .sum::<F>())
}

/// Minimizes `sum (y - a - x.b)^2 + lambda |b|^2` (intercept unpenalized).
///
/// Works on centered data: `(Xc'Xc + lambda I) b = Xc'yc` via Cholesky, then
/// `a = mean(y) - mean(x).b`. A rank-deficient design with `lambda = 0` is an error.
pub fn ols_fit<F: Scalar>(samples: &[Sample<F>], ridge_lambda: f64) -> Result<LinearModel<F>> {
    if samples.is_empty() {
        return Err(Error::Empty("ols_fit"));
    }
    if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "ridge_lambda must be >= 0, got {ridge_lambda}"
        )));
    }
    let p = samples[0].input.len();
    if let Some(bad) = samples.iter().find(|s| s.input.len() != p) {
        return Err(Error::DimensionMismatch {
            context: "ols_fit: sample input",
            expected: p,
            actual: bad.input.len(),
        });
    }
    if samples
        .iter()
        .any(|s| !s.target.is_finite() || s.input.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::InvalidConfig(
            "design matrix has non-finite entries".into(),
        ));
    }
    let n = samples.len();
    if n < 2 {
        return Err(Error::SingularDesign);
    }
    let nf = F::of_usize(n);
    let mut x_mean = vec![F::zero(); p];
    let mut y_mean = F::zero();
    for s in samples {
        for (m, &v) in x_mean.iter_mut().zip(&s.input) {
            *m += v;
        }
        y_mean += s.target;
    }
    x_mean.iter_mut().for_each(|m| *m /= nf);
    y_mean /= nf;

    // upper triangle of the centered Gram matrix, row-major p x p
    let mut gram = vec![F::zero(); p * p];
    let mut rhs = vec![F::zero(); p];
    let mut xc = vec![F::zero(); p];
    for s in samples {
        for (c, (&v, &m)) in xc.iter_mut().zip(s.input.iter().zip(&x_mean)) {
            *c = v - m;
        }
        let yc = s.target - y_mean;
        for i in 0..p {
            let xi = xc[i];
            rhs[i] += xi * yc;
            let row = &mut gram[i * p..(i + 1) * p];
            for j in i..p {
                row[j] += xi * xc[j];
            }
        }
    }
    let lambda = F::of(ridge_lambda);
    for i in 0..p {
        gram[i * p + i] += lambda;
        for j in 0..i {
            gram[i * p + j] = gram[j * p + i];
        }
    }
    let coefficients = if p == 0 {
        Vec::new()
    } else {
        cholesky_solve(&mut gram, p, &rhs).ok_or(Error::SingularDesign)?
    };
    let intercept = y_mean
        - coefficients
            .iter()
            .zip(&x_mean)
            .map(|(&b, &m)| b * m)
            .sum::<F>();
    Ok(LinearModel {
        intercept,
        coefficients,
    })
}

/// Solves `A x = b` for symmetric positive-definite `A` (row-major, overwritten).
///
/// Returns `None` when a pivot is not safely positive.
pub fn cholesky_solve<F: Scalar>(a: &mut [F], n: usize, b: &[F]) -> Option<Vec<F>> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n);
    let max_diag = (0..n).map(|i| a[i * n + i].abs()).fold(F::zero(), F::max);
    let tol = F::epsilon() * F::of_usize(n.max(1)) * F::of(16.0) * max_diag;
    // lower factor L stored in place
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > tol) {
            return None;
        }
        let ljj = d.sqrt();
        a[j * n + j] = ljj;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / ljj;
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] = y[i] - a[i * n + k] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] = y[i] - a[k * n + i] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    Some(y)
}
