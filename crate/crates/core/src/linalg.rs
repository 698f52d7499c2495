//! Small dense solvers for normal equations and the oracle's linear systems.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix<F> {
    n: usize,
    data: Vec<F>,
}

impl<F: Scalar> SquareMatrix<F> {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![F::zero(); n * n],
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> F {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: F) {
        let x = &mut self.data[i * self.n + j];
        *x = *x + v;
    }

    pub fn trace(&self) -> F {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn add_diagonal(&mut self, v: F) {
        for i in 0..self.n {
            self.add_to(i, i, v);
        }
    }

    pub fn mul_vec(&self, x: &[F]) -> Vec<F> {
        (0..self.n)
            .map(|i| {
                self.data[i * self.n..(i + 1) * self.n]
                    .iter()
                    .zip(x)
                    .map(|(&a, &b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// Restriction to the rows and columns listed in `keep`.
    pub fn submatrix(&self, keep: &[usize]) -> Self {
        let mut out = SquareMatrix::zeros(keep.len());
        for (r, &i) in keep.iter().enumerate() {
            for (c, &j) in keep.iter().enumerate() {
                out.data[r * keep.len() + c] = self.get(i, j);
            }
        }
        out
    }
}

fn to_dense<F: Scalar>(a: &SquareMatrix<F>) -> DMatrix<f64> {
    DMatrix::from_row_iterator(a.n, a.n, a.data.iter().map(|v| v.to_f64_lossy()))
}

fn to_dvec<F: Scalar>(b: &[F]) -> DVector<f64> {
    DVector::from_iterator(b.len(), b.iter().map(|v| v.to_f64_lossy()))
}

fn from_dvec<F: Scalar>(x: &DVector<f64>) -> Vec<F> {
    x.iter().map(|&v| F::of(v)).collect()
}

/// Solves `A x = b` for symmetric positive definite `A` by Cholesky.
///
/// A pivot below `rel_tol * max diag` is reported as [`Error::Singular`].
/// The factorization runs in `f64`.
pub fn cholesky_solve<F: Scalar>(a: &SquareMatrix<F>, b: &[F], rel_tol: F) -> Result<Vec<F>> {
    let max_diag = (0..a.n).map(|i| a.get(i, i).to_f64_lossy()).fold(0.0, f64::max);
    if max_diag <= 0.0 {
        return Err(Error::Singular("normal matrix has no positive diagonal".into()));
    }
    let floor = rel_tol.to_f64_lossy() * max_diag;
    let chol = to_dense(a)
        .cholesky()
        .ok_or_else(|| Error::Singular("matrix is not positive definite".into()))?;
    if let Some(j) = chol.l_dirty().diagonal().iter().position(|&d| !(d * d > floor)) {
        return Err(Error::Singular(format!("pivot {j} below tolerance")));
    }
    Ok(from_dvec(&chol.solve(&to_dvec(b))))
}

/// Solves a general square system by LU with partial pivoting, in `f64`.
pub fn lu_solve<F: Scalar>(a: &SquareMatrix<F>, b: &[F]) -> Result<Vec<F>> {
    let m = to_dense(a);
    let scale = m.amax();
    if scale == 0.0 {
        return Err(Error::Singular("zero matrix".into()));
    }
    let tiny = scale * f64::EPSILON * a.n as f64;
    let lu = m.lu();
    if let Some(col) = lu.u().diagonal().iter().position(|d| !(d.abs() > tiny)) {
        return Err(Error::Singular(format!("no usable pivot in column {col}")));
    }
    lu.solve(&to_dvec(b))
        .map(|x| from_dvec(&x))
        .ok_or_else(|| Error::Singular("LU solve failed".into()))
}
