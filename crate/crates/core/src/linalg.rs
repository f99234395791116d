//! Dense linear-algebra helpers shared by the analysis modules.

use nalgebra::{Cholesky, Complex, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// `[x]`: the diagonal matrix with `x` on the diagonal.
pub fn diag(x: &Vector) -> Matrix {
    Matrix::from_diagonal(x)
}

pub fn max_norm(x: &Vector) -> f64 {
    x.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Induced infinity norm (max absolute row sum).
pub fn matrix_inf_norm(a: &Matrix) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest entrywise absolute value.
pub fn max_abs(a: &Matrix) -> f64 {
    a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

pub fn max_asymmetry(a: &Matrix) -> f64 {
    max_abs(&(a - a.transpose()))
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(a: &Matrix) -> Vec<f64> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

/// Eigenpairs of a symmetric matrix, sorted ascending by eigenvalue.
pub fn sym_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = Matrix::from_fn(a.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (vals, vecs)
}

/// Eigenvalues of a general square matrix via the real Schur form.
pub fn eigenvalues(a: &Matrix) -> Result<Vec<Complex<f64>>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Eigensolver(format!(
            "matrix is not square ({}x{})",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigensolver("matrix has non-finite entries".into()));
    }
    let schur = a
        .clone()
        .try_schur(f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigensolver("Schur iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Cholesky factor of a symmetric positive definite matrix.
pub fn spd_factor(a: &Matrix, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(a))
        .ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

/// Solve `a x = b` with partial-pivoting LU.
pub fn lu_solve(a: &Matrix, b: &Matrix, what: &str) -> Result<Matrix> {
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular(format!("{what} is singular")))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(format!("{what} is numerically singular")));
    }
    Ok(x)
}

pub fn lu_solve_vec(a: &Matrix, b: &Vector, what: &str) -> Result<Vector> {
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular(format!("{what} is singular")))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(format!("{what} is numerically singular")));
    }
    Ok(x)
}

/// Component-wise minimum.
pub fn min_entry(x: &Vector) -> f64 {
    x.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn max_entry(x: &Vector) -> f64 {
    x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `[x]^p` applied entrywise to a vector, returned as a vector.
pub fn powi(x: &Vector, p: i32) -> Vector {
    x.map(|v| v.powi(p))
}

pub fn ones(n: usize) -> Vector {
    Vector::from_element(n, 1.0)
}

/// Largest real part of a spectrum.
pub fn spectral_abscissa(spectrum: &[Complex<f64>]) -> f64 {
    spectrum
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Sort a spectrum by descending real part (ties broken by imaginary part).
pub fn sort_spectrum_desc(spectrum: &mut [Complex<f64>]) {
    spectrum.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
}
