//! Small dense helpers shared by the smoother and the M-step.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{DfmError, Result};

pub fn symmetrise(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn symmetrise_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Largest absolute asymmetry `max |m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Inverse of a symmetric matrix with eigenvalues clamped below at `floor`.
pub fn floored_sym_inverse(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrise(m));
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v.max(floor));
    &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose()
}

/// Symmetrise and clamp eigenvalues below at `floor`.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrise(m));
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return symmetrise(m);
    }
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    symmetrise(&out)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrise(m)).eigenvalues.min()
}

/// Spectral radius of a general square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Solve `X * G = B` for `X` where `G` is symmetric positive definite.
pub fn right_solve_spd(b: &DMatrix<f64>, g: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = Cholesky::new(symmetrise(g)).ok_or_else(|| DfmError::Singular(what.to_string()))?;
    // X G = B  <=>  G X^T = B^T
    Ok(chol.solve(&b.transpose()).transpose())
}

/// Stationary covariance of `F_t = A F_{t-1} + u_t`, i.e. the solution of
/// `S = A S A^T + Q`, via the vectorised `(I - A⊗A) vec S = vec Q` system.
pub fn discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r = a.nrows();
    if spectral_radius(a) >= 1.0 {
        return Err(DfmError::Singular(
            "transition matrix is not stable; no stationary covariance".into(),
        ));
    }
    let kron = a.kronecker(a);
    let lhs = DMatrix::<f64>::identity(r * r, r * r) - kron;
    let rhs = DVector::from_column_slice(q.as_slice());
    let vec_s = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| DfmError::Singular("Lyapunov system".into()))?;
    Ok(symmetrise(&DMatrix::from_column_slice(r, r, vec_s.as_slice())))
}

pub fn is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Eigen-decomposition of a symmetric matrix with eigenpairs sorted by
/// decreasing eigenvalue and each eigenvector signed so its largest-magnitude
/// entry is positive.
pub fn sorted_sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrise(m));
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut vals = DVector::zeros(n);
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &idx) in order.iter().enumerate() {
        vals[k] = eig.eigenvalues[idx];
        let mut col = eig.eigenvectors.column(idx).clone_owned();
        let pivot = col
            .iter()
            .copied()
            .fold(0.0_f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            col.neg_mut();
        }
        vecs.set_column(k, &col);
    }
    (vals, vecs)
}
