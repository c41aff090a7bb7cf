use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{FadsError, Result};

pub const DEFAULT_MIN_EIG: f64 = 1e-10;

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
pub fn sym_eigen_desc(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(idx.len(), idx.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = eig.eigenvectors.select_columns(&idx);
    (values, vectors)
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(a)).eigenvalues.min()
}

/// `A^{-1/2}` for symmetric `A` with every eigenvalue at least `min_eig`.
pub fn inverse_sqrt_psd(a: &DMatrix<f64>, min_eig: f64) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(FadsError::Dimension(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let smallest = eig.eigenvalues.min();
    if !(smallest >= min_eig) {
        return Err(FadsError::Degenerate {
            min_eig: smallest,
            threshold: min_eig,
        });
    }
    let scale = eig.eigenvalues.map(|l| l.sqrt().recip());
    let v = &eig.eigenvectors;
    let mut vs = v.clone();
    for (mut col, s) in vs.column_iter_mut().zip(scale.iter()) {
        col *= *s;
    }
    Ok(symmetrize(&(vs * v.transpose())))
}
