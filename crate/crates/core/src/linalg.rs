//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative eigenvalue floor below which a Gram matrix is treated as singular.
pub const RANK_TOL: f64 = 1e-10;

pub fn select_columns(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), idx.len(), |i, j| x[(i, idx[j])])
}

/// Inverse of `XᵀX`, refusing numerically rank-deficient designs.
pub fn gram_inverse(x: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let k = x.ncols();
    if k == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if k > x.nrows() {
        return Err(Error::RankDeficient(format!(
            "{context}: {k} columns but only {} rows",
            x.nrows()
        )));
    }
    let gram = x.transpose() * x;
    let eig = gram.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min <= RANK_TOL * max {
        return Err(Error::RankDeficient(format!(
            "{context}: Gram eigenvalue ratio {:.3e}",
            min / max
        )));
    }
    let chol = gram.cholesky().ok_or_else(|| {
        Error::RankDeficient(format!("{context}: Cholesky factorization failed"))
    })?;
    Ok(chol.inverse())
}

/// `(Xᵀ)⁺ = X (XᵀX)⁻¹`; column `j` is the contrast that extracts the `j`-th
/// least-squares coefficient.
pub fn transpose_pinv(x: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    Ok(x * gram_inverse(x, context)?)
}

/// Orthonormal basis of the column span of `x` by modified Gram-Schmidt with one
/// reorthogonalization pass. Columns must be linearly independent.
pub fn orthonormal_basis(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let mut q: Vec<DVector<f64>> = Vec::with_capacity(x.ncols());
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let scale = col.norm();
        let v = project_out(col, &q);
        let norm = v.norm();
        if norm <= 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::RankDeficient(format!("column {j} is linearly dependent")));
        }
        q.push(v / norm);
    }
    Ok(if q.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&q)
    })
}

fn project_out(mut v: DVector<f64>, basis: &[DVector<f64>]) -> DVector<f64> {
    for _ in 0..2 {
        for b in basis {
            let c = b.dot(&v);
            v.axpy(-c, b, 1.0);
        }
    }
    v
}

/// `count` orthonormal vectors orthogonal to the columns of `x`, built
/// deterministically from the standard basis.
pub fn orthogonal_complement(x: &DMatrix<f64>, count: usize) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if x.ncols() + count > n {
        return Err(Error::InvalidInput(format!(
            "complement of dimension {count} needs at least {} rows, have {n}",
            x.ncols() + count
        )));
    }
    let mut basis: Vec<DVector<f64>> = orthonormal_basis(x)?.column_iter().map(|c| c.into_owned()).collect();
    let start = basis.len();
    // Try the best-conditioned candidates first.
    let mut candidates: Vec<(usize, f64)> = (0..n)
        .map(|i| {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            (i, project_out(e, &basis).norm())
        })
        .collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (i, _) in candidates {
        if basis.len() - start == count {
            break;
        }
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        let v = project_out(e, &basis);
        let norm = v.norm();
        if norm > 1e-6 {
            basis.push(v / norm);
        }
    }
    if basis.len() - start < count {
        return Err(Error::RankDeficient("orthogonal complement construction".into()));
    }
    Ok(DMatrix::from_columns(&basis[start..]))
}

/// Symmetric square-root factor `C` with `CᵀC = M`, eigenvalues below `floor`
/// clipped to zero.
pub fn psd_factor(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let k = m.nrows();
    let mut c = DMatrix::zeros(k, k);
    for (idx, &val) in eig.eigenvalues.iter().enumerate() {
        let root = if val < floor { 0.0 } else { val.sqrt() };
        let v = eig.eigenvectors.column(idx);
        for col in 0..k {
            c[(idx, col)] = root * v[col];
        }
    }
    c
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_is_orthonormal_and_orthogonal() {
        let x = DMatrix::from_row_slice(5, 2, &[1.0, 0.5, 2.0, -1.0, 0.0, 1.0, 1.0, 3.0, -2.0, 0.2]);
        let u = orthogonal_complement(&x, 3).unwrap();
        assert!(max_abs(&(u.transpose() * &x)) < 1e-12);
        assert!(max_abs(&(u.transpose() * &u - DMatrix::identity(3, 3))) < 1e-12);
    }

    #[test]
    fn transpose_pinv_extracts_coefficients() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.3, 0.0, 1.0, 2.0, -1.0, 1.0, 1.0]);
        let p = transpose_pinv(&x, "test").unwrap();
        assert!(max_abs(&(p.transpose() * &x - DMatrix::identity(2, 2))) < 1e-12);
    }

    #[test]
    fn duplicate_columns_are_rank_deficient() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        assert!(matches!(gram_inverse(&x, "dup"), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn psd_factor_reconstructs() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let c = psd_factor(&m, 1e-12);
        assert!(max_abs(&(c.transpose() * &c - m)) < 1e-12);
    }
}
