//! Kronecker, Khatri-Rao and Hadamard products.

use crate::error::{Error, Result};
use crate::Matrix;

/// Kronecker product; block `(i, j)` of the result is `a[(i, j)] * b`.
pub fn kronecker(a: &Matrix, b: &Matrix) -> Matrix {
    let (m, p) = a.shape();
    let (n, q) = b.shape();
    let mut out = Matrix::zeros(m * n, p * q);
    for j in 0..p {
        for i in 0..m {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            let mut block = out.view_mut((i * n, j * q), (n, q));
            block.zip_apply(b, |o, v| *o = s * v);
        }
    }
    out
}

/// Columnwise Kronecker product `mats[0] ⊙ mats[1] ⊙ …`; the row index of the
/// last matrix varies fastest.
pub fn khatri_rao(mats: &[&Matrix]) -> Result<Matrix> {
    let first = mats
        .first()
        .ok_or_else(|| Error::InvalidArgument("khatri_rao needs at least one matrix".into()))?;
    let r = first.ncols();
    if let Some(bad) = mats.iter().find(|m| m.ncols() != r) {
        return Err(Error::Dimension(format!(
            "khatri_rao column counts differ: {r} vs {}",
            bad.ncols()
        )));
    }
    let mut out = (*first).clone();
    for next in &mats[1..] {
        let (rows_a, rows_b) = (out.nrows(), next.nrows());
        let mut prod = Matrix::zeros(rows_a * rows_b, r);
        for j in 0..r {
            for ia in 0..rows_a {
                let s = out[(ia, j)];
                for ib in 0..rows_b {
                    prod[(ia * rows_b + ib, j)] = s * next[(ib, j)];
                }
            }
        }
        out = prod;
    }
    Ok(out)
}

/// Elementwise product.
pub fn hadamard(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "hadamard shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.component_mul(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kronecker() {
        let k = kronecker(&Matrix::identity(2, 2), &Matrix::identity(3, 3));
        assert_eq!(k, Matrix::identity(6, 6));
    }

    #[test]
    fn kronecker_entrywise() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let k = kronecker(&a, &b);
        let mut expected = Matrix::zeros(4, 4);
        for i in 0..2 {
            for j in 0..2 {
                for p in 0..2 {
                    for q in 0..2 {
                        expected[(2 * i + p, 2 * j + q)] = a[(i, j)] * b[(p, q)];
                    }
                }
            }
        }
        assert_eq!(k, expected);
        assert_eq!(
            k,
            Matrix::from_row_slice(
                4,
                4,
                &[0., 1., 0., 2., 1., 0., 2., 0., 0., 3., 0., 4., 3., 0., 4., 0.]
            )
        );
    }

    #[test]
    fn khatri_rao_columns() {
        let a = Matrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let b = Matrix::from_column_slice(2, 1, &[3.0, 4.0]);
        let kr = khatri_rao(&[&a, &b]).unwrap();
        assert_eq!(kr.as_slice(), &[3.0, 4.0, 6.0, 8.0]);
        assert_eq!(kr, kronecker(&a, &b));
        assert_eq!(khatri_rao(&[&a]).unwrap(), a);
    }

    #[test]
    fn khatri_rao_rejects_mismatch() {
        let a = Matrix::zeros(2, 2);
        let b = Matrix::zeros(2, 3);
        assert!(khatri_rao(&[&a, &b]).is_err());
        assert!(khatri_rao(&[]).is_err());
    }

    #[test]
    fn hadamard_cases() {
        let a = Matrix::from_row_slice(3, 2, &[1.0, -2.0, 3.5, 0.25, 7.0, 1e-3]);
        let b = Matrix::from_row_slice(3, 2, &[2.0, 4.0, -1.0, 8.0, 0.5, 1e3]);
        assert_eq!(hadamard(&a, &Matrix::from_element(3, 2, 1.0)).unwrap(), a);
        assert_eq!(hadamard(&a, &Matrix::zeros(3, 2)).unwrap(), Matrix::zeros(3, 2));
        let h = hadamard(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(h[(i, j)], a[(i, j)] * b[(i, j)]);
            }
        }
        assert!(hadamard(&a, &Matrix::zeros(2, 3)).is_err());
    }
}
