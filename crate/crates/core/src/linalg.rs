use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

pub const BASE_JITTER: f64 = 1e-6;
pub const MAX_JITTER: f64 = 1e-2;

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    symmetrize(a)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1.0);
    a.is_square()
        && (0..a.nrows()).all(|i| (0..i).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= tol * scale))
}

/// PSD up to `rel_tol · trace`.
pub fn is_psd(a: &DMatrix<f64>, rel_tol: f64) -> bool {
    min_eigenvalue(a) >= -rel_tol * a.trace().abs().max(f64::MIN_POSITIVE)
}

fn mean_diag(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    (a.trace() / a.nrows() as f64).abs().max(f64::MIN_POSITIVE)
}

/// Factor a symmetric matrix, first as given, then with escalating diagonal jitter
/// (1e-6 to 1e-2 times the mean diagonal, ×10 per step). Returns the factor and the jitter used.
pub fn cholesky_escalating(
    a: &DMatrix<f64>,
    what: &'static str,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let sym = symmetrize(a);
    if let Some(c) = Cholesky::new(sym.clone()) {
        return Ok((c, 0.0));
    }
    let scale = mean_diag(&sym);
    let mut rel = BASE_JITTER;
    while rel <= MAX_JITTER * (1.0 + 1e-9) {
        let mut j = sym.clone();
        for i in 0..j.nrows() {
            j[(i, i)] += rel * scale;
        }
        if let Some(c) = Cholesky::new(j) {
            log::debug!("{what}: factorized with jitter {:e}", rel * scale);
            return Ok((c, rel * scale));
        }
        rel *= 10.0;
    }
    Err(Error::NotPositiveDefinite {
        what,
        jitter: MAX_JITTER * scale,
    })
}

pub fn cholesky(a: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(a)).ok_or(Error::NotPositiveDefinite { what, jitter: 0.0 })
}

pub fn logdet(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logdet_matches_product() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let c = cholesky(&a, "a").unwrap();
        assert!((logdet(&c) - 11f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_gets_jitter() {
        let a = DMatrix::from_element(3, 3, 1.0);
        let (_, jit) = cholesky_escalating(&a, "ones").unwrap();
        assert!(jit > 0.0 && jit <= 1e-2);
    }

    #[test]
    fn indefinite_matrix_errors() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            cholesky_escalating(&a, "indef"),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn symmetry_and_psd_checks() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!(is_symmetric(&a, 1e-12));
        assert!(is_psd(&a, 1e-8));
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert!(!is_symmetric(&b, 1e-12));
        assert!((min_eigenvalue(&a) - 1.0).abs() < 1e-12);
    }
}
