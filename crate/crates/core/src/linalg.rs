use nalgebra::{Cholesky, DMatrix, Dyn};

/// Diagonal jitter levels tried in turn when a factorization fails.
const JITTER: [f64; 3] = [0.0, 1e-10, 1e-8];

/// Cholesky factorization of a symmetric matrix, retrying with increasing
/// diagonal jitter. `None` means the matrix is not numerically positive
/// definite even after the largest jitter.
pub(crate) fn cholesky_jitter(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    for jitter in JITTER {
        let mut a = m.clone();
        if jitter > 0.0 {
            for i in 0..a.nrows() {
                a[(i, i)] += jitter;
            }
        }
        if let Some(c) = a.cholesky() {
            return Some(c);
        }
    }
    None
}

pub(crate) fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
