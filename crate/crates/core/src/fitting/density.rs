//! Multivariate Student-t log density.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::log_det;

/// Log density of an `n`-dimensional Student-t with `df` degrees of freedom,
/// given `log det(Sigma)` and the Mahalanobis form `x' Sigma^{-1} x` of the
/// centered point.
pub fn log_mvt_from_parts(n: usize, df: f64, log_det_scale: f64, mahalanobis: f64) -> f64 {
    let nf = n as f64;
    ln_gamma(0.5 * (df + nf)) - ln_gamma(0.5 * df)
        - 0.5 * nf * (df * std::f64::consts::PI).ln()
        - 0.5 * log_det_scale
        - 0.5 * (df + nf) * (mahalanobis / df).ln_1p()
}

pub fn log_mvt_density(
    x: &DVector<f64>,
    df: f64,
    loc: &DVector<f64>,
    scale: &DMatrix<f64>,
) -> Result<f64> {
    let n = x.len();
    if loc.len() != n || scale.nrows() != n || scale.ncols() != n {
        return Err(Error::Data("dimension mismatch in multivariate t density".into()));
    }
    if !(df > 0.0) {
        return Err(Error::Data(format!("degrees of freedom must be positive, got {df}")));
    }
    let chol = scale
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Data("scale matrix is not positive definite".into()))?;
    let r = x - loc;
    let maha = r.dot(&chol.solve(&r));
    Ok(log_mvt_from_parts(n, df, log_det(&chol), maha))
}
