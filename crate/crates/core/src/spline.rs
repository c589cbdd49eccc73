//! M-spline and I-spline bases and the monotone spline transformation built
//! on them.
//!
//! A basis of polynomial degree `d` on `K` interior knots has
//! `B = d + K + 1` functions. M-splines are normalized B-splines of order
//! `d + 1` (each integrates to one over the boundary interval); I-splines are
//! their running integrals, evaluated in closed form as suffix sums of order
//! `d + 2` B-splines. Both use clamped knot vectors, i.e. each boundary knot
//! repeated once per unit of order.
//!
//! Inputs outside the boundary are clamped, so the transform is constant
//! beyond the data range and remains monotone everywhere.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of grid points used by the identity least-squares fit.
pub const IDENTITY_GRID: usize = 512;

/// Derivative floor applied before taking logs of the transform Jacobian.
pub const JACOBIAN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotConfig {
    degree: usize,
    interior: Vec<f64>,
    lo: f64,
    hi: f64,
}

impl KnotConfig {
    pub fn new(degree: usize, interior: Vec<f64>, boundary: (f64, f64)) -> Result<Self> {
        let (lo, hi) = boundary;
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::Knots(format!("boundary ({lo}, {hi}) must satisfy lo < hi")));
        }
        for (i, &k) in interior.iter().enumerate() {
            if !(k > lo && k < hi) {
                return Err(Error::Knots(format!(
                    "interior knot {i} = {k} is not strictly inside ({lo}, {hi})"
                )));
            }
            if i > 0 && k < interior[i - 1] {
                return Err(Error::Knots("interior knots must be nondecreasing".into()));
            }
        }
        Ok(Self { degree, interior, lo, hi })
    }

    /// Places `n_interior` knots at evenly spaced quantiles of `values`, with
    /// the boundary at the data range widened by `1e-9 * range` on each side.
    pub fn from_values(values: &[f64], n_interior: usize, degree: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Knots("cannot place knots on an empty sample".into()));
        }
        if degree < 1 {
            return Err(Error::Knots("degree must be at least 1".into()));
        }
        if n_interior < 1 {
            return Err(Error::Knots("at least one interior knot is required".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Knots("sample contains non-finite values".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut distinct = sorted.clone();
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(Error::Knots(format!(
                "all {} values are tied at {}; quantile knots collapse",
                sorted.len(),
                distinct[0]
            )));
        }

        let min = sorted[0];
        let max = sorted[sorted.len() - 1];
        let interior: Vec<f64> = (1..=n_interior)
            .map(|j| quantile_sorted(&sorted, j as f64 / (n_interior + 1) as f64))
            .collect();
        for pair in interior.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::Knots(format!(
                    "quantile knots collapse at {} (too many ties for {} interior knots)",
                    pair[0], n_interior
                )));
            }
        }
        if interior[0] <= min || interior[n_interior - 1] >= max {
            return Err(Error::Knots(format!(
                "quantile knots {interior:?} touch the data range [{min}, {max}]"
            )));
        }
        let pad = 1e-9 * (max - min);
        Self::new(degree, interior, (min - pad, max + pad))
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior
    }

    pub fn boundary(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn range(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn basis_size(&self) -> usize {
        self.degree + self.interior.len() + 1
    }

    pub fn clamp(&self, y: f64) -> f64 {
        y.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.lo && y <= self.hi
    }

    fn knot_vector(&self, order: usize) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.interior.len() + 2 * order);
        t.extend(std::iter::repeat_n(self.lo, order));
        t.extend_from_slice(&self.interior);
        t.extend(std::iter::repeat_n(self.hi, order));
        t
    }

    pub fn mspline(&self, y: f64) -> Vec<f64> {
        let mut m = vec![0.0; self.basis_size()];
        let mut i = vec![0.0; self.basis_size()];
        self.eval_into(y, &mut m, &mut i);
        m
    }

    pub fn ispline(&self, y: f64) -> Vec<f64> {
        let mut m = vec![0.0; self.basis_size()];
        let mut i = vec![0.0; self.basis_size()];
        self.eval_into(y, &mut m, &mut i);
        i
    }

    /// Writes M-spline values into `m` and I-spline values into `i` at the
    /// clamped point.
    pub fn eval_into(&self, y: f64, m: &mut [f64], i: &mut [f64]) {
        let nb = self.basis_size();
        assert_eq!(m.len(), nb);
        assert_eq!(i.len(), nb);
        let y = self.clamp(y);
        let k = self.degree + 1;

        let t = self.knot_vector(k);
        m.iter_mut().for_each(|v| *v = 0.0);
        let (first, vals) = bspline_nonzero(&t, k, y);
        for (r, &v) in vals.iter().enumerate() {
            let b = first + r;
            let width = t[b + k] - t[b];
            if width > 0.0 {
                m[b] = k as f64 * v / width;
            }
        }

        // I_b = sum_{j > b} N_{j,k+1} on the knot vector with one extra
        // boundary repetition.
        let t1 = self.knot_vector(k + 1);
        let (first, vals) = bspline_nonzero(&t1, k + 1, y);
        let mut full = vec![0.0; nb + 1];
        for (r, &v) in vals.iter().enumerate() {
            full[first + r] = v;
        }
        // once the sum covers every nonzero term it is exactly 1 (partition
        // of unity); summing would leave rounding that breaks monotonicity
        let mut acc = 0.0;
        for b in (0..nb).rev() {
            acc += full[b + 1];
            i[b] = if b < first { 1.0 } else { acc.min(1.0) };
        }
    }
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Nonzero B-spline values of the given order at `y` on knot vector `t`.
/// Returns the index of the first nonzero function and the `order` values.
fn bspline_nonzero(t: &[f64], order: usize, y: f64) -> (usize, Vec<f64>) {
    let p = order - 1;
    let n_basis = t.len() - order;
    // span s with t[s] <= y < t[s+1], restricted to p..n_basis-1
    let mut s = p;
    while s + 1 < n_basis && t[s + 1] <= y {
        s += 1;
    }
    let mut n = vec![0.0; order];
    let mut left = vec![0.0; order];
    let mut right = vec![0.0; order];
    n[0] = 1.0;
    for j in 1..=p {
        left[j] = y - t[s + 1 - j];
        right[j] = t[s + j] - y;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom != 0.0 { n[r] / denom } else { 0.0 };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    (s - p, n)
}

/// Parameters of the monotone spline transformation
/// `tau(y) = lambda0 + sum_b lambda_b I_b(y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub lambda0: f64,
    pub lambda: Vec<f64>,
    pub range_c: f64,
    pub knots: KnotConfig,
}

impl TransformParams {
    pub fn new(lambda0: f64, lambda: Vec<f64>, range_c: f64, knots: KnotConfig) -> Result<Self> {
        let p = Self { lambda0, lambda, range_c, knots };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda.len() != self.knots.basis_size() {
            return Err(Error::Transform(format!(
                "{} weights for a basis of size {}",
                self.lambda.len(),
                self.knots.basis_size()
            )));
        }
        if let Some(b) = self.lambda.iter().position(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(Error::Transform(format!(
                "weight {b} = {} is negative or not finite",
                self.lambda[b]
            )));
        }
        if !self.lambda0.is_finite() {
            return Err(Error::Transform("intercept must be finite".into()));
        }
        if !(self.range_c > 0.0 && self.range_c.is_finite()) {
            return Err(Error::Transform("range constant must be positive".into()));
        }
        Ok(())
    }

    /// True when the weights sum to the range constant (constrained variant).
    pub fn sums_to_range(&self, rel_tol: f64) -> bool {
        let s: f64 = self.lambda.iter().sum();
        (s - self.range_c).abs() <= rel_tol * self.range_c
    }

    pub fn transform(&self, y: f64) -> f64 {
        let i = self.knots.ispline(y);
        self.lambda0 + dot(&self.lambda, &i)
    }

    /// Derivative of the forward map, `sum_b lambda_b M_b(y)`, at the clamped
    /// point.
    pub fn jacobian(&self, y: f64) -> f64 {
        let m = self.knots.mspline(y);
        dot(&self.lambda, &m)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            lambda: self.lambda.iter().map(|l| l * factor).collect(),
            ..self.clone()
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Nonnegative weights whose transform best matches the identity map on a
/// uniform grid over the knot boundary, with the intercept held at `lambda0`.
///
/// Negative least-squares coefficients are clipped to zero and the remaining
/// coefficients refit until none are negative.
pub fn identity_lambda(knots: &KnotConfig, range_c: f64, lambda0: f64) -> Result<TransformParams> {
    let nb = knots.basis_size();
    let (lo, hi) = knots.boundary();
    let grid: Vec<f64> = (0..IDENTITY_GRID)
        .map(|g| lo + (hi - lo) * g as f64 / (IDENTITY_GRID - 1) as f64)
        .collect();
    let mut design = DMatrix::zeros(IDENTITY_GRID, nb);
    let mut target = DVector::zeros(IDENTITY_GRID);
    for (g, &y) in grid.iter().enumerate() {
        let row = knots.ispline(y);
        for b in 0..nb {
            design[(g, b)] = row[b];
        }
        target[g] = y - lambda0;
    }

    let mut active: Vec<usize> = (0..nb).collect();
    let mut lambda = vec![0.0; nb];
    while !active.is_empty() {
        let sub = design.select_columns(active.iter());
        let coef = sub
            .svd(true, true)
            .solve(&target, 1e-14)
            .map_err(|e| Error::Transform(format!("identity fit failed: {e}")))?;
        if coef.iter().all(|&c| c >= 0.0) {
            lambda.iter_mut().for_each(|l| *l = 0.0);
            for (j, &b) in active.iter().enumerate() {
                lambda[b] = coef[j];
            }
            break;
        }
        active = active
            .iter()
            .zip(coef.iter())
            .filter(|(_, &c)| c > 0.0)
            .map(|(&b, _)| b)
            .collect();
    }
    TransformParams::new(lambda0, lambda, range_c, knots.clone())
}
