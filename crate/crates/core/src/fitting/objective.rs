//! Marginal posterior of `(w, lambda)` on a training prefix.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{filter_log_density, Hyperparams, ObsLayout};
use crate::preprocess::Dataset;
use crate::spline::{identity_lambda, KnotConfig, TransformParams, JACOBIAN_FLOOR};

/// Prior on the spline weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorVariant {
    /// Independent normals centred on `alpha`, truncated below at zero.
    #[default]
    TruncatedNormal,
    /// `c * Dirichlet(alpha)`: weights on the simplex scaled to the range.
    Dirichlet,
}

/// Half-normal log prior on `w` with scale `s_w`, constants dropped.
pub fn log_prior_w(w: f64, h: &Hyperparams) -> f64 {
    if !(w > 0.0) || !w.is_finite() {
        return f64::NEG_INFINITY;
    }
    -0.5 * (w / h.s_w).powi(2)
}

/// Log prior on the spline weights, constants dropped.
///
/// `alpha` is the prior centre (truncated normal) or the concentration
/// vector (Dirichlet); `range_c` is only used by the Dirichlet variant.
pub fn log_prior_lambda(
    lambda: &[f64],
    alpha: &[f64],
    s_lambda: f64,
    range_c: f64,
    variant: PriorVariant,
) -> f64 {
    if lambda.len() != alpha.len() || lambda.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return f64::NEG_INFINITY;
    }
    match variant {
        PriorVariant::TruncatedNormal => {
            let ss: f64 = lambda.iter().zip(alpha).map(|(l, a)| (l - a).powi(2)).sum();
            -0.5 * ss / (s_lambda * s_lambda)
        }
        PriorVariant::Dirichlet => {
            let sum: f64 = lambda.iter().sum();
            if (sum - range_c).abs() > 1e-9 * range_c {
                return f64::NEG_INFINITY;
            }
            let mut lp = 0.0;
            for (l, a) in lambda.iter().zip(alpha) {
                if *a == 1.0 {
                    continue;
                }
                if *l == 0.0 {
                    return if *a > 1.0 { f64::NEG_INFINITY } else { f64::INFINITY };
                }
                lp += (a - 1.0) * (l / range_c).ln();
            }
            lp
        }
    }
}

/// Breakdown of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveTerms {
    pub log_jacobian: f64,
    pub log_prior_w: f64,
    pub log_prior_lambda: f64,
    pub log_likelihood: f64,
    /// Observations whose Jacobian hit the floor.
    pub floored: usize,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.log_jacobian + self.log_prior_w + self.log_prior_lambda + self.log_likelihood
    }
}

/// Everything needed to evaluate the objective. Basis matrices for the
/// training observations are built once so an evaluation costs two
/// matrix-vector products plus a filter pass.
#[derive(Debug, Clone)]
pub struct ObjectiveSpec {
    pub knots: KnotConfig,
    pub h: Hyperparams,
    pub variant: PriorVariant,
    pub t_train: usize,
    pub lambda0: f64,
    pub range_c: f64,
    pub s_lambda: f64,
    pub alpha: Vec<f64>,
    /// Weights of the identity transform.
    pub identity: Vec<f64>,
    layout: ObsLayout,
    ibasis: DMatrix<f64>,
    mbasis: DMatrix<f64>,
}

impl ObjectiveSpec {
    pub fn new(
        data: &Dataset,
        t_train: usize,
        knots: KnotConfig,
        h: Hyperparams,
        variant: PriorVariant,
    ) -> Result<Self> {
        h.validate()?;
        if t_train > data.n_periods() {
            return Err(Error::Config(format!(
                "training prefix of {t_train} periods exceeds the {} available",
                data.n_periods()
            )));
        }
        let (lo, hi) = knots.boundary();
        let range_c = hi - lo;
        let nb = knots.basis_size();
        let identity = identity_lambda(&knots, range_c, lo)?.lambda;
        let s_lambda = h.s_lambda.unwrap_or(10.0 * range_c / nb as f64);
        let alpha = match (&h.alpha, variant) {
            (Some(a), _) => {
                if a.len() != nb {
                    return Err(Error::Config(format!("alpha has {} entries, expected {nb}", a.len())));
                }
                a.clone()
            }
            (None, PriorVariant::TruncatedNormal) => identity.clone(),
            (None, PriorVariant::Dirichlet) => {
                let total: f64 = identity.iter().sum();
                identity.iter().map(|l| h.dirichlet_concentration * l / total).collect()
            }
        };

        let train = data.prefix(t_train);
        let layout = train.layout();
        let obs = train.observations();
        let n = obs.len();
        let mut ibasis = DMatrix::zeros(n, nb);
        let mut mbasis = DMatrix::zeros(n, nb);
        let (mut mrow, mut irow) = (vec![0.0; nb], vec![0.0; nb]);
        for (r, &y) in obs.iter().enumerate() {
            knots.eval_into(y, &mut mrow, &mut irow);
            for b in 0..nb {
                ibasis[(r, b)] = irow[b];
                mbasis[(r, b)] = mrow[b];
            }
        }
        Ok(Self {
            knots,
            h,
            variant,
            t_train,
            lambda0: lo,
            range_c,
            s_lambda,
            alpha,
            identity,
            layout,
            ibasis,
            mbasis,
        })
    }

    pub fn basis_size(&self) -> usize {
        self.knots.basis_size()
    }

    pub fn n_obs(&self) -> usize {
        self.ibasis.nrows()
    }

    pub fn transform_params(&self, lambda: Vec<f64>) -> Result<TransformParams> {
        TransformParams::new(self.lambda0, lambda, self.range_c, self.knots.clone())
    }

    /// Evaluates every term of the log marginal posterior. Domain violations
    /// give `-inf` in the offending prior; filter failures are errors.
    pub fn terms(&self, w: f64, lambda: &[f64]) -> Result<ObjectiveTerms> {
        let nb = self.basis_size();
        if lambda.len() != nb {
            return Err(Error::Config(format!("{} weights for {nb} basis functions", lambda.len())));
        }
        let mut terms = ObjectiveTerms {
            log_prior_w: log_prior_w(w, &self.h),
            log_prior_lambda: log_prior_lambda(lambda, &self.alpha, self.s_lambda, self.range_c, self.variant),
            ..Default::default()
        };
        if !terms.log_prior_w.is_finite() || !terms.log_prior_lambda.is_finite() {
            return Ok(terms);
        }
        let n = self.n_obs();
        if n == 0 {
            return Ok(terms);
        }
        let mut psi = vec![self.lambda0; n];
        for (b, &l) in lambda.iter().enumerate() {
            if l == 0.0 {
                continue;
            }
            for (v, i) in psi.iter_mut().zip(self.ibasis.column(b).iter()) {
                *v += l * i;
            }
        }
        let slopes = &self.mbasis * nalgebra::DVector::from_column_slice(lambda);
        for &s in slopes.iter() {
            if s < JACOBIAN_FLOOR {
                terms.floored += 1;
                terms.log_jacobian += JACOBIAN_FLOOR.ln();
            } else {
                terms.log_jacobian += s.ln();
            }
        }
        terms.log_likelihood = filter_log_density(&self.layout, &psi, w, &self.h)?;
        Ok(terms)
    }

    /// The log marginal posterior, `-inf` on any failure.
    pub fn log_marginal_posterior(&self, w: f64, lambda: &[f64]) -> f64 {
        match self.terms(w, lambda) {
            Ok(t) => {
                let v = t.total();
                if v.is_nan() { f64::NEG_INFINITY } else { v }
            }
            Err(e) => {
                log::debug!("objective rejected w={w}: {e}");
                f64::NEG_INFINITY
            }
        }
    }

    /// Number of free search coordinates.
    pub fn search_dim(&self) -> usize {
        match self.variant {
            PriorVariant::TruncatedNormal => 1 + self.basis_size(),
            PriorVariant::Dirichlet => self.basis_size(),
        }
    }

    /// Maps search coordinates to `(w, lambda)`. The truncated-normal chart
    /// is `(log w, log lambda_b)`; the Dirichlet chart is `log w` followed by
    /// `B - 1` softmax logits with the last fixed at zero.
    pub fn unpack(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let w = x[0].exp();
        let lambda = match self.variant {
            PriorVariant::TruncatedNormal => x[1..].iter().map(|v| v.exp()).collect(),
            PriorVariant::Dirichlet => {
                let mut logits: Vec<f64> = x[1..].to_vec();
                logits.push(0.0);
                let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
                let s: f64 = e.iter().sum();
                e.iter().map(|v| self.range_c * v / s).collect()
            }
        };
        (w, lambda)
    }

    /// Inverse of [`ObjectiveSpec::unpack`]; weights must be positive.
    pub fn pack(&self, w: f64, lambda: &[f64]) -> Vec<f64> {
        let mut x = vec![w.ln()];
        match self.variant {
            PriorVariant::TruncatedNormal => x.extend(lambda.iter().map(|l| l.ln())),
            PriorVariant::Dirichlet => {
                let last = lambda[lambda.len() - 1].ln();
                x.extend(lambda[..lambda.len() - 1].iter().map(|l| l.ln() - last));
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::run_filter;
    use crate::preprocess::{DatasetOptions, Mode, PeriodScheme, RawResult};
    use approx::assert_relative_eq;
    use chrono::NaiveDate;

    fn toy() -> Dataset {
        let mut rows = Vec::new();
        let mut s = 7u64;
        for t in 0..4 {
            for g in 0..3 {
                for a in 0..4 {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let u = (s >> 11) as f64 / (1u64 << 53) as f64;
                    rows.push(RawResult {
                        date: NaiveDate::from_ymd_opt(2001 + t, 3, 1 + g as u32).unwrap(),
                        game_id: format!("{t}-{g}"),
                        athlete_id: format!("a{}", (a + g) % 5),
                        score: 10.0 * u + a as f64,
                    });
                }
            }
        }
        Dataset::build(&rows, DatasetOptions::new(Mode::MultiCompetitor, PeriodScheme::Annual)).unwrap()
    }

    fn spec(d: &Dataset, t: usize) -> ObjectiveSpec {
        let knots = KnotConfig::from_values(&d.observations(), 3, 3).unwrap();
        ObjectiveSpec::new(d, t, knots, Hyperparams::default(), PriorVariant::TruncatedNormal).unwrap()
    }

    #[test]
    fn identity_matches_untransformed_filter() {
        let d = toy();
        let s = spec(&d, 3);
        let w = 0.3;
        let terms = s.terms(w, &s.identity.clone()).unwrap();
        let train = d.prefix(3);
        let direct = run_filter(&train.layout(), &train.observations(), w, &Hyperparams::default()).unwrap();
        assert_relative_eq!(terms.log_likelihood, direct.log_density, max_relative = 1e-7);
        assert!(terms.log_jacobian.abs() < 1e-6 * s.n_obs() as f64);
        assert_eq!(terms.log_prior_lambda, 0.0);
        assert_eq!(terms.floored, 0);
    }

    #[test]
    fn doubling_weights_recomputed() {
        let d = toy();
        let s = spec(&d, 4);
        let w = 0.7;
        let lam: Vec<f64> = s.identity.iter().enumerate().map(|(i, l)| l * (1.0 + 0.1 * i as f64)).collect();
        let dbl: Vec<f64> = lam.iter().map(|l| 2.0 * l).collect();
        let one = s.terms(w, &lam).unwrap();
        let two = s.terms(w, &dbl).unwrap();
        let n = s.n_obs() as f64;
        assert_relative_eq!(two.log_jacobian - one.log_jacobian, n * 2f64.ln(), max_relative = 1e-12);

        // independent recomputation of the likelihood on the doubled map
        let tp = s.transform_params(dbl.clone()).unwrap();
        let train = d.prefix(4);
        let psi: Vec<f64> = train.observations().iter().map(|&y| tp.transform(y)).collect();
        let ll = run_filter(&train.layout(), &psi, w, &Hyperparams::default()).unwrap().log_density;
        assert_relative_eq!(two.log_likelihood, ll, max_relative = 1e-10);
        let ss: f64 = dbl.iter().zip(&s.alpha).map(|(l, a)| (l - a).powi(2)).sum();
        assert_relative_eq!(two.log_prior_lambda, -0.5 * ss / s.s_lambda.powi(2), max_relative = 1e-12);
    }

    #[test]
    fn empty_training_set_is_priors_only() {
        let d = toy();
        let s = spec(&d, 0);
        let lam: Vec<f64> = s.identity.iter().map(|l| l * 1.5).collect();
        let t = s.terms(0.4, &lam).unwrap();
        assert_eq!(t.log_likelihood, 0.0);
        assert_eq!(t.log_jacobian, 0.0);
        assert_relative_eq!(t.total(), log_prior_w(0.4, &s.h) + t.log_prior_lambda);
    }

    #[test]
    fn deterministic() {
        let d = toy();
        let s = spec(&d, 4);
        let a = s.log_marginal_posterior(0.25, &s.identity);
        let b = s.log_marginal_posterior(0.25, &s.identity);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn prior_domains() {
        let h = Hyperparams::default();
        assert_eq!(log_prior_w(0.0, &h), f64::NEG_INFINITY);
        assert_eq!(log_prior_w(-1.0, &h), f64::NEG_INFINITY);
        assert_eq!(log_prior_lambda(&[1.0, -0.1], &[1.0, 1.0], 1.0, 1.0, PriorVariant::TruncatedNormal), f64::NEG_INFINITY);
        assert_eq!(log_prior_lambda(&[1.0, 2.0], &[1.0, 2.0], 1.0, 3.0, PriorVariant::TruncatedNormal), 0.0);
        // flat Dirichlet: constant anywhere on the scaled simplex
        let flat = [1.0; 3];
        let a = log_prior_lambda(&[1.0, 1.0, 4.0], &flat, 1.0, 6.0, PriorVariant::Dirichlet);
        let b = log_prior_lambda(&[3.0, 2.5, 0.5], &flat, 1.0, 6.0, PriorVariant::Dirichlet);
        assert_eq!(a, b);
        assert_eq!(log_prior_lambda(&[1.0, 1.0, 1.0], &flat, 1.0, 6.0, PriorVariant::Dirichlet), f64::NEG_INFINITY);
    }

    #[test]
    fn charts_round_trip() {
        let d = toy();
        let mut s = spec(&d, 4);
        let lam: Vec<f64> = s.identity.iter().map(|l| l * 1.3).collect();
        let (w, back) = s.unpack(&s.pack(0.2, &lam));
        assert_relative_eq!(w, 0.2, max_relative = 1e-14);
        for (a, b) in back.iter().zip(&lam) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        s.variant = PriorVariant::Dirichlet;
        let (_, simplex) = s.unpack(&s.pack(0.2, &s.identity.clone()));
        assert_relative_eq!(simplex.iter().sum::<f64>(), s.range_c, max_relative = 1e-12);
        for (a, b) in simplex.iter().zip(&s.identity) {
            assert_relative_eq!(a, b, max_relative = 1e-9);
        }
    }
}
