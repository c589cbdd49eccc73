//! Brute-force joint-Gaussian oracle for the filter and smoother.
//!
//! Stacks `theta_1..theta_T` into one vector with the random-walk prior
//! covariance `(v0 + min(s, t) w) I` (all scale-free, i.e. divided by
//! `sigma^2`) and conditions on the stacked observations directly.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use scoredlm::filter::{Design, GameBlock, ObsLayout, PeriodBlock};

pub struct Oracle {
    pub p: usize,
    pub periods: usize,
    pub v0: f64,
    pub w: f64,
    pub a0: f64,
    pub b0: f64,
    /// Stacked design, rows grouped by period.
    pub x: DMatrix<f64>,
    pub psi: DVector<f64>,
    /// Number of rows per period.
    pub rows: Vec<usize>,
}

pub struct Posterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub a: f64,
    pub b: f64,
    pub log_marginal: f64,
}

impl Oracle {
    pub fn new(layout: &ObsLayout, psi: &[f64], v0: f64, w: f64, a0: f64, b0: f64) -> Self {
        let p = layout.p;
        let periods = layout.periods.len();
        let rows: Vec<usize> = layout.periods.iter().map(|pb| pb.n_obs()).collect();
        let n: usize = rows.iter().sum();
        let mut x = DMatrix::zeros(n, p * periods);
        let mut r0 = 0;
        for (t, pb) in layout.periods.iter().enumerate() {
            let xt = pb.design_matrix(p);
            for i in 0..xt.nrows() {
                for j in 0..p {
                    x[(r0 + i, t * p + j)] = xt[(i, j)];
                }
            }
            r0 += xt.nrows();
        }
        Self { p, periods, v0, w, a0, b0, x, psi: DVector::from_column_slice(&psi[..n]), rows }
    }

    fn prior_cov(&self) -> DMatrix<f64> {
        let d = self.p * self.periods;
        let mut c = DMatrix::zeros(d, d);
        for s in 0..self.periods {
            for t in 0..self.periods {
                let v = self.v0 + (s.min(t) + 1) as f64 * self.w;
                for i in 0..self.p {
                    c[(s * self.p + i, t * self.p + i)] = v;
                }
            }
        }
        c
    }

    /// Joint posterior of all stacked abilities given the first `upto`
    /// periods of observations.
    pub fn condition(&self, upto: usize) -> Posterior {
        let n: usize = self.rows[..upto].iter().sum();
        let c = self.prior_cov();
        let x = self.x.rows(0, n).into_owned();
        let y = self.psi.rows(0, n).into_owned();
        let s = &x * &c * x.transpose() + DMatrix::identity(n, n);
        let s_inv = s.clone().try_inverse().unwrap();
        let cxt = &c * x.transpose();
        let mean = &cxt * &s_inv * &y;
        let cov = &c - &cxt * &s_inv * cxt.transpose();
        let quad = y.dot(&(&s_inv * &y));
        let a = self.a0 + 0.5 * n as f64;
        let b = self.b0 + 0.5 * quad;
        // marginal of y: multivariate t, df 2 a0, scale (b0 / a0) S
        let df = 2.0 * self.a0;
        let nf = n as f64;
        let ratio = self.b0 / self.a0;
        let log_marginal = if n == 0 {
            0.0
        } else {
            statrs::function::gamma::ln_gamma(0.5 * (df + nf))
                - statrs::function::gamma::ln_gamma(0.5 * df)
                - 0.5 * nf * (df * std::f64::consts::PI).ln()
                - 0.5 * (nf * ratio.ln() + s.determinant().ln())
                - 0.5 * (df + nf) * (1.0 + quad / ratio / df).ln()
        };
        Posterior { mean, cov, a, b, log_marginal }
    }

    /// Marginal `(mean, cov)` block for period `t` (1-based).
    pub fn block(&self, post: &Posterior, t: usize) -> (DVector<f64>, DMatrix<f64>) {
        let o = (t - 1) * self.p;
        (
            post.mean.rows(o, self.p).into_owned(),
            post.cov.view((o, o), (self.p, self.p)).into_owned(),
        )
    }
}

/// Deterministic small instance: `p` athletes over `periods` periods with a
/// mix of centered and difference designs.
pub fn small_instance(p: usize, periods: usize, seed: u64, with_h2h: bool) -> (ObsLayout, Vec<f64>) {
    let mut state = seed.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut offset = 0;
    let mut psi = Vec::new();
    let mut blocks = Vec::new();
    for t in 0..periods {
        let mut games = Vec::new();
        // a game with everyone
        let mut athletes: Vec<usize> = (0..p).collect();
        athletes.rotate_left(t % p);
        for _ in 0..p {
            psi.push(4.0 * next() - 2.0);
        }
        games.push(GameBlock { athletes: athletes.clone(), design: Design::Centered, offset });
        offset += p;
        if with_h2h && p >= 2 {
            games.push(GameBlock { athletes: vec![athletes[1], athletes[0]], design: Design::Difference, offset });
            psi.push(6.0 * next() - 3.0);
            offset += 1;
        }
        blocks.push(PeriodBlock { games });
    }
    (ObsLayout { p, periods: blocks }, psi)
}
