//! Kalman filter with an unknown constant observation variance, and the
//! Rauch-Tung-Striebel smoother.
//!
//! Abilities follow `theta_t ~ N(theta_{t-1}, sigma^2 w I)` and transformed
//! observations `psi_t ~ N(X_t theta_t, sigma^2 I)`, with `sigma^2` given an
//! inverse-gamma prior. The filter carries `(m_t, V_t, a_t, b_t)` so that
//! `theta_t | data ~ N(m_t, sigma^2 V_t)` and `sigma^2 | data ~ IG(a_t, b_t)`.
//!
//! Two covariance representations are supported. The production path keeps
//! `V_t` diagonal: after each period's update off-diagonal entries are
//! dropped and variances are capped at `v0`. Each period is then updated in
//! information form over the athletes that played in it, which is exact with
//! respect to athletes appearing in several games of the same period. The
//! dense path (`exact_mode`) runs the un-approximated recursions and also
//! evaluates the precision form of the `b_t` update for cross-checking.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::fitting::density::log_mvt_from_parts;
use crate::linalg::{cholesky_jitter, log_det, symmetrize};

/// Model hyperparameters. `s_lambda` and `alpha` default to values derived
/// from the knot configuration when left unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub v0: f64,
    pub a0: f64,
    pub b0: f64,
    pub s_w: f64,
    pub s_lambda: Option<f64>,
    pub alpha: Option<Vec<f64>>,
    /// Sum of the Dirichlet concentration vector.
    pub dirichlet_concentration: f64,
    pub exact_mode: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            v0: 10.0,
            a0: 0.1,
            b0: 0.1,
            s_w: 1.0,
            s_lambda: None,
            alpha: None,
            dirichlet_concentration: 1.0,
            exact_mode: false,
        }
    }
}

impl Hyperparams {
    pub fn exact() -> Self {
        Self { exact_mode: true, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let scales = [
            ("v0", self.v0),
            ("a0", self.a0),
            ("b0", self.b0),
            ("s_w", self.s_w),
            ("dirichlet_concentration", self.dirichlet_concentration),
        ];
        for (name, v) in scales {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(s) = self.s_lambda {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("s_lambda must be positive, got {s}")));
            }
        }
        if let Some(alpha) = &self.alpha {
            if alpha.iter().any(|a| !(*a >= 0.0)) {
                return Err(Error::Config("alpha must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// How one game's observations load on abilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// One row per athlete: `e_i - mean` over the game's athletes.
    Centered,
    /// A single row: `+1` for the first athlete, `-1` for the second.
    Difference,
    /// One row per athlete loading only on that athlete (no centering).
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameBlock {
    pub athletes: Vec<usize>,
    pub design: Design,
    /// Position of the game's first observation in the flat value vector.
    pub offset: usize,
}

impl GameBlock {
    pub fn n_rows(&self) -> usize {
        match self.design {
            Design::Centered | Design::Direct => self.athletes.len(),
            Design::Difference => 1,
        }
    }

    /// Coefficient on the athlete in slot `j` for row `r`.
    pub fn coef(&self, r: usize, j: usize) -> f64 {
        match self.design {
            Design::Centered => {
                let n = self.athletes.len() as f64;
                f64::from(u8::from(r == j)) - 1.0 / n
            }
            Design::Difference => {
                if j == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Design::Direct => f64::from(u8::from(r == j)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PeriodBlock {
    pub games: Vec<GameBlock>,
}

impl PeriodBlock {
    pub fn n_obs(&self) -> usize {
        self.games.iter().map(GameBlock::n_rows).sum()
    }

    /// Dense `n_t x p` design matrix.
    pub fn design_matrix(&self, p: usize) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.n_obs(), p);
        let mut row = 0;
        for g in &self.games {
            for r in 0..g.n_rows() {
                for (j, &a) in g.athletes.iter().enumerate() {
                    x[(row, a)] += g.coef(r, j);
                }
                row += 1;
            }
        }
        x
    }

    fn values(&self, psi: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.n_obs(),
            self.games.iter().flat_map(|g| psi[g.offset..g.offset + g.n_rows()].iter().copied()),
        )
    }
}

/// Period-by-period design structure over a flat vector of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsLayout {
    pub p: usize,
    pub periods: Vec<PeriodBlock>,
}

impl ObsLayout {
    pub fn n_obs(&self) -> usize {
        self.periods.iter().map(PeriodBlock::n_obs).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// Diagonal with variances capped at `v0`.
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

impl Covariance {
    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diagonal(d) => d.len(),
            Covariance::Dense(m) => m.nrows(),
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        match self {
            Covariance::Diagonal(d) => d.clone(),
            Covariance::Dense(m) => m.diagonal(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            Covariance::Diagonal(d) => DMatrix::from_diagonal(d),
            Covariance::Dense(m) => m.clone(),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self, Covariance::Diagonal(_))
    }
}

/// Filtered posterior summary after period `t` (`t = 0` is the prior).
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub t: usize,
    pub m: DVector<f64>,
    pub v: Covariance,
    pub a: f64,
    pub b: f64,
}

impl FilterState {
    pub fn p(&self) -> usize {
        self.m.len()
    }

    /// Adds athletes never observed so far. Their state equals what the
    /// filter would hold had they been indexed from the start: zero mean and
    /// variance `v0 + t w`, capped at `v0` on the diagonal path.
    pub fn grow(&mut self, p: usize, w: f64, h: &Hyperparams) {
        let old = self.p();
        if p <= old {
            return;
        }
        let fresh = h.v0 + self.t as f64 * w;
        self.m = self.m.clone().resize_vertically(p, 0.0);
        self.v = match &self.v {
            Covariance::Diagonal(d) => {
                Covariance::Diagonal(d.clone().resize_vertically(p, fresh.min(h.v0)))
            }
            Covariance::Dense(m) => {
                let mut g = m.clone().resize(p, p, 0.0);
                for i in old..p {
                    g[(i, i)] = fresh;
                }
                Covariance::Dense(g)
            }
        };
    }
}

/// One-step predictive summary for a period's observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveStats {
    pub t: usize,
    /// `X_t m_{t-1}`.
    pub mean: DVector<f64>,
    pub observed: DVector<f64>,
    /// Diagonal of `I + X_t (V_{t-1} + w I) X_t^T`.
    pub scale_diag: DVector<f64>,
    /// Degrees of freedom `2 a_{t-1}`.
    pub df: f64,
    /// `b_{t-1} / a_{t-1}`, the factor on the predictive scale matrix.
    pub scale_factor: f64,
    /// `r^T (I + X (V + wI) X^T)^{-1} r` for residual `r`.
    pub quad_form: f64,
    pub log_det_scale: f64,
    pub log_density: f64,
    /// `b_t` from the precision form; dense path only.
    pub b_precision_form: Option<f64>,
}

impl PredictiveStats {
    pub fn residuals(&self) -> DVector<f64> {
        &self.observed - &self.mean
    }

    /// Residuals divided by their marginal predictive scale.
    pub fn standardized_residuals(&self) -> Vec<f64> {
        self.residuals()
            .iter()
            .zip(self.scale_diag.iter())
            .map(|(r, s)| r / (self.scale_factor * s).sqrt())
            .collect()
    }
}

pub fn init_state(p: usize, h: &Hyperparams) -> Result<FilterState> {
    if p == 0 {
        return Err(Error::Data("cannot filter an empty roster".into()));
    }
    let v = if h.exact_mode {
        Covariance::Dense(DMatrix::from_diagonal_element(p, p, h.v0))
    } else {
        Covariance::Diagonal(DVector::from_element(p, h.v0))
    };
    Ok(FilterState { t: 0, m: DVector::zeros(p), v, a: h.a0, b: h.b0 })
}

/// Advances the filter by one rating period.
pub fn filter_step(
    state: &FilterState,
    period: &PeriodBlock,
    psi: &[f64],
    w: f64,
    h: &Hyperparams,
) -> Result<(FilterState, PredictiveStats)> {
    let t = state.t + 1;
    let p = state.p();
    for g in &period.games {
        if let Some(&a) = g.athletes.iter().find(|&&a| a >= p) {
            return Err(Error::Data(format!("period {t}: athlete index {a} outside roster of {p}")));
        }
        let vals = &psi[g.offset..g.offset + g.n_rows()];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("period {t}: non-finite transformed score")));
        }
    }
    match &state.v {
        Covariance::Diagonal(v) => diagonal_step(state, v, period, psi, w, h),
        Covariance::Dense(v) => dense_step(state, v, period, psi, w),
    }
}

fn empty_stats(t: usize, state: &FilterState) -> PredictiveStats {
    PredictiveStats {
        t,
        mean: DVector::zeros(0),
        observed: DVector::zeros(0),
        scale_diag: DVector::zeros(0),
        df: 2.0 * state.a,
        scale_factor: state.b / state.a,
        quad_form: 0.0,
        log_det_scale: 0.0,
        log_density: 0.0,
        b_precision_form: Some(state.b),
    }
}

fn predictive_log_density(n: usize, prior: &FilterState, log_det_scale: f64, quad: f64) -> f64 {
    let ratio = prior.b / prior.a;
    log_mvt_from_parts(
        n,
        2.0 * prior.a,
        n as f64 * ratio.ln() + log_det_scale,
        quad / ratio,
    )
}

fn diagonal_step(
    state: &FilterState,
    v: &DVector<f64>,
    period: &PeriodBlock,
    psi: &[f64],
    w: f64,
    h: &Hyperparams,
) -> Result<(FilterState, PredictiveStats)> {
    let t = state.t + 1;
    let p = state.p();
    let prior_var: DVector<f64> = v.map(|x| x + w);
    let n_t = period.n_obs();
    if n_t == 0 {
        let next = FilterState {
            t,
            m: state.m.clone(),
            v: Covariance::Diagonal(prior_var.map(|x| x.min(h.v0))),
            a: state.a,
            b: state.b,
        };
        let mut stats = empty_stats(t, state);
        stats.b_precision_form = None;
        return Ok((next, stats));
    }

    let mut slot = vec![usize::MAX; p];
    let mut active = Vec::new();
    for g in &period.games {
        for &a in &g.athletes {
            if slot[a] == usize::MAX {
                slot[a] = active.len();
                active.push(a);
            }
        }
    }
    let k = active.len();
    let mut precision = DMatrix::zeros(k, k);
    for (j, &a) in active.iter().enumerate() {
        precision[(j, j)] = 1.0 / prior_var[a];
    }
    let mut xt_r = DVector::zeros(k);
    let mut rr = 0.0;
    let mut mean = DVector::zeros(n_t);
    let mut observed = DVector::zeros(n_t);
    let mut scale_diag = DVector::zeros(n_t);
    let mut row = 0;
    for g in &period.games {
        let vals = &psi[g.offset..g.offset + g.n_rows()];
        match g.design {
            Design::Centered => {
                let n = g.athletes.len();
                let inv_n = 1.0 / n as f64;
                let m_bar = g.athletes.iter().map(|&a| state.m[a]).sum::<f64>() * inv_n;
                let d_sum: f64 = g.athletes.iter().map(|&a| prior_var[a]).sum();
                let mut resid = Vec::with_capacity(n);
                for (i, &a) in g.athletes.iter().enumerate() {
                    let pred = state.m[a] - m_bar;
                    let r = vals[i] - pred;
                    mean[row + i] = pred;
                    observed[row + i] = vals[i];
                    scale_diag[row + i] =
                        1.0 + prior_var[a] * (1.0 - 2.0 * inv_n) + d_sum * inv_n * inv_n;
                    rr += r * r;
                    resid.push(r);
                }
                let r_bar = resid.iter().sum::<f64>() * inv_n;
                for (i, &ai) in g.athletes.iter().enumerate() {
                    let si = slot[ai];
                    xt_r[si] += resid[i] - r_bar;
                    for &aj in &g.athletes {
                        precision[(si, slot[aj])] -= inv_n;
                    }
                    precision[(si, si)] += 1.0;
                }
                row += n;
            }
            Design::Difference => {
                let (a, b) = (g.athletes[0], g.athletes[1]);
                let pred = state.m[a] - state.m[b];
                let r = vals[0] - pred;
                mean[row] = pred;
                observed[row] = vals[0];
                scale_diag[row] = 1.0 + prior_var[a] + prior_var[b];
                rr += r * r;
                let (sa, sb) = (slot[a], slot[b]);
                xt_r[sa] += r;
                xt_r[sb] -= r;
                precision[(sa, sa)] += 1.0;
                precision[(sb, sb)] += 1.0;
                precision[(sa, sb)] -= 1.0;
                precision[(sb, sa)] -= 1.0;
                row += 1;
            }
            Design::Direct => {
                for (i, &a) in g.athletes.iter().enumerate() {
                    let r = vals[i] - state.m[a];
                    mean[row + i] = state.m[a];
                    observed[row + i] = vals[i];
                    scale_diag[row + i] = 1.0 + prior_var[a];
                    rr += r * r;
                    xt_r[slot[a]] += r;
                    precision[(slot[a], slot[a])] += 1.0;
                }
                row += g.athletes.len();
            }
        }
    }

    let chol = cholesky_jitter(&precision).ok_or(Error::NotPositiveDefinite { period: t })?;
    let gain = chol.solve(&xt_r);
    let quad = (rr - xt_r.dot(&gain)).max(0.0);
    let log_det_scale =
        log_det(&chol) + active.iter().map(|&a| prior_var[a].ln()).sum::<f64>();
    // diag(Lambda^{-1}) = column sums of squares of L^{-1}
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(k, k))
        .ok_or(Error::NotPositiveDefinite { period: t })?;
    let post_var: Vec<f64> = (0..k).map(|j| l_inv.column(j).norm_squared()).collect();

    let mut m = state.m.clone();
    let mut var = prior_var.map(|x| x.min(h.v0));
    for (j, &a) in active.iter().enumerate() {
        m[a] += gain[j];
        let vj = post_var[j];
        if !(vj > 0.0) {
            return Err(Error::NotPositiveDefinite { period: t });
        }
        var[a] = vj.min(h.v0);
    }
    let log_density = predictive_log_density(n_t, state, log_det_scale, quad);
    let next = FilterState {
        t,
        m,
        v: Covariance::Diagonal(var),
        a: state.a + 0.5 * n_t as f64,
        b: state.b + 0.5 * quad,
    };
    let stats = PredictiveStats {
        t,
        mean,
        observed,
        scale_diag,
        df: 2.0 * state.a,
        scale_factor: state.b / state.a,
        quad_form: quad,
        log_det_scale,
        log_density,
        b_precision_form: None,
    };
    Ok((next, stats))
}

fn dense_step(
    state: &FilterState,
    v: &DMatrix<f64>,
    period: &PeriodBlock,
    psi: &[f64],
    w: f64,
) -> Result<(FilterState, PredictiveStats)> {
    let t = state.t + 1;
    let p = state.p();
    let mut prior_cov = v.clone();
    for i in 0..p {
        prior_cov[(i, i)] += w;
    }
    let n_t = period.n_obs();
    if n_t == 0 {
        let next = FilterState {
            t,
            m: state.m.clone(),
            v: Covariance::Dense(prior_cov),
            a: state.a,
            b: state.b,
        };
        return Ok((next, empty_stats(t, state)));
    }

    let x = period.design_matrix(p);
    let observed = period.values(psi);
    let mean = &x * &state.m;
    let resid = &observed - &mean;
    let pxt = &prior_cov * x.transpose();
    let mut scale = &x * &pxt;
    for i in 0..n_t {
        scale[(i, i)] += 1.0;
    }
    let chol = cholesky_jitter(&scale).ok_or(Error::NotPositiveDefinite { period: t })?;
    let quad = resid.dot(&chol.solve(&resid));
    let log_det_scale = log_det(&chol);
    // K = P X^T S^{-1}
    let gain = chol.solve(&pxt.transpose()).transpose();
    let m = &state.m + &gain * &resid;
    let mut post = &prior_cov - &gain * pxt.transpose();
    symmetrize(&mut post);

    // b_t = b_{t-1} + (m'P^{-1}m + psi'psi - m_t'V_t^{-1}m_t) / 2
    let prior_chol = cholesky_jitter(&prior_cov).ok_or(Error::NotPositiveDefinite { period: t })?;
    let post_chol = cholesky_jitter(&post).ok_or(Error::NotPositiveDefinite { period: t })?;
    let b_precision = state.b
        + 0.5
            * (state.m.dot(&prior_chol.solve(&state.m)) + observed.dot(&observed)
                - m.dot(&post_chol.solve(&m)));

    let scale_diag = scale.diagonal();
    let log_density = predictive_log_density(n_t, state, log_det_scale, quad);
    let next = FilterState {
        t,
        m,
        v: Covariance::Dense(post),
        a: state.a + 0.5 * n_t as f64,
        b: state.b + 0.5 * quad,
    };
    let stats = PredictiveStats {
        t,
        mean,
        observed,
        scale_diag,
        df: 2.0 * state.a,
        scale_factor: state.b / state.a,
        quad_form: quad,
        log_det_scale,
        log_density,
        b_precision_form: Some(b_precision),
    };
    Ok((next, stats))
}

/// Filter output: states for `t = 0..=T` and per-period predictive summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    pub w: f64,
    pub states: Vec<FilterState>,
    pub predictive: Vec<PredictiveStats>,
    pub log_density: f64,
}

impl FilterRun {
    pub fn last(&self) -> &FilterState {
        self.states.last().expect("filter run always holds the initial state")
    }

    pub fn n_periods(&self) -> usize {
        self.states.len() - 1
    }

    /// Continues the run over further periods.
    pub fn extend(&mut self, layout: &ObsLayout, psi: &[f64], h: &Hyperparams) -> Result<()> {
        for period in &layout.periods {
            let mut prev = self.last().clone();
            prev.grow(layout.p, self.w, h);
            let (next, stats) = filter_step(&prev, period, psi, self.w, h)?;
            self.log_density += stats.log_density;
            self.states.push(next);
            self.predictive.push(stats);
        }
        // bring earlier states to the current roster size
        let p = layout.p;
        let w = self.w;
        for s in &mut self.states {
            s.grow(p, w, h);
        }
        Ok(())
    }
}

pub fn run_filter(layout: &ObsLayout, psi: &[f64], w: f64, h: &Hyperparams) -> Result<FilterRun> {
    if psi.len() < layout.n_obs() {
        return Err(Error::Data(format!(
            "{} transformed values for {} observations",
            psi.len(),
            layout.n_obs()
        )));
    }
    let mut run = FilterRun {
        w,
        states: vec![init_state(layout.p, h)?],
        predictive: Vec::with_capacity(layout.periods.len()),
        log_density: 0.0,
    };
    run.extend(layout, psi, h)?;
    Ok(run)
}

/// Total log predictive density without retaining intermediate states.
pub fn filter_log_density(layout: &ObsLayout, psi: &[f64], w: f64, h: &Hyperparams) -> Result<f64> {
    let mut state = init_state(layout.p, h)?;
    let mut total = 0.0;
    for period in &layout.periods {
        let (next, stats) = filter_step(&state, period, psi, w, h)?;
        total += stats.log_density;
        state = next;
    }
    Ok(total)
}

/// Smoothed posterior of `theta_t` given all periods, up to the factor
/// `sigma^2` on the covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedState {
    pub t: usize,
    pub m: DVector<f64>,
    pub v: Covariance,
}

/// Backward pass over a filter run, returning states for `t = 1..=T`.
pub fn rts_smooth(run: &FilterRun, w: f64) -> Result<Vec<SmoothedState>> {
    if w != run.w {
        return Err(Error::Config(format!(
            "smoother innovation ratio {w} does not match the filter's {}",
            run.w
        )));
    }
    let n = run.n_periods();
    if n == 0 {
        return Ok(Vec::new());
    }
    let last = run.last();
    let mut out = vec![SmoothedState { t: last.t, m: last.m.clone(), v: last.v.clone() }];
    for state in run.states[1..n].iter().rev() {
        let next = out.last().unwrap();
        let smoothed = match (&state.v, &next.v) {
            (Covariance::Diagonal(v), Covariance::Diagonal(vs_next)) => {
                let mut m = state.m.clone();
                let mut vs = v.clone();
                for i in 0..v.len() {
                    let gain = v[i] / (v[i] + w);
                    m[i] += gain * (next.m[i] - state.m[i]);
                    vs[i] = v[i] + gain * gain * (vs_next[i] - v[i] - w);
                }
                SmoothedState { t: state.t, m, v: Covariance::Diagonal(vs) }
            }
            (Covariance::Dense(v), Covariance::Dense(vs_next)) => {
                let p = v.nrows();
                let mut pred = v.clone();
                for i in 0..p {
                    pred[(i, i)] += w;
                }
                let chol = cholesky_jitter(&pred)
                    .ok_or(Error::NotPositiveDefinite { period: state.t })?;
                // S = V (V + wI)^{-1}
                let gain = chol.solve(v).transpose();
                let m = &state.m + &gain * (&next.m - &state.m);
                let mut vs = v + &gain * (vs_next - &pred) * gain.transpose();
                symmetrize(&mut vs);
                SmoothedState { t: state.t, m, v: Covariance::Dense(vs) }
            }
            _ => return Err(Error::Config("mixed covariance representations".into())),
        };
        out.push(smoothed);
    }
    out.reverse();
    Ok(out)
}

/// Marginal posterior of one athlete's ability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbilitySummary {
    pub mean: f64,
    /// Student-t scale `sqrt(b / a * V_ii)`.
    pub scale: f64,
    /// Posterior standard deviation; `None` when `a <= 1` (infinite variance).
    pub sd: Option<f64>,
    pub lower: f64,
    pub upper: f64,
}

/// Per-athlete Student-t marginals with `2a` degrees of freedom and central
/// credible intervals of the given mass.
pub fn posterior_summary(
    m: &DVector<f64>,
    v_diag: &DVector<f64>,
    a: f64,
    b: f64,
    credible_mass: f64,
) -> Result<Vec<AbilitySummary>> {
    if !(0.0..1.0).contains(&credible_mass) {
        return Err(Error::Config(format!("credible mass {credible_mass} outside [0, 1)")));
    }
    let df = 2.0 * a;
    let quantile = if credible_mass == 0.0 {
        0.0
    } else {
        StudentsT::new(0.0, 1.0, df)
            .map_err(|e| Error::Config(e.to_string()))?
            .inverse_cdf(0.5 + 0.5 * credible_mass)
    };
    Ok(m.iter()
        .zip(v_diag.iter())
        .map(|(&mean, &v)| {
            let scale = (b / a * v).sqrt();
            let sd = (a > 1.0).then(|| scale * (df / (df - 2.0)).sqrt());
            AbilitySummary { mean, scale, sd, lower: mean - quantile * scale, upper: mean + quantile * scale }
        })
        .collect())
}
