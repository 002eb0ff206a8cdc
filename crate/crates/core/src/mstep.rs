//! Closed-form M-step updates given smoothed factor moments.
//!
//! Missing cells enter through the selection pattern `W_t` (the panel mask):
//! they drop out of the loading and variance sums, and contribute the
//! previous iteration's idiosyncratic variance to the Σ_ε update.

use nalgebra::{DMatrix, DVector};

use crate::error::{DfmError, Result};
use crate::kalman::SmootherOutput;
use crate::linalg;
use crate::panel::TimeSeriesPanel;
use crate::params::DfmParams;

/// Eigenvalue floor for Σ_u.
pub const STATE_COV_FLOOR: f64 = 1e-8;

/// Asymmetry above which the one-sided Σ_u form is replaced by the full
/// symmetric expansion.
const STATE_COV_ASYMMETRY_TOL: f64 = 1e-6;

/// Second-moment sums built from a smoother pass.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    /// `S_t = a_{t|n} a_{t|n}ᵀ + P_{t|n}` for `t = 0..=n` (index 0 is the pre-sample state).
    pub second_moments: Vec<DMatrix<f64>>,
    /// `S_{t,t-1} = a_{t|n} a_{t-1|n}ᵀ + P_{t,t-1|n}` for `t = 1..=n` (stored at `t - 1`).
    pub lag_moments: Vec<DMatrix<f64>>,
    /// `a_{t|n}` for `t = 1..=n`, one row each.
    pub means: DMatrix<f64>,
    /// `Σ_t W_t X_t a_{t|n}ᵀ` (`p × r`).
    pub cross: DMatrix<f64>,
}

impl SufficientStats {
    pub fn from_smoother(panel: &TimeSeriesPanel, out: &SmootherOutput) -> Self {
        let (n, p) = (panel.n(), panel.p());
        let r = out.r();
        let mut second_moments = Vec::with_capacity(n + 1);
        let a0 = &out.initial_mean;
        second_moments.push(a0 * a0.transpose() + &out.initial_cov);
        let mut lag_moments = Vec::with_capacity(n);
        let mut prev = a0.clone();
        let mut cross = DMatrix::zeros(p, r);
        for t in 0..n {
            let at = out.smoothed_state(t);
            second_moments.push(&at * at.transpose() + &out.smoothed_cov[t]);
            lag_moments.push(&at * prev.transpose() + &out.lag_cov[t]);
            for i in 0..p {
                if let Some(x) = panel.get(t, i) {
                    for k in 0..r {
                        cross[(i, k)] += x * at[k];
                    }
                }
            }
            prev = at;
        }
        Self { second_moments, lag_moments, means: out.smoothed_mean.clone(), cross }
    }

    pub fn n(&self) -> usize {
        self.lag_moments.len()
    }

    pub fn r(&self) -> usize {
        self.cross.ncols()
    }

    /// `S_t` for sample period `t` (zero-based).
    pub fn sample_moment(&self, t: usize) -> &DMatrix<f64> {
        &self.second_moments[t + 1]
    }

    /// Per-series Gram matrices `Σ_{t : X_{t,i} observed} S_t`.
    pub fn series_gram(&self, panel: &TimeSeriesPanel) -> Vec<DMatrix<f64>> {
        let r = self.r();
        let mut grams = vec![DMatrix::zeros(r, r); panel.p()];
        for t in 0..self.n() {
            let s = self.sample_moment(t);
            for (i, g) in grams.iter_mut().enumerate() {
                if panel.is_observed(t, i) {
                    *g += s;
                }
            }
        }
        grams
    }
}

/// `α₀ = a_{0|n}`, `P₀ = P_{0|n}`.
pub fn update_init(out: &SmootherOutput) -> (DVector<f64>, DMatrix<f64>) {
    (out.initial_mean.clone(), linalg::symmetrise(&out.initial_cov))
}

/// `Â = (Σ_t S_{t,t-1}) (Σ_t S_{t-1})⁻¹`.
pub fn update_var_coef(stats: &SufficientStats) -> Result<DMatrix<f64>> {
    let n = stats.n();
    let r = stats.r();
    let mut gram = DMatrix::zeros(r, r);
    let mut lag = DMatrix::zeros(r, r);
    for t in 0..n {
        gram += &stats.second_moments[t];
        lag += &stats.lag_moments[t];
    }
    linalg::right_solve_spd(&lag, &gram, "lagged factor Gram matrix is singular; try fewer factors")
        .map_err(|_| {
            DfmError::Singular("lagged factor Gram matrix is singular; try fewer factors".into())
        })
}

/// Spectral radius a VAR update may not reach when stationarity is enforced.
pub const MAX_SPECTRAL_RADIUS: f64 = 0.999;

/// Step from a stationary `prev` towards `target` by the largest factor in
/// `1, ½, ¼, …` whose result has spectral radius below
/// [`MAX_SPECTRAL_RADIUS`]. The expected log-likelihood is concave in `A`, so
/// every partial step is at least as good as `prev`.
pub fn stationary_step(prev: &DMatrix<f64>, target: &DMatrix<f64>) -> DMatrix<f64> {
    if linalg::spectral_radius(target) < MAX_SPECTRAL_RADIUS
        || linalg::spectral_radius(prev) >= MAX_SPECTRAL_RADIUS
    {
        return target.clone();
    }
    let mut step = 0.5;
    for _ in 0..40 {
        let candidate = prev + (target - prev) * step;
        if linalg::spectral_radius(&candidate) < MAX_SPECTRAL_RADIUS {
            return candidate;
        }
        step *= 0.5;
    }
    prev.clone()
}

/// `Σ̂_u = n⁻¹ Σ_t (S_t − Â S_{t-1,t})`, symmetrised and eigenvalue-floored.
pub fn update_state_cov(stats: &SufficientStats, a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = stats.n();
    let r = stats.r();
    let mut s_cur = DMatrix::zeros(r, r);
    let mut s_prev = DMatrix::zeros(r, r);
    let mut s_lag = DMatrix::zeros(r, r);
    for t in 0..n {
        s_cur += &stats.second_moments[t + 1];
        s_prev += &stats.second_moments[t];
        s_lag += &stats.lag_moments[t];
    }
    let nf = n as f64;
    let one_sided = (&s_cur - a * s_lag.transpose()) / nf;
    let cov = if linalg::asymmetry(&one_sided) > STATE_COV_ASYMMETRY_TOL {
        (&s_cur - a * s_lag.transpose() - &s_lag * a.transpose() + a * &s_prev * a.transpose()) / nf
    } else {
        one_sided
    };
    linalg::floor_eigenvalues(&cov, STATE_COV_FLOOR)
}

/// Expected innovation scatter `n⁻¹ Σ_t E[(F_t − A F_{t-1})(F_t − A F_{t-1})ᵀ]`.
pub fn innovation_scatter(stats: &SufficientStats, a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = stats.n();
    let r = stats.r();
    let mut s_cur = DMatrix::zeros(r, r);
    let mut s_prev = DMatrix::zeros(r, r);
    let mut s_lag = DMatrix::zeros(r, r);
    for t in 0..n {
        s_cur += &stats.second_moments[t + 1];
        s_prev += &stats.second_moments[t];
        s_lag += &stats.lag_moments[t];
    }
    let m = (&s_cur - a * s_lag.transpose() - &s_lag * a.transpose() + a * &s_prev * a.transpose()) / n as f64;
    linalg::symmetrise(&m)
}

/// The `Σ_u` terms of the expected complete-data log-likelihood, per period:
/// `−½ (log|Σ_u| + tr(Σ_u⁻¹ M))`. `−∞` if `Σ_u` is not positive definite.
pub fn state_cov_score(scatter: &DMatrix<f64>, state_cov: &DMatrix<f64>) -> f64 {
    match state_cov.clone().cholesky() {
        Some(chol) => {
            let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            -0.5 * (logdet + (chol.inverse() * scatter).trace())
        }
        None => f64::NEG_INFINITY,
    }
}

/// Expected complete-data log-likelihood terms involving `(A, Σ_u)`.
pub fn state_score(stats: &SufficientStats, a: &DMatrix<f64>, state_cov: &DMatrix<f64>) -> f64 {
    stats.n() as f64 * state_cov_score(&innovation_scatter(stats, a), state_cov)
}

/// `(D⁻¹ A D, D⁻¹ Σ_u D⁻¹)` with `D² = diag(Γ)`, `Γ` the stationary factor
/// covariance, so the result has unit-variance factors. `None` if `A` is not
/// stationary.
pub fn unit_variance_form(a: &DMatrix<f64>, state_cov: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let gamma = linalg::discrete_lyapunov(a, state_cov).ok()?;
    let d = gamma.diagonal().map(f64::sqrt);
    if d.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return None;
    }
    let r = a.nrows();
    let a_n = DMatrix::from_fn(r, r, |i, j| a[(i, j)] * d[j] / d[i]);
    let s_n = DMatrix::from_fn(r, r, |i, j| state_cov[(i, j)] / (d[i] * d[j]));
    Some((a_n, linalg::symmetrise(&s_n)))
}

/// `(A, Σ_u)` update restricted to unit stationary factor variances. Steps
/// `1, ½, ¼, …` from the previous values towards the unrestricted optimum
/// are mapped to unit-variance form; the first that does not lower the
/// expected log-likelihood is taken, otherwise the previous values stay.
pub fn update_state_unit_variance(
    stats: &SufficientStats,
    unrestricted_a: &DMatrix<f64>,
    unrestricted_cov: &DMatrix<f64>,
    prev_a: &DMatrix<f64>,
    prev_cov: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let baseline = state_score(stats, prev_a, prev_cov);
    let mut step = 1.0;
    for _ in 0..UNIT_VARIANCE_HALVINGS {
        let a = prev_a + (unrestricted_a - prev_a) * step;
        let cov = prev_cov + (unrestricted_cov - prev_cov) * step;
        if let Some((a, cov)) = unit_variance_form(&a, &cov) {
            if state_score(stats, &a, &cov) >= baseline {
                return (a, cov);
            }
        }
        step *= 0.5;
    }
    (prev_a.clone(), prev_cov.clone())
}

const UNIT_VARIANCE_HALVINGS: usize = 30;

/// Idiosyncratic variance update; missing cells carry `prev_idio` through.
pub fn update_idio_var(
    panel: &TimeSeriesPanel,
    loadings: &DMatrix<f64>,
    stats: &SufficientStats,
    prev_idio: &DVector<f64>,
    floor: f64,
) -> DVector<f64> {
    let (n, p) = (panel.n(), panel.p());
    let mut acc = DVector::<f64>::zeros(p);
    for t in 0..n {
        let s = stats.sample_moment(t);
        let at = stats.means.row(t);
        for i in 0..p {
            let lam = loadings.row(i);
            acc[i] += match panel.get(t, i) {
                Some(x) => {
                    let fitted = lam.dot(&at);
                    let quad = (lam * s).dot(&lam);
                    x * x - 2.0 * x * fitted + quad
                }
                None => prev_idio[i],
            };
        }
    }
    acc.map(|v: f64| (v / n as f64).max(floor))
}

/// Expected complete-data log-likelihood at `params`, given smoothed moments
/// and the previous-iteration idiosyncratic variances used for missing cells.
/// Constant `log 2π` terms are omitted.
pub fn expected_complete_loglik(
    panel: &TimeSeriesPanel,
    params: &DfmParams,
    stats: &SufficientStats,
    initial: (&DVector<f64>, &DMatrix<f64>),
    prev_idio: &DVector<f64>,
) -> f64 {
    let n = stats.n();
    let a = &params.var_coef;
    let (a0, p0n) = initial;

    let ln_det = |m: &DMatrix<f64>| -> f64 {
        match m.clone().cholesky() {
            Some(c) => 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
            None => f64::NEG_INFINITY,
        }
    };
    let trace_inv = |m: &DMatrix<f64>, e: &DMatrix<f64>| -> f64 {
        m.clone().cholesky().map(|c| c.solve(e).trace()).unwrap_or(f64::INFINITY)
    };

    let d0 = a0 - &params.init_mean;
    let e0 = p0n + &d0 * d0.transpose();
    let mut q = -0.5 * ln_det(&params.init_cov) - 0.5 * trace_inv(&params.init_cov, &e0);

    let mut eu = DMatrix::zeros(a.nrows(), a.nrows());
    for t in 0..n {
        let sl = &stats.lag_moments[t];
        eu += &stats.second_moments[t + 1] - a * sl.transpose() - sl * a.transpose()
            + a * &stats.second_moments[t] * a.transpose();
    }
    q += -0.5 * n as f64 * ln_det(&params.state_cov) - 0.5 * trace_inv(&params.state_cov, &eu);

    for i in 0..panel.p() {
        let lam = params.loadings.row(i);
        let s2 = params.idio_var[i];
        let mut sum = 0.0;
        for t in 0..n {
            sum += match panel.get(t, i) {
                Some(x) => {
                    x * x - 2.0 * x * lam.dot(&stats.means.row(t))
                        + (lam * stats.sample_moment(t)).dot(&lam)
                }
                None => prev_idio[i],
            };
        }
        q += -0.5 * n as f64 * s2.ln() - 0.5 * sum / s2;
    }
    q
}
