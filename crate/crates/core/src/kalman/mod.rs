//! Kalman filtering and smoothing for the exact factor model.
//!
//! Because Σ_ε is diagonal, each observation row is processed one scalar at
//! a time (the univariate treatment): every measurement update is a rank-one
//! correction with a scalar innovation variance, and only the transition
//! step is multivariate. Missing cells are simply skipped.

pub mod oracle;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{DfmError, Result};
use crate::linalg;
use crate::panel::TimeSeriesPanel;
use crate::params::{DfmParams, DEFAULT_VARIANCE_FLOOR};

/// Eigenvalue floor used when inverting `P_{t|t-1}` for the lag-one covariance.
pub const PREDICTED_COV_EIG_FLOOR: f64 = 1e-10;

/// Output of the forward/backward pass.
///
/// Time index `t` in the matrices below is zero-based and refers to the
/// sample periods `1..=n`; the pre-sample state `F_0` is reported separately.
#[derive(Debug, Clone)]
pub struct SmootherOutput {
    /// `a_{t|n}`, one row per period (`n × r`).
    pub smoothed_mean: DMatrix<f64>,
    /// `P_{t|n}`.
    pub smoothed_cov: Vec<DMatrix<f64>>,
    /// `P_{t,t-1|n}`; entry 0 is the covariance with the pre-sample state.
    pub lag_cov: Vec<DMatrix<f64>>,
    /// `a_{t,p+1}`, i.e. `a_{t|t}`.
    pub filtered_mean: DMatrix<f64>,
    /// `P_{t,p+1}`, i.e. `P_{t|t}`.
    pub filtered_cov: Vec<DMatrix<f64>>,
    /// `a_{t,1}`, i.e. `a_{t|t-1}`.
    pub predicted_mean: DMatrix<f64>,
    /// `P_{t,1}`, i.e. `P_{t|t-1}`.
    pub predicted_cov: Vec<DMatrix<f64>>,
    /// `a_{0|n}`.
    pub initial_mean: DVector<f64>,
    /// `P_{0|n}`.
    pub initial_cov: DMatrix<f64>,
    /// Observed-data Gaussian log-likelihood (prediction-error decomposition).
    pub loglik: f64,
}

impl SmootherOutput {
    pub fn n(&self) -> usize {
        self.smoothed_mean.nrows()
    }

    pub fn r(&self) -> usize {
        self.smoothed_mean.ncols()
    }

    pub fn smoothed_state(&self, t: usize) -> DVector<f64> {
        self.smoothed_mean.row(t).transpose()
    }

    pub fn filtered_state(&self, t: usize) -> DVector<f64> {
        self.filtered_mean.row(t).transpose()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KalmanOptions {
    /// Scalar updates with innovation variance at or below this are skipped.
    pub skip_threshold: f64,
}

impl Default for KalmanOptions {
    fn default() -> Self {
        Self { skip_threshold: DEFAULT_VARIANCE_FLOOR * 1e-3 }
    }
}

/// One retained scalar measurement update.
struct ScalarUpdate {
    series: usize,
    innovation: f64,
    innovation_var: f64,
}

/// Working state of the sequential measurement update.
#[derive(Debug, Clone)]
pub struct UnivariateFilterScratch {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub innovation: f64,
    pub innovation_var: f64,
    pub gain: DVector<f64>,
}

impl UnivariateFilterScratch {
    fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        let r = mean.len();
        Self { mean, cov, innovation: 0.0, innovation_var: 0.0, gain: DVector::zeros(r) }
    }

    /// Absorb observation `x` with loading row `lambda` and noise variance
    /// `sigma2`. Returns `false` (leaving the state unchanged) when the
    /// innovation variance is at or below `skip`.
    fn update(
        &mut self,
        x: f64,
        lambda: &DVector<f64>,
        sigma2: f64,
        skip: f64,
        t: usize,
        series: usize,
    ) -> Result<bool> {
        let pl = &self.cov * lambda;
        let c = lambda.dot(&pl) + sigma2;
        if c < 0.0 {
            return Err(DfmError::NegativeInnovationVariance { t, series, value: c });
        }
        if c <= skip {
            return Ok(false);
        }
        let v = x - lambda.dot(&self.mean);
        self.gain = pl / c;
        self.mean.axpy(v, &self.gain, 1.0);
        // P - K C K^T
        self.cov.ger(-c, &self.gain, &self.gain, 1.0);
        self.innovation = v;
        self.innovation_var = c;
        Ok(true)
    }
}

fn check_inputs(panel: &TimeSeriesPanel, params: &DfmParams) -> Result<()> {
    params.validate(panel.p())?;
    if panel.values().iter().any(|v| !v.is_finite()) {
        return Err(DfmError::NonFinite("panel values".into()));
    }
    Ok(())
}

/// Univariate Kalman filter and smoother with default options.
pub fn filter_smooth(panel: &TimeSeriesPanel, params: &DfmParams) -> Result<SmootherOutput> {
    filter_smooth_with(panel, params, KalmanOptions::default())
}

pub fn filter_smooth_with(
    panel: &TimeSeriesPanel,
    params: &DfmParams,
    opts: KalmanOptions,
) -> Result<SmootherOutput> {
    check_inputs(panel, params)?;
    let (n, p) = (panel.n(), panel.p());
    let r = params.num_factors();
    let a_mat = &params.var_coef;
    let a_t = a_mat.transpose();
    let rows: Vec<DVector<f64>> =
        (0..p).map(|i| params.loadings.row(i).transpose()).collect();

    let mut predicted_mean = DMatrix::zeros(n, r);
    let mut filtered_mean = DMatrix::zeros(n, r);
    let mut predicted_cov = Vec::with_capacity(n);
    let mut filtered_cov = Vec::with_capacity(n);
    let mut updates: Vec<Vec<ScalarUpdate>> = Vec::with_capacity(n);
    // Gains stored flat, r entries per retained update, in update order.
    let mut gains: Vec<f64> = Vec::new();
    let mut loglik = 0.0;
    let log2pi = (2.0 * PI).ln();

    let mut mean = a_mat * &params.init_mean;
    let mut cov = a_mat * &params.init_cov * &a_t + &params.state_cov;
    linalg::symmetrise_in_place(&mut cov);

    for t in 0..n {
        predicted_mean.set_row(t, &mean.transpose());
        predicted_cov.push(cov.clone());
        let mut scratch = UnivariateFilterScratch::new(mean, cov);
        let mut row_updates = Vec::new();
        for i in 0..p {
            let Some(x) = panel.get(t, i) else { continue };
            if scratch.update(x, &rows[i], params.idio_var[i], opts.skip_threshold, t, i)? {
                let (v, c) = (scratch.innovation, scratch.innovation_var);
                loglik -= 0.5 * (log2pi + c.ln() + v * v / c);
                gains.extend_from_slice(scratch.gain.as_slice());
                row_updates.push(ScalarUpdate { series: i, innovation: v, innovation_var: c });
            }
        }
        updates.push(row_updates);
        let UnivariateFilterScratch { mean: fm, cov: mut fc, .. } = scratch;
        linalg::symmetrise_in_place(&mut fc);
        filtered_mean.set_row(t, &fm.transpose());
        mean = a_mat * &fm;
        cov = a_mat * &fc * &a_t + &params.state_cov;
        linalg::symmetrise_in_place(&mut cov);
        filtered_cov.push(fc);
    }
    if !loglik.is_finite() {
        return Err(DfmError::NonFinite("log-likelihood".into()));
    }

    // Backward pass: b_{t,i-1} = λ_i v / C + L^T b_{t,i},
    //                J_{t,i-1} = λ_i λ_i^T / C + L^T J_{t,i} L,  L = I - K λ_i^T.
    let mut smoothed_mean = DMatrix::zeros(n, r);
    let mut smoothed_cov = vec![DMatrix::zeros(r, r); n];
    let mut b = DVector::<f64>::zeros(r);
    let mut jm = DMatrix::<f64>::zeros(r, r);
    let mut gain_end = gains.len();
    for t in (0..n).rev() {
        for upd in updates[t].iter().rev() {
            let k = DVector::from_column_slice(&gains[gain_end - r..gain_end]);
            gain_end -= r;
            let lam = &rows[upd.series];
            let c = upd.innovation_var;
            let kb = k.dot(&b);
            b.axpy(upd.innovation / c - kb, lam, 1.0);
            let w = &jm * &k;
            let s = k.dot(&w);
            jm.ger(-1.0, lam, &w, 1.0);
            jm.ger(-1.0, &w, lam, 1.0);
            jm.ger(s + 1.0 / c, lam, lam, 1.0);
        }
        linalg::symmetrise_in_place(&mut jm);
        let pp = &predicted_cov[t];
        let am = predicted_mean.row(t).transpose() + pp * &b;
        smoothed_mean.set_row(t, &am.transpose());
        let mut pm = pp - pp * &jm * pp;
        linalg::symmetrise_in_place(&mut pm);
        smoothed_cov[t] = pm;
        b = &a_t * &b;
        jm = &a_t * &jm * a_mat;
    }
    debug_assert_eq!(gain_end, 0);
    let initial_mean = &params.init_mean + &params.init_cov * &b;
    let mut initial_cov = &params.init_cov - &params.init_cov * &jm * &params.init_cov;
    linalg::symmetrise_in_place(&mut initial_cov);

    let mut out = SmootherOutput {
        smoothed_mean,
        smoothed_cov,
        lag_cov: Vec::new(),
        filtered_mean,
        filtered_cov,
        predicted_mean,
        predicted_cov,
        initial_mean,
        initial_cov,
        loglik,
    };
    out.lag_cov = lag_one_cov(&out, params)?;
    Ok(out)
}

/// Lag-one smoothed cross-covariances by De Jong's identity
/// `P_{t,t-1|n} = P_{t|n} P_{t|t-1}^{-1} A P_{t-1|t-1}`, with `P_{0|0} = P₀`.
pub fn lag_one_cov(out: &SmootherOutput, params: &DfmParams) -> Result<Vec<DMatrix<f64>>> {
    let n = out.smoothed_cov.len();
    let mut lag = Vec::with_capacity(n);
    for t in 0..n {
        let prev_filtered = if t == 0 { &params.init_cov } else { &out.filtered_cov[t - 1] };
        let inv = linalg::floored_sym_inverse(&out.predicted_cov[t], PREDICTED_COV_EIG_FLOOR);
        let m = &out.smoothed_cov[t] * inv * &params.var_coef * prev_filtered;
        if !linalg::is_finite(&m) {
            return Err(DfmError::Singular(format!("predicted covariance at t={}", t + 1)));
        }
        lag.push(m);
    }
    Ok(lag)
}

/// h-step-ahead forecast moments.
#[derive(Debug, Clone)]
pub struct Forecast {
    /// `h × r` factor means.
    pub factor_mean: DMatrix<f64>,
    pub factor_cov: Vec<DMatrix<f64>>,
    /// `h × p` observation means (modelling scale).
    pub obs_mean: DMatrix<f64>,
    /// `h × p` observation variances `diag(Λ P Λᵀ) + σ²_ε`.
    pub obs_var: DMatrix<f64>,
}

/// Propagate a filtered state `horizon` steps through the factor VAR.
pub fn forecast(
    params: &DfmParams,
    state: &DVector<f64>,
    state_cov: &DMatrix<f64>,
    horizon: usize,
) -> Result<Forecast> {
    let r = params.num_factors();
    let p = params.num_series();
    if horizon == 0 {
        return Err(DfmError::InvalidConfig("forecast horizon must be at least 1".into()));
    }
    if state.len() != r || state_cov.shape() != (r, r) {
        return Err(DfmError::Dimension("forecast state does not match factor count".into()));
    }
    let mut factor_mean = DMatrix::zeros(horizon, r);
    let mut obs_mean = DMatrix::zeros(horizon, p);
    let mut obs_var = DMatrix::zeros(horizon, p);
    let mut factor_cov = Vec::with_capacity(horizon);
    let mut m = state.clone();
    let mut pc = state_cov.clone();
    for h in 0..horizon {
        m = &params.var_coef * m;
        pc = &params.var_coef * pc * params.var_coef.transpose() + &params.state_cov;
        linalg::symmetrise_in_place(&mut pc);
        factor_mean.set_row(h, &m.transpose());
        let lm = &params.loadings * &m;
        let lp = &params.loadings * &pc;
        for i in 0..p {
            obs_mean[(h, i)] = lm[i];
            obs_var[(h, i)] = lp.row(i).dot(&params.loadings.row(i)) + params.idio_var[i];
        }
        factor_cov.push(pc.clone());
    }
    Ok(Forecast { factor_mean, factor_cov, obs_mean, obs_var })
}
