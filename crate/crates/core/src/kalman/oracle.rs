//! Reference multivariate Kalman filter / RTS smoother.
//!
//! Processes each observation row as a vector (rows of Λ and X deleted where
//! missing), smooths with the Rauch–Tung–Striebel recursion and obtains the
//! lag-one covariances from the Shumway–Stoffer backward recursion. It is
//! slow and exists to cross-check [`super::filter_smooth`].

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::SmootherOutput;
use crate::error::{DfmError, Result};
use crate::linalg;
use crate::panel::TimeSeriesPanel;
use crate::params::DfmParams;

pub fn multivariate_filter_smooth(
    panel: &TimeSeriesPanel,
    params: &DfmParams,
) -> Result<SmootherOutput> {
    params.validate(panel.p())?;
    let (n, p) = (panel.n(), panel.p());
    let r = params.num_factors();
    let a = &params.var_coef;
    let eye = DMatrix::<f64>::identity(r, r);

    // Index s = 0 is the pre-sample state; s = 1..=n are sample periods.
    let mut filt_mean = vec![params.init_mean.clone()];
    let mut filt_cov = vec![params.init_cov.clone()];
    let mut pred_mean = vec![DVector::zeros(r)];
    let mut pred_cov = vec![DMatrix::zeros(r, r)];
    let mut last_kz = DMatrix::zeros(r, r);
    let mut loglik = 0.0;

    for t in 0..n {
        let am = a * &filt_mean[t];
        let pm = a * &filt_cov[t] * a.transpose() + &params.state_cov;
        let obs: Vec<usize> = (0..p).filter(|&i| panel.is_observed(t, i)).collect();
        let (fm, fc, kz) = if obs.is_empty() {
            (am.clone(), pm.clone(), DMatrix::zeros(r, r))
        } else {
            let k = obs.len();
            let z = DMatrix::from_fn(k, r, |j, c| params.loadings[(obs[j], c)]);
            let x = DVector::from_fn(k, |j, _| panel.values()[(t, obs[j])]);
            let h = DMatrix::from_diagonal(&DVector::from_fn(k, |j, _| params.idio_var[obs[j]]));
            let f = &z * &pm * z.transpose() + h;
            let chol = f
                .clone()
                .cholesky()
                .ok_or_else(|| DfmError::Singular(format!("innovation covariance at t={}", t + 1)))?;
            let v = &x - &z * &am;
            let finv_v = chol.solve(&v);
            let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            loglik -= 0.5 * (k as f64 * (2.0 * PI).ln() + logdet + v.dot(&finv_v));
            // K = P Z^T F^{-1}
            let gain = chol.solve(&(&z * &pm)).transpose();
            let kz = &gain * &z;
            let fm = &am + &gain * v;
            let fc = linalg::symmetrise(&((&eye - &kz) * &pm));
            (fm, fc, kz)
        };
        pred_mean.push(am);
        pred_cov.push(pm);
        filt_mean.push(fm);
        filt_cov.push(fc);
        last_kz = kz;
    }

    // RTS smoother gains G_s = P_{s|s} A^T P_{s+1|s}^{-1}, s = 0..n-1.
    let mut gains = Vec::with_capacity(n);
    for s in 0..n {
        let inv = pred_cov[s + 1]
            .clone()
            .lu()
            .try_inverse()
            .ok_or_else(|| DfmError::Singular(format!("predicted covariance at t={}", s + 1)))?;
        gains.push(&filt_cov[s] * a.transpose() * inv);
    }
    let mut sm_mean = vec![DVector::zeros(r); n + 1];
    let mut sm_cov = vec![DMatrix::zeros(r, r); n + 1];
    sm_mean[n] = filt_mean[n].clone();
    sm_cov[n] = filt_cov[n].clone();
    for s in (0..n).rev() {
        let g = &gains[s];
        sm_mean[s] = &filt_mean[s] + g * (&sm_mean[s + 1] - &pred_mean[s + 1]);
        sm_cov[s] =
            linalg::symmetrise(&(&filt_cov[s] + g * (&sm_cov[s + 1] - &pred_cov[s + 1]) * g.transpose()));
    }

    // Shumway–Stoffer: lag[s] = Cov(F_s, F_{s-1} | Ω_n), s = 1..=n.
    let mut lag = vec![DMatrix::zeros(r, r); n + 1];
    if n >= 1 {
        lag[n] = (&eye - &last_kz) * a * &filt_cov[n - 1];
        for s in (2..=n).rev() {
            lag[s - 1] = &filt_cov[s - 1] * gains[s - 2].transpose()
                + &gains[s - 1] * (&lag[s] - a * &filt_cov[s - 1]) * gains[s - 2].transpose();
        }
    }

    let to_rows = |v: &[DVector<f64>]| DMatrix::from_fn(n, r, |t, c| v[t + 1][c]);
    Ok(SmootherOutput {
        smoothed_mean: to_rows(&sm_mean),
        smoothed_cov: sm_cov[1..].to_vec(),
        lag_cov: lag[1..].to_vec(),
        filtered_mean: to_rows(&filt_mean),
        filtered_cov: filt_cov[1..].to_vec(),
        predicted_mean: to_rows(&pred_mean),
        predicted_cov: pred_cov[1..].to_vec(),
        initial_mean: sm_mean[0].clone(),
        initial_cov: sm_cov[0].clone(),
        loglik,
    })
}
