//! Hyperparameter selection.
//!
//! The number of factors is chosen with a Bai–Ng style information criterion
//! on quick PCA estimates; the ℓ₁ weight by BIC over a log-spaced grid, with
//! each grid point warm-started from the previous one and the search cut off
//! once some factor loses all of its loadings.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::em::{self, FitResult};
use crate::error::{DfmError, Result};
use crate::linalg;
use crate::panel::TimeSeriesPanel;
use crate::params::FitConfig;

/// Width of the centred moving window applied to median-filled cells.
pub const IC_SMOOTHING_WINDOW: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for AlphaGrid {
    fn default() -> Self {
        Self { min: 1e-3, max: 1e2, points: 20 }
    }
}

impl AlphaGrid {
    /// Ascending log-spaced values from `min` to `max` inclusive.
    pub fn values(&self) -> Result<Vec<f64>> {
        if self.points < 2 || !(self.min > 0.0) || !(self.max > self.min) {
            return Err(DfmError::InvalidConfig(
                "alpha grid needs at least two points and 0 < min < max".into(),
            ));
        }
        let (lo, hi) = (self.min.ln(), self.max.ln());
        let step = (hi - lo) / (self.points - 1) as f64;
        Ok((0..self.points)
            .map(|k| if k + 1 == self.points { self.max } else { (lo + step * k as f64).exp() })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcPoint {
    pub r: usize,
    pub ic: f64,
    pub residual_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicPoint {
    pub alpha: f64,
    pub bic: f64,
    pub residual_variance: f64,
    pub nonzero: usize,
    pub converged: bool,
    pub em_iterations: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub ic_values: Vec<IcPoint>,
    pub chosen_r: Option<usize>,
    pub alpha_grid: Vec<f64>,
    pub bic_values: Vec<BicPoint>,
    pub chosen_alpha: Option<f64>,
    pub terminated_early: bool,
    pub warnings: Vec<String>,
}

/// IC penalty `r (n + p) / (n p) · log min(n, p)`.
pub fn ic_penalty(r: usize, n: usize, p: usize) -> f64 {
    let (nf, pf) = (n as f64, p as f64);
    r as f64 * (nf + pf) / (nf * pf) * nf.min(pf).ln()
}

/// Median-fill each series' missing cells, then replace every filled cell by
/// the centred moving average of the filled series.
pub fn median_smooth_fill(panel: &TimeSeriesPanel) -> DMatrix<f64> {
    let (n, p) = (panel.n(), panel.p());
    let mut out = panel.values().clone();
    let half = IC_SMOOTHING_WINDOW / 2;
    for i in 0..p {
        let mut obs: Vec<f64> = (0..n).filter_map(|t| panel.get(t, i)).collect();
        if obs.len() == n {
            continue;
        }
        let median = if obs.is_empty() {
            0.0
        } else {
            obs.sort_by(f64::total_cmp);
            let m = obs.len();
            if m % 2 == 1 { obs[m / 2] } else { 0.5 * (obs[m / 2 - 1] + obs[m / 2]) }
        };
        let filled: Vec<f64> = (0..n).map(|t| panel.get(t, i).unwrap_or(median)).collect();
        for t in (0..n).filter(|&t| !panel.is_observed(t, i)) {
            let lo = t.saturating_sub(half);
            let hi = (t + half).min(n - 1);
            out[(t, i)] = filled[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
        }
    }
    out
}

/// Evaluate IC(r) for `r = 1..=r_max` and pick the minimiser.
pub fn select_num_factors(panel: &TimeSeriesPanel, r_max: usize) -> Result<TuningReport> {
    let (n, p) = (panel.n(), panel.p());
    if r_max == 0 || r_max > n.min(p) {
        return Err(DfmError::InvalidConfig(format!("r_max must lie in 1..={}", n.min(p))));
    }
    let x = median_smooth_fill(panel);
    let cov = x.transpose() * &x / n as f64;
    let (vals, _) = linalg::sorted_sym_eigen(&cov);
    let total: f64 = vals.iter().map(|v| v.max(0.0)).sum();
    let mut report = TuningReport::default();
    let rank_tol = 1e-10 * vals[0].max(0.0);
    let mut explained = 0.0;
    for r in 1..=r_max {
        if !(vals[r - 1] > rank_tol) {
            report.warnings.push(format!("r_max truncated to {} (numerical rank)", r - 1));
            break;
        }
        explained += vals[r - 1];
        // mean squared PCA residual over all n·p cells
        let v = ((total - explained) / p as f64).max(f64::MIN_POSITIVE);
        report.ic_values.push(IcPoint { r, ic: v.ln() + ic_penalty(r, n, p), residual_variance: v });
    }
    report.chosen_r = report
        .ic_values
        .iter()
        .min_by(|a, b| a.ic.total_cmp(&b.ic))
        .map(|pt| pt.r);
    if report.chosen_r.is_none() {
        return Err(DfmError::InsufficientData("panel has zero variance".into()));
    }
    Ok(report)
}

/// `V = (np)⁻¹ Σ_{observed (t,i)} E[(X_{t,i} − Λ̂_i F_t)² | Ω_n]`.
pub fn expected_residual_variance(panel: &TimeSeriesPanel, fit: &FitResult) -> f64 {
    let (n, p) = (panel.n(), panel.p());
    let lam = &fit.params.loadings;
    let mut total = 0.0;
    for t in 0..n {
        let a = fit.smoother.smoothed_state(t);
        let s = &a * a.transpose() + &fit.smoother.smoothed_cov[t];
        for i in 0..p {
            if let Some(x) = panel.get(t, i) {
                let li = lam.row(i);
                total += x * x - 2.0 * x * li.dot(&a.transpose()) + (li * &s).dot(&li);
            }
        }
    }
    total / (n * p) as f64
}

/// `BIC(α) = log V_α + log(np)/(np) Σ_k ŝ_k`.
pub fn bic(residual_variance: f64, nonzero: usize, n: usize, p: usize) -> f64 {
    let np = (n * p) as f64;
    residual_variance.ln() + np.ln() / np * nonzero as f64
}

/// Result of an α search: the report plus the fit at the chosen α.
#[derive(Debug, Clone)]
pub struct AlphaSelection {
    pub report: TuningReport,
    pub fit: FitResult,
}

/// BIC search over the grid with warm starts. `base` supplies `r` and tolerances.
pub fn select_alpha(panel: &TimeSeriesPanel, base: &FitConfig, grid: &AlphaGrid) -> Result<AlphaSelection> {
    let alphas = grid.values()?;
    base.validate(panel.n(), panel.p())?;
    let (n, p) = (panel.n(), panel.p());
    let mut params = em::initialise(panel, base.num_factors, base.variance_floor)?;
    let mut warm = None;
    let mut report = TuningReport { alpha_grid: alphas.clone(), ..Default::default() };
    let mut best: Option<(f64, FitResult)> = None;
    let mut failures = Vec::new();

    for &alpha in &alphas {
        let cfg = base.with_alpha(alpha);
        let fit = match em::fit_from(panel, &cfg, params.clone(), warm.as_ref()) {
            Ok(f) => f,
            Err(e) => {
                failures.push(format!("alpha={alpha:e}: {e}"));
                continue;
            }
        };
        let v = expected_residual_variance(panel, &fit);
        let nonzero: usize = fit.nonzero_counts.iter().sum();
        let value = bic(v, nonzero, n, p);
        report.bic_values.push(BicPoint {
            alpha,
            bic: value,
            residual_variance: v,
            nonzero,
            converged: fit.converged,
            em_iterations: fit.em_iterations,
        });
        if !fit.converged {
            failures.push(format!("alpha={alpha:e}: EM did not converge"));
        }
        params = fit.params.clone();
        warm = Some(fit.admm_state.clone());
        let stop = fit.has_zero_column();
        // ties go to the larger (sparser) alpha
        if fit.converged && value.is_finite() && best.as_ref().is_none_or(|(b, _)| value <= *b) {
            best = Some((value, fit));
        }
        if stop {
            report.terminated_early = alpha < *alphas.last().unwrap();
            break;
        }
    }
    report.warnings = failures.clone();
    match best {
        Some((_, fit)) => {
            report.chosen_alpha = Some(fit.alpha);
            report.chosen_r = Some(base.num_factors);
            Ok(AlphaSelection { report, fit })
        }
        None => Err(DfmError::TuningFailed {
            evaluated: report.bic_values.len(),
            detail: failures.join("; "),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penalty_arithmetic() {
        let pen = ic_penalty(1, 100, 100);
        assert!((pen - 0.02 * 100f64.ln()).abs() < 1e-15);
        assert!((pen - 0.092_103_403_719_761_8).abs() < 1e-12);
        assert!((ic_penalty(3, 100, 100) - 3.0 * pen).abs() < 1e-15);
    }

    #[test]
    fn dense_bic_penalty() {
        let (n, p, r) = (50, 12, 2);
        let np = (n * p) as f64;
        let b = bic(1.0, r * p, n, p);
        assert!((b - np.ln() / np * (r * p) as f64).abs() < 1e-15);
    }

    #[test]
    fn grid_is_log_spaced_and_inclusive() {
        let g = AlphaGrid { min: 1e-3, max: 1e2, points: 6 }.values().unwrap();
        assert_eq!(g.len(), 6);
        assert!((g[0] - 1e-3).abs() < 1e-18);
        assert_eq!(g[5], 1e2);
        for w in g.windows(2) {
            assert!((w[1] / w[0] - 10.0).abs() < 1e-9);
        }
        assert!(AlphaGrid { min: 1.0, max: 1.0, points: 3 }.values().is_err());
        assert!(AlphaGrid { min: 1e-3, max: 1.0, points: 1 }.values().is_err());
    }

    #[test]
    fn median_fill_smooths_only_missing_cells() {
        let values = DMatrix::from_column_slice(5, 1, &[1.0, 0.0, 3.0, 10.0, 0.0]);
        let mut mask = DMatrix::from_element(5, 1, true);
        mask[(1, 0)] = false;
        mask[(4, 0)] = false;
        let panel = TimeSeriesPanel::unscaled(values, mask).unwrap();
        let out = median_smooth_fill(&panel);
        // median of {1, 3, 10} = 3; filled = [1, 3, 3, 10, 3]
        assert_eq!(out[(0, 0)], 1.0);
        assert!((out[(1, 0)] - 7.0 / 3.0).abs() < 1e-15);
        assert_eq!(out[(3, 0)], 10.0);
        assert!((out[(4, 0)] - 6.5).abs() < 1e-15);
    }
}
