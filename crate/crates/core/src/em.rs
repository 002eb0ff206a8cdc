//! EM estimation of the sparse factor model.
//!
//! Each iteration runs the univariate smoother (E-step), then updates
//! `(A, Σ_u)` and the initial state in closed form, the loadings by ADMM
//! (warm-started from the previous iteration), and finally Σ_ε.
//! Convergence is judged on the penalised observed-data objective
//! `−log L(X; θ) + α ‖Λ‖₁`, which EM never increases.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::admm::{self, AdmmSettings, AdmmState, LoadingProblem};
use crate::error::{DfmError, Result};
use crate::kalman::{self, SmootherOutput};
use crate::linalg;
use crate::mstep::{self, SufficientStats};
use crate::panel::TimeSeriesPanel;
use crate::params::{DfmParams, FitConfig};
use crate::rotation;

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: DfmParams,
    /// Smoother output evaluated at `params`.
    pub smoother: SmootherOutput,
    /// Penalised negative log-likelihood, starting with the initial parameters.
    pub objective_trace: Vec<f64>,
    pub em_iterations: usize,
    pub converged: bool,
    pub alpha: f64,
    pub num_factors: usize,
    /// Nonzero loadings per factor.
    pub nonzero_counts: Vec<usize>,
    /// Final ADMM iterate, reusable as a warm start.
    pub admm_state: AdmmState,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }

    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.params.loadings
    }

    /// Whether some factor has lost all of its loadings.
    pub fn has_zero_column(&self) -> bool {
        self.nonzero_counts.iter().any(|&c| c == 0)
    }
}

/// Natural cubic spline through `(xs, ys)` evaluated at `at`; constant
/// extrapolation outside `[xs[0], xs[last]]`.
pub(crate) fn natural_spline(xs: &[f64], ys: &[f64], at: &[f64]) -> Vec<f64> {
    let m = xs.len();
    assert!(m >= 1 && m == ys.len());
    if m == 1 {
        return vec![ys[0]; at.len()];
    }
    // Second derivatives from the tridiagonal system, M_0 = M_{m-1} = 0.
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let mut second = vec![0.0; m];
    if m > 2 {
        let k = m - 2;
        let mut diag = vec![0.0; k];
        let mut upper = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for j in 0..k {
            diag[j] = 2.0 * (h[j] + h[j + 1]);
            upper[j] = h[j + 1];
            rhs[j] = 6.0 * ((ys[j + 2] - ys[j + 1]) / h[j + 1] - (ys[j + 1] - ys[j]) / h[j]);
        }
        // Thomas algorithm; sub-diagonal entry of row j is h[j].
        for j in 1..k {
            let w = h[j] / diag[j - 1];
            diag[j] -= w * upper[j - 1];
            rhs[j] -= w * rhs[j - 1];
        }
        second[k] = rhs[k - 1] / diag[k - 1];
        for j in (0..k - 1).rev() {
            second[j + 1] = (rhs[j] - upper[j] * second[j + 2]) / diag[j];
        }
    }
    at.iter()
        .map(|&x| {
            if x <= xs[0] {
                return ys[0];
            }
            if x >= xs[m - 1] {
                return ys[m - 1];
            }
            let j = xs.partition_point(|&v| v <= x) - 1;
            let (x0, x1, hj) = (xs[j], xs[j + 1], h[j]);
            let (a, b) = ((x1 - x) / hj, (x - x0) / hj);
            a * ys[j]
                + b * ys[j + 1]
                + ((a * a * a - a) * second[j] + (b * b * b - b) * second[j + 1]) * hj * hj / 6.0
        })
        .collect()
}

/// Fill missing cells series by series with a natural cubic spline over time.
pub fn spline_impute(panel: &TimeSeriesPanel) -> DMatrix<f64> {
    let (n, p) = (panel.n(), panel.p());
    let mut out = panel.values().clone();
    for i in 0..p {
        let obs: Vec<usize> = (0..n).filter(|&t| panel.is_observed(t, i)).collect();
        if obs.len() == n {
            continue;
        }
        if obs.is_empty() {
            out.column_mut(i).fill(0.0);
            continue;
        }
        let xs: Vec<f64> = obs.iter().map(|&t| t as f64).collect();
        let ys: Vec<f64> = obs.iter().map(|&t| panel.values()[(t, i)]).collect();
        let missing: Vec<usize> = (0..n).filter(|&t| !panel.is_observed(t, i)).collect();
        let at: Vec<f64> = missing.iter().map(|&t| t as f64).collect();
        for (t, v) in missing.into_iter().zip(natural_spline(&xs, &ys, &at)) {
            out[(t, i)] = v;
        }
    }
    out
}

/// Principal components of a complete `n × p` matrix: loadings `V_r D_r^{1/2}`
/// and unit-variance scores `X V_r D_r^{-1/2}`, with `D` the eigenvalues of `XᵀX / n`.
pub(crate) fn principal_components(
    x: &DMatrix<f64>,
    r: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    let n = x.nrows() as f64;
    let cov = x.transpose() * x / n;
    let (vals, vecs) = linalg::sorted_sym_eigen(&cov);
    let top = vals[0].max(0.0);
    if r > vals.len() || !(vals[r - 1] > 1e-10 * top.max(1e-300)) {
        return Err(DfmError::InvalidConfig(format!(
            "{r} factors exceed the numerical rank of the panel"
        )));
    }
    let v = vecs.columns(0, r).into_owned();
    let scale = vals.rows(0, r).map(|d| d.sqrt());
    let loadings = &v * DMatrix::from_diagonal(&scale);
    let scores = x * &v * DMatrix::from_diagonal(&scale.map(|s| 1.0 / s));
    Ok((loadings, scores, vals))
}

/// Smallest share of a series' variance assigned to its idiosyncratic part at
/// initialisation. With `r` close to `p` the principal components explain the
/// data exactly, and a start with `σ²_ε` at the floor is a fixed point EM
/// cannot leave.
const INIT_IDIO_SHARE: f64 = 0.1;

fn observed_variance(panel: &TimeSeriesPanel, i: usize) -> f64 {
    let obs: Vec<f64> = (0..panel.n()).filter_map(|t| panel.get(t, i)).collect();
    let m = obs.len().max(1) as f64;
    let mean = obs.iter().sum::<f64>() / m;
    obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m
}

/// Starting values: spline imputation, PCA and a VAR(1) fit on the scores.
pub fn initialise(panel: &TimeSeriesPanel, r: usize, variance_floor: f64) -> Result<DfmParams> {
    let (n, p) = (panel.n(), panel.p());
    if r == 0 || r > n.min(p) {
        return Err(DfmError::InvalidConfig(format!("num_factors = {r} must lie in 1..={}", n.min(p))));
    }
    if n < 2 {
        return Err(DfmError::InsufficientData("need at least two periods".into()));
    }
    let x = spline_impute(panel);
    let (loadings, scores, _) = principal_components(&x, r)?;

    let mut lag_gram = DMatrix::zeros(r, r);
    let mut lag_cross = DMatrix::zeros(r, r);
    for t in 1..n {
        let prev = scores.row(t - 1).transpose();
        let cur = scores.row(t).transpose();
        lag_gram += &prev * prev.transpose();
        lag_cross += &cur * prev.transpose();
    }
    let var_coef = linalg::right_solve_spd(&lag_cross, &lag_gram, "initial VAR Gram matrix")
        .unwrap_or_else(|_| DMatrix::zeros(r, r));
    let mut resid_cov = DMatrix::zeros(r, r);
    for t in 1..n {
        let e = scores.row(t).transpose() - &var_coef * scores.row(t - 1).transpose();
        resid_cov += &e * e.transpose();
    }
    let state_cov = linalg::floor_eigenvalues(&(resid_cov / (n - 1) as f64), mstep::STATE_COV_FLOOR);

    let fitted = &scores * loadings.transpose();
    let idio_var = DVector::from_fn(p, |i, _| {
        let (mut ss, mut cnt) = (0.0, 0usize);
        for t in 0..n {
            if panel.is_observed(t, i) {
                ss += (x[(t, i)] - fitted[(t, i)]).powi(2);
                cnt += 1;
            }
        }
        (ss / cnt.max(1) as f64).max(INIT_IDIO_SHARE * observed_variance(panel, i)).max(variance_floor)
    });
    let init_cov = linalg::discrete_lyapunov(&var_coef, &state_cov)
        .unwrap_or_else(|_| DMatrix::identity(r, r));
    Ok(DfmParams { loadings, var_coef, idio_var, state_cov, init_mean: DVector::zeros(r), init_cov })
}

fn penalised_objective(out: &SmootherOutput, params: &DfmParams, alpha: f64) -> f64 {
    -out.loglik + alpha * params.l1_norm()
}

/// Fit from PCA starting values.
pub fn fit(panel: &TimeSeriesPanel, config: &FitConfig) -> Result<FitResult> {
    config.validate(panel.n(), panel.p())?;
    let init = initialise(panel, config.num_factors, config.variance_floor)?;
    fit_from(panel, config, init, None)
}

/// Fit from explicit starting parameters and an optional ADMM warm start.
pub fn fit_from(
    panel: &TimeSeriesPanel,
    config: &FitConfig,
    init: DfmParams,
    warm: Option<&AdmmState>,
) -> Result<FitResult> {
    config.validate(panel.n(), panel.p())?;
    init.validate(panel.p())?;
    if init.num_factors() != config.num_factors {
        return Err(DfmError::Dimension("initial parameters have the wrong factor count".into()));
    }
    let settings = AdmmSettings {
        nu: config.admm_nu,
        max_iter: config.admm_max_iter,
        tol_abs: config.admm_tol_abs,
        tol_rel: config.admm_tol_rel,
    };
    let alpha = config.alpha;
    let mut warnings = Vec::new();

    let mut params = init;
    let mut admm_state = warm
        .cloned()
        .unwrap_or_else(|| AdmmState::zeros(panel.p(), config.num_factors));
    if config.unit_factor_variance {
        if let Some(unit) = params.unit_variance() {
            rescale_admm_state(&mut admm_state, &params.loadings, &unit.loadings);
            params = unit;
        }
    }
    if let Some((basis, m)) = sparser_basis(&params, config, 0.0) {
        transform_admm_state(&mut admm_state, &m);
        params = basis;
    }
    let mut smoother = kalman::filter_smooth(panel, &params)?;
    let mut objective = penalised_objective(&smoother, &params, alpha);
    if !objective.is_finite() {
        return Err(DfmError::NonFiniteObjective(0));
    }
    let mut trace = vec![objective];
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=config.em_max_iter {
        iterations = iter;
        let stats = SufficientStats::from_smoother(panel, &smoother);
        let (init_mean, init_cov) = mstep::update_init(&smoother);
        let mut var_coef = mstep::update_var_coef(&stats)?;
        if config.keep_stationary {
            var_coef = mstep::stationary_step(&params.var_coef, &var_coef);
        }
        let mut state_cov = mstep::update_state_cov(&stats, &var_coef);
        if config.unit_factor_variance {
            (var_coef, state_cov) = mstep::update_state_unit_variance(
                &stats,
                &var_coef,
                &state_cov,
                &params.var_coef,
                &params.state_cov,
            );
        }

        let problem = LoadingProblem::new(&stats, panel, &params.idio_var);
        admm_state = admm::solve_loadings(&problem, alpha, &settings, Some(&admm_state))?;
        // Accept the ADMM iterate only if it does not worsen the penalised
        // sub-problem; an inexact solve must not break the EM descent.
        let loadings = if problem.objective(&admm_state.aux, alpha)
            <= problem.objective(&params.loadings, alpha)
        {
            admm_state.aux.clone()
        } else {
            params.loadings.clone()
        };
        let idio_var = mstep::update_idio_var(
            panel,
            &loadings,
            &stats,
            &params.idio_var,
            config.variance_floor,
        );
        let mut next = DfmParams { loadings, var_coef, idio_var, state_cov, init_mean, init_cov };
        if let Some((basis, m)) = sparser_basis(&next, config, objective) {
            transform_admm_state(&mut admm_state, &m);
            next = basis;
        }
        let next_smoother = kalman::filter_smooth(panel, &next)?;
        let next_objective = penalised_objective(&next_smoother, &next, alpha);
        if !next_objective.is_finite() {
            return Err(DfmError::NonFiniteObjective(iter));
        }
        trace.push(next_objective);
        let rel_change = (next_objective - objective).abs() / (1.0 + next_objective.abs());
        params = next;
        smoother = next_smoother;
        objective = next_objective;
        if rel_change < config.em_tol {
            converged = true;
            break;
        }
    }
    if !params.is_stationary() {
        warnings.push(format!(
            "fitted VAR is not stationary (spectral radius {:.4})",
            linalg::spectral_radius(&params.var_coef)
        ));
    }
    if !converged {
        warnings.push(format!("EM did not converge in {} iterations", config.em_max_iter));
    }
    Ok(FitResult {
        nonzero_counts: params.nonzero_counts(),
        params,
        smoother,
        objective_trace: trace,
        em_iterations: iterations,
        converged,
        alpha,
        num_factors: config.num_factors,
        admm_state,
        warnings,
    })
}

/// Smallest penalty gain, relative to `1 + |objective|`, worth a change of
/// factor basis.
const BASIS_GAIN_TOL: f64 = 1e-9;

/// The equivalent parameters in a factor basis with smaller `‖Λ‖₁`, and the
/// basis change `M`, when the penalty gain is worthwhile.
fn sparser_basis(params: &DfmParams, config: &FitConfig, objective: f64) -> Option<(DfmParams, DMatrix<f64>)> {
    if !(config.sparse_basis && config.unit_factor_variance && config.alpha > 0.0) {
        return None;
    }
    let gamma = linalg::discrete_lyapunov(&params.var_coef, &params.state_cov).ok()?;
    let out = rotation::sparsifying_transform(&params.loadings, &gamma);
    if config.alpha * (params.l1_norm() - out.l1) <= BASIS_GAIN_TOL * (1.0 + objective.abs()) {
        return None;
    }
    Some((params.transformed(&out.transform)?, out.transform))
}

/// Express a warm ADMM state in the basis `M`: loadings iterates map to
/// `XM`, the dual to `UM⁻ᵀ`.
fn transform_admm_state(state: &mut AdmmState, m: &DMatrix<f64>) {
    if state.primal.ncols() != m.nrows() {
        return;
    }
    if let Some(m_inv) = m.clone().try_inverse() {
        state.primal = &state.primal * m;
        state.aux = &state.aux * m;
        state.dual = &state.dual * m_inv.transpose();
    }
}

/// Carry a warm ADMM state through a column rescaling `before → after` of
/// the loadings.
fn rescale_admm_state(state: &mut AdmmState, before: &DMatrix<f64>, after: &DMatrix<f64>) {
    if state.primal.shape() != before.shape() {
        return;
    }
    for k in 0..before.ncols() {
        let (b, a) = (before.column(k).norm(), after.column(k).norm());
        if b > 0.0 && a.is_finite() {
            let f = a / b;
            state.primal.column_mut(k).scale_mut(f);
            state.aux.column_mut(k).scale_mut(f);
            state.dual.column_mut(k).scale_mut(f);
        }
    }
}

/// Observed cells unchanged, missing cells replaced by the smoothed common
/// component `Λ̂_i a_{t|n}` (modelling scale).
pub fn impute(result: &FitResult, panel: &TimeSeriesPanel) -> Result<DMatrix<f64>> {
    impute_with(&result.params, &result.smoother, panel)
}

/// [`impute`] from parameters and a smoother pass over `panel`.
pub fn impute_with(params: &DfmParams, smoother: &SmootherOutput, panel: &TimeSeriesPanel) -> Result<DMatrix<f64>> {
    if smoother.n() != panel.n() || params.num_series() != panel.p() {
        return Err(DfmError::Dimension("fit result does not belong to this panel".into()));
    }
    let common = &smoother.smoothed_mean * params.loadings.transpose();
    Ok(DMatrix::from_fn(panel.n(), panel.p(), |t, i| {
        panel.get(t, i).unwrap_or(common[(t, i)])
    }))
}

/// Summary of a fit that the CLI serialises.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub num_factors: usize,
    pub alpha: f64,
    pub em_iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub nonzero_counts: Vec<usize>,
}

impl From<&FitResult> for FitSummary {
    fn from(r: &FitResult) -> Self {
        Self {
            num_factors: r.num_factors,
            alpha: r.alpha,
            em_iterations: r.em_iterations,
            converged: r.converged,
            objective: r.objective(),
            nonzero_counts: r.nonzero_counts.clone(),
        }
    }
}
