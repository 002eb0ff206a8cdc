//! ℓ₁-penalised loading update.
//!
//! With all other parameters fixed, the loading sub-problem is
//!
//! ```text
//! min_Λ  Σ_i (1 / 2σ²_i) (λ_iᵀ G_i λ_i − 2 c_iᵀ λ_i) + α ‖Λ‖₁
//! ```
//!
//! where `G_i = Σ_{t: X_{t,i} observed} S_t` and `c_i = Σ_t W_{t,ii} X_{t,i} a_{t|n}`.
//! ADMM splits it into a ridge-type solve, a soft threshold and a dual step.
//! The ridge system `(Σ_t S_t ⊗ W_t Σ_ε⁻¹ W_t + ν I) vec Λ = vec C` is, after
//! commuting the Kronecker factors, block diagonal with one `r × r` block per
//! series, so it costs `O(r³ p)` rather than `O(r³ p³)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{DfmError, Result};
use crate::mstep::SufficientStats;
use crate::panel::TimeSeriesPanel;

/// Elementwise `sign(m) · max(|m| − τ, 0)`; killed entries are exactly `0.0`.
pub fn soft_threshold(m: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    m.map(|v| soft(v, tau))
}

#[inline]
fn soft(v: f64, tau: f64) -> f64 {
    if v.abs() <= tau {
        0.0
    } else {
        v - tau.copysign(v)
    }
}

/// Solve `(Σ_t B_t ⊗ A_t + ν I) x = rhs` in its commuted, block-diagonal form:
/// for every series `i`, `(Σ_t B_{t,ii} A_t + ν I_r) λ_i = rhs_i`.
///
/// `s_blocks` holds the `n` symmetric `r × r` matrices `A_t`; `weights` is the
/// `n × p` matrix of diagonal entries `B_{t,ii}`.
pub fn fast_block_solve(
    s_blocks: &[DMatrix<f64>],
    weights: &DMatrix<f64>,
    nu: f64,
    rhs: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (n, p) = weights.shape();
    let r = rhs.ncols();
    if s_blocks.len() != n || rhs.nrows() != p {
        return Err(DfmError::Dimension("block solve inputs".into()));
    }
    if !(nu > 0.0) {
        return Err(DfmError::InvalidConfig("nu must be positive".into()));
    }
    if weights.iter().chain(rhs.iter()).any(|v| !v.is_finite())
        || s_blocks.iter().any(|b| b.iter().any(|v| !v.is_finite()))
    {
        return Err(DfmError::NonFinite("block solve inputs".into()));
    }
    let mut blocks = vec![DMatrix::<f64>::identity(r, r) * nu; p];
    for (t, a_t) in s_blocks.iter().enumerate() {
        for (i, block) in blocks.iter_mut().enumerate() {
            let w = weights[(t, i)];
            if w != 0.0 {
                *block += a_t * w;
            }
        }
    }
    let mut out = DMatrix::zeros(p, r);
    for (i, block) in blocks.into_iter().enumerate() {
        let chol = Cholesky::new(block)
            .ok_or_else(|| DfmError::Singular(format!("loading block for series {i}")))?;
        let x = chol.solve(&rhs.row(i).transpose());
        out.set_row(i, &x.transpose());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmSettings {
    pub nu: f64,
    pub max_iter: usize,
    pub tol_abs: f64,
    pub tol_rel: f64,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self { nu: 1.0, max_iter: 2000, tol_abs: 1e-6, tol_rel: 1e-4 }
    }
}

/// ADMM iterate; reusable as a warm start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmState {
    /// Primal iterate Λ.
    pub primal: DMatrix<f64>,
    /// Auxiliary iterate Z, carrying the exact zeros. This is the reported estimate.
    pub aux: DMatrix<f64>,
    /// Scaled dual variable U.
    pub dual: DMatrix<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl AdmmState {
    pub fn zeros(p: usize, r: usize) -> Self {
        Self {
            primal: DMatrix::zeros(p, r),
            aux: DMatrix::zeros(p, r),
            dual: DMatrix::zeros(p, r),
            primal_residual: 0.0,
            dual_residual: 0.0,
            iterations: 0,
            converged: false,
        }
    }

    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.aux
    }
}

/// The loading sub-problem for fixed smoothed moments and idiosyncratic variances.
#[derive(Debug, Clone)]
pub struct LoadingProblem {
    /// `G_i`, one `r × r` matrix per series.
    pub grams: Vec<DMatrix<f64>>,
    /// `c_i` stacked as rows (`p × r`).
    pub cross: DMatrix<f64>,
    pub idio_var: DVector<f64>,
}

impl LoadingProblem {
    pub fn new(stats: &SufficientStats, panel: &TimeSeriesPanel, idio_var: &DVector<f64>) -> Self {
        Self { grams: stats.series_gram(panel), cross: stats.cross.clone(), idio_var: idio_var.clone() }
    }

    pub fn p(&self) -> usize {
        self.cross.nrows()
    }

    pub fn r(&self) -> usize {
        self.cross.ncols()
    }

    /// Smooth part of the objective (negative expected log-likelihood in Λ, up to constants).
    pub fn smooth_objective(&self, loadings: &DMatrix<f64>) -> f64 {
        (0..self.p())
            .map(|i| {
                let lam = loadings.row(i).transpose();
                let c = self.cross.row(i).transpose();
                0.5 * ((&self.grams[i] * &lam).dot(&lam) - 2.0 * c.dot(&lam)) / self.idio_var[i]
            })
            .sum()
    }

    pub fn objective(&self, loadings: &DMatrix<f64>, alpha: f64) -> f64 {
        self.smooth_objective(loadings) + alpha * loadings.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Gradient of the smooth part, row `i` = `(G_i λ_i − c_i) / σ²_i`.
    pub fn gradient(&self, loadings: &DMatrix<f64>) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.p(), self.r());
        for i in 0..self.p() {
            let lam = loadings.row(i).transpose();
            let row = (&self.grams[i] * lam - self.cross.row(i).transpose()) / self.idio_var[i];
            g.set_row(i, &row.transpose());
        }
        g
    }

    /// Unpenalised minimiser `λ_i = G_i⁻¹ c_i`.
    pub fn unpenalised(&self) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.p(), self.r());
        for i in 0..self.p() {
            let chol = Cholesky::new(self.grams[i].clone())
                .ok_or_else(|| DfmError::Singular(format!("factor Gram matrix for series {i}")))?;
            out.set_row(i, &chol.solve(&self.cross.row(i).transpose()).transpose());
        }
        Ok(out)
    }

    /// Factorised ridge blocks `G_i / σ²_i + ν I`.
    fn factor_blocks(&self, nu: f64) -> Result<Vec<Cholesky<f64, Dyn>>> {
        let r = self.r();
        self.grams
            .iter()
            .zip(self.idio_var.iter())
            .enumerate()
            .map(|(i, (g, s2))| {
                let block = g / *s2 + DMatrix::<f64>::identity(r, r) * nu;
                Cholesky::new(block)
                    .ok_or_else(|| DfmError::Singular(format!("loading block for series {i}")))
            })
            .collect()
    }
}

/// One ridge-type primal update, `Λ = D⁻¹ vec[Σ_t W_t Σ_ε⁻¹ W_t X_t a_tᵀ + ν (Z − U)]`.
pub fn primal_solve(
    stats: &SufficientStats,
    idio_var: &DVector<f64>,
    panel: &TimeSeriesPanel,
    nu: f64,
    aux: &DMatrix<f64>,
    dual: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (n, p) = (panel.n(), panel.p());
    let weights = DMatrix::from_fn(n, p, |t, i| {
        if panel.is_observed(t, i) {
            1.0 / idio_var[i]
        } else {
            0.0
        }
    });
    let mut rhs = (aux - dual) * nu;
    for i in 0..p {
        for k in 0..stats.r() {
            rhs[(i, k)] += stats.cross[(i, k)] / idio_var[i];
        }
    }
    let blocks: Vec<DMatrix<f64>> = (0..n).map(|t| stats.sample_moment(t).clone()).collect();
    fast_block_solve(&blocks, &weights, nu, &rhs)
}

/// Run ADMM on the loading problem until the scaled residual test passes or
/// `max_iter` is hit. The returned state's [`AdmmState::aux`] is the estimate.
pub fn solve_loadings(
    problem: &LoadingProblem,
    alpha: f64,
    settings: &AdmmSettings,
    warm: Option<&AdmmState>,
) -> Result<AdmmState> {
    if !(alpha >= 0.0) {
        return Err(DfmError::InvalidConfig("alpha must be nonnegative".into()));
    }
    if !(settings.nu > 0.0) {
        return Err(DfmError::InvalidConfig("nu must be positive".into()));
    }
    let (p, r) = (problem.p(), problem.r());
    let nu = settings.nu;
    let tau = alpha / nu;
    let blocks = problem.factor_blocks(nu)?;
    let scaled_cross = DMatrix::from_fn(p, r, |i, k| problem.cross[(i, k)] / problem.idio_var[i]);

    let mut state = match warm {
        Some(w) if w.aux.shape() == (p, r) => AdmmState {
            iterations: 0,
            converged: false,
            ..w.clone()
        },
        _ => AdmmState::zeros(p, r),
    };
    let sqrt_dim = ((p * r) as f64).sqrt();
    let mut rhs = DVector::zeros(r);
    for it in 1..=settings.max_iter {
        for (i, chol) in blocks.iter().enumerate() {
            for k in 0..r {
                rhs[k] = scaled_cross[(i, k)] + nu * (state.aux[(i, k)] - state.dual[(i, k)]);
            }
            let lam = chol.solve(&rhs);
            state.primal.set_row(i, &lam.transpose());
        }
        let z_prev = std::mem::replace(&mut state.aux, soft_threshold(&(&state.primal + &state.dual), tau));
        state.dual += &state.primal - &state.aux;

        state.primal_residual = (&state.primal - &state.aux).norm();
        state.dual_residual = nu * (&state.aux - &z_prev).norm();
        state.iterations = it;
        let eps_pri = sqrt_dim * settings.tol_abs
            + settings.tol_rel * state.primal.norm().max(state.aux.norm());
        let eps_dual = sqrt_dim * settings.tol_abs + settings.tol_rel * nu * state.dual.norm();
        if state.primal_residual <= eps_pri && state.dual_residual <= eps_dual {
            state.converged = true;
            break;
        }
    }
    if !crate::linalg::is_finite(&state.aux) {
        return Err(DfmError::NonFinite("ADMM loading iterate".into()));
    }
    Ok(state)
}
