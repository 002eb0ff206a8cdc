use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DfmError, Result};
use crate::linalg;

/// Lower bound applied to every idiosyncratic variance.
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-6;

/// Parameters of an exact dynamic factor model
///
/// ```text
/// X_t = Λ F_t + ε_t,   ε_t ~ N(0, diag(σ²_ε))
/// F_t = A F_{t-1} + u_t,   u_t ~ N(0, Σ_u),   F_0 ~ N(α₀, P₀)
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfmParams {
    /// `p × r` loadings Λ.
    pub loadings: DMatrix<f64>,
    /// `r × r` VAR(1) coefficient A.
    pub var_coef: DMatrix<f64>,
    /// Diagonal of Σ_ε, length `p`.
    pub idio_var: DVector<f64>,
    /// `r × r` innovation covariance Σ_u.
    pub state_cov: DMatrix<f64>,
    /// Mean of the pre-sample state F_0.
    pub init_mean: DVector<f64>,
    /// Covariance of the pre-sample state F_0.
    pub init_cov: DMatrix<f64>,
}

impl DfmParams {
    pub fn num_series(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn num_factors(&self) -> usize {
        self.loadings.ncols()
    }

    /// Check shapes against a panel width `p` and finiteness of all entries.
    pub fn validate(&self, p: usize) -> Result<()> {
        let r = self.num_factors();
        if self.num_series() != p {
            return Err(DfmError::Dimension(format!(
                "loadings have {} rows, panel has {p} series",
                self.num_series()
            )));
        }
        let square = |m: &DMatrix<f64>, what: &str| {
            if m.shape() != (r, r) {
                Err(DfmError::Dimension(format!("{what} must be {r}×{r}, got {:?}", m.shape())))
            } else {
                Ok(())
            }
        };
        square(&self.var_coef, "var_coef")?;
        square(&self.state_cov, "state_cov")?;
        square(&self.init_cov, "init_cov")?;
        if self.idio_var.len() != p || self.init_mean.len() != r {
            return Err(DfmError::Dimension("idio_var / init_mean length".into()));
        }
        let all_finite = linalg::is_finite(&self.loadings)
            && linalg::is_finite(&self.var_coef)
            && linalg::is_finite(&self.state_cov)
            && linalg::is_finite(&self.init_cov)
            && self.idio_var.iter().all(|v| v.is_finite())
            && self.init_mean.iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(DfmError::NonFinite("model parameters".into()));
        }
        if self.idio_var.iter().any(|&v| v <= 0.0) {
            return Err(DfmError::InvalidConfig("idiosyncratic variances must be positive".into()));
        }
        Ok(())
    }

    /// Whether the factor VAR is stationary.
    pub fn is_stationary(&self) -> bool {
        linalg::spectral_radius(&self.var_coef) < 1.0
    }

    /// Observationally equivalent parameters under the change of basis
    /// `F → Qᵀ F` for an orthogonal `Q`.
    pub fn rotated(&self, q: &DMatrix<f64>) -> DfmParams {
        let qt = q.transpose();
        DfmParams {
            loadings: &self.loadings * q,
            var_coef: &qt * &self.var_coef * q,
            idio_var: self.idio_var.clone(),
            state_cov: &qt * &self.state_cov * q,
            init_mean: &qt * &self.init_mean,
            init_cov: &qt * &self.init_cov * q,
        }
    }

    /// Equivalent parameters for the factors `M⁻¹ F`: loadings `ΛM`,
    /// `M⁻¹AM`, `M⁻¹Σ_u M⁻ᵀ`, `M⁻¹α₀`, `M⁻¹P₀M⁻ᵀ`. `None` if `M` is singular.
    pub fn transformed(&self, m: &DMatrix<f64>) -> Option<DfmParams> {
        let m_inv = m.clone().try_inverse()?;
        let m_inv_t = m_inv.transpose();
        Some(DfmParams {
            loadings: &self.loadings * m,
            var_coef: &m_inv * &self.var_coef * m,
            idio_var: self.idio_var.clone(),
            state_cov: crate::linalg::symmetrise(&(&m_inv * &self.state_cov * &m_inv_t)),
            init_mean: &m_inv * &self.init_mean,
            init_cov: crate::linalg::symmetrise(&(&m_inv * &self.init_cov * &m_inv_t)),
        })
    }

    /// Equivalent parameters for factors rescaled to unit stationary
    /// variance: `F ↦ D⁻¹F`, `Λ ↦ ΛD` with `D² = diag(Γ)`. `None` if the VAR
    /// is not stationary.
    pub fn unit_variance(&self) -> Option<DfmParams> {
        let gamma = crate::linalg::discrete_lyapunov(&self.var_coef, &self.state_cov).ok()?;
        let d = gamma.diagonal().map(f64::sqrt);
        if d.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return None;
        }
        let r = d.len();
        let inner = |m: &DMatrix<f64>| DMatrix::from_fn(r, r, |i, j| m[(i, j)] / (d[i] * d[j]));
        Some(DfmParams {
            loadings: DMatrix::from_fn(self.num_series(), r, |i, k| self.loadings[(i, k)] * d[k]),
            var_coef: DMatrix::from_fn(r, r, |i, j| self.var_coef[(i, j)] * d[j] / d[i]),
            idio_var: self.idio_var.clone(),
            state_cov: inner(&self.state_cov),
            init_mean: self.init_mean.component_div(&d),
            init_cov: inner(&self.init_cov),
        })
    }

    /// Column-wise count of nonzero loadings.
    pub fn nonzero_counts(&self) -> Vec<usize> {
        self.loadings
            .column_iter()
            .map(|c| c.iter().filter(|v| **v != 0.0).count())
            .collect()
    }

    pub fn l1_norm(&self) -> f64 {
        self.loadings.iter().map(|v| v.abs()).sum()
    }
}

/// Settings for one EM fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub num_factors: usize,
    /// ℓ₁ weight on the loadings.
    pub alpha: f64,
    /// ADMM augmentation parameter ν.
    pub admm_nu: f64,
    pub em_max_iter: usize,
    /// Relative objective change `|Δ| / (1 + |obj|)` below which EM stops.
    pub em_tol: f64,
    pub admm_max_iter: usize,
    pub admm_tol_abs: f64,
    pub admm_tol_rel: f64,
    pub variance_floor: f64,
    /// Restrict the factors to unit stationary variance. The likelihood is
    /// unchanged when the factors are rescaled against the loadings, so
    /// without this the ℓ₁ term can be shrunk towards zero at no cost.
    pub unit_factor_variance: bool,
    /// Keep the fitted VAR matrix stationary by damping its update.
    pub keep_stationary: bool,
    /// After each M-step, move to the observationally equivalent factor basis
    /// with smaller `‖Λ‖₁` (needs `unit_factor_variance`; inactive at α = 0).
    pub sparse_basis: bool,
}

impl FitConfig {
    pub fn new(num_factors: usize, alpha: f64) -> Self {
        Self {
            num_factors,
            alpha,
            admm_nu: 1.0,
            em_max_iter: 100,
            em_tol: 1e-4,
            admm_max_iter: 2000,
            admm_tol_abs: 1e-6,
            admm_tol_rel: 1e-4,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            unit_factor_variance: true,
            keep_stationary: true,
            sparse_basis: true,
        }
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self { alpha, ..self.clone() }
    }

    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        let r = self.num_factors;
        if r == 0 || r > n.min(p) {
            return Err(DfmError::InvalidConfig(format!(
                "num_factors = {r} must lie in 1..={}",
                n.min(p)
            )));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(DfmError::InvalidConfig("alpha must be finite and nonnegative".into()));
        }
        let positive = [
            ("admm_nu", self.admm_nu),
            ("em_tol", self.em_tol),
            ("admm_tol_abs", self.admm_tol_abs),
            ("admm_tol_rel", self.admm_tol_rel),
            ("variance_floor", self.variance_floor),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(DfmError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.em_max_iter == 0 || self.admm_max_iter == 0 {
            return Err(DfmError::InvalidConfig("iteration limits must be positive".into()));
        }
        Ok(())
    }
}
