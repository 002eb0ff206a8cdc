//! Sparse dynamic factor models.
//!
//! Quasi-maximum-likelihood estimation of exact dynamic factor models with an
//! ℓ₁ penalty on the loadings. The EM algorithm alternates a univariate Kalman
//! smoother (E-step) with closed-form updates for the factor dynamics and an
//! ADMM solve for the sparse loadings (M-step).

pub mod admm;
pub mod em;
pub mod error;
pub mod kalman;
pub mod linalg;
pub mod mstep;
pub mod panel;
pub mod params;
pub mod rotation;
pub mod sim;
pub mod tuning;

pub use admm::{AdmmState, AdmmSettings};
pub use em::{fit, fit_from, impute, impute_with, initialise, FitResult};
pub use error::{DfmError, Result};
pub use kalman::{filter_smooth, forecast, Forecast, SmootherOutput};
pub use panel::TimeSeriesPanel;
pub use params::{DfmParams, FitConfig, DEFAULT_VARIANCE_FLOOR};
pub use tuning::{select_alpha, select_num_factors, AlphaGrid, TuningReport};
