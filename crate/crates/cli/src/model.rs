//! The `params.json` model file and what can be computed from it alone.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use sdfm::{DfmParams, FitResult, TimeSeriesPanel};

use crate::io::{matrix_from_rows, matrix_rows};
use crate::CliError;

/// A fitted model with everything needed to forecast or impute later.
/// Matrices are stored as arrays of rows on the standardised scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub series: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub n: usize,
    pub last_time: String,
    pub num_factors: usize,
    pub alpha: f64,
    pub converged: bool,
    pub em_iterations: usize,
    pub objective: f64,
    pub nonzero_counts: Vec<usize>,
    pub loadings: Vec<Vec<f64>>,
    pub var_coef: Vec<Vec<f64>>,
    pub state_cov: Vec<Vec<f64>>,
    pub idio_var: Vec<f64>,
    pub init_mean: Vec<f64>,
    pub init_cov: Vec<Vec<f64>>,
    /// Filtered state at the last period, the origin for forecasts.
    pub final_state_mean: Vec<f64>,
    pub final_state_cov: Vec<Vec<f64>>,
}

impl ModelFile {
    pub fn new(panel: &TimeSeriesPanel, last_time: &str, fit: &FitResult) -> Self {
        let params = &fit.params;
        let last = panel.n() - 1;
        Self {
            series: panel.series_names().to_vec(),
            means: panel.means().to_vec(),
            sds: panel.sds().to_vec(),
            n: panel.n(),
            last_time: last_time.to_string(),
            num_factors: fit.num_factors,
            alpha: fit.alpha,
            converged: fit.converged,
            em_iterations: fit.em_iterations,
            objective: fit.objective(),
            nonzero_counts: fit.nonzero_counts.clone(),
            loadings: matrix_rows(&params.loadings),
            var_coef: matrix_rows(&params.var_coef),
            state_cov: matrix_rows(&params.state_cov),
            idio_var: params.idio_var.iter().copied().collect(),
            init_mean: params.init_mean.iter().copied().collect(),
            init_cov: matrix_rows(&params.init_cov),
            final_state_mean: fit.smoother.filtered_state(last).iter().copied().collect(),
            final_state_cov: matrix_rows(&fit.smoother.filtered_cov[last]),
        }
    }

    pub fn params(&self) -> Result<DfmParams, CliError> {
        let params = DfmParams {
            loadings: matrix_from_rows(&self.loadings, "loadings")?,
            var_coef: matrix_from_rows(&self.var_coef, "var_coef")?,
            idio_var: DVector::from_vec(self.idio_var.clone()),
            state_cov: matrix_from_rows(&self.state_cov, "state_cov")?,
            init_mean: DVector::from_vec(self.init_mean.clone()),
            init_cov: matrix_from_rows(&self.init_cov, "init_cov")?,
        };
        params.validate(self.series.len())?;
        Ok(params)
    }

    pub fn final_state(&self) -> Result<(DVector<f64>, DMatrix<f64>), CliError> {
        Ok((
            DVector::from_vec(self.final_state_mean.clone()),
            matrix_from_rows(&self.final_state_cov, "final_state_cov")?,
        ))
    }
}

/// One row of `forecast.csv`, in original units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastRow {
    /// Period number continuing the sample: `n + h`.
    pub t: usize,
    pub series: usize,
    pub mean: f64,
    pub lower95: f64,
    pub upper95: f64,
}

/// `h`-step forecasts from the last filtered state with `mean ± 1.96·sd`.
pub fn forecast_rows(model: &ModelFile, horizon: usize) -> Result<Vec<ForecastRow>, CliError> {
    let params = model.params()?;
    let (state, cov) = model.final_state()?;
    let fc = sdfm::forecast(&params, &state, &cov, horizon)?;
    let mut rows = Vec::with_capacity(horizon * model.series.len());
    for h in 0..horizon {
        for i in 0..model.series.len() {
            let sd = model.sds[i];
            let mean = fc.obs_mean[(h, i)] * sd + model.means[i];
            let half = 1.96 * sd * fc.obs_var[(h, i)].sqrt();
            rows.push(ForecastRow { t: model.n + h + 1, series: i, mean, lower95: mean - half, upper95: mean + half });
        }
    }
    Ok(rows)
}
