//! Browser bindings for the demo page in `www/`.
//!
//! Each export returns a JSON string; the `*_report` functions behind them
//! are plain Rust so they can be tested natively.

use nalgebra::DMatrix;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use sdfm::sim::{self, DgpSpec, RotationNorm};
use sdfm::{AlphaGrid, FitConfig, TimeSeriesPanel};

#[derive(Debug, Serialize)]
pub struct RotationCurves {
    pub theta: Vec<f64>,
    pub l0: Vec<f64>,
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct FitReport {
    /// Row-major `p × 2` matrices.
    pub truth: Vec<Vec<f64>>,
    pub estimate: Vec<Vec<f64>>,
    pub alpha: f64,
    pub nonzero: usize,
    pub mae: f64,
    pub f1: f64,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct PathReport {
    pub alpha: Vec<f64>,
    pub bic: Vec<f64>,
    pub nonzero: Vec<usize>,
    pub chosen_alpha: Option<f64>,
    pub terminated_early: bool,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn panel(n: usize, p: usize, rho: f64, seed: u64) -> Result<(sim::SimulatedData, TimeSeriesPanel), String> {
    let data = sim::simulate(&DgpSpec::new(n, p, rho, seed)).map_err(|e| e.to_string())?;
    let panel = TimeSeriesPanel::standardise(&data.values, None).map_err(|e| e.to_string())?;
    Ok((data, panel))
}

pub fn rotation_report(points: usize) -> Result<RotationCurves, String> {
    if points == 0 {
        return Err("need at least one angle".into());
    }
    let theta = sim::theta_grid(points);
    let curve = |norm| sim::rotation_norm_curve(norm, &theta).into_iter().map(|(_, v)| v).collect();
    Ok(RotationCurves {
        l0: curve(RotationNorm::L0),
        l1: curve(RotationNorm::L1),
        l2: curve(RotationNorm::L2),
        theta,
    })
}

/// Simulate the two-factor design and fit at a fixed `alpha`; the estimate is
/// put on the data scale and aligned to the truth.
pub fn fit_report(n: usize, p: usize, rho: f64, seed: u64, alpha: f64) -> Result<FitReport, String> {
    let (data, panel) = panel(n, p, rho, seed)?;
    let fit = sdfm::fit(&panel, &FitConfig::new(2, alpha)).map_err(|e| e.to_string())?;
    let lam = fit.loadings();
    let scaled = DMatrix::from_fn(lam.nrows(), lam.ncols(), |i, k| lam[(i, k)] * panel.sds()[i]);
    let aligned = sim::align_loadings(&scaled, &data.loadings).map_err(|e| e.to_string())?;
    Ok(FitReport {
        truth: rows(&data.loadings),
        estimate: rows(&aligned),
        alpha,
        nonzero: fit.nonzero_counts.iter().sum(),
        mae: sim::loading_mae(&aligned, &data.loadings),
        f1: sim::support_f1(&aligned, &data.loadings, 1e-8),
        converged: fit.converged,
        objective_trace: fit.objective_trace.clone(),
    })
}

pub fn path_report(n: usize, p: usize, rho: f64, seed: u64, points: usize) -> Result<PathReport, String> {
    let (_, panel) = panel(n, p, rho, seed)?;
    let grid = AlphaGrid { points, ..AlphaGrid::default() };
    let sel = sdfm::select_alpha(&panel, &FitConfig::new(2, 0.0), &grid).map_err(|e| e.to_string())?;
    let b = &sel.report.bic_values;
    Ok(PathReport {
        alpha: b.iter().map(|x| x.alpha).collect(),
        bic: b.iter().map(|x| x.bic).collect(),
        nonzero: b.iter().map(|x| x.nonzero).collect(),
        chosen_alpha: sel.report.chosen_alpha,
        terminated_early: sel.report.terminated_early,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn rotation_curves(points: usize) -> Result<String, JsError> {
    to_js(rotation_report(points))
}

#[wasm_bindgen]
pub fn simulate_and_fit(n: usize, p: usize, rho: f64, seed: u32, alpha: f64) -> Result<String, JsError> {
    to_js(fit_report(n, p, rho, seed as u64, alpha))
}

#[wasm_bindgen]
pub fn alpha_path(n: usize, p: usize, rho: f64, seed: u32, points: usize) -> Result<String, JsError> {
    to_js(path_report(n, p, rho, seed as u64, points))
}
