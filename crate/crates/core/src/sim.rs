//! Synthetic data, loading-recovery metrics, the AR(1) baseline and the
//! Monte-Carlo experiment drivers.
//!
//! The two-factor design has block loadings `Λ = I₂ ⊗ 1_{p/2}`, unit
//! idiosyncratic variance and factor dynamics
//! `A = [[a, 0], [ρ, 0]]`, `Σ_u = diag(1 − a², 1 − ρ²)`, so both factors have
//! unit variance for any `(a, ρ)`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::em;
use crate::error::{DfmError, Result};
use crate::linalg;
use crate::panel::TimeSeriesPanel;
use crate::params::{DfmParams, FitConfig};
use crate::tuning::{self, AlphaGrid};

/// Magnitude at or below which a loading counts as zero.
pub const ZERO_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    /// AR coefficient of the first factor.
    pub a: f64,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(n: usize, p: usize, rho: f64, seed: u64) -> Self {
        Self { n, p, rho, a: 0.8, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.p % 2 != 0 {
            return Err(DfmError::InvalidConfig("n must be positive and p positive and even".into()));
        }
        if !(self.a * self.a < 1.0) || !(self.rho * self.rho < 1.0) {
            return Err(DfmError::InvalidConfig("need a² < 1 and ρ² < 1".into()));
        }
        Ok(())
    }

    /// The true model parameters of the design.
    pub fn params(&self) -> DfmParams {
        let p = self.p;
        let half = p / 2;
        let loadings = DMatrix::from_fn(p, 2, |i, k| if (i < half) == (k == 0) { 1.0 } else { 0.0 });
        let var_coef = DMatrix::from_row_slice(2, 2, &[self.a, 0.0, self.rho, 0.0]);
        let state_cov = DMatrix::from_row_slice(2, 2, &[1.0 - self.a * self.a, 0.0, 0.0, 1.0 - self.rho * self.rho]);
        let init_cov = linalg::discrete_lyapunov(&var_coef, &state_cov).expect("a² < 1 keeps A stable");
        DfmParams {
            loadings,
            var_coef,
            idio_var: DVector::from_element(p, 1.0),
            state_cov,
            init_mean: DVector::zeros(2),
            init_cov,
        }
    }
}

/// Parameters of the scalability design: `Λ = I_r ⊗ 1_{p/r}`, `A = 0.8 I`,
/// `Σ_u = (1 − 0.8²) I`, `Σ_ε = I`.
pub fn timing_params(p: usize, r: usize) -> Result<DfmParams> {
    if r == 0 || p % r != 0 {
        return Err(DfmError::InvalidConfig("p must be a multiple of r".into()));
    }
    let block = p / r;
    let var_coef = DMatrix::identity(r, r) * 0.8;
    let state_cov = DMatrix::identity(r, r) * (1.0 - 0.64);
    Ok(DfmParams {
        loadings: DMatrix::from_fn(p, r, |i, k| if i / block == k { 1.0 } else { 0.0 }),
        init_cov: linalg::discrete_lyapunov(&var_coef, &state_cov)?,
        var_coef,
        idio_var: DVector::from_element(p, 1.0),
        state_cov,
        init_mean: DVector::zeros(r),
    })
}

/// Independent stream `replicate` of the generator seeded with `seed`.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    /// `n × p` observations on the original scale (fully observed).
    pub values: DMatrix<f64>,
    pub loadings: DMatrix<f64>,
    /// `n × r` factor path.
    pub factors: DMatrix<f64>,
    pub params: DfmParams,
}

fn standard_normal_vec<R: Rng>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Draw `n` periods from a stationary factor model, starting from the
/// stationary distribution.
pub fn simulate_model<R: Rng>(params: &DfmParams, n: usize, rng: &mut R) -> Result<SimulatedData> {
    let (p, r) = (params.num_series(), params.num_factors());
    let stationary = linalg::discrete_lyapunov(&params.var_coef, &params.state_cov)?;
    let chol = |m: &DMatrix<f64>| -> DMatrix<f64> {
        // Cholesky of a PSD matrix that may be singular.
        let m = linalg::floor_eigenvalues(m, 0.0);
        match m.clone().cholesky() {
            Some(c) => c.l(),
            None => {
                let eig = m.symmetric_eigen();
                &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()))
            }
        }
    };
    let l_stat = chol(&stationary);
    let l_u = chol(&params.state_cov);
    let sd_eps = params.idio_var.map(f64::sqrt);

    let mut f = &l_stat * standard_normal_vec(rng, r);
    let mut factors = DMatrix::zeros(n, r);
    let mut values = DMatrix::zeros(n, p);
    for t in 0..n {
        f = &params.var_coef * f + &l_u * standard_normal_vec(rng, r);
        factors.set_row(t, &f.transpose());
        let common = &params.loadings * &f;
        for i in 0..p {
            let e: f64 = rng.sample(StandardNormal);
            values[(t, i)] = common[i] + sd_eps[i] * e;
        }
    }
    Ok(SimulatedData { values, loadings: params.loadings.clone(), factors, params: params.clone() })
}

/// Simulate the two-factor design with the generator seeded by `spec.seed`.
pub fn simulate(spec: &DgpSpec) -> Result<SimulatedData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    simulate_model(&spec.params(), spec.n, &mut rng)
}

/// Align an estimate to the truth: rescale to equal Frobenius norm, then
/// greedily match columns by smallest 2-norm distance (each true column
/// claimed once), flipping a column's sign when that is closer.
pub fn align_loadings(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if estimate.shape() != truth.shape() {
        return Err(DfmError::Dimension("estimate and truth shapes differ".into()));
    }
    let r = truth.ncols();
    let norm = estimate.norm();
    let scaled = if norm > 0.0 { estimate * (truth.norm() / norm) } else { estimate.clone() };

    let mut candidates = Vec::with_capacity(r * r);
    for j in 0..r {
        let e = scaled.column(j);
        for k in 0..r {
            let t = truth.column(k);
            let same = (e - t).norm();
            let flipped = (e + t).norm();
            let (d, sign) = if flipped < same { (flipped, -1.0) } else { (same, 1.0) };
            candidates.push((d, j, k, sign));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_est = vec![false; r];
    let mut used_true = vec![false; r];
    let mut out = DMatrix::zeros(truth.nrows(), r);
    for (_, j, k, sign) in candidates {
        if used_est[j] || used_true[k] {
            continue;
        }
        used_est[j] = true;
        used_true[k] = true;
        out.set_column(k, &(scaled.column(j) * sign));
    }
    Ok(out)
}

/// `(rp)⁻¹ ‖Λ̂ − Λ‖₁`.
pub fn loading_mae(aligned: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    let count = truth.len() as f64;
    aligned.iter().zip(truth.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / count
}

/// F1 score of the recovered support (`|entry| > zero_tol`).
pub fn support_f1(aligned: &DMatrix<f64>, truth: &DMatrix<f64>, zero_tol: f64) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (e, t) in aligned.iter().zip(truth.iter()) {
        match (e.abs() > zero_tol, t.abs() > zero_tol) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Least-squares AR(1) coefficient (no intercept) on contiguous observed pairs.
pub fn ar1_coefficient(series: &[Option<f64>]) -> Result<f64> {
    let observed = series.iter().filter(|v| v.is_some()).count();
    if observed < 10 {
        return Err(DfmError::InsufficientData(format!(
            "AR(1) needs at least 10 observations, got {observed}"
        )));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for w in series.windows(2) {
        if let (Some(prev), Some(cur)) = (w[0], w[1]) {
            num += cur * prev;
            den += prev * prev;
        }
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// Forecasts for the `horizon` periods after the series' last observation.
pub fn ar1_forecast(series: &[Option<f64>], horizon: usize) -> Result<Vec<f64>> {
    let coef = ar1_coefficient(series)?;
    let last = series.iter().rev().find_map(|v| *v).expect("at least 10 observations");
    let mut out = Vec::with_capacity(horizon);
    let mut x = last;
    for _ in 0..horizon {
        x *= coef;
        out.push(x);
    }
    Ok(out)
}

/// AR(1) benchmark forecast of one series of a panel, on the modelling scale,
/// for the `horizon` periods after the end of the sample. Trailing missing
/// cells count towards the horizon.
pub fn ar1_baseline(panel: &TimeSeriesPanel, series: usize, horizon: usize) -> Result<Vec<f64>> {
    if series >= panel.p() {
        return Err(DfmError::Dimension(format!("series index {series} out of range")));
    }
    let s: Vec<Option<f64>> = (0..panel.n()).map(|t| panel.get(t, series)).collect();
    let last_obs = s.iter().rposition(|v| v.is_some()).unwrap_or(0);
    let gap = panel.n() - 1 - last_obs;
    let steps = ar1_forecast(&s, gap + horizon)?;
    Ok(steps[gap..].to_vec())
}

/// Series masked in the final row at missingness `fraction`: the first
/// `fraction` of each of the two loading blocks.
pub fn masked_series(p: usize, fraction: f64) -> Vec<usize> {
    let half = p / 2;
    let k = ((fraction * half as f64).round() as usize).min(half);
    (0..k).chain(half..half + k).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RotationNorm {
    L0,
    L1,
    L2,
}

impl RotationNorm {
    pub fn from_q(q: u32) -> Result<Self> {
        match q {
            0 => Ok(Self::L0),
            1 => Ok(Self::L1),
            2 => Ok(Self::L2),
            _ => Err(DfmError::InvalidConfig(format!("q must be 0, 1 or 2, got {q}"))),
        }
    }

    pub fn eval(&self, m: &DMatrix<f64>) -> f64 {
        match self {
            Self::L0 => m.iter().filter(|v| v.abs() > ZERO_TOL).count() as f64,
            Self::L1 => m.iter().map(|v| v.abs()).sum(),
            Self::L2 => m.norm(),
        }
    }
}

/// The 10 × 2 loading matrix with ones in the top half of the first column
/// and the complement in the second.
pub fn rotation_base_loadings() -> DMatrix<f64> {
    DMatrix::from_fn(10, 2, |i, k| if (i < 5) == (k == 0) { 1.0 } else { 0.0 })
}

pub fn rotation_matrix(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// `(θ, ‖Λ₀ Q(θ)‖_q)` over the grid.
pub fn rotation_norm_curve(norm: RotationNorm, thetas: &[f64]) -> Vec<(f64, f64)> {
    let base = rotation_base_loadings();
    thetas.iter().map(|&th| (th, norm.eval(&(&base * rotation_matrix(th))))).collect()
}

/// `points` evenly spaced angles in `(−π, π]`.
pub fn theta_grid(points: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    (1..=points).map(|k| -PI + 2.0 * PI * k as f64 / points as f64).collect()
}

/// One metric from one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub n: usize,
    pub p: usize,
    pub r: usize,
    pub rho: f64,
    pub missing_frac: Option<f64>,
    pub replicate: usize,
    pub method: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSummary {
    pub n: usize,
    pub p: usize,
    pub r: usize,
    pub rho: f64,
    pub missing_frac: Option<f64>,
    pub method: String,
    pub metric: String,
    pub count: usize,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub records: Vec<MetricRecord>,
    pub summary: Vec<QuantileSummary>,
    /// Replicates dropped because a fit failed.
    pub skipped: usize,
    pub failures: Vec<String>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl ExperimentReport {
    fn from_records(records: Vec<MetricRecord>, skipped: usize, failures: Vec<String>) -> Self {
        let mut summary: Vec<QuantileSummary> = Vec::new();
        let key = |m: &MetricRecord| {
            (m.n, m.p, m.r, m.rho.to_bits(), m.missing_frac.map(f64::to_bits), m.method.clone(), m.metric.clone())
        };
        let mut keys: Vec<_> = records.iter().map(key).collect();
        keys.dedup();
        let mut seen = std::collections::HashSet::new();
        for k in keys {
            if !seen.insert(k.clone()) {
                continue;
            }
            let group: Vec<&MetricRecord> = records.iter().filter(|m| key(m) == k).collect();
            let mut vals: Vec<f64> = group.iter().map(|m| m.value).collect();
            vals.sort_by(f64::total_cmp);
            let first = group[0];
            summary.push(QuantileSummary {
                n: first.n,
                p: first.p,
                r: first.r,
                rho: first.rho,
                missing_frac: first.missing_frac,
                method: first.method.clone(),
                metric: first.metric.clone(),
                count: vals.len(),
                q25: quantile_sorted(&vals, 0.25),
                q50: quantile_sorted(&vals, 0.5),
                q75: quantile_sorted(&vals, 0.75),
            });
        }
        Self { records, summary, skipped, failures }
    }

    /// Median of `metric` for `method` at the configuration matching `filter`.
    pub fn median<F: Fn(&QuantileSummary) -> bool>(&self, method: &str, metric: &str, filter: F) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.method == method && s.metric == metric && filter(s))
            .map(|s| s.q50)
    }
}

fn run_replicates<T, F>(reps: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..reps).into_par_iter().map(job).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..reps).map(job).collect()
    }
}

fn collect(results: Vec<Result<Vec<MetricRecord>>>) -> ExperimentReport {
    let mut records = Vec::new();
    let mut skipped = 0;
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(mut rs) => records.append(&mut rs),
            Err(e) => {
                skipped += 1;
                failures.push(e.to_string());
            }
        }
    }
    ExperimentReport::from_records(records, skipped, failures)
}

/// Settings shared by the Monte-Carlo drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub p_values: Vec<usize>,
    pub rho_values: Vec<f64>,
    pub a: f64,
    pub reps: usize,
    pub seed: u64,
    pub grid: AlphaGrid,
    pub missing_fracs: Vec<f64>,
    pub r_values: Vec<usize>,
    pub em_tol: f64,
}

impl ExperimentConfig {
    fn fit_config(&self, r: usize) -> FitConfig {
        FitConfig { em_tol: self.em_tol, ..FitConfig::new(r, 0.0) }
    }

    pub fn recovery() -> Self {
        Self {
            n: 100,
            p_values: vec![18, 60, 120],
            rho_values: vec![0.0, 0.6],
            a: 0.8,
            reps: 20,
            seed: 1,
            grid: AlphaGrid::default(),
            missing_fracs: Vec::new(),
            r_values: vec![2],
            em_tol: FitConfig::new(1, 0.0).em_tol,
        }
    }

    pub fn forecast() -> Self {
        Self {
            n: 200,
            p_values: vec![64],
            rho_values: vec![0.0, 0.6, 0.9],
            missing_fracs: vec![0.25, 0.5, 0.75, 1.0],
            ..Self::recovery()
        }
    }

    pub fn timing() -> Self {
        Self {
            n: 100,
            p_values: vec![32, 64, 128, 256],
            rho_values: vec![0.0],
            reps: 3,
            r_values: vec![2, 4, 6, 8],
            grid: AlphaGrid { points: 10, ..AlphaGrid::default() },
            ..Self::recovery()
        }
    }
}

/// Seed for configuration `cfg_index`, replicate `rep`.
fn derived_seed(seed: u64, cfg_index: usize, rep: usize) -> u64 {
    let mut rng = replicate_rng(seed, cfg_index as u64);
    let mut s = 0;
    for _ in 0..=rep {
        s = rng.random::<u64>();
    }
    s
}

/// Estimated loadings on the original data scale.
fn original_scale_loadings(panel: &TimeSeriesPanel, loadings: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(loadings.nrows(), loadings.ncols(), |i, k| loadings[(i, k)] * panel.sds()[i])
}

/// Loading recovery: SDFM with BIC-tuned α versus the dense (α = 0) fit.
pub fn recovery_experiment(cfg: &ExperimentConfig) -> ExperimentReport {
    let mut configs = Vec::new();
    for &rho in &cfg.rho_values {
        for &p in &cfg.p_values {
            configs.push((rho, p));
        }
    }
    let jobs: Vec<(usize, usize)> =
        (0..configs.len()).flat_map(|c| (0..cfg.reps).map(move |rep| (c, rep))).collect();
    let results = run_replicates(jobs.len(), |j| {
        let (c, rep) = jobs[j];
        let (rho, p) = configs[c];
        recovery_replicate(cfg, rho, p, rep, derived_seed(cfg.seed, c, rep))
    });
    collect(results)
}

fn recovery_replicate(cfg: &ExperimentConfig, rho: f64, p: usize, rep: usize, seed: u64) -> Result<Vec<MetricRecord>> {
    let spec = DgpSpec { n: cfg.n, p, rho, a: cfg.a, seed };
    let data = simulate(&spec)?;
    let panel = TimeSeriesPanel::standardise(&data.values, None)?;
    let base = cfg.fit_config(2);
    let sel = tuning::select_alpha(&panel, &base, &cfg.grid)?;
    let dense = em::fit(&panel, &base)?;
    let rec = |method: &str, metric: &str, value: f64| MetricRecord {
        n: cfg.n,
        p,
        r: 2,
        rho,
        missing_frac: None,
        replicate: rep,
        method: method.into(),
        metric: metric.into(),
        value,
    };
    let mut out = Vec::new();
    for (method, loadings) in [("sdfm", &sel.fit.params.loadings), ("dfm", &dense.params.loadings)] {
        let aligned = align_loadings(&original_scale_loadings(&panel, loadings), &data.loadings)?;
        out.push(rec(method, "mae", loading_mae(&aligned, &data.loadings)));
        out.push(rec(method, "f1", support_f1(&aligned, &data.loadings, ZERO_TOL)));
    }
    out.push(rec("sdfm", "alpha", sel.fit.alpha));
    Ok(out)
}

/// Final-row forecasting under block missingness: SDFM versus per-series AR(1).
pub fn forecast_experiment(cfg: &ExperimentConfig) -> ExperimentReport {
    let p = *cfg.p_values.first().unwrap_or(&64);
    let jobs: Vec<(usize, usize)> =
        (0..cfg.rho_values.len()).flat_map(|c| (0..cfg.reps).map(move |rep| (c, rep))).collect();
    let results = run_replicates(jobs.len(), |j| {
        let (c, rep) = jobs[j];
        forecast_replicate(cfg, cfg.rho_values[c], p, rep, derived_seed(cfg.seed, c, rep))
    });
    collect(results)
}

fn forecast_replicate(cfg: &ExperimentConfig, rho: f64, p: usize, rep: usize, seed: u64) -> Result<Vec<MetricRecord>> {
    let spec = DgpSpec { n: cfg.n, p, rho, a: cfg.a, seed };
    let data = simulate(&spec)?;
    let last = cfg.n - 1;
    let mut out = Vec::new();
    for &frac in &cfg.missing_fracs {
        let masked = masked_series(p, frac);
        if masked.is_empty() {
            continue;
        }
        let mut raw = data.values.clone();
        for &i in &masked {
            raw[(last, i)] = f64::NAN;
        }
        let panel = TimeSeriesPanel::standardise(&raw, None)?;
        let sel = tuning::select_alpha(&panel, &cfg.fit_config(2), &cfg.grid)?;
        let state = sel.fit.smoother.smoothed_state(last);
        let (mut err_sdfm, mut err_ar) = (0.0, 0.0);
        for &i in &masked {
            let truth = data.values[(last, i)];
            let pred = sel.fit.params.loadings.row(i).dot(&state.transpose());
            err_sdfm += (pred * panel.sds()[i] + panel.means()[i] - truth).abs();
            let ar = ar1_baseline(&panel, i, 1)?[0];
            err_ar += (ar * panel.sds()[i] + panel.means()[i] - truth).abs();
        }
        let k = masked.len() as f64;
        for (method, value) in [("sdfm", err_sdfm / k), ("ar1", err_ar / k)] {
            out.push(MetricRecord {
                n: cfg.n,
                p,
                r: 2,
                rho,
                missing_frac: Some(frac),
                replicate: rep,
                method: method.into(),
                metric: "mae".into(),
                value,
            });
        }
    }
    Ok(out)
}

/// Mean wall-clock seconds per EM iteration across an α search, per (p, r).
/// Run sequentially so timings are not distorted by sibling replicates.
pub fn timing_experiment(cfg: &ExperimentConfig) -> ExperimentReport {
    let mut results = Vec::new();
    let mut c = 0;
    for &p in &cfg.p_values {
        for &r in &cfg.r_values {
            for rep in 0..cfg.reps {
                let seed = derived_seed(cfg.seed, c, rep);
                results.push(timing_replicate(cfg, p, r, rep, seed));
            }
            c += 1;
        }
    }
    collect(results)
}

fn timing_replicate(cfg: &ExperimentConfig, p: usize, r: usize, rep: usize, seed: u64) -> Result<Vec<MetricRecord>> {
    let params = timing_params(p, r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = simulate_model(&params, cfg.n, &mut rng)?;
    let panel = TimeSeriesPanel::standardise(&data.values, None)?;
    let start = Instant::now();
    let sel = tuning::select_alpha(&panel, &cfg.fit_config(r), &cfg.grid)?;
    let elapsed = start.elapsed().as_secs_f64();
    let iterations: usize = sel.report.bic_values.iter().map(|b| b.em_iterations).sum();
    let rec = |metric: &str, value: f64| MetricRecord {
        n: cfg.n,
        p,
        r,
        rho: 0.0,
        missing_frac: None,
        replicate: rep,
        method: "sdfm".into(),
        metric: metric.into(),
        value,
    };
    Ok(vec![
        rec("seconds_per_em_iteration", elapsed / iterations.max(1) as f64),
        rec("em_iterations", iterations as f64),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn design_factors_have_unit_variance() {
        for rho in [0.0, 0.6, 0.9] {
            let spec = DgpSpec::new(10, 4, rho, 0);
            let s = spec.params().init_cov;
            assert!((s[(0, 0)] - 1.0).abs() < 1e-12);
            assert!((s[(1, 1)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn long_run_sample_variance() {
        let data = simulate(&DgpSpec::new(100_000, 2, 0.6, 7)).unwrap();
        for k in 0..2 {
            let col = data.factors.column(k);
            let m = col.mean();
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
            assert!((0.97..=1.03).contains(&v), "factor {k} variance {v}");
        }
    }

    #[test]
    fn simulation_is_seed_deterministic() {
        let a = simulate(&DgpSpec::new(20, 6, 0.3, 42)).unwrap();
        let b = simulate(&DgpSpec::new(20, 6, 0.3, 42)).unwrap();
        let c = simulate(&DgpSpec::new(20, 6, 0.3, 43)).unwrap();
        assert_eq!(a.values, b.values);
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(DgpSpec::new(10, 5, 0.0, 0).validate().is_err());
        assert!(DgpSpec::new(10, 4, 1.0, 0).validate().is_err());
        assert!(DgpSpec { a: -1.0, ..DgpSpec::new(10, 4, 0.0, 0) }.validate().is_err());
    }

    #[test]
    fn alignment_undoes_swap_sign_and_scale() {
        let truth = DgpSpec::new(1, 8, 0.0, 0).params().loadings;
        let mut swapped = truth.clone();
        swapped.swap_columns(0, 1);
        assert_eq!(align_loadings(&swapped, &truth).unwrap(), truth);
        assert_eq!(align_loadings(&(-&truth), &truth).unwrap(), truth);
        let doubled = align_loadings(&(&truth * 2.0), &truth).unwrap();
        assert!((doubled - &truth).abs().max() < 1e-12);
    }

    #[test]
    fn mae_examples() {
        let t = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(loading_mae(&t, &t), 0.0);
        assert!((loading_mae(&t.map(|v| v + 0.1), &t) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn f1_examples() {
        let t = DMatrix::from_row_slice(4, 1, &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(support_f1(&t, &t, ZERO_TOL), 1.0);
        assert_eq!(support_f1(&DMatrix::zeros(4, 1), &t, ZERO_TOL), 0.0);
        let half = DMatrix::from_row_slice(4, 1, &[0.7, 0.0, 0.0, 0.0]);
        assert!((support_f1(&half, &t, ZERO_TOL) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ar1_examples() {
        let zeros = vec![Some(0.0); 20];
        assert_eq!(ar1_forecast(&zeros, 3).unwrap(), vec![0.0; 3]);
        assert!(ar1_coefficient(&vec![Some(1.0); 9]).is_err());
        let s: Vec<Option<f64>> = (0..40).map(|t| Some(0.9f64.powi(t))).collect();
        assert!((ar1_coefficient(&s).unwrap() - 0.9).abs() < 1e-12);
        let far = ar1_forecast(&s, 2000).unwrap();
        assert!(far.last().unwrap().abs() < 1e-12);
    }

    #[test]
    fn ar1_estimate_on_long_ar_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = 0.0;
        let s: Vec<Option<f64>> = (0..5000)
            .map(|_| {
                x = 0.8 * x + rng.sample::<f64, _>(StandardNormal);
                Some(x)
            })
            .collect();
        assert!((ar1_coefficient(&s).unwrap() - 0.8).abs() < 0.05);
    }

    #[test]
    fn ar1_skips_broken_pairs() {
        let mut s: Vec<Option<f64>> = (0..12).map(|t| Some(0.5f64.powi(t))).collect();
        s[5] = None;
        assert!((ar1_coefficient(&s).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn masked_indices_quarter() {
        let m = masked_series(64, 0.25);
        let expect: Vec<usize> = (0..8).chain(32..40).collect();
        assert_eq!(m, expect);
        assert_eq!(masked_series(64, 1.0).len(), 64);
    }

    #[test]
    fn rotation_examples() {
        let l0 = rotation_norm_curve(RotationNorm::L0, &[0.0, PI / 4.0]);
        assert_eq!(l0[0].1, 10.0);
        assert_eq!(l0[1].1, 20.0);
        let l2 = rotation_norm_curve(RotationNorm::L2, &theta_grid(64));
        for (_, v) in l2 {
            assert!((v - 10f64.sqrt()).abs() < 1e-12);
        }
        assert!(RotationNorm::from_q(3).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.25), 2.0);
        assert!((quantile_sorted(&[1.0, 2.0], 0.25) - 1.25).abs() < 1e-15);
    }

    #[test]
    fn timing_design_shape() {
        let p = timing_params(12, 3).unwrap();
        assert_eq!(p.nonzero_counts(), vec![4, 4, 4]);
        assert!(timing_params(10, 3).is_err());
    }
}
