#![allow(dead_code)]

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sdfm::admm::{self, LoadingProblem};
use sdfm::kalman;
use sdfm::linalg;
use sdfm::mstep::SufficientStats;
use sdfm::{DfmParams, TimeSeriesPanel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn random_spd<R: Rng>(rng: &mut R, r: usize, ridge: f64) -> DMatrix<f64> {
    let b = normal_matrix(rng, r, r);
    &b * b.transpose() / r as f64 + DMatrix::identity(r, r) * ridge
}

pub fn random_orthogonal<R: Rng>(rng: &mut R, r: usize) -> DMatrix<f64> {
    normal_matrix(rng, r, r).qr().q()
}

/// Random valid parameters with a stable VAR (spectral radius ≤ 0.9).
pub fn random_params<R: Rng>(rng: &mut R, p: usize, r: usize) -> DfmParams {
    let mut a = normal_matrix(rng, r, r);
    let rho = linalg::spectral_radius(&a);
    let target = rng.random_range(0.0..0.9);
    if rho > 0.0 {
        a *= target / rho;
    }
    DfmParams {
        loadings: normal_matrix(rng, p, r),
        var_coef: a,
        idio_var: DVector::from_fn(p, |_, _| rng.random_range(0.2..2.0)),
        state_cov: random_spd(rng, r, 0.2),
        init_mean: DVector::from_fn(r, |_, _| rng.random_range(-1.0..1.0)),
        init_cov: random_spd(rng, r, 0.5),
    }
}

/// Random panel with each cell missing independently with probability `miss`.
/// Every series keeps at least one observation.
pub fn random_panel<R: Rng>(rng: &mut R, n: usize, p: usize, miss: f64) -> TimeSeriesPanel {
    let values = normal_matrix(rng, n, p);
    let mut mask = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() >= miss);
    for i in 0..p {
        if !mask.column(i).iter().any(|&m| m) {
            mask[(rng.random_range(0..n), i)] = true;
        }
    }
    TimeSeriesPanel::unscaled(values, mask).unwrap()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Posterior moments of `(F_0, …, F_n)` given the observed cells, by
/// assembling the joint Gaussian of states and observations.
pub struct JointPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub loglik: f64,
}

pub fn joint_posterior(panel: &TimeSeriesPanel, params: &DfmParams) -> JointPosterior {
    let (n, p) = (panel.n(), panel.p());
    let r = params.num_factors();
    let a = &params.var_coef;
    let dim = (n + 1) * r;

    let mut marg = vec![params.init_cov.clone()];
    let mut means = vec![params.init_mean.clone()];
    for t in 1..=n {
        marg.push(a * &marg[t - 1] * a.transpose() + &params.state_cov);
        means.push(a * &means[t - 1]);
    }
    let mut a_pow = vec![DMatrix::<f64>::identity(r, r)];
    for k in 1..=n {
        a_pow.push(a * &a_pow[k - 1]);
    }
    let mut sff = DMatrix::zeros(dim, dim);
    for s in 0..=n {
        for t in 0..=s {
            let block = &a_pow[s - t] * &marg[t];
            sff.view_mut((s * r, t * r), (r, r)).copy_from(&block);
            sff.view_mut((t * r, s * r), (r, r)).copy_from(&block.transpose());
        }
    }
    let mu_f = DVector::from_iterator(dim, means.iter().flat_map(|m| m.iter().copied()));

    let cells: Vec<(usize, usize)> = (0..n)
        .flat_map(|t| (0..p).map(move |i| (t, i)))
        .filter(|&(t, i)| panel.is_observed(t, i))
        .collect();
    let m = cells.len();
    // Observation cell (t, i) loads on state block t + 1.
    let mut h = DMatrix::zeros(m, dim);
    let mut x = DVector::zeros(m);
    let mut noise = DMatrix::zeros(m, m);
    for (k, &(t, i)) in cells.iter().enumerate() {
        for j in 0..r {
            h[(k, (t + 1) * r + j)] = params.loadings[(i, j)];
        }
        x[k] = panel.get(t, i).unwrap();
        noise[(k, k)] = params.idio_var[i];
    }
    if m == 0 {
        return JointPosterior { mean: mu_f, cov: sff, loglik: 0.0 };
    }
    let sxx = &h * &sff * h.transpose() + noise;
    let sfx = &sff * h.transpose();
    let resid = &x - &h * &mu_f;
    let chol = sxx.clone().cholesky().unwrap();
    let mean = &mu_f + &sfx * chol.solve(&resid);
    let cov = &sff - &sfx * chol.solve(&sfx.transpose());
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let quad = resid.dot(&chol.solve(&resid));
    let loglik = -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad);
    JointPosterior { mean, cov, loglik }
}

/// Assemble `Σ_t A_t ⊗ B_t + νI` for `vec(Λ)` (column-major `p × r`) and
/// solve it densely.
pub fn naive_kronecker_solve(blocks: &[DMatrix<f64>], weights: &DMatrix<f64>, nu: f64, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, r) = rhs.shape();
    let mut big = DMatrix::<f64>::identity(p * r, p * r) * nu;
    for (t, a_t) in blocks.iter().enumerate() {
        let b_t = DMatrix::from_diagonal(&weights.row(t).transpose());
        big += a_t.kronecker(&b_t);
    }
    let x = big.lu().solve(&DVector::from_column_slice(rhs.as_slice())).unwrap();
    DMatrix::from_column_slice(p, r, x.as_slice())
}

pub fn fixed_moment_problem(seed: u64, n: usize, p: usize, r: usize, miss: f64) -> (TimeSeriesPanel, SufficientStats, DVector<f64>) {
    let mut g = rng(seed);
    let params = random_params(&mut g, p, r);
    let panel = random_panel(&mut g, n, p, miss);
    let out = kalman::filter_smooth(&panel, &params).unwrap();
    let stats = SufficientStats::from_smoother(&panel, &out);
    (panel, stats, params.idio_var)
}

/// Proximal gradient on the same objective, run to a tight fixed point.
pub fn ista(problem: &LoadingProblem, alpha: f64) -> DMatrix<f64> {
    let lipschitz = problem
        .grams
        .iter()
        .zip(problem.idio_var.iter())
        .map(|(g, s2)| g.symmetric_eigenvalues().max() / s2)
        .fold(0.0, f64::max);
    let step = 1.0 / lipschitz;
    let mut x = DMatrix::zeros(problem.p(), problem.r());
    for _ in 0..200_000 {
        let next = (&x - problem.gradient(&x) * step).map(|v| v.signum() * (v.abs() - alpha * step).max(0.0));
        let change = max_abs_diff(&next, &x);
        x = next;
        if change < 1e-14 {
            break;
        }
    }
    x
}

/// Minimum wall time of `reps` runs.
pub fn time_solve(p: usize, reps: usize) -> f64 {
    let (n, r) = (100, 4);
    let mut g = rng(p as u64);
    let blocks: Vec<_> = (0..n).map(|_| random_spd(&mut g, r, 0.01)).collect();
    let weights = DMatrix::from_fn(n, p, |_, _| g.random_range(0.5..2.0));
    let rhs = normal_matrix(&mut g, p, r);
    (0..reps)
        .map(|_| {
            let start = Instant::now();
            std::hint::black_box(admm::fast_block_solve(&blocks, &weights, 1.0, &rhs).unwrap());
            start.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Best-of times for each `p`, measured in interleaved rounds so a burst of
/// background load does not land on a single size.
pub fn solve_times(ps: &[usize], rounds: usize, reps: usize) -> Vec<f64> {
    time_solve(ps[0], 3);
    let mut best = vec![f64::INFINITY; ps.len()];
    for _ in 0..rounds {
        for (b, &p) in best.iter_mut().zip(ps) {
            *b = b.min(time_solve(p, reps));
        }
    }
    best
}

/// Least-squares slope of log time against log p.
pub fn log_log_slope(ps: &[usize], times: &[f64]) -> f64 {
    let xs: Vec<f64> = ps.iter().map(|&p| (p as f64).ln()).collect();
    let ys: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
