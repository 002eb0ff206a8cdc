mod common;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use common::{
    fixed_moment_problem, ista, log_log_slope, max_abs_diff, naive_kronecker_solve, normal_matrix, random_spd, rng,
    solve_times,
};
use sdfm::admm::{self, AdmmSettings, LoadingProblem};
use sdfm::kalman;
use sdfm::mstep::SufficientStats;
use sdfm::sim::{simulate, DgpSpec};
use sdfm::TimeSeriesPanel;

#[test]
fn block_solve_matches_dense_kronecker_system() {
    let mut g = rng(21);
    for _ in 0..25 {
        let n = g.random_range(1..=20);
        let p = g.random_range(1..=30);
        let r = g.random_range(1..=4);
        let blocks: Vec<_> = (0..n).map(|_| random_spd(&mut g, r, 0.01)).collect();
        let weights = DMatrix::from_fn(n, p, |_, _| if g.random::<f64>() < 0.3 { 0.0 } else { g.random_range(0.1..5.0) });
        let rhs = normal_matrix(&mut g, p, r);
        let nu = g.random_range(0.1..3.0);
        let fast = admm::fast_block_solve(&blocks, &weights, nu, &rhs).unwrap();
        let naive = naive_kronecker_solve(&blocks, &weights, nu, &rhs);
        assert!(max_abs_diff(&fast, &naive) < 1e-8, "n={n} p={p} r={r}");
    }
}

#[test]
fn primal_solve_matches_dense_system_on_smoother_moments() {
    let (panel, stats, idio) = fixed_moment_problem(22, 30, 8, 2, 0.2);
    let mut g = rng(23);
    let (z, u) = (normal_matrix(&mut g, 8, 2), normal_matrix(&mut g, 8, 2));
    let lam = admm::primal_solve(&stats, &idio, &panel, 1.0, &z, &u).unwrap();

    let weights = DMatrix::from_fn(30, 8, |t, i| if panel.is_observed(t, i) { 1.0 / idio[i] } else { 0.0 });
    let blocks: Vec<_> = (0..30).map(|t| stats.sample_moment(t).clone()).collect();
    let rhs = DMatrix::from_fn(8, 2, |i, k| stats.cross[(i, k)] / idio[i]) + (&z - &u);
    assert!(max_abs_diff(&lam, &naive_kronecker_solve(&blocks, &weights, 1.0, &rhs)) < 1e-8);
}

#[test]
fn primal_solve_large_nu_returns_target() {
    let (panel, stats, idio) = fixed_moment_problem(24, 20, 5, 2, 0.0);
    let mut g = rng(25);
    let target = normal_matrix(&mut g, 5, 2);
    let lam = admm::primal_solve(&stats, &idio, &panel, 1e8, &target, &DMatrix::zeros(5, 2)).unwrap();
    for (a, b) in lam.iter().zip(target.iter()) {
        assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0));
    }
}

#[test]
fn primal_solve_without_ridge_is_weighted_least_squares() {
    // Fully observed: row i solves (Σ_t S_t) λ_i = Σ_t x_ti a_t, whatever σ²_i.
    let (panel, stats, idio) = fixed_moment_problem(26, 40, 6, 3, 0.0);
    let zero = DMatrix::zeros(6, 3);
    let lam = admm::primal_solve(&stats, &idio, &panel, 1e-12, &zero, &zero).unwrap();
    let mut gram = DMatrix::<f64>::zeros(3, 3);
    for t in 0..40 {
        gram += stats.sample_moment(t);
    }
    let inv = gram.try_inverse().unwrap();
    for i in 0..6 {
        let mut c = DVector::<f64>::zeros(3);
        for t in 0..40 {
            c += stats.means.row(t).transpose() * panel.values()[(t, i)];
        }
        let expected = &inv * c;
        assert!((lam.row(i).transpose() - expected).amax() < 1e-6);
    }
}

#[test]
fn penalised_solve_matches_proximal_gradient() {
    for (seed, r) in [(31, 1), (32, 1), (33, 2), (34, 3)] {
        let (panel, stats, idio) = fixed_moment_problem(seed, 40, 6, r, 0.15);
        let problem = LoadingProblem::new(&stats, &panel, &idio);
        let dense = problem.unpenalised().unwrap();
        let scale = problem.gradient(&DMatrix::zeros(6, r)).amax();
        // The default stopping rule is relative (1e-4), enough for 1e-5 only
        // in the scalar-factor case; larger problems run to a tighter rule.
        let settings = if r == 1 {
            AdmmSettings::default()
        } else {
            AdmmSettings { tol_abs: 1e-10, tol_rel: 1e-8, max_iter: 100_000, ..AdmmSettings::default() }
        };
        for frac in [0.05, 0.3, 0.7] {
            let alpha = frac * scale;
            let state = admm::solve_loadings(&problem, alpha, &settings, None).unwrap();
            assert!(state.converged);
            let reference = ista(&problem, alpha);
            assert!(
                max_abs_diff(&state.aux, &reference) < 1e-5,
                "seed {seed} alpha {alpha}: {}",
                max_abs_diff(&state.aux, &reference)
            );
            let obj = problem.objective(&state.aux, alpha);
            assert!(obj <= problem.objective(&dense, alpha) + 1e-6);
            assert!(obj <= problem.objective(&DMatrix::zeros(6, r), alpha) + 1e-6);
        }
    }
}

#[test]
fn zero_penalty_solve_equals_unpenalised_update() {
    let (panel, stats, idio) = fixed_moment_problem(35, 50, 10, 2, 0.1);
    let problem = LoadingProblem::new(&stats, &panel, &idio);
    // the default stopping rule is relative; check the fixed point under a tight one
    let tight = AdmmSettings { tol_abs: 1e-10, tol_rel: 1e-8, max_iter: 100_000, ..AdmmSettings::default() };
    let state = admm::solve_loadings(&problem, 0.0, &tight, None).unwrap();
    assert!(state.converged);
    assert!(max_abs_diff(&state.aux, &problem.unpenalised().unwrap()) < 1e-6);
}

#[test]
fn sparsity_shrinks_along_penalty_grid() {
    let data = simulate(&DgpSpec::new(100, 30, 0.3, 36)).unwrap();
    let panel = TimeSeriesPanel::standardise(&data.values, None).unwrap();
    let params = sdfm::initialise(&panel, 2, sdfm::DEFAULT_VARIANCE_FLOOR).unwrap();
    let out = kalman::filter_smooth(&panel, &params).unwrap();
    let stats = SufficientStats::from_smoother(&panel, &out);
    let problem = LoadingProblem::new(&stats, &panel, &params.idio_var);
    let grid = sdfm::AlphaGrid { min: 1e-3, max: 1e4, points: 40 }.values().unwrap();
    let mut warm = None;
    let mut previous = usize::MAX;
    let mut killed_column = false;
    for alpha in grid {
        let state = admm::solve_loadings(&problem, alpha, &AdmmSettings::default(), warm.as_ref()).unwrap();
        let nnz = state.aux.iter().filter(|v| **v != 0.0).count();
        assert!(nnz <= previous.saturating_add(2), "alpha {alpha}: {nnz} after {previous}");
        previous = nnz;
        killed_column |= (0..2).any(|k| state.aux.column(k).iter().all(|v| *v == 0.0));
        warm = Some(state);
    }
    assert!(killed_column, "the largest penalties should remove a factor");
}

#[test]
fn block_solve_time_is_linear_in_series_count() {
    let ps = [50, 100, 200, 400];
    let times = solve_times(&ps, 5, 10);
    let slope = log_log_slope(&ps, &times);
    assert!((0.7..=1.4).contains(&slope), "slope {slope}, times {times:?}");
}
