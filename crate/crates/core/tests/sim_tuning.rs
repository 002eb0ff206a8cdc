mod common;

use std::f64::consts::PI;

use nalgebra::DMatrix;

use common::{max_abs_diff, normal_matrix, rng};
use sdfm::sim::{
    align_loadings, rotation_norm_curve, simulate, theta_grid, DgpSpec, RotationNorm,
};
use sdfm::tuning::{expected_residual_variance, select_alpha, select_num_factors, AlphaGrid};
use sdfm::{fit, FitConfig, TimeSeriesPanel};

fn permutations(r: usize) -> Vec<Vec<usize>> {
    if r == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for rest in permutations(r - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, r - 1);
            out.push(p);
        }
    }
    out
}

#[test]
fn alignment_undoes_every_signed_permutation_and_scale() {
    let mut g = rng(61);
    for r in 1..=3 {
        let truth = normal_matrix(&mut g, 12, r);
        for perm in permutations(r) {
            for signs in 0..(1 << r) {
                for scale in [0.01, 0.5, 1.0, 3.0, 250.0] {
                    let est = DMatrix::from_fn(12, r, |i, k| {
                        let sign = if signs >> k & 1 == 1 { -1.0 } else { 1.0 };
                        scale * sign * truth[(i, perm[k])]
                    });
                    let aligned = align_loadings(&est, &truth).unwrap();
                    assert!(max_abs_diff(&aligned, &truth) < 1e-12, "r={r} perm={perm:?} signs={signs} scale={scale}");
                }
            }
        }
    }
}

#[test]
fn rotation_curves_have_the_expected_shape() {
    let grid = theta_grid(360);
    let special = [0.0, PI / 2.0, -PI / 2.0, PI, -PI];
    let is_special = |th: f64| special.iter().any(|s| (th - s).abs() < 1e-9);

    let l2 = rotation_norm_curve(RotationNorm::L2, &grid);
    let first = l2[0].1;
    assert!(l2.iter().all(|(_, v)| (v - first).abs() < 1e-12));

    for norm in [RotationNorm::L0, RotationNorm::L1] {
        let curve = rotation_norm_curve(norm, &grid);
        let min = curve.iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
        let argmins: Vec<f64> = curve.iter().filter(|(_, v)| (*v - min).abs() < 1e-12).map(|(t, _)| *t).collect();
        assert!(argmins.iter().all(|&t| is_special(t)), "{norm:?}: {argmins:?}");
        assert_eq!(argmins.len(), 4, "{norm:?}: grid holds −π/2, 0, π/2, π");
    }
}

#[test]
fn information_criterion_finds_two_factors() {
    let hits = (0..20)
        .filter(|&rep| {
            let data = simulate(&DgpSpec::new(100, 60, 0.0, 70 + rep)).unwrap();
            let panel = TimeSeriesPanel::standardise(&data.values, None).unwrap();
            select_num_factors(&panel, 8).unwrap().chosen_r == Some(2)
        })
        .count();
    assert!(hits >= 18, "{hits} of 20");
}

#[test]
fn information_criterion_on_noise_picks_one_factor() {
    let mut g = rng(62);
    let hits = (0..20)
        .filter(|_| {
            let panel = TimeSeriesPanel::standardise(&normal_matrix(&mut g, 100, 60), None).unwrap();
            select_num_factors(&panel, 8).unwrap().chosen_r == Some(1)
        })
        .count();
    assert!(hits >= 16, "{hits} of 20");
}

#[test]
fn alpha_search_stops_at_first_dead_factor() {
    let data = simulate(&DgpSpec::new(60, 12, 0.0, 63)).unwrap();
    let panel = TimeSeriesPanel::standardise(&data.values, None).unwrap();
    let grid = AlphaGrid { min: 1e-3, max: 1e3, points: 25 };
    let sel = select_alpha(&panel, &FitConfig::new(2, 0.0), &grid).unwrap();
    let report = &sel.report;
    assert!(report.terminated_early);
    let last = report.bic_values.last().unwrap();
    assert!(last.alpha < 1e3);
    // every earlier point kept both factors alive
    let alive = report.bic_values[..report.bic_values.len() - 1].iter().all(|b| b.nonzero >= 2);
    assert!(alive);
    let chosen = report.chosen_alpha.unwrap();
    let best = report
        .bic_values
        .iter()
        .filter(|b| b.converged)
        .map(|b| b.bic)
        .fold(f64::INFINITY, f64::min);
    let chosen_bic = report.bic_values.iter().find(|b| b.alpha == chosen).unwrap().bic;
    assert_eq!(chosen_bic, best);
}

#[test]
fn smallest_penalty_is_close_to_the_dense_fit() {
    let data = simulate(&DgpSpec::new(100, 20, 0.3, 64)).unwrap();
    let panel = TimeSeriesPanel::standardise(&data.values, None).unwrap();
    let grid = AlphaGrid { min: 1e-3, max: 1e-2, points: 2 };
    let sel = select_alpha(&panel, &FitConfig::new(2, 0.0), &grid).unwrap();
    let first = &sel.report.bic_values[0];
    assert!(first.bic.is_finite());
    let dense = fit(&panel, &FitConfig::new(2, 0.0)).unwrap();
    let v_dense = expected_residual_variance(&panel, &dense);
    assert!((first.residual_variance - v_dense).abs() < 1e-3 * v_dense);
}
