//! Likelihood-preserving reparameterisation of the factors that lowers the
//! ℓ₁ norm of the loadings.
//!
//! For unit-variance factors with covariance `Γ`, a shear that adds `s` times
//! column `k` of `Λ` to column `j`, followed by rescaling factor `k` back to
//! unit variance, changes `‖Λ‖₁` to
//! `‖λ_j + s λ_k‖₁ + ‖λ_k‖₁ √(Γ_kk − 2sΓ_jk + s²Γ_jj)`, a convex function of
//! `s`. Pairs are also rotated in their whitened coordinates, which keeps the
//! pair uncorrelated with unit variance and escapes the saddle points that
//! shears alone cannot leave. Both moves are applied in sweeps until none helps.

use nalgebra::DMatrix;

const MAX_SWEEPS: usize = 50;
const GOLDEN_ITERS: usize = 120;
const ANGLE_GRID: usize = 64;

fn column_l1(m: &DMatrix<f64>, k: usize) -> f64 {
    m.column(k).iter().map(|v| v.abs()).sum()
}

fn sheared_l1(lam: &DMatrix<f64>, gamma: &DMatrix<f64>, j: usize, k: usize, s: f64) -> f64 {
    let moved: f64 = lam.column(j).iter().zip(lam.column(k).iter()).map(|(a, b)| (a + s * b).abs()).sum();
    let var = (gamma[(k, k)] - 2.0 * s * gamma[(j, k)] + s * s * gamma[(j, j)]).max(0.0);
    moved + column_l1(lam, k) * var.sqrt()
}

/// Minimiser of a convex function on `[lo, hi]`.
fn golden_min<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..GOLDEN_ITERS {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        x1
    } else {
        x2
    }
}

/// Search interval holding the minimiser: the convex hull of the kinks of the
/// ℓ₁ term and the minimiser of the variance term.
fn bracket(lam: &DMatrix<f64>, gamma: &DMatrix<f64>, j: usize, k: usize) -> (f64, f64) {
    let centre = gamma[(j, k)] / gamma[(j, j)];
    let (mut lo, mut hi) = (centre, centre);
    for (a, b) in lam.column(j).iter().zip(lam.column(k).iter()) {
        if *b != 0.0 {
            let kink = -a / b;
            lo = lo.min(kink);
            hi = hi.max(kink);
        }
    }
    (lo, hi)
}

/// Block `L R(θ)` mixing factors `j < k`, where `L L'` is the Cholesky
/// factorisation of their 2×2 covariance.
fn pair_rotation(g: &DMatrix<f64>, j: usize, k: usize, theta: f64) -> Option<[[f64; 2]; 2]> {
    let l11 = g[(j, j)].sqrt();
    let l21 = g[(k, j)] / l11;
    let l22 = (g[(k, k)] - l21 * l21).sqrt();
    if !(l11 > 0.0 && l22 > 0.0) {
        return None;
    }
    let (sn, cs) = theta.sin_cos();
    Some([[l11 * cs, -l11 * sn], [l21 * cs + l22 * sn, -l21 * sn + l22 * cs]])
}

fn rotated_l1(lam: &DMatrix<f64>, j: usize, k: usize, b: &[[f64; 2]; 2]) -> f64 {
    lam.column(j)
        .iter()
        .zip(lam.column(k).iter())
        .map(|(x, y)| (x * b[0][0] + y * b[1][0]).abs() + (x * b[0][1] + y * b[1][1]).abs())
        .sum()
}

/// Applies the column transform `T` (identity outside rows/cols `j`, `k`)
/// to `Λ` and `M`, and `T⁻¹ Γ T⁻ᵀ` to the factor covariance.
fn apply_pair(
    lam: &mut DMatrix<f64>,
    m: &mut DMatrix<f64>,
    g: &mut DMatrix<f64>,
    j: usize,
    k: usize,
    b: &[[f64; 2]; 2],
) -> bool {
    let r = lam.ncols();
    let mut t = DMatrix::<f64>::identity(r, r);
    t[(j, j)] = b[0][0];
    t[(j, k)] = b[0][1];
    t[(k, j)] = b[1][0];
    t[(k, k)] = b[1][1];
    let Some(t_inv) = t.clone().try_inverse() else {
        return false;
    };
    *lam = &*lam * &t;
    *m = &*m * &t;
    let next = &t_inv * &*g * t_inv.transpose();
    *g = (&next + next.transpose()) * 0.5;
    g[(j, j)] = 1.0;
    g[(k, k)] = 1.0;
    true
}

/// Best whitened rotation of pair `(j, k)` in `[−π/4, π/4]`: grid search then
/// golden refinement. The window is symmetric so that flipping the sign of a
/// factor flips the chosen angle, and ties go to the smallest rotation.
fn best_rotation(lam: &DMatrix<f64>, g: &DMatrix<f64>, j: usize, k: usize) -> Option<(f64, [[f64; 2]; 2])> {
    let f = |th: f64| pair_rotation(g, j, k, th).map_or(f64::INFINITY, |b| rotated_l1(lam, j, k, &b));
    let quarter = std::f64::consts::FRAC_PI_4;
    let step = 2.0 * quarter / ANGLE_GRID as f64;
    let half = ANGLE_GRID as i64 / 2;
    let (mut best_th, mut best_v) = (0.0, f(0.0));
    for m in 1..=half {
        for th in [m as f64 * step, -(m as f64) * step] {
            let v = f(th);
            if v < best_v {
                best_th = th;
                best_v = v;
            }
        }
    }
    let lo = (best_th - step).max(-quarter);
    let hi = (best_th + step).min(quarter);
    let refined = golden_min(&f, lo, hi);
    let (th, v) = if f(refined) < best_v { (refined, f(refined)) } else { (best_th, best_v) };
    pair_rotation(g, j, k, th).map(|b| (v, b))
}

/// Result of [`sparsifying_transform`]: `Λ M` has ℓ₁ norm `l1`, and the
/// factors `M⁻¹ F` have unit variance.
#[derive(Debug, Clone)]
pub struct Reparameterisation {
    pub transform: DMatrix<f64>,
    pub l1: f64,
}

/// Greedy pairwise shears of unit-variance factors (covariance `gamma`, unit
/// diagonal) that reduce `‖Λ‖₁`.
pub fn sparsifying_transform(loadings: &DMatrix<f64>, gamma: &DMatrix<f64>) -> Reparameterisation {
    let r = loadings.ncols();
    let mut lam = loadings.clone();
    let mut g = gamma.clone();
    let mut m = DMatrix::<f64>::identity(r, r);
    let mut l1: f64 = lam.iter().map(|v| v.abs()).sum();
    for _ in 0..MAX_SWEEPS {
        let mut improved = false;
        for j in 0..r {
            for k in 0..r {
                if j == k || column_l1(&lam, k) == 0.0 || !(g[(j, j)] > 0.0) {
                    continue;
                }
                let f = |s: f64| sheared_l1(&lam, &g, j, k, s);
                let (lo, hi) = bracket(&lam, &g, j, k);
                let s = golden_min(&f, lo, hi);
                let current = f(0.0);
                if !(f(s) < current - 1e-12 * (1.0 + current)) {
                    continue;
                }
                // shear: column j += s·column k; factor k −= s·factor j
                let mut t_inv = DMatrix::<f64>::identity(r, r);
                t_inv[(k, j)] = -s;
                let col_k = lam.column(k).clone_owned();
                lam.column_mut(j).axpy(s, &col_k, 1.0);
                let mk = m.column(k).clone_owned();
                m.column_mut(j).axpy(s, &mk, 1.0);
                g = &t_inv * &g * t_inv.transpose();
                let d = g[(k, k)].max(0.0).sqrt();
                if !(d > 0.0) {
                    return Reparameterisation { transform: DMatrix::identity(r, r), l1: loadings.iter().map(|v| v.abs()).sum() };
                }
                lam.column_mut(k).scale_mut(d);
                m.column_mut(k).scale_mut(d);
                for i in 0..r {
                    g[(i, k)] /= d;
                    g[(k, i)] /= d;
                }
                g[(k, k)] = 1.0;
                l1 = lam.iter().map(|v| v.abs()).sum();
                improved = true;
            }
        }
        for j in 0..r {
            for k in j + 1..r {
                let current = l1;
                let Some((value, b)) = best_rotation(&lam, &g, j, k) else {
                    continue;
                };
                if !(value < current - 1e-12 * (1.0 + current)) {
                    continue;
                }
                if apply_pair(&mut lam, &mut m, &mut g, j, k, &b) {
                    l1 = lam.iter().map(|v| v.abs()).sum();
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    Reparameterisation { transform: m, l1 }
}
