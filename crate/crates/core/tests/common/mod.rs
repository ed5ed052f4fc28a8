//! Independent oracles shared by the property tests and the acceptance target.
#![allow(dead_code)]

use fedsysid::clustering::{aggregate, cluster_merge};
use fedsysid::datagen::RegressionView;
use fedsysid::linalg::Norm2;
use fedsysid::metrics::misclassified_pct;
use fedsysid::training::{loss_gradient, loss_regularized};
use fedsysid::LtiParams;
use nalgebra::{Complex, DMatrix};
use rand::Rng;

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

pub fn random_params<R: Rng>(rng: &mut R, nx: usize, nu: usize, scale: f64) -> LtiParams {
    LtiParams::from_theta(random_matrix(rng, nx, nx + nu, scale), nx).unwrap()
}

pub fn random_view<R: Rng>(rng: &mut R, nx: usize, nu: usize, samples: usize) -> RegressionView {
    RegressionView {
        regressors: random_matrix(rng, nx + nu, samples, 1.0),
        targets: random_matrix(rng, nx, samples, 1.0),
    }
}

/// Largest entrywise relative gap between the analytic gradient and central
/// differences of the regularized loss.
pub fn gradient_gap(params: &LtiParams, view: &RegressionView, mu: f64) -> f64 {
    let analytic = loss_gradient(params, view, mu).unwrap();
    let h = 1e-6;
    let theta = params.theta();
    let mut numeric = DMatrix::zeros(theta.nrows(), theta.ncols());
    for r in 0..theta.nrows() {
        for c in 0..theta.ncols() {
            let shifted = |d: f64| {
                let mut t = theta.clone();
                t[(r, c)] += d;
                loss_regularized(&LtiParams::from_theta(t, params.state_dim()).unwrap(), view, mu).unwrap()
            };
            numeric[(r, c)] = (shifted(h) - shifted(-h)) / (2.0 * h);
        }
    }
    (&analytic - &numeric).norm() / analytic.norm().max(1e-12)
}

/// Roots of the characteristic polynomial of a 3x3 matrix by Durand-Kerner.
pub fn char_poly_roots(a: &DMatrix<f64>) -> [Complex<f64>; 3] {
    assert_eq!(a.shape(), (3, 3));
    let tr = a.trace();
    let minors = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)] + a[(0, 0)] * a[(2, 2)] - a[(0, 2)] * a[(2, 0)]
        + a[(1, 1)] * a[(2, 2)]
        - a[(1, 2)] * a[(2, 1)];
    let det = a.determinant();
    // z^3 - tr z^2 + minors z - det
    let p = |z: Complex<f64>| z * z * z - z * z * tr + z * minors - det;
    let seed = Complex::new(0.4, 0.9);
    let mut roots = [Complex::new(1.0, 0.0), seed, seed * seed];
    let scale = 1.0 + tr.abs().max(minors.abs()).max(det.abs());
    for r in &mut roots {
        *r *= scale;
    }
    for _ in 0..500 {
        let prev = roots;
        for i in 0..3 {
            let mut denom = Complex::new(1.0, 0.0);
            for j in 0..3 {
                if i != j {
                    denom *= roots[i] - roots[j];
                }
            }
            roots[i] -= p(roots[i]) / denom;
        }
        if (0..3).all(|i| (roots[i] - prev[i]).norm() < 1e-15) {
            break;
        }
    }
    roots
}

pub fn char_poly_stable(a: &DMatrix<f64>) -> bool {
    char_poly_roots(a).iter().all(|z| z.norm() < 1.0)
}

/// One-hot membership weighted mean written out entry by entry.
pub fn aggregate_brute_force(workers: &[LtiParams], flags: &[usize], previous: &[LtiParams]) -> Vec<DMatrix<f64>> {
    (0..previous.len())
        .map(|j| {
            let (rows, cols) = previous[j].theta().shape();
            let s: Vec<f64> = flags.iter().map(|&f| if f == j { 1.0 } else { 0.0 }).collect();
            let total: f64 = s.iter().sum();
            if total == 0.0 {
                return previous[j].theta().clone();
            }
            DMatrix::from_fn(rows, cols, |r, c| {
                let mut acc = 0.0;
                for (i, w) in workers.iter().enumerate() {
                    acc += s[i] * w.theta()[(r, c)];
                }
                acc / total
            })
        })
        .collect()
}

pub fn aggregate_matches_brute_force(workers: &[LtiParams], flags: &[usize], previous: &[LtiParams]) -> bool {
    let fast = aggregate(workers, flags, previous).unwrap();
    let slow = aggregate_brute_force(workers, flags, previous);
    fast.len() == slow.len() && fast.iter().zip(&slow).all(|(f, s)| (f.theta() - s).amax() <= 1e-12)
}

/// Idempotent in count, never grows, and keeps distinct inputs apart at a tiny threshold.
pub fn merge_properties_hold(params: &[LtiParams], threshold: f64) -> bool {
    let once = cluster_merge(params, threshold, Norm2::Spectral).unwrap();
    let twice = cluster_merge(&once.params, threshold, Norm2::Spectral).unwrap();
    let tiny = cluster_merge(params, 1e-300, Norm2::Spectral).unwrap();
    let mapping_ok = once.mapping.len() == params.len() && once.mapping.iter().all(|&m| m < once.params.len());
    once.params.len() <= params.len()
        && twice.params.len() == once.params.len()
        && tiny.params.len() == params.len()
        && mapping_ok
}

/// Worker i is misclassified iff another worker with the same flag has a different label.
pub fn mw_pairwise(flags: &[usize], labels: &[usize]) -> f64 {
    let m = flags.len();
    if m == 0 {
        return 0.0;
    }
    let bad = (0..m)
        .filter(|&i| (0..m).any(|j| j != i && flags[i] == flags[j] && labels[i] != labels[j]))
        .count();
    100.0 * bad as f64 / m as f64
}

pub fn mw_matches_pairwise(flags: &[usize], labels: &[usize]) -> bool {
    (misclassified_pct(flags, labels).unwrap() - mw_pairwise(flags, labels)).abs() < 1e-12
}
