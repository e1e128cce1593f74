//! Oracles shared by the integration tests. Nothing here calls the crate's
//! own gradient, Hessian or reference-solver code.

#![allow(dead_code)]

use prsans::learned::{mean_loss, loss_and_grad, DenoiserParams, Pair};
use prsans::priors::GmmPrior;
use prsans::Dims;

/// `f(x) = ½‖x − y‖² − τσ² log p_z(x)`, written out from the density.
pub fn objective(gmm: &GmmPrior, sigma: f64, tau: f64, y: &[f64], x: &[f64]) -> f64 {
    let data: f64 = x.iter().zip(y).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum();
    data - tau * sigma * sigma * gmm.log_density(x, sigma).unwrap()
}

/// Central differences of `f` with per-coordinate step `h`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let hi = f(&p);
            p[i] = orig - h;
            let lo = f(&p);
            p[i] = orig;
            (hi - lo) / (2.0 * h)
        })
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Gradient descent with backtracking on `f`, differentiated numerically.
/// Stops when the numerical gradient norm falls below `tol`.
pub fn descend(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], tol: f64, max_iter: usize) -> Vec<f64> {
    let mut x = x0.to_vec();
    let mut step: f64 = 1.0;
    for _ in 0..max_iter {
        let g = fd_gradient(f, &x, 1e-6);
        let gn = norm(&g);
        if gn < tol {
            break;
        }
        let fx = f(&x);
        step = (step * 2.0).min(1.0);
        loop {
            let cand: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            if f(&cand) <= fx - 0.3 * step * gn * gn || step < 1e-12 {
                x = cand;
                break;
            }
            step *= 0.5;
        }
    }
    x
}

/// Outcome of comparing backprop gradients with central differences.
#[derive(Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    /// Coordinates where `±h` flips a ReLU somewhere, so the loss has a kink in the stencil.
    pub skipped: usize,
    pub failures: usize,
    pub max_rel: f64,
}

/// Loss is piecewise quadratic in any single weight, so away from kinks the
/// central difference is exact up to rounding. A coordinate passes when
/// `|g − fd| ≤ rel·max(|g|, |fd|) + 1e-10`; `max_rel` is over coordinates
/// with magnitude above `1e-8`.
pub fn check_gradients(params: &DenoiserParams, pairs: &[Pair], dims: Dims, h: f64, rel: f64) -> GradCheck {
    let (_, grads) = loss_and_grad(params, pairs, dims).unwrap();
    let analytic: Vec<f64> = grads
        .iter()
        .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
        .collect();
    let patterns = |p: &DenoiserParams| -> Vec<Vec<bool>> {
        pairs.iter().map(|q| p.activation_pattern(&q.noisy, dims)).collect()
    };
    let base = patterns(params);
    let mut out = GradCheck::default();
    let mut p = params.clone();
    for (i, &g) in analytic.iter().enumerate() {
        let orig = *p.params_mut().nth(i).unwrap();
        *p.params_mut().nth(i).unwrap() = orig + h;
        let (hi, pat_hi) = (mean_loss(&p, pairs, dims), patterns(&p));
        *p.params_mut().nth(i).unwrap() = orig - h;
        let (lo, pat_lo) = (mean_loss(&p, pairs, dims), patterns(&p));
        *p.params_mut().nth(i).unwrap() = orig;
        if pat_hi != base || pat_lo != base {
            out.skipped += 1;
            continue;
        }
        let fd = (hi - lo) / (2.0 * h);
        let scale = g.abs().max(fd.abs());
        out.checked += 1;
        if (g - fd).abs() > rel * scale + 1e-10 {
            out.failures += 1;
        }
        if scale > 1e-8 {
            out.max_rel = out.max_rel.max((g - fd).abs() / scale);
        }
    }
    out
}
