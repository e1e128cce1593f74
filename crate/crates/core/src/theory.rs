//! Numerical certification of the convergence guarantee for inexact
//! plug-and-play proximal gradient on analytic Gaussian-mixture problems.
//!
//! With `f = g + h`, `g(x) = ½‖x − y‖²` (so `L = 1`) and
//! `h = −τσ² log p_z`, the iterates driven by a denoiser whose per-call error
//! is at most `ε_k` satisfy, for every `t`,
//!
//! ```text
//! (1/t) Σ_{k=1..t} ‖∇f(xᵏ)‖² ≤ (B₁/t)(f(x⁰) − f*) + B₂ (1/t) Σ_{k=1..t} ε²_{k−1}
//! ```
//!
//! whenever `γ < min(1/M, 1/L)`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::image::Dims;
use crate::priors::{EpsilonSchedule, GmmPrior, PriorHandle};
use crate::rng::{stream, Stream};
use crate::solver::{norm, norm_diff, pr_sans_solve, pr_sans_step, SolveConfig, TraceLevel};

/// Lipschitz constant of `∇g` for the least-squares data term.
pub const L_LEAST_SQUARES: f64 = 1.0;
/// Inflation applied to sampled Lipschitz estimates.
pub const LIPSCHITZ_SAFETY: f64 = 1.2;
/// Margin kept below `min(1/M, 1/L)`.
pub const STEP_MARGIN: f64 = 1e-6;
pub const REL_SLACK: f64 = 1e-7;
pub const ABS_FLOOR: f64 = 1e-12;

pub fn objective(x: &[f64], y: &[f64], gmm: &GmmPrior, sigma: f64, tau: f64) -> Result<f64> {
    objective_and_grad(x, y, gmm, sigma, tau).map(|(f, _)| f)
}

/// `∇f(x) = (x − y) + τ(x − D_σ(x))`.
pub fn grad_objective(x: &[f64], y: &[f64], gmm: &GmmPrior, sigma: f64, tau: f64) -> Result<Vec<f64>> {
    objective_and_grad(x, y, gmm, sigma, tau).map(|(_, g)| g)
}

pub fn objective_and_grad(
    x: &[f64],
    y: &[f64],
    gmm: &GmmPrior,
    sigma: f64,
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    ensure_len(x.len(), y.len())?;
    let (h, mut grad) = gmm.regularizer(x, sigma, tau)?;
    let mut g = 0.0;
    for ((gi, xi), yi) in grad.iter_mut().zip(x).zip(y) {
        let r = xi - yi;
        g += 0.5 * r * r;
        *gi += r;
    }
    Ok((g + h, grad))
}

/// Same as [`grad_objective`] but takes a handle; only the analytic prior
/// (possibly inexact-wrapped) has an objective.
pub fn grad_objective_for(prior: &PriorHandle, x: &[f64], y: &[f64], tau: f64) -> Result<Vec<f64>> {
    match prior.analytic() {
        Some((gmm, sigma)) => grad_objective(x, y, gmm, sigma, tau),
        None => Err(Error::UnsupportedPrior(prior.kind_name())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    /// Largest sampled quotient times [`LIPSCHITZ_SAFETY`].
    pub estimate: f64,
    /// Largest sampled quotient, uninflated.
    pub sampled_max: f64,
    /// `τσ²/(s² + σ²)` for a single-component prior.
    pub exact: Option<f64>,
}

/// Samples `n_samples` points uniformly in the box `[lo, hi]ⁿ`. Each point is
/// paired with another uniform point and with a nearby point, and the
/// largest `‖∇h(u) − ∇h(v)‖/‖u − v‖` is kept.
pub fn estimate_lipschitz_m(
    gmm: &GmmPrior,
    sigma: f64,
    tau: f64,
    domain: (f64, f64),
    n_samples: usize,
    seed: u64,
) -> Result<LipschitzEstimate> {
    if n_samples < 2 {
        return Err(Error::Contract("need at least 2 samples".into()));
    }
    let (lo, hi) = domain;
    if !(hi > lo) {
        return Err(Error::Contract(format!("empty domain [{lo}, {hi}]")));
    }
    let n = gmm.dim();
    let near = 1e-3 * (hi - lo);
    let mut rng = stream(seed, Stream::Sampling);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| rng.random_range(lo..hi)).collect()
    };
    let grad_h = |u: &[f64]| gmm.regularizer(u, sigma, tau).map(|(_, g)| g);
    let mut best: f64 = 0.0;
    for _ in 0..n_samples {
        let u = draw(&mut rng);
        let far = draw(&mut rng);
        let dir = draw(&mut rng);
        let dn = norm(&dir).max(f64::MIN_POSITIVE);
        let close: Vec<f64> = u.iter().zip(&dir).map(|(a, d)| a + near * d / dn).collect();
        let gu = grad_h(&u)?;
        for v in [far, close] {
            let dist = norm_diff(&u, &v);
            if dist > 0.0 {
                best = best.max(norm_diff(&gu, &grad_h(&v)?) / dist);
            }
        }
    }
    let exact = (gmm.n_components() == 1).then(|| {
        let s2 = gmm.variances()[0];
        tau * sigma * sigma / (s2 + sigma * sigma)
    });
    Ok(LipschitzEstimate {
        estimate: LIPSCHITZ_SAFETY * best,
        sampled_max: best,
        exact,
    })
}

/// Box `[lo, hi]` covering the component means and `y` with a margin of
/// four of the widest smoothed standard deviations.
pub fn default_domain(gmm: &GmmPrior, sigma: f64, y: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in gmm.means().iter().flatten().chain(y) {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let spread = gmm
        .variances()
        .iter()
        .map(|s2| (s2 + sigma * sigma).sqrt())
        .fold(0.0, f64::max);
    (lo - 4.0 * spread, hi + 4.0 * spread)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremConstants {
    pub gamma: f64,
    pub tau: f64,
    pub l: f64,
    pub m: f64,
    pub lambda: f64,
    /// `γτ/(1 − γL)`, used in `B₂`.
    pub alpha: f64,
    /// `γτ/(1 − γτ)`; reported for comparison, `None` when `γτ ≥ 1`.
    pub alpha_alt: Option<f64>,
    pub b1: f64,
    pub b2: f64,
}

pub fn step_limit(l: f64, m: f64) -> f64 {
    (1.0 / m).min(1.0 / l)
}

pub fn compute_constants(gamma: f64, tau: f64, l: f64, m: f64) -> Result<TheoremConstants> {
    if !(l > 0.0 && m > 0.0 && tau > 0.0) {
        return Err(Error::Contract(format!("need L, M, tau > 0 (got {l}, {m}, {tau})")));
    }
    let limit = step_limit(l, m);
    if !(gamma > 0.0) || gamma >= limit - STEP_MARGIN {
        return Err(Error::InfeasibleStep { gamma, limit });
    }
    let lambda = 1.0 / gamma + l;
    let alpha = gamma * tau / (1.0 - gamma * l);
    let alpha_alt = (gamma * tau < 1.0).then(|| gamma * tau / (1.0 - gamma * tau));
    let gm = gamma * m;
    let b1 = 4.0 * (1.0 + gm).powi(2) / (gamma * (1.0 - gm));
    let b2 = lambda * alpha * alpha * b1 / 2.0 + 2.0 * alpha * alpha * (1.0 + gamma * l).powi(2) / (gamma * gamma);
    Ok(TheoremConstants {
        gamma,
        tau,
        l,
        m,
        lambda,
        alpha,
        alpha_alt,
        b1,
        b2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Basin {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceOptimum {
    pub x_star: Vec<f64>,
    pub f_star: f64,
    /// Distinct stationary points reached, sorted by `f`.
    pub basins: Vec<Basin>,
}

const DESCENT_MAX_ITER: usize = 20_000;
const DESCENT_GRAD_TOL: f64 = 1e-12;

/// Multi-start descent on the exact objective from every component mean,
/// from `y`, and from `extra_starts`. Each run takes Armijo-backtracked
/// gradient steps and switches to damped Newton steps wherever the Hessian is
/// positive definite.
pub fn solve_reference_fstar(
    y: &[f64],
    gmm: &GmmPrior,
    sigma: f64,
    tau: f64,
    extra_starts: &[Vec<f64>],
) -> Result<ReferenceOptimum> {
    ensure_len(gmm.dim(), y.len())?;
    let mut basins: Vec<Basin> = Vec::new();
    let starts = gmm.means().iter().cloned().chain([y.to_vec()]).chain(extra_starts.iter().cloned());
    for s in starts {
        ensure_len(y.len(), s.len())?;
        let b = descend(s, y, gmm, sigma, tau)?;
        if !basins.iter().any(|o| norm_diff(&o.x, &b.x) < 1e-6) {
            basins.push(b);
        }
    }
    basins.sort_by(|a, b| a.f.total_cmp(&b.f));
    let best = basins[0].clone();
    Ok(ReferenceOptimum {
        x_star: best.x,
        f_star: best.f,
        basins,
    })
}

fn descend(mut x: Vec<f64>, y: &[f64], gmm: &GmmPrior, sigma: f64, tau: f64) -> Result<Basin> {
    let n = x.len();
    let (mut f, mut g) = objective_and_grad(&x, y, gmm, sigma, tau)?;
    for _ in 0..DESCENT_MAX_ITER {
        if norm(&g) < DESCENT_GRAD_TOL {
            break;
        }
        let hess = objective_hessian(&x, gmm, sigma, tau)?;
        let direction = match DMatrix::from_row_slice(n, n, &hess).cholesky() {
            Some(ch) => ch.solve(&DVector::from_row_slice(&g)).iter().map(|v| -v).collect(),
            None => g.iter().map(|v| -v).collect::<Vec<f64>>(),
        };
        let slope: f64 = direction.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        let direction = if slope < 0.0 { direction } else { g.iter().map(|v| -v).collect() };
        let slope: f64 = direction.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        let mut step = 1.0;
        let mut moved = false;
        while step > 1e-16 {
            let trial: Vec<f64> = x.iter().zip(&direction).map(|(a, d)| a + step * d).collect();
            let (ft, gt) = objective_and_grad(&trial, y, gmm, sigma, tau)?;
            if ft <= f + 1e-4 * step * slope {
                x = trial;
                f = ft;
                g = gt;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(Basin {
        grad_norm: norm(&g),
        x,
        f,
    })
}

/// `∇²f = I + ∇²h`, row-major.
pub fn objective_hessian(x: &[f64], gmm: &GmmPrior, sigma: f64, tau: f64) -> Result<Vec<f64>> {
    let n = x.len();
    let mut h = gmm.regularizer_hessian(x, sigma, tau)?;
    for i in 0..n {
        h[i * n + i] += 1.0;
    }
    Ok(h)
}

/// An analytic restoration problem: prior `gmm` at noise level `sigma`,
/// observation `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub gmm: GmmPrior,
    pub sigma: f64,
    pub y: Vec<f64>,
}

impl Problem {
    /// A random mixture in `dim` dimensions with `y` drawn from the prior plus noise.
    pub fn random(dim: usize, components: usize, sigma: f64, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, Stream::Synthesis);
        let gmm = GmmPrior::random(&mut rng, dim, components, 2.0, (0.05, 0.5));
        let mut y = gmm.sample(&mut rng);
        for v in y.iter_mut() {
            *v += sigma * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        Ok(Problem { gmm, sigma, y })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifyConfig {
    /// Fixed step; when absent, `gamma_fraction · min(1/M, 1/L)` is used.
    pub gamma: Option<f64>,
    pub gamma_fraction: f64,
    pub tau: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub lipschitz_samples: usize,
    /// Required final `min ‖∇f‖²` for square-summable schedules.
    pub asymptote_tol: f64,
    /// Multiplies `B₂`; values below 1 exist only to exercise the failure path.
    pub b2_scale: f64,
    pub x0: Option<Vec<f64>>,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig {
            gamma: None,
            gamma_fraction: 0.5,
            tau: 1.0,
            max_iter: 500,
            seed: 0,
            lipschitz_samples: 2000,
            asymptote_tol: 1e-8,
            b2_scale: 1.0,
            x0: None,
        }
    }
}

impl CertifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_fraction > 0.0 && self.gamma_fraction < 1.0) {
            return Err(Error::config("gamma_fraction", "must lie in (0, 1)"));
        }
        SolveConfig {
            gamma: self.gamma.unwrap_or(0.5),
            tau: self.tau,
            max_iter: self.max_iter,
            ..SolveConfig::default()
        }
        .validate()?;
        if self.lipschitz_samples < 2 {
            return Err(Error::config("lipschitz_samples", "must be at least 2"));
        }
        if !(self.asymptote_tol > 0.0) {
            return Err(Error::config("asymptote_tol", "must be > 0"));
        }
        if !(self.b2_scale > 0.0 && self.b2_scale.is_finite()) {
            return Err(Error::config("b2_scale", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Bound,
    Descent,
    Proximity,
    Asymptote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Iteration `t` or `k` where the inequality failed.
    pub step: usize,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub schedule: String,
    pub square_summable: bool,
    pub constants: TheoremConstants,
    pub lipschitz: LipschitzEstimate,
    pub f_initial: f64,
    pub f_star: f64,
    /// Best stationary value from multi-start descent, before taking the trajectory into account.
    pub f_star_reference: f64,
    /// Entry `t−1` holds the values for `t = 1..=max_iter`.
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub bound_satisfied: Vec<bool>,
    pub min_grad_sq: Vec<f64>,
    pub grad_sq: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// `‖xᵏ − x̄ᵏ‖` against the exact-denoiser step from the same `xᵏ⁻¹`.
    pub shadow_gaps: Vec<f64>,
    pub descent_violations: Vec<Violation>,
    pub proximity_violations: Vec<Violation>,
    pub bound_violations: Vec<Violation>,
    pub asymptote_violation: Option<Violation>,
}

impl CertificationReport {
    pub fn passed(&self) -> bool {
        self.first_violation().is_none()
    }

    /// Violation with the smallest step index.
    pub fn first_violation(&self) -> Option<&Violation> {
        self.bound_violations
            .iter()
            .chain(&self.descent_violations)
            .chain(&self.proximity_violations)
            .chain(&self.asymptote_violation)
            .min_by_key(|v| v.step)
    }

    pub fn final_min_grad_sq(&self) -> f64 {
        self.min_grad_sq.last().copied().unwrap_or(f64::NAN)
    }

    /// Header `t,lhs,rhs,satisfied,min_grad_sq`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,lhs,rhs,satisfied,min_grad_sq\n");
        for t in 0..self.lhs.len() {
            let _ = writeln!(
                out,
                "{},{:e},{:e},{},{:e}",
                t + 1,
                self.lhs[t],
                self.rhs[t],
                self.bound_satisfied[t],
                self.min_grad_sq[t]
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn slack(scale: f64) -> f64 {
    (REL_SLACK * scale.abs()).max(ABS_FLOOR)
}

/// Runs the solver with the exact prior wrapped by `schedule` and checks the
/// averaged-gradient bound at every `t`, the per-step sufficient decrease
/// with error term, the distance to the exact-denoiser step, and, for
/// square-summable schedules, that the best gradient norm falls below
/// `cfg.asymptote_tol`.
pub fn certify_convergence(problem: &Problem, schedule: &EpsilonSchedule, cfg: &CertifyConfig) -> Result<CertificationReport> {
    cfg.validate()?;
    let Problem { gmm, sigma, y } = problem;
    let (sigma, tau) = (*sigma, cfg.tau);
    ensure_len(gmm.dim(), y.len())?;
    let n = y.len();
    let dims = Dims::flat(n);

    let x0 = cfg.x0.clone().unwrap_or_else(|| y.clone());
    ensure_len(n, x0.len())?;
    let mut domain = default_domain(gmm, sigma, y);
    for v in &x0 {
        domain.0 = domain.0.min(*v - 1.0);
        domain.1 = domain.1.max(*v + 1.0);
    }
    let lipschitz = estimate_lipschitz_m(gmm, sigma, tau, domain, cfg.lipschitz_samples, cfg.seed)?;
    let gamma = cfg
        .gamma
        .unwrap_or_else(|| cfg.gamma_fraction * step_limit(L_LEAST_SQUARES, lipschitz.estimate));
    let mut constants = compute_constants(gamma, tau, L_LEAST_SQUARES, lipschitz.estimate)?;
    constants.b2 *= cfg.b2_scale;

    let exact = PriorHandle::gmm(gmm.clone(), sigma)?;
    let mut wrapped = exact.clone().inexact(schedule.clone(), cfg.seed)?;
    let solve_cfg = SolveConfig {
        gamma,
        tau,
        max_iter: cfg.max_iter,
        fp_tol: 0.0,
        trace_level: TraceLevel::Full,
    };
    let (_, trace) = pr_sans_solve(y, &mut wrapped, &solve_cfg, Some(&x0), dims)?;
    let f_initial = trace.f_initial.expect("analytic prior records f");
    let t_max = trace.iterations;

    let reference = solve_reference_fstar(y, gmm, sigma, tau, &[trace.iterates[t_max - 1].clone()])?;
    let f_star = trace
        .f_values
        .iter()
        .copied()
        .chain([reference.f_star, f_initial])
        .fold(f64::INFINITY, f64::min);

    let grad_sq: Vec<f64> = trace.grad_norms.iter().map(|g| g * g).collect();
    let eps = &trace.epsilons;
    let TheoremConstants {
        lambda, alpha, b1, b2, m, ..
    } = constants;

    let mut report = CertificationReport {
        schedule: schedule.to_string(),
        square_summable: schedule.square_summable(),
        constants,
        lipschitz,
        f_initial,
        f_star,
        f_star_reference: reference.f_star,
        lhs: Vec::with_capacity(t_max),
        rhs: Vec::with_capacity(t_max),
        bound_satisfied: Vec::with_capacity(t_max),
        min_grad_sq: Vec::with_capacity(t_max),
        grad_sq: grad_sq.clone(),
        epsilons: eps.clone(),
        shadow_gaps: Vec::with_capacity(t_max),
        descent_violations: Vec::new(),
        proximity_violations: Vec::new(),
        bound_violations: Vec::new(),
        asymptote_violation: None,
    };

    let mut sum_grad = 0.0;
    let mut sum_eps = 0.0;
    let mut min_grad = f64::INFINITY;
    let mut exact_prior = exact;
    for t in 1..=t_max {
        let k = t - 1;
        sum_grad += grad_sq[k];
        sum_eps += eps[k] * eps[k];
        min_grad = min_grad.min(grad_sq[k]);
        let tf = t as f64;
        let lhs = sum_grad / tf;
        let rhs = b1 / tf * (f_initial - f_star) + b2 * sum_eps / tf;
        let ok = lhs <= rhs + slack(rhs);
        report.lhs.push(lhs);
        report.rhs.push(rhs);
        report.bound_satisfied.push(ok);
        report.min_grad_sq.push(min_grad);
        if !ok {
            report.bound_violations.push(Violation {
                kind: ViolationKind::Bound,
                step: t,
                lhs,
                rhs,
            });
        }

        let prev = if t == 1 { &x0 } else { &trace.iterates[k - 1] };
        let cur = &trace.iterates[k];
        let f_prev = if t == 1 { f_initial } else { trace.f_values[k - 1] };
        let step_sq = trace.step_norms[k].powi(2);
        let bound = f_prev - (1.0 - gamma * m) / (2.0 * gamma) * step_sq + lambda * alpha * alpha * eps[k] * eps[k] / 2.0;
        if trace.f_values[k] > bound + slack(f_prev.abs().max(bound.abs())) {
            report.descent_violations.push(Violation {
                kind: ViolationKind::Descent,
                step: t,
                lhs: trace.f_values[k],
                rhs: bound,
            });
        }

        let shadow = pr_sans_step(prev, y, &mut exact_prior, &solve_cfg, dims)?;
        let gap = norm_diff(cur, &shadow);
        report.shadow_gaps.push(gap);
        let limit = alpha * eps[k];
        if gap > limit + slack(limit) {
            report.proximity_violations.push(Violation {
                kind: ViolationKind::Proximity,
                step: t,
                lhs: gap,
                rhs: limit,
            });
        }
    }
    if report.square_summable && !(min_grad < cfg.asymptote_tol) {
        report.asymptote_violation = Some(Violation {
            kind: ViolationKind::Asymptote,
            step: t_max,
            lhs: min_grad,
            rhs: cfg.asymptote_tol,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss(s2: f64) -> GmmPrior {
        GmmPrior::gaussian(vec![0.0], s2).unwrap()
    }

    fn two_modes(d: f64) -> GmmPrior {
        GmmPrior::new(vec![0.5, 0.5], vec![vec![-d], vec![d]], vec![0.2, 0.2]).unwrap()
    }

    #[test]
    fn gradient_vanishes_at_quadratic_minimizer() {
        let g = grad_objective(&[2.0 / 3.0], &[1.0], &gauss(1.0), 1.0, 1.0).unwrap();
        assert!(g[0].abs() < 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_symmetric_origin() {
        let g = grad_objective(&[0.0], &[0.0], &two_modes(2.0), 0.5, 1.3).unwrap();
        assert!(g[0].abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = stream(11, Stream::Sampling);
        let gmm = GmmPrior::random(&mut rng, 3, 4, 2.0, (0.1, 0.6));
        let (sigma, tau) = (0.4, 1.7);
        let y: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let h = 1e-5;
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let g = grad_objective(&x, &y, &gmm, sigma, tau).unwrap();
            let fd: Vec<f64> = (0..3)
                .map(|i| {
                    let mut p = x.clone();
                    let mut q = x.clone();
                    p[i] += h;
                    q[i] -= h;
                    (objective(&p, &y, &gmm, sigma, tau).unwrap() - objective(&q, &y, &gmm, sigma, tau).unwrap()) / (2.0 * h)
                })
                .collect();
            let err = norm_diff(&g, &fd) / norm(&g).max(1e-3);
            assert!(err < 1e-5, "relative error {err}");
        }
    }

    #[test]
    fn learned_prior_has_no_objective() {
        let p = PriorHandle::tv(0.1);
        assert!(matches!(
            grad_objective_for(&p, &[0.0], &[0.0], 1.0),
            Err(Error::UnsupportedPrior("tv"))
        ));
    }

    #[test]
    fn lipschitz_single_gaussian() {
        let est = estimate_lipschitz_m(&gauss(1.0), 1.0, 1.0, (-3.0, 3.0), 200, 5).unwrap();
        assert_eq!(est.exact, Some(0.5));
        assert!(est.estimate >= 0.5 && est.estimate <= 0.6 + 1e-12, "{est:?}");
        let doubled = estimate_lipschitz_m(&gauss(1.0), 1.0, 2.0, (-3.0, 3.0), 200, 5).unwrap();
        assert!((doubled.estimate - 2.0 * est.estimate).abs() < 1e-9);
    }

    #[test]
    fn lipschitz_bounds_dense_grid_curvature() {
        let gmm = two_modes(1.0);
        let (sigma, tau) = (0.5, 1.0);
        let est = estimate_lipschitz_m(&gmm, sigma, tau, (-4.0, 4.0), 2000, 9).unwrap();
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for i in 0..=8000 {
            let x = -4.0 + i as f64 * 1e-3;
            let d = |v: f64| gmm.regularizer(&[v], sigma, tau).unwrap().1[0];
            worst = worst.max(((d(x + h) - d(x - h)) / (2.0 * h)).abs());
        }
        assert!(est.estimate >= worst, "{} < {}", est.estimate, worst);
    }

    #[test]
    fn constants_worked_example() {
        let c = compute_constants(0.5, 1.0, 1.0, 1.0).unwrap();
        assert!((c.b1 - 36.0).abs() < 1e-12);
        assert!((c.alpha - 1.0).abs() < 1e-15);
        assert!((c.lambda - 3.0).abs() < 1e-15);
        assert!((c.b2 - 72.0).abs() < 1e-12);
        assert_eq!(c.alpha_alt, Some(1.0));
    }

    #[test]
    fn constants_blow_up_at_the_ends() {
        assert!(compute_constants(1e-6, 1.0, 1.0, 1.0).unwrap().b1 > 1e6);
        let near = compute_constants(0.999, 1.0, 1.0, 1.0).unwrap();
        let mid = compute_constants(0.5, 1.0, 1.0, 1.0).unwrap();
        assert!(near.b1.is_finite() && near.b1 > mid.b1 && near.b2 > mid.b2);
        assert!(matches!(compute_constants(1.0, 1.0, 1.0, 1.0), Err(Error::InfeasibleStep { .. })));
        assert!(matches!(compute_constants(0.6, 1.0, 1.0, 2.0), Err(Error::InfeasibleStep { .. })));
    }

    #[test]
    fn constants_increase_with_gamma() {
        let mut last = compute_constants(0.05, 1.0, 1.0, 1.5).unwrap();
        for i in 2..13 {
            let c = compute_constants(0.05 * i as f64, 1.0, 1.0, 1.5).unwrap();
            assert!(c.b2 > last.b2);
            if i > 8 {
                assert!(c.b1 > last.b1);
            }
            last = c;
        }
    }

    #[test]
    fn reference_quadratic_closed_form() {
        let r = solve_reference_fstar(&[1.0], &gauss(1.0), 1.0, 1.0, &[]).unwrap();
        assert!((r.x_star[0] - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn reference_symmetric_two_modes() {
        let gmm = two_modes(5.0);
        let r = solve_reference_fstar(&[0.0], &gmm, 0.3, 1.0, &[]).unwrap();
        let minima: Vec<&Basin> = r.basins.iter().filter(|b| (b.f - r.f_star).abs() < 1e-9).collect();
        assert_eq!(minima.len(), 2);
        assert!((minima[0].x[0] + minima[1].x[0]).abs() < 1e-8);
    }

    #[test]
    fn reference_beats_random_probes() {
        let p = Problem::random(2, 3, 0.5, 21).unwrap();
        let r = solve_reference_fstar(&p.y, &p.gmm, p.sigma, 1.0, &[]).unwrap();
        let mut rng = stream(3, Stream::Sampling);
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-6.0..6.0)).collect();
            assert!(objective(&x, &p.y, &p.gmm, p.sigma, 1.0).unwrap() >= r.f_star - 1e-12);
        }
    }

    fn run(schedule: &str, seed: u64) -> CertificationReport {
        let p = Problem::random(2, 3, 0.5, seed).unwrap();
        let cfg = CertifyConfig {
            max_iter: 200,
            seed,
            lipschitz_samples: 500,
            ..CertifyConfig::default()
        };
        certify_convergence(&p, &schedule.parse().unwrap(), &cfg).unwrap()
    }

    #[test]
    fn exact_prior_certifies_and_reaches_stationarity() {
        let r = run("zero", 1);
        assert!(r.passed(), "{:?}", r.first_violation());
        assert_eq!(r.lhs.len(), 200);
        assert!(r.final_min_grad_sq() < 1e-10);
        assert!(r.shadow_gaps.iter().all(|g| *g < 1e-12));
    }

    #[test]
    fn constant_error_keeps_a_floor_but_the_bound_holds() {
        let r = run("const:0.1", 2);
        assert!(r.passed(), "{:?}", r.first_violation());
        assert!(r.final_min_grad_sq() > 1e-6);
    }

    #[test]
    fn proximity_is_tight_for_least_squares() {
        // the prox is affine, so the gap is exactly γτε/(1+γ) ≤ αε
        let r = run("const:0.05", 4);
        let c = &r.constants;
        for (gap, e) in r.shadow_gaps.iter().zip(&r.epsilons) {
            let want = c.gamma * c.tau * e / (1.0 + c.gamma);
            assert!((gap - want).abs() < 1e-12);
        }
    }

    #[test]
    fn larger_schedule_gives_larger_right_side() {
        let a = run("pow:0.05:1", 6);
        let b = run("const:0.05", 6);
        for (ra, rb) in a.rhs.iter().zip(&b.rhs) {
            assert!(ra <= rb);
        }
    }

    #[test]
    fn shrunken_b2_fails_under_constant_error() {
        let p = Problem::random(2, 3, 0.5, 8).unwrap();
        let cfg = CertifyConfig {
            max_iter: 200,
            b2_scale: 1e-3,
            lipschitz_samples: 500,
            ..CertifyConfig::default()
        };
        let r = certify_convergence(&p, &EpsilonSchedule::Constant(0.1), &cfg).unwrap();
        assert!(!r.passed());
        assert!(!r.bound_violations.is_empty());
    }

    #[test]
    fn csv_and_json_exports() {
        let r = run("zero", 3);
        let csv = r.to_csv();
        assert!(csv.starts_with("t,lhs,rhs,satisfied,min_grad_sq\n"));
        assert_eq!(csv.lines().count(), 201);
        let back: CertificationReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back.lhs, r.lhs);
    }
}
