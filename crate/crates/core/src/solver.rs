//! Plug-and-play proximal-gradient restoration.
//!
//! With the least-squares data term `g(x) = ½‖x − y‖²` each iteration is
//!
//! ```text
//! xᵏ = prox_{γg}(xᵏ⁻¹ − γτ (xᵏ⁻¹ − D(xᵏ⁻¹))),   prox_{γg}(v) = (v + γy)/(1 + γ)
//! ```
//!
//! where `D` is any [`PriorHandle`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::image::Dims;
use crate::priors::PriorHandle;
use crate::theory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TraceLevel {
    Final,
    #[default]
    Norms,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub gamma: f64,
    pub tau: f64,
    pub max_iter: usize,
    pub fp_tol: f64,
    pub trace_level: TraceLevel,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            gamma: 0.7,
            tau: 1.0,
            max_iter: 20,
            fp_tol: 0.0,
            trace_level: TraceLevel::Norms,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("gamma", format!("must be > 0, got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config("tau", format!("must be > 0, got {}", self.tau)));
        }
        if self.max_iter == 0 {
            return Err(Error::config("max_iter", "must be at least 1"));
        }
        if !(self.fp_tol >= 0.0) {
            return Err(Error::config("fp_tol", "must be ≥ 0"));
        }
        Ok(())
    }
}

/// Per-iteration record. Entry `k−1` describes iterate `xᵏ`, `k = 1..=iterations`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveTrace {
    pub iterations: usize,
    /// `x⁰`, kept at [`TraceLevel::Full`].
    pub initial: Option<Vec<f64>>,
    pub iterates: Vec<Vec<f64>>,
    /// `f(x⁰)` when the prior has an analytic regularizer.
    pub f_initial: Option<f64>,
    pub f_values: Vec<f64>,
    pub grad_norms: Vec<f64>,
    /// `‖xᵏ − xᵏ⁻¹‖`.
    pub step_norms: Vec<f64>,
    /// `ε_{k−1}` consumed to produce `xᵏ`.
    pub epsilons: Vec<f64>,
    /// `‖xᵏ − T(xᵏ)‖` where `T` is one iteration with the same prior.
    pub fixed_point_residuals: Vec<f64>,
}

impl SolveTrace {
    /// CSV with header `k,f,grad_norm,step_norm,epsilon,fp_residual`;
    /// fields that were not computed are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,f,grad_norm,step_norm,epsilon,fp_residual\n");
        let cell = |v: &[f64], i: usize| v.get(i).map(|x| format!("{x:e}")).unwrap_or_default();
        for i in 0..self.step_norms.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                i + 1,
                cell(&self.f_values, i),
                cell(&self.grad_norms, i),
                cell(&self.step_norms, i),
                cell(&self.epsilons, i),
                cell(&self.fixed_point_residuals, i),
            );
        }
        out
    }
}

/// `argmin_x ½‖x − v‖² + γ·½‖x − y‖² = (v + γy)/(1 + γ)`.
pub fn prox_data_fidelity(v: &[f64], y: &[f64], gamma: f64) -> Result<Vec<f64>> {
    ensure_len(v.len(), y.len())?;
    if !(gamma > 0.0) {
        return Err(Error::Contract(format!("gamma must be > 0, got {gamma}")));
    }
    Ok(v.iter()
        .zip(y)
        .map(|(a, b)| (a + gamma * b) / (1.0 + gamma))
        .collect())
}

/// One iteration from `x_prev`.
pub fn pr_sans_step(
    x_prev: &[f64],
    y: &[f64],
    prior: &mut PriorHandle,
    cfg: &SolveConfig,
    dims: Dims,
) -> Result<Vec<f64>> {
    ensure_len(y.len(), x_prev.len())?;
    let denoised = prior.apply(x_prev, dims)?;
    let gt = cfg.gamma * cfg.tau;
    let inner: Vec<f64> = x_prev
        .iter()
        .zip(&denoised)
        .map(|(x, d)| x - gt * (x - d))
        .collect();
    prox_data_fidelity(&inner, y, cfg.gamma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointResidual {
    /// `‖x − T(x)‖`.
    pub residual: f64,
    /// `‖∇g(x) + τ(x − D(x))‖` with the exact analytic denoiser, when available.
    /// For exact priors `residual = γ/(1+γ) · stationarity`.
    pub stationarity: Option<f64>,
}

pub fn fixed_point_residual(
    x: &[f64],
    y: &[f64],
    prior: &mut PriorHandle,
    cfg: &SolveConfig,
    dims: Dims,
) -> Result<FixedPointResidual> {
    let next = pr_sans_step(x, y, prior, cfg, dims)?;
    let residual = norm_diff(x, &next);
    let stationarity = match prior.analytic() {
        Some((gmm, sigma)) => {
            let g = theory::grad_objective(x, y, gmm, sigma, cfg.tau)?;
            Some(norm(&g))
        }
        None => None,
    };
    Ok(FixedPointResidual {
        residual,
        stationarity,
    })
}

/// Iterates until the fixed-point residual drops below `fp_tol` or `max_iter`
/// iterations have run. `x0` defaults to `y`.
///
/// The residual of `xᵏ` is measured with the step that would produce `xᵏ⁺¹`,
/// so every prior call lies on the iteration path (one extra call at the end).
pub fn pr_sans_solve(
    y: &[f64],
    prior: &mut PriorHandle,
    cfg: &SolveConfig,
    x0: Option<&[f64]>,
    dims: Dims,
) -> Result<(Vec<f64>, SolveTrace)> {
    cfg.validate()?;
    ensure_len(dims.len(), y.len())?;
    let x0 = x0.unwrap_or(y).to_vec();
    ensure_len(y.len(), x0.len())?;

    let analytic = prior.analytic().map(|(g, s)| (g.clone(), s));
    let eval_f = |x: &[f64]| -> Result<Option<(f64, f64)>> {
        match &analytic {
            Some((gmm, sigma)) => {
                let (f, g) = theory::objective_and_grad(x, y, gmm, *sigma, cfg.tau)?;
                Ok(Some((f, norm(&g))))
            }
            None => Ok(None),
        }
    };
    let record_norms = cfg.trace_level != TraceLevel::Final;
    let mut trace = SolveTrace::default();
    if record_norms {
        trace.f_initial = eval_f(&x0)?.map(|(f, _)| f);
    }
    if cfg.trace_level == TraceLevel::Full {
        trace.initial = Some(x0.clone());
    }

    let mut x = x0;
    let mut candidate = pr_sans_step(&x, y, prior, cfg, dims)?;
    let mut candidate_eps = prior.last_epsilon();
    for k in 1..=cfg.max_iter {
        let next = candidate;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iteration: k });
        }
        let eps = candidate_eps;
        candidate = pr_sans_step(&next, y, prior, cfg, dims)?;
        candidate_eps = prior.last_epsilon();
        let residual = norm_diff(&next, &candidate);
        if record_norms {
            if let Some((f, gn)) = eval_f(&next)? {
                trace.f_values.push(f);
                trace.grad_norms.push(gn);
            }
            trace.step_norms.push(norm_diff(&next, &x));
            trace.epsilons.push(eps);
            trace.fixed_point_residuals.push(residual);
        }
        if cfg.trace_level == TraceLevel::Full {
            trace.iterates.push(next.clone());
        }
        trace.iterations = k;
        x = next;
        if residual < cfg.fp_tol {
            break;
        }
    }
    Ok((x, trace))
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub(crate) fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
