//! Isotropic Gaussian-mixture prior with its exact MMSE denoiser.
//!
//! For `x ~ Σ wᵢ N(μᵢ, sᵢ² I)` observed as `z = x + N(0, σ² I)`, the noisy
//! density is again a mixture, `p_z = Σ wᵢ N(μᵢ, (sᵢ² + σ²) I)`, and the
//! posterior mean, its implicit regularizer `-τσ² log p_z` and the gradient
//! of that regularizer are all closed form.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmJson", into = "GmmJson")]
pub struct GmmPrior {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GmmJson {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

impl TryFrom<GmmJson> for GmmPrior {
    type Error = Error;
    fn try_from(j: GmmJson) -> Result<Self> {
        GmmPrior::new(j.weights, j.means, j.variances)
    }
}

impl From<GmmPrior> for GmmJson {
    fn from(g: GmmPrior) -> Self {
        GmmJson {
            weights: g.weights,
            means: g.means,
            variances: g.variances,
        }
    }
}

/// Posterior moments of `x` given `z`.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub responsibilities: Vec<f64>,
    pub mean: Vec<f64>,
    /// `log p_z(z)`, exact including normalizing constants.
    pub log_density: f64,
}

impl GmmPrior {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Contract("mixture needs at least one component".into()));
        }
        if weights.len() != means.len() || weights.len() != variances.len() {
            return Err(Error::Contract(
                "weights, means and variances must have one entry per component".into(),
            ));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::Contract("mixture dimension must be at least 1".into()));
        }
        if means.iter().any(|m| m.len() != dim) {
            return Err(Error::Contract("component means differ in dimension".into()));
        }
        if means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Contract("component means must be finite".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::Contract("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Contract(format!("weights sum to {total}, not 1")));
        }
        if variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Contract("variances must be positive".into()));
        }
        Ok(GmmPrior {
            weights,
            means,
            variances,
        })
    }

    /// Single isotropic Gaussian `N(mean, variance·I)`.
    pub fn gaussian(mean: Vec<f64>, variance: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![variance])
    }

    /// Random mixture for tests and certification problems: means uniform in
    /// `[-spread, spread]ⁿ`, variances in `[var_lo, var_hi]`, Dirichlet(1)-like weights.
    pub fn random<R: Rng>(
        rng: &mut R,
        dim: usize,
        components: usize,
        spread: f64,
        (var_lo, var_hi): (f64, f64),
    ) -> Self {
        let mut weights: Vec<f64> = (0..components)
            .map(|_| -(rng.random::<f64>().max(1e-12)).ln() + 0.05)
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        // renormalize once more so the sum is 1 to the last ulp the check can see
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let means = (0..components)
            .map(|_| (0..dim).map(|_| rng.random_range(-spread..spread)).collect())
            .collect();
        let variances = (0..components)
            .map(|_| rng.random_range(var_lo..=var_hi))
            .collect();
        GmmPrior::new(weights, means, variances).expect("random mixture is valid by construction")
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Mixture mean `Σ wᵢ μᵢ`.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            for (a, b) in m.iter_mut().zip(mu) {
                *a += w * b;
            }
        }
        m
    }

    pub fn translated(&self, t: &[f64]) -> Result<Self> {
        ensure_len(self.dim(), t.len())?;
        let means = self
            .means
            .iter()
            .map(|m| m.iter().zip(t).map(|(a, b)| a + b).collect())
            .collect();
        GmmPrior::new(self.weights.clone(), means, self.variances.clone())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let s = self.variances[k].sqrt();
        self.means[k]
            .iter()
            .map(|m| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Posterior responsibilities, mean and `log p_z` at `z` for noise level `sigma`.
    pub fn posterior(&self, z: &[f64], sigma: f64) -> Result<Posterior> {
        ensure_len(self.dim(), z.len())?;
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Contract(format!("sigma must be > 0, got {sigma}")));
        }
        let n = self.dim() as f64;
        let s2 = sigma * sigma;
        let log_terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, mu), v)| {
                let var = v + s2;
                let d2: f64 = z.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
                w.ln() - 0.5 * n * (2.0 * PI * var).ln() - 0.5 * d2 / var
            })
            .collect();
        let log_density = log_sum_exp(&log_terms);
        let responsibilities: Vec<f64> = log_terms
            .iter()
            .map(|l| (l - log_density).exp())
            .collect();
        let mut mean = vec![0.0; z.len()];
        for ((r, mu), v) in responsibilities.iter().zip(&self.means).zip(&self.variances) {
            let var = v + s2;
            let (a, b) = (v / var, s2 / var);
            for ((m, zi), mi) in mean.iter_mut().zip(z).zip(mu) {
                *m += r * (a * zi + b * mi);
            }
        }
        Ok(Posterior {
            responsibilities,
            mean,
            log_density,
        })
    }

    /// `log p_z(z)` of the noisy observation density.
    pub fn log_density(&self, z: &[f64], sigma: f64) -> Result<f64> {
        Ok(self.posterior(z, sigma)?.log_density)
    }

    /// Exact MMSE estimate `E[x | z]`.
    pub fn mmse_denoise(&self, z: &[f64], sigma: f64) -> Result<Vec<f64>> {
        Ok(self.posterior(z, sigma)?.mean)
    }

    /// Implicit regularizer `h(z) = -τσ² log p_z(z)` and its gradient `τ(z - D_σ(z))`.
    pub fn regularizer(&self, z: &[f64], sigma: f64, tau: f64) -> Result<(f64, Vec<f64>)> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Contract(format!("tau must be > 0, got {tau}")));
        }
        let post = self.posterior(z, sigma)?;
        let value = -tau * sigma * sigma * post.log_density;
        let grad = z
            .iter()
            .zip(&post.mean)
            .map(|(zi, di)| tau * (zi - di))
            .collect();
        Ok((value, grad))
    }

    /// Hessian of `h`, `τ(I - Cov[x|z]/σ²)`, row-major `n×n`.
    pub fn regularizer_hessian(&self, z: &[f64], sigma: f64, tau: f64) -> Result<Vec<f64>> {
        let post = self.posterior(z, sigma)?;
        let n = z.len();
        let s2 = sigma * sigma;
        let mut cov = vec![0.0; n * n];
        for ((r, mu), v) in post
            .responsibilities
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
        {
            let var = v + s2;
            let m: Vec<f64> = z
                .iter()
                .zip(mu)
                .map(|(zi, mi)| (v * zi + s2 * mi) / var)
                .collect();
            let post_var = v * s2 / var;
            for i in 0..n {
                cov[i * n + i] += r * post_var;
                for j in 0..n {
                    cov[i * n + j] += r * m[i] * m[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                cov[i * n + j] -= post.mean[i] * post.mean[j];
            }
        }
        Ok((0..n * n)
            .map(|k| {
                let eye = if k / n == k % n { 1.0 } else { 0.0 };
                tau * (eye - cov[k] / s2)
            })
            .collect())
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Fills `out` with a draw from `N(0, I)`.
pub(crate) fn standard_normal_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}
