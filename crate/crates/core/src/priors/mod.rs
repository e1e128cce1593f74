//! Denoiser priors behind one `apply` contract.

pub mod blur;
pub mod gmm;
pub mod schedule;
pub mod tv;

use rand_chacha::ChaCha8Rng;

pub use blur::gaussian_blur;
pub use gmm::GmmPrior;
pub use schedule::EpsilonSchedule;
pub use tv::{tv_denoise, TvConfig};

use crate::error::{ensure_len, Error, Result};
use crate::image::Dims;
use crate::learned::DenoiserParams;
use crate::rng::{substream, Stream};

#[derive(Debug, Clone)]
pub enum PriorHandle {
    /// Exact MMSE denoiser of a Gaussian mixture at noise level `sigma`.
    GmmMmse { gmm: GmmPrior, sigma: f64 },
    Tv { strength: f64, config: TvConfig },
    GaussianBlur { width: f64 },
    Learned(Box<DenoiserParams>),
    /// Identity denoiser (`R = I − D = 0`).
    Identity,
    Inexact(InexactPrior),
}

/// Wraps an exact denoiser and perturbs call `k` by exactly `ε_k` in norm.
///
/// Stateful: holds a call counter. Clone per solver instance.
#[derive(Debug, Clone)]
pub struct InexactPrior {
    base: Box<PriorHandle>,
    schedule: EpsilonSchedule,
    seed: u64,
    calls: usize,
    last_epsilon: f64,
}

impl InexactPrior {
    pub fn base(&self) -> &PriorHandle {
        &self.base
    }

    pub fn schedule(&self) -> &EpsilonSchedule {
        &self.schedule
    }

    pub fn calls(&self) -> usize {
        self.calls
    }

    pub fn reset(&mut self) {
        self.calls = 0;
        self.last_epsilon = 0.0;
    }
}

impl PriorHandle {
    pub fn gmm(gmm: GmmPrior, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Contract(format!("sigma must be > 0, got {sigma}")));
        }
        Ok(PriorHandle::GmmMmse { gmm, sigma })
    }

    pub fn tv(strength: f64) -> Self {
        PriorHandle::Tv {
            strength,
            config: TvConfig::default(),
        }
    }

    pub fn learned(params: DenoiserParams) -> Self {
        PriorHandle::Learned(Box::new(params))
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            PriorHandle::GmmMmse { .. } => "gmm_mmse",
            PriorHandle::Tv { .. } => "tv",
            PriorHandle::GaussianBlur { .. } => "gaussian_blur",
            PriorHandle::Learned(_) => "learned",
            PriorHandle::Identity => "identity",
            PriorHandle::Inexact(_) => "inexact",
        }
    }

    /// Wraps `self` so that call `k` returns `base(z) + ε_k u_k`.
    pub fn inexact(self, schedule: EpsilonSchedule, seed: u64) -> Result<Self> {
        if matches!(self, PriorHandle::Inexact(_)) {
            return Err(Error::Contract("cannot wrap an inexact prior twice".into()));
        }
        Ok(PriorHandle::Inexact(InexactPrior {
            base: Box::new(self),
            schedule,
            seed,
            calls: 0,
            last_epsilon: 0.0,
        }))
    }

    /// Analytic mixture behind this prior, if any (looking through an inexact wrapper).
    pub fn analytic(&self) -> Option<(&GmmPrior, f64)> {
        match self {
            PriorHandle::GmmMmse { gmm, sigma } => Some((gmm, *sigma)),
            PriorHandle::Inexact(w) => w.base.analytic(),
            _ => None,
        }
    }

    /// `ε` consumed by the most recent call; zero for exact priors.
    pub fn last_epsilon(&self) -> f64 {
        match self {
            PriorHandle::Inexact(w) => w.last_epsilon,
            _ => 0.0,
        }
    }

    pub fn apply(&mut self, z: &[f64], dims: Dims) -> Result<Vec<f64>> {
        ensure_len(dims.len(), z.len())?;
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        match self {
            PriorHandle::GmmMmse { gmm, sigma } => gmm.mmse_denoise(z, *sigma),
            PriorHandle::Tv { strength, config } => Ok(tv_denoise(z, dims, *strength, *config)),
            PriorHandle::GaussianBlur { width } => Ok(gaussian_blur(z, dims, *width)),
            PriorHandle::Learned(params) => Ok(params.denoise(z, dims)),
            PriorHandle::Identity => Ok(z.to_vec()),
            PriorHandle::Inexact(w) => {
                let k = w.calls;
                w.calls += 1;
                let mut out = w.base.apply(z, dims)?;
                let eps = w.schedule.epsilon(k);
                w.last_epsilon = eps;
                if eps == 0.0 {
                    return Ok(out);
                }
                let u = unit_direction(w.seed, k, z.len());
                for (o, ui) in out.iter_mut().zip(&u) {
                    *o += eps * ui;
                }
                Ok(out)
            }
        }
    }
}

/// Deterministic unit vector for perturbation call `k`.
pub fn unit_direction(seed: u64, k: usize, n: usize) -> Vec<f64> {
    let mut rng: ChaCha8Rng = substream(seed, Stream::Perturbation, k as u64);
    loop {
        let mut u = gmm::standard_normal_vec(&mut rng, n);
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            u.iter_mut().for_each(|v| *v /= norm);
            return u;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn zero_width_blur_prior_is_identity() {
        let z: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let mut p = PriorHandle::GaussianBlur { width: 0.0 };
        assert_eq!(p.apply(&z, Dims::new(3, 3)).unwrap(), z);
    }

    #[test]
    fn gmm_prior_shrinks() {
        let g = GmmPrior::gaussian(vec![0.0, 0.0], 1.0).unwrap();
        let mut p = PriorHandle::gmm(g, 1.0).unwrap();
        assert_eq!(p.apply(&[2.0, 0.0], Dims::flat(2)).unwrap(), vec![1.0, 0.0]);
        assert!(p.apply(&[2.0, 0.0, 1.0], Dims::flat(3)).is_err());
    }

    #[test]
    fn zero_schedule_is_bit_identical() {
        let g = GmmPrior::new(vec![0.3, 0.7], vec![vec![1.0, 0.0], vec![-1.0, 0.5]], vec![0.2, 0.4]).unwrap();
        let mut exact = PriorHandle::gmm(g, 0.5).unwrap();
        let mut wrapped = exact.clone().inexact(EpsilonSchedule::Zero, 9).unwrap();
        for z in [[0.1, 0.2], [-2.0, 1.0], [0.0, -0.0]] {
            let a = exact.apply(&z, Dims::flat(2)).unwrap();
            let b = wrapped.apply(&z, Dims::flat(2)).unwrap();
            let ab: Vec<u64> = a.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn constant_schedule_perturbs_by_exactly_c() {
        let g = GmmPrior::gaussian(vec![0.0; 5], 1.0).unwrap();
        let mut exact = PriorHandle::gmm(g, 0.8).unwrap();
        let mut wrapped = exact.clone().inexact(EpsilonSchedule::Constant(0.1), 1).unwrap();
        for k in 0..20 {
            let z: Vec<f64> = (0..5).map(|i| (i * k) as f64 * 0.1).collect();
            let a = exact.apply(&z, Dims::flat(5)).unwrap();
            let b = wrapped.apply(&z, Dims::flat(5)).unwrap();
            assert!((dist(&a, &b) - 0.1).abs() < 1e-12);
            assert_eq!(wrapped.last_epsilon(), 0.1);
        }
    }

    #[test]
    fn same_seed_reproduces() {
        let base = PriorHandle::GaussianBlur { width: 1.0 };
        let sched = EpsilonSchedule::Power { c: 0.3, p: 1.0 };
        let mut a = base.clone().inexact(sched.clone(), 42).unwrap();
        let mut b = base.inexact(sched, 42).unwrap();
        let z: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).cos()).collect();
        for _ in 0..5 {
            let x = a.apply(&z, Dims::new(4, 4)).unwrap();
            let y = b.apply(&z, Dims::new(4, 4)).unwrap();
            assert_eq!(
                x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                y.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn cannot_double_wrap() {
        let w = PriorHandle::Identity.inexact(EpsilonSchedule::Zero, 0).unwrap();
        assert!(w.inexact(EpsilonSchedule::Zero, 0).is_err());
    }
}
