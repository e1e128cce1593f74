//! Minibatch SGD with momentum for the residual denoiser, plus the
//! source-pretraining and target-adaptation entry points.

use log::{debug, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{Pair, PairDataset, Role};
use super::net::{Architecture, Cache, DenoiserParams, Gradients, Provenance};
use crate::error::{Error, Result};
use crate::image::Dims;
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub seed: u64,
    pub patch: usize,
    /// Training noise level on the normalized `[0, 1]` scale.
    pub sigma: f64,
    /// Fraction of epochs after which the learning rate drops 10×.
    pub decay_at: f64,
    /// Held-out fraction when no explicit validation set is given.
    pub val_fraction: f64,
    pub arch: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            lr: 0.01,
            momentum: 0.9,
            batch: 16,
            seed: 0,
            patch: 40,
            sigma: 5.0 / 255.0,
            decay_at: 0.8,
            val_fraction: 0.1,
            arch: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be > 0, got {v}")))
            }
        };
        positive("lr", self.lr)?;
        positive("sigma", self.sigma)?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if self.batch == 0 {
            return Err(Error::config("batch", "must be at least 1"));
        }
        if self.patch == 0 {
            return Err(Error::config("patch", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.decay_at) {
            return Err(Error::config("decay_at", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("val_fraction", "must lie in [0, 1)"));
        }
        if self.arch.depth == 0 || self.arch.channels == 0 {
            return Err(Error::config("arch", "depth and channels must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: DenoiserParams,
    /// Entry 0 is the initialization, evaluated before any update.
    pub curve: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Mean over `pairs` of `‖clean − D(noisy)‖² / p²` and its parameter gradient.
pub fn loss_and_grad(params: &DenoiserParams, pairs: &[Pair], dims: Dims) -> Result<(f64, Gradients)> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let scale = 1.0 / (pairs.len() * dims.len()) as f64;
    let mut grads = params.zero_grads();
    let mut loss = 0.0;
    let mut cache = Some(Cache::default());
    for pair in pairs {
        let net = params.forward_cached(&pair.noisy, dims, &mut cache);
        let mut d_out = Vec::with_capacity(net.len());
        for ((z, r), c) in pair.noisy.iter().zip(&net).zip(&pair.clean) {
            let diff = z - r - c;
            loss += diff * diff * scale;
            d_out.push(2.0 * diff * scale);
        }
        params.backward(dims, cache.as_ref().unwrap(), &d_out, &mut grads);
    }
    Ok((loss, grads))
}

pub fn mean_loss(params: &DenoiserParams, pairs: &[Pair], dims: Dims) -> f64 {
    if pairs.is_empty() {
        return f64::NAN;
    }
    let total: f64 = pairs
        .iter()
        .map(|p| {
            params
                .denoise(&p.noisy, dims)
                .iter()
                .zip(&p.clean)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    total / (pairs.len() * dims.len()) as f64
}

/// Core optimizer loop shared by every entry point.
pub fn train(
    init: DenoiserParams,
    train_set: &PairDataset,
    val_set: &PairDataset,
    cfg: &TrainConfig,
) -> Result<Trained> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dims = train_set.dims();
    // validation may use a different (e.g. full-detector) size than training patches
    let val_dims = val_set.dims();
    let eval_val = |p: &DenoiserParams| {
        if val_set.is_empty() {
            mean_loss(p, &train_set.pairs, dims)
        } else {
            mean_loss(p, &val_set.pairs, val_dims)
        }
    };

    let mut params = init;
    let mut best = params.clone();
    let init_val = eval_val(&params);
    let mut best_val = init_val;
    let mut best_epoch = 0;
    let mut curve = vec![EpochStats {
        epoch: 0,
        train_loss: mean_loss(&params, &train_set.pairs, dims),
        val_loss: init_val,
    }];
    let mut velocity: Vec<f64> = vec![0.0; params.n_params()];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle = stream(cfg.seed, Stream::Shuffle);
    let decay_epoch = (cfg.decay_at * cfg.epochs as f64).floor() as usize;

    for epoch in 1..=cfg.epochs {
        let lr = if epoch > decay_epoch { cfg.lr * 0.1 } else { cfg.lr };
        order.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<Pair> = chunk.iter().map(|&i| train_set.pairs[i].clone()).collect();
            let (loss, grads) = loss_and_grad(&params, &batch, dims)?;
            epoch_loss += loss * chunk.len() as f64;
            let flat = grads
                .iter()
                .flat_map(|l| l.weights.iter().chain(l.bias.iter()));
            for ((p, v), g) in params.params_mut().zip(velocity.iter_mut()).zip(flat) {
                *v = cfg.momentum * *v + g;
                *p -= lr * *v;
            }
        }
        if !params.is_finite() {
            return Err(Error::Contract(format!(
                "training diverged at epoch {epoch}; lower the learning rate"
            )));
        }
        let val_loss = eval_val(&params);
        let train_loss = epoch_loss / train_set.len() as f64;
        debug!("epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e}");
        curve.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best = params.clone();
            best_epoch = epoch;
        }
    }
    Ok(Trained {
        params: best,
        curve,
        best_epoch,
    })
}

/// Trains a fresh network on source-domain pairs (provenance `pretrained`).
pub fn pretrain(dataset: &PairDataset, cfg: &TrainConfig) -> Result<Trained> {
    let (train_set, val_set) = dataset.split(cfg.val_fraction, cfg.seed);
    pretrain_with_validation(&train_set, &val_set, cfg)
}

pub fn pretrain_with_validation(train_set: &PairDataset, val_set: &PairDataset, cfg: &TrainConfig) -> Result<Trained> {
    if train_set.role != Role::Source {
        return Err(Error::Contract("pretraining requires a source-role dataset".into()));
    }
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut init = DenoiserParams::init(cfg.arch.clone(), cfg.seed);
    init.sigma_train = cfg.sigma;
    let mut out = train(init, train_set, val_set, cfg)?;
    out.params.provenance = Provenance::Pretrained;
    Ok(out)
}

/// Fine-tunes `source` on target-domain pairs. `K` in the resulting
/// `adapted(K)` provenance is the number of target pairs.
pub fn adapt(source: &DenoiserParams, target: &PairDataset, cfg: &TrainConfig) -> Result<Trained> {
    let (train_set, val_set) = target.split(cfg.val_fraction, cfg.seed);
    adapt_with_validation(source, &train_set, &val_set, cfg)
}

pub fn adapt_with_validation(
    source: &DenoiserParams,
    target: &PairDataset,
    val_set: &PairDataset,
    cfg: &TrainConfig,
) -> Result<Trained> {
    if target.role != Role::Target {
        return Err(Error::Contract("adaptation requires a target-role dataset".into()));
    }
    if source.provenance == Provenance::ZeroStart {
        warn!("adapting parameters that were never pretrained (zero-start provenance)");
    }
    let k = target.len();
    if k == 0 {
        let mut params = source.clone();
        params.provenance = Provenance::Adapted { pairs: 0 };
        return Ok(Trained {
            params,
            curve: Vec::new(),
            best_epoch: 0,
        });
    }
    let mut out = train(source.clone(), target, val_set, cfg)?;
    out.params.provenance = Provenance::Adapted { pairs: k };
    Ok(out)
}

/// The baseline without source pretraining: fresh weights trained on target pairs only.
pub fn train_zero_start(target: &PairDataset, val_set: &PairDataset, cfg: &TrainConfig) -> Result<Trained> {
    let mut init = DenoiserParams::init(cfg.arch.clone(), cfg.seed);
    init.sigma_train = cfg.sigma;
    let mut out = train(init, target, val_set, cfg)?;
    out.params.provenance = Provenance::ZeroStart;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learned::net::Padding;

    fn small_arch() -> Architecture {
        Architecture {
            depth: 3,
            channels: 4,
            padding: Padding::Symmetric,
        }
    }

    #[test]
    fn perfect_identity_batch_has_zero_loss_and_grad() {
        let params = DenoiserParams::zeros(small_arch());
        let ds = PairDataset::synthetic_textures(3, 6, 0.0, 1);
        let (loss, grads) = loss_and_grad(&params, &ds.pairs, ds.dims()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|l| l.weights.iter().chain(&l.bias).all(|&g| g == 0.0)));
    }

    #[test]
    fn scalar_linear_layer_is_least_squares() {
        // depth 1 net with only the centre tap active: D(z) = z − (a·z + b)
        let mut params = DenoiserParams::zeros(Architecture {
            depth: 1,
            channels: 1,
            padding: Padding::Zero,
        });
        let (a, b) = (0.3, 0.05);
        params.layers[0].weights[4] = a;
        params.layers[0].bias[0] = b;
        let pair = Pair {
            clean: vec![0.2],
            noisy: vec![0.5],
        };
        let (loss, grads) = loss_and_grad(&params, std::slice::from_ref(&pair), Dims::new(1, 1)).unwrap();
        // out = (1−a)·0.5 − b, residual e = out − 0.2
        let e = (1.0 - a) * 0.5 - b - 0.2;
        assert!((loss - e * e).abs() < 1e-15);
        assert!((grads[0].weights[4] - (-2.0 * e * 0.5)).abs() < 1e-15);
        assert!((grads[0].bias[0] - (-2.0 * e)).abs() < 1e-15);
        // the off-centre taps see zero padding
        assert!(grads[0].weights.iter().enumerate().all(|(i, &g)| i == 4 || g == 0.0));
    }

    #[test]
    fn zero_epochs_returns_init() {
        let ds = PairDataset::synthetic_textures(10, 8, 0.05, 2);
        let cfg = TrainConfig {
            epochs: 0,
            arch: small_arch(),
            patch: 8,
            ..TrainConfig::default()
        };
        let out = pretrain(&ds, &cfg).unwrap();
        let init = DenoiserParams::init(small_arch(), cfg.seed);
        assert_eq!(out.params.layers, init.layers);
        assert_eq!(out.params.provenance, Provenance::Pretrained);
    }

    #[test]
    fn adapting_on_nothing_is_a_no_op() {
        let mut src = DenoiserParams::init(small_arch(), 3);
        src.provenance = Provenance::Pretrained;
        let empty = PairDataset::new(8, Role::Target);
        let out = adapt(&src, &empty, &TrainConfig::default()).unwrap();
        assert_eq!(out.params.layers, src.layers);
        assert_eq!(out.params.provenance, Provenance::Adapted { pairs: 0 });
    }

    #[test]
    fn role_and_emptiness_checks() {
        let ds = PairDataset::synthetic_textures(4, 8, 0.05, 2);
        let src = DenoiserParams::init(small_arch(), 3);
        assert!(adapt(&src, &ds, &TrainConfig::default()).is_err());
        let empty = PairDataset::new(8, Role::Source);
        assert!(matches!(pretrain(&empty, &TrainConfig::default()), Err(Error::EmptyDataset)));
        assert!(loss_and_grad(&src, &[], Dims::new(8, 8)).is_err());
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let ds = PairDataset::synthetic_textures(24, 12, 0.08, 5);
        let cfg = TrainConfig {
            epochs: 50,
            lr: 0.05,
            batch: 4,
            patch: 12,
            sigma: 0.08,
            arch: small_arch(),
            val_fraction: 0.25,
            ..TrainConfig::default()
        };
        let a = pretrain(&ds, &cfg).unwrap();
        let b = pretrain(&ds, &cfg).unwrap();
        assert_eq!(a.params.layers, b.params.layers);
        let first = a.curve.first().unwrap().train_loss;
        let last = a.curve.last().unwrap().train_loss;
        assert!(last < first, "{first} -> {last}");
    }
}
