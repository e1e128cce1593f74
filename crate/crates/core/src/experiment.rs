//! Desk-scale restoration experiments on synthetic SANS data: corpus
//! generation, restorer comparison with tuned hyperparameters, and the
//! adaptation sample-size sweep.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DetectorImage, Dims};
use crate::learned::{self, DenoiserParams, Pair, PairDataset, Provenance, Role, TrainConfig};
use crate::metrics::{compute_metrics_slices, fmt_sig, MetricsRecord};
use crate::priors::PriorHandle;
use crate::rng::{substream, Stream};
use crate::sans::{
    azimuthal_average, simulate_acquisition, synth_clean_pattern, Binning, FormFactor, FormFactorModel,
    ScatteringGeometry,
};
use crate::solver::{pr_sans_solve, SolveConfig, TraceLevel};

/// Synthetic detector corpus. Patterns are generated with `P(0) = 1` so
/// intensities already sit in roughly `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Square detector side in pixels.
    pub size: usize,
    /// Metres; larger than the instrument's so a small detector spans a similar `Q` range.
    pub pixel_pitch: f64,
    /// Expected counts per unit intensity in the short exposure.
    pub flux_scale: f64,
    /// Exposure ratio between the long (reference) and short acquisitions.
    pub time_ratio: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Maximum beam-centre offset from the detector centre, in pixels.
    pub center_jitter: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            size: 64,
            pixel_pitch: 0.022,
            flux_scale: 400.0,
            time_ratio: 12.0,
            n_train: 80,
            n_val: 10,
            n_test: 10,
            center_jitter: 3.0,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 4 {
            return Err(Error::config("size", "must be at least 4"));
        }
        for (field, v) in [
            ("pixel_pitch", self.pixel_pitch),
            ("flux_scale", self.flux_scale),
            ("time_ratio", self.time_ratio),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be > 0, got {v}")));
            }
        }
        if !(self.center_jitter >= 0.0) {
            return Err(Error::config("center_jitter", "must be ≥ 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    /// Position in the generated corpus, across all splits.
    pub index: u64,
    pub model: FormFactorModel,
    pub geometry: ScatteringGeometry,
    pub clean: DetectorImage,
    /// Short exposure (`t = 1`).
    pub low: DetectorImage,
    /// Long exposure (`t = time_ratio`).
    pub high: DetectorImage,
}

impl Sample {
    pub fn dims(&self) -> Dims {
        self.clean.dims()
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Sphere or Guinier–Porod scatterer with a small flat background.
pub fn random_model<R: Rng>(rng: &mut R) -> FormFactorModel {
    let form = if rng.random_bool(0.5) {
        FormFactor::Sphere {
            radius: rng.random_range(60.0..200.0),
        }
    } else {
        FormFactor::GuinierPorod {
            rg: rng.random_range(30.0..120.0),
            porod_exponent: rng.random_range(3.0..4.5),
        }
    };
    FormFactorModel {
        form,
        scale: 1.0,
        background: rng.random_range(0.002..0.02),
    }
}

impl Corpus {
    pub fn generate(cfg: &CorpusConfig) -> Result<Self> {
        cfg.validate()?;
        let total = cfg.n_train + cfg.n_val + cfg.n_test;
        let mut samples = Vec::with_capacity(total);
        for i in 0..total as u64 {
            let mut rng = substream(cfg.seed, Stream::Synthesis, i);
            let model = random_model(&mut rng);
            let mut geometry = ScatteringGeometry::centered(cfg.size, cfg.size);
            geometry.pixel_pitch = cfg.pixel_pitch;
            if cfg.center_jitter > 0.0 {
                geometry.beam_center.0 += rng.random_range(-cfg.center_jitter..=cfg.center_jitter);
                geometry.beam_center.1 += rng.random_range(-cfg.center_jitter..=cfg.center_jitter);
            }
            let clean = synth_clean_pattern(&model, &geometry)?;
            let noise_seed = cfg.seed.wrapping_mul(0x9E37_79B9).wrapping_add(2 * i);
            let low = simulate_acquisition(&clean, 1.0, cfg.flux_scale, noise_seed)?;
            let high = simulate_acquisition(&clean, cfg.time_ratio, cfg.flux_scale, noise_seed + 1)?;
            samples.push(Sample {
                index: i,
                model,
                geometry,
                clean,
                low,
                high,
            });
        }
        let test = samples.split_off(cfg.n_train + cfg.n_val);
        let val = samples.split_off(cfg.n_train);
        Ok(Corpus {
            config: cfg.clone(),
            train: samples,
            val,
            test,
        })
    }
}

/// How target-domain training pairs are formed from the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetPairs {
    /// Long exposure as the clean side, long exposure plus white Gaussian
    /// noise at the training σ as the noisy side. The adapted network stays
    /// a σ-denoiser of the target distribution.
    #[default]
    Awgn,
    /// Long exposure as the clean side, short exposure as the noisy side.
    /// The network becomes an end-to-end restorer.
    Exposure,
}

/// Whole-image `(long, short)` exposure pairs, one per sample.
pub fn exposure_pairs(samples: &[Sample], role: Role) -> Result<PairDataset> {
    let size = square_size(samples)?;
    let mut ds = PairDataset::new(size, role);
    for s in samples {
        ds.push(Pair {
            clean: s.high.to_f64(),
            noisy: s.low.to_f64(),
        })?;
    }
    Ok(ds)
}

/// Long exposures paired with copies corrupted by white Gaussian noise of
/// standard deviation `sigma`. Noise is keyed by sample index, so a sample
/// gets the same realization whichever subset it appears in.
pub fn awgn_pairs(samples: &[Sample], sigma: f64, seed: u64, role: Role) -> Result<PairDataset> {
    let size = square_size(samples)?;
    let mut ds = PairDataset::new(size, role);
    ds.noise_sigma = Some(sigma);
    for s in samples {
        let clean = s.high.to_f64();
        let noisy = with_awgn(&clean, sigma, seed, s.index);
        ds.push(Pair { clean, noisy })?;
    }
    Ok(ds)
}

fn with_awgn(values: &[f64], sigma: f64, seed: u64, index: u64) -> Vec<f64> {
    let mut rng = substream(seed, Stream::Perturbation, index);
    values
        .iter()
        .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// `image` plus white Gaussian noise drawn from perturbation stream `index`.
pub fn add_awgn(image: &DetectorImage, sigma: f64, seed: u64, index: u64) -> Result<DetectorImage> {
    image.with_data_f64(&with_awgn(&image.to_f64(), sigma, seed, index))
}

pub fn target_pairs(samples: &[Sample], mode: TargetPairs, sigma: f64, seed: u64) -> Result<PairDataset> {
    match mode {
        TargetPairs::Awgn => awgn_pairs(samples, sigma, seed, Role::Target),
        TargetPairs::Exposure => exposure_pairs(samples, Role::Target),
    }
}

fn square_size(samples: &[Sample]) -> Result<usize> {
    let size = samples.first().map(|s| s.clean.width).unwrap_or(1);
    if samples.iter().any(|s| s.clean.width != size || s.clean.height != size) {
        return Err(Error::Contract("pairs need square detectors of one size".into()));
    }
    Ok(size)
}

/// `(clean, short)` pairs, for measuring error against the noise-free truth.
pub fn truth_pairs(samples: &[Sample]) -> Result<PairDataset> {
    let size = samples.first().map(|s| s.clean.width).unwrap_or(1);
    let mut ds = PairDataset::new(size, Role::Target);
    for s in samples {
        ds.push(Pair {
            clean: s.clean.to_f64(),
            noisy: s.low.to_f64(),
        })?;
    }
    Ok(ds)
}

/// A way of turning a short exposure into an estimate.
#[derive(Debug, Clone)]
pub enum Restorer {
    /// The measurement itself.
    Noisy,
    /// One application of a denoiser.
    Denoise(PriorHandle),
    /// The proximal-gradient iteration with the given prior.
    PrSans { prior: PriorHandle, cfg: SolveConfig },
}

impl Restorer {
    pub fn restore(&self, y: &[f64], dims: Dims) -> Result<Vec<f64>> {
        match self {
            Restorer::Noisy => Ok(y.to_vec()),
            Restorer::Denoise(prior) => prior.clone().apply(y, dims),
            Restorer::PrSans { prior, cfg } => Ok(pr_sans_solve(y, &mut prior.clone(), cfg, None, dims)?.0),
        }
    }
}

/// Metrics of each restored short exposure against the clean pattern.
pub fn evaluate(restorer: &Restorer, samples: &[Sample]) -> Result<Vec<MetricsRecord>> {
    samples
        .iter()
        .map(|s| {
            let out = restorer.restore(&s.low.to_f64(), s.dims())?;
            compute_metrics_slices(&s.clean.to_f64(), &out)
        })
        .collect()
}

pub fn mean_snr(records: &[MetricsRecord]) -> f64 {
    records.iter().map(|r| r.snr_db).sum::<f64>() / records.len().max(1) as f64
}

/// Metrics of the reduced `I(Q)` curve of each restored image against the
/// curve of the clean pattern, over bins that are non-empty.
pub fn evaluate_iq(restorer: &Restorer, samples: &[Sample], n_bins: usize) -> Result<Vec<MetricsRecord>> {
    samples
        .iter()
        .map(|s| {
            let out = restorer.restore(&s.low.to_f64(), s.dims())?;
            let restored = s.clean.with_data_f64(&out)?;
            let reference = azimuthal_average(&s.clean, &s.geometry, n_bins, Binning::Log)?;
            let estimate = azimuthal_average(&restored, &s.geometry, n_bins, Binning::Log)?;
            let bins: Vec<usize> = reference.non_empty().collect();
            let r: Vec<f64> = bins.iter().map(|&i| reference.intensity[i]).collect();
            let e: Vec<f64> = bins.iter().map(|&i| estimate.intensity[i]).collect();
            compute_metrics_slices(&r, &e)
        })
        .collect()
}

/// The candidate with the highest mean SNR on `samples`; ties keep the earlier one.
pub fn select_best<T: Clone>(
    candidates: &[T],
    samples: &[Sample],
    build: impl Fn(&T) -> Restorer,
) -> Result<(T, f64)> {
    let mut best: Option<(T, f64)> = None;
    for c in candidates {
        let snr = mean_snr(&evaluate(&build(c), samples)?);
        if best.as_ref().is_none_or(|(_, b)| snr > *b) {
            best = Some((c.clone(), snr));
        }
    }
    best.ok_or_else(|| Error::Contract("no candidates to select from".into()))
}

pub const TV_GRID: [f64; 8] = [0.002, 0.004, 0.007, 0.01, 0.015, 0.02, 0.03, 0.05];
/// τ candidates for `γ = 0.7`. The forward step `x − γτ(x − D(x))` stops
/// contracting once `γτ` nears 2, so the grid ends just below `2/γ ≈ 2.86`.
pub const TAU_GRID: [f64; 8] = [0.25, 0.5, 1.0, 1.5, 2.0, 2.3, 2.6, 2.8];

pub fn tune_tv(samples: &[Sample], grid: &[f64]) -> Result<(f64, f64)> {
    select_best(grid, samples, |&s| Restorer::Denoise(PriorHandle::tv(s)))
}

pub fn tune_tau(prior: &PriorHandle, base: &SolveConfig, samples: &[Sample], grid: &[f64]) -> Result<(f64, f64)> {
    select_best(grid, samples, |&tau| Restorer::PrSans {
        prior: prior.clone(),
        cfg: SolveConfig { tau, ..*base },
    })
}

/// The imaging configuration: `γ = 0.7`, 20 iterations, no early stop.
pub fn imaging_solve_config() -> SolveConfig {
    SolveConfig {
        gamma: 0.7,
        tau: 1.0,
        max_iter: 20,
        fp_tol: 0.0,
        trace_level: TraceLevel::Final,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    /// Tuned hyperparameter (TV strength or τ), if any.
    pub parameter: Option<f64>,
    pub snr_db: f64,
    pub rmse: f64,
    pub iq_nmse: f64,
    pub iq_mae: f64,
}

/// Per-method means over the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn get(&self, method: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Header `method,parameter,snr_db,rmse,iq_nmse,iq_mae`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,parameter,snr_db,rmse,iq_nmse,iq_mae\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.method,
                r.parameter.map(|p| fmt_sig(p, 6)).unwrap_or_default(),
                fmt_sig(r.snr_db, 6),
                fmt_sig(r.rmse, 6),
                fmt_sig(r.iq_nmse, 6),
                fmt_sig(r.iq_mae, 6)
            );
        }
        out
    }
}

fn summarize(method: &str, parameter: Option<f64>, restorer: &Restorer, samples: &[Sample]) -> Result<ComparisonRow> {
    let img = evaluate(restorer, samples)?;
    let iq = evaluate_iq(restorer, samples, 40)?;
    let n = samples.len().max(1) as f64;
    Ok(ComparisonRow {
        method: method.into(),
        parameter,
        snr_db: mean_snr(&img),
        rmse: img.iter().map(|r| r.rmse).sum::<f64>() / n,
        iq_nmse: iq.iter().map(|r| r.nmse).sum::<f64>() / n,
        iq_mae: iq.iter().map(|r| r.mae).sum::<f64>() / n,
    })
}

/// Tunes TV strength and τ on the validation split, then scores the noisy
/// input, TV, the learned denoiser alone and the iteration with the learned
/// prior on the test split.
pub fn compare_restorers(corpus: &Corpus, learned: &DenoiserParams) -> Result<Comparison> {
    let (tv_strength, _) = tune_tv(&corpus.val, &TV_GRID)?;
    let prior = PriorHandle::learned(learned.clone());
    let base = imaging_solve_config();
    let (tau, _) = tune_tau(&prior, &base, &corpus.val, &TAU_GRID)?;
    let rows = vec![
        summarize("noisy", None, &Restorer::Noisy, &corpus.test)?,
        summarize("tv", Some(tv_strength), &Restorer::Denoise(PriorHandle::tv(tv_strength)), &corpus.test)?,
        summarize("prior_only", None, &Restorer::Denoise(prior.clone()), &corpus.test)?,
        summarize(
            "pr_sans",
            Some(tau),
            &Restorer::PrSans {
                prior,
                cfg: SolveConfig { tau, ..base },
            },
            &corpus.test,
        )?,
    ];
    Ok(Comparison { rows })
}

/// Number of texture patches behind the desk-scale source prior.
pub const DESK_TEXTURE_PATCHES: usize = 200;

/// Desk-scale pretraining: 5 layers of 8 channels, 20 epochs at learning rate 0.5.
pub fn desk_pretrain_config() -> TrainConfig {
    TrainConfig {
        epochs: 20,
        lr: 0.5,
        arch: learned::Architecture {
            depth: 5,
            channels: 8,
            ..Default::default()
        },
        ..TrainConfig::default()
    }
}

/// Same as pretraining but with batches of 8 whole detector images.
pub fn desk_adapt_config() -> TrainConfig {
    TrainConfig {
        batch: 8,
        ..desk_pretrain_config()
    }
}

/// Texture-pretrained source prior.
pub fn pretrain_texture_prior(n_patches: usize, cfg: &TrainConfig) -> Result<learned::Trained> {
    let ds = PairDataset::synthetic_textures(n_patches, cfg.patch, cfg.sigma, cfg.seed);
    learned::pretrain(&ds, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub start: String,
    /// Denoising loss on the validation split's target pairs.
    pub val_mse: f64,
    /// Test-split SNR of the iteration with this prior, τ tuned on validation.
    pub pr_sans_snr_db: Option<f64>,
    pub tau: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    pub adapted: Vec<DenoiserParams>,
    pub zero_start: Option<DenoiserParams>,
}

impl Sweep {
    pub fn adapted_rows(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.start == "adapted")
    }

    pub fn zero_start_row(&self) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.start == "zero_start")
    }

    /// Header `k,start,val_mse,pr_sans_snr_db,tau`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,start,val_mse,pr_sans_snr_db,tau\n");
        let opt = |v: Option<f64>| v.map(|v| fmt_sig(v, 6)).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.k,
                r.start,
                fmt_sig(r.val_mse, 6),
                opt(r.pr_sans_snr_db),
                opt(r.tau)
            );
        }
        out
    }
}

/// Adaptation sweep settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub ks: Vec<usize>,
    /// Train a fresh network on this many pairs for comparison.
    pub zero_start_k: Option<usize>,
    pub target_pairs: TargetPairs,
    /// Also tune τ and score the iteration on the test split for every prior.
    pub restore: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            ks: vec![0, 20, 40, 60, 80],
            zero_start_k: Some(80),
            target_pairs: TargetPairs::Awgn,
            restore: false,
        }
    }
}

/// Adapts `source` on the first `k` training samples for each `k` and,
/// when asked, trains a fresh network on `zero_start_k` samples with the
/// same budget.
pub fn adaptation_sweep(
    source: &DenoiserParams,
    corpus: &Corpus,
    sweep: &SweepConfig,
    cfg: &TrainConfig,
) -> Result<Sweep> {
    let val = target_pairs(&corpus.val, sweep.target_pairs, cfg.sigma, cfg.seed)?;
    let dims = val.dims();
    let score = |p: &DenoiserParams, k: usize, start: &str| -> Result<SweepRow> {
        let (tau, snr) = if sweep.restore {
            let prior = PriorHandle::learned(p.clone());
            let base = imaging_solve_config();
            let (tau, _) = tune_tau(&prior, &base, &corpus.val, &TAU_GRID)?;
            let r = Restorer::PrSans {
                prior,
                cfg: SolveConfig { tau, ..base },
            };
            (Some(tau), Some(mean_snr(&evaluate(&r, &corpus.test)?)))
        } else {
            (None, None)
        };
        Ok(SweepRow {
            k,
            start: start.into(),
            val_mse: learned::mean_loss(p, &val.pairs, dims),
            pr_sans_snr_db: snr,
            tau,
        })
    };
    let subset = |k: usize| -> Result<PairDataset> {
        if k > corpus.train.len() {
            return Err(Error::config("ks", format!("{k} exceeds the {} training samples", corpus.train.len())));
        }
        let mut ds = target_pairs(&corpus.train[..k], sweep.target_pairs, cfg.sigma, cfg.seed)?;
        ds.role = Role::Target;
        Ok(ds)
    };
    let mut rows = Vec::new();
    let mut adapted = Vec::new();
    for &k in &sweep.ks {
        let target = subset(k)?;
        let trained = learned::adapt_with_validation(source, &target, &val, cfg)?;
        rows.push(score(&trained.params, k, "adapted")?);
        adapted.push(trained.params);
    }
    let zero_start = match sweep.zero_start_k {
        Some(k) => {
            let target = subset(k)?;
            let mut trained = learned::train_zero_start(&target, &val, cfg)?;
            trained.params.provenance = Provenance::ZeroStart;
            rows.push(score(&trained.params, k, "zero_start")?);
            Some(trained.params)
        }
        None => None,
    };
    Ok(Sweep {
        rows,
        adapted,
        zero_start,
    })
}
