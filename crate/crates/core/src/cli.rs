//! Command-line driver.
//!
//! Every subcommand reads one JSON config, writes its artifacts plus
//! `resolved_config.json` and `manifest.json` into the output directory, and
//! exits with one of the codes in [`exit`]. Relative paths inside a config are
//! resolved against the config file's directory. The top-level `seed`
//! (overridable with `--seed`) is copied into every nested seed field, so the
//! resolved config shows the values actually used.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::experiment::{
    self, adaptation_sweep, compare_restorers, desk_adapt_config, desk_pretrain_config, evaluate_iq, target_pairs,
    Corpus, CorpusConfig, Restorer, SweepConfig, TargetPairs, DESK_TEXTURE_PATCHES,
};
use crate::image::DetectorImage;
use crate::learned::{self, checkpoint, DenoiserParams, EpochStats, PairDataset, Provenance, Role, TrainConfig};
use crate::metrics::{compute_metrics, fmt_sig, CSV_HEADER};
use crate::priors::{EpsilonSchedule, GmmPrior, PriorHandle};
use crate::sans::{
    azimuthal_average, simulate, synth_clean_pattern, Acquisition, Binning, FormFactorModel, ScatteringGeometry,
};
use crate::solver::{pr_sans_solve, SolveConfig};
use crate::theory::{certify_convergence, CertifyConfig, Problem};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// A named input file is missing or unreadable; also command-line usage errors.
    pub const MISSING_FILE: i32 = 2;
    /// The config (or an input it points to) is invalid.
    pub const CONFIG: i32 = 3;
    pub const DIVERGED: i32 = 4;
    pub const CERTIFICATION_FAILED: i32 = 5;
}

#[derive(Debug, Parser)]
#[command(name = "prsans", version, about = "Plug-and-play restoration of small-angle scattering detector images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a clean pattern and simulated acquisitions.
    Synth(RunArgs),
    /// Azimuthally average a detector image into an I(Q) curve.
    Reduce(RunArgs),
    /// Train the source denoiser on synthetic textures.
    Pretrain(RunArgs),
    /// Fine-tune a source denoiser on synthetic detector pairs.
    Adapt(RunArgs),
    /// Restore a detector image with the proximal-gradient iteration.
    Restore(RunArgs),
    /// Score images against a reference, or compare restorers on a corpus.
    Eval(RunArgs),
    /// Certify the convergence bound on an analytic mixture problem.
    VerifyTheory(RunArgs),
    /// Adaptation sample-size sweep with zero-start baseline.
    SweepAdaptation(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => exit::MISSING_FILE,
            Error::Divergence { .. } => exit::DIVERGED,
            _ => exit::CONFIG,
        };
        let message = match &e {
            Error::Io { path, source } if source.kind() == io::ErrorKind::NotFound => format!("missing file: {path}"),
            _ => e.to_string(),
        };
        Failure { code, message }
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::MISSING_FILE } else { exit::OK };
        }
    };
    match run(&cli.command) {
        Ok(()) => exit::OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn run(command: &Command) -> CmdResult<()> {
    match command {
        Command::Synth(a) => execute::<SynthConfig>("synth", a, synth),
        Command::Reduce(a) => execute::<ReduceConfig>("reduce", a, reduce),
        Command::Pretrain(a) => execute::<PretrainConfig>("pretrain", a, pretrain),
        Command::Adapt(a) => execute::<AdaptConfig>("adapt", a, adapt),
        Command::Restore(a) => execute::<RestoreConfig>("restore", a, restore),
        Command::Eval(a) => execute::<EvalConfig>("eval", a, eval),
        Command::VerifyTheory(a) => execute::<VerifyTheoryConfig>("verify-theory", a, verify_theory),
        Command::SweepAdaptation(a) => execute::<SweepAdaptationConfig>("sweep-adaptation", a, sweep_adaptation),
    }
}

/// Behaviour shared by all command configs.
pub trait RunConfig: Serialize + DeserializeOwned {
    /// Copies the run seed into nested seed fields.
    fn propagate_seed(&mut self);
    /// Makes relative paths relative to `base`.
    fn resolve_paths(&mut self, _base: &Path) {}
    fn validate(&self) -> crate::Result<()>;
    fn seed_mut(&mut self) -> Option<&mut u64> {
        None
    }
}

/// Collects artifacts written into the output directory.
pub struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn create(dir: &Path) -> CmdResult<Self> {
        fs::create_dir_all(dir).map_err(|e| Failure::new(exit::MISSING_FILE, format!("cannot create {}: {e}", dir.display())))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> CmdResult<()> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| Failure::from(Error::io(&path, e)))?;
        self.record(name);
        Ok(())
    }

    fn image(&mut self, name: &str, image: &DetectorImage) -> CmdResult<()> {
        self.write(name, image.encode()?)
    }

    fn checkpoint(&mut self, name: &str, params: &DenoiserParams) -> CmdResult<()> {
        self.write(name, checkpoint::encode(params)?)
    }

    fn record(&mut self, name: &str) {
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
    }

    fn manifest(&mut self, command: &str, seed: Option<u64>) -> CmdResult<()> {
        let mut names = self.written.clone();
        names.sort();
        let mut entries = Vec::new();
        for name in names {
            let path = self.path(&name);
            let bytes = fs::read(&path).map_err(|e| Failure::from(Error::io(&path, e)))?;
            entries.push(ManifestEntry {
                path: name,
                bytes: bytes.len() as u64,
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
        let manifest = Manifest {
            command: command.to_string(),
            seed,
            outputs: entries,
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(Error::from)?;
        let path = self.path("manifest.json");
        fs::write(&path, json + "\n").map_err(|e| Failure::from(Error::io(&path, e)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: Option<u64>,
    pub outputs: Vec<ManifestEntry>,
}

fn load_config<C: RunConfig>(path: &Path, seed: Option<u64>) -> CmdResult<C> {
    let text = fs::read_to_string(path).map_err(|e| Failure::from(Error::io(path, e)))?;
    let mut cfg: C = serde_json::from_str(&text)
        .map_err(|e| Failure::new(exit::CONFIG, format!("invalid config {}: {e}", path.display())))?;
    if let Some(s) = seed {
        match cfg.seed_mut() {
            Some(slot) => *slot = s,
            None => log::warn!("--seed has no effect on this command"),
        }
    }
    cfg.propagate_seed();
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    cfg.validate()?;
    Ok(cfg)
}

fn execute<C: RunConfig>(
    name: &str,
    args: &RunArgs,
    body: fn(&C, &mut Outputs) -> CmdResult<()>,
) -> CmdResult<()> {
    let mut cfg: C = load_config(&args.config, args.seed)?;
    let seed = cfg.seed_mut().map(|s| *s);
    let mut out = Outputs::create(&args.out)?;
    let resolved = serde_json::to_string_pretty(&cfg).map_err(Error::from)?;
    out.write("resolved_config.json", resolved + "\n")?;
    let result = body(&cfg, &mut out);
    // artifacts written before a failure (a certification report, say) are still listed
    out.manifest(name, seed)?;
    result
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn read_image(path: &Path) -> CmdResult<DetectorImage> {
    Ok(DetectorImage::read(path)?)
}

fn curve_csv(curve: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for s in curve {
        out.push_str(&format!("{},{},{}\n", s.epoch, fmt_sig(s.train_loss, 8), fmt_sig(s.val_loss, 8)));
    }
    out
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub geometry: ScatteringGeometry,
    pub model: FormFactorModel,
    pub acquisition: Acquisition,
    /// Exposure of an additional long acquisition written as `reference.img`.
    pub reference_time_factor: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            geometry: ScatteringGeometry::default(),
            model: FormFactorModel::sphere(150.0, 1.0, 0.01),
            acquisition: Acquisition {
                flux_scale: 400.0,
                ..Acquisition::default()
            },
            reference_time_factor: Some(12.0),
        }
    }
}

impl RunConfig for SynthConfig {
    fn propagate_seed(&mut self) {}

    fn validate(&self) -> crate::Result<()> {
        self.geometry.validate()?;
        self.model.validate()?;
        self.acquisition.validate()?;
        if let Some(t) = self.reference_time_factor {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::config("reference_time_factor", "must be > 0"));
            }
        }
        Ok(())
    }

    fn seed_mut(&mut self) -> Option<&mut u64> {
        Some(&mut self.seed)
    }
}

fn synth(cfg: &SynthConfig, out: &mut Outputs) -> CmdResult<()> {
    let clean = synth_clean_pattern(&cfg.model, &cfg.geometry)?;
    out.image("clean.img", &clean)?;
    out.image("noisy.img", &simulate(&clean, &cfg.acquisition, cfg.seed)?)?;
    if let Some(t) = cfg.reference_time_factor {
        let long = Acquisition {
            time_factor: t,
            ..cfg.acquisition
        };
        out.image("reference.img", &simulate(&clean, &long, cfg.seed.wrapping_add(1))?)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- reduce

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReduceConfig {
    pub image: PathBuf,
    /// Defaults to the standard instrument centred on the image's beam centre.
    #[serde(default)]
    pub geometry: Option<ScatteringGeometry>,
    #[serde(default = "default_bins")]
    pub n_bins: usize,
    #[serde(default)]
    pub binning: Binning,
}

fn default_bins() -> usize {
    100
}

impl RunConfig for ReduceConfig {
    fn propagate_seed(&mut self) {}

    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.image);
    }

    fn validate(&self) -> crate::Result<()> {
        if let Some(g) = &self.geometry {
            g.validate()?;
        }
        if self.n_bins < 2 {
            return Err(Error::config("n_bins", "must be at least 2"));
        }
        Ok(())
    }
}

fn reduce(cfg: &ReduceConfig, out: &mut Outputs) -> CmdResult<()> {
    let image = read_image(&cfg.image)?;
    let geometry = cfg.geometry.unwrap_or_else(|| ScatteringGeometry::for_image(&image));
    let curve = azimuthal_average(&image, &geometry, cfg.n_bins, cfg.binning)?;
    out.write("iq.csv", curve.to_csv())
}

// ---------------------------------------------------------------- pretrain

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub seed: u64,
    pub train: TrainConfig,
    pub texture_patches: usize,
    /// Extra source images (core format); each is normalized, cut into
    /// patches and corrupted with noise at the training σ.
    pub images: Vec<PathBuf>,
    pub patch_stride: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            seed: 0,
            train: desk_pretrain_config(),
            texture_patches: DESK_TEXTURE_PATCHES,
            images: Vec::new(),
            patch_stride: 20,
        }
    }
}

impl RunConfig for PretrainConfig {
    fn propagate_seed(&mut self) {
        self.train.seed = self.seed;
    }

    fn resolve_paths(&mut self, base: &Path) {
        self.images.iter_mut().for_each(|p| resolve(base, p));
    }

    fn validate(&self) -> crate::Result<()> {
        self.train.validate()?;
        if self.texture_patches == 0 && self.images.is_empty() {
            return Err(Error::config("texture_patches", "no source data: need patches or images"));
        }
        Ok(())
    }

    fn seed_mut(&mut self) -> Option<&mut u64> {
        Some(&mut self.seed)
    }
}

fn pretrain(cfg: &PretrainConfig, out: &mut Outputs) -> CmdResult<()> {
    let t = &cfg.train;
    let mut ds = PairDataset::synthetic_textures(cfg.texture_patches, t.patch, t.sigma, t.seed);
    if !cfg.images.is_empty() {
        let mut pairs = Vec::new();
        for (i, path) in cfg.images.iter().enumerate() {
            let clean = read_image(path)?.normalized();
            let noisy = experiment::add_awgn(&clean, t.sigma, t.seed, i as u64)?;
            pairs.push((clean, noisy));
        }
        let extra = PairDataset::from_image_pairs(&pairs, t.patch, cfg.patch_stride, Role::Source, t.seed)?;
        for p in extra.pairs {
            ds.push(p)?;
        }
    }
    let trained = learned::pretrain(&ds, t)?;
    out.checkpoint("prior.ckpt", &trained.params)?;
    out.write("training_curve.csv", curve_csv(&trained.curve))
}

// ---------------------------------------------------------------- adapt

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub seed: u64,
    /// Pretrained checkpoint; ignored when `zero_start` is set.
    pub source: Option<PathBuf>,
    /// Train fresh weights instead of fine-tuning.
    pub zero_start: bool,
    pub corpus: CorpusConfig,
    /// Number of training samples used.
    pub k: usize,
    pub target_pairs: TargetPairs,
    pub train: TrainConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            seed: 0,
            source: None,
            zero_start: false,
            corpus: CorpusConfig::default(),
            k: 80,
            target_pairs: TargetPairs::Awgn,
            train: desk_adapt_config(),
        }
    }
}

impl RunConfig for AdaptConfig {
    fn propagate_seed(&mut self) {
        self.corpus.seed = self.seed;
        self.train.seed = self.seed;
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = &mut self.source {
            resolve(base, p);
        }
    }

    fn validate(&self) -> crate::Result<()> {
        self.corpus.validate()?;
        self.train.validate()?;
        if self.source.is_none() && !self.zero_start {
            return Err(Error::config("source", "required unless zero_start is set"));
        }
        if self.k > self.corpus.n_train {
            return Err(Error::config("k", format!("exceeds n_train = {}", self.corpus.n_train)));
        }
        Ok(())
    }

    fn seed_mut(&mut self) -> Option<&mut u64> {
        Some(&mut self.seed)
    }
}

fn adapt(cfg: &AdaptConfig, out: &mut Outputs) -> CmdResult<()> {
    let corpus = Corpus::generate(&cfg.corpus)?;
    let t = &cfg.train;
    let target = target_pairs(&corpus.train[..cfg.k], cfg.target_pairs, t.sigma, t.seed)?;
    let val = target_pairs(&corpus.val, cfg.target_pairs, t.sigma, t.seed)?;
    let trained = if cfg.zero_start {
        learned::train_zero_start(&target, &val, t)?
    } else {
        let path = cfg.source.as_ref().expect("validated");
        let source = checkpoint::load(path)?;
        learned::adapt_with_validation(&source, &target, &val, t)?
    };
    let name = if trained.params.provenance == Provenance::ZeroStart {
        "zero_start.ckpt"
    } else {
        "adapted.ckpt"
    };
    out.checkpoint(name, &trained.params)?;
    out.write("training_curve.csv", curve_csv(&trained.curve))
}

// ---------------------------------------------------------------- restore

/// Denoiser selection in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    Tv { strength: f64 },
    GaussianBlur { width: f64 },
    Learned { checkpoint: PathBuf },
    Gmm { gmm: GmmPrior, sigma: f64 },
    Identity {},
}

impl PriorSpec {
    fn resolve_paths(&mut self, base: &Path) {
        if let PriorSpec::Learned { checkpoint } = self {
            resolve(base, checkpoint);
        }
    }

    fn validate(&self) -> crate::Result<()> {
        match *self {
            PriorSpec::Tv { strength } if !(strength >= 0.0 && strength.is_finite()) => {
                Err(Error::config("strength", "must be ≥ 0"))
            }
            PriorSpec::GaussianBlur { width } if !(width >= 0.0 && width.is_finite()) => {
                Err(Error::config("width", "must be ≥ 0"))
            }
            PriorSpec::Gmm { sigma, .. } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::config("sigma", "must be > 0"))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> crate::Result<PriorHandle> {
        Ok(match self {
            PriorSpec::Tv { strength } => PriorHandle::tv(*strength),
            PriorSpec::GaussianBlur { width } => PriorHandle::GaussianBlur { width: *width },
            PriorSpec::Learned { checkpoint: path } => PriorHandle::learned(checkpoint::load(path)?),
            PriorSpec::Gmm { gmm, sigma } => PriorHandle::gmm(gmm.clone(), *sigma)?,
            PriorSpec::Identity {} => PriorHandle::Identity,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// The proximal-gradient iteration.
    #[default]
    PrSans,
    /// One application of the denoiser.
    PriorOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestoreConfig {
    pub input: PathBuf,
    /// Long exposure or clean pattern; enables `metrics.csv`.
    #[serde(default)]
    pub reference: Option<PathBuf>,
    pub prior: PriorSpec,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub solver: SolveConfig,
}

impl RunConfig for RestoreConfig {
    fn propagate_seed(&mut self) {}

    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.input);
        if let Some(p) = &mut self.reference {
            resolve(base, p);
        }
        self.prior.resolve_paths(base);
    }

    fn validate(&self) -> crate::Result<()> {
        self.prior.validate()?;
        self.solver.validate()
    }
}

fn restore(cfg: &RestoreConfig, out: &mut Outputs) -> CmdResult<()> {
    let input = read_image(&cfg.input)?;
    let reference = cfg.reference.as_deref().map(read_image).transpose()?;
    let mut prior = cfg.prior.build()?;
    let y = input.to_f64();
    let restored = match cfg.method {
        Method::PrSans => {
            let (x, trace) = pr_sans_solve(&y, &mut prior, &cfg.solver, None, input.dims())?;
            out.write("trace.csv", trace.to_csv())?;
            x
        }
        Method::PriorOnly => prior.apply(&y, input.dims())?,
    };
    let restored = input.with_data_f64(&restored)?;
    out.image("restored.img", &restored)?;
    if let Some(reference) = reference {
        let mut csv = format!("image,{CSV_HEADER}\n");
        for (label, img) in [("input", &input), ("restored", &restored)] {
            csv.push_str(&format!("{label},{}\n", compute_metrics(&reference, img)?.csv_row()));
        }
        out.write("metrics.csv", csv)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    pub corpus: CorpusConfig,
    /// Learned prior used alone and inside the iteration.
    pub prior: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub seed: u64,
    pub reference: Option<PathBuf>,
    pub estimates: Vec<PathBuf>,
    /// Also compare reduced `I(Q)` curves with this many log bins.
    pub iq_bins: Option<usize>,
    /// Tuned comparison of restorers on a synthetic corpus.
    pub comparison: Option<CompareSpec>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seed: 0,
            reference: None,
            estimates: Vec::new(),
            iq_bins: None,
            comparison: None,
        }
    }
}

impl RunConfig for EvalConfig {
    fn propagate_seed(&mut self) {
        if let Some(c) = &mut self.comparison {
            c.corpus.seed = self.seed;
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = &mut self.reference {
            resolve(base, p);
        }
        self.estimates.iter_mut().for_each(|p| resolve(base, p));
        if let Some(c) = &mut self.comparison {
            resolve(base, &mut c.prior);
        }
    }

    fn validate(&self) -> crate::Result<()> {
        if self.reference.is_none() != self.estimates.is_empty() {
            return Err(Error::config("reference", "reference and estimates go together"));
        }
        if self.reference.is_none() && self.comparison.is_none() {
            return Err(Error::config("comparison", "nothing to evaluate"));
        }
        if matches!(self.iq_bins, Some(n) if n < 2) {
            return Err(Error::config("iq_bins", "must be at least 2"));
        }
        if let Some(c) = &self.comparison {
            c.corpus.validate()?;
        }
        Ok(())
    }

    fn seed_mut(&mut self) -> Option<&mut u64> {
        Some(&mut self.seed)
    }
}

fn eval(cfg: &EvalConfig, out: &mut Outputs) -> CmdResult<()> {
    if let Some(reference_path) = &cfg.reference {
        let reference = read_image(reference_path)?;
        let mut csv = format!("image,{CSV_HEADER}\n");
        let mut iq_csv = format!("image,{CSV_HEADER}\n");
        let geometry = ScatteringGeometry::for_image(&reference);
        let ref_curve = match cfg.iq_bins {
            Some(n) => Some(azimuthal_average(&reference, &geometry, n, Binning::Log)?),
            None => None,
        };
        for path in &cfg.estimates {
            let est = read_image(path)?;
            let label = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            csv.push_str(&format!("{label},{}\n", compute_metrics(&reference, &est)?.csv_row()));
            if let (Some(rc), Some(n)) = (&ref_curve, cfg.iq_bins) {
                let ec = azimuthal_average(&est, &geometry, n, Binning::Log)?;
                let bins: Vec<usize> = rc.non_empty().collect();
                let r: Vec<f64> = bins.iter().map(|&i| rc.intensity[i]).collect();
                let e: Vec<f64> = bins.iter().map(|&i| ec.intensity[i]).collect();
                let m = crate::metrics::compute_metrics_slices(&r, &e)?;
                iq_csv.push_str(&format!("{label},{}\n", m.csv_row()));
            }
        }
        out.write("metrics.csv", csv)?;
        if cfg.iq_bins.is_some() {
            out.write("iq_metrics.csv", iq_csv)?;
        }
    }
    if let Some(c) = &cfg.comparison {
        let corpus = Corpus::generate(&c.corpus)?;
        let prior = checkpoint::load(&c.prior)?;
        out.write("comparison.csv", compare_restorers(&corpus, &prior)?.to_csv())?;
    }
    Ok(())
}

// ---------------------------------------------------------------- verify-theory

/// The analytic problem to certify.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Random mixture drawn from the run seed.
    Random { dim: usize, components: usize, sigma: f64 },
    Explicit { gmm: GmmPrior, sigma: f64, y: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyTheoryConfig {
    pub seed: u64,
    pub problem: ProblemSpec,
    pub schedules: Vec<EpsilonSchedule>,
    pub certify: CertifyConfig,
}

impl Default for VerifyTheoryConfig {
    fn default() -> Self {
        VerifyTheoryConfig {
            seed: 0,
            problem: ProblemSpec::Random {
                dim: 4,
                components: 3,
                sigma: 0.5,
            },
            schedules: vec![
                EpsilonSchedule::Zero,
                EpsilonSchedule::Power { c: 0.1, p: 1.0 },
                EpsilonSchedule::Constant(0.1),
            ],
            certify: CertifyConfig::default(),
        }
    }
}

impl RunConfig for VerifyTheoryConfig {
    fn propagate_seed(&mut self) {
        self.certify.seed = self.seed;
    }

    fn validate(&self) -> crate::Result<()> {
        self.certify.validate()?;
        if self.schedules.is_empty() {
            return Err(Error::config("schedules", "need at least one schedule"));
        }
        match &self.problem {
            ProblemSpec::Random { dim, components, sigma } => {
                if *dim == 0 || *components == 0 {
                    return Err(Error::config("problem", "dim and components must be at least 1"));
                }
                if !(*sigma > 0.0) {
                    return Err(Error::config("sigma", "must be > 0"));
                }
            }
            ProblemSpec::Explicit { gmm, sigma, y } => {
                if y.len() != gmm.dim() {
                    return Err(Error::config("y", format!("length {} but the mixture is {}-D", y.len(), gmm.dim())));
                }
                if !(*sigma > 0.0) {
                    return Err(Error::config("sigma", "must be > 0"));
                }
            }
        }
        Ok(())
    }

    fn seed_mut(&mut self) -> Option<&mut u64> {
        Some(&mut self.seed)
    }
}

fn verify_theory(cfg: &VerifyTheoryConfig, out: &mut Outputs) -> CmdResult<()> {
    let problem = match &cfg.problem {
        ProblemSpec::Random { dim, components, sigma } => Problem::random(*dim, *components, *sigma, cfg.seed)?,
        ProblemSpec::Explicit { gmm, sigma, y } => Problem {
            gmm: gmm.clone(),
            sigma: *sigma,
            y: y.clone(),
        },
    };
    let mut summary = String::from("schedule,passed,first_violation_kind,first_violation_step,final_min_grad_sq,gamma,m\n");
    let mut first_failure = None;
    for (i, schedule) in cfg.schedules.iter().enumerate() {
        let report = certify_convergence(&problem, schedule, &cfg.certify)?;
        out.write(&format!("report_{i}.json"), report.to_json()? + "\n")?;
        out.write(&format!("bound_{i}.csv"), report.to_csv())?;
        let v = report.first_violation();
        summary.push_str(&format!(
            "{},{},{},{},{:e},{:e},{:e}\n",
            schedule,
            report.passed(),
            v.map(|v| format!("{:?}", v.kind).to_lowercase()).unwrap_or_default(),
            v.map(|v| v.step.to_string()).unwrap_or_default(),
            report.final_min_grad_sq(),
            report.constants.gamma,
            report.constants.m
        ));
        if let (Some(v), None) = (v, &first_failure) {
            first_failure = Some(format!(
                "certification failed for schedule {schedule}: {:?} inequality violated first at step {}",
                v.kind, v.step
            ));
        }
    }
    out.write("summary.csv", summary)?;
    match first_failure {
        Some(msg) => Err(Failure::new(exit::CERTIFICATION_FAILED, msg)),
        None => Ok(()),
    }
}

// ---------------------------------------------------------------- sweep-adaptation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepAdaptationConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    /// Pretrained source checkpoint; trained from textures when absent.
    pub source: Option<PathBuf>,
    pub texture_patches: usize,
    pub pretrain: TrainConfig,
    pub adapt: TrainConfig,
    pub sweep: SweepConfig,
    /// Also run the restorer comparison with the prior adapted on the largest `k`.
    pub compare: bool,
    pub save_checkpoints: bool,
}

impl Default for SweepAdaptationConfig {
    fn default() -> Self {
        SweepAdaptationConfig {
            seed: 0,
            corpus: CorpusConfig::default(),
            source: None,
            texture_patches: DESK_TEXTURE_PATCHES,
            pretrain: desk_pretrain_config(),
            adapt: desk_adapt_config(),
            sweep: SweepConfig::default(),
            compare: true,
            save_checkpoints: false,
        }
    }
}

impl RunConfig for SweepAdaptationConfig {
    fn propagate_seed(&mut self) {
        self.corpus.seed = self.seed;
        self.pretrain.seed = self.seed;
        self.adapt.seed = self.seed;
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = &mut self.source {
            resolve(base, p);
        }
    }

    fn validate(&self) -> crate::Result<()> {
        self.corpus.validate()?;
        self.pretrain.validate()?;
        self.adapt.validate()?;
        if self.sweep.ks.is_empty() {
            return Err(Error::config("ks", "need at least one k"));
        }
        if let Some(&k) = self.sweep.ks.iter().chain(&self.sweep.zero_start_k).find(|&&k| k > self.corpus.n_train) {
            return Err(Error::config("ks", format!("{k} exceeds n_train = {}", self.corpus.n_train)));
        }
        if self.source.is_none() && self.texture_patches == 0 {
            return Err(Error::config("texture_patches", "needed when no source checkpoint is given"));
        }
        Ok(())
    }

    fn seed_mut(&mut self) -> Option<&mut u64> {
        Some(&mut self.seed)
    }
}

fn sweep_adaptation(cfg: &SweepAdaptationConfig, out: &mut Outputs) -> CmdResult<()> {
    let corpus = Corpus::generate(&cfg.corpus)?;
    let source = match &cfg.source {
        Some(path) => checkpoint::load(path)?,
        None => {
            let trained = experiment::pretrain_texture_prior(cfg.texture_patches, &cfg.pretrain)?;
            out.write("pretrain_curve.csv", curve_csv(&trained.curve))?;
            trained.params
        }
    };
    let sweep = adaptation_sweep(&source, &corpus, &cfg.sweep, &cfg.adapt)?;
    out.write("sweep.csv", sweep.to_csv())?;
    if cfg.save_checkpoints {
        out.checkpoint("source.ckpt", &source)?;
        for (k, p) in cfg.sweep.ks.iter().zip(&sweep.adapted) {
            out.checkpoint(&format!("adapted_{k}.ckpt"), p)?;
        }
        if let Some(p) = &sweep.zero_start {
            out.checkpoint("zero_start.ckpt", p)?;
        }
    }
    if cfg.compare {
        let (i, _) = cfg.sweep.ks.iter().enumerate().max_by_key(|(_, &k)| k).expect("validated");
        let cmp = compare_restorers(&corpus, &sweep.adapted[i])?;
        out.write("comparison.csv", cmp.to_csv())?;
        let iq = evaluate_iq(&Restorer::Noisy, &corpus.test, 40)?;
        let mut csv = format!("{CSV_HEADER}\n");
        for m in iq {
            csv.push_str(&m.csv_row());
            csv.push('\n');
        }
        out.write("noisy_iq_metrics.csv", csv)?;
    }
    Ok(())
}
