//! Pretrain a small residual denoiser on synthetic textures, adapt it to a
//! handful of synthetic detector images, and compare with training from
//! scratch on the same images. Sized to finish in well under a minute.

use prsans::experiment::{adaptation_sweep, desk_adapt_config, desk_pretrain_config, pretrain_texture_prior};
use prsans::experiment::{Corpus, CorpusConfig, SweepConfig};

fn main() -> prsans::Result<()> {
    let corpus = Corpus::generate(&CorpusConfig {
        size: 32,
        n_train: 16,
        n_val: 4,
        n_test: 4,
        ..CorpusConfig::default()
    })?;
    let pretrain = prsans::learned::TrainConfig {
        epochs: 8,
        patch: 24,
        ..desk_pretrain_config()
    };
    let source = pretrain_texture_prior(80, &pretrain)?;
    println!("pretrained, best epoch {}", source.best_epoch);

    let sweep = SweepConfig {
        ks: vec![0, 4, 8, 16],
        zero_start_k: Some(16),
        ..SweepConfig::default()
    };
    let adapt = prsans::learned::TrainConfig {
        epochs: 8,
        ..desk_adapt_config()
    };
    let result = adaptation_sweep(&source.params, &corpus, &sweep, &adapt)?;
    print!("{}", result.to_csv());
    Ok(())
}
