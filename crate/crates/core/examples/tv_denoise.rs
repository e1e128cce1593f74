//! Anisotropic total-variation denoising of a noisy step image.

use prsans::metrics::compute_metrics_slices;
use prsans::priors::{tv_denoise, TvConfig};
use prsans::rng::{stream, Stream};
use prsans::Dims;
use rand::Rng;
use rand_distr::StandardNormal;

fn main() -> prsans::Result<()> {
    let dims = Dims::new(48, 48);
    let clean: Vec<f64> = (0..dims.len())
        .map(|i| if (i % 48) < 24 { 0.2 } else { 0.8 })
        .collect();
    let mut rng = stream(1, Stream::Noise);
    let noisy: Vec<f64> = clean
        .iter()
        .map(|c| c + 0.1 * rng.sample::<f64, _>(StandardNormal))
        .collect();

    println!("noisy: {:.2} dB", compute_metrics_slices(&clean, &noisy)?.snr_db);
    for strength in [0.02, 0.05, 0.1, 0.2] {
        let out = tv_denoise(&noisy, dims, strength, TvConfig::default());
        println!("tv {strength:>4}: {:.2} dB", compute_metrics_slices(&clean, &out)?.snr_db);
    }
    Ok(())
}
