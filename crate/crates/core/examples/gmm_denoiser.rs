//! Exact MMSE denoising under a Gaussian mixture, and the score identity
//! `τ(z − D(z)) = ∇(−τσ² log p_z)` checked by central differences.

use prsans::priors::GmmPrior;

fn main() -> prsans::Result<()> {
    let gmm = GmmPrior::new(
        vec![0.3, 0.7],
        vec![vec![-1.0, 0.0], vec![1.5, 0.5]],
        vec![0.2, 0.4],
    )?;
    let sigma = 0.5;
    let tau = 1.0;
    let z = [0.3, -0.2];

    let d = gmm.mmse_denoise(&z, sigma)?;
    println!("z = {z:?}");
    println!("D(z) = [{:.6}, {:.6}]", d[0], d[1]);

    let h = |x: &[f64]| -> prsans::Result<f64> { Ok(-tau * sigma * sigma * gmm.log_density(x, sigma)?) };
    let step = 1e-5;
    for i in 0..2 {
        let mut hi = z;
        let mut lo = z;
        hi[i] += step;
        lo[i] -= step;
        let fd = (h(&hi)? - h(&lo)?) / (2.0 * step);
        let score = tau * (z[i] - d[i]);
        println!("coord {i}: tau(z - D(z)) = {score:.8}, finite difference = {fd:.8}");
    }
    Ok(())
}
